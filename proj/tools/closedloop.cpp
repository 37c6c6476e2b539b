#include "closedloop/cli.hpp"

int main(int argc, char** argv) { return closedloop::cli::run(argc, argv); }
