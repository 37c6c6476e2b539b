#pragma once

#include "closedloop/comms.hpp"
#include "closedloop/compare.hpp"
#include "closedloop/errors.hpp"
#include "closedloop/matrix_exp.hpp"
#include "closedloop/model.hpp"
#include "closedloop/pbs.hpp"
#include "closedloop/scenario.hpp"
#include "closedloop/spectral.hpp"
#include "closedloop/time_series.hpp"
