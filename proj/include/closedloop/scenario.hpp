#pragma once

#include <cstdint>
#include <fstream>
#include <initializer_list>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "closedloop/comms.hpp"
#include "closedloop/errors.hpp"
#include "closedloop/model.hpp"
#include "closedloop/pbs.hpp"
#include "closedloop/time_series.hpp"

// Scenario documents: one JSON object holding channel, damping, source, receiver and grid,
// plus optional sequence, isi and pbs blocks. Parsing is strict; unknown keys are errors.

namespace closedloop {

/// Either an explicit bit list or a seeded generator description.
struct SequenceSpec {
  double symbol_duration = 5.0;
  double t_start = 0.0;
  std::optional<std::vector<std::uint8_t>> bits;
  std::size_t length = 0;
  std::uint64_t seed = 0;
  SequenceGenerator generator = SequenceGenerator::Iid;

  BitSequence resolve() const {
    if (bits) return BitSequence{*bits, symbol_duration, t_start};
    return random_sequence(length, symbol_duration, seed, generator, t_start);
  }

  bool operator==(const SequenceSpec&) const = default;
};

struct Scenario {
  ChannelConfig channel;
  ReceiverSpec receiver = ReceiverSpec::interval(1.5, 2.1);
  TimeGrid grid{0.0, 0.1, 1001};
  std::optional<SequenceSpec> sequence;
  double epsilon = 0.8;
  std::optional<PbsConfig> pbs;

  bool operator==(const Scenario&) const = default;
};

/// Every violated invariant across the scenario, including cross-block consistency.
inline std::vector<InvalidParameter> validate(const Scenario& s) {
  auto out = validate(s.channel);
  auto append = [&out](std::vector<InvalidParameter> more) {
    out.insert(out.end(), more.begin(), more.end());
  };
  append(validate(s.receiver, s.channel.loop_length));
  append(validate(s.grid));
  if (s.grid.t_start < 0) out.push_back({"grid.t_start", "t_start >= 0 violated"});
  if (!(s.epsilon > 0 && s.epsilon < 1)) out.push_back({"isi.epsilon", "0 < epsilon < 1 violated"});
  if (s.sequence) {
    const auto& q = *s.sequence;
    if (!q.bits && q.length == 0) out.push_back({"sequence.length", "B >= 1 violated"});
    if (q.symbol_duration > 0 && whole_steps(q.symbol_duration, s.grid.dt) < 1)
      out.push_back({"sequence.symbol_duration", "T_S must be a whole multiple of grid.dt"});
    if (q.t_start >= 0 && whole_steps(q.t_start, s.grid.dt) < 0)
      out.push_back({"sequence.t_start", "t0 must be a whole multiple of grid.dt"});
    append(validate(q.resolve()));
  }
  if (s.pbs) {
    append(validate(*s.pbs));
    if (s.receiver.kind != ReceiverKind::Interval)
      out.push_back({"receiver.kind", "particle simulation needs an interval receiver"});
    if (s.pbs->dt > 0 && (whole_steps(s.grid.dt, s.pbs->dt) < 1 || whole_steps(s.grid.t_start, s.pbs->dt) < 0))
      out.push_back({"pbs.dt", "grid times must be whole multiples of pbs.dt"});
    if (s.grid.t_end() > s.pbs->t_end * (1 + 1e-12)) out.push_back({"pbs.t_end", "grid extends past pbs.t_end"});
  }
  return out;
}

namespace detail {

using nlohmann::json;

class JsonReader {
 public:
  std::vector<InvalidParameter> issues;

  const json* object(const json& parent, const std::string& key, const std::string& path, bool required) {
    if (!parent.contains(key)) {
      if (required) issues.push_back({path, "missing required object"});
      return nullptr;
    }
    const json& v = parent.at(key);
    if (!v.is_object()) {
      issues.push_back({path, "expected an object"});
      return nullptr;
    }
    return &v;
  }

  void keys(const json& obj, const std::string& path, std::initializer_list<const char*> allowed) {
    const std::set<std::string> ok(allowed.begin(), allowed.end());
    for (const auto& [k, _] : obj.items())
      if (!ok.count(k)) issues.push_back({path.empty() ? k : path + "." + k, "unknown key"});
  }

  template <typename T>
  void number(const json& obj, const char* key, const std::string& path, T& out, bool required = true) {
    const std::string full = path + "." + key;
    if (!obj.contains(key)) {
      if (required) issues.push_back({full, "missing required value"});
      return;
    }
    const json& v = obj.at(key);
    if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) {
        issues.push_back({full, "expected an integer"});
        return;
      }
      if constexpr (std::is_unsigned_v<T>) {
        if (v.is_number_unsigned()) {
          out = v.get<T>();
        } else if (v.get<std::int64_t>() < 0) {
          issues.push_back({full, "expected a non-negative integer"});
        } else {
          out = static_cast<T>(v.get<std::int64_t>());
        }
      } else {
        out = v.get<T>();
      }
    } else {
      if (!v.is_number()) {
        issues.push_back({full, "expected a number"});
        return;
      }
      out = v.get<T>();
    }
  }

  std::optional<std::string> string(const json& obj, const char* key, const std::string& path, bool required = true) {
    const std::string full = path + "." + key;
    if (!obj.contains(key)) {
      if (required) issues.push_back({full, "missing required value"});
      return std::nullopt;
    }
    if (!obj.at(key).is_string()) {
      issues.push_back({full, "expected a string"});
      return std::nullopt;
    }
    return obj.at(key).get<std::string>();
  }
};

}  // namespace detail

/// Parses a scenario document; throws ValidationError listing every schema and invariant violation.
inline Scenario parse_scenario(const nlohmann::json& doc) {
  using nlohmann::json;
  detail::JsonReader rd;
  Scenario s;
  if (!doc.is_object()) throw ValidationError("", "scenario must be a JSON object");
  rd.keys(doc, "", {"channel", "damping", "source", "receiver", "grid", "sequence", "isi", "pbs"});

  if (const json* c = rd.object(doc, "channel", "channel", true)) {
    rd.keys(*c, "channel", {"d_eff", "v_eff", "loop_length", "pipe_radius", "n_molecules", "truncation_order"});
    rd.number(*c, "d_eff", "channel", s.channel.d_eff);
    rd.number(*c, "v_eff", "channel", s.channel.v_eff);
    rd.number(*c, "loop_length", "channel", s.channel.loop_length);
    rd.number(*c, "pipe_radius", "channel", s.channel.pipe_radius);
    rd.number(*c, "n_molecules", "channel", s.channel.n_molecules);
    rd.number(*c, "truncation_order", "channel", s.channel.truncation_order);
  }
  if (const json* d = rd.object(doc, "damping", "damping", true)) {
    rd.keys(*d, "damping", {"alpha", "beta", "x_a", "x_b"});
    rd.number(*d, "alpha", "damping", s.channel.damping.alpha);
    rd.number(*d, "beta", "damping", s.channel.damping.beta);
    rd.number(*d, "x_a", "damping", s.channel.damping.x_a);
    rd.number(*d, "x_b", "damping", s.channel.damping.x_b);
  }
  if (const json* src = rd.object(doc, "source", "source", true)) {
    rd.keys(*src, "source", {"kind", "release_width"});
    if (auto kind = rd.string(*src, "kind", "source")) {
      if (*kind == "point") {
        s.channel.source = SourceSpec::point();
        if (src->contains("release_width"))
          rd.issues.push_back({"source.release_width", "only valid for a distributed source"});
      } else if (*kind == "distributed") {
        s.channel.source.kind = SourceKind::Distributed;
        rd.number(*src, "release_width", "source", s.channel.source.release_width);
      } else {
        rd.issues.push_back({"source.kind", "expected \"point\" or \"distributed\""});
      }
    }
  }
  if (const json* r = rd.object(doc, "receiver", "receiver", true)) {
    rd.keys(*r, "receiver", {"kind", "x_rx", "x_rx_a", "x_rx_b"});
    if (auto kind = rd.string(*r, "kind", "receiver")) {
      if (*kind == "point") {
        double x = 0.0;
        rd.number(*r, "x_rx", "receiver", x);
        if (r->contains("x_rx_a") || r->contains("x_rx_b"))
          rd.issues.push_back({"receiver", "x_rx_a/x_rx_b only valid for an interval receiver"});
        s.receiver = ReceiverSpec::point(x);
      } else if (*kind == "interval") {
        double a = 0.0;
        double b = 0.0;
        rd.number(*r, "x_rx_a", "receiver", a);
        rd.number(*r, "x_rx_b", "receiver", b);
        if (r->contains("x_rx")) rd.issues.push_back({"receiver.x_rx", "only valid for a point receiver"});
        s.receiver = ReceiverSpec::interval(a, b);
      } else {
        rd.issues.push_back({"receiver.kind", "expected \"point\" or \"interval\""});
      }
    }
  }
  if (const json* g = rd.object(doc, "grid", "grid", true)) {
    rd.keys(*g, "grid", {"t_start", "dt", "n_samples"});
    rd.number(*g, "t_start", "grid", s.grid.t_start);
    rd.number(*g, "dt", "grid", s.grid.dt);
    rd.number(*g, "n_samples", "grid", s.grid.n_samples);
  }
  if (const json* q = rd.object(doc, "sequence", "sequence", false)) {
    rd.keys(*q, "sequence", {"symbol_duration", "t_start", "bits", "length", "seed", "generator"});
    SequenceSpec seq;
    rd.number(*q, "symbol_duration", "sequence", seq.symbol_duration);
    rd.number(*q, "t_start", "sequence", seq.t_start, false);
    if (q->contains("bits")) {
      const json& b = q->at("bits");
      std::vector<std::uint8_t> bits;
      bool ok = b.is_array();
      if (ok)
        for (const auto& v : b) {
          if (!v.is_number_integer() || (v.get<int>() != 0 && v.get<int>() != 1)) {
            ok = false;
            break;
          }
          bits.push_back(static_cast<std::uint8_t>(v.get<int>()));
        }
      if (!ok) rd.issues.push_back({"sequence.bits", "expected an array of 0/1 integers"});
      for (const char* k : {"length", "seed", "generator"})
        if (q->contains(k)) rd.issues.push_back({std::string("sequence.") + k, "not allowed together with bits"});
      seq.bits = std::move(bits);
    } else {
      rd.number(*q, "length", "sequence", seq.length);
      rd.number(*q, "seed", "sequence", seq.seed);
      if (auto gen = rd.string(*q, "generator", "sequence", false)) {
        if (*gen == "iid")
          seq.generator = SequenceGenerator::Iid;
        else if (*gen == "balanced")
          seq.generator = SequenceGenerator::Balanced;
        else
          rd.issues.push_back({"sequence.generator", "expected \"iid\" or \"balanced\""});
      }
    }
    s.sequence = std::move(seq);
  }
  if (const json* isi = rd.object(doc, "isi", "isi", false)) {
    rd.keys(*isi, "isi", {"epsilon"});
    rd.number(*isi, "epsilon", "isi", s.epsilon);
  }
  if (const json* p = rd.object(doc, "pbs", "pbs", false)) {
    rd.keys(*p, "pbs", {"dt", "t_end", "seed", "workers", "d_mol", "snapshot_times"});
    PbsConfig pbs;
    rd.number(*p, "dt", "pbs", pbs.dt);
    rd.number(*p, "t_end", "pbs", pbs.t_end);
    rd.number(*p, "seed", "pbs", pbs.seed, false);
    rd.number(*p, "workers", "pbs", pbs.n_workers, false);
    if (p->contains("d_mol")) {
      double d = 0.0;
      rd.number(*p, "d_mol", "pbs", d);
      pbs.d_mol = d;
    }
    if (p->contains("snapshot_times")) {
      const json& ts = p->at("snapshot_times");
      if (!ts.is_array()) {
        rd.issues.push_back({"pbs.snapshot_times", "expected an array of numbers"});
      } else {
        for (const auto& t : ts) {
          if (!t.is_number()) {
            rd.issues.push_back({"pbs.snapshot_times", "expected an array of numbers"});
            break;
          }
          pbs.snapshot_times.push_back(t.get<double>());
        }
      }
    }
    s.pbs = std::move(pbs);
  }

  if (!rd.issues.empty()) throw ValidationError(std::move(rd.issues));
  if (auto issues = validate(s); !issues.empty()) throw ValidationError(std::move(issues));
  return s;
}

inline Scenario parse_scenario(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError("", std::string("JSON parse error: ") + e.what());
  }
  return parse_scenario(doc);
}

inline Scenario load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open scenario file " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_scenario(buf.str());
}

inline nlohmann::json to_json(const Scenario& s) {
  using nlohmann::json;
  const auto& c = s.channel;
  json doc;
  doc["channel"] = {{"d_eff", c.d_eff},           {"v_eff", c.v_eff},
                    {"loop_length", c.loop_length}, {"pipe_radius", c.pipe_radius},
                    {"n_molecules", c.n_molecules}, {"truncation_order", c.truncation_order}};
  doc["damping"] = {{"alpha", c.damping.alpha}, {"beta", c.damping.beta}, {"x_a", c.damping.x_a}, {"x_b", c.damping.x_b}};
  if (c.source.kind == SourceKind::Point)
    doc["source"] = {{"kind", "point"}};
  else
    doc["source"] = {{"kind", "distributed"}, {"release_width", c.source.release_width}};
  if (s.receiver.kind == ReceiverKind::PointSample)
    doc["receiver"] = {{"kind", "point"}, {"x_rx", s.receiver.x_rx}};
  else
    doc["receiver"] = {{"kind", "interval"}, {"x_rx_a", s.receiver.x_rx_a}, {"x_rx_b", s.receiver.x_rx_b}};
  doc["grid"] = {{"t_start", s.grid.t_start}, {"dt", s.grid.dt}, {"n_samples", s.grid.n_samples}};
  if (s.sequence) {
    const auto& q = *s.sequence;
    json seq = {{"symbol_duration", q.symbol_duration}, {"t_start", q.t_start}};
    if (q.bits) {
      seq["bits"] = json::array();
      for (auto b : *q.bits) seq["bits"].push_back(static_cast<int>(b));
    } else {
      seq["length"] = q.length;
      seq["seed"] = q.seed;
      seq["generator"] = q.generator == SequenceGenerator::Iid ? "iid" : "balanced";
    }
    doc["sequence"] = seq;
  }
  doc["isi"] = {{"epsilon", s.epsilon}};
  if (s.pbs) {
    const auto& p = *s.pbs;
    json pb = {{"dt", p.dt}, {"t_end", p.t_end}, {"seed", p.seed}, {"workers", p.n_workers},
               {"snapshot_times", p.snapshot_times}};
    if (p.d_mol) pb["d_mol"] = *p.d_mol;
    doc["pbs"] = pb;
  }
  return doc;
}

}  // namespace closedloop
