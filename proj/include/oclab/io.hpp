#pragma once

#include "adversary.hpp"
#include "verify.hpp"

#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <sstream>

namespace oclab {

using json = nlohmann::json;

inline json to_json_array(const Vec& v) {
  json a = json::array();
  for (Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

inline Vec vec_from_json(const json& a) {
  Vec v(static_cast<Index>(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i) v[static_cast<Index>(i)] = a[i].get<double>();
  return v;
}

inline std::string hex64(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// ---------------------------------------------------------------------------
// ChainSpec

inline json spec_to_json(const ChainSpec& s) {
  return json{{"family", to_string(s.family)},
              {"k", s.k},
              {"mu1", s.mu1},
              {"mu2_or_muk", s.mu2_or_muk},
              {"lambda", s.lambda},
              {"gamma", s.gamma},
              {"delta", s.delta},
              {"T", s.T},
              {"T_tilde", s.T_tilde},
              {"dim", s.dim},
              {"basis", {{"seed", s.basis.seed()}, {"dim", s.basis.dim()}, {"count", s.basis.count()}}},
              {"scale", s.scale},
              {"D", s.D},
              {"gamma_case", s.gamma_case}};
}

/// Rebuilds a spec; the basis is regenerated from (seed, dim, count).
inline ChainSpec spec_from_json(const json& j) {
  ChainSpec s;
  s.family = family_from_string(j.at("family").get<std::string>());
  s.k = j.at("k").get<int>();
  s.mu1 = j.at("mu1").get<double>();
  s.mu2_or_muk = j.at("mu2_or_muk").get<double>();
  s.lambda = j.at("lambda").get<double>();
  s.gamma = j.at("gamma").get<double>();
  s.delta = j.at("delta").get<double>();
  s.T = j.at("T").get<int>();
  s.T_tilde = j.at("T_tilde").get<int>();
  s.dim = j.at("dim").get<Index>();
  s.scale = j.at("scale").get<double>();
  s.D = j.value("D", 0.0);
  s.gamma_case = j.value("gamma_case", 0);
  const json& b = j.at("basis");
  s.basis = Basis::random(b.at("dim").get<Index>(), b.at("count").get<Index>(), b.at("seed").get<std::uint64_t>());
  if (s.basis.dim() != s.dim || s.basis.count() != s.chain_length())
    throw InvalidInput("spec JSON: basis shape does not match the spec");
  return s;
}

// ---------------------------------------------------------------------------
// Minimizers

inline json solution_to_json(const MinimizerSolution& m) {
  json j{{"chain_coords", to_json_array(m.chain_coords)},
         {"f_star", m.f_star},
         {"f_hat_star", m.f_hat_star},
         {"delta", m.delta},
         {"regime", to_string(m.regime)},
         {"kkt_residual", m.kkt_residual}};
  if (m.norm_bound) j["norm_bound"] = *m.norm_bound;
  return j;
}

inline json report_to_json(const PropertyReport& r) {
  json checks = json::array();
  for (const auto& c : r.checks)
    checks.push_back({{"name", c.name},
                      {"applicable", c.applicable},
                      {"passed", c.passed},
                      {"margin", c.margin},
                      {"detail", c.detail}});
  return json{{"all_passed", r.all_passed()}, {"checks", checks}};
}

// ---------------------------------------------------------------------------
// Traces

inline json trace_to_json(const RunTrace& t, bool wall_clock = true) {
  json recs = json::array();
  for (const auto& r : t.records)
    recs.push_back({{"oracle_calls", r.oracle_calls},
                    {"f_gap", r.f_gap},
                    {"grad_norm", r.grad_norm},
                    {"elapsed_ms", wall_clock ? r.elapsed_ms : 0.0}});
  json events = json::array();
  for (const auto& e : t.events)
    events.push_back({{"label", e.label}, {"oracle_calls", e.oracle_calls}, {"f_gap", e.f_gap}});
  json params = json::object();
  for (const auto& [k, v] : t.params) params[k] = v;
  return json{{"optimizer_id", t.optimizer_id},
              {"params", params},
              {"complete", t.complete},
              {"records", recs},
              {"events", events}};
}

inline constexpr const char* kTraceCsvHeader = "oracle_calls,f_gap,grad_norm,elapsed_ms";

/// CSV with a fixed header; elapsed_ms is written as 0 unless `wall_clock`.
inline std::string trace_to_csv(const RunTrace& t, bool wall_clock = true) {
  std::ostringstream os;
  os << kTraceCsvHeader << '\n';
  char buf[128];
  for (const auto& r : t.records) {
    std::snprintf(buf, sizeof buf, "%ld,%.17g,%.17g,%.17g\n", r.oracle_calls, r.f_gap, r.grad_norm,
                  wall_clock ? r.elapsed_ms : 0.0);
    os << buf;
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Games, gaps and probes

inline json transcript_to_json(const GameTranscript& t) {
  json q = json::array(), v = json::array();
  for (const auto& w : t.queries) q.push_back(to_json_array(w));
  for (const auto& r : t.reveals) v.push_back(to_json_array(r));
  return json{{"queries", q},
              {"reveals", v},
              {"replies_digest", hex64(t.replies_digest)},
              {"suboptimality", t.suboptimality}};
}

inline json gap_to_json(const GapBound& g) { return json{{"computed", g.computed}, {"floor", g.floor}}; }

inline json verify_to_json(const VerifyReport& r) {
  json lip = json::array();
  for (std::size_t i = 0; i < r.lipschitz.size(); ++i)
    lip.push_back({{"order", r.lipschitz[i].first},
                   {"estimate", r.lipschitz[i].second},
                   {"bound", r.lipschitz_bounds[i].second}});
  return json{{"family", r.family},
              {"fd_gradient_rel_error", r.fd_gradient},
              {"fd_hessian_rel_error", r.fd_hessian},
              {"lipschitz", lip},
              {"min_curvature", r.min_curvature},
              {"curvature_floor", r.curvature_floor},
              {"direction_norm", r.direction_norm},
              {"passed", r.passed}};
}

// ---------------------------------------------------------------------------
// Files

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open " + path + " for writing");
  f << text;
  if (!f) throw Error("write failed: " + path);
}

inline std::string read_text(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw InvalidInput("cannot open " + path);
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

}  // namespace oclab
