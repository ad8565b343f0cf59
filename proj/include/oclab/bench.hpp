#pragma once

#include "io.hpp"

#include <filesystem>
#include <set>

namespace oclab {

// ---------------------------------------------------------------------------
// Exponent fitting

struct FitResult {
  double slope = 0.0;
  double intercept = 0.0;
  double r_squared = 0.0;
  int n_points = 0;
};

/// Ordinary least squares of log y on log x.
inline FitResult fit_exponent(const std::vector<std::pair<double, double>>& pairs) {
  if (pairs.size() < 3) throw InvalidInput("fit_exponent: need at least 3 pairs");
  const double n = static_cast<double>(pairs.size());
  double sx = 0, sy = 0;
  for (const auto& [x, y] : pairs) {
    if (!(x > 0.0) || !(y > 0.0) || !std::isfinite(x) || !std::isfinite(y))
      throw InvalidInput("fit_exponent: values must be positive and finite");
    sx += std::log(x);
    sy += std::log(y);
  }
  const double mx = sx / n, my = sy / n;
  double sxx = 0, sxy = 0, syy = 0;
  for (const auto& [x, y] : pairs) {
    const double dx = std::log(x) - mx, dy = std::log(y) - my;
    sxx += dx * dx;
    sxy += dx * dy;
    syy += dy * dy;
  }
  if (!(sxx > 1e-24 * n)) throw InvalidInput("fit_exponent: degenerate x range");
  FitResult r;
  r.slope = sxy / sxx;
  r.intercept = my - r.slope * mx;
  r.r_squared = syy > 0.0 ? std::clamp(sxy * sxy / (sxx * syy), 0.0, 1.0) : 1.0;
  r.n_points = static_cast<int>(pairs.size());
  return r;
}

inline json fit_to_json(const FitResult& f) {
  return json{{"slope", f.slope}, {"intercept", f.intercept}, {"r_squared", f.r_squared}, {"n_points", f.n_points}};
}

// ---------------------------------------------------------------------------
// Optimizer dispatch

inline const std::vector<std::string>& optimizer_ids() {
  static const std::vector<std::string> ids{"gd", "agd", "newton-ls", "cubic-newton", "anpe", "anpe-restart", "hybrid"};
  return ids;
}

/// Runs optimizer `id` from the origin; AGD uses its strongly convex form when lambda > 0.
template <Objective F>
RunTrace run_optimizer(const std::string& id, const F& f, double eps, long budget, double c_cal = 1.0) {
  const Vec w0 = Vec::Zero(f.dim());
  const Constants c = f.constants();
  if (id == "gd") return gradient_descent(f, w0, eps, budget);
  if (id == "agd") return agd(f, w0, c.lambda > 0.0 ? AgdMode::StronglyConvex : AgdMode::Convex, eps, budget);
  if (id == "newton-ls") return newton_linesearch(f, w0, eps, budget);
  if (id == "cubic-newton") {
    if (!(c.mu2 > 0.0)) throw InvalidInput("cubic-newton: needs a Hessian Lipschitz constant");
    return cubic_newton(f, w0, c.mu2, eps, budget);
  }
  if (id == "anpe") return anpe(f, w0, eps, budget);
  if (id == "anpe-restart") return anpe_restart(f, w0, eps, budget, c_cal);
  if (id == "hybrid") return hybrid(f, w0, eps, budget);
  throw InvalidInput("unknown optimizer: " + id);
}

/// Instance used for upper-bound runs: the doubled chain for convex families, so the
/// certified gap between T and 2T links the run to the lower bound.
inline ChainSpec benchmark_instance(const FamilyParams& p, int T, std::uint64_t seed = kDefaultSeed) {
  ChainSpec s = build_instance(p, T, seed);
  if (p.family == Family::StronglyConvex) return s;
  return with_chain_length(s, 2 * static_cast<Index>(T), seed);
}

/// Oracle calls at the "switch" event of a two-phase run, or -1.
inline long switch_calls(const RunTrace& t) {
  for (const auto& e : t.events)
    if (e.label == "switch") return e.oracle_calls;
  return -1;
}

inline GameAlgorithm game_algorithm(const std::string& id, const FamilyParams& p) {
  const auto [L, M] = game_constants(p);
  if (id == "zero") return zero_returner();
  if (id == "gd") return game_gradient_descent(1.0 / L);
  if (id == "agd") return game_agd(L);
  if (id == "cubic-newton") return game_cubic_newton(M);
  throw InvalidInput("unknown game algorithm: " + id);
}

// ---------------------------------------------------------------------------
// Experiment configuration

struct ExperimentConfig {
  std::string name = "experiment";
  Family family = Family::Convex;
  std::string mode = "optimize";  ///< optimize | lowerbound | game
  std::vector<std::string> optimizers;
  std::vector<std::string> game_algorithms{"zero", "gd", "agd", "cubic-newton"};
  std::vector<double> mu1, mu2, lambda, D;
  std::vector<int> k, T;
  std::vector<double> eps;
  bool eps_relative_to_gap = false;  ///< eps values multiply the certified gap of each cell
  std::uint64_t seed = kDefaultSeed;
  std::string output_dir = "oclab_out";
  long budget = 1000000;
  double c_cal = 1.0;
  bool wall_clock = false;  ///< keep measured elapsed_ms (otherwise written as 0 for reproducible files)
};

inline json config_to_json(const ExperimentConfig& c) {
  return json{{"name", c.name},
              {"family", to_string(c.family)},
              {"mode", c.mode},
              {"optimizers", c.optimizers},
              {"game_algorithms", c.game_algorithms},
              {"mu1", c.mu1},
              {"mu2", c.mu2},
              {"lambda", c.lambda},
              {"D", c.D},
              {"k", c.k},
              {"T", c.T},
              {"eps", c.eps},
              {"eps_relative_to_gap", c.eps_relative_to_gap},
              {"seed", c.seed},
              {"output_dir", c.output_dir},
              {"budget", c.budget},
              {"c_cal", c.c_cal},
              {"wall_clock", c.wall_clock}};
}

/// Missing keys keep their defaults; unknown keys are rejected.
inline ExperimentConfig config_from_json(const json& j) {
  static const std::set<std::string> known{"name", "family", "mode", "optimizers", "game_algorithms", "mu1",
                                           "mu2", "lambda", "D", "k", "T", "eps", "eps_relative_to_gap", "seed",
                                           "output_dir", "budget", "c_cal", "wall_clock"};
  if (!j.is_object()) throw InvalidInput("config: expected a JSON object");
  for (const auto& [key, _] : j.items())
    if (!known.count(key)) throw InvalidInput("config: unknown key " + key);
  ExperimentConfig c;
  try {
    c.name = j.value("name", c.name);
    if (j.contains("family")) c.family = family_from_string(j["family"].get<std::string>());
    c.mode = j.value("mode", c.mode);
    c.optimizers = j.value("optimizers", c.optimizers);
    c.game_algorithms = j.value("game_algorithms", c.game_algorithms);
    c.mu1 = j.value("mu1", c.mu1);
    c.mu2 = j.value("mu2", c.mu2);
    c.lambda = j.value("lambda", c.lambda);
    c.D = j.value("D", c.D);
    c.k = j.value("k", c.k);
    c.T = j.value("T", c.T);
    c.eps = j.value("eps", c.eps);
    c.eps_relative_to_gap = j.value("eps_relative_to_gap", c.eps_relative_to_gap);
    c.seed = j.value("seed", c.seed);
    c.output_dir = j.value("output_dir", c.output_dir);
    c.budget = j.value("budget", c.budget);
    c.c_cal = j.value("c_cal", c.c_cal);
    c.wall_clock = j.value("wall_clock", c.wall_clock);
  } catch (const json::exception& e) {
    throw InvalidInput(std::string("config: ") + e.what());
  }
  return c;
}

/// FNV-1a of the canonical (key-sorted) JSON form.
inline std::uint64_t config_hash(const ExperimentConfig& c) {
  const std::string text = config_to_json(c).dump();
  std::uint64_t h = 1469598103934665603ULL;
  detail::fnv1a(h, text.data(), text.size());
  return h;
}

inline void validate(const ExperimentConfig& c) {
  auto need = [](bool ok, const std::string& what) {
    if (!ok) throw InvalidInput("config: " + what);
  };
  auto positive = [&](const std::vector<double>& v, const std::string& what) {
    need(!v.empty(), what + " grid is empty");
    for (double x : v) need(x > 0.0 && std::isfinite(x), what + " values must be positive");
  };
  need(c.mode == "optimize" || c.mode == "lowerbound" || c.mode == "game", "unknown mode " + c.mode);
  need(!c.T.empty(), "T grid is empty");
  for (int t : c.T) need(t >= 1, "T values must be positive");
  positive(c.mu2, "mu2");
  positive(c.D, "D");
  if (c.family != Family::KOrder) positive(c.mu1, "mu1");
  if (c.family == Family::StronglyConvex) positive(c.lambda, "lambda");
  if (c.family == Family::KOrder) {
    need(!c.k.empty(), "k grid is empty");
    for (int k : c.k) need(k >= 1, "k values must be positive");
  }
  if (c.mode == "optimize") {
    need(!c.optimizers.empty(), "optimizer list is empty");
    positive(c.eps, "eps");
    for (const auto& id : c.optimizers)
      need(std::find(optimizer_ids().begin(), optimizer_ids().end(), id) != optimizer_ids().end(),
           "unknown optimizer " + id);
  }
  if (c.mode == "game") need(!c.game_algorithms.empty(), "game algorithm list is empty");
  need(c.budget > 0, "budget must be positive");
  need(c.c_cal > 0.0, "c_cal must be positive");
}

struct GridCell {
  FamilyParams params;
  int T = 1;
  std::string id;
};

/// Cartesian product in the order mu1, mu2, lambda, D, k, T; unused axes collapse to one value.
inline std::vector<GridCell> expand_grid(const ExperimentConfig& c) {
  const std::vector<double> one{0.0};
  const std::vector<int> onek{2};
  const auto& mu1 = c.family == Family::KOrder ? one : c.mu1;
  const auto& lam = c.family == Family::StronglyConvex ? c.lambda : one;
  const auto& ks = c.family == Family::KOrder ? c.k : onek;
  std::vector<GridCell> cells;
  for (double a : mu1)
    for (double b : c.mu2)
      for (double l : lam)
        for (double d : c.D)
          for (int k : ks)
            for (int t : c.T) {
              GridCell g;
              g.params = {c.family, a, b, l, d, k};
              g.T = t;
              g.id = "cell" + std::to_string(cells.size());
              cells.push_back(g);
            }
  return cells;
}

inline json cell_params_json(const GridCell& g) {
  return json{{"mu1", g.params.mu1}, {"mu2", g.params.mu2}, {"lambda", g.params.lambda},
              {"D", g.params.D},     {"k", g.params.k},     {"T", g.T}};
}

namespace detail {

/// Fits y against x over the points with positive values; null when fewer than 3 distinct x.
inline json try_fit(const std::vector<std::pair<double, double>>& pts) {
  std::vector<std::pair<double, double>> ok;
  std::set<double> xs;
  for (const auto& p : pts)
    if (p.first > 0 && p.second > 0) {
      ok.push_back(p);
      xs.insert(p.first);
    }
  if (xs.size() < 3) return nullptr;
  try {
    return fit_to_json(fit_exponent(ok));
  } catch (const InvalidInput&) {
    return nullptr;
  }
}

}  // namespace detail

/**
 * @brief Runs every grid cell of `c` and writes per-cell files, summary.json and manifest.json.
 *
 * Optimize mode runs each optimizer once per cell down to the smallest target and reads the
 * call count for each target off the trace. Fits: calls vs 1/eps per optimizer, phase-1 calls
 * vs mu1/lambda for two-phase methods, certified gap vs T in lowerbound mode.
 * Failures in a cell are recorded in the summary and the remaining cells still run.
 */
inline json run_experiment(const ExperimentConfig& c) {
  validate(c);
  const std::vector<GridCell> cells = expand_grid(c);
  if (cells.empty()) throw InvalidInput("config: empty grid");
  namespace fs = std::filesystem;
  const fs::path root(c.output_dir);
  fs::create_directories(root / "cells");

  json summary{{"name", c.name}, {"mode", c.mode}, {"family", to_string(c.family)}, {"seed", c.seed}};
  json cell_out = json::array();
  std::vector<std::string> files;
  std::map<std::string, std::vector<std::pair<double, double>>> calls_vs_inv_eps, phase1_vs_condition;
  std::vector<std::pair<double, double>> gap_vs_T;
  int failures = 0;

  for (const GridCell& g : cells) {
    json cj{{"id", g.id}, {"params", cell_params_json(g)}};
    try {
      const GapBound gb = gap_lower_bound(g.params, g.T);
      cj["gap"] = gap_to_json(gb);
      if (c.mode == "lowerbound") {
        gap_vs_T.push_back({double(g.T), gb.computed});
      } else if (c.mode == "optimize") {
        const ChainSpec s = benchmark_instance(g.params, g.T, c.seed);
        const MinimizerSolution sol = solve(s);
        const ChainObjective f(s, sol);
        std::vector<double> targets;
        for (double e : c.eps) targets.push_back(c.eps_relative_to_gap ? e * gb.computed : e);
        const double eps_min = *std::min_element(targets.begin(), targets.end());
        json runs = json::array();
        for (const auto& id : c.optimizers) {
          json rj{{"optimizer", id}};
          try {
            const RunTrace tr = run_optimizer(id, f, eps_min, c.budget, c.c_cal);
            const std::string file = "cells/" + g.id + "_" + id + ".csv";
            write_text((root / file).string(), trace_to_csv(tr, c.wall_clock));
            files.push_back(file);
            json hits = json::array();
            for (double e : targets) {
              const long calls = tr.calls_to_reach(e);
              hits.push_back({{"eps", e}, {"calls", calls}});
              if (calls > 0) calls_vs_inv_eps[id].push_back({1.0 / e, double(calls)});
            }
            rj["trace"] = file;
            rj["complete"] = tr.complete;
            rj["final_gap"] = tr.final_gap();
            rj["calls_to_eps"] = hits;
            const long sw = switch_calls(tr);
            if (sw >= 0) {
              rj["switch_calls"] = sw;
              if (g.params.lambda > 0 && sw > 0) phase1_vs_condition[id].push_back({g.params.mu1 / g.params.lambda, double(sw)});
            }
          } catch (const Error& e) {
            rj["error"] = e.what();
            ++failures;
          }
          runs.push_back(rj);
        }
        cj["runs"] = runs;
      } else {
        json games = json::array();
        for (const auto& id : c.game_algorithms) {
          json gj{{"algorithm", id}};
          try {
            const GameResult res = run_resisting_game(game_algorithm(id, g.params), g.params, g.T, c.seed);
            const std::string base = "cells/" + g.id + "_game_" + id;
            write_text((root / (base + ".csv")).string(), trace_to_csv(res.trace, false));
            write_text((root / (base + ".json")).string(), transcript_to_json(res.transcript).dump(1) + "\n");
            files.push_back(base + ".csv");
            files.push_back(base + ".json");
            const double final_gap = res.transcript.suboptimality.back();
            gj["final_suboptimality"] = final_gap;
            gj["sound"] = final_gap >= gb.computed * (1.0 - 1e-9);
            gj["replies_digest"] = hex64(res.transcript.replies_digest);
          } catch (const Error& e) {
            gj["error"] = e.what();
            ++failures;
          }
          games.push_back(gj);
        }
        cj["games"] = games;
      }
    } catch (const Error& e) {
      cj["error"] = e.what();
      ++failures;
    }
    cell_out.push_back(cj);
  }

  json fits = json::object();
  for (const auto& [id, pts] : calls_vs_inv_eps) fits["calls_vs_inv_eps"][id] = detail::try_fit(pts);
  for (const auto& [id, pts] : phase1_vs_condition) fits["phase1_calls_vs_condition"][id] = detail::try_fit(pts);
  if (!gap_vs_T.empty()) fits["gap_vs_T"] = detail::try_fit(gap_vs_T);
  summary["cells"] = cell_out;
  summary["fits"] = fits;
  summary["failures"] = failures;
  write_text((root / "summary.json").string(), summary.dump(1) + "\n");

  json manifest{{"name", c.name},
                {"seed", c.seed},
                {"config_hash", hex64(config_hash(c))},
                {"config", config_to_json(c)},
                {"files", files},
                {"summary", "summary.json"}};
  write_text((root / "manifest.json").string(), manifest.dump(1) + "\n");
  return summary;
}

}  // namespace oclab
