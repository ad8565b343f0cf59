#include "oclab/oclab.hpp"

#include <CLI11.hpp>

#include <iostream>

using namespace oclab;

namespace {

struct Options {
  std::string family = "convex";
  double mu1 = 1.0, mu2 = 12.0, lambda = 0.0, D = 1.0, eps = 1e-6;
  int k = 2, T = 4;
  std::string optimizer = "agd";
  std::string algorithm = "zero";
  std::uint64_t seed = kDefaultSeed;
  std::string out;
  std::string config;
  std::string input;
  long budget = 1000000;
  double c_cal = 1.0;
  int segments = 1000;
  bool json_out = false;
};

Family parse_family(const std::string& s) {
  if (s == "strong") return Family::StronglyConvex;
  if (s == "convex") return Family::Convex;
  if (s == "korder") return Family::KOrder;
  return family_from_string(s);
}

FamilyParams params_of(const Options& o) {
  FamilyParams p;
  p.family = parse_family(o.family);
  p.mu1 = o.mu1;
  p.mu2 = o.mu2;
  p.lambda = o.lambda;
  p.D = o.D;
  p.k = o.k;
  return p;
}

void emit(const Options& o, const std::string& text) {
  if (o.out.empty()) {
    std::cout << text;
    if (!text.empty() && text.back() != '\n') std::cout << '\n';
  } else {
    write_text(o.out, text);
  }
}

void emit(const Options& o, const json& j) { emit(o, j.dump(2) + "\n"); }

int cmd_build(const Options& o) {
  emit(o, spec_to_json(build_instance(params_of(o), o.T, o.seed)));
  return 0;
}

int cmd_minimize(const Options& o) {
  const ChainSpec s = build_instance(params_of(o), o.T, o.seed);
  const MinimizerSolution sol = solve(s);
  const PropertyReport rep = property_report(s, sol);
  if (o.json_out) {
    emit(o, json{{"solution", solution_to_json(sol)}, {"property_report", report_to_json(rep)}});
  } else {
    std::ostringstream os;
    os.precision(17);
    os << "f_star " << sol.f_star << "\nregime " << to_string(sol.regime) << "\nkkt_residual " << sol.kkt_residual
       << "\n\n"
       << to_table(rep);
    emit(o, os.str());
  }
  return rep.all_passed() ? 0 : 3;
}

int cmd_lowerbound(const Options& o) {
  const GapBound g = gap_lower_bound(params_of(o), o.T);
  emit(o, json{{"T", o.T}, {"gap", gap_to_json(g)}, {"certified", g.computed >= g.floor}});
  return 0;
}

int cmd_game(const Options& o) {
  const FamilyParams p = params_of(o);
  const GameResult r = run_resisting_game(game_algorithm(o.algorithm, p), p, o.T, o.seed);
  json j = transcript_to_json(r.transcript);
  j["algorithm"] = o.algorithm;
  j["gap"] = gap_to_json(gap_lower_bound(p, o.T));
  emit(o, j);
  return 0;
}

int cmd_run(const Options& o) {
  if (!o.config.empty()) {
    ExperimentConfig c = config_from_json(json::parse(read_text(o.config)));
    if (!o.out.empty()) c.output_dir = o.out;
    const json summary = run_experiment(c);
    std::cout << "wrote " << c.output_dir << "/summary.json (" << summary["failures"].get<int>() << " failed runs)\n";
    return 0;
  }
  const FamilyParams p = params_of(o);
  const ChainSpec s = benchmark_instance(p, o.T, o.seed);
  const ChainObjective f(s, solve(s));
  const RunTrace tr = run_optimizer(o.optimizer, f, o.eps, o.budget, o.c_cal);
  emit(o, o.json_out ? trace_to_json(tr).dump(2) + "\n" : trace_to_csv(tr));
  return 0;
}

int cmd_verify(const Options& o) {
  const VerifyReport r = verify_instance(build_instance(params_of(o), o.T, o.seed), o.seed, o.segments);
  emit(o, verify_to_json(r));
  return r.passed ? 0 : 3;
}

int cmd_fit(const Options& o) {
  if (o.input.empty()) throw InvalidInput("fit: --in is required");
  std::istringstream is(read_text(o.input));
  std::vector<std::pair<double, double>> pts;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    for (char& ch : line)
      if (ch == ',') ch = ' ';
    std::istringstream ls(line);
    double x, y;
    if (ls >> x >> y) pts.push_back({x, y});  // header lines fail to parse and are skipped
  }
  emit(o, fit_to_json(fit_exponent(pts)));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Lower-bound instances, resisting-oracle games and optimizer benchmarks"};
  app.require_subcommand(1);
  Options o;

  auto add_instance = [&](CLI::App* sc) {
    sc->add_option("--family", o.family, "strong | convex | korder")
        ->check(CLI::IsMember({"strong", "convex", "korder"}));
    sc->add_option("--mu1", o.mu1, "gradient Lipschitz target");
    sc->add_option("--mu2", o.mu2, "Hessian Lipschitz constant (mu_k for korder)");
    sc->add_option("--lambda", o.lambda, "strong convexity");
    sc->add_option("--D", o.D, "distance bound");
    sc->add_option("--k", o.k, "derivative order for korder");
    sc->add_option("--T", o.T, "rounds / chain length");
    sc->add_option("--seed", o.seed, "basis and adversary seed");
    sc->add_option("--out", o.out, "output file (default stdout)");
    sc->add_flag("--json", o.json_out, "JSON output");
  };

  auto* build = app.add_subcommand("build", "build an instance and print its spec");
  auto* minimize = app.add_subcommand("minimize", "solve for the chain minimizer and check its properties");
  auto* lowerbound = app.add_subcommand("lowerbound", "certified gap and its analytic floor");
  auto* game = app.add_subcommand("game", "play the resisting-oracle game");
  auto* run = app.add_subcommand("run", "run an optimizer or an experiment config");
  auto* verify = app.add_subcommand("verify", "finite-difference, Lipschitz and curvature probes");
  auto* fit = app.add_subcommand("fit", "log-log exponent fit of x,y pairs");
  for (auto* sc : {build, minimize, lowerbound, game, run, verify}) add_instance(sc);

  game->add_option("--algorithm,--optimizer", o.algorithm, "zero | gd | agd | cubic-newton")
      ->check(CLI::IsMember({"zero", "gd", "agd", "cubic-newton"}));
  run->add_option("--optimizer", o.optimizer)->check(CLI::IsMember(optimizer_ids()));
  run->add_option("--eps", o.eps, "target suboptimality");
  run->add_option("--budget", o.budget, "oracle call budget");
  run->add_option("--c-cal", o.c_cal, "restart epoch constant");
  run->add_option("--config", o.config, "experiment config JSON")->check(CLI::ExistingFile);
  verify->add_option("--segments", o.segments, "Lipschitz probe segments");
  fit->add_option("--in", o.input, "file with x,y pairs per line")->check(CLI::ExistingFile);
  fit->add_option("--out", o.out, "output file (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (build->parsed()) return cmd_build(o);
    if (minimize->parsed()) return cmd_minimize(o);
    if (lowerbound->parsed()) return cmd_lowerbound(o);
    if (game->parsed()) return cmd_game(o);
    if (run->parsed()) return cmd_run(o);
    if (verify->parsed()) return cmd_verify(o);
    if (fit->parsed()) return cmd_fit(o);
  } catch (const ConditionViolated& e) {
    std::cerr << e.what() << "\n";
    return 2;
  } catch (const NumericalFailure& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
