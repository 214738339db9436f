// Command-line front end: run, gen, plan, plot, verify.

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <iostream>
#include <string>

#include "vrcpi/exact.hpp"
#include "vrcpi/generators.hpp"
#include "vrcpi/harness.hpp"
#include "vrcpi/io.hpp"
#include "vrcpi/planner.hpp"
#include "vrcpi/plot.hpp"
#include "vrcpi/verify.hpp"

namespace {

enum Exit { kOk = 0, kConfig = 1, kInvariant = 2, kInfeasible = 3 };

int cmd_run(const std::string& config_path) {
  const auto cfg = vrcpi::load_config(config_path);
  const auto outcome = vrcpi::run_experiment(cfg);
  for (const auto& c : outcome.cells)
    std::printf("%-5s seed %-6llu episodes %-8llu final gap %.6g  value %.6g\n", vrcpi::to_string(c.algo),
                static_cast<unsigned long long>(c.seed),
                static_cast<unsigned long long>(c.run.budget.episodes_used), c.final_gap, c.final_value);
  for (const auto& [algo, a] : outcome.report["aggregate"].items())
    std::printf("%-5s median final gap %.6g (IQR %.3g), initial gap %.6g\n", algo.c_str(),
                a["median_final_gap"].get<double>(), a["iqr_final_gap"].get<double>(),
                a["median_initial_gap"].get<double>());
  std::printf("wrote %s\n", (cfg.output_dir / "report.json").string().c_str());
  return kOk;
}

int cmd_gen(const std::string& kind, std::size_t length, std::size_t states, std::size_t actions, double gamma,
            double slip, double sparsity, std::uint64_t seed, const std::string& out) {
  if (kind == "chain") {
    vrcpi::save_mdp(vrcpi::gen_chain_mdp(length, gamma, slip), out);
  } else if (kind == "random") {
    vrcpi::save_mdp(vrcpi::gen_random_mdp(states, actions, gamma, sparsity, seed), out);
  } else {
    throw vrcpi::InvalidInput("gen: --kind must be chain or random");
  }
  return kOk;
}

void print_conditions(const std::vector<vrcpi::PlanCondition>& cs) {
  for (const auto& c : cs)
    std::printf("  %-24s %s  lhs %.6g  rhs %.6g\n", c.name.c_str(), c.ok ? "ok  " : "FAIL", c.lhs, c.rhs);
}

int cmd_plan(double eps, double delta, const std::string& mdp_path, double class_size, bool global,
             double c_inf) {
  const auto mdp = vrcpi::load_mdp(mdp_path);
  if (!(class_size >= 1.0)) throw vrcpi::InvalidInput("plan: --class-size must be at least 1");
  const double log_k = std::log(class_size);
  const auto r = global ? vrcpi::plan_global(eps, delta, mdp.num_actions(), mdp.discount(), log_k, c_inf)
                        : vrcpi::plan_local(eps, delta, mdp.num_actions(), mdp.discount(), log_k);
  const auto& p = r.params;
  std::printf("mode           %s\n", global ? "global" : "local");
  std::printf("eta            %.17g\n", p.eta);
  std::printf("lambda         %.17g\n", p.lambda);
  std::printf("horizon        %llu\n", static_cast<unsigned long long>(p.horizon));
  std::printf("episodes       %.6g\n", 3.0 * static_cast<double>(p.horizon));
  std::printf("erm_tolerance  %.17g\n", p.erm_tolerance);
  std::printf("eps_cover      %.17g\n", r.eps_cover);
  std::printf("C(T)           %.17g\n", r.c_of_t);
  std::printf("return_option  %s\n", vrcpi::to_string(p.return_option));
  if (global) std::printf("T reference    %.6g (C_inf^2 log|Pi| A^3 / ((1-g)^5 eps^2))\n", r.scaling_reference);
  std::printf("conditions:\n");
  print_conditions(r.conditions);
  return kOk;
}

int cmd_plot(const std::string& in, const std::string& out) {
  const auto n = vrcpi::plot_directory(in, out);
  std::printf("plotted %zu series into %s\n", n, out.c_str());
  return kOk;
}

int cmd_verify() {
  bool all = true;
  for (const auto& c : vrcpi::run_verify_suite()) {
    std::printf("[%s] %s (%s)\n", c.ok ? "PASS" : "FAIL", c.name.c_str(), c.detail.c_str());
    all = all && c.ok;
  }
  return all ? kOk : kInvariant;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Variance-reduced conservative policy iteration on tabular MDPs"};
  app.require_subcommand(1);

  std::string config;
  auto* run = app.add_subcommand("run", "run an experiment described by a JSON config");
  run->add_option("--config", config, "config file")->required();

  std::string kind = "chain", out;
  std::size_t length = 5, states = 5, actions = 2;
  double gamma = 0.9, slip = 0.0, sparsity = 1.0;
  std::uint64_t seed = 0;
  auto* gen = app.add_subcommand("gen", "generate an MDP file");
  gen->add_option("--kind", kind, "chain or random");
  gen->add_option("--length", length, "chain length");
  gen->add_option("--states", states, "random MDP states");
  gen->add_option("--actions", actions, "random MDP actions");
  gen->add_option("--gamma", gamma, "discount");
  gen->add_option("--slip", slip, "chain slip probability");
  gen->add_option("--sparsity", sparsity, "random MDP support fraction");
  gen->add_option("--seed", seed, "random MDP seed");
  gen->add_option("--out", out, "output path")->required();

  double eps = 0.1, delta = 0.1, class_size = 1, c_inf = 1;
  std::string mdp_path;
  bool global = false;
  auto* plan = app.add_subcommand("plan", "pick step size, decay and horizon");
  plan->add_option("--eps", eps)->required();
  plan->add_option("--delta", delta)->required();
  plan->add_option("--mdp", mdp_path)->required();
  plan->add_option("--class-size", class_size)->required();
  plan->add_flag("--global", global, "global-optimality conditions");
  plan->add_option("--cinf", c_inf, "C_inf for --global");

  std::string plot_in, plot_out;
  auto* plot = app.add_subcommand("plot", "SVG chart of exact gap against episodes");
  plot->add_option("--in", plot_in)->required();
  plot->add_option("--out", plot_out)->required();

  auto* verify = app.add_subcommand("verify", "run the quick oracle/property checks");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (*run) return cmd_run(config);
    if (*gen) return cmd_gen(kind, length, states, actions, gamma, slip, sparsity, seed, out);
    if (*plan) return cmd_plan(eps, delta, mdp_path, class_size, global, c_inf);
    if (*plot) return cmd_plot(plot_in, plot_out);
    if (*verify) return cmd_verify();
  } catch (const vrcpi::InfeasiblePlan& e) {
    std::fprintf(stderr, "infeasible plan: %s\n", e.what());
    return kInfeasible;
  } catch (const vrcpi::InvariantViolation& e) {
    std::fprintf(stderr, "invariant violation: %s\n", e.what());
    return kInvariant;
  } catch (const vrcpi::TruncationError& e) {
    std::fprintf(stderr, "sampler truncation: %s\n", e.what());
    return kInvariant;
  } catch (const vrcpi::InternalError& e) {
    std::fprintf(stderr, "internal error: %s\n", e.what());
    return kInvariant;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kConfig;
  }
  return kConfig;
}
