#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "vrcpi/cpi.hpp"
#include "vrcpi/errors.hpp"
#include "vrcpi/exact.hpp"
#include "vrcpi/generators.hpp"
#include "vrcpi/io.hpp"
#include "vrcpi/planner.hpp"
#include "vrcpi/vrcpi.hpp"

namespace vrcpi {

inline constexpr const char* kVersion = "0.1.0";

enum class Algo { Vrcpi, Cpi };

inline const char* to_string(Algo a) { return a == Algo::Vrcpi ? "vrcpi" : "cpi"; }

struct CpiConfig {
  std::optional<double> eta;
  std::size_t batch = 3;
  std::optional<std::uint64_t> horizon;
  bool exact_gradient = false;
};

/// Parsed experiment configuration. Relative input paths resolve against
/// `base_dir` (the config file's directory); output_dir is taken as given.
struct RunConfig {
  json raw;
  std::filesystem::path base_dir;
  json mdp_spec;
  bool start_is_rho = false;
  json class_spec;
  std::vector<Algo> algos;
  std::string planner_mode = "manual";
  json planner;
  ReturnOption return_option = ReturnOption::MinCertificateSecondHalf;
  double window_start = 0.5;
  CpiConfig cpi;
  std::vector<std::uint64_t> seeds;
  std::filesystem::path output_dir;
  bool oracle_eval = true;
  std::uint64_t checkpoint_stride = 10;
  std::uint64_t equivalence_stride = 1;
  std::uint64_t max_rounds = 1'000'000;
  std::size_t mixtures = 256;
};

namespace detail {

template <class T>
T get_or(const json& doc, const char* key, T fallback) {
  if (!doc.contains(key) || doc[key].is_null()) return fallback;
  try {
    return doc[key].get<T>();
  } catch (const json::exception&) {
    throw SchemaError(std::string("config field '") + key + "' has the wrong type");
  }
}

inline std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  const std::filesystem::path path(p);
  return path.is_absolute() ? path : base / path;
}

}  // namespace detail

inline RunConfig parse_config(const json& doc, const std::filesystem::path& base_dir) {
  using detail::get_or;
  if (!doc.is_object()) throw SchemaError("config: expected a JSON object");
  static const std::set<std::string> known = {
      "mdp",   "start",       "class",  "algo",       "planner",         "return_option",
      "window_start", "cpi",  "seeds",  "output_dir", "oracle_eval",     "checkpoint_stride",
      "equivalence_stride", "max_rounds", "mixtures"};
  for (auto it = doc.begin(); it != doc.end(); ++it)
    if (!known.count(it.key())) throw SchemaError("config: unknown field '" + it.key() + "'");

  RunConfig c;
  c.raw = doc;
  c.base_dir = base_dir;
  c.mdp_spec = detail::field(doc, "mdp");
  if (!c.mdp_spec.is_object()) throw SchemaError("config: 'mdp' must be an object");
  const auto start = get_or<std::string>(doc, "start", "mu");
  if (start != "mu" && start != "rho") throw SchemaError("config: 'start' must be \"mu\" or \"rho\"");
  c.start_is_rho = start == "rho";
  c.class_spec = doc.contains("class") ? doc["class"] : json{{"kind", "all_deterministic"}};
  const auto algo = get_or<std::string>(doc, "algo", "both");
  if (algo == "vrcpi") c.algos = {Algo::Vrcpi};
  else if (algo == "cpi") c.algos = {Algo::Cpi};
  else if (algo == "both") c.algos = {Algo::Vrcpi, Algo::Cpi};
  else throw SchemaError("config: 'algo' must be vrcpi, cpi or both");
  c.planner = detail::field(doc, "planner");
  c.planner_mode = get_or<std::string>(c.planner, "mode", "manual");
  if (c.planner_mode != "manual" && c.planner_mode != "local" && c.planner_mode != "global")
    throw SchemaError("config: planner mode must be manual, local or global");
  c.return_option = return_option_from_string(
      get_or<std::string>(doc, "return_option",
                          c.planner_mode == "global" ? "final_iterate" : "min_certificate_second_half"));
  c.window_start = get_or<double>(doc, "window_start", 0.5);
  if (doc.contains("cpi")) {
    const json& cp = doc["cpi"];
    if (!cp.is_object()) throw SchemaError("config: 'cpi' must be an object");
    if (cp.contains("eta")) c.cpi.eta = get_or<double>(cp, "eta", 0.0);
    c.cpi.batch = get_or<std::size_t>(cp, "batch", 3);
    if (cp.contains("horizon")) c.cpi.horizon = get_or<std::uint64_t>(cp, "horizon", 0);
    c.cpi.exact_gradient = get_or<bool>(cp, "exact_gradient", false);
  }
  const json& seeds = detail::field(doc, "seeds");
  if (!seeds.is_array() || seeds.empty()) throw SchemaError("config: 'seeds' must be a non-empty array");
  for (const auto& s : seeds) {
    if (!s.is_number_integer() || s.get<std::int64_t>() < 0)
      throw SchemaError("config: seeds must be non-negative integers");
    c.seeds.push_back(s.get<std::uint64_t>());
  }
  c.output_dir = get_or<std::string>(doc, "output_dir", "out");
  c.oracle_eval = get_or<bool>(doc, "oracle_eval", true);
  c.checkpoint_stride = get_or<std::uint64_t>(doc, "checkpoint_stride", 10);
  c.equivalence_stride = get_or<std::uint64_t>(doc, "equivalence_stride", 1);
  c.max_rounds = get_or<std::uint64_t>(doc, "max_rounds", 1'000'000);
  c.mixtures = get_or<std::size_t>(doc, "mixtures", 256);
  return c;
}

inline RunConfig load_config(const std::string& path) {
  const auto doc = detail::read_file(path);
  auto base = std::filesystem::path(path).parent_path();
  if (base.empty()) base = ".";
  return parse_config(doc, base);
}

inline TabularMdp build_mdp(const RunConfig& c) {
  using detail::get_or;
  const json& m = c.mdp_spec;
  if (m.contains("file")) return load_mdp(detail::resolve(c.base_dir, m["file"].get<std::string>()).string());
  const auto gen = get_or<std::string>(m, "generator", "");
  if (gen == "chain")
    return gen_chain_mdp(get_or<std::size_t>(m, "length", 5), get_or<double>(m, "gamma", 0.9),
                         get_or<double>(m, "slip", 0.0));
  if (gen == "random")
    return gen_random_mdp(get_or<std::size_t>(m, "states", 5), get_or<std::size_t>(m, "actions", 2),
                          get_or<double>(m, "gamma", 0.9), get_or<double>(m, "sparsity", 1.0),
                          get_or<std::uint64_t>(m, "seed", 0));
  throw SchemaError("config: 'mdp' needs a 'file' or a 'generator' of chain/random");
}

/// k distinct deterministic policies drawn with `seed`; member 0 plays action 0 everywhere.
inline PolicyClass random_deterministic_class(std::size_t S, std::size_t A, std::size_t k,
                                              std::uint64_t seed) {
  const auto all = PolicyClass::all_deterministic(S, A);
  if (k < 1 || (all.size() && k > *all.size()))
    throw InvalidInput("random class: k must lie in [1, A^S]");
  Rng rng(tagged_seed(seed, StreamTag::kGenerator));
  std::vector<Policy> members{all.member(0)};
  while (members.size() < k) {
    std::vector<std::size_t> acts(S);
    for (auto& a : acts) a = rng.uniform_index(A);
    Policy p = Policy::deterministic(acts, A);
    if (std::find(members.begin(), members.end(), p) == members.end()) members.push_back(std::move(p));
  }
  return PolicyClass::explicit_members(std::move(members));
}

inline PolicyClass build_class(const RunConfig& c, const TabularMdp& mdp) {
  using detail::get_or;
  const auto kind = get_or<std::string>(c.class_spec, "kind", "all_deterministic");
  if (kind == "all_deterministic") return PolicyClass::all_deterministic(mdp.num_states(), mdp.num_actions());
  if (kind == "file") {
    auto cls = load_policy_class(detail::resolve(c.base_dir, get_or<std::string>(c.class_spec, "path", "")).string());
    if (cls.num_states() != mdp.num_states() || cls.num_actions() != mdp.num_actions())
      throw InvalidInput("class file shape does not match the MDP");
    return cls;
  }
  if (kind == "random")
    return random_deterministic_class(mdp.num_states(), mdp.num_actions(),
                                      get_or<std::size_t>(c.class_spec, "k", 4),
                                      get_or<std::uint64_t>(c.class_spec, "seed", 0));
  throw SchemaError("config: class kind must be all_deterministic, file or random");
}

/// VR-CPI parameters for the configured planner mode.
inline VrcpiParams resolve_params(const RunConfig& c, const TabularMdp& mdp, const PolicyClass& cls) {
  using detail::get_or;
  const std::size_t A = mdp.num_actions();
  const double gamma = mdp.discount();
  VrcpiParams p;
  if (c.planner_mode == "manual") {
    p.eta = get_or<double>(c.planner, "eta", 0.0);
    p.lambda = c.planner.contains("lambda") ? get_or<double>(c.planner, "lambda", 0.0)
                                            : planner_lambda(p.eta, A, gamma);
    p.horizon = get_or<std::uint64_t>(c.planner, "horizon", 0);
  } else {
    const double eps = get_or<double>(c.planner, "eps", 0.0);
    const double delta = get_or<double>(c.planner, "delta", 0.0);
    if (c.planner_mode == "local") {
      p = plan_local(eps, delta, A, gamma, cls.log_size()).params;
    } else {
      double c_inf;
      if (c.planner.contains("c_inf")) {
        c_inf = get_or<double>(c.planner, "c_inf", 0.0);
      } else {
        const auto mc = mismatch_coefficients(mdp, cls, c.mixtures, 0);
        c_inf = mc.c_inf_infinite ? std::numeric_limits<double>::infinity() : mc.c_inf;
      }
      p = plan_global(eps, delta, A, gamma, cls.log_size(), c_inf).params;
    }
    if (p.horizon > c.max_rounds)
      throw InfeasiblePlan("planned horizon " + std::to_string(p.horizon) + " exceeds max_rounds " +
                           std::to_string(c.max_rounds) + "; use manual parameters");
  }
  if (c.raw.contains("return_option") || c.planner_mode == "manual") p.return_option = c.return_option;
  p.window_start = c.window_start;
  validate_params(p, A, gamma);
  return p;
}

inline CpiParams resolve_cpi_params(const RunConfig& c, const VrcpiParams& vr) {
  CpiParams p;
  p.eta = c.cpi.eta.value_or(vr.eta);
  p.batch_per_round = c.cpi.batch;
  // same total episodes as VR-CPI, which spends three per round
  p.horizon = c.cpi.horizon.value_or(std::max<std::uint64_t>(1, 3 * vr.horizon / std::max<std::size_t>(1, c.cpi.batch)));
  p.return_option = vr.return_option;
  p.window_start = vr.window_start;
  p.exact_gradient = c.cpi.exact_gradient;
  validate_cpi_params(p);
  return p;
}

/// Shortest round-trip text of a double ("nan" when missing).
inline std::string format_double(std::optional<double> x) {
  if (!x || std::isnan(*x)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", *x);
  return buf;
}

inline std::string trace_csv(const std::vector<IterationTrace>& trace) {
  std::ostringstream os;
  os << "t,episodes,a_hat,exact_gap,value,vt_norm_1inf,vt_residual\n";
  for (const auto& r : trace)
    os << r.t << ',' << r.episodes << ',' << format_double(r.a_hat) << ',' << format_double(r.exact_gap)
       << ',' << format_double(r.value) << ',' << format_double(r.vt_norm_1inf) << ','
       << format_double(r.vt_residual) << '\n';
  return os.str();
}

/// Writes `path.partial` and renames it into place.
inline void write_atomically(const std::filesystem::path& path, const std::string& text) {
  auto tmp = path;
  tmp += ".partial";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw InvalidInput("cannot write " + tmp.string());
    out << text;
    if (!out) throw InvalidInput("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

/// Worker count: VRCPI_THREADS when set to a positive integer, else the hardware count.
inline std::size_t worker_count(std::size_t jobs) {
  std::size_t n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("VRCPI_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || v < 1) throw InvalidInput("VRCPI_THREADS must be a positive integer");
    n = static_cast<std::size_t>(v);
  }
  return std::max<std::size_t>(1, std::min(n, jobs));
}

/// Runs job(i) for i in [0, n) on up to `workers` threads; rethrows the
/// lowest-index failure after every job has finished.
template <class Job>
void parallel_for(std::size_t n, std::size_t workers, Job job) {
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto body = [&]() {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        job(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(body);
  body();
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

struct CellResult {
  Algo algo;
  std::uint64_t seed;
  RunResult run;
  double final_gap;
  double final_value;
  std::filesystem::path csv;
};

/// Linear-interpolation quantile of a sorted sample.
inline double quantile(std::vector<double> xs, double q) {
  if (xs.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(xs.begin(), xs.end());
  const double pos = q * static_cast<double>(xs.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, xs.size() - 1);
  return xs[lo] + (pos - static_cast<double>(lo)) * (xs[hi] - xs[lo]);
}

inline json num_or_null(std::optional<double> x) {
  if (!x || !std::isfinite(*x)) return nullptr;
  return *x;
}

struct ExperimentOutcome {
  json report;
  std::vector<CellResult> cells;
};

/**
 * Runs every (seed, algo) cell and writes `{algo}_seed{seed}.csv` per cell plus
 * report.json into the output directory. Cells run concurrently; results are
 * assembled in cell order after all of them finish.
 */
inline ExperimentOutcome run_experiment(const RunConfig& c) {
  const TabularMdp mdp = build_mdp(c);
  const PolicyClass cls = build_class(c, mdp);
  const Vector start = c.start_is_rho ? mdp.rho() : mdp.mu();
  const VrcpiParams vr = resolve_params(c, mdp, cls);
  const CpiParams cp = resolve_cpi_params(c, vr);
  const bool has_vr = std::count(c.algos.begin(), c.algos.end(), Algo::Vrcpi) > 0;
  const bool has_cpi = std::count(c.algos.begin(), c.algos.end(), Algo::Cpi) > 0;
  if (has_vr && has_cpi && !cp.exact_gradient) {
    const auto vr_eps = static_cast<long double>(3 * vr.horizon);
    const auto cpi_eps = static_cast<long double>(cp.batch_per_round) * static_cast<long double>(cp.horizon);
    if (std::abs(vr_eps - cpi_eps) >= 3)
      throw InvalidInput("budget parity: VR-CPI spends " + std::to_string(3 * vr.horizon) +
                         " episodes but CPI spends " + std::to_string(cp.batch_per_round * cp.horizon));
  }
  RunOptions opts;
  opts.oracle_eval = c.oracle_eval;
  opts.checkpoint_stride = c.checkpoint_stride;
  opts.equivalence_stride = c.equivalence_stride;

  std::filesystem::create_directories(c.output_dir);
  const Policy pi0 = cls.member(0);
  const double initial_gap = local_gap(mdp, pi0, start, cls).gap;
  const double initial_value = value(mdp, pi0, start);
  const auto opt = optimal_value(mdp);
  const double optimal = start.dot(opt.state_values);

  struct Cell {
    Algo algo;
    std::uint64_t seed;
  };
  std::vector<Cell> cells;
  for (auto s : c.seeds)
    for (auto a : c.algos) cells.push_back({a, s});

  std::vector<std::optional<CellResult>> results(cells.size());
  std::exception_ptr failure;
  try {
    parallel_for(cells.size(), worker_count(cells.size()), [&](std::size_t i) {
      const auto& cell = cells[i];
      RunResult r = cell.algo == Algo::Vrcpi ? run(mdp, cls, start, vr, cell.seed, opts)
                                             : run_cpi(mdp, cls, start, cp, cell.seed, opts);
      const auto path = c.output_dir / (std::string(to_string(cell.algo)) + "_seed" +
                                        std::to_string(cell.seed) + ".csv");
      write_atomically(path, trace_csv(r.trace));
      const double gap = local_gap(mdp, r.policy, start, cls).gap;
      const double val = value(mdp, r.policy, start);
      results[i] = CellResult{cell.algo, cell.seed, std::move(r), gap, val, path};
    });
  } catch (...) {
    failure = std::current_exception();
  }

  json report;
  report["config"] = c.raw;
  report["environment"] = {{"version", kVersion},
                           {"seed_derivation",
                            "episode slot k of seed m uses mt19937_64 seeded with "
                            "splitmix(splitmix(m) ^ splitmix(k + const))"},
                           {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." +
                                         std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                         std::to_string(EIGEN_MINOR_VERSION)}};
  report["mdp"] = {{"num_states", mdp.num_states()},
                   {"num_actions", mdp.num_actions()},
                   {"discount", mdp.discount()},
                   {"start", c.start_is_rho ? "rho" : "mu"}};
  report["initial_gap"] = initial_gap;
  report["initial_value"] = initial_value;
  report["optimal_value"] = optimal;
  report["params"] = {{"vrcpi",
                       {{"eta", vr.eta},
                        {"lambda", vr.lambda},
                        {"horizon", vr.horizon},
                        {"erm_tolerance", vr.erm_tolerance},
                        {"return_option", to_string(vr.return_option)},
                        {"window_start", vr.window_start}}},
                      {"cpi",
                       {{"eta", cp.eta},
                        {"horizon", cp.horizon},
                        {"batch_per_round", cp.batch_per_round},
                        {"exact_gradient", cp.exact_gradient}}}};

  json cells_json = json::array();
  std::map<std::string, std::vector<const CellResult*>> by_algo;
  for (const auto& r : results) {
    if (!r) continue;
    by_algo[to_string(r->algo)].push_back(&*r);
    json trace = json::array();
    for (const auto& row : r->run.trace) {
      if (!row.exact_gap) continue;
      trace.push_back({{"seed", r->seed},
                       {"t", row.t},
                       {"episodes", row.episodes},
                       {"a_hat", row.a_hat},
                       {"exact_gap", num_or_null(row.exact_gap)},
                       {"value", num_or_null(row.value)},
                       {"vt_norm_1inf", row.vt_norm_1inf},
                       {"vt_residual", num_or_null(row.vt_residual)},
                       {"deviation", num_or_null(row.deviation)}});
    }
    cells_json.push_back({{"algo", to_string(r->algo)},
                          {"seed", r->seed},
                          {"csv", r->csv.filename().string()},
                          {"final_policy", policy_to_json(r->run.policy)},
                          {"returned_round", r->run.returned_round},
                          {"final_gap", r->final_gap},
                          {"final_value", r->final_value},
                          {"budget",
                           {{"episodes", r->run.budget.episodes_used},
                            {"steps", r->run.budget.steps_used},
                            {"safety_cap", r->run.budget.safety_cap}}},
                          {"max_vt_norm_1inf", r->run.max_vt_norm},
                          {"max_vt_residual", r->run.max_vt_residual},
                          {"trace", std::move(trace)}});
  }
  report["cells"] = std::move(cells_json);

  json agg = json::object();
  for (const auto& [name, rs] : by_algo) {
    std::vector<double> finals, values;
    for (const auto* r : rs) {
      finals.push_back(r->final_gap);
      values.push_back(r->final_value);
    }
    // gap curve: rows with the same t across seeds
    std::map<std::uint64_t, std::vector<const IterationTrace*>> rows;
    for (const auto* r : rs)
      for (const auto& row : r->run.trace)
        if (row.exact_gap) rows[row.t].push_back(&row);
    json curve = json::array();
    for (const auto& [t, rr] : rows) {
      std::vector<double> gaps, eps;
      for (const auto* row : rr) {
        gaps.push_back(*row->exact_gap);
        eps.push_back(static_cast<double>(row->episodes));
      }
      curve.push_back({{"t", t},
                       {"episodes", quantile(eps, 0.5)},
                       {"median_gap", quantile(gaps, 0.5)},
                       {"q1_gap", quantile(gaps, 0.25)},
                       {"q3_gap", quantile(gaps, 0.75)}});
    }
    agg[name] = {{"median_final_gap", quantile(finals, 0.5)},
                 {"iqr_final_gap", quantile(finals, 0.75) - quantile(finals, 0.25)},
                 {"median_final_value", quantile(values, 0.5)},
                 {"median_initial_gap", initial_gap},
                 {"gap_vs_episodes", std::move(curve)}};
  }
  report["aggregate"] = std::move(agg);

  const auto report_path = c.output_dir / "report.json";
  if (failure) {
    std::string msg = "unknown error";
    try {
      std::rethrow_exception(failure);
    } catch (const std::exception& e) {
      msg = e.what();
    } catch (...) {
    }
    report["error"] = msg;
    auto partial = report_path;
    partial += ".partial";
    std::ofstream(partial) << report.dump(2) << '\n';
    std::rethrow_exception(failure);
  }
  write_atomically(report_path, report.dump(2) + "\n");

  ExperimentOutcome out;
  out.report = std::move(report);
  for (auto& r : results) out.cells.push_back(std::move(*r));
  return out;
}

}  // namespace vrcpi
