#include "dvr/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

namespace dvr {

const std::vector<std::string> kAlgorithms{"dvr", "dvr_accel", "extra", "extra_catalyst", "gt_saga"};

double global_smoothness(const Problem& problem) {
  const double c = problem.loss.curvature_bound() * problem.weight;
  double lmax = 0.0;
  if (problem.d <= 2000) {
    Eigen::MatrixXd g = Eigen::MatrixXd(problem.X.transpose() * problem.X);
    lmax = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(g, Eigen::EigenvaluesOnly).eigenvalues().maxCoeff();
  } else {
    Vec v = Vec::Ones(problem.d).normalized();
    for (int it = 0; it < 1000; ++it) {
      Vec u = problem.X.transpose() * (problem.X * v);
      double next = u.norm();
      if (next == 0.0) break;
      v = u / next;
      bool done = std::abs(next - lmax) <= 1e-12 * next;
      lmax = next;
      if (done) break;
    }
    lmax *= 1.01;
  }
  return problem.sigma.sum() + c * lmax;
}

Reference reference_solution(const Problem& problem, const SolverOptions& options) {
  const double L = global_smoothness(problem);
  const double mu = problem.sigma.sum();
  const double sq = std::sqrt(mu / L);
  const double momentum = (1.0 - sq) / (1.0 + sq);
  Vec x = Vec::Zero(problem.d), y = x;
  Reference ref;
  for (std::int64_t k = 1; k <= options.max_iterations; ++k) {
    Vec g = problem.gradient(y);
    Vec next = y - g / L;
    if (g.dot(next - x) > 0.0)
      y = next;  // restart
    else
      y = next + momentum * (next - x);
    x = std::move(next);
    Vec gx = problem.gradient(x);
    double gn = gx.norm();
    if (!std::isfinite(gn)) throw ConvergenceError("reference solver produced a non-finite gradient");
    if (gn <= options.tolerance * (1.0 + x.norm())) {
      ref.theta_star = x;
      ref.f_star = problem.objective(x);
      ref.grad_norm = gn;
      ref.iterations = k;
      return ref;
    }
  }
  throw ConvergenceError("reference solver did not reach |grad F| <= " + std::to_string(options.tolerance) +
                         " (1 + |theta|) within " + std::to_string(options.max_iterations) + " iterations");
}

namespace {

using nlohmann::json;

class Schema {
 public:
  explicit Schema(std::vector<std::string>& errors) : errors_(errors) {}

  void fail(const std::string& key, const std::string& what) { errors_.push_back(key + ": " + what); }

  void unknown_keys(const json& obj, const std::string& prefix, const std::set<std::string>& allowed) {
    for (auto it = obj.begin(); it != obj.end(); ++it)
      if (!allowed.count(it.key())) fail(prefix + it.key(), "unknown key");
  }

  std::optional<std::string> str(const json& obj, const std::string& key, const std::string& prefix = "") {
    if (!obj.contains(key)) return std::nullopt;
    if (!obj[key].is_string()) {
      fail(prefix + key, "expected a string");
      return std::nullopt;
    }
    return obj[key].get<std::string>();
  }

  std::optional<double> num(const json& obj, const std::string& key, double lo, bool lo_open,
                            const std::string& prefix = "") {
    if (!obj.contains(key)) return std::nullopt;
    if (!obj[key].is_number()) {
      fail(prefix + key, "expected a number");
      return std::nullopt;
    }
    double v = obj[key].get<double>();
    if (!std::isfinite(v) || (lo_open ? !(v > lo) : !(v >= lo))) {
      fail(prefix + key, std::string("must be ") + (lo_open ? "> " : ">= ") + json(lo).dump());
      return std::nullopt;
    }
    return v;
  }

  std::optional<std::int64_t> integer(const json& obj, const std::string& key, std::int64_t lo,
                                      const std::string& prefix = "") {
    if (!obj.contains(key)) return std::nullopt;
    if (!obj[key].is_number_integer()) {
      fail(prefix + key, "expected an integer");
      return std::nullopt;
    }
    auto v = obj[key].get<std::int64_t>();
    if (v < lo) {
      fail(prefix + key, "must be >= " + std::to_string(lo));
      return std::nullopt;
    }
    return v;
  }

  std::optional<bool> boolean(const json& obj, const std::string& key, const std::string& prefix = "") {
    if (!obj.contains(key)) return std::nullopt;
    if (!obj[key].is_boolean()) {
      fail(prefix + key, "expected a boolean");
      return std::nullopt;
    }
    return obj[key].get<bool>();
  }

  const json* object(const json& obj, const std::string& key) {
    if (!obj.contains(key)) return nullptr;
    if (!obj[key].is_object()) {
      fail(key, "expected an object");
      return nullptr;
    }
    return &obj[key];
  }

 private:
  std::vector<std::string>& errors_;
};

}  // namespace

ExperimentConfig parse_config(const nlohmann::json& j) {
  std::vector<std::string> errors;
  Schema s(errors);
  ExperimentConfig c;
  if (!j.is_object()) throw ValidationError("config: the top level must be an object");
  s.unknown_keys(j, "",
                 {"graph", "dataset", "loss", "sigma", "tau", "algorithms", "seeds", "budget", "chebyshev",
                  "chebyshev_degree", "kappa_b", "shuffle", "shuffle_seed", "beta_rule", "beta_value", "k_inner",
                  "theory_k", "t_outer", "rho_out", "extra_eta", "gt_saga_eta", "p_comm", "trace", "output_dir",
                  "threads"});
  if (auto v = s.str(j, "graph")) c.graph = *v;
  if (auto v = s.str(j, "loss")) {
    try {
      c.loss = parse_loss_kind(*v);
    } catch (const std::exception& e) {
      s.fail("loss", e.what());
    }
  }
  if (auto v = s.num(j, "sigma", 0.0, true)) c.sigma = *v;
  if (auto v = s.num(j, "tau", 0.0, false)) c.tau = *v;

  if (!j.contains("algorithms")) {
    s.fail("algorithms", "required");
  } else if (!j["algorithms"].is_array()) {
    s.fail("algorithms", "expected an array");
  } else {
    for (const auto& a : j["algorithms"]) {
      if (!a.is_string()) {
        s.fail("algorithms", "entries must be strings");
        continue;
      }
      auto name = a.get<std::string>();
      if (std::find(kAlgorithms.begin(), kAlgorithms.end(), name) == kAlgorithms.end())
        s.fail("algorithms", "unknown algorithm '" + name + "'");
      else
        c.algorithms.push_back(name);
    }
    if (j["algorithms"].empty()) s.fail("algorithms", "must not be empty");
  }
  if (j.contains("seeds")) {
    if (!j["seeds"].is_array() || j["seeds"].empty()) {
      s.fail("seeds", "expected a non-empty array of integers");
    } else {
      c.seeds.clear();
      for (const auto& v : j["seeds"]) {
        if (!v.is_number_integer() || v.get<std::int64_t>() < 0)
          s.fail("seeds", "entries must be non-negative integers");
        else
          c.seeds.push_back(v.get<std::uint64_t>());
      }
    }
  }

  if (const json* d = s.object(j, "dataset")) {
    s.unknown_keys(*d, "dataset.", {"kind", "path", "n_samples", "dim", "seed", "scale", "decay"});
    if (auto v = s.str(*d, "kind", "dataset.")) {
      if (*v != "synth" && *v != "libsvm")
        s.fail("dataset.kind", "must be synth or libsvm");
      else
        c.dataset.kind = *v;
    }
    if (auto v = s.str(*d, "path", "dataset.")) c.dataset.path = *v;
    if (auto v = s.integer(*d, "n_samples", 1, "dataset.")) c.dataset.n_samples = *v;
    if (auto v = s.integer(*d, "dim", 1, "dataset.")) c.dataset.dim = *v;
    if (auto v = s.integer(*d, "seed", 0, "dataset.")) c.dataset.seed = static_cast<std::uint64_t>(*v);
    if (auto v = s.num(*d, "scale", 0.0, true, "dataset.")) c.dataset.scale = *v;
    if (auto v = s.num(*d, "decay", 0.0, true, "dataset.")) {
      if (*v > 1.0)
        s.fail("dataset.decay", "must be <= 1");
      else
        c.dataset.decay = *v;
    }
    if (c.dataset.kind == "libsvm" && c.dataset.path.empty()) s.fail("dataset.path", "required for libsvm data");
  }

  if (const json* b = s.object(j, "budget")) {
    s.unknown_keys(*b, "budget.", {"max_iterations", "max_sim_time", "target_suboptimality"});
    if (auto v = s.integer(*b, "max_iterations", 1, "budget.")) c.budget.max_iterations = *v;
    if (auto v = s.num(*b, "max_sim_time", 0.0, true, "budget.")) c.budget.max_sim_time = *v;
    if (auto v = s.num(*b, "target_suboptimality", 0.0, true, "budget.")) c.budget.target_suboptimality = *v;
  }
  if (!c.budget.max_iterations && !c.budget.max_sim_time)
    s.fail("budget", "needs max_iterations or max_sim_time");

  if (auto v = s.boolean(j, "chebyshev")) c.chebyshev = *v;
  if (auto v = s.integer(j, "chebyshev_degree", 0)) c.chebyshev_degree = static_cast<int>(*v);
  if (const json* k = s.object(j, "kappa_b")) {
    s.unknown_keys(*k, "kappa_b.", {"mode", "value"});
    if (auto v = s.str(*k, "mode", "kappa_b.")) {
      if (*v == "bound")
        c.kappa_b_mode = KappaBMode::bound;
      else if (*v == "estimate")
        c.kappa_b_mode = KappaBMode::estimate;
      else if (*v == "manual")
        c.kappa_b_mode = KappaBMode::manual;
      else
        s.fail("kappa_b.mode", "must be bound, estimate or manual");
    }
    if (auto v = s.num(*k, "value", 0.0, true, "kappa_b.")) c.kappa_b_value = *v;
    if (c.kappa_b_mode == KappaBMode::manual && !(c.kappa_b_value > 0.0))
      s.fail("kappa_b.value", "required with the manual mode");
  }
  if (auto v = s.boolean(j, "shuffle")) c.shuffle = *v;
  if (auto v = s.integer(j, "shuffle_seed", 0)) c.shuffle_seed = static_cast<std::uint64_t>(*v);

  if (auto v = s.str(j, "beta_rule")) {
    try {
      c.catalyst.rule = parse_beta_rule(*v);
    } catch (const std::exception& e) {
      s.fail("beta_rule", e.what());
    }
  }
  if (auto v = s.num(j, "beta_value", 0.0, false)) c.catalyst.beta_value = *v;
  if (auto v = s.integer(j, "k_inner", 0)) c.catalyst.k_inner = *v;
  if (auto v = s.boolean(j, "theory_k")) c.catalyst.theory_k = *v;
  if (auto v = s.integer(j, "t_outer", 0)) c.catalyst.t_outer = *v;
  if (auto v = s.num(j, "rho_out", 0.0, false)) c.catalyst.rho_out = *v;
  if (auto v = s.num(j, "extra_eta", 0.0, false)) c.extra_eta = *v;
  if (auto v = s.num(j, "gt_saga_eta", 0.0, false)) c.gt_saga_eta = *v;
  if (auto v = s.num(j, "p_comm", 0.0, true)) {
    if (*v >= 1.0)
      s.fail("p_comm", "must be < 1");
    else
      c.p_comm = *v;
  }
  if (const json* t = s.object(j, "trace")) {
    s.unknown_keys(*t, "trace.", {"cadence", "every_comm", "max_rows"});
    if (auto v = s.integer(*t, "cadence", 0, "trace.")) c.trace.cadence = *v;
    if (auto v = s.boolean(*t, "every_comm", "trace.")) c.trace.every_comm = *v;
    if (auto v = s.integer(*t, "max_rows", 1, "trace.")) c.trace.max_rows = static_cast<std::size_t>(*v);
  }
  if (auto v = s.str(j, "output_dir")) c.output_dir = *v;
  if (auto v = s.integer(j, "threads", 1)) c.threads = static_cast<int>(*v);

  if (!errors.empty()) {
    std::string msg = "invalid config (" + std::to_string(errors.size()) + " problem" +
                      (errors.size() > 1 ? "s" : "") + "):";
    for (const auto& e : errors) msg += "\n  " + e;
    throw ValidationError(msg);
  }
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config file '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("config file '" + path + "' is not valid JSON: " + e.what());
  }
  return parse_config(j);
}

nlohmann::json to_json(const ExperimentConfig& c) {
  json j;
  j["graph"] = c.graph;
  j["dataset"] = {{"kind", c.dataset.kind},   {"path", c.dataset.path},   {"n_samples", c.dataset.n_samples},
                  {"dim", c.dataset.dim},     {"seed", c.dataset.seed},   {"scale", c.dataset.scale},
                  {"decay", c.dataset.decay}};
  j["loss"] = to_string(c.loss);
  j["sigma"] = c.sigma;
  j["tau"] = c.tau;
  j["algorithms"] = c.algorithms;
  j["seeds"] = c.seeds;
  json b = json::object();
  if (c.budget.max_iterations) b["max_iterations"] = *c.budget.max_iterations;
  if (c.budget.max_sim_time) b["max_sim_time"] = *c.budget.max_sim_time;
  if (c.budget.target_suboptimality) b["target_suboptimality"] = *c.budget.target_suboptimality;
  j["budget"] = b;
  j["chebyshev"] = c.chebyshev;
  j["chebyshev_degree"] = c.chebyshev_degree;
  const char* modes[] = {"bound", "estimate", "manual"};
  j["kappa_b"] = {{"mode", modes[static_cast<int>(c.kappa_b_mode)]}};
  if (c.kappa_b_mode == KappaBMode::manual) j["kappa_b"]["value"] = c.kappa_b_value;
  j["shuffle"] = c.shuffle;
  j["shuffle_seed"] = c.shuffle_seed;
  j["beta_rule"] = to_string(c.catalyst.rule);
  j["beta_value"] = c.catalyst.beta_value;
  j["k_inner"] = c.catalyst.k_inner;
  j["theory_k"] = c.catalyst.theory_k;
  j["t_outer"] = c.catalyst.t_outer;
  j["rho_out"] = c.catalyst.rho_out;
  j["extra_eta"] = c.extra_eta;
  j["gt_saga_eta"] = c.gt_saga_eta;
  if (c.p_comm) j["p_comm"] = *c.p_comm;
  j["trace"] = {{"cadence", c.trace.cadence}, {"every_comm", c.trace.every_comm}, {"max_rows", c.trace.max_rows}};
  j["output_dir"] = c.output_dir;
  j["threads"] = c.threads;
  return j;
}

Instance build_instance(const ExperimentConfig& config) {
  Graph graph = parse_graph_spec(config.graph);
  Dataset data = config.dataset.kind == "libsvm"
                     ? load_libsvm(config.dataset.path, config.loss)
                     : synth_dataset(config.dataset.n_samples, config.dataset.dim, config.loss, config.dataset.seed,
                                     config.dataset.scale, config.dataset.decay);
  ProblemOptions opts;
  opts.kappa_b_mode = config.kappa_b_mode;
  opts.kappa_b_value = config.kappa_b_value;
  opts.shuffle = config.shuffle;
  opts.shuffle_seed = config.shuffle_seed;
  Instance inst{build_problem(data, graph.n, config.sigma, LossFamily{config.loss}, opts), graph, {}, {}};
  inst.gossip = GossipMatrix::laplacian(graph);
  inst.dvr_gossip = config.chebyshev && graph.n > 1 ? chebyshev(inst.gossip, config.chebyshev_degree) : inst.gossip;
  return inst;
}

Trace run_algorithm(const std::string& algorithm, const Instance& inst, const ExperimentConfig& config,
                    const Reference* ref, std::uint64_t seed) {
  const CostModel cost{config.tau};
  RunOptions ro;
  ro.trace = config.trace;
  Trace t;
  if (algorithm == "dvr") {
    ParamOverrides ov;
    ov.p_comm = config.p_comm;
    DvrParams params = compute_params(inst.problem, inst.dvr_gossip, ov);
    t = run_dvr(inst.problem, inst.dvr_gossip, params, config.budget, cost, ref, seed, ro);
  } else if (algorithm == "dvr_accel") {
    t = run_accelerated(inst.problem, inst.dvr_gossip, config.catalyst, config.budget, cost, ref, seed, ro);
  } else if (algorithm == "extra") {
    t = run_extra(inst.problem, inst.gossip, config.extra_eta, config.budget, cost, ref, config.trace);
  } else if (algorithm == "extra_catalyst") {
    ExtraCatalystConfig ec;
    if (config.catalyst.rule == BetaRule::manual) ec.beta = config.catalyst.beta_value;
    ec.t_outer = config.catalyst.t_outer;
    t = run_extra_catalyst(inst.problem, inst.gossip, ec, config.budget, cost, ref, config.trace);
  } else if (algorithm == "gt_saga") {
    t = run_gt_saga(inst.problem, inst.gossip, config.gt_saga_eta, config.budget, cost, ref, seed, config.trace);
  } else {
    throw ValidationError("unknown algorithm '" + algorithm + "'");
  }
  t.seed = seed;
  return t;
}

namespace {

json row_json(const TraceRow& r) {
  return {{"iter", r.iter},       {"sim_time", r.sim_time},         {"n_grads", r.n_grads},
          {"n_comms", r.n_comms}, {"subopt_node0", r.subopt_node0}, {"mean_sq_dist", r.mean_sq_dist},
          {"consensus_gap", r.consensus_gap}};
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& config, bool write_files) {
  if (config.algorithms.empty()) throw ValidationError("algorithms: must not be empty");
  if (config.seeds.empty()) throw ValidationError("seeds: must not be empty");
  const auto start = std::chrono::steady_clock::now();
  Instance inst = build_instance(config);
  ExperimentResult res;
  res.reference = reference_solution(inst.problem);
  namespace fs = std::filesystem;
  if (write_files) {
    std::error_code ec;
    fs::create_directories(config.output_dir, ec);
    if (ec) throw IoError("cannot create output directory '" + config.output_dir + "': " + ec.message());
  }

  for (const auto& a : config.algorithms)
    for (auto s : config.seeds) {
      RunResult r;
      r.algorithm = a;
      r.seed = s;
      if (write_files) r.csv_path = (fs::path(config.output_dir) / (a + "_seed" + std::to_string(s) + ".csv")).string();
      res.runs.push_back(std::move(r));
    }

  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (std::size_t k = next++; k < res.runs.size(); k = next++) {
      RunResult& r = res.runs[k];
      auto t0 = std::chrono::steady_clock::now();
      try {
        r.trace = run_algorithm(r.algorithm, inst, config, &res.reference, r.seed);
        if (write_files) r.trace.write_csv(r.csv_path);
      } catch (const std::exception& e) {
        r.error = e.what();
      }
      r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
  };
  const int nthreads = std::max(1, std::min<int>(config.threads, static_cast<int>(res.runs.size())));
  if (nthreads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int k = 0; k < nthreads; ++k) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  json runs = json::array();
  double f_min = std::numeric_limits<double>::infinity();
  for (const auto& r : res.runs) {
    json jr = {{"algorithm", r.algorithm}, {"seed", r.seed}, {"csv", r.csv_path}, {"wall_seconds", r.wall_seconds}};
    if (!r.error.empty()) {
      jr["error"] = r.error;
    } else {
      jr["error"] = nullptr;
      jr["rows"] = r.trace.rows.size();
      if (!r.trace.rows.empty()) jr["final"] = row_json(r.trace.rows.back());
      double best = std::numeric_limits<double>::infinity();
      for (const auto& row : r.trace.rows) best = std::min(best, row.subopt_node0);
      if (std::isfinite(best)) {
        jr["f_min_observed"] = res.reference.f_star + best;
        f_min = std::min(f_min, res.reference.f_star + best);
      }
      const TraceRow* hit =
          config.budget.target_suboptimality ? r.trace.first_below(*config.budget.target_suboptimality) : nullptr;
      jr["time_to_target"] = hit ? row_json(*hit) : json(nullptr);
      jr["meta"] = r.trace.meta;
      if (!r.trace.params_digest.empty()) jr["params_digest"] = r.trace.params_digest;
      if (!r.trace.outer_subopt.empty()) jr["outer_subopt"] = r.trace.outer_subopt;
    }
    runs.push_back(std::move(jr));
  }
  json& sm = res.summary;
  sm["config"] = to_json(config);
  sm["problem"] = inst.problem.summary();
  sm["graph"] = {{"n", inst.graph.n},
                 {"edges", inst.graph.edges.size()},
                 {"gamma", inst.gossip.gamma()},
                 {"lambda_max", inst.gossip.lambda_max()},
                 {"lambda_min_plus", inst.gossip.lambda_min_plus()},
                 {"dvr_operator_degree", inst.dvr_gossip.effective_degree()},
                 {"dvr_operator_gamma", inst.dvr_gossip.gamma()}};
  sm["reference"] = {{"f_star", res.reference.f_star},
                     {"grad_norm", res.reference.grad_norm},
                     {"iterations", res.reference.iterations},
                     {"theta_norm", res.reference.theta_star.norm()}};
  sm["f_min_observed"] = std::isfinite(f_min) ? json(f_min) : json(nullptr);
  sm["runs"] = runs;
  sm["wall_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (write_files) {
    std::ofstream out(fs::path(config.output_dir) / "summary.json");
    if (!out) throw IoError("cannot write summary.json in '" + config.output_dir + "'");
    out << sm.dump(2) << "\n";
  }
  return res;
}

}  // namespace dvr
