#pragma once

#include "dvr/baselines.hpp"
#include "dvr/catalyst.hpp"
#include "dvr/dvr.hpp"

#include <json.hpp>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace dvr {

struct SolverOptions {
  double tolerance = 1e-12;  // on |grad F| / (1 + |theta|)
  std::int64_t max_iterations = 1000000;
};

// Accelerated gradient descent with gradient restart on the global objective.
// Throws ConvergenceError when the iteration cap is hit first.
Reference reference_solution(const Problem& problem, const SolverOptions& options = {});

// Upper bound on the smoothness of F: sum_i sigma_i + c * w * lambda_max(X^T X).
double global_smoothness(const Problem& problem);

struct DatasetSpec {
  std::string kind = "synth";  // synth | libsvm
  std::string path;
  std::int64_t n_samples = 450;
  std::int64_t dim = 20;
  std::uint64_t seed = 5;
  double scale = 1.0;
  double decay = 1.0;
};

struct ExperimentConfig {
  std::string graph = "grid:9";
  DatasetSpec dataset;
  LossKind loss = LossKind::logistic;
  double sigma = 1e-3;
  double tau = 250.0;
  std::vector<std::string> algorithms;
  std::vector<std::uint64_t> seeds{42};
  Budget budget;
  bool chebyshev = false;
  int chebyshev_degree = 0;
  KappaBMode kappa_b_mode = KappaBMode::estimate;
  double kappa_b_value = 0.0;
  bool shuffle = false;
  std::uint64_t shuffle_seed = 0;
  CatalystConfig catalyst;
  double extra_eta = 0.0;  // 0: default
  double gt_saga_eta = 0.0;
  std::optional<double> p_comm;
  TraceOptions trace;
  std::string output_dir = "out";
  int threads = 1;
};

extern const std::vector<std::string> kAlgorithms;

// Every schema violation is collected; the thrown ValidationError lists them all.
ExperimentConfig parse_config(const nlohmann::json& j);
ExperimentConfig load_config(const std::string& path);
nlohmann::json to_json(const ExperimentConfig& config);

struct Instance {
  Problem problem;
  Graph graph;
  GossipMatrix gossip;       // plain Laplacian
  GossipMatrix dvr_gossip;   // Chebyshev operator when enabled, else the Laplacian
};

Instance build_instance(const ExperimentConfig& config);

struct RunResult {
  std::string algorithm;
  std::uint64_t seed = 0;
  std::string csv_path;
  Trace trace;
  double wall_seconds = 0.0;
  std::string error;
};

// One trace for one (algorithm, seed); throws on failure.
Trace run_algorithm(const std::string& algorithm, const Instance& inst, const ExperimentConfig& config,
                    const Reference* ref, std::uint64_t seed);

struct ExperimentResult {
  Reference reference;
  std::vector<RunResult> runs;
  nlohmann::json summary;
};

// Runs every (algorithm, seed) pair, writes <out>/<algorithm>_seed<seed>.csv
// per run and <out>/summary.json. A failing run is recorded and the rest proceed.
ExperimentResult run_experiment(const ExperimentConfig& config, bool write_files = true);

}  // namespace dvr
