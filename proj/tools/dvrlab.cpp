#include "dvr/dual_oracle.hpp"
#include "dvr/harness.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iomanip>
#include <iostream>
#include <limits>
#include <map>
#include <optional>

namespace {

using nlohmann::json;

enum class Format { csv, json };

void print_kv(const json& j) {
  std::cout << "key,value\n";
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (it->is_array()) {
      std::cout << it.key() << ",\"";
      for (std::size_t k = 0; k < it->size(); ++k) std::cout << (k ? " " : "") << (*it)[k].dump();
      std::cout << "\"\n";
    } else {
      std::cout << it.key() << "," << it->dump() << "\n";
    }
  }
}

int cmd_spectrum(const std::string& spec, Format fmt) {
  dvr::Graph g = dvr::parse_graph_spec(spec);
  auto w = dvr::GossipMatrix::laplacian(g);
  json j;
  j["n"] = g.n;
  j["edges"] = g.edges.size();
  j["gamma"] = w.gamma();
  j["lambda_max"] = w.lambda_max();
  j["lambda_min_plus"] = w.lambda_min_plus();
  j["chebyshev_degree"] = g.n > 1 ? dvr::default_chebyshev_degree(w.gamma()) : 0;
  if (g.n > 1) j["chebyshev_gamma"] = dvr::chebyshev(w).gamma();
  std::vector<double> eig(w.eigenvalues().data(), w.eigenvalues().data() + w.eigenvalues().size());
  j["eigenvalues"] = eig;
  if (fmt == Format::json)
    std::cout << j.dump(2) << "\n";
  else
    print_kv(j);
  return 0;
}

int cmd_verify(std::uint64_t seed, Format fmt) {
  auto inst = dvr::default_oracle_instance();
  json res = dvr::run_verification(inst, seed);
  if (fmt == Format::json) {
    std::cout << res.dump(2) << "\n";
  } else {
    std::cout << "check,bound,observed,pass\n";
    for (const auto& c : res["checks"])
      std::cout << c["name"].get<std::string>() << "," << c["bound"].dump() << "," << c["observed"].dump() << ","
                << (c["pass"].get<bool>() ? "true" : "false") << "\n";
  }
  return res["pass"].get<bool>() ? 0 : 2;
}

int cmd_solve(const std::string& path, Format fmt) {
  auto config = dvr::load_config(path);
  auto inst = dvr::build_instance(config);
  auto ref = dvr::reference_solution(inst.problem);
  json j;
  j["f_star"] = ref.f_star;
  j["grad_norm"] = ref.grad_norm;
  j["iterations"] = ref.iterations;
  j["theta_norm"] = ref.theta_star.norm();
  j["theta_star"] = std::vector<double>(ref.theta_star.data(), ref.theta_star.data() + ref.theta_star.size());
  if (fmt == Format::json)
    std::cout << std::setprecision(17) << j.dump(2) << "\n";
  else
    print_kv(j);
  return 0;
}

int cmd_run(const std::string& path, std::optional<std::uint64_t> seed, const std::string& out_dir, Format fmt) {
  auto config = dvr::load_config(path);
  if (seed) config.seeds = {*seed};
  if (!out_dir.empty()) config.output_dir = out_dir;
  auto res = dvr::run_experiment(config);
  int failures = 0;
  if (fmt == Format::json) {
    std::cout << res.summary.dump(2) << "\n";
    for (const auto& r : res.runs) failures += !r.error.empty();
  } else {
    std::cout << "algorithm,seed,rows,final_subopt,csv,error\n";
    for (const auto& r : res.runs) {
      double last = r.trace.rows.empty() ? std::numeric_limits<double>::quiet_NaN() : r.trace.rows.back().subopt_node0;
      std::cout << r.algorithm << "," << r.seed << "," << r.trace.rows.size() << "," << last << "," << r.csv_path
                << ",\"" << r.error << "\"\n";
      failures += !r.error.empty();
    }
  }
  if (failures) std::cerr << failures << " run(s) failed; see summary.json\n";
  return failures ? 2 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Decentralized variance-reduced optimization lab"};
  app.require_subcommand(1);
  Format fmt = Format::csv;
  std::map<std::string, Format> formats{{"csv", Format::csv}, {"json", Format::json}};
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  app.add_option("--format", fmt, "Output format: csv or json")
      ->transform(CLI::CheckedTransformer(formats, CLI::ignore_case))
      ->capture_default_str();
  app.add_option("--seed", seed, "Seed (run: replaces the seed list; verify: sampling seed)");
  app.add_option("--out-dir", out_dir, "Output directory for run (overrides the config)");

  std::string config_path, graph_spec;
  auto* run = app.add_subcommand("run", "Run the experiments described by a config file");
  run->add_option("config", config_path, "JSON config file")->required();
  auto* spectrum = app.add_subcommand("spectrum", "Print the spectrum of a graph's Laplacian");
  spectrum->add_option("graph", graph_spec, "kind:n[:p[:seed]] or an edge-list file")->required();
  auto* verify = app.add_subcommand("verify", "Run the dual oracle checks on the default instance");
  auto* solve = app.add_subcommand("solve", "Compute the reference solution for a config");
  solve->add_option("config", config_path, "JSON config file")->required();
  for (auto* sub : {run, spectrum, verify, solve}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    if (app.get_subcommands().empty()) std::cerr << app.help();
    return 1;
  }

  try {
    if (*run) return cmd_run(config_path, seed, out_dir, fmt);
    if (*spectrum) return cmd_spectrum(graph_spec, fmt);
    if (*verify) return cmd_verify(seed.value_or(1), fmt);
    if (*solve) return cmd_solve(config_path, fmt);
  } catch (const dvr::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const dvr::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const dvr::IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "failure: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
