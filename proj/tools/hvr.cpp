#include "hvr/config.hpp"
#include "hvr/parallel.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

namespace {

using nlohmann::json;

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw hvr::ConfigurationError("cannot open " + path);
  return json::parse(in);
}

int print_oracles() {
  bool ok = true;
  for (const auto& c : hvr::run_oracle_suite()) {
    std::printf("%s %s (%s)\n", c.passed ? "PASS" : "FAIL", c.name.c_str(), c.detail.c_str());
    ok = ok && c.passed;
  }
  return ok ? 0 : 1;
}

int cmd_run(const std::string& config_path) {
  const hvr::ExperimentConfig config = hvr::load_config(config_path);
  if (config.method == "oracle") return print_oracles();

  const hvr::ExperimentResult result = hvr::run_experiment(config);
  const std::filesystem::path out(config.output);
  std::filesystem::create_directories(out);
  write_file(out / "report.json", hvr::report_document(config, result.report).dump(2) + "\n");
  write_file(out / "samples.csv", hvr::table_to_csv(result.table));
  json timing = {{"wall_time_s", result.report.wall_time}, {"threads", hvr::thread_count()}};
  write_file(out / "timing.json", timing.dump(2) + "\n");

  const auto& r = result.report;
  std::printf("method=%s N=%d M=%zu mean_11=%.8g ci_11=%.3g", r.method.c_str(), r.N, r.M, r.mean(0, 0),
              r.ci_half_width(0, 0));
  if (!config.baseline_report.empty() && std::filesystem::exists(config.baseline_report)) {
    const hvr::EstimatorReport base = hvr::report_from_json(read_json(config.baseline_report));
    const hvr::VarianceRatio v = hvr::variance_ratio(base, r, 0, 0);
    std::printf(" ratio_11=%.4g cost_ratio=%.3g%s", v.ratio, v.cost_ratio, v.cost_matched ? "" : " (cost mismatch)");
  }
  std::printf("\n");
  return 0;
}

int cmd_compare(const std::string& a_path, const std::string& b_path) {
  const json a = read_json(a_path);
  const json b = read_json(b_path);
  const hvr::EstimatorReport ra = hvr::report_from_json(a);
  const hvr::EstimatorReport rb = hvr::report_from_json(b);
  auto reject = [](const std::string& msg) {
    std::fprintf(stderr, "compare: %s\n", msg.c_str());
    return 2;
  };
  if (ra.dim != rb.dim) return reject("reports differ in dimension");
  if (ra.N != rb.N) return reject("reports differ in N (" + std::to_string(ra.N) + " vs " + std::to_string(rb.N) + ")");
  if (ra.r != rb.r) return reject("reports differ in r (" + std::to_string(ra.r) + " vs " + std::to_string(rb.r) + ")");
  if (a.contains("config") && b.contains("config") && a["config"].contains("law") && b["config"].contains("law") &&
      a["config"]["law"] != b["config"]["law"])
    return reject("reports were produced under different laws");

  json ratios = json::array();
  hvr::VarianceRatio first;
  for (int i = 0; i < ra.dim; ++i) {
    json row = json::array();
    for (int j = 0; j < ra.dim; ++j) {
      const hvr::VarianceRatio v = hvr::variance_ratio(ra, rb, i, j);
      if (i == 0 && j == 0) first = v;
      row.push_back(v.ratio);
    }
    ratios.push_back(row);
  }
  json out = {{"baseline", a_path},
              {"reduced", b_path},
              {"variance_ratio", ratios},
              {"cost_ratio", first.cost_ratio},
              {"cost_matched", first.cost_matched}};
  if (!first.warning.empty()) out["warning"] = first.warning;
  std::cout << out.dump(2) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hvr: variance-reduced Monte Carlo for random homogenization"};
  app.require_subcommand(1);
  unsigned threads = 0;
  app.add_option("--threads", threads, "worker threads (default: HVR_THREADS or all cores)");

  std::string config_path;
  auto* run = app.add_subcommand("run", "run the experiment described by a JSON config");
  run->add_option("config", config_path, "config file")->required();

  std::string a_path, b_path;
  auto* compare = app.add_subcommand("compare", "variance ratios of two reports (baseline first)");
  compare->add_option("baseline", a_path)->required();
  compare->add_option("reduced", b_path)->required();

  auto* oracle = app.add_subcommand("oracle", "run the built-in oracle suite");

  CLI11_PARSE(app, argc, argv);
  if (threads > 0) hvr::set_thread_count(threads);

  try {
    if (*run) return cmd_run(config_path);
    if (*compare) return cmd_compare(a_path, b_path);
    if (*oracle) return print_oracles();
  } catch (const hvr::ConfigurationError& e) {
    std::fprintf(stderr, "configuration error: %s\n", e.what());
    return 2;
  } catch (const hvr::RealizationError& e) {
    std::fprintf(stderr, "solver failure: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
