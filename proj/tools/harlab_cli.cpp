#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <nlohmann/json.hpp>

#include "harlab/errors.hpp"
#include "harlab/harness/experiment.hpp"

namespace fs = std::filesystem;
using namespace harlab;
using nlohmann::json;

namespace {

enum Exit { kOk = 0, kConfig = 1, kData = 2, kFailed = 3 };

struct Common {
  std::string config;
  std::string out;
  std::size_t jobs = 1;
  std::size_t max_cells = 0;
};

harness::ExperimentConfig load(const Common& c) {
  auto cfg = harness::load_config(c.config);
  if (const char* env = std::getenv("HARLAB_SEED"); env && *env) {
    std::uint64_t seed = 0;
    const std::string_view s(env);
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), seed);
    if (ec != std::errc() || ptr != s.data() + s.size()) {
      throw ConfigError(fmt::format("HARLAB_SEED must be an unsigned integer, got '{}'", env));
    }
    spdlog::info("HARLAB_SEED overrides seed {} -> {}", cfg.seed, seed);
    cfg.seed = seed;
  }
  if (!c.out.empty()) cfg.output_dir = c.out;
  cfg.validate();
  return cfg;
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw DataError(fmt::format("{}: cannot open for writing", path.string()));
  out << j.dump(1) << '\n';
}

int run_stages(const Common& c, std::set<harness::Stage> stages) {
  const auto cfg = load(c);
  harness::RunOptions opt;
  opt.jobs = c.jobs;
  opt.stages = std::move(stages);
  if (c.max_cells > 0) opt.max_new_cells = c.max_cells;
  const auto report = harness::run_experiment(cfg, opt);
  if (report.accuracy) {
    const auto& a = *report.accuracy;
    for (std::size_t i = 0; i < a.ucs.size(); ++i) {
      std::string row;
      for (double v : a.mean[i]) row += fmt::format(" {:6.3f}", v);
      spdlog::info("accuracy {} ->{}", a.ucs[i], row);
    }
  }
  if (!report.failures.empty()) {
    for (const auto& f : report.failures) spdlog::error("failed cell {}: {}", f.cell, f.error);
    return kFailed;
  }
  return kOk;
}

int cmd_synth(const Common& c) {
  const auto cfg = load(c);
  if (!cfg.synthetic) throw ConfigError("synth: the config has no dataset.synthetic block");
  const fs::path dir = cfg.output_dir;
  fs::create_directories(dir);
  const auto data = harness::synth_generate(*cfg.synthetic);
  harness::write_raw_windows(dir / "windows.csv", data.windows);
  write_json(dir / "planted.json", json{{"n_clusters", cfg.synthetic->n_clusters}, {"assignments", data.planted}});
  harness::DatasetManifest m;
  m.name = cfg.name;
  m.mode = harness::DataMode::RawWindows;
  m.files = {"windows.csv"};
  m.activities = data.activities;
  m.feature_config = features::whar_like_config();
  m.image = nn::layout_by_name("w-HAR").input;
  m.layout = "w-HAR";
  m.sample_rate_hz = cfg.synthetic->sample_rate_hz;
  write_json(dir / "manifest.json", harness::manifest_to_json(m));
  spdlog::info("wrote {} windows of {} users to {}", data.windows.size(), data.planted.size(), dir.string());
  return kOk;
}

int cmd_ingest(const Common& c) {
  auto cfg = load(c);
  cfg.zscore = false;
  const auto data = harness::load_dataset(cfg);
  const fs::path dir = cfg.output_dir;
  fs::create_directories(dir);
  harness::write_feature_csv(dir / "features.csv", data);
  std::map<std::string, std::map<std::string, std::size_t>> counts;
  for (std::size_t i = 0; i < data.size(); ++i) {
    ++counts[data.samples[i].user_id][data.activities.at(static_cast<std::size_t>(data.labels[i]))];
  }
  write_json(dir / "dataset_summary.json", json{{"name", data.name},
                                                {"windows", data.size()},
                                                {"feature_count", data.feature_count()},
                                                {"activities", data.activities},
                                                {"counts", counts}});
  return kOk;
}

int cmd_report(const Common& c) {
  fs::path dir = c.out;
  if (dir.empty()) dir = load(c).output_dir;
  std::ifstream in(dir / "report.json");
  if (!in) throw DataError(fmt::format("{}: no report.json; run `harlab experiment` first", dir.string()));
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw DataError(fmt::format("{}/report.json: {}", dir.string(), e.what()));
  }
  harness::export_report(harness::report_from_json(j), dir, {"csv", "svg"});
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"harlab: transfer learning across user clusters for activity recognition"};
  app.require_subcommand(1);
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "trace, debug, info, warn, error")->capture_default_str();
  app.fallthrough();

  Common common;
  using Handler = std::function<int(const Common&)>;
  std::vector<std::pair<CLI::App*, Handler>> commands;
  auto add = [&](const char* name, const char* help, Handler h, bool config_required = true) {
    auto* sub = app.add_subcommand(name, help);
    auto* opt = sub->add_option("--config", common.config, "experiment config (JSON)");
    if (config_required) opt->required()->check(CLI::ExistingFile);
    sub->add_option("--out", common.out, "output directory (overrides output_dir)");
    sub->add_option("--jobs", common.jobs, "worker threads for independent cells")->check(CLI::PositiveNumber);
    sub->add_option("--max-cells", common.max_cells, "stop after computing this many new cells (resume later)");
    commands.emplace_back(sub, std::move(h));
  };
  using harness::Stage;
  add("synth", "generate the synthetic dataset as CSV plus manifest", cmd_synth);
  add("ingest", "load a dataset and write its feature matrix", cmd_ingest);
  add("cluster", "cluster users into UCs (clusters.json)", [](const Common& c) { return run_stages(c, {Stage::Cluster}); });
  add("train", "train models per UC and the cross-UC accuracy matrix",
      [](const Common& c) { return run_stages(c, {Stage::Cluster, Stage::Train}); });
  add("cca", "layer-wise CCA distance curves",
      [](const Common& c) { return run_stages(c, {Stage::Cluster, Stage::Train, Stage::Cca}); });
  add("transfer", "transfer and fine-tune across UCs",
      [](const Common& c) { return run_stages(c, {Stage::Cluster, Stage::Train, Stage::Transfer}); });
  add("experiment", "run every stage and write the report",
      [](const Common& c) { return run_stages(c, harness::all_stages()); });
  add("report", "regenerate CSV and SVG files from report.json", cmd_report, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kConfig;
  }
  spdlog::set_level(spdlog::level::from_str(log_level));
  for (auto& [sub, handler] : commands) {
    if (!sub->parsed()) continue;
    try {
      return handler(common);
    } catch (const ConfigError& e) {
      spdlog::error("configuration error: {}", e.what());
      return kConfig;
    } catch (const DataError& e) {
      spdlog::error("data error: {}", e.what());
      return kData;
    } catch (const std::exception& e) {
      spdlog::error("{}", e.what());
      return kFailed;
    }
  }
  return kOk;
}
