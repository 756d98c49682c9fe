#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <cmath>
#include <fstream>

#include "csv.hpp"
#include "harlab/errors.hpp"
#include "harlab/harness/experiment.hpp"
#include "harlab/rng.hpp"
#include "internal.hpp"
#include "svg.hpp"

namespace harlab::harness {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json distribution_json(const Distribution& d) {
  return json{{"min", d.min}, {"q1", d.q1}, {"median", d.median}, {"q3", d.q3}, {"max", d.max}};
}

Distribution distribution_parse(const json& j) {
  return {j.at("min").get<double>(), j.at("q1").get<double>(), j.at("median").get<double>(),
          j.at("q3").get<double>(), j.at("max").get<double>()};
}

template <class T>
json optional_json(const std::optional<T>& v) {
  return v ? json(*v) : json(nullptr);
}

}  // namespace

json report_to_json(const ExperimentReport& r) {
  json j;
  j["config"] = r.config;
  j["config_hash"] = r.config_hash;
  j["versions"] = r.versions;
  j["dataset"] = r.dataset;
  j["clusters"] = r.clusters ? json(*r.clusters) : json(nullptr);
  j["planted_ari"] = optional_json(r.planted_ari);
  json ucs = json::array();
  for (const auto& u : r.ucs) {
    ucs.push_back({{"name", u.name},
                   {"users", u.users},
                   {"n_windows", u.n_windows},
                   {"n_train", u.n_train},
                   {"n_val", u.n_val},
                   {"n_test", u.n_test}});
  }
  j["ucs"] = ucs;
  json models = json::array();
  for (const auto& m : r.models) {
    models.push_back({{"run_id", m.run_id},
                      {"uc", m.uc},
                      {"index", m.index},
                      {"init_seed", m.init_seed},
                      {"train_seed", m.train_seed},
                      {"accuracy", m.accuracy},
                      {"curve", transfer::curve_to_json(m.curve, false)}});
  }
  j["models"] = models;
  if (r.accuracy) {
    j["accuracy_matrix"] = {{"ucs", r.accuracy->ucs},
                            {"mean", r.accuracy->mean},
                            {"std", r.accuracy->std},
                            {"run_ids", r.accuracy->run_ids}};
  } else {
    j["accuracy_matrix"] = nullptr;
  }
  json ft = json::object();
  for (const auto& [depth, outcomes] : r.fine_tune) {
    json arr = json::array();
    for (const auto& o : outcomes) {
      json oj = transfer::outcome_to_json(o, false);
      oj["run_id"] = fmt::format("transfer/d{}/{}->{}", depth, o.source_model_id, o.target_uc);
      arr.push_back(std::move(oj));
    }
    ft[std::to_string(depth)] = std::move(arr);
  }
  j["fine_tune"] = ft;
  json curves = json::array();
  for (const auto& c : r.distance_curves) {
    json cj = distance_curve_json(c.curve);
    cj["run_id"] = c.run_id;
    curves.push_back(std::move(cj));
  }
  j["distance_curves"] = curves;
  if (r.sweep) {
    json splits = json::array();
    for (const auto& s : r.sweep->splits) splits.push_back(split_accuracy_json(s));
    j["sweep"] = {{"splits", splits},
                  {"min_before", distribution_json(r.sweep->min_before)},
                  {"median_before", distribution_json(r.sweep->median_before)},
                  {"min_after", distribution_json(r.sweep->min_after)},
                  {"median_after", distribution_json(r.sweep->median_after)},
                  {"clustered", r.sweep->clustered ? split_accuracy_json(*r.sweep->clustered) : json(nullptr)}};
  } else {
    j["sweep"] = nullptr;
  }
  json failures = json::array();
  for (const auto& f : r.failures) failures.push_back({{"cell", f.cell}, {"error", f.error}});
  j["failures"] = failures;
  j["complete"] = r.complete;
  return j;
}

ExperimentReport report_from_json(const json& j) {
  try {
    ExperimentReport r;
    r.config = j.at("config");
    r.config_hash = j.at("config_hash").get<std::string>();
    r.versions = j.at("versions");
    r.dataset = j.at("dataset");
    if (!j.at("clusters").is_null()) r.clusters = j.at("clusters").get<clustering::ClusterAssignment>();
    if (!j.at("planted_ari").is_null()) r.planted_ari = j.at("planted_ari").get<double>();
    for (const auto& u : j.at("ucs")) {
      r.ucs.push_back({u.at("name").get<std::string>(), u.at("users").get<std::vector<std::string>>(),
                       u.at("n_windows").get<std::size_t>(), u.at("n_train").get<std::size_t>(),
                       u.at("n_val").get<std::size_t>(), u.at("n_test").get<std::size_t>()});
    }
    for (const auto& m : j.at("models")) {
      ModelRun run;
      run.run_id = m.at("run_id").get<std::string>();
      run.uc = m.at("uc").get<std::size_t>();
      run.index = m.at("index").get<std::size_t>();
      run.init_seed = m.at("init_seed").get<std::uint64_t>();
      run.train_seed = m.at("train_seed").get<std::uint64_t>();
      run.accuracy = m.at("accuracy").get<std::vector<double>>();
      run.curve = transfer::curve_from_json(m.at("curve"));
      r.models.push_back(std::move(run));
    }
    if (const auto& am = j.at("accuracy_matrix"); !am.is_null()) {
      AccuracyMatrix a;
      a.ucs = am.at("ucs").get<std::vector<std::string>>();
      a.mean = am.at("mean").get<std::vector<std::vector<double>>>();
      a.std = am.at("std").get<std::vector<std::vector<double>>>();
      a.run_ids = am.at("run_ids").get<std::vector<std::vector<std::string>>>();
      r.accuracy = std::move(a);
    }
    for (const auto& [depth, arr] : j.at("fine_tune").items()) {
      auto& out = r.fine_tune[std::stoul(depth)];
      for (const auto& o : arr) out.push_back(transfer::outcome_from_json(o));
    }
    for (const auto& c : j.at("distance_curves")) {
      CurveRecord rec;
      rec.run_id = c.at("run_id").get<std::string>();
      rec.curve.train_uc_a = c.at("train_uc_a").get<std::string>();
      rec.curve.train_uc_b = c.at("train_uc_b").get<std::string>();
      rec.curve.test_uc = c.at("test_uc").get<std::string>();
      for (const auto& p : c.at("points")) {
        rec.curve.points.push_back({cca::probe_layer_from_string(p.at("layer").get<std::string>()),
                                    p.at("mean_distance").get<double>(), p.at("std").get<double>(),
                                    p.at("n_pairs").get<std::size_t>()});
      }
      r.distance_curves.push_back(std::move(rec));
    }
    if (const auto& s = j.at("sweep"); !s.is_null()) {
      SweepSummary sw;
      for (const auto& x : s.at("splits")) sw.splits.push_back(split_accuracy_parse(x));
      sw.min_before = distribution_parse(s.at("min_before"));
      sw.median_before = distribution_parse(s.at("median_before"));
      sw.min_after = distribution_parse(s.at("min_after"));
      sw.median_after = distribution_parse(s.at("median_after"));
      if (!s.at("clustered").is_null()) sw.clustered = split_accuracy_parse(s.at("clustered"));
      r.sweep = std::move(sw);
    }
    for (const auto& f : j.at("failures")) {
      r.failures.push_back({f.at("cell").get<std::string>(), f.at("error").get<std::string>()});
    }
    r.complete = j.at("complete").get<bool>();
    return r;
  } catch (const json::exception& e) {
    throw DataError(fmt::format("report.json: {}", e.what()));
  }
}

json timings_to_json(const ExperimentReport& r) {
  json cells = json::object();
  for (const auto& [id, s] : r.cell_cpu_seconds) cells[id] = s;
  json models = json::object();
  for (const auto& m : r.models) {
    json epochs = json::array();
    for (const auto& e : m.curve.epochs) epochs.push_back(e.cpu_seconds);
    models[m.run_id] = {{"setup_cpu_seconds", m.curve.setup_cpu_seconds}, {"epoch_cpu_seconds", epochs}};
  }
  json transfers = json::array();
  for (const auto& [depth, outcomes] : r.fine_tune) {
    for (const auto& o : outcomes) {
      transfers.push_back({{"depth", depth},
                           {"source_model_id", o.source_model_id},
                           {"target_uc", o.target_uc},
                           {"wall_clock_tuning", o.wall_clock_tuning},
                           {"wall_clock_scratch", o.wall_clock_scratch},
                           {"epoch_cpu_tuning", o.epoch_cpu_tuning},
                           {"epoch_cpu_scratch", o.epoch_cpu_scratch},
                           {"plateau_cpu_tuning", o.plateau_cpu_tuning},
                           {"plateau_cpu_scratch", o.plateau_cpu_scratch},
                           {"time_to_plateau_ratio", o.time_to_plateau_ratio()}});
    }
  }
  return json{{"clock", "thread CPU time, seconds"}, {"cells", cells}, {"models", models}, {"transfer", transfers}};
}

namespace {

void write_text(const fs::path& path, const std::string& text) {
  auto out = detail::open_for_write(path);
  out << text;
  if (!out) throw DataError(fmt::format("{}: write failed", path.string()));
}

std::string file_safe(std::string s) {
  for (char& c : s) {
    if (c == '/' || c == '>' || c == ' ') c = '_';
  }
  return s;
}

void export_csv(const ExperimentReport& r, const fs::path& dir) {
  if (r.accuracy) {
    std::string s = "train_uc";
    for (const auto& u : r.accuracy->ucs) s += "," + u;
    s += '\n';
    for (std::size_t i = 0; i < r.accuracy->ucs.size(); ++i) {
      s += r.accuracy->ucs[i];
      for (double v : r.accuracy->mean[i]) s += fmt::format(",{}", v);
      s += '\n';
    }
    write_text(dir / "accuracy_matrix.csv", s);
  }
  for (const auto& [depth, outcomes] : r.fine_tune) {
    std::string s =
        "source_model_id,target_uc,baseline_accuracy,tuned_accuracy,scratch_accuracy,trained_param_fraction,"
        "starting_loss_tuning,starting_loss_scratch,plateau_epoch_tuning,plateau_epoch_scratch\n";
    for (const auto& o : outcomes) {
      s += fmt::format("{},{},{},{},{},{},{},{},{},{}\n", o.source_model_id, o.target_uc, o.baseline_accuracy,
                       o.tuned_accuracy, o.scratch_accuracy, o.trained_param_fraction, o.starting_loss_tuning,
                       o.starting_loss_scratch, o.plateau_epoch_tuning, o.plateau_epoch_scratch);
    }
    write_text(dir / fmt::format("fine_tune_depth{}.csv", depth), s);
  }
  if (!r.distance_curves.empty()) {
    std::string s = "train_uc_a,train_uc_b,test_uc,probe_layer,mean_distance,std,n_pairs\n";
    for (const auto& c : r.distance_curves) {
      for (const auto& p : c.curve.points) {
        s += fmt::format("{},{},{},{},{},{},{}\n", c.curve.train_uc_a, c.curve.train_uc_b, c.curve.test_uc,
                         cca::to_string(p.layer), p.mean_distance, p.std, p.n_pairs);
      }
    }
    write_text(dir / "cca_curves.csv", s);
  }
}

void export_svg(const ExperimentReport& r, const fs::path& dir) {
  // Distance curves: one chart per pair of training UCs, a series per test UC.
  std::map<std::pair<std::string, std::string>, std::vector<const CurveRecord*>> by_pair;
  for (const auto& c : r.distance_curves) by_pair[{c.curve.train_uc_a, c.curve.train_uc_b}].push_back(&c);
  for (const auto& [pair, curves] : by_pair) {
    detail::LineChart chart;
    chart.title = pair.first == pair.second ? fmt::format("CCA distance, models trained on {}", pair.first)
                                            : fmt::format("CCA distance, {} vs {} models", pair.first, pair.second);
    chart.x_label = "probe layer";
    chart.y_label = "mean CCA distance";
    for (const auto& p : curves.front()->curve.points) chart.x_ticks.push_back(cca::to_string(p.layer));
    for (const auto* c : curves) {
      detail::Series s{"test " + c->curve.test_uc, {}};
      for (const auto& p : c->curve.points) s.values.push_back(p.mean_distance);
      chart.series.push_back(std::move(s));
    }
    write_text(dir / fmt::format("cca_{}_{}.svg", pair.first, pair.second), detail::render_svg(chart));
  }
  // Validation accuracy of the first model of each UC.
  if (!r.models.empty()) {
    detail::LineChart chart;
    chart.title = "Validation accuracy while training";
    chart.x_label = "epoch";
    chart.y_label = "accuracy";
    for (const auto& m : r.models) {
      if (m.index != 0) continue;
      detail::Series s{m.run_id, {}};
      for (const auto& e : m.curve.epochs) s.values.push_back(e.val_accuracy);
      chart.series.push_back(std::move(s));
    }
    write_text(dir / "training_curves.svg", detail::render_svg(chart));
  }
  // Fine-tuning vs scratch training loss, per target UC.
  std::map<std::string, detail::LineChart> per_target;
  for (const auto& [depth, outcomes] : r.fine_tune) {
    for (const auto& o : outcomes) {
      auto& chart = per_target[o.target_uc];
      if (chart.series.empty()) {
        chart.title = fmt::format("Training loss on {}", o.target_uc);
        chart.x_label = "epoch";
        chart.y_label = "training loss";
        chart.auto_y = true;
        detail::Series s{"scratch", {}};
        for (const auto& e : o.scratch_curve.epochs) s.values.push_back(e.train_loss);
        chart.series.push_back(std::move(s));
      }
      if (chart.series.size() >= 9) continue;
      detail::Series s{fmt::format("d{} from {}", depth, o.source_model_id), {}};
      for (const auto& e : o.tuning_curve.epochs) s.values.push_back(e.train_loss);
      chart.series.push_back(std::move(s));
    }
  }
  for (const auto& [target, chart] : per_target) {
    write_text(dir / fmt::format("fine_tune_loss_{}.svg", file_safe(target)), detail::render_svg(chart));
  }
}

}  // namespace

void export_report(const ExperimentReport& report, const fs::path& dir, const std::set<std::string>& formats) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) {
    throw DataError(fmt::format("{}: cannot create output directory{}", dir.string(), ec ? ": " + ec.message() : ""));
  }
  if (formats.count("json")) {
    write_text(dir / "report.json", report_to_json(report).dump(1) + "\n");
    write_text(dir / "timings.json", timings_to_json(report).dump(1) + "\n");
    if (report.clusters) write_text(dir / "clusters.json", json(*report.clusters).dump(1) + "\n");
    if (!report.fine_tune.empty()) {
      std::vector<transfer::TransferOutcome> all;
      for (const auto& [d, o] : report.fine_tune) all.insert(all.end(), o.begin(), o.end());
      const std::string train_hash =
          report.config.contains("train") ? fmt::format("{:016x}", mix64(hash_tag(report.config["train"].dump()))) : "";
      write_text(dir / "transfer_report.json",
                 transfer::transfer_report_json(all, train_hash, report.config_hash).dump(1) + "\n");
    }
  }
  if (formats.count("csv")) export_csv(report, dir);
  if (formats.count("svg")) export_svg(report, dir);
  spdlog::info("report written to {}", dir.string());
}

}  // namespace harlab::harness
