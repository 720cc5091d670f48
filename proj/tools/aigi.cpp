// Command-line front end for the experiment pipelines.

#include <chrono>
#include <ctime>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "aigi/config.hpp"
#include "aigi/error.hpp"
#include "aigi/fsutil.hpp"
#include "aigi/harness.hpp"
#include "aigi/image_io.hpp"
#include "aigi/report.hpp"
#include "aigi/synthdata.hpp"
#include "json.hpp"

namespace {

using namespace aigi;
using nlohmann::json;

struct Common {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  bool quiet = false;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "experiment config (JSON); defaults apply otherwise");
  cmd->add_option("--out", c.out, "output directory (overrides output_dir)");
  cmd->add_option("--seed", c.seed, "global seed override");
  cmd->add_flag("--quiet", c.quiet, "no progress messages");
}

ExperimentConfig resolve(const Common& c) {
  ExperimentConfig config = c.config.empty() ? default_config() : load_config(c.config);
  if (c.seed) override_seed(config, *c.seed);
  if (!c.out.empty()) config.output_dir = c.out;
  return config;
}

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

harness::Workspace workspace(const ExperimentConfig& config, const Common& c) {
  harness::PrepareOptions o;
  if (!c.quiet) o.log = [](const std::string& m) { std::cerr << m << '\n'; };
  return harness::prepare(config, o);
}

void emit(EvalReport report, const ExperimentConfig& config, const std::string& stem) {
  report.provenance.timestamp = utc_now();
  write_file_atomic(config.output_dir / "config.json", to_json(config).dump(2) + "\n");
  emit_report(report, config.output_dir, stem);
  std::cout << json{{"report", (config.output_dir / (stem + ".csv")).string()},
                    {"rows", report.rows.size()}}
                   .dump()
            << '\n';
}

void export_degraded(const harness::Workspace& ws, std::size_t count) {
  const std::size_t n = std::min(count, ws.held_out.size());
  for (const auto& p : harness::degradation_points(ws.config.degradations)) {
    if (p.kind == degrade::Kind::Identity) continue;
    const auto dir = ws.config.output_dir / "degraded" / p.label();
    ensure_writable_dir(dir);
    for (std::size_t i = 0; i < n; ++i) {
      const auto& im = ws.held_out[i];
      write_png(dir / (im.id + ".png"), harness::degrade_image(ws.config, p, im.pixels, im.id));
    }
  }
}

int fail(const std::string& kind, const std::string& message, int code) {
  std::cerr << json{{"error", kind}, {"message", message}}.dump() << '\n';
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adversarial robustness harness for generated-image detectors"};
  app.require_subcommand(1);
  Common common;

  auto* gen = app.add_subcommand("gen-corpus", "write the synthetic corpus as PNG + manifest");
  auto* train = app.add_subcommand("train", "train or load the detectors and save checkpoints");
  auto* benign = app.add_subcommand("benign", "clean accuracy, AUC and TPR@5%FPR");
  auto* whitebox = app.add_subcommand("whitebox", "white-box attack sweep");
  auto* transfer = app.add_subcommand("transfer", "black-box transfer matrices");
  auto* sweep = app.add_subcommand("degrade-sweep", "accuracy under post-attack degradations");
  auto* defense_cmd = app.add_subcommand("defense", "robust fine-tuning comparison");
  auto* show = app.add_subcommand("show-config", "print the resolved config as JSON");
  for (auto* cmd : {gen, train, benign, whitebox, transfer, sweep, defense_cmd, show}) {
    add_common(cmd, common);
  }
  bool export_adversarial = false;
  whitebox->add_flag("--export-adversarial", export_adversarial,
                     "write every adversarial example as PNG + JSON sidecar");
  std::size_t export_degraded_count = 0;
  sweep->add_option("--export-degraded", export_degraded_count,
                    "write the first N held-out images under every degradation");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what(), 2);
  }

  try {
    const ExperimentConfig config = resolve(common);
    if (show->parsed()) {
      std::cout << to_json(config).dump(2) << '\n';
      return 0;
    }
    if (gen->parsed()) {
      ensure_writable_dir(config.output_dir);
      synth::export_corpus(config.output_dir / "corpus", synth::generate_corpus(config.corpus));
      std::cout << json{{"corpus", (config.output_dir / "corpus").string()}}.dump() << '\n';
      return 0;
    }

    const auto ws = workspace(config, common);
    harness::AttackCache cache(config);
    if (train->parsed()) {
      json summary = json::array();
      for (const auto& d : ws.detectors) {
        summary.push_back({{"name", d.name},
                           {"family", to_string(d.detector.family())},
                           {"checkpoint", (config.output_dir / "detectors" / (d.name + ".ckpt")).string()},
                           {"loss_history", d.detector.metadata().loss_history}});
      }
      write_file_atomic(config.output_dir / "training.json", summary.dump(2) + "\n");
      emit(harness::run_benign(ws), config, "benign");
    } else if (benign->parsed()) {
      emit(harness::run_benign(ws), config, "benign");
    } else if (whitebox->parsed()) {
      harness::ResultsObserver observer;
      if (export_adversarial) {
        observer = [&](std::size_t i, const attack::AttackConfig& c, const auto& results) {
          const auto dir = config.output_dir / "adversarial" / ws.detectors[i].name / c.label();
          for (const auto& r : results) attack::export_result(dir, r);
        };
      }
      emit(harness::run_whitebox(ws, cache, observer), config, "whitebox");
    } else if (transfer->parsed()) {
      emit(harness::run_transfer_matrix(ws, cache), config, "transfer");
    } else if (sweep->parsed()) {
      if (export_degraded_count > 0) export_degraded(ws, export_degraded_count);
      emit(harness::run_degradation_sweep(ws, cache), config, "degrade");
    } else if (defense_cmd->parsed()) {
      std::vector<harness::NamedDetector> variants;
      auto report = harness::run_defense_eval(ws, cache, &variants);
      const auto dir = config.output_dir / "detectors";
      ensure_writable_dir(dir);
      for (const auto& v : variants) {
        std::string file = v.name;
        for (char& ch : file) {
          if (ch == '/') ch = '_';
        }
        save_detector(dir / (file + ".ckpt"), v.detector);
      }
      emit(std::move(report), config, "defense");
    }
    return 0;
  } catch (const Error& e) {
    return fail(to_string(e.kind()), e.what(), 1);
  } catch (const std::exception& e) {
    return fail("internal", e.what(), 1);
  }
}
