#include "doctest.h"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "aigi/error.hpp"
#include "aigi/fsutil.hpp"
#include "aigi/harness.hpp"
#include "aigi/metrics.hpp"
#include "json.hpp"
#include "support/fixtures.hpp"

using namespace aigi;
using namespace aigi::harness;

namespace {

std::filesystem::path scratch(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("aigi_test_harness_" + name);
  std::filesystem::remove_all(dir);
  return dir;
}

// One workspace shared by the pipeline cases; training dominates the cost.
const Workspace& shared_workspace() {
  static const Workspace ws = [] {
    PrepareOptions o;
    o.save_checkpoints = false;
    return prepare(testing::tiny_config(scratch("shared")), o);
  }();
  return ws;
}

std::vector<const ReportRow*> select(const EvalReport& r, const std::string& regime) {
  std::vector<const ReportRow*> out;
  for (const auto& row : r.rows) {
    if (row.regime == regime) out.push_back(&row);
  }
  return out;
}

struct CliResult {
  int code;
  std::string out;
  std::string err;
};

CliResult run_cli(const std::string& args, const std::string& tag) {
  const auto dir = scratch("cli_" + tag);
  std::filesystem::create_directories(dir);
  const std::string cmd = std::string(AIGI_CLI) + " " + args + " > " + (dir / "out").string() +
                          " 2> " + (dir / "err").string();
  const int status = std::system(cmd.c_str());
  CliResult r{WIFEXITED(status) ? WEXITSTATUS(status) : -1, read_file(dir / "out"),
              read_file(dir / "err")};
  std::filesystem::remove_all(dir);
  return r;
}

}  // namespace

TEST_CASE("prepare splits, subsets and trains every configured detector") {
  const auto& ws = shared_workspace();
  const auto& c = ws.config;
  CHECK(ws.train.size() + ws.held_out.size() == 60);
  CHECK(ws.attack_set.size() == 2 * c.attack_per_class);
  REQUIRE(ws.detectors.size() == c.detectors.size());
  for (std::size_t i = 0; i < ws.detectors.size(); ++i) {
    CHECK(ws.detectors[i].name == c.detectors[i].name);
    CHECK(ws.detectors[i].detector.family() == c.detectors[i].family);
    CHECK(ws.index_of(c.detectors[i].name) == i);
  }
  REQUIRE(ws.quality_reference() != nullptr);
  CHECK(ws.quality_reference()->family() == Family::FeatureProbe);
  CHECK_THROWS_AS(ws.index_of("nobody"), Error);
}

TEST_CASE("attack seeds depend on the detector name, not the grid position") {
  const auto& ws = shared_workspace();
  const auto& grid = ws.config.whitebox[0];
  const auto a = attack_for(ws, 0, grid, 2.0 / 255);
  CHECK(a == attack_for(ws, 0, grid, 2.0 / 255));
  CHECK(a.seed != attack_for(ws, 1, grid, 2.0 / 255).seed);
  CHECK(a.epsilon == 2.0 / 255);
  CHECK(a.steps == grid.steps);
}

TEST_CASE("benign rows: one per detector on the held-out split") {
  const auto& ws = shared_workspace();
  const auto r = run_benign(ws);
  REQUIRE(r.rows.size() == ws.detectors.size());
  for (std::size_t i = 0; i < r.rows.size(); ++i) {
    const auto& row = r.rows[i];
    CHECK(row.detector == ws.detectors[i].name);
    CHECK(row.n == ws.held_out.size());
    REQUIRE(row.auc.has_value());
    std::vector<metrics::ScoredSample> samples;
    for (const auto& im : ws.held_out) samples.push_back({score(ws.detectors[i].detector, im.pixels), im.label, im.id});
    CHECK(*row.auc == metrics::auc_roc(samples));
  }
  CHECK(r.provenance.config_hash == config_hash(ws.config));
}

TEST_CASE("white-box sweep: epsilon 0 is the clean attack set, balls hold, observer sees every point") {
  const auto& ws = shared_workspace();
  AttackCache cache(ws.config);
  std::size_t calls = 0;
  bool in_ball = true;
  const auto r = run_whitebox(ws, cache, [&](std::size_t, const attack::AttackConfig& c, const auto& results) {
    ++calls;
    for (std::size_t i = 0; i < results.size(); ++i) {
      in_ball = in_ball && attack::verify_constraint(ws.attack_set[i].pixels, results[i].adversarial,
                                                     c.norm, c.epsilon, false);
    }
  });
  std::size_t points = 0;
  for (const auto& g : ws.config.whitebox) points += g.epsilons.size();
  CHECK(calls == points * ws.detectors.size());
  CHECK(r.rows.size() == calls);
  CHECK(in_ball);

  for (std::size_t i = 0; i < ws.detectors.size(); ++i) {
    const auto& d = ws.detectors[i].detector;
    std::vector<metrics::ScoredSample> clean;
    for (const auto& im : ws.attack_set) clean.push_back({score(d, im.pixels), im.label, im.id});
    const auto it = std::find_if(r.rows.begin(), r.rows.end(), [&](const ReportRow& row) {
      return row.detector == ws.detectors[i].name && row.epsilon == 0.0;
    });
    REQUIRE(it != r.rows.end());
    CHECK(*it->auc == metrics::auc_roc(clean));
    CHECK(*it->asr == 0.0);
    CHECK(*it->psnr == 80.0);
  }
  // One spectrum per (detector, grid) at the grid's largest epsilon.
  CHECK(r.spectra.size() == ws.detectors.size() * ws.config.whitebox.size());
}

TEST_CASE("transfer matrix: diagonal equals the white-box ASR of the same attack") {
  const auto& ws = shared_workspace();
  AttackCache cache(ws.config);
  const auto t = run_transfer_matrix(ws, cache);
  const auto w = run_whitebox(ws, cache);
  REQUIRE(t.matrices.size() == 1);
  const auto& m = t.matrices[0];
  const std::size_t n = ws.detectors.size();
  REQUIRE(m.names.size() == n);
  CHECK(t.rows.size() == n * n);
  CHECK(select(t, "blackbox").size() == n * (n - 1));
  for (std::size_t i = 0; i < n; ++i) {
    const auto it = std::find_if(w.rows.begin(), w.rows.end(), [&](const ReportRow& row) {
      return row.detector == ws.detectors[i].name && row.attack == "bim";
    });
    REQUIRE(it != w.rows.end());
    CHECK(m.asr[i][i] == it->asr);
  }
}

TEST_CASE("degradation sweep: identity rows agree with the undegraded pipelines") {
  const auto& ws = shared_workspace();
  AttackCache cache(ws.config);
  const auto r = run_degradation_sweep(ws, cache);
  const auto benign = run_benign(ws);
  const std::size_t points = degradation_points(ws.config.degradations).size();
  CHECK(points == 4);
  const std::size_t n = ws.detectors.size();
  CHECK(select(r, "benign").size() == points * n);
  CHECK(select(r, "whitebox").size() == points * n);
  CHECK(select(r, "blackbox").size() == points * n);

  std::size_t matched = 0;
  for (const auto* row : select(r, "benign")) {
    if (row->degradation != "none") continue;
    ++matched;
    const auto& b = benign.rows[ws.index_of(row->detector)];
    CHECK(row->accuracy == b.accuracy);
    CHECK(row->auc == b.auc);
  }
  const auto t = run_transfer_matrix(ws, cache);
  for (const auto* row : select(r, "whitebox")) {
    if (row->degradation != "none") continue;
    ++matched;
    const auto it = std::find_if(t.rows.begin(), t.rows.end(), [&](const ReportRow& x) {
      return x.source == row->detector && x.detector == row->detector;
    });
    REQUIRE(it != t.rows.end());
    CHECK(row->accuracy == it->accuracy);
  }
  CHECK(matched == 2 * n);
  // Noise is seeded by image id, so reruns match exactly.
  AttackCache again(ws.config);
  CHECK(run_degradation_sweep(ws, again) == r);
}

TEST_CASE("pre-degrading attacker differs from the post-attack regime only off identity") {
  auto ws = shared_workspace();
  ws.config.degradations.jpeg_qualities = {30};
  ws.config.degradations.blur_sigmas = {};
  ws.config.degradations.noise_levels = {};
  AttackCache c1(ws.config);
  const auto post = run_degradation_sweep(ws, c1);
  ws.config.degradations.attacker_pre_degrade = true;
  AttackCache c2(ws.config);
  const auto pre = run_degradation_sweep(ws, c2);
  REQUIRE(pre.rows.size() == post.rows.size());
  bool moved = false;
  for (std::size_t i = 0; i < pre.rows.size(); ++i) {
    if (pre.rows[i].degradation == "none" || pre.rows[i].regime == "benign") {
      CHECK(pre.rows[i] == post.rows[i]);
    } else {
      moved = moved || !(pre.rows[i] == post.rows[i]);
    }
  }
  CHECK(moved);
  CHECK(pre.provenance.notes.size() == post.provenance.notes.size() + 1);
}

TEST_CASE("defense eval: undefended model first, variants named and returned") {
  const auto& ws = shared_workspace();
  AttackCache cache(ws.config);
  std::vector<NamedDetector> variants;
  const auto r = run_defense_eval(ws, cache, &variants);
  const auto& s = *ws.config.defense;
  REQUIRE(variants.size() == s.variants.size());
  const std::string base = ws.detectors[s.detector].name;
  CHECK(variants[0].name == base + "/" + s.names[0]);
  for (const auto& v : variants) CHECK(v.detector.metadata().defense.has_value());

  const auto clean = select(r, "benign");
  REQUIRE(clean.size() == 1 + variants.size());
  CHECK(clean[0]->detector == base);
  CHECK(clean[0]->auc == run_benign(ws).rows[s.detector].auc);
  const std::size_t n = ws.detectors.size();
  CHECK(select(r, "blackbox").size() == (1 + variants.size()) * (n - 1));

  auto wrong = shared_workspace();
  wrong.config.defense->detector = 2;
  CHECK_THROWS_AS(run_defense_eval(wrong, cache), Error);
  wrong.config.defense.reset();
  CHECK_THROWS_AS(run_defense_eval(wrong, cache), Error);
}

TEST_CASE("prepare rejects an unwritable output directory and duplicate names") {
  const auto blocker = scratch("blocker");
  write_file_atomic(blocker, "a file, not a directory");
  auto c = testing::tiny_config(blocker / "out");
  CHECK_THROWS_AS(prepare(c), Error);
  std::filesystem::remove(blocker);

  c = testing::tiny_config(scratch("dupes"));
  c.detectors[1].name = c.detectors[0].name;
  CHECK_THROWS_AS(prepare(c), Error);
  c.detectors.clear();
  CHECK_THROWS_AS(prepare(c), Error);
}

TEST_CASE("cli: usage errors exit 2, run errors exit 1, both as JSON on stderr") {
  const auto usage = run_cli("no-such-command", "usage");
  CHECK(usage.code == 2);
  CHECK(nlohmann::json::parse(usage.err)["error"] == "usage");

  const auto missing = run_cli("benign --config /nonexistent/c.json --quiet", "missing");
  CHECK(missing.code == 1);
  CHECK(nlohmann::json::parse(missing.err).contains("message"));

  const auto show = run_cli("show-config --seed 9", "show");
  REQUIRE(show.code == 0);
  CHECK(config_from_json(nlohmann::json::parse(show.out)).global_seed == 9);
}

TEST_CASE("cli: benign run writes the report and config") {
  const auto dir = scratch("benign_run");
  std::filesystem::create_directories(dir);
  write_file_atomic(dir / "config.in.json", to_json(testing::tiny_config(dir / "out")).dump());
  const auto r = run_cli("benign --quiet --config " + (dir / "config.in.json").string(), "run");
  REQUIRE(r.code == 0);
  const auto summary = nlohmann::json::parse(r.out);
  CHECK(summary["rows"] == 4);
  CHECK(std::filesystem::exists(dir / "out" / "benign.csv"));
  CHECK(std::filesystem::exists(dir / "out" / "config.json"));
  CHECK(std::filesystem::exists(dir / "out" / "detectors" / "probe_a.ckpt"));
  std::filesystem::remove_all(dir);
}
