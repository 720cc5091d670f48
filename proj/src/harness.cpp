#include "aigi/harness.hpp"

#include <algorithm>
#include <cstdio>

#include "aigi/defense.hpp"
#include "aigi/degrade.hpp"
#include "aigi/error.hpp"
#include "aigi/fsutil.hpp"
#include "aigi/metrics.hpp"
#include "aigi/rng.hpp"

namespace aigi::harness {

using attack::AdversarialResult;
using attack::AttackConfig;
using grad::Tensor;

const Detector* Workspace::quality_reference() const {
  for (const auto& d : detectors) {
    if (d.detector.family() == Family::FeatureProbe) return &d.detector;
  }
  return nullptr;
}

std::size_t Workspace::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < detectors.size(); ++i) {
    if (detectors[i].name == name) return i;
  }
  throw Error(ErrorKind::InvalidArgument, "no detector named '" + name + "'");
}

// --- workspace --------------------------------------------------------------

namespace {

void say(const Logger& log, const std::string& m) {
  if (log) log(m);
}

Detector build_or_load(const DetectorSpec& spec, const grad::Shape& shape,
                       std::span<const LabeledImage> train, const Logger& log) {
  if (!spec.train_fresh) {
    Detector d = load_detector(*spec.checkpoint);
    if (d.input_shape() != shape) {
      throw Error(ErrorKind::ShapeMismatch,
                  "checkpoint " + spec.checkpoint->string() + " expects a different input size");
    }
    say(log, "loaded " + spec.name + " from " + spec.checkpoint->string());
    return d;
  }
  Detector d = spec.family == Family::FeatureProbe
                   ? build_feature_probe(spec.seed, spec.feature_dim, shape)
                   : build_compact_cnn(spec.seed, shape);
  TrainOptions o;
  o.epochs = spec.epochs;
  o.lr = spec.lr;
  o.augment = spec.augment;
  o.seed = spec.train_seed;
  say(log, "training " + spec.name);
  return train_detector(std::move(d), train, o);
}

}  // namespace

Workspace prepare(const ExperimentConfig& config, const PrepareOptions& options) {
  ensure_writable_dir(config.output_dir);
  if (config.detectors.empty()) {
    throw Error(ErrorKind::InvalidArgument, "config lists no detectors");
  }
  std::set<std::string> names;
  for (const auto& d : config.detectors) {
    if (d.name.empty() || !names.insert(d.name).second) {
      throw Error(ErrorKind::InvalidArgument, "detector names must be unique and non-empty");
    }
    if (!d.train_fresh && (!d.checkpoint || !std::filesystem::exists(*d.checkpoint))) {
      throw Error(ErrorKind::Io, "detector '" + d.name + "' has no readable checkpoint");
    }
  }

  Workspace ws;
  ws.config = config;
  std::vector<LabeledImage> images;
  if (config.dataset) {
    auto loaded = synth::load_dataset(*config.dataset, config.labeling, config.corpus.height,
                                      config.corpus.width);
    images = std::move(loaded.images);
    ws.skipped = std::move(loaded.skipped);
    say(options.log, "loaded " + std::to_string(images.size()) + " images from " +
                         config.dataset->string());
  } else {
    config.corpus.validate();
    images = synth::generate_corpus(config.corpus);
  }
  auto split = synth::split_corpus(images, config.train_fraction, config.split_seed);
  ws.train = std::move(split.train);
  ws.held_out = std::move(split.held_out);
  ws.attack_set = synth::balanced_subset(ws.held_out, config.attack_per_class);

  const grad::Shape shape{3, config.corpus.height, config.corpus.width};
  for (const auto& spec : config.detectors) {
    ws.detectors.push_back({spec.name, build_or_load(spec, shape, ws.train, options.log)});
  }
  if (options.save_checkpoints) {
    const auto dir = config.output_dir / "detectors";
    ensure_writable_dir(dir);
    for (const auto& d : ws.detectors) save_detector(dir / (d.name + ".ckpt"), d.detector);
  }
  return ws;
}

// --- attacks ----------------------------------------------------------------

namespace {

AttackConfig attack_named(const ExperimentConfig& c, const std::string& name,
                          const AttackGrid& grid, double epsilon) {
  return grid.at(epsilon, mix_seed(c.attack_seed, hash_string(name)));
}

std::string cache_key(const AttackConfig& c) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%s|%d|%.17g|%d|%llu", c.label().c_str(), c.steps,
                c.relative_step, c.random_start ? 1 : 0, static_cast<unsigned long long>(c.seed));
  return buf;
}

std::vector<AdversarialResult> attack_images(const Detector& d,
                                             std::span<const LabeledImage> images,
                                             const AttackConfig& config,
                                             const Detector* reference) {
  std::vector<AdversarialResult> out;
  if (config.epsilon == 0.0) {
    out.reserve(images.size());
    for (const auto& im : images) {
      AdversarialResult r;
      r.adversarial = im.pixels;
      r.original_id = im.id;
      r.label = im.label;
      r.config = config;
      r.pre_score = r.post_score = score(d, im.pixels);
      r.pre_prediction = r.post_prediction = label_for_score(r.pre_score, d.threshold());
      r.quality.psnr = 80.0;
      r.quality.ssim = 1.0;
      if (reference) r.quality.feature_distance = 0.0;
      out.push_back(std::move(r));
    }
    return out;
  }
  out = attack::attack_batch(d, images, config, {reference});
  for (std::size_t i = 0; i < out.size(); ++i) {
    auto& r = out[i];
    if (!r.flagged) continue;
    // Failed attacks keep the original image; score it so they count as misses.
    r.pre_score = score(d, images[i].pixels);
    r.post_score = score(d, r.adversarial);
    r.pre_prediction = label_for_score(r.pre_score, d.threshold());
    r.post_prediction = label_for_score(r.post_score, d.threshold());
    r.success = r.pre_prediction != r.post_prediction;
  }
  return out;
}

}  // namespace

AttackConfig attack_for(const Workspace& ws, std::size_t index, const AttackGrid& grid,
                        double epsilon) {
  return attack_named(ws.config, ws.detectors.at(index).name, grid, epsilon);
}

std::vector<AdversarialResult> attack_set(const Workspace& ws, std::size_t index,
                                          const AttackConfig& config) {
  return attack_images(ws.detectors.at(index).detector, ws.attack_set, config,
                       ws.quality_reference());
}

AttackCache::AttackCache(const ExperimentConfig& config) {
  for (const auto& g : config.transfer) {
    for (double e : g.epsilons) retained_.insert({g.method, g.norm, e});
  }
  const auto& p = config.degradations.attack;
  retained_.insert({p.method, p.norm, p.epsilon});
}

bool AttackCache::retains(const AttackConfig& c) const {
  return retained_.count({c.method, c.norm, c.epsilon}) > 0;
}

const std::vector<AdversarialResult>& AttackCache::get(const Workspace& ws, std::size_t index,
                                                       const AttackConfig& config) {
  const auto key = std::make_pair(index, cache_key(config));
  auto it = results_.find(key);
  if (it == results_.end()) {
    it = results_.emplace(key, attack_set(ws, index, config)).first;
  }
  return it->second;
}

void AttackCache::put(std::size_t index, const AttackConfig& config,
                      std::vector<AdversarialResult> results) {
  if (retains(config)) results_[{index, cache_key(config)}] = std::move(results);
}

// --- summaries --------------------------------------------------------------

namespace {

struct Scores {
  std::vector<metrics::ScoredSample> samples;
  std::vector<attack::Outcome> outcomes;
};

Scores score_inputs(const Detector& d, std::span<const LabeledImage> originals,
                    std::span<const Tensor> inputs) {
  Scores s;
  for (std::size_t i = 0; i < originals.size(); ++i) {
    const double pre = score(d, originals[i].pixels);
    const double post = score(d, inputs[i]);
    s.samples.push_back({post, originals[i].label, originals[i].id});
    s.outcomes.push_back({originals[i].label, label_for_score(pre, d.threshold()),
                          label_for_score(post, d.threshold())});
  }
  return s;
}

Scores scores_from(const std::vector<AdversarialResult>& results) {
  Scores s;
  for (const auto& r : results) {
    s.samples.push_back({r.post_score, r.label, r.original_id});
    s.outcomes.push_back(r.outcome());
  }
  return s;
}

std::size_t count(const std::vector<metrics::ScoredSample>& s, Label label) {
  return static_cast<std::size_t>(
      std::count_if(s.begin(), s.end(), [&](const auto& x) { return x.label == label; }));
}

void fill_detection(ReportRow& row, const std::vector<metrics::ScoredSample>& samples,
                    double threshold) {
  row.n = samples.size();
  if (samples.empty()) return;
  row.accuracy = metrics::accuracy_at_threshold(samples, threshold);
  const std::size_t reals = count(samples, Label::Real);
  if (reals > 0 && reals < samples.size()) row.auc = metrics::auc_roc(samples);
  if (reals >= 20 && reals < samples.size()) row.tpr_at_5fpr = metrics::tpr_at_fpr(samples, 0.05);
}

void fill_scores(ReportRow& row, const Scores& s, double threshold) {
  fill_detection(row, s.samples, threshold);
  row.asr = metrics::attack_success_rate(s.outcomes);
  row.asr_fake_to_real = metrics::fake_to_real_rate(s.outcomes);
}

void fill_quality(ReportRow& row, const std::vector<AdversarialResult>& results) {
  if (results.empty()) return;
  double p = 0.0, q = 0.0, f = 0.0;
  bool all_f = true;
  for (const auto& r : results) {
    p += r.quality.psnr;
    q += r.quality.ssim;
    if (r.quality.feature_distance) {
      f += *r.quality.feature_distance;
    } else {
      all_f = false;
    }
  }
  const double n = static_cast<double>(results.size());
  row.psnr = p / n;
  row.ssim = q / n;
  if (all_f) row.feature_distance = f / n;
}

ReportRow attack_row(const std::string& study, const std::string& detector,
                     const AttackConfig& c) {
  ReportRow row;
  row.study = study;
  row.detector = detector;
  row.attack = attack::to_string(c.method);
  row.norm = attack::to_string(c.norm);
  row.epsilon = c.epsilon;
  return row;
}

std::vector<Tensor> adversarials(const std::vector<AdversarialResult>& results) {
  std::vector<Tensor> out;
  out.reserve(results.size());
  for (const auto& r : results) out.push_back(r.adversarial);
  return out;
}

std::vector<Tensor> pixels(std::span<const LabeledImage> images) {
  std::vector<Tensor> out;
  out.reserve(images.size());
  for (const auto& im : images) out.push_back(im.pixels);
  return out;
}

std::size_t flagged_count(const std::vector<AdversarialResult>& results) {
  return static_cast<std::size_t>(
      std::count_if(results.begin(), results.end(), [](const auto& r) { return r.flagged; }));
}

}  // namespace

Provenance provenance_for(const ExperimentConfig& c) {
  Provenance p;
  p.config_hash = config_hash(c);
  p.global_seed = c.global_seed;
  p.corpus_seed = c.corpus.seed;
  p.attack_seed = c.attack_seed;
  p.noise_seed = c.noise_seed;
  return p;
}

// --- pipelines --------------------------------------------------------------

EvalReport run_benign(const Workspace& ws) {
  EvalReport report;
  report.provenance = provenance_for(ws.config);
  for (const auto& nd : ws.detectors) {
    ReportRow row;
    row.study = "benign";
    row.detector = nd.name;
    row.regime = "benign";
    const auto scores = score_all(nd.detector, ws.held_out);
    std::vector<metrics::ScoredSample> samples;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      samples.push_back({scores[i], ws.held_out[i].label, ws.held_out[i].id});
    }
    fill_detection(row, samples, nd.detector.threshold());
    report.rows.push_back(std::move(row));
  }
  if (!ws.skipped.empty()) {
    report.provenance.notes.push_back(std::to_string(ws.skipped.size()) +
                                      " dataset files were unreadable and skipped");
  }
  return report;
}

EvalReport run_whitebox(const Workspace& ws, AttackCache& cache, const ResultsObserver& observer) {
  EvalReport report;
  report.provenance = provenance_for(ws.config);
  std::size_t flagged = 0;
  const auto originals = pixels(ws.attack_set);
  for (std::size_t i = 0; i < ws.detectors.size(); ++i) {
    const auto& nd = ws.detectors[i];
    for (const auto& grid : ws.config.whitebox) {
      const double top = grid.epsilons.empty()
                             ? 0.0
                             : *std::max_element(grid.epsilons.begin(), grid.epsilons.end());
      for (double eps : grid.epsilons) {
        const auto config = attack_for(ws, i, grid, eps);
        std::vector<AdversarialResult> own;
        const std::vector<AdversarialResult>* results = nullptr;
        if (cache.retains(config)) {
          results = &cache.get(ws, i, config);
        } else {
          own = attack_set(ws, i, config);
          results = &own;
        }
        if (observer) observer(i, config, *results);
        flagged += flagged_count(*results);

        ReportRow row = attack_row("whitebox", nd.name, config);
        row.regime = "whitebox";
        fill_scores(row, scores_from(*results), nd.detector.threshold());
        fill_quality(row, *results);
        report.rows.push_back(std::move(row));

        if (eps == top && eps > 0.0 && !results->empty()) {
          report.spectra.push_back(
              {nd.name + "_" + config.label(),
               metrics::mean_perturbation_spectrum(originals, adversarials(*results))});
        }
      }
    }
  }
  if (flagged > 0) {
    report.provenance.notes.push_back(std::to_string(flagged) +
                                      " white-box attacks were flagged and kept the original image");
  }
  return report;
}

EvalReport run_transfer_matrix(const Workspace& ws, AttackCache& cache) {
  if (ws.detectors.size() < 2) {
    throw Error(ErrorKind::InvalidArgument, "a transfer matrix needs at least two detectors");
  }
  EvalReport report;
  report.provenance = provenance_for(ws.config);
  report.provenance.notes.push_back(
      "transfer matrix averages include the diagonal (white-box) cells");
  const std::size_t n = ws.detectors.size();
  for (const auto& grid : ws.config.transfer) {
    for (double eps : grid.epsilons) {
      TransferMatrix m;
      for (const auto& nd : ws.detectors) m.names.push_back(nd.name);
      m.asr.assign(n, std::vector<std::optional<double>>(n));
      for (std::size_t s = 0; s < n; ++s) {
        const auto config = attack_for(ws, s, grid, eps);
        if (s == 0) m.attack = config.label();
        const auto& results = cache.get(ws, s, config);
        const auto inputs = adversarials(results);
        for (std::size_t t = 0; t < n; ++t) {
          const auto& target = ws.detectors[t].detector;
          const Scores sc = s == t ? scores_from(results)
                                   : score_inputs(target, ws.attack_set, inputs);
          ReportRow row = attack_row("transfer", ws.detectors[t].name, config);
          row.source = ws.detectors[s].name;
          row.regime = s == t ? "whitebox" : "blackbox";
          fill_scores(row, sc, target.threshold());
          fill_quality(row, results);
          m.asr[s][t] = row.asr;
          report.rows.push_back(std::move(row));
        }
      }
      report.matrices.push_back(std::move(m));
    }
  }
  return report;
}

std::vector<degrade::DegradationConfig> degradation_points(const DegradationGrids& grids) {
  std::vector<degrade::DegradationConfig> points{degrade::DegradationConfig::identity()};
  for (int q : grids.jpeg_qualities) points.push_back(degrade::DegradationConfig::jpeg(q));
  for (double s : grids.blur_sigmas) points.push_back(degrade::DegradationConfig::blur(s));
  for (int l : grids.noise_levels) points.push_back(degrade::DegradationConfig::noise(l, 0));
  return points;
}

Tensor degrade_image(const ExperimentConfig& config, degrade::DegradationConfig point,
                     const Tensor& image, const std::string& id) {
  point.seed = mix_seed(config.noise_seed, hash_string(id));
  return degrade::apply(image, point);
}

EvalReport run_degradation_sweep(const Workspace& ws, AttackCache& cache) {
  const auto& grids = ws.config.degradations;
  const auto points = degradation_points(grids);
  const auto apply = [&](const degrade::DegradationConfig& p, std::span<const LabeledImage> ids,
                         std::span<const Tensor> images) {
    std::vector<Tensor> out;
    out.reserve(images.size());
    for (std::size_t i = 0; i < images.size(); ++i) {
      out.push_back(degrade_image(ws.config, p, images[i], ids[i].id));
    }
    return out;
  };
  const auto accuracy_row = [](ReportRow& row, const Detector& d,
                               std::span<const LabeledImage> originals,
                               std::span<const Tensor> inputs) {
    std::vector<metrics::ScoredSample> samples;
    for (std::size_t i = 0; i < originals.size(); ++i) {
      samples.push_back({score(d, inputs[i]), originals[i].label, originals[i].id});
    }
    fill_detection(row, samples, d.threshold());
  };

  EvalReport report;
  report.provenance = provenance_for(ws.config);
  report.provenance.notes.push_back(
      "degradations are applied after the attack; accuracies are per-detector means over the "
      "held-out split (benign) or the attacked subset (white-box, black-box)");
  if (grids.attacker_pre_degrade) {
    report.provenance.notes.push_back(
        "the attacker crafts against the degraded image before the upload degradation");
  }

  // Benign regime on the full held-out split.
  const auto held = pixels(ws.held_out);
  for (const auto& p : points) {
    const auto degraded = apply(p, ws.held_out, held);
    for (const auto& nd : ws.detectors) {
      ReportRow row;
      row.study = "degrade";
      row.detector = nd.name;
      row.degradation = p.label();
      row.regime = "benign";
      accuracy_row(row, nd.detector, ws.held_out, degraded);
      report.rows.push_back(std::move(row));
    }
  }

  // White-box and black-box regimes share each source's adversarial examples.
  const AttackGrid grid = grids.attack.grid();
  const std::size_t n = ws.detectors.size();
  for (std::size_t s = 0; s < n; ++s) {
    const auto config = attack_for(ws, s, grid, grids.attack.epsilon);
    const auto inputs = adversarials(cache.get(ws, s, config));
    for (const auto& p : points) {
      std::vector<Tensor> crafted;
      if (grids.attacker_pre_degrade && p.kind != degrade::Kind::Identity) {
        std::vector<LabeledImage> pre = ws.attack_set;
        for (auto& im : pre) im.pixels = degrade_image(ws.config, p, im.pixels, im.id);
        crafted = adversarials(attack_images(ws.detectors[s].detector, pre, config,
                                             ws.quality_reference()));
      }
      const auto degraded = apply(p, ws.attack_set, crafted.empty() ? inputs : crafted);
      ReportRow wb = attack_row("degrade", ws.detectors[s].name, config);
      wb.degradation = p.label();
      wb.regime = "whitebox";
      accuracy_row(wb, ws.detectors[s].detector, ws.attack_set, degraded);
      report.rows.push_back(std::move(wb));
      if (n < 2) continue;

      double sum = 0.0;
      for (std::size_t t = 0; t < n; ++t) {
        if (t == s) continue;
        ReportRow tmp;
        accuracy_row(tmp, ws.detectors[t].detector, ws.attack_set, degraded);
        sum += *tmp.accuracy;
      }
      ReportRow bb = attack_row("degrade", ws.detectors[s].name, config);
      bb.role = "source";
      bb.source = ws.detectors[s].name;
      bb.degradation = p.label();
      bb.regime = "blackbox";
      bb.n = ws.attack_set.size();
      bb.accuracy = sum / static_cast<double>(n - 1);
      report.rows.push_back(std::move(bb));
    }
  }
  return report;
}

EvalReport run_defense_eval(const Workspace& ws, AttackCache& cache,
                            std::vector<NamedDetector>* variants_out) {
  if (!ws.config.defense) {
    throw Error(ErrorKind::InvalidArgument, "config has no defense section");
  }
  const auto& settings = *ws.config.defense;
  if (settings.detector >= ws.detectors.size()) {
    throw Error(ErrorKind::InvalidArgument, "defense detector index out of range");
  }
  const auto& base = ws.detectors[settings.detector];
  if (base.detector.family() != Family::FeatureProbe) {
    throw Error(ErrorKind::WrongFamily, "the defense needs a feature_probe detector");
  }

  std::vector<NamedDetector> models{base};
  const auto pool = pixels(ws.train);
  for (std::size_t v = 0; v < settings.variants.size(); ++v) {
    const std::string name =
        base.name + "/" + (v < settings.names.size() ? settings.names[v] : "r" + std::to_string(v));
    Detector tuned = defense::robust_finetune(base.detector, pool, settings.variants[v]);
    if (settings.retrain_head) {
      const auto& m = base.detector.metadata();
      TrainOptions o;
      o.epochs = m.epochs;
      o.lr = m.lr;
      o.augment = m.augment;
      o.seed = m.train_seed;
      tuned = train_detector(std::move(tuned), ws.train, o);
    }
    models.push_back({name, std::move(tuned)});
  }

  EvalReport report;
  report.provenance = provenance_for(ws.config);
  report.provenance.notes.push_back(
      "defense variants fine-tune the extractor of " + base.name +
      " on the unlabeled training split; " +
      (settings.retrain_head ? "the linear head is retrained on the tuned features"
                             : "the linear head is unchanged"));
  const Detector* reference = ws.quality_reference();
  for (std::size_t k = 0; k < models.size(); ++k) {
    const auto& m = models[k];
    ReportRow clean;
    clean.study = "defense";
    clean.detector = m.name;
    clean.regime = "benign";
    std::vector<metrics::ScoredSample> samples;
    const auto scores = score_all(m.detector, ws.held_out);
    for (std::size_t i = 0; i < scores.size(); ++i) {
      samples.push_back({scores[i], ws.held_out[i].label, ws.held_out[i].id});
    }
    fill_detection(clean, samples, m.detector.threshold());
    report.rows.push_back(std::move(clean));

    for (const auto& grid : settings.attacks) {
      for (double eps : grid.epsilons) {
        const auto config = attack_named(ws.config, m.name, grid, eps);
        const auto results =
            k == 0 && cache.retains(config)
                ? cache.get(ws, settings.detector, config)
                : attack_images(m.detector, ws.attack_set, config, reference);
        ReportRow row = attack_row("defense", m.name, config);
        row.regime = "whitebox";
        fill_scores(row, scores_from(results), m.detector.threshold());
        fill_quality(row, results);
        report.rows.push_back(std::move(row));
      }
    }

    for (const auto& grid : ws.config.transfer) {
      for (double eps : grid.epsilons) {
        for (std::size_t s = 0; s < ws.detectors.size(); ++s) {
          if (s == settings.detector) continue;
          const auto config = attack_for(ws, s, grid, eps);
          const auto& results = cache.get(ws, s, config);
          ReportRow row = attack_row("defense", m.name, config);
          row.source = ws.detectors[s].name;
          row.regime = "blackbox";
          fill_scores(row, score_inputs(m.detector, ws.attack_set, adversarials(results)),
                      m.detector.threshold());
          fill_quality(row, results);
          report.rows.push_back(std::move(row));
        }
      }
    }
  }
  if (variants_out) *variants_out = std::vector<NamedDetector>(models.begin() + 1, models.end());
  return report;
}

}  // namespace aigi::harness
