#include "aigi/report.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "aigi/error.hpp"
#include "aigi/fsutil.hpp"
#include "aigi/image_io.hpp"

namespace aigi {

using nlohmann::json;

namespace {

std::optional<double> mean_of(const std::vector<std::optional<double>>& xs) {
  double s = 0.0;
  std::size_t n = 0;
  for (const auto& x : xs) {
    if (x) {
      s += *x;
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  return s / static_cast<double>(n);
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::string fmt(const std::optional<double>& v) { return v ? fmt(*v) : std::string(); }

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string matrix_file_name(const std::string& attack) {
  std::string s = "matrix_";
  for (char c : attack) s += (std::isalnum(static_cast<unsigned char>(c)) || c == '.') ? c : '_';
  return s + ".csv";
}

json opt_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> opt_from(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<double>();
}

}  // namespace

std::optional<double> TransferMatrix::row_mean(std::size_t i) const { return mean_of(asr.at(i)); }

std::optional<double> TransferMatrix::column_mean(std::size_t j) const {
  std::vector<std::optional<double>> col;
  for (const auto& row : asr) col.push_back(row.at(j));
  return mean_of(col);
}

std::optional<double> TransferMatrix::overall_mean() const {
  std::vector<std::optional<double>> all;
  for (const auto& row : asr) all.insert(all.end(), row.begin(), row.end());
  return mean_of(all);
}

void EvalReport::append(const EvalReport& other) {
  rows.insert(rows.end(), other.rows.begin(), other.rows.end());
  matrices.insert(matrices.end(), other.matrices.begin(), other.matrices.end());
  provenance.notes.insert(provenance.notes.end(), other.provenance.notes.begin(),
                          other.provenance.notes.end());
  spectra.insert(spectra.end(), other.spectra.begin(), other.spectra.end());
}

bool EvalReport::operator==(const EvalReport& other) const {
  return rows == other.rows && provenance == other.provenance && matrices == other.matrices;
}

void validate_report(const EvalReport& report) {
  const auto check = [](const std::optional<double>& v, double lo, double hi, const char* what,
                        const ReportRow& r) {
    if (v && !(*v >= lo && *v <= hi)) {
      throw Error(ErrorKind::InvalidArgument, std::string(what) + " = " + fmt(*v) +
                                                  " out of range in row for " + r.detector);
    }
  };
  for (const auto& r : report.rows) {
    check(r.accuracy, 0.0, 1.0, "accuracy", r);
    check(r.auc, 0.0, 1.0, "auc", r);
    check(r.tpr_at_5fpr, 0.0, 1.0, "tpr_at_5fpr", r);
    check(r.asr, 0.0, 1.0, "asr", r);
    check(r.asr_fake_to_real, 0.0, 1.0, "asr_fake_to_real", r);
    check(r.psnr, 0.0, 80.0, "psnr", r);
    check(r.ssim, 0.0, 1.0, "ssim", r);
    check(r.feature_distance, 0.0, HUGE_VAL, "feature_distance", r);
  }
  for (const auto& m : report.matrices) {
    if (m.asr.size() != m.names.size()) {
      throw Error(ErrorKind::ShapeMismatch, "transfer matrix rows do not match its names");
    }
    for (const auto& row : m.asr) {
      if (row.size() != m.names.size()) {
        throw Error(ErrorKind::ShapeMismatch, "transfer matrix is not square");
      }
    }
  }
}

std::string to_csv(const EvalReport& report) {
  std::ostringstream out;
  out << "study,detector,role,source,attack,norm,epsilon,degradation,regime,n,accuracy,auc,"
         "tpr_at_5fpr,asr,asr_fake_to_real,psnr,ssim,feature_distance\n";
  for (const auto& r : report.rows) {
    out << csv_field(r.study) << ',' << csv_field(r.detector) << ',' << r.role << ','
        << csv_field(r.source) << ',' << r.attack << ',' << r.norm << ',' << fmt(r.epsilon) << ','
        << r.degradation << ',' << r.regime << ',' << r.n << ',' << fmt(r.accuracy) << ','
        << fmt(r.auc) << ',' << fmt(r.tpr_at_5fpr) << ',' << fmt(r.asr) << ','
        << fmt(r.asr_fake_to_real) << ',' << fmt(r.psnr) << ',' << fmt(r.ssim) << ','
        << fmt(r.feature_distance) << '\n';
  }
  return out.str();
}

std::string matrix_csv(const TransferMatrix& m) {
  std::ostringstream out;
  out << "source\\target";
  for (const auto& n : m.names) out << ',' << csv_field(n);
  out << ",mean\n";
  for (std::size_t i = 0; i < m.names.size(); ++i) {
    out << csv_field(m.names[i]);
    for (const auto& v : m.asr[i]) out << ',' << fmt(v);
    out << ',' << fmt(m.row_mean(i)) << '\n';
  }
  out << "mean";
  for (std::size_t j = 0; j < m.names.size(); ++j) out << ',' << fmt(m.column_mean(j));
  out << ',' << fmt(m.overall_mean()) << '\n';
  return out.str();
}

json to_json(const EvalReport& report) {
  json rows = json::array();
  for (const auto& r : report.rows) {
    rows.push_back({{"study", r.study},
                    {"detector", r.detector},
                    {"role", r.role},
                    {"source", r.source},
                    {"attack", r.attack},
                    {"norm", r.norm},
                    {"epsilon", r.epsilon},
                    {"degradation", r.degradation},
                    {"regime", r.regime},
                    {"n", r.n},
                    {"accuracy", opt_json(r.accuracy)},
                    {"auc", opt_json(r.auc)},
                    {"tpr_at_5fpr", opt_json(r.tpr_at_5fpr)},
                    {"asr", opt_json(r.asr)},
                    {"asr_fake_to_real", opt_json(r.asr_fake_to_real)},
                    {"psnr", opt_json(r.psnr)},
                    {"ssim", opt_json(r.ssim)},
                    {"feature_distance", opt_json(r.feature_distance)}});
  }
  json matrices = json::array();
  for (const auto& m : report.matrices) {
    json cells = json::array();
    for (const auto& row : m.asr) {
      json jr = json::array();
      for (const auto& v : row) jr.push_back(opt_json(v));
      cells.push_back(std::move(jr));
    }
    matrices.push_back({{"attack", m.attack}, {"names", m.names}, {"asr", std::move(cells)}});
  }
  const auto& p = report.provenance;
  return {{"provenance",
           {{"version", p.version},
            {"config_hash", p.config_hash},
            {"global_seed", p.global_seed},
            {"corpus_seed", p.corpus_seed},
            {"attack_seed", p.attack_seed},
            {"noise_seed", p.noise_seed},
            {"notes", p.notes},
            {"timestamp", p.timestamp}}},
          {"rows", std::move(rows)},
          {"matrices", std::move(matrices)}};
}

EvalReport report_from_json(const json& j) {
  try {
    EvalReport report;
    const auto& p = j.at("provenance");
    report.provenance.version = p.at("version").get<std::string>();
    report.provenance.config_hash = p.at("config_hash").get<std::uint64_t>();
    report.provenance.global_seed = p.at("global_seed").get<std::uint64_t>();
    report.provenance.corpus_seed = p.at("corpus_seed").get<std::uint64_t>();
    report.provenance.attack_seed = p.at("attack_seed").get<std::uint64_t>();
    report.provenance.noise_seed = p.at("noise_seed").get<std::uint64_t>();
    report.provenance.notes = p.at("notes").get<std::vector<std::string>>();
    report.provenance.timestamp = p.at("timestamp").get<std::string>();
    for (const auto& jr : j.at("rows")) {
      ReportRow r;
      r.study = jr.at("study").get<std::string>();
      r.detector = jr.at("detector").get<std::string>();
      r.role = jr.at("role").get<std::string>();
      r.source = jr.at("source").get<std::string>();
      r.attack = jr.at("attack").get<std::string>();
      r.norm = jr.at("norm").get<std::string>();
      r.epsilon = jr.at("epsilon").get<double>();
      r.degradation = jr.at("degradation").get<std::string>();
      r.regime = jr.at("regime").get<std::string>();
      r.n = jr.at("n").get<std::size_t>();
      r.accuracy = opt_from(jr, "accuracy");
      r.auc = opt_from(jr, "auc");
      r.tpr_at_5fpr = opt_from(jr, "tpr_at_5fpr");
      r.asr = opt_from(jr, "asr");
      r.asr_fake_to_real = opt_from(jr, "asr_fake_to_real");
      r.psnr = opt_from(jr, "psnr");
      r.ssim = opt_from(jr, "ssim");
      r.feature_distance = opt_from(jr, "feature_distance");
      report.rows.push_back(std::move(r));
    }
    for (const auto& jm : j.at("matrices")) {
      TransferMatrix m;
      m.attack = jm.at("attack").get<std::string>();
      m.names = jm.at("names").get<std::vector<std::string>>();
      for (const auto& jr : jm.at("asr")) {
        std::vector<std::optional<double>> row;
        for (const auto& v : jr) {
          row.push_back(v.is_null() ? std::nullopt : std::optional<double>(v.get<double>()));
        }
        m.asr.push_back(std::move(row));
      }
      report.matrices.push_back(std::move(m));
    }
    return report;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Format, std::string("malformed report: ") + e.what());
  }
}

void emit_report(const EvalReport& report, const std::filesystem::path& dir,
                 const std::string& stem, const ReportFormats& formats) {
  validate_report(report);
  ensure_writable_dir(dir);
  if (formats.csv) write_file_atomic(dir / (stem + ".csv"), to_csv(report));
  if (formats.json) write_file_atomic(dir / (stem + ".json"), to_json(report).dump(2) + "\n");
  if (formats.matrices) {
    for (const auto& m : report.matrices) {
      write_file_atomic(dir / matrix_file_name(m.attack), matrix_csv(m));
    }
  }
  if (formats.spectra) {
    for (const auto& s : report.spectra) emit_spectrum(s.spectrum, dir / "spectra", s.name);
  }
}

void emit_spectrum(const metrics::PerturbationSpectrum& s, const std::filesystem::path& dir,
                   const std::string& name) {
  ensure_writable_dir(dir);
  const auto range = [](const grad::Tensor& t) {
    double lo = HUGE_VAL, hi = -HUGE_VAL;
    for (std::size_t i = 0; i < t.size(); ++i) {
      lo = std::min(lo, t[i]);
      hi = std::max(hi, t[i]);
    }
    if (!(hi > lo)) hi = lo + 1.0;
    return std::pair{lo, hi};
  };
  const auto [slo, shi] = range(s.spectrum.magnitudes);
  const auto [plo, phi] = range(s.mean_perturbation);
  write_pgm16(dir / (name + "_spectrum.pgm"), s.spectrum.magnitudes, slo, shi);
  write_pgm16(dir / (name + "_perturbation.pgm"), s.mean_perturbation, plo, phi);
  const json scale = {
      {"spectrum", {{"lo", slo}, {"hi", shi}, {"centered", s.spectrum.centered},
                    {"log1p", s.spectrum.log_scaled}}},
      {"perturbation", {{"lo", plo}, {"hi", phi}}},
      {"grey_levels", 65535}};
  write_file_atomic(dir / (name + "_scale.json"), scale.dump(2) + "\n");
}

}  // namespace aigi
