#pragma once

// Evaluation reports: flat metric rows, run provenance and transfer
// matrices, written as CSV/JSON with atomic file replacement.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "aigi/metrics.hpp"
#include "json.hpp"

namespace aigi {

inline constexpr const char* kToolkitVersion = "0.1.0";

/// One record per (study, detector, source, attack, norm, epsilon,
/// degradation, regime). Unmeasured metrics stay empty.
struct ReportRow {
  std::string study;   // benign, whitebox, transfer, degrade, defense
  std::string detector;
  std::string role = "target";  // "source" for per-source black-box aggregates
  std::string source;           // surrogate detector; empty for white-box rows
  std::string attack = "none";
  std::string norm;
  double epsilon = 0.0;
  std::string degradation = "identity";
  std::string regime;  // benign, whitebox, blackbox
  std::size_t n = 0;

  std::optional<double> accuracy;
  std::optional<double> auc;
  std::optional<double> tpr_at_5fpr;
  std::optional<double> asr;
  std::optional<double> asr_fake_to_real;
  std::optional<double> psnr;
  std::optional<double> ssim;
  std::optional<double> feature_distance;

  bool operator==(const ReportRow&) const = default;
};

struct Provenance {
  std::string version = kToolkitVersion;
  std::uint64_t config_hash = 0;
  std::uint64_t global_seed = 0;
  std::uint64_t corpus_seed = 0;
  std::uint64_t attack_seed = 0;
  std::uint64_t noise_seed = 0;
  std::vector<std::string> notes;
  std::string timestamp;  // JSON only

  bool operator==(const Provenance&) const = default;
};

/// Square ASR matrix over `names` (rows: source, columns: target) for one
/// attack setting. Empty cells had no correctly classified inputs.
struct TransferMatrix {
  std::string attack;  // AttackConfig label
  std::vector<std::string> names;
  std::vector<std::vector<std::optional<double>>> asr;

  /// Mean over the defined cells of a row, a column, or the whole matrix.
  /// The diagonal is included.
  std::optional<double> row_mean(std::size_t i) const;
  std::optional<double> column_mean(std::size_t j) const;
  std::optional<double> overall_mean() const;

  bool operator==(const TransferMatrix&) const = default;
};

struct SpectrumArtifact {
  std::string name;
  metrics::PerturbationSpectrum spectrum;
};

struct EvalReport {
  std::vector<ReportRow> rows;
  Provenance provenance;
  std::vector<TransferMatrix> matrices;
  std::vector<SpectrumArtifact> spectra;  // written as PGM files, not part of the JSON

  /// Appends the rows, matrices, spectra and notes of `other`.
  void append(const EvalReport& other);
  /// Compares rows, provenance and matrices.
  bool operator==(const EvalReport& other) const;
};

/// Throws InvalidArgument when a metric lies outside its range.
void validate_report(const EvalReport& report);

std::string to_csv(const EvalReport& report);
/// (n+1) x (n+1) grid: n sources and n targets plus the average row, the
/// average column and the overall-average cell.
std::string matrix_csv(const TransferMatrix& matrix);

nlohmann::json to_json(const EvalReport& report);
EvalReport report_from_json(const nlohmann::json& j);

struct ReportFormats {
  bool csv = true;
  bool json = true;
  bool matrices = true;
  bool spectra = true;
};

/// Writes <stem>.csv, <stem>.json, matrix_<attack>.csv and the spectra into `dir`.
void emit_report(const EvalReport& report, const std::filesystem::path& dir,
                 const std::string& stem = "report", const ReportFormats& formats = {});

/// <name>_spectrum.pgm, <name>_perturbation.pgm and <name>_scale.json with
/// the value ranges mapped onto the 16-bit grey levels.
void emit_spectrum(const metrics::PerturbationSpectrum& spectrum,
                   const std::filesystem::path& dir, const std::string& name);

}  // namespace aigi
