#pragma once

#include <Eigen/Dense>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "avsgs/common.hpp"

namespace avsgs::metrics {

/// Hard cap applied to every ratio in dB so exact reconstructions (zero
/// error energy) still produce finite table entries.
inline constexpr double kDbCap = 100.0;

/// Energy decomposition of one estimate against a reference set: the part
/// explained by the matched reference, the part explained by the other
/// references, and whatever falls outside the reference span entirely.
struct Decomposition {
  Eigen::VectorXd s_target;
  Eigen::VectorXd e_interf;
  Eigen::VectorXd e_artif;
};

/// Per-source separation quality in dB, each capped to [-kDbCap, kDbCap].
struct SourceMetrics {
  double sdr = 0.0;
  double sir = 0.0;
  double sar = 0.0;
};

struct EvalResult {
  /// Indexed by reference: per_source[j] scores the estimate assigned to
  /// reference j.
  std::vector<SourceMetrics> per_source;
  /// assignment[j] = index of the estimate matched to reference j.
  std::vector<int> assignment;
  double mean_sdr = 0.0;
  double mean_sir = 0.0;
  double mean_sar = 0.0;
};

/// Splits `estimate` into target / interference / artifact components by
/// projecting onto the matched reference and onto the span of all
/// references. The three parts sum back to the estimate exactly.
Decomposition decompose(const Eigen::VectorXd& estimate,
                        const std::vector<Eigen::VectorXd>& references,
                        int target_index);

/// Scores `estimates` against `references` (equal counts and lengths),
/// choosing the estimate-to-reference assignment with the highest total SDR
/// by exhaustive search. References must be nonzero and linearly
/// independent.
EvalResult bss_eval(const std::vector<Eigen::VectorXd>& references,
                    const std::vector<Eigen::VectorXd>& estimates);

/// One line of the evaluation manifest.
struct EvalEntry {
  std::string mixture_wav;
  std::vector<std::string> reference_wavs;
  std::string detection_file;
  std::vector<std::string> principal_classes;
};

/// Reads a JSON-lines manifest of evaluation entries. Errors carry the
/// offending line number.
std::vector<EvalEntry> load_eval_manifest(const std::string& path);

struct EvalRow {
  std::string mixture_wav;
  EvalResult result;
};

struct EvalReport {
  std::vector<EvalRow> rows;
  int evaluated = 0;
  int skipped = 0;
  double mean_sdr = 0.0;
  double mean_sir = 0.0;
  double mean_sar = 0.0;
};

/// Produces the estimated source waveforms for one manifest entry. The
/// trailing entries beyond the reference count (the background estimate)
/// are ignored by the evaluator.
using SeparateFn =
    std::function<std::vector<Eigen::VectorXd>(const EvalEntry&)>;

/// Runs `separate` over every entry whose assets exist on disk, scores the
/// results, and aggregates means over the evaluated entries. Entries with
/// missing files are skipped with a warning written to `warnings` (when
/// given) and counted in the report. Estimates and references are trimmed
/// to their common length before scoring.
EvalReport evaluate_manifest(const std::vector<EvalEntry>& entries,
                             const SeparateFn& separate,
                             std::ostream* warnings = nullptr);

/// Writes one CSV row per evaluated entry plus a trailing summary row.
void write_eval_report_csv(const EvalReport& report,
                           const std::string& path);

}  // namespace avsgs::metrics
