#include "avsgs/metrics.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <ostream>
#include <sstream>

#include "avsgs/wav.hpp"

namespace avsgs::metrics {
namespace {

using json = nlohmann::json;

double capped_db(double num, double den) {
  if (num <= 0.0) return -kDbCap;
  if (den <= 0.0) return kDbCap;
  return std::clamp(10.0 * std::log10(num / den), -kDbCap, kDbCap);
}

/// Stacks the references as columns and validates them once per call set.
Eigen::MatrixXd reference_matrix(
    const std::vector<Eigen::VectorXd>& references) {
  require(!references.empty(), "bss_eval: no references");
  const Eigen::Index n = references[0].size();
  require(n > 0, "bss_eval: empty reference signal");
  Eigen::MatrixXd r(n, static_cast<Eigen::Index>(references.size()));
  for (std::size_t j = 0; j < references.size(); ++j) {
    require(references[j].size() == n,
            "bss_eval: reference lengths differ");
    require(references[j].squaredNorm() > 0.0,
            "bss_eval: reference " + std::to_string(j) + " is silent");
    r.col(static_cast<Eigen::Index>(j)) = references[j];
  }
  return r;
}

SourceMetrics score(const Decomposition& d) {
  const double target = d.s_target.squaredNorm();
  const double interf = d.e_interf.squaredNorm();
  const double artif = d.e_artif.squaredNorm();
  SourceMetrics m;
  m.sdr = capped_db(target, (d.e_interf + d.e_artif).squaredNorm());
  m.sir = capped_db(target, interf);
  m.sar = capped_db((d.s_target + d.e_interf).squaredNorm(), artif);
  return m;
}

}  // namespace

Decomposition decompose(const Eigen::VectorXd& estimate,
                        const std::vector<Eigen::VectorXd>& references,
                        int target_index) {
  const Eigen::MatrixXd r = reference_matrix(references);
  require(estimate.size() == r.rows(),
          "bss_eval: estimate length differs from references");
  require(target_index >= 0 && target_index < r.cols(),
          "bss_eval: target index out of range");

  // Projection onto the span of all references via the normal equations;
  // a singular Gram matrix means the references are linearly dependent.
  const Eigen::MatrixXd gram = r.transpose() * r;
  Eigen::FullPivLU<Eigen::MatrixXd> lu(gram);
  require(lu.isInvertible(), "bss_eval: references are linearly dependent");
  const Eigen::VectorXd coeffs = lu.solve(r.transpose() * estimate);
  const Eigen::VectorXd span_part = r * coeffs;

  const Eigen::VectorXd& ref = references[target_index];
  Decomposition d;
  d.s_target = (estimate.dot(ref) / ref.squaredNorm()) * ref;
  d.e_interf = span_part - d.s_target;
  d.e_artif = estimate - span_part;
  return d;
}

EvalResult bss_eval(const std::vector<Eigen::VectorXd>& references,
                    const std::vector<Eigen::VectorXd>& estimates) {
  require(references.size() == estimates.size(),
          "bss_eval: reference and estimate counts differ");
  require(!references.empty(), "bss_eval: no references");
  const int count = static_cast<int>(references.size());
  const Eigen::Index n = references.empty() ? 0 : references[0].size();
  for (const auto& e : estimates)
    require(e.size() == n, "bss_eval: estimate length differs from references");

  // Pre-score every estimate against every reference, then pick the
  // assignment with the best total SDR by exhaustive search.
  std::vector<std::vector<SourceMetrics>> table(count);
  for (int i = 0; i < count; ++i) {
    table[i].resize(count);
    for (int j = 0; j < count; ++j)
      table[i][j] = score(decompose(estimates[i], references, j));
  }

  std::vector<int> perm(count);
  std::iota(perm.begin(), perm.end(), 0);
  std::vector<int> best = perm;
  double best_sum = -std::numeric_limits<double>::infinity();
  do {
    double sum = 0.0;
    for (int j = 0; j < count; ++j) sum += table[perm[j]][j].sdr;
    if (sum > best_sum) {
      best_sum = sum;
      best = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));

  EvalResult out;
  out.assignment = best;
  out.per_source.resize(count);
  for (int j = 0; j < count; ++j) {
    out.per_source[j] = table[best[j]][j];
    out.mean_sdr += out.per_source[j].sdr;
    out.mean_sir += out.per_source[j].sir;
    out.mean_sar += out.per_source[j].sar;
  }
  out.mean_sdr /= count;
  out.mean_sir /= count;
  out.mean_sar /= count;
  return out;
}

std::vector<EvalEntry> load_eval_manifest(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), "cannot open manifest: " + path);
  std::vector<EvalEntry> entries;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw Error(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
    try {
      EvalEntry entry;
      entry.mixture_wav = j.at("mixture_wav").get<std::string>();
      entry.reference_wavs =
          j.at("reference_wavs").get<std::vector<std::string>>();
      entry.detection_file = j.at("detection_file").get<std::string>();
      entry.principal_classes =
          j.at("principal_classes").get<std::vector<std::string>>();
      require(!entry.reference_wavs.empty(), "no reference wavs");
      require(!entry.principal_classes.empty(), "no principal classes");
      entries.push_back(std::move(entry));
    } catch (const json::exception& e) {
      throw Error(path + ":" + std::to_string(line_no) + ": " + e.what());
    } catch (const Error& e) {
      throw Error(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return entries;
}

EvalReport evaluate_manifest(const std::vector<EvalEntry>& entries,
                             const SeparateFn& separate,
                             std::ostream* warnings) {
  EvalReport report;
  auto warn = [&](const std::string& msg) {
    ++report.skipped;
    if (warnings) *warnings << "warning: " << msg << "\n";
  };

  for (const auto& entry : entries) {
    std::vector<std::string> missing;
    auto check = [&](const std::string& p) {
      if (!std::filesystem::exists(p)) missing.push_back(p);
    };
    check(entry.mixture_wav);
    check(entry.detection_file);
    for (const auto& p : entry.reference_wavs) check(p);
    if (!missing.empty()) {
      warn("skipping " + entry.mixture_wav + ": missing " + missing[0]);
      continue;
    }

    std::vector<Eigen::VectorXd> references;
    for (const auto& p : entry.reference_wavs) {
      const spectro::Waveform wf = read_wav(p);
      references.emplace_back(Eigen::Map<const Eigen::VectorXd>(
          wf.samples.data(), static_cast<Eigen::Index>(wf.samples.size())));
    }

    std::vector<Eigen::VectorXd> estimates = separate(entry);
    if (estimates.size() < references.size()) {
      warn("skipping " + entry.mixture_wav + ": separation produced " +
           std::to_string(estimates.size()) + " estimates for " +
           std::to_string(references.size()) + " references");
      continue;
    }
    estimates.resize(references.size());  // drop the background estimate

    Eigen::Index common = references[0].size();
    for (const auto& v : references) common = std::min(common, v.size());
    for (const auto& v : estimates) common = std::min(common, v.size());
    if (common <= 0) {
      warn("skipping " + entry.mixture_wav + ": empty signal");
      continue;
    }
    for (auto& v : references) v.conservativeResize(common);
    for (auto& v : estimates) v.conservativeResize(common);

    EvalRow row;
    row.mixture_wav = entry.mixture_wav;
    row.result = bss_eval(references, estimates);
    report.mean_sdr += row.result.mean_sdr;
    report.mean_sir += row.result.mean_sir;
    report.mean_sar += row.result.mean_sar;
    report.rows.push_back(std::move(row));
    ++report.evaluated;
  }

  if (report.evaluated > 0) {
    report.mean_sdr /= report.evaluated;
    report.mean_sir /= report.evaluated;
    report.mean_sar /= report.evaluated;
  }
  return report;
}

void write_eval_report_csv(const EvalReport& report,
                           const std::string& path) {
  std::ofstream out(path);
  require(out.good(), "cannot write report: " + path);
  out << "mixture,source,sdr_db,sir_db,sar_db\n";
  std::ostringstream body;
  body.precision(10);
  for (const auto& row : report.rows)
    for (std::size_t j = 0; j < row.result.per_source.size(); ++j) {
      const SourceMetrics& m = row.result.per_source[j];
      body << row.mixture_wav << "," << j << "," << m.sdr << "," << m.sir
           << "," << m.sar << "\n";
    }
  body << "summary(evaluated=" << report.evaluated
       << ";skipped=" << report.skipped << "),mean," << report.mean_sdr
       << "," << report.mean_sir << "," << report.mean_sar << "\n";
  out << body.str();
  require(out.good(), "write failed: " + path);
}

}  // namespace avsgs::metrics
