#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <fstream>
#include <sstream>
#include <vector>

#include "avsgs/metrics.hpp"
#include "avsgs/rng.hpp"
#include "avsgs/wav.hpp"
#include "test_util.hpp"

using namespace avsgs;
using Eigen::VectorXd;

namespace {

VectorXd tone(double freq, int n, double amp = 0.5, double phase = 0.0) {
  const spectro::Waveform wf = testutil::sine(freq, n, amp, phase);
  return Eigen::Map<const VectorXd>(wf.samples.data(), n);
}

VectorXd random_vec(int n, std::uint64_t seed) {
  Rng rng(seed);
  VectorXd v(n);
  for (int i = 0; i < n; ++i) v(i) = rng.normal();
  return v;
}

/// Removes the component of v along each column of refs in turn (the
/// references here are orthogonal, so one pass suffices).
VectorXd orthogonalize(VectorXd v, const std::vector<VectorXd>& refs) {
  for (const auto& r : refs) v -= (v.dot(r) / r.squaredNorm()) * r;
  return v;
}

}  // namespace

TEST_SUITE("metrics") {

TEST_CASE("an exact estimate hits the cap on all three scores") {
  const VectorXd a = tone(440.0, 4096);
  const VectorXd b = tone(523.25, 4096);
  const metrics::EvalResult r = metrics::bss_eval({a, b}, {a, b});
  for (const auto& m : r.per_source) {
    CHECK(m.sdr == metrics::kDbCap);
    CHECK(m.sir == metrics::kDbCap);
    CHECK(m.sar == metrics::kDbCap);
  }
  CHECK(r.mean_sdr == metrics::kDbCap);
}

TEST_CASE("equal-energy interference scores zero dB SIR") {
  // Orthogonal unit-energy references; the first estimate carries both.
  const int n = 1000;
  VectorXd r1 = VectorXd::Zero(n), r2 = VectorXd::Zero(n);
  for (int i = 0; i < n / 2; ++i) r1(i) = 1.0;
  for (int i = n / 2; i < n; ++i) r2(i) = 1.0;
  r1 /= r1.norm();
  r2 /= r2.norm();
  const metrics::EvalResult r =
      metrics::bss_eval({r1, r2}, {VectorXd(r1 + r2), r2});
  CHECK(std::abs(r.per_source[0].sir) <= 0.1);
  CHECK(std::abs(r.per_source[0].sdr) <= 0.1);
  // Everything lives inside the reference span, so no artifacts.
  CHECK(r.per_source[0].sar == metrics::kDbCap);
  CHECK(r.per_source[1].sdr == metrics::kDbCap);
}

TEST_CASE("orthogonal noise at one percent energy scores 20 dB SAR") {
  const int n = 2048;
  VectorXd ref = tone(311.1, n);
  VectorXd noise = orthogonalize(random_vec(n, 5), {ref});
  noise *= std::sqrt(1e-2 * ref.squaredNorm() / noise.squaredNorm());
  const metrics::EvalResult r =
      metrics::bss_eval({ref}, {VectorXd(ref + noise)});
  CHECK(std::abs(r.per_source[0].sar - 20.0) <= 0.1);
  CHECK(std::abs(r.per_source[0].sdr - 20.0) <= 0.1);
  CHECK(r.per_source[0].sir == metrics::kDbCap);
}

TEST_CASE("the three components reassemble the estimate exactly") {
  const int n = 300;
  std::vector<VectorXd> refs = {random_vec(n, 1), random_vec(n, 2),
                                random_vec(n, 3)};
  for (std::uint64_t seed = 10; seed < 16; ++seed) {
    const VectorXd est = random_vec(n, seed);
    for (int j = 0; j < 3; ++j) {
      const metrics::Decomposition d = metrics::decompose(est, refs, j);
      const VectorXd sum = d.s_target + d.e_interf + d.e_artif;
      CHECK((sum - est).norm() / est.norm() <= 1e-9);
      // The artifact component lies outside the reference span.
      for (const auto& r : refs)
        CHECK(std::abs(d.e_artif.dot(r)) / (r.norm() * est.norm()) <= 1e-9);
    }
  }
}

TEST_CASE("degenerate references are rejected") {
  const VectorXd a = tone(200.0, 512);
  const VectorXd zero = VectorXd::Zero(512);
  CHECK_THROWS_AS(metrics::bss_eval({a, zero}, {a, a}), Error);
  CHECK_THROWS_AS(metrics::bss_eval({a, VectorXd(2.0 * a)}, {a, a}), Error);
  CHECK_THROWS_AS(metrics::bss_eval({a}, {a, a}), Error);
  CHECK_THROWS_AS(metrics::bss_eval({a}, {tone(200.0, 100)}), Error);
  CHECK_THROWS_AS(metrics::bss_eval({}, {}), Error);
}

TEST_CASE("permuting the estimates leaves the table unchanged") {
  const int n = 600;
  std::vector<VectorXd> refs = {tone(180.0, n), tone(421.0, n)};
  std::vector<VectorXd> ests = {VectorXd(refs[0] + 0.2 * refs[1]),
                                VectorXd(refs[1] + random_vec(n, 7) * 0.05)};
  const metrics::EvalResult fwd = metrics::bss_eval(refs, ests);
  const metrics::EvalResult rev =
      metrics::bss_eval(refs, {ests[1], ests[0]});
  for (int j = 0; j < 2; ++j) {
    CHECK(fwd.per_source[j].sdr == rev.per_source[j].sdr);
    CHECK(fwd.per_source[j].sir == rev.per_source[j].sir);
    CHECK(fwd.per_source[j].sar == rev.per_source[j].sar);
  }
  CHECK(fwd.assignment[0] != rev.assignment[0]);
}

TEST_CASE("two-source assignment matches brute force") {
  const int n = 400;
  std::vector<VectorXd> refs = {random_vec(n, 21), random_vec(n, 22)};
  std::vector<VectorXd> ests = {random_vec(n, 23), random_vec(n, 24)};
  auto sdr_of = [&](int est, int ref) {
    const metrics::Decomposition d = metrics::decompose(ests[est], refs, ref);
    const double num = d.s_target.squaredNorm();
    const double den = (d.e_interf + d.e_artif).squaredNorm();
    return 10.0 * std::log10(num / den);
  };
  const double straight = sdr_of(0, 0) + sdr_of(1, 1);
  const double crossed = sdr_of(1, 0) + sdr_of(0, 1);
  const metrics::EvalResult r = metrics::bss_eval(refs, ests);
  const double chosen =
      r.per_source[0].sdr + r.per_source[1].sdr;
  CHECK(chosen == doctest::Approx(std::max(straight, crossed)).epsilon(1e-12));
}

TEST_CASE("positive rescaling without artifacts keeps the SDR") {
  const int n = 512;
  std::vector<VectorXd> refs = {tone(150.0, n), tone(390.0, n)};
  const VectorXd est = refs[0] + 0.3 * refs[1];  // inside the span
  const metrics::EvalResult a = metrics::bss_eval(refs, {est, refs[1]});
  const metrics::EvalResult b =
      metrics::bss_eval(refs, {VectorXd(3.0 * est), refs[1]});
  CHECK(a.per_source[0].sdr ==
        doctest::Approx(b.per_source[0].sdr).epsilon(1e-12));
}

TEST_CASE("the manifest loader round-trips entries with line errors") {
  testutil::TempDir dir("metrics");
  const std::string path = dir.file("manifest.jsonl");
  {
    std::ofstream out(path);
    out << R"({"mixture_wav":"m0.wav","reference_wavs":["a.wav","b.wav"],)"
        << R"("detection_file":"d0.jsonl","principal_classes":["dog","bell"]})"
        << "\n\n";
    out << R"({"mixture_wav":"m1.wav","reference_wavs":["c.wav"],)"
        << R"("detection_file":"d1.jsonl","principal_classes":["water"]})"
        << "\n";
  }
  const auto entries = metrics::load_eval_manifest(path);
  REQUIRE(entries.size() == 2);
  CHECK(entries[0].mixture_wav == "m0.wav");
  CHECK(entries[0].reference_wavs.size() == 2);
  CHECK(entries[1].principal_classes[0] == "water");

  const std::string bad = dir.file("bad.jsonl");
  {
    std::ofstream out(bad);
    out << R"({"mixture_wav":"m.wav"})" << "\n";
  }
  try {
    metrics::load_eval_manifest(bad);
    FAIL("expected a parse error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find(":1:") != std::string::npos);
  }
  CHECK_THROWS_AS(metrics::load_eval_manifest(dir.file("absent.jsonl")),
                  Error);
}

TEST_CASE("evaluation skips entries with missing assets") {
  testutil::TempDir dir("metrics");
  const int n = 2048;
  const VectorXd a = tone(261.6, n, 0.4);
  const VectorXd b = tone(392.0, n, 0.4);

  auto save = [&](const std::string& name, const VectorXd& v) {
    spectro::Waveform wf;
    wf.samples.assign(v.data(), v.data() + v.size());
    write_wav(dir.file(name), wf);
    return dir.file(name);
  };
  const std::string wa = save("a.wav", a);
  const std::string wb = save("b.wav", b);
  const std::string wm = save("mix.wav", VectorXd(a + b));
  const std::string det = dir.file("det.jsonl");
  std::ofstream(det) << "{}\n";

  metrics::EvalEntry good;
  good.mixture_wav = wm;
  good.reference_wavs = {wa, wb};
  good.detection_file = det;
  good.principal_classes = {"x", "y"};
  metrics::EvalEntry broken = good;
  broken.reference_wavs = {wa, dir.file("missing.wav")};

  int calls = 0;
  auto separate = [&](const metrics::EvalEntry& entry) {
    ++calls;
    std::vector<VectorXd> out;
    for (const auto& p : entry.reference_wavs) {
      const spectro::Waveform wf = read_wav(p);
      out.emplace_back(
          Eigen::Map<const VectorXd>(wf.samples.data(), wf.samples.size()));
    }
    out.push_back(VectorXd::Zero(n));  // trailing background estimate
    return out;
  };

  std::ostringstream log;
  const metrics::EvalReport report =
      metrics::evaluate_manifest({good, broken, good}, separate, &log);
  CHECK(report.evaluated == 2);
  CHECK(report.skipped == 1);
  CHECK(calls == 2);
  CHECK(log.str().find("missing.wav") != std::string::npos);
  // Separation returned the references themselves (estimates are quantized
  // by the 16-bit wav round trip, so scores sit at or near the cap).
  for (const auto& row : report.rows)
    for (const auto& m : row.result.per_source) CHECK(m.sdr > 40.0);

  const std::string csv = dir.file("report.csv");
  metrics::write_eval_report_csv(report, csv);
  std::ifstream in(csv);
  std::string line;
  std::getline(in, line);
  CHECK(line == "mixture,source,sdr_db,sir_db,sar_db");
  int rows = 0;
  std::string last;
  while (std::getline(in, line)) {
    ++rows;
    last = line;
  }
  CHECK(rows == 2 * 2 + 1);  // two entries x two sources + summary
  CHECK(last.find("summary(evaluated=2;skipped=1)") != std::string::npos);
}

TEST_CASE("mixture estimates recover the classic baseline scores") {
  // Supplying the mixture itself for every source is the reference point
  // the training gate compares against; for two orthogonal equal-energy
  // sources it lands at 0 dB SDR per source.
  const int n = 1000;
  VectorXd r1 = VectorXd::Zero(n), r2 = VectorXd::Zero(n);
  for (int i = 0; i < n / 2; ++i) r1(i) = 0.7;
  for (int i = n / 2; i < n; ++i) r2(i) = 0.7;
  const VectorXd mix = r1 + r2;
  const metrics::EvalResult r = metrics::bss_eval({r1, r2}, {mix, mix});
  CHECK(std::abs(r.per_source[0].sdr) <= 1e-9);
  CHECK(std::abs(r.per_source[1].sdr) <= 1e-9);
}

}  // TEST_SUITE
