// Acceptance run: one PASS/FAIL line per criterion.
//
//   hbt_acceptance            all criteria
//   hbt_acceptance 3 7        a subset
//
// Exit status is 0 only when every selected criterion passes.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <numbers>
#include <set>
#include <sstream>

#include <json.hpp>

#include "fit_synth.hpp"
#include "hbt/analysis.hpp"
#include "hbt/calibration.hpp"
#include "hbt/cli.hpp"
#include "hbt/correlator.hpp"
#include "hbt/peakfit.hpp"
#include "hbt/tag_io.hpp"
#include "hbt/thermal_sim.hpp"
#include "test_util.hpp"

using namespace hbt;
using nlohmann::json;
using testutil::TempDir;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int prec = 3) {
  std::ostringstream s;
  s.setf(std::ios::fixed);
  s.precision(prec);
  s << v;
  return s.str();
}

json load_json(const std::string& path) {
  std::ifstream in(path);
  return json::parse(in);
}

int cli(std::vector<std::string> args, std::string* out = nullptr) {
  std::ostringstream o, e;
  const int rc = run_cli(args, o, e);
  if (out) *out = o.str();
  if (rc != 0) std::cerr << "  cli " << args.front() << " failed (" << rc << "): " << e.str();
  return rc;
}

constexpr double kSigmaC = 50.0;

/// Spectral rms at 640 nm that gives a coherence time sigma_c_ps.
double sigma_lambda_for(double sigma_c_ps) {
  const double sf = 1.0 / (2.0 * std::sqrt(2.0) * std::numbers::pi * sigma_c_ps * 1e-12);
  return 640.0 * 640.0 * 1e-9 * sf / 299792458.0;
}

/// Peak fit with bounds wide enough for a contrast-1 coherence peak.
PeakFitResult fit_wide(const CoincidenceHistogram& h, double mu, std::vector<ExclusionZone> zones = {}) {
  zones.push_back({mu, 500});
  const auto n = normalize_histogram(h, zones);
  FitConstraints c;
  c.mu_nominal_ps = mu;
  c.mu_halfrange_ps = 200;
  c.sigma_min_ps = 20;
  c.sigma_max_ps = 200;
  c.sigma_seed_ps = 60;
  c.contrast_min = -2;
  c.contrast_max = 2;
  c.contrast_seed = 0.5;
  return fit_peak(n, c);
}

SimConfig ideal(int channels, double duration_s, std::uint64_t seed) {
  SimConfig cfg;
  cfg.channel_map = ChannelMap::mirrored(channels, 640, 0.11, sigma_lambda_for(kSigmaC));
  cfg.rate_per_channel_cps = 1e7;
  cfg.duration_s = duration_s;
  cfg.seed = seed;
  cfg.detector.fiber_delay_ps = 5000;
  return cfg;
}

// ---------------------------------------------------------------------------

Outcome hg_budget_check() {
  TempDir d("acc_hg");
  std::string text;
  const int rc = cli({"hg-budget", "--lambda", "640", "--dlambda", "0.040", "--dt", "40", "--out", d.file("b.json")}, &text);
  if (rc != 0) return {false, "hg-budget exited " + std::to_string(rc)};
  const auto j = load_json(d.file("b.json"));
  const double ratio = j["ratio"], maxc = 100 * j["max_contrast"].get<double>();
  const bool printed = text.find("ratio 14.7") != std::string::npos && text.find("max contrast 6.8%") != std::string::npos;
  return {std::abs(ratio - 14.7) <= 0.1 && std::abs(maxc - 6.8) <= 0.1 && printed,
          "ratio " + fmt(ratio) + " (14.7 +- 0.1), max contrast " + fmt(maxc) + "% (6.8 +- 0.1)"};
}

Outcome correlator_exactness() {
  auto rng = make_rng(2024, Stream::Test, 2);
  const auto t0 = std::chrono::steady_clock::now();
  int equal = 0;
  std::uint64_t coincidences = 0;
  for (int inst = 0; inst < 200; ++inst) {
    std::uniform_int_distribution<int> n(0, 1000);
    std::uniform_int_distribution<long long> span_d(1000, 10'000'000);
    const long long span = span_d(rng);
    std::uniform_int_distribution<long long> t(0, span);
    std::vector<Picoseconds> a(static_cast<std::size_t>(n(rng))), b(static_cast<std::size_t>(n(rng)));
    for (auto& x : a) x = t(rng);
    for (auto& x : b) x = t(rng);
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    const long long widths[] = {1, 7, 20, 100};
    const long long w = widths[std::uniform_int_distribution<int>(0, 3)(rng)];
    const long long W = w * std::uniform_int_distribution<long long>(1, 300)(rng);
    const long long shift = std::uniform_int_distribution<long long>(-W, W)(rng);
    const auto h = pair_histogram(a, b, W, w, shift);
    const auto ref = testutil::brute_force_histogram(a, b, W, w, shift);
    if (h.counts == ref) ++equal;
    coincidences += h.total;
  }
  const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {equal == 200 && s < 10, std::to_string(equal) + "/200 instances identical to brute force (" +
                                       std::to_string(coincidences) + " coincidences), " + fmt(s, 2) + " s"};
}

Outcome siegert_closure() {
  const auto cfg = ideal(3, 1.0, 3);
  const auto d = simulate_detections(cfg);
  const auto& px = d.streams.by_pixel;
  const Picoseconds delay = 5000;
  bool ok = true;
  std::string detail = "matched C:";
  for (const auto& t : d.truth) {
    const auto r = fit_wide(pair_histogram(px[t.channel.pixel_a], px[t.channel.pixel_b], 2000, 20, delay), 0);
    ok = ok && r.status != FitStatus::Failed && std::abs(r.contrast - 1.0) <= 0.05;
    detail += " " + fmt(r.contrast) + "+-" + fmt(r.contrast_err);
  }
  detail += "; mismatched |C|/sigma:";
  for (const auto& ta : d.truth)
    for (const auto& tb : d.truth) {
      if (ta.channel.index == tb.channel.index) continue;
      const auto r = fit_wide(pair_histogram(px[ta.channel.pixel_a], px[tb.channel.pixel_b], 2000, 20, delay), 0);
      const double z = std::abs(r.contrast) / r.contrast_err;
      ok = ok && r.status != FitStatus::Failed && z < 3;
      detail += " " + fmt(z, 1);
    }
  return {ok, detail + " (r^2 T = 1e14)"};
}

Outcome convolution_oracle() {
  bool ok = true;
  std::string detail;
  for (double sj : {0.0, 10.0, 40.0}) {
    auto cfg = ideal(1, 1.0, 4); // same source for every jitter setting
    cfg.detector.jitter_sigma_ps = sj;
    const auto d = simulate_detections(cfg);
    const auto& c = d.truth[0].channel;
    const auto r = fit_wide(pair_histogram(d.streams.by_pixel[c.pixel_a], d.streams.by_pixel[c.pixel_b], 2000, 20, 5000), 0);
    const double s_pred = std::sqrt(kSigmaC * kSigmaC + 2 * sj * sj);
    const double c_pred = kSigmaC / s_pred;
    const bool this_ok = std::abs(r.contrast - c_pred) < 3 * r.contrast_err && std::abs(r.sigma_ps / s_pred - 1) < 0.05;
    ok = ok && this_ok;
    detail += "jitter " + fmt(sj, 0) + ": C " + fmt(r.contrast) + "+-" + fmt(r.contrast_err) + " vs " + fmt(c_pred) +
              ", sigma " + fmt(r.sigma_ps, 1) + " vs " + fmt(s_pred, 1);
    if (sj < 40) detail += "; ";
  }
  return {ok, detail};
}

Outcome replication_preset() {
  TempDir d("acc_replication");
  const auto tags = d.file("d.tags"), map = d.file("d.tags.map");
  if (cli({"simulate", "--preset", "replication", "--out", tags}) != 0) return {false, "simulate failed"};
  const auto truth = load_json(d.file("d.tags.truth.json"));
  const auto delay = std::to_string(std::llround(truth["detector"]["fiber_delay_ps"].get<double>()));
  if (cli({"correlate", "--tags", tags, "--map", map, "--shift", delay, "--window", "10000", "--out", d.file("h.bin")}) != 0)
    return {false, "correlate failed"};
  // per-pair peaks are narrower than 60 ps (offsets only shift them), so the sigma bounds are opened
  if (cli({"fit", "--hist", d.file("h.bin"), "--out", d.file("fits.json"), "--delay", delay, "--sigma-min", "40",
           "--sigma-max", "100"}) != 0)
    return {false, "fit failed"};
  if (cli({"matrix", "--fits", d.file("fits.json"), "--map", map, "--out", d.file("matrix.json"), "--delay", delay,
           "--hist", d.file("h.bin")}) != 0)
    return {false, "matrix failed"};
  const auto m = load_json(d.file("matrix.json"));

  double predicted = 0;
  int n = 0;
  for (const auto& c : truth["channels"]) {
    if (c["pixel_a"].get<int>() < 0 || c["pixel_b"].get<int>() < 0) continue;
    predicted += c["expected_pair_contrast"].get<double>();
    ++n;
  }
  predicted /= n;

  double d0 = 0, e0 = 0;
  bool null2 = true;
  std::string off2;
  for (const auto& dg : m["diagonals"]) {
    const int k = dg["offset"];
    const double mean = dg["weighted_mean"], err = dg["weighted_mean_err"];
    if (k == 0) {
      d0 = mean;
      e0 = err;
    } else if (std::abs(k) == 2) {
      null2 = null2 && std::abs(mean) < 3 * err;
      off2 += " " + fmt(100 * mean, 2) + "+-" + fmt(100 * err, 2) + "%";
    }
  }
  const double sum_sigma = m.contains("summed") ? m["summed"]["sigma_ps"].get<double>() : 0.0;
  const bool band = d0 >= 0.02 && d0 <= 0.05;
  const bool pred = std::abs(d0 - predicted) < 3 * e0;
  const bool sig = sum_sigma >= 60 && sum_sigma <= 80;
  auto mark = [](bool b) { return b ? "ok" : "NO"; };
  return {band && pred && null2 && sig,
          "diagonal " + fmt(100 * d0, 2) + "+-" + fmt(100 * e0, 2) + "% [2-5% band " + mark(band) + "; predicted " +
              fmt(100 * predicted, 2) + "% " + mark(pred) + "]; offset +-2:" + off2 + " [" + mark(null2) +
              "]; summed sigma " + fmt(sum_sigma, 1) + " ps [60-80 " + mark(sig) + "]"};
}

Outcome fitter_closure() {
  using testutil::PeakTruth;
  auto rng = make_rng(6, Stream::Test, 6);
  PeakTruth t; // C 0.03, sigma 70, background 1000 per bin
  FitConstraints c;
  c.mu_nominal_ps = t.mu_ps;
  std::vector<double> pulls;
  int failed = 0;
  for (int k = 0; k < 500; ++k) {
    const auto r = fit_peak(normalize_histogram(testutil::synth_histogram(t, &rng), t.mu_ps, 1000), c);
    if (!r.usable()) {
      ++failed;
      continue;
    }
    pulls.push_back((r.contrast - t.contrast) / r.contrast_err);
  }
  const double pm = testutil::mean(pulls), pw = testutil::stddev(pulls);

  PeakTruth narrow;
  narrow.sigma_ps = 50;
  narrow.background = 1e5;
  const auto b = fit_peak(normalize_histogram(testutil::synth_histogram(narrow, nullptr), narrow.mu_ps, 1000), c);
  const bool bound = b.sigma_at_bound && std::abs(b.sigma_ps - 60) < 1e-6 && b.status == FitStatus::AtBound;
  return {std::abs(pm) <= 0.15 && std::abs(pw - 1) <= 0.1 && failed == 0 && bound,
          "pull mean " + fmt(pm) + " (0 +- 0.15), width " + fmt(pw) + " (1 +- 0.1), " + std::to_string(failed) +
              " failed fits; sigma_true 50 -> " + fmt(b.sigma_ps, 1) + " ps, status " + to_string(b.status)};
}

Outcome crosstalk_separation() {
  auto cfg = ideal(2, 1.0, 7);
  cfg.detector.crosstalk_prob = 0.002;
  const auto d = simulate_detections(cfg);
  // mirrored two-channel map: pixel 1 (A) and pixel 2 (B) image the same slice and are neighbours
  const ChannelTruth* edge = nullptr;
  for (const auto& t : d.truth)
    if (t.channel.pixel_a == 1 && t.channel.pixel_b == 2) edge = &t;
  if (!edge) return {false, "pixels 1 and 2 are not a matched pair"};
  const auto& px = d.streams.by_pixel;
  const auto h = pair_histogram(px[1], px[2], 10000, 20, 0);
  const std::vector<ExclusionZone> zones{{0, 500}, {5000, 1000}};
  const auto n = normalize_histogram(h, zones);

  auto excess = [&](double centre, double half) {
    double ex = 0, var = 0;
    for (int i = 0; i < h.bins(); ++i)
      if (std::abs(h.bin_center(i) - centre) <= half) {
        ex += static_cast<double>(h.counts[i]) - n.background;
        var += n.background;
      }
    return ex / std::sqrt(var);
  };
  const double z_art = excess(0, 40), z_hbt = excess(5000, 150);

  const auto anchored = fit_wide(h, 5000, {{0, 500}});
  const bool at_hbt = anchored.status != FitStatus::Failed && std::abs(anchored.mu_ps - 5000) < 30 &&
                      std::abs(anchored.contrast - edge->pair_contrast) < 4 * anchored.contrast_err;

  // the other matched pair is not adjacent: no artifact there
  const auto far = pair_histogram(px[0], px[3], 10000, 20, 0);
  const auto nf = normalize_histogram(far, zones);
  double fex = 0, fvar = 0;
  for (int i = 0; i < far.bins(); ++i)
    if (std::abs(far.bin_center(i)) <= 40) {
      fex += static_cast<double>(far.counts[i]) - nf.background;
      fvar += nf.background;
    }
  const double z_far = fex / std::sqrt(fvar);

  return {z_art > 10 && z_hbt > 10 && at_hbt && std::abs(z_far) < 4,
          "artifact at 0 ps: " + fmt(z_art, 1) + " sigma, HBT at 5 ns: " + fmt(z_hbt, 1) + " sigma; anchored fit mu " +
              fmt(anchored.mu_ps, 1) + " ps, C " + fmt(anchored.contrast) + "+-" + fmt(anchored.contrast_err) +
              " (expected " + fmt(edge->pair_contrast) + "); non-adjacent pair at 0 ps: " + fmt(z_far, 1) + " sigma"};
}

/// Pixel-integrated Gaussian lines on a flat background, with Poisson noise.
std::vector<double> line_spectrum(const std::vector<double>& centres, Rng& rng) {
  std::vector<double> s(128, 20.0);
  for (double c : centres)
    for (int k = 0; k < 128; ++k) {
      const double lo = (k - 0.5 - c) / (0.4 * std::sqrt(2.0)), hi = (k + 0.5 - c) / (0.4 * std::sqrt(2.0));
      s[k] += 5e4 * 0.5 * (std::erf(hi) - std::erf(lo));
    }
  for (auto& x : s) x = static_cast<double>(std::poisson_distribution<long long>(x)(rng));
  return s;
}

Outcome calibration_check() {
  auto rng = make_rng(8, Stream::Test, 8);
  // arm A: lambda = 645 - 0.11 p; arm B runs the other way: lambda = 631 + 0.11 p
  const std::vector<LineReference> lines_a{{640.2, ""}, {638.3, ""}}, lines_b{{638.3, ""}, {640.2, ""}};
  auto px_a = [](double l) { return (645 - l) / 0.11; };
  auto px_b = [](double l) { return (l - 631) / 0.11; };
  const auto fa = fit_wavelength_map(find_line_centroids(line_spectrum({px_a(640.2), px_a(638.3)}, rng), 2), lines_a, Arm::A);
  const auto fb = fit_wavelength_map(find_line_centroids(line_spectrum({px_b(638.3), px_b(640.2)}, rng), 2), lines_b, Arm::B);
  const bool slopes = std::abs(std::abs(fa.slope_nm_per_px) / 0.11 - 1) < 0.01 &&
                      std::abs(std::abs(fb.slope_nm_per_px) / 0.11 - 1) < 0.01 &&
                      fa.slope_nm_per_px * fb.slope_nm_per_px < 0;

  // offset network: 10 x 10 pixels, injected 29 ps rms offsets, 15 ps per-pair position noise
  DetectorConfig det;
  det.offset_residual_ps = 29;
  std::vector<int> pa, pb;
  for (int i = 0; i < 10; ++i) {
    pa.push_back(i);
    pb.push_back(100 + i);
  }
  std::normal_distribution<double> noise(0, 15);
  std::vector<PairMeasurement> meas;
  const double D = 5000;
  auto t_o = [&](int p) { return pixel_timing_offset_ps(det, 29, p); };
  for (int a : pa)
    for (int b : pb) meas.push_back({a, b, D + t_o(b) - t_o(a) + noise(rng), 15});
  const auto tab = solve_offsets(meas, pa[0]);
  // truth in the solver's gauge: reference pixel 0, arm-B offsets with zero mean
  double mb = 0;
  for (int b : pb) mb += t_o(b);
  mb /= static_cast<double>(pb.size());
  int within = 0, total = 0;
  double rms = 0;
  for (int a : pa) {
    rms += t_o(a) * t_o(a);
    if (a == pa[0]) continue;
    ++total;
    within += std::abs(tab.offset(a) - (t_o(pa[0]) - t_o(a))) < 3 * tab.offset_err_ps.at(a);
  }
  for (int b : pb) {
    rms += t_o(b) * t_o(b);
    ++total;
    within += std::abs(tab.offset(b) - (mb - t_o(b))) < 3 * tab.offset_err_ps.at(b);
  }
  ++total;
  within += std::abs(tab.delay_ps - (D - t_o(pa[0]) + mb)) < 3 * tab.delay_err_ps;
  rms = std::sqrt(rms / 20);
  return {slopes && within == total,
          "slopes " + fmt(fa.slope_nm_per_px, 4) + " / " + fmt(fb.slope_nm_per_px, 4) + " nm/px; injected offsets " +
              fmt(rms, 1) + " ps rms, " + std::to_string(within) + "/" + std::to_string(total) +
              " parameters within 3x propagated uncertainty"};
}

Outcome sensitivity_check() {
  const std::vector<SensitivityInput> bins(70, {1.0, 1.0, 0, 0});
  const double g = sensitivity_gain(bins).gain;
  std::string text;
  const int rc = cli({"sensitivity", "--equal-bins", "70"}, &text);
  const bool printed = rc == 0 && text.find("8.37") != std::string::npos;
  return {std::abs(g - std::sqrt(70.0)) < 1e-12 && std::abs(g / 8.3 - 1) < 0.01 && printed,
          "gain " + fmt(g, 4) + " (sqrt 70), " + fmt(100 * std::abs(g / 8.3 - 1), 2) + "% from 8.3"};
}

long vm_hwm_kb() {
  std::ifstream in("/proc/self/status");
  std::string line;
  while (std::getline(in, line))
    if (line.rfind("VmHWM:", 0) == 0) return std::stol(line.substr(6));
  return -1;
}

/// Child mode: stream a tag file and report peak resident memory.
int probe_reader(const std::string& path) {
  const auto t0 = std::chrono::steady_clock::now();
  TagReader r{path};
  std::vector<TimeTag> batch;
  std::uint64_t n = 0;
  std::uint64_t check = 0;
  while (r.next(batch, 1 << 16)) {
    n += batch.size();
    for (const auto& t : batch) check += t.pixel;
  }
  const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::printf("%llu %ld %.3f %llu\n", static_cast<unsigned long long>(n), vm_hwm_kb(), s,
              static_cast<unsigned long long>(check));
  return 0;
}

Outcome performance() {
  // throughput: 100 x 100 pixels at 500 kHz each, all cross pairs, one worker
  const auto map = ChannelMap::mirrored(100, 640, 0.11, 0.04);
  const double T = 0.2e12;
  PixelStreams streams;
  streams.by_pixel.resize(static_cast<std::size_t>(map.pixel_count()));
  streams.present.assign(streams.by_pixel.size(), true);
  streams.duration_ps = static_cast<Picoseconds>(T);
  std::uint64_t tags = 0;
  for (int p = 0; p < map.pixel_count(); ++p) {
    auto rng = make_rng(10, Stream::Test, static_cast<std::uint64_t>(p));
    streams.by_pixel[p] = testutil::poisson_stream(rng, 5e5, T);
    tags += streams.by_pixel[p].size();
  }
  streams.kept = tags;
  CorrelationJob job;
  job.pairs = all_cross_pairs(map);
  job.workers = 1;
  const auto t0 = std::chrono::steady_clock::now();
  const auto hs = run_all_pairs(streams, job);
  const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const double rate = static_cast<double>(tags) / s;
  const auto spot = pair_histogram(streams.by_pixel[3], streams.by_pixel[150], job.window_ps, job.bin_width_ps);
  bool same = false;
  for (const auto& h : hs)
    if (h.pixel_a == 3 && h.pixel_b == 150) same = h.counts == spot.counts;

  // reader memory on a 2 GiB file, measured in a fresh process
  TempDir d("acc_big");
  const std::string path = d.file("big.tags");
  const std::uint64_t records = ((std::uint64_t{1} << 31) - kTagHeaderBytes) / kTagRecordBytes + 1;
  {
    TagFileHeader hdr;
    hdr.pixel_count = 200;
    hdr.duration_ps = records * 10;
    TagWriter w(path, hdr);
    std::vector<TimeTag> batch(1 << 20);
    std::uint64_t k = 0;
    while (k < records) {
      const std::size_t m = static_cast<std::size_t>(std::min<std::uint64_t>(batch.size(), records - k));
      for (std::size_t i = 0; i < m; ++i, ++k) batch[i] = {static_cast<std::uint16_t>(k % 200), static_cast<Picoseconds>(k * 10)};
      w.append(std::span<const TimeTag>(batch.data(), m));
    }
    w.finish();
  }
  const double bytes = static_cast<double>(testutil::fs::file_size(path));
  std::string self = testutil::fs::read_symlink("/proc/self/exe").string();
  FILE* pipe = ::popen(("'" + self + "' --probe-reader '" + path + "'").c_str(), "r");
  unsigned long long n = 0, check = 0;
  long hwm = -1;
  double rs = 0;
  if (pipe) {
    if (std::fscanf(pipe, "%llu %ld %lf %llu", &n, &hwm, &rs, &check) != 4) hwm = -1;
    ::pclose(pipe);
  }
  const bool mem = n == records && hwm > 0 && hwm < 64 * 1024;
  return {rate >= 5e6 && same && mem,
          fmt(rate / 1e6, 1) + "e6 tags/s per worker on " + std::to_string(job.pairs.size()) + " pairs (" +
              std::to_string(tags) + " tags, " + fmt(s, 2) + " s); " + fmt(bytes / 1e9, 2) + " GB file: " +
              std::to_string(n) + " records, peak RSS " + fmt(hwm / 1024.0, 1) + " MB, " +
              fmt(bytes / 1e6 / rs, 0) + " MB/s"};
}

} // namespace

int main(int argc, char** argv) {
  if (argc == 3 && std::string(argv[1]) == "--probe-reader") return probe_reader(argv[2]);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"Heisenberg-Gabor budget", hg_budget_check},
      {"correlator exactness", correlator_exactness},
      {"Siegert closure", siegert_closure},
      {"convolution oracle", convolution_oracle},
      {"100-channel replication preset", replication_preset},
      {"fitter closure", fitter_closure},
      {"cross-talk separation", crosstalk_separation},
      {"calibration", calibration_check},
      {"sensitivity gain", sensitivity_check},
      {"performance", performance},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));

  int failed = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    const int id = static_cast<int>(k + 1);
    if (!only.empty() && !only.count(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[k].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  " << id << ". " << criteria[k].first << " [" << fmt(s, 1)
              << " s]: " << o.detail << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
