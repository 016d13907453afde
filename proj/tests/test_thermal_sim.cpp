#include <cmath>
#include <fstream>
#include <numbers>

#include <json.hpp>

#include "doctest.h"
#include "hbt/correlator.hpp"
#include "hbt/digest.hpp"
#include "hbt/errors.hpp"
#include "hbt/peakfit.hpp"
#include "hbt/thermal_sim.hpp"
#include "test_util.hpp"

using namespace hbt;

namespace {

constexpr double kSigmaC = 50.0; // ps

double sigma_f_for(double sigma_c_ps) { return 1.0 / (2.0 * std::sqrt(2.0) * std::numbers::pi * sigma_c_ps * 1e-12); }

/// sigma_lambda giving a coherence time of sigma_c_ps at 640 nm.
double sigma_lambda_for(double sigma_c_ps) {
  return 640.0 * 640.0 * 1e-9 * sigma_f_for(sigma_c_ps) / 299792458.0;
}

SimChannel channel_with(double sigma_c_ps) {
  SimChannel c;
  c.lambda_nm = 640;
  c.sigma_f_hz = sigma_f_for(sigma_c_ps);
  c.sigma_c_ps = sigma_c_ps;
  return c;
}

/// Normalized autocorrelation <I(t) I(t+lag)> / <I>^2 of one trace.
double g2_at(const IntensityTrace& tr, std::size_t lag) {
  const auto& I = tr.intensity;
  double m = 0, s = 0;
  for (double x : I) m += x;
  m /= static_cast<double>(I.size());
  for (std::size_t k = 0; k + lag < I.size(); ++k) s += I[k] * I[k + lag];
  s /= static_cast<double>(I.size() - lag);
  return s / (m * m);
}

PeakFitResult fit_bunching(const CoincidenceHistogram& h, double mu = 0.0) {
  const auto n = normalize_histogram(h, mu, 500);
  FitConstraints c;
  c.mu_nominal_ps = mu;
  c.mu_halfrange_ps = 100;
  c.sigma_min_ps = 20;
  c.sigma_max_ps = 150;
  c.sigma_seed_ps = 50;
  c.contrast_min = -2;
  c.contrast_max = 2;
  c.contrast_seed = 0.5;
  return fit_peak(n, c);
}

SimConfig ideal_config(int channels, double pitch_nm, double sigma_lambda_nm, double rate, double duration_s) {
  SimConfig cfg;
  cfg.channel_map = ChannelMap::mirrored(channels, 640, pitch_nm, sigma_lambda_nm);
  cfg.rate_per_channel_cps = rate;
  cfg.duration_s = duration_s;
  cfg.seed = 5;
  return cfg;
}

} // namespace

TEST_CASE("single mode gives a constant intensity") {
  const auto tr = simulate_channel_intensity(channel_with(kSigmaC), 1, 1e4, 3);
  CHECK(tr.dt_ps == doctest::Approx(5.0));
  REQUIRE(tr.intensity.size() >= 2000);
  CHECK(tr.intensity.size() <= 2001);
  CHECK(tr.duration_ps() >= 1e4);
  for (double x : tr.intensity) CHECK(x == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("ensemble intensity correlation of a chaotic trace") {
  // enough modes that per-trace normalization bias (order 1/M) stays below the tolerance
  const int M = 256;
  const auto ch = channel_with(kSigmaC);
  double g0 = 0, g3 = 0, gfar = 0;
  const int seeds = 200;
  for (int s = 1; s <= seeds; ++s) {
    const auto tr = simulate_channel_intensity(ch, M, 5e4, static_cast<std::uint64_t>(s));
    g0 += g2_at(tr, 0);
    g3 += g2_at(tr, static_cast<std::size_t>(std::lround(3 * kSigmaC / tr.dt_ps)));
    gfar += g2_at(tr, static_cast<std::size_t>(std::lround(20 * kSigmaC / tr.dt_ps)));
  }
  g0 /= seeds;
  g3 /= seeds;
  gfar /= seeds;
  MESSAGE("g2(0) = " << g0 << ", g2(3 sigma_c) = " << g3 << ", g2(20 sigma_c) = " << gfar);
  CHECK(std::abs(g0 - 2.0) < 0.05);
  CHECK(std::abs(g3 - (1.0 + std::exp(-4.5))) < 0.01);
  CHECK(std::abs(gfar - 1.0) < 0.01);

  // with few modes each trace's own mean gives g2(0) = 2 - sum w^2, about 2 - 2/M
  double few = 0;
  for (int s = 1; s <= 50; ++s) few += g2_at(simulate_channel_intensity(ch, 16, 5e4, static_cast<std::uint64_t>(s)), 0);
  CHECK(std::abs(few / 50 - (2.0 - 2.0 / 16)) < 0.03);
}

TEST_CASE("trace grid and mode frequencies") {
  const auto ch = channel_with(kSigmaC);
  CHECK_THROWS_AS(simulate_channel_intensity(ch, 16, 1e4, 1, 6.0), ConfigError);
  CHECK_NOTHROW(simulate_channel_intensity(ch, 16, 1e4, 1, 5.0));
  CHECK(simulate_channel_intensity(ch, 16, 0.0, 1).intensity.empty());

  auto rng = make_rng(1, Stream::Test, 0);
  const auto f = gaussian_mode_frequencies(1e9, 4000, rng);
  std::vector<double> v(f.begin(), f.end());
  CHECK(std::abs(testutil::mean(v)) < 0.05e9);
  CHECK(testutil::stddev(v) == doctest::Approx(1e9).epsilon(0.03));
}

TEST_CASE("photon sampling from a flat trace") {
  const auto tr = simulate_channel_intensity(channel_with(kSigmaC), 1, 1e9, 1); // 1 ms
  const auto ph = sample_photons(tr, 1e8, 7);
  const double expect = 1e8 * 1e-3;
  CHECK(std::abs(static_cast<double>(ph.a.size()) - expect) < 4 * std::sqrt(expect));
  CHECK(std::abs(static_cast<double>(ph.b.size()) - expect) < 4 * std::sqrt(expect));
  CHECK(std::is_sorted(ph.a.begin(), ph.a.end()));
  CHECK(std::is_sorted(ph.b.begin(), ph.b.end()));
  CHECK(ph.a.back() < tr.duration_ps());

  const auto empty = simulate_channel_intensity(channel_with(kSigmaC), 1, 0.0, 1);
  const auto none = sample_photons(empty, 1e8, 7);
  CHECK(none.a.empty());
  CHECK(none.b.empty());
  CHECK(to_picoseconds({1.4, 1.6, -0.4}) == std::vector<Picoseconds>{1, 2, 0});
}

TEST_CASE("grid sampler shows full bunching") {
  const auto tr = simulate_channel_intensity(channel_with(kSigmaC), 64, 2e7, 11);
  const auto ph = sample_photons(tr, 2e9, 12);
  const auto a = to_picoseconds(ph.a), b = to_picoseconds(ph.b);
  const auto h = pair_histogram(a, b, 2000, 20);
  const auto r = fit_bunching(h);
  MESSAGE("grid contrast " << r.contrast << " +- " << r.contrast_err << ", sigma " << r.sigma_ps);
  CHECK(r.contrast > 0.85);
  CHECK(r.contrast < 1.05);
  CHECK(r.sigma_ps == doctest::Approx(kSigmaC).epsilon(0.15));
}

TEST_CASE("detector: pure delay and range cut") {
  const auto map = ChannelMap::mirrored(2, 640, 0.11, 0.04); // A: 0,1  B: 2,3
  DetectorConfig det;
  det.fiber_delay_ps = 5000;
  std::vector<std::vector<double>> ph(4);
  ph[0] = {100, 2000};
  ph[2] = {100, 2000, 6000};
  const auto out = apply_detector(ph, map, det, 1, 1e4);
  CHECK(out.by_pixel[0] == std::vector<Picoseconds>{100, 2000});
  CHECK(out.by_pixel[2] == std::vector<Picoseconds>{5100, 7000});
  CHECK(out.out_of_range == 1);
  CHECK(out.signal == 4);
  CHECK(out.total() == 4);

  std::vector<std::vector<double>> unsorted(4);
  unsorted[1] = {5, 3};
  CHECK_THROWS_AS(apply_detector(unsorted, map, det, 1, 1e4), OrderingError);
}

TEST_CASE("detector: dark counts and dead pixels") {
  const auto map = ChannelMap::mirrored(50, 640, 0.11, 0.04);
  DetectorConfig det;
  det.pde = 1e-9;
  det.dark_rate_cps = 125;
  det.dead_pixels = {3};
  std::vector<std::vector<double>> ph(100);
  ph[7] = {1e6, 2e6};
  const auto out = apply_detector(ph, map, det, 2, 1e12);
  const double expect = 99 * 125.0;
  CHECK(std::abs(static_cast<double>(out.dark) - expect) < 4 * std::sqrt(expect));
  CHECK(out.signal == 0);
  CHECK(out.by_pixel[3].empty());
  for (const auto& v : out.by_pixel) CHECK(std::is_sorted(v.begin(), v.end()));
}

TEST_CASE("detector: cross-talk into neighbours") {
  const auto map = ChannelMap::mirrored(2, 640, 0.11, 0.04);
  DetectorConfig det;
  det.crosstalk_prob = 0.002;
  std::vector<std::vector<double>> ph(4);
  auto rng = make_rng(4, Stream::Test, 0);
  for (auto t : testutil::poisson_stream(rng, 1e6, 1e12)) ph[1].push_back(static_cast<double>(t));
  const auto n = static_cast<double>(ph[1].size());
  const auto out = apply_detector(ph, map, det, 3, 1e12);
  const double expect = 0.002 * n;
  for (int p : {0, 2}) {
    CHECK(std::abs(static_cast<double>(out.by_pixel[p].size()) - expect) < 3 * std::sqrt(expect));
    // the copies sit on top of their parents
    const auto h = pair_histogram(out.by_pixel[1], out.by_pixel[p], 100, 20);
    CHECK(static_cast<double>(h.total) >= 0.99 * static_cast<double>(out.by_pixel[p].size()));
  }
  CHECK(out.by_pixel[3].empty());
  CHECK(out.crosstalk == out.by_pixel[0].size() + out.by_pixel[2].size());

  DetectorConfig dead = det;
  dead.dead_pixels = {2};
  const auto d = apply_detector(ph, map, dead, 3, 1e12);
  CHECK(d.by_pixel[2].empty());
}

TEST_CASE("detector: jitter and fixed offsets") {
  const auto map = ChannelMap::mirrored(2, 640, 0.11, 0.04);
  DetectorConfig det;
  det.jitter_sigma_ps = 40;
  std::vector<std::vector<double>> ph(4);
  for (int k = 1; k <= 100000; ++k) ph[0].push_back(1e6 * k);
  const auto out = apply_detector(ph, map, det, 9, 2e11);
  REQUIRE(out.by_pixel[0].size() == ph[0].size());
  std::vector<double> d;
  for (std::size_t k = 0; k < ph[0].size(); ++k) d.push_back(static_cast<double>(out.by_pixel[0][k]) - ph[0][k]);
  CHECK(std::abs(testutil::mean(d)) < 0.5);
  CHECK(testutil::stddev(d) == doctest::Approx(40).epsilon(0.02));

  DetectorConfig off;
  off.offset_residual_ps = 29;
  std::vector<double> o;
  for (int p = 0; p < 4000; ++p) o.push_back(pixel_timing_offset_ps(off, 1, p));
  CHECK(std::sqrt(testutil::mean([&] {
          std::vector<double> sq;
          for (double x : o) sq.push_back(x * x);
          return sq;
        }())) == doctest::Approx(29).epsilon(0.04));
  CHECK(pixel_timing_offset_ps(off, 1, 17) == pixel_timing_offset_ps(off, 1, 17));
  CHECK(pixel_timing_offset_ps(off, 2, 17) != pixel_timing_offset_ps(off, 1, 17));
  CHECK(pixel_timing_offset_ps(DetectorConfig{}, 1, 17) == 0.0);
}

TEST_CASE("channel pairing across arms") {
  const auto chans = sim_channels(ChannelMap::mirrored(3, 640, 0.11, 0.04));
  REQUIRE(chans.size() == 3);
  for (std::size_t k = 0; k < 3; ++k) {
    CHECK(chans[k].pixel_a >= 0);
    CHECK(chans[k].pixel_b >= 3);
    CHECK(chans[k].lambda_nm == doctest::Approx(640 + 0.11 * k));
    CHECK(chans[k].sigma_c_ps == doctest::Approx(coherence_sigma_ps(freq_sigma_from_lambda(chans[k].lambda_nm, 0.04))));
  }
}

TEST_CASE("cluster sampler: bunching within a channel, none across") {
  const double sl = sigma_lambda_for(kSigmaC);
  auto cfg = ideal_config(2, 0.11, sl, 1e7, 0.2);
  const auto d = simulate_detections(cfg);
  const auto& t = d.truth;
  REQUIRE(t.size() == 2);
  CHECK(t[0].pair_contrast == doctest::Approx(1.0));
  CHECK(t[0].channel.sigma_c_ps == doctest::Approx(kSigmaC).epsilon(1e-3));
  const double expect = 1e7 * 0.2;
  const auto& s = d.streams.by_pixel;
  CHECK(std::abs(static_cast<double>(s[t[0].channel.pixel_a].size()) - expect) < 5 * std::sqrt(expect));

  const auto matched = fit_bunching(pair_histogram(s[t[0].channel.pixel_a], s[t[0].channel.pixel_b], 2000, 20));
  MESSAGE("matched " << matched.contrast << " +- " << matched.contrast_err);
  CHECK(std::abs(matched.contrast - 1.0) < 4 * matched.contrast_err);
  CHECK(matched.sigma_ps == doctest::Approx(kSigmaC).epsilon(0.15));

  const auto cross = fit_bunching(pair_histogram(s[t[0].channel.pixel_a], s[t[1].channel.pixel_b], 2000, 20));
  MESSAGE("cross " << cross.contrast << " +- " << cross.contrast_err);
  CHECK(std::abs(cross.contrast) < 4 * cross.contrast_err);
}

TEST_CASE("cluster sampler: a shared band correlates neighbours") {
  const double sl = sigma_lambda_for(kSigmaC);
  auto cfg = ideal_config(2, sl, sl, 1e7, 0.2);
  cfg.shared_band_groups = {{0, 1}};
  const auto d = simulate_detections(cfg);
  const auto& t = d.truth;
  const auto& s = d.streams.by_pixel;
  const auto matched = fit_bunching(pair_histogram(s[t[0].channel.pixel_a], s[t[0].channel.pixel_b], 2000, 20));
  const auto cross = fit_bunching(pair_histogram(s[t[0].channel.pixel_a], s[t[1].channel.pixel_b], 2000, 20));
  MESSAGE("shared: matched " << matched.contrast << ", cross " << cross.contrast << " +- " << cross.contrast_err);
  // overlap of the two amplitude responses at one sigma separation: exp(-1/8)^2
  CHECK(cross.contrast > 5 * cross.contrast_err);
  CHECK(std::abs(cross.contrast - std::exp(-0.25)) < 0.15);
  CHECK(cross.contrast < matched.contrast);
}

TEST_CASE("dataset files are deterministic") {
  testutil::TempDir dir("sim_dataset");
  auto cfg = ideal_config(2, 0.11, 0.04, 1e4, 1.0);
  const auto s1 = simulate_dataset(cfg, dir.file("a.tags"), dir.file("a.json"));
  const auto s2 = simulate_dataset(cfg, dir.file("b.tags"), dir.file("b.json"));
  CHECK(sha256_file(dir.file("a.tags")) == sha256_file(dir.file("b.tags")));
  CHECK(sha256_file(dir.file("a.json")) == sha256_file(dir.file("b.json")));
  CHECK(std::abs(static_cast<double>(s1.records) - 4e4) < 4 * std::sqrt(4e4));
  CHECK(s1.records == s2.records);
  const auto tags = read_tags(dir.file("a.tags"));
  CHECK(tags.size() == s1.records);
  CHECK(std::is_sorted(tags.begin(), tags.end(), tag_less));

  cfg.seed = 6;
  simulate_dataset(cfg, dir.file("c.tags"), "");
  CHECK(sha256_file(dir.file("c.tags")) != sha256_file(dir.file("a.tags")));

  std::ifstream in(dir.file("a.json"));
  const auto j = nlohmann::json::parse(in);
  CHECK(j["schema"] == "hbt.sim/1");
  CHECK(j["channels"].size() == 2);
  CHECK(j["counts"]["records"] == s1.records);
  CHECK(j["channels"][0]["expected_pair_contrast"].get<double>() == doctest::Approx(1.0));
}

TEST_CASE("truth for the 100-channel configuration") {
  KeyValueConfig kv;
  kv.set("preset", "replication");
  const auto cfg = sim_config_from(kv);
  CHECK(cfg.channel_map.arm_a().size() == 100);
  const auto t = channel_truth(cfg);
  REQUIRE(t.size() == 100);
  const auto& c = t[5];
  CHECK(c.channel.sigma_c_ps == doctest::Approx(3.8).epsilon(0.03));
  CHECK(c.pair_sigma_ps == doctest::Approx(std::sqrt(2 * 40.0 * 40.0 + c.channel.sigma_c_ps * c.channel.sigma_c_ps)));
  const double dil = 3e7 * 3e7 / ((3e7 + cfg.detector.dark_rate_cps) * (3e7 + cfg.detector.dark_rate_cps));
  CHECK(c.pair_contrast ==
        doctest::Approx(dil * c.channel.sigma_c_ps / c.pair_sigma_ps).epsilon(1e-9));
  CHECK(c.summed_sigma_ps == doctest::Approx(70).epsilon(0.01));
  CHECK(c.summed_contrast < c.pair_contrast);
  CHECK(c.nominal_mu_ps == doctest::Approx(cfg.detector.fiber_delay_ps +
                                           pixel_timing_offset_ps(cfg.detector, cfg.seed, c.channel.pixel_b) -
                                           pixel_timing_offset_ps(cfg.detector, cfg.seed, c.channel.pixel_a)));
}

TEST_CASE("configuration keys and validation") {
  KeyValueConfig kv;
  kv.set("preset", "smoke");
  kv.set("seed", "9");
  kv.set("detector.dark_rate_cps", "0");
  kv.set("shared_band_groups", "0,1;3-4");
  const auto cfg = sim_config_from(kv);
  CHECK(cfg.channel_map.arm_a().size() == 5);
  CHECK(cfg.rate_per_channel_cps == 1e7);
  CHECK(cfg.seed == 9);
  CHECK(cfg.detector.dark_rate_cps == 0);
  CHECK(cfg.detector.jitter_sigma_ps == DetectorConfig::linospad2().jitter_sigma_ps);
  CHECK(cfg.shared_band_groups == std::vector<std::vector<int>>{{0, 1}, {3, 4}});

  auto bad = [](const char* k, const char* v) {
    KeyValueConfig b;
    b.set("preset", "smoke");
    b.set(k, v);
    return b;
  };
  CHECK_THROWS_AS(sim_config_from(bad("shared_band_groups", "0,2")), ConfigError);
  CHECK_THROWS_AS(sim_config_from(bad("shared_band_groups", "0,1;1,2")), ConfigError);
  CHECK_THROWS_AS(sim_config_from(bad("shared_band_groups", "3")), ConfigError);
  CHECK_THROWS_AS(sim_config_from(bad("mode_count", "4")), ConfigError);
  CHECK_THROWS_AS(sim_config_from(bad("duration_s", "0")), ConfigError);
  CHECK_THROWS_AS(sim_config_from(bad("detector.model", "pmt")), ConfigError);
  CHECK_THROWS_AS(sim_preset("huge"), ConfigError);
  KeyValueConfig empty;
  CHECK_THROWS_AS(sim_config_from(empty), ConfigError);
}
