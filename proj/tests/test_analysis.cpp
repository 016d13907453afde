#include "doctest.h"
#include "hbt/analysis.hpp"
#include "hbt/errors.hpp"
#include "test_util.hpp"

using namespace hbt;

namespace {

/// One converged fit per cross pair; matched wavelengths get contrast `c`.
std::vector<PeakFitResult> grid_fits(const ChannelMap& truth, double c) {
  std::vector<PeakFitResult> out;
  for (const auto& a : truth.arm_a())
    for (const auto& b : truth.arm_b()) {
      PeakFitResult f;
      f.pixel_a = a.pixel;
      f.pixel_b = b.pixel;
      f.status = FitStatus::Converged;
      f.contrast_err = 0.01;
      f.contrast = std::abs(a.lambda_center_nm - b.lambda_center_nm) < 1e-6 ? c : 0.0;
      f.count_a = 100;
      f.count_b = 200;
      out.push_back(f);
    }
  return out;
}

} // namespace

TEST_CASE("matrix puts matched wavelengths on the diagonal") {
  const auto map = ChannelMap::mirrored(6, 640, 0.11, 0.04);
  const auto m = build_matrix(grid_fits(map, 0.05), map);
  REQUIRE(m.rows() == 6);
  REQUIRE(m.cols() == 6);
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 6; ++j) CHECK((m.at(i, j)->contrast != 0) == (i == j));
  CHECK(m.spectrum_a[0] == 100);
  CHECK(m.spectrum_b[0] == 200);

  // flip arm B's pixel order: the same fits now line up on the anti-diagonal
  std::vector<SpectralChannel> b = map.arm_b();
  std::vector<SpectralChannel> flipped;
  for (std::size_t k = 0; k < b.size(); ++k) {
    auto c = b[k];
    c.lambda_center_nm = b[b.size() - 1 - k].lambda_center_nm;
    flipped.push_back(c);
  }
  const ChannelMap shuffled(map.arm_a(), flipped);
  const auto s = build_matrix(grid_fits(map, 0.05), shuffled);
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 6; ++j) CHECK((s.at(i, j)->contrast != 0) == (i + j == 5));

  const auto flat = build_matrix(grid_fits(map, 0.0), map);
  for (const auto& c : flat.cells) CHECK(c->contrast == 0);
}

TEST_CASE("matrix rejects inconsistent fits and skips masked pixels") {
  const auto map = ChannelMap::mirrored(3, 640, 0.11, 0.04);
  auto fits = grid_fits(map, 0.05);
  fits[0].pixel_a = 17;
  CHECK_THROWS_AS(build_matrix(fits, map), ConfigError);
  fits = grid_fits(map, 0.05);
  std::swap(fits[0].pixel_a, fits[0].pixel_b);
  CHECK_THROWS_AS(build_matrix(fits, map), ConfigError);
  const auto m = build_matrix(grid_fits(map, 0.05), map.with_masked({1}));
  CHECK(m.rows() == 2);
  CHECK(m.cols() == 3);
}

TEST_CASE("diagonal profiles") {
  const auto map = ChannelMap::mirrored(5, 640, 0.11, 0.04);
  auto fits = grid_fits(map, 0.05);
  const auto m = build_matrix(fits, map);
  const auto d0 = diagonal_profile(m, 0);
  CHECK(d0.size() == 5);
  for (const auto& p : d0) CHECK(p.contrast == 0.05);
  CHECK(diagonal_profile(m, 4).size() == 1);
  CHECK(diagonal_profile(m, -4).size() == 1);
  const auto p2 = diagonal_profile(m, 2), m2 = diagonal_profile(m, -2);
  REQUIRE(p2.size() == m2.size());
  for (std::size_t k = 0; k < p2.size(); ++k) CHECK(p2[k].contrast == m2[k].contrast);

  std::vector<DiagonalPoint> pts{{0, 1.0, 1.0, true}, {1, 3.0, 1.0, true}, {2, 100, 1, false}};
  const auto w = weighted_mean(pts);
  CHECK(w.mean == doctest::Approx(2.0));
  CHECK(w.err == doctest::Approx(1 / std::sqrt(2.0)));
  CHECK(w.count == 2);
  CHECK(w.chi2_per_dof == doctest::Approx(2.0));
}

TEST_CASE("matched histogram sum") {
  CoincidenceHistogram h;
  h.window_ps = 1000;
  h.bin_width_ps = 20;
  h.counts.resize(100);
  for (int i = 0; i < 100; ++i) h.counts[i] = i;
  h.total = 4950;
  std::vector<CoincidenceHistogram> two{h, h};
  const std::vector<double> zero{0, 0};
  const auto s = sum_matched_histograms(two, zero, 0);
  CHECK(s.used == 2);
  for (int i = 0; i < 100; ++i) CHECK(s.histogram.counts[i] == 2u * i);

  // a peak at +100 in the second histogram is moved onto the first's at 0
  auto a = h, b = h;
  std::fill(a.counts.begin(), a.counts.end(), 1);
  std::fill(b.counts.begin(), b.counts.end(), 1);
  a.counts[50] = 10; // [0, 20)
  b.counts[55] = 10; // [100, 120)
  std::vector<CoincidenceHistogram> ab{a, b};
  const std::vector<double> mu{0, 100};
  const auto t = sum_matched_histograms(ab, mu, 0);
  CHECK(t.histogram.window_ps == 900);
  CHECK(t.histogram.counts[45] == 20);
}

TEST_CASE("Heisenberg-Gabor budget") {
  const auto b = hg_budget(640, 0.040, 40);
  CHECK(b.ratio == doctest::Approx(14.72).epsilon(0.005));
  CHECK(b.max_contrast == doctest::Approx(0.068).epsilon(0.01));
  const auto lim = hg_budget(640, 0.040, 40 / b.ratio);
  CHECK(lim.ratio == doctest::Approx(1.0));
  CHECK(lim.max_contrast == doctest::Approx(1.0));
  const auto d = hg_budget(640, 0.040, 80);
  CHECK(d.ratio == doctest::Approx(2 * b.ratio));
  CHECK(d.max_contrast == doctest::Approx(b.max_contrast / 2));
  CHECK(hg_budget(640, 0.040, 1).max_contrast == 1.0);
  CHECK_THROWS_AS(hg_budget(640, 0.040, 0), DomainError);
  CHECK_THROWS_AS(hg_budget(640, -1, 40), DomainError);
}

TEST_CASE("analytic contrast") {
  const double sc = coherence_sigma_ps(freq_sigma_from_lambda(640, 0.040));
  const auto p = analytic_contrast(sc, 40, 0);
  CHECK(p.contrast == doctest::Approx(0.0678).epsilon(0.005));
  CHECK(p.peak_sigma_ps == doctest::Approx(56.7).epsilon(0.005));
  CHECK(analytic_contrast(3.84, 40, 29).peak_sigma_ps == doctest::Approx(70).epsilon(0.01));
  const auto ideal = analytic_contrast(12.5, 0, 0);
  CHECK(ideal.contrast == 1.0);
  CHECK(ideal.peak_sigma_ps == 12.5);
  // far from the coherence time both oracles agree
  CHECK(p.contrast == doctest::Approx(hg_budget(640, 0.040, 40).max_contrast).epsilon(0.01));
  CHECK_THROWS_AS(analytic_contrast(0, 40, 0), DomainError);
}

TEST_CASE("sensitivity gain") {
  std::vector<SensitivityInput> equal(70, {0.05, 1e5, 0, 0});
  CHECK(sensitivity_gain(equal).gain == doctest::Approx(std::sqrt(70.0)).epsilon(1e-12));
  CHECK(sensitivity_gain(equal).gain == doctest::Approx(8.37).epsilon(0.001));
  CHECK(std::abs(sensitivity_gain(equal).gain - 8.3) / 8.3 < 0.01);

  std::vector<SensitivityInput> one{{0.05, 1e5, 0, 0}};
  CHECK(sensitivity_gain(one).gain == 1.0);

  auto mixed = equal;
  for (int k = 0; k < 130; ++k) mixed.push_back({0.49 * 0.05, 1e5, 0, 0});
  CHECK(sensitivity_gain(mixed).gain == doctest::Approx(10.0).epsilon(0.01));

  // ratio form: common rescaling changes nothing
  auto scaled = mixed;
  for (auto& s : scaled) {
    s.visibility *= 3;
    s.rate *= 0.1;
  }
  CHECK(sensitivity_gain(scaled).gain == doctest::Approx(sensitivity_gain(mixed).gain));

  auto more = mixed;
  more.push_back({0.001, 10, 0, 0});
  CHECK(sensitivity_gain(more).gain >= sensitivity_gain(mixed).gain);
  CHECK(sensitivity_gain(mixed).gain >= 1.0);

  std::vector<SensitivityInput> none;
  CHECK_THROWS_AS(sensitivity_gain(none), DomainError);
  CHECK_THROWS(sensitivity_gain(one, 3));
}

TEST_CASE("sensitivity inputs from fits") {
  PeakFitResult f;
  f.status = FitStatus::Converged;
  f.contrast = 0.05;
  f.contrast_err = 0.01;
  f.count_a = 400;
  f.count_b = 100;
  f.duration_s = 2;
  PeakFitResult weak = f;
  weak.contrast = 0.01;
  std::vector<PeakFitResult> fits{f, weak};
  const auto in = sensitivity_inputs(fits, 3);
  REQUIRE(in.size() == 1);
  CHECK(in[0].rate == doctest::Approx(100));
  CHECK(in[0].visibility == 0.05);
}
