#pragma once

// Synthetic coincidence histograms with a known peak.

#include <cmath>

#include "hbt/correlator.hpp"
#include "hbt/random.hpp"

namespace testutil {

struct PeakTruth {
  double contrast = 0.03;
  double mu_ps = 5000;
  double sigma_ps = 70;
  double background = 1000; // counts per bin
  double sine_amplitude = 0;
  double sine_period_ps = 8000;
  double sine_phase = 0;
};

inline double expected_ratio(const PeakTruth& t, double x) {
  const double z = (x - t.mu_ps) / t.sigma_ps;
  double f = 1 + t.contrast * std::exp(-0.5 * z * z);
  if (t.sine_amplitude != 0) f += t.sine_amplitude * std::sin(2 * M_PI * x / t.sine_period_ps + t.sine_phase);
  return f;
}

/// Poisson counts when rng is given, exact expectations (rounded to 1e-3 of a
/// count is not possible with integers, so background should be large) otherwise.
inline hbt::CoincidenceHistogram synth_histogram(const PeakTruth& t, hbt::Rng* rng, long long window = 20000,
                                                 long long width = 20) {
  hbt::CoincidenceHistogram h;
  h.window_ps = window;
  h.bin_width_ps = width;
  h.duration_ps = 1'000'000'000'000;
  const int n = static_cast<int>(2 * window / width);
  h.counts.resize(n);
  for (int i = 0; i < n; ++i) {
    const double lam = t.background * expected_ratio(t, h.bin_center(i));
    if (rng) {
      std::poisson_distribution<long long> p(lam);
      h.counts[i] = static_cast<std::uint64_t>(p(*rng));
    } else {
      h.counts[i] = static_cast<std::uint64_t>(std::llround(lam));
    }
    h.total += h.counts[i];
  }
  return h;
}

/// Merges adjacent bin pairs: the same events at twice the bin width.
inline hbt::CoincidenceHistogram rebin2(const hbt::CoincidenceHistogram& h) {
  auto r = h;
  r.bin_width_ps = 2 * h.bin_width_ps;
  r.counts.assign(h.counts.size() / 2, 0);
  for (std::size_t i = 0; i < r.counts.size(); ++i) r.counts[i] = h.counts[2 * i] + h.counts[2 * i + 1];
  return r;
}

} // namespace testutil
