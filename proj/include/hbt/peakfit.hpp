#pragma once

// Bounded weighted least-squares fit of
//   f(x) = 1 + C exp(-(x - mu)^2 / (2 sigma^2)) [+ s sin(2 pi x / P) + c cos(2 pi x / P)]
// to a normalized coincidence histogram.

#include <span>
#include <string>
#include <vector>

#include "hbt/correlator.hpp"

namespace hbt {

struct FitConstraints {
  double mu_nominal_ps = 0.0;
  double mu_halfrange_ps = 200.0;
  double sigma_min_ps = 60.0;
  double sigma_max_ps = 80.0;
  double contrast_min = -0.10;
  double contrast_max = 0.10;
  bool sine_term = false;
  double period_min_ps = 2000.0;
  double period_max_ps = 40000.0;

  double contrast_seed = 0.02;
  double sigma_seed_ps = 70.0;
  /// Only bins within this distance of mu_nominal are fitted; 0 means all.
  double fit_halfwidth_ps = 0.0;
  int max_iterations = 200;

  void validate() const;
};

enum class FitStatus { Converged, AtBound, Failed };

const char* to_string(FitStatus s);
FitStatus parse_fit_status(const std::string& s);

struct PeakFitResult {
  int pixel_a = -1;
  int pixel_b = -1;
  double shift_ps = 0.0; ///< histogram shift; raw position is mu_ps + shift_ps
  double contrast = 0.0;
  double contrast_err = 0.0;
  double mu_ps = 0.0;
  double mu_err = 0.0;
  double sigma_ps = 0.0;
  double sigma_err = 0.0;
  bool sine_enabled = false;
  double sine_amplitude = 0.0;
  double sine_period_ps = 0.0;
  double sine_phase = 0.0; ///< a sin(2 pi x / P + phase)
  double chi2 = 0.0;
  double chi2_per_dof = 0.0;
  int dof = 0;
  FitStatus status = FitStatus::Failed;
  std::string message;
  bool contrast_at_bound = false;
  bool mu_at_bound = false;
  bool sigma_at_bound = false;
  bool period_at_bound = false;
  int iterations = 0;
  double background = 0.0;     ///< sideband counts per bin
  std::uint64_t count_a = 0;   ///< input tags, for rates
  std::uint64_t count_b = 0;
  double duration_s = 0.0;
  std::vector<double> trace; ///< objective after every accepted step, starting at the seed

  double significance() const { return contrast_err > 0.0 ? contrast / contrast_err : 0.0; }
  bool usable() const { return status != FitStatus::Failed && contrast_err > 0.0; }
};

PeakFitResult fit_peak(const NormalizedHistogram& h, const FitConstraints& c);

struct BatchOptions {
  double exclusion_halfwidth_ps = 1000.0; ///< around mu_nominal, for normalization
  /// Extra zones in raw dt = t_b - t_a coordinates (shifted per histogram).
  std::vector<ExclusionZone> raw_zones;
  int workers = 1;
};

/// One result per histogram, in input order. A constraints span of size 1 is
/// applied to every histogram.
std::vector<PeakFitResult> batch_fit(std::span<const CoincidenceHistogram> hists,
                                     std::span<const FitConstraints> constraints, const BatchOptions& opt = {});

// fits.json, schema "hbt.fits/1"
void save_fits_json(const std::string& path, std::span<const PeakFitResult> fits, const std::string& extra_json = "{}");
std::vector<PeakFitResult> load_fits_json(const std::string& path);

} // namespace hbt
