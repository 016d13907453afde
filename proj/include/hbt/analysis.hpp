#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hbt/core.hpp"
#include "hbt/correlator.hpp"
#include "hbt/peakfit.hpp"

namespace hbt {

/// Fit results on a wavelength-aligned grid: row i is the i-th unmasked arm-A
/// channel by increasing wavelength, column j the j-th arm-B channel. Matched
/// wavelengths sit on i == j whatever the arms' pixel orientation.
struct ContrastMatrix {
  std::vector<int> pixels_a, pixels_b;
  std::vector<double> lambda_a, lambda_b;
  std::vector<std::optional<PeakFitResult>> cells; ///< rows * cols, row-major
  std::vector<double> spectrum_a, spectrum_b;      ///< tag counts per bin

  int rows() const { return static_cast<int>(pixels_a.size()); }
  int cols() const { return static_cast<int>(pixels_b.size()); }
  const PeakFitResult* at(int i, int j) const;
};

ContrastMatrix build_matrix(std::span<const PeakFitResult> fits, const ChannelMap& map);

struct DiagonalPoint {
  int bin = 0; ///< row index
  double contrast = 0.0;
  double contrast_err = 0.0;
  bool valid = false; ///< usable fit present
};

/// Cells (i, i + offset). Empty when |offset| >= the smaller dimension.
std::vector<DiagonalPoint> diagonal_profile(const ContrastMatrix& m, int offset);

struct WeightedMean {
  double mean = 0.0;
  double err = 0.0;
  double chi2_per_dof = 0.0;
  int count = 0;
};

/// Inverse-variance mean of the valid points.
WeightedMean weighted_mean(std::span<const DiagonalPoint> points);

struct MatchedSum {
  CoincidenceHistogram histogram;
  double reference_mu_ps = 0.0; ///< nominal peak position in the summed frame
  int used = 0;
};

/// Shifts each histogram by whole bins so its nominal peak lands on
/// `reference_mu_ps` and sums them. The window shrinks by the largest shift so
/// every output bin receives all inputs.
MatchedSum sum_matched_histograms(std::span<const CoincidenceHistogram> hists, std::span<const double> nominal_mu_ps,
                                  double reference_mu_ps);

struct HGBudget {
  double lambda_nm = 0.0;
  double sigma_lambda_nm = 0.0;
  double sigma_t_ps = 0.0;
  double delta_f_hz = 0.0;
  double product = 0.0;            ///< delta_f * delta_t, dimensionless
  double limit = 1.0 / (4.0 * kPi);
  double ratio = 0.0;              ///< product / limit
  double max_contrast = 0.0;       ///< min(1, 1 / ratio)
};

HGBudget hg_budget(double lambda_nm, double sigma_lambda_nm, double sigma_t_ps);

struct ContrastPrediction {
  double contrast = 0.0;
  double peak_sigma_ps = 0.0;
};

/// Gaussian convolution of |g1|^2 (rms sigma_c) with the two arms' jitter and
/// offset residuals.
ContrastPrediction analytic_contrast(double sigma_c_ps, double jitter_sigma_ps, double offset_residual_ps);

struct SensitivityInput {
  double visibility = 0.0;
  double rate = 0.0; ///< mean detected rate, any unit common to all inputs
  int pixel_a = -1;
  int pixel_b = -1;
};

struct SensitivityReport {
  std::vector<SensitivityInput> selected;
  int reference = -1; ///< index into selected
  double gain = 0.0;
};

/// G = sqrt(sum V_i^2 n_i / (V_ref^2 n_ref)). The reference defaults to the
/// highest-visibility input.
SensitivityReport sensitivity_gain(std::span<const SensitivityInput> selected, std::optional<int> reference = {});

/// Usable fits with positive contrast; rate = sqrt(count_a count_b) / duration.
std::vector<SensitivityInput> sensitivity_inputs(std::span<const PeakFitResult> fits, double min_significance = 0.0);

} // namespace hbt
