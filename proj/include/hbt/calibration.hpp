#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "hbt/core.hpp"
#include "hbt/peakfit.hpp"

namespace hbt {

struct LineReference {
  double lambda_nm = 0.0;
  std::string label;
};

/// Reads "lambda_nm [label]" lines; '#' starts a comment.
std::vector<LineReference> load_line_references(const std::string& path);
/// Reads a spectrum as one count per line, or "pixel,count" CSV rows (header allowed).
std::vector<double> load_spectrum_csv(const std::string& path);

/// Sub-pixel positions of the `expected_count` most prominent lines, sorted.
/// Pixel k is taken to span [k - 0.5, k + 0.5).
std::vector<double> find_line_centroids(std::span<const double> spectrum_counts, int expected_count);

struct WavelengthFit {
  Arm arm = Arm::A;
  double intercept_nm = 0.0; ///< wavelength at pixel 0
  double slope_nm_per_px = 0.0;
  double residual_rms_nm = 0.0;
  int points = 0;

  double lambda_at(double pixel) const { return intercept_nm + slope_nm_per_px * pixel; }
};

/// Least-squares line through (centroid_k, line_k), paired in the given order.
WavelengthFit fit_wavelength_map(std::span<const double> centroids, std::span<const LineReference> lines,
                                 Arm arm = Arm::A);

/// One fitted peak position mu_ij for pixel i of arm A and pixel j of arm B.
struct PairMeasurement {
  int pixel_a = 0;
  int pixel_b = 0;
  double mu_ps = 0.0;
  double mu_err_ps = 0.0;
};

/// mu_ij = delay + o_i - o_j. The reference pixel has offset exactly 0 and the
/// offsets of the other arm average to 0.
struct OffsetTable {
  int reference_pixel = -1;
  double delay_ps = 0.0;
  double delay_err_ps = 0.0;
  std::map<int, double> offset_ps;
  std::map<int, double> offset_err_ps;
  std::map<int, Arm> arm;
  double chi2 = 0.0;
  int dof = 0;
  int pairs_used = 0;

  bool has(int pixel) const { return offset_ps.count(pixel) != 0; }
  /// 0 for pixels without a solution.
  double offset(int pixel) const;
  double predicted(int pixel_a, int pixel_b) const { return delay_ps + offset(pixel_a) - offset(pixel_b); }
  double chi2_per_dof() const { return dof > 0 ? chi2 / dof : 0.0; }

  void save_json(const std::string& path) const;
  static OffsetTable load_json(const std::string& path);
};

OffsetTable solve_offsets(std::span<const PairMeasurement> measurements, int reference_pixel);

/// Pairs whose fit is usable for the offset network: converged, or at a bound
/// other than mu, with contrast significance above `min_significance`. The
/// histogram shift is added back so positions are raw t_b - t_a.
std::vector<PairMeasurement> offset_inputs(std::span<const PeakFitResult> fits, double min_significance = 3.0);

} // namespace hbt
