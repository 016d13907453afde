#include "hbt/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "hbt/errors.hpp"

namespace hbt {

const PeakFitResult* ContrastMatrix::at(int i, int j) const {
  if (i < 0 || j < 0 || i >= rows() || j >= cols()) return nullptr;
  const auto& c = cells[static_cast<std::size_t>(i) * cols() + j];
  return c ? &*c : nullptr;
}

ContrastMatrix build_matrix(std::span<const PeakFitResult> fits, const ChannelMap& map) {
  ContrastMatrix m;
  std::map<int, int> row_of, col_of;
  for (const auto& c : map.wavelength_ordered(Arm::A)) {
    row_of[c.pixel] = m.rows();
    m.pixels_a.push_back(c.pixel);
    m.lambda_a.push_back(c.lambda_center_nm);
  }
  for (const auto& c : map.wavelength_ordered(Arm::B)) {
    col_of[c.pixel] = m.cols();
    m.pixels_b.push_back(c.pixel);
    m.lambda_b.push_back(c.lambda_center_nm);
  }
  m.cells.assign(static_cast<std::size_t>(m.rows()) * m.cols(), std::nullopt);
  m.spectrum_a.assign(m.rows(), 0.0);
  m.spectrum_b.assign(m.cols(), 0.0);

  for (const auto& f : fits) {
    const auto arm_a = map.arm_of(f.pixel_a);
    const auto arm_b = map.arm_of(f.pixel_b);
    if (!arm_a || !arm_b)
      throw ConfigError("fit for pair (" + std::to_string(f.pixel_a) + ", " + std::to_string(f.pixel_b) +
                        ") refers to a pixel outside the channel map");
    if (*arm_a != Arm::A || *arm_b != Arm::B)
      throw ConfigError("fit for pair (" + std::to_string(f.pixel_a) + ", " + std::to_string(f.pixel_b) +
                        ") does not run from arm A to arm B");
    if (map.is_masked(f.pixel_a) || map.is_masked(f.pixel_b)) continue;
    const int i = row_of.at(f.pixel_a);
    const int j = col_of.at(f.pixel_b);
    m.cells[static_cast<std::size_t>(i) * m.cols() + j] = f;
    m.spectrum_a[i] = static_cast<double>(f.count_a);
    m.spectrum_b[j] = static_cast<double>(f.count_b);
  }
  return m;
}

std::vector<DiagonalPoint> diagonal_profile(const ContrastMatrix& m, int offset) {
  std::vector<DiagonalPoint> out;
  for (int i = 0; i < m.rows(); ++i) {
    const int j = i + offset;
    if (j < 0 || j >= m.cols()) continue;
    DiagonalPoint p;
    p.bin = i;
    if (const auto* f = m.at(i, j)) {
      p.contrast = f->contrast;
      p.contrast_err = f->contrast_err;
      p.valid = f->usable();
    }
    out.push_back(p);
  }
  return out;
}

WeightedMean weighted_mean(std::span<const DiagonalPoint> points) {
  WeightedMean w;
  double sw = 0.0, swx = 0.0;
  for (const auto& p : points) {
    if (!p.valid) continue;
    const double wt = 1.0 / (p.contrast_err * p.contrast_err);
    sw += wt;
    swx += wt * p.contrast;
    ++w.count;
  }
  if (w.count == 0) return w;
  w.mean = swx / sw;
  w.err = 1.0 / std::sqrt(sw);
  double chi2 = 0.0;
  for (const auto& p : points) {
    if (!p.valid) continue;
    const double r = (p.contrast - w.mean) / p.contrast_err;
    chi2 += r * r;
  }
  w.chi2_per_dof = w.count > 1 ? chi2 / (w.count - 1) : 0.0;
  return w;
}

MatchedSum sum_matched_histograms(std::span<const CoincidenceHistogram> hists, std::span<const double> nominal_mu_ps,
                                  double reference_mu_ps) {
  if (hists.size() != nominal_mu_ps.size()) throw ConfigError("sum_matched_histograms: one nominal mu per histogram");
  MatchedSum s;
  s.reference_mu_ps = reference_mu_ps;
  const CoincidenceHistogram* first = nullptr;
  std::vector<long> shift_bins(hists.size(), 0);
  long max_shift = 0;
  for (std::size_t k = 0; k < hists.size(); ++k) {
    const auto& h = hists[k];
    if (h.missing || h.counts.empty()) continue;
    if (!first) first = &h;
    if (h.window_ps != first->window_ps || h.bin_width_ps != first->bin_width_ps)
      throw ConfigError("sum_matched_histograms: histograms use different binning");
    shift_bins[k] = std::lround((nominal_mu_ps[k] - reference_mu_ps) / static_cast<double>(h.bin_width_ps));
    max_shift = std::max(max_shift, std::labs(shift_bins[k]));
  }
  auto& out = s.histogram;
  if (!first) {
    out.missing = true;
    return s;
  }
  const Picoseconds width = first->bin_width_ps;
  const Picoseconds window = first->window_ps - max_shift * width;
  if (window <= 0) throw ConfigError("sum_matched_histograms: nominal positions spread wider than the window");
  out.window_ps = window;
  out.bin_width_ps = width;
  out.duration_ps = first->duration_ps;
  const int bins = histogram_bins(window, width);
  out.counts.assign(bins, 0);
  for (std::size_t k = 0; k < hists.size(); ++k) {
    const auto& h = hists[k];
    if (h.missing || h.counts.empty()) continue;
    // output bin i covers input bin i + max_shift + shift
    const long off = max_shift + shift_bins[k];
    for (int i = 0; i < bins; ++i) out.counts[i] += h.counts[static_cast<std::size_t>(i + off)];
    out.count_a += h.count_a;
    out.count_b += h.count_b;
    ++s.used;
  }
  for (auto c : out.counts) out.total += c;
  return s;
}

HGBudget hg_budget(double lambda_nm, double sigma_lambda_nm, double sigma_t_ps) {
  if (!(sigma_t_ps > 0.0)) throw DomainError("hg_budget: sigma_t must be positive");
  HGBudget b;
  b.lambda_nm = lambda_nm;
  b.sigma_lambda_nm = sigma_lambda_nm;
  b.sigma_t_ps = sigma_t_ps;
  b.delta_f_hz = freq_sigma_from_lambda(lambda_nm, sigma_lambda_nm);
  b.product = b.delta_f_hz * ps_to_s(sigma_t_ps);
  b.ratio = b.product / b.limit;
  b.max_contrast = std::min(1.0, 1.0 / b.ratio);
  return b;
}

ContrastPrediction analytic_contrast(double sigma_c_ps, double jitter_sigma_ps, double offset_residual_ps) {
  if (!(sigma_c_ps > 0.0)) throw DomainError("analytic_contrast: sigma_c must be positive");
  const double root = std::sqrt(sigma_c_ps * sigma_c_ps + 2.0 * jitter_sigma_ps * jitter_sigma_ps +
                                2.0 * offset_residual_ps * offset_residual_ps);
  return {sigma_c_ps / root, root};
}

SensitivityReport sensitivity_gain(std::span<const SensitivityInput> selected, std::optional<int> reference) {
  if (selected.empty()) throw DomainError("sensitivity_gain: empty selection");
  SensitivityReport r;
  r.selected.assign(selected.begin(), selected.end());
  for (const auto& s : selected)
    if (!(s.rate >= 0.0) || !std::isfinite(s.visibility)) throw DomainError("sensitivity_gain: invalid input");
  int ref = 0;
  if (reference) {
    if (*reference < 0 || *reference >= static_cast<int>(selected.size()))
      throw DomainError("sensitivity_gain: reference index out of range");
    ref = *reference;
  } else {
    for (int i = 1; i < static_cast<int>(selected.size()); ++i)
      if (selected[i].visibility > selected[ref].visibility) ref = i;
  }
  r.reference = ref;
  const double ref_info = selected[ref].visibility * selected[ref].visibility * selected[ref].rate;
  if (!(ref_info > 0.0)) throw DomainError("sensitivity_gain: reference carries no information");
  double total = 0.0;
  for (const auto& s : selected) total += s.visibility * s.visibility * s.rate;
  r.gain = std::sqrt(total / ref_info);
  return r;
}

std::vector<SensitivityInput> sensitivity_inputs(std::span<const PeakFitResult> fits, double min_significance) {
  std::vector<SensitivityInput> out;
  for (const auto& f : fits) {
    if (!f.usable() || f.contrast <= 0.0 || f.significance() < min_significance) continue;
    const double n = std::sqrt(static_cast<double>(f.count_a) * static_cast<double>(f.count_b));
    const double rate = f.duration_s > 0.0 ? n / f.duration_s : n;
    out.push_back({f.contrast, rate, f.pixel_a, f.pixel_b});
  }
  return out;
}

} // namespace hbt
