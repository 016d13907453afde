#include "hbt/thermal_sim.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <boost/math/special_functions/erf.hpp>
#include <cmath>
#include <fstream>
#include <sstream>

#include "hbt/analysis.hpp"
#include "hbt/errors.hpp"
#include "hbt/tag_io.hpp"
#include "json.hpp"

namespace hbt {

namespace {

using cplx = std::complex<double>;

constexpr double kClip = 10.0;           // intensity clip K, in units of the mean
constexpr double kGapSigmas = 6.0;       // candidates further apart are independent
constexpr double kTableSigmas = 8.0;     // covariance tables cover +-8 sigma_c
constexpr int kTableStepsPerSigma = 100;
constexpr int kModePool = 16;

double exp_draw(Rng& rng) { return -std::log1p(-uniform01(rng)); }

double normal_draw(Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  return n(rng);
}

} // namespace

void SimConfig::validate() const {
  if (channel_map.arm_a().empty() && channel_map.arm_b().empty()) throw ConfigError("simulation: empty channel map");
  if (!(rate_per_channel_cps > 0.0) || !std::isfinite(rate_per_channel_cps))
    throw ConfigError("simulation: rate_per_channel_cps must be > 0");
  if (!(duration_s > 0.0) || duration_s > 1e6) throw ConfigError("simulation: duration_s must be in (0, 1e6]");
  if (mode_count < 8) throw ConfigError("simulation: mode_count must be >= 8");
  detector.validate();
  if (!(detector.pde > 0.0)) throw ConfigError("simulation: detector.pde must be > 0");
  const auto chans = sim_channels(channel_map);
  std::vector<bool> used(chans.size(), false);
  for (const auto& g : shared_band_groups) {
    if (g.size() < 2) throw ConfigError("simulation: a shared band group needs at least two channels");
    auto sorted = g;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < sorted.size(); ++i) {
      const int c = sorted[i];
      if (c < 0 || c >= static_cast<int>(chans.size()))
        throw ConfigError("simulation: shared band group refers to channel " + std::to_string(c));
      if (i > 0 && c != sorted[i - 1] + 1)
        throw ConfigError("simulation: shared band group channels must be adjacent");
      if (used[c]) throw ConfigError("simulation: channel " + std::to_string(c) + " is in two shared groups");
      used[c] = true;
    }
  }
}

std::vector<SimChannel> sim_channels(const ChannelMap& map) {
  std::vector<SimChannel> out;
  auto make = [](const SpectralChannel& c) {
    SimChannel s;
    s.lambda_nm = c.lambda_center_nm;
    s.sigma_lambda_nm = c.lambda_sigma_nm;
    s.sigma_f_hz = freq_sigma_from_lambda(c.lambda_center_nm, c.lambda_sigma_nm);
    s.sigma_c_ps = coherence_sigma_ps(s.sigma_f_hz);
    return s;
  };
  // all channels, masked included: the mask is an analysis choice, not physics
  auto a = map.arm_a();
  auto b = map.arm_b();
  auto by_lambda = [](const auto& x, const auto& y) { return x.lambda_center_nm < y.lambda_center_nm; };
  std::sort(a.begin(), a.end(), by_lambda);
  std::sort(b.begin(), b.end(), by_lambda);
  std::vector<bool> b_used(b.size(), false);
  for (const auto& ca : a) {
    SimChannel s = make(ca);
    s.pixel_a = ca.pixel;
    int best = -1;
    double best_d = 0.0;
    for (std::size_t j = 0; j < b.size(); ++j) {
      if (b_used[j]) continue;
      const double d = std::abs(b[j].lambda_center_nm - ca.lambda_center_nm);
      const double tol = 0.5 * std::max(b[j].lambda_sigma_nm, ca.lambda_sigma_nm);
      if (d <= tol && (best < 0 || d < best_d)) {
        best = static_cast<int>(j);
        best_d = d;
      }
    }
    if (best >= 0) {
      b_used[best] = true;
      s.pixel_b = b[best].pixel;
    }
    s.index = static_cast<int>(out.size());
    out.push_back(s);
  }
  for (std::size_t j = 0; j < b.size(); ++j) {
    if (b_used[j]) continue;
    SimChannel s = make(b[j]);
    s.pixel_b = b[j].pixel;
    s.index = static_cast<int>(out.size());
    out.push_back(s);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Grid sampler

std::vector<double> gaussian_mode_frequencies(double sigma_f_hz, int mode_count, Rng& rng) {
  if (mode_count < 1) throw ConfigError("mode_count must be >= 1");
  std::vector<double> f(static_cast<std::size_t>(mode_count));
  for (int m = 0; m < mode_count; ++m) {
    double u = (m + uniform01(rng)) / mode_count;
    u = std::clamp(u, 1e-12, 1.0 - 1e-12);
    f[m] = sigma_f_hz * std::sqrt(2.0) * boost::math::erf_inv(2.0 * u - 1.0);
  }
  return f;
}

IntensityTrace simulate_channel_intensity(const SimChannel& channel, int mode_count, double duration_ps,
                                          std::uint64_t seed, double dt_ps) {
  if (mode_count < 1) throw ConfigError("simulate_channel_intensity: mode_count must be >= 1");
  if (!(duration_ps >= 0.0)) throw ConfigError("simulate_channel_intensity: negative duration");
  const double sigma_f = channel.sigma_f_hz > 0.0
                             ? channel.sigma_f_hz
                             : freq_sigma_from_lambda(channel.lambda_nm, channel.sigma_lambda_nm);
  const double sigma_c = coherence_sigma_ps(sigma_f);
  const double max_dt = sigma_c / 10.0;
  if (dt_ps <= 0.0) dt_ps = max_dt;
  if (dt_ps > max_dt * (1.0 + 1e-12))
    throw ConfigError("simulate_channel_intensity: dt " + std::to_string(dt_ps) + " ps exceeds sigma_c/10 = " +
                      std::to_string(max_dt) + " ps");

  Rng rng = make_rng(seed, Stream::Trace, static_cast<std::uint64_t>(channel.index));
  const auto freqs = gaussian_mode_frequencies(sigma_f, mode_count, rng);
  std::vector<cplx> amp(freqs.size());
  for (auto& a : amp) a = complex_normal(rng);

  IntensityTrace tr;
  tr.dt_ps = dt_ps;
  const auto n = static_cast<std::size_t>(std::ceil(duration_ps / dt_ps));
  tr.intensity.resize(n);
  const std::size_t M = freqs.size();
  std::vector<cplx> ph(M), step(M);
  auto exact = [&](std::size_t k) {
    const double t = (static_cast<double>(k) + 0.5) * dt_ps * 1e-12;
    for (std::size_t m = 0; m < M; ++m) ph[m] = amp[m] * std::polar(1.0, 2.0 * kPi * freqs[m] * t);
  };
  for (std::size_t m = 0; m < M; ++m) step[m] = std::polar(1.0, 2.0 * kPi * freqs[m] * dt_ps * 1e-12);
  double sum = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    if (k % 1024 == 0) exact(k);
    cplx e = 0.0;
    for (std::size_t m = 0; m < M; ++m) {
      e += ph[m];
      ph[m] *= step[m];
    }
    tr.intensity[k] = std::norm(e);
    sum += tr.intensity[k];
  }
  if (n > 0) {
    if (!(sum > 0.0)) throw DomainError("simulate_channel_intensity: zero intensity trace");
    const double mean = sum / static_cast<double>(n);
    for (auto& v : tr.intensity) v /= mean;
  }
  return tr;
}

PhotonArms sample_photons(const IntensityTrace& trace, double rate_cps, std::uint64_t seed) {
  if (!(rate_cps >= 0.0)) throw ConfigError("sample_photons: rate must be >= 0");
  PhotonArms out;
  if (trace.intensity.empty() || rate_cps == 0.0) return out;
  Rng rng = make_rng(seed, Stream::Source, 0);
  const double per_ps = 2.0 * rate_cps * 1e-12;
  double need = exp_draw(rng); // integrated rate left before the next photon
  for (std::size_t k = 0; k < trace.intensity.size(); ++k) {
    const double lam = per_ps * trace.intensity[k];
    double t = static_cast<double>(k) * trace.dt_ps;
    const double end = t + trace.dt_ps;
    if (lam <= 0.0) continue;
    while (true) {
      const double reach = t + need / lam;
      if (reach >= end) {
        need -= (end - t) * lam;
        break;
      }
      t = reach;
      ((rng() >> 63) ? out.b : out.a).push_back(t);
      need = exp_draw(rng);
    }
  }
  return out;
}

std::vector<Picoseconds> to_picoseconds(const std::vector<double>& t_ps) {
  std::vector<Picoseconds> out(t_ps.size());
  for (std::size_t i = 0; i < t_ps.size(); ++i) out[i] = std::llround(t_ps[i]);
  return out;
}

// ---------------------------------------------------------------------------
// Detector

double pixel_timing_offset_ps(const DetectorConfig& det, std::uint64_t seed, int pixel) {
  if (det.offset_residual_ps <= 0.0) return 0.0;
  Rng rng = make_rng(seed, Stream::Offset, static_cast<std::uint64_t>(pixel));
  return det.offset_residual_ps * normal_draw(rng);
}

DetectorModel::DetectorModel(const ChannelMap& map, const DetectorConfig& det, std::uint64_t seed,
                             double duration_ps)
    : map_(map), det_(det), seed_(seed), duration_ps_(duration_ps) {
  det_.validate();
  const auto n = static_cast<std::size_t>(std::max(map.pixel_count(), 0));
  out_.by_pixel.resize(n);
  out_.duration_ps = static_cast<Picoseconds>(std::llround(duration_ps));
  done_.assign(n, false);
  copies_.resize(n);
}

void DetectorModel::process_pixel(int pixel, std::vector<double>&& photons) {
  if (pixel < 0 || pixel >= static_cast<int>(done_.size()))
    throw ConfigError("detector: pixel " + std::to_string(pixel) + " outside the sensor");
  if (done_[pixel]) throw ConfigError("detector: pixel " + std::to_string(pixel) + " processed twice");
  done_[pixel] = true;
  if (det_.dead_pixels.count(pixel)) return;

  const auto up = static_cast<std::uint64_t>(pixel);
  const Picoseconds limit = out_.duration_ps;
  auto& out = out_.by_pixel[pixel];
  out.reserve(static_cast<std::size_t>(photons.size() * det_.pde) + 16);

  Rng eff = make_rng(seed_, Stream::Efficiency, up);
  Rng jit = make_rng(seed_, Stream::Jitter, up);
  const double shift = pixel_timing_offset_ps(det_, seed_, pixel) +
                       (map_.arm_of(pixel) == Arm::B ? det_.fiber_delay_ps : 0.0);
  for (double t : photons) {
    if (det_.pde < 1.0 && uniform01(eff) >= det_.pde) continue;
    if (det_.jitter_sigma_ps > 0.0) t += det_.jitter_sigma_ps * normal_draw(jit);
    const Picoseconds r = std::llround(t + shift);
    if (r < 0 || r >= limit) {
      ++out_.out_of_range;
      continue;
    }
    out.push_back(r);
    ++out_.signal;
  }
  photons = {};

  if (det_.dark_rate_cps > 0.0) {
    Rng dark = make_rng(seed_, Stream::Dark, up);
    std::poisson_distribution<long long> count(det_.dark_rate_cps * ps_to_s(duration_ps_));
    const long long n = count(dark);
    for (long long i = 0; i < n; ++i) {
      const auto r = static_cast<Picoseconds>(uniform01(dark) * static_cast<double>(limit));
      out.push_back(std::min(r, limit - 1));
    }
    out_.dark += static_cast<std::uint64_t>(n);
  }
  std::sort(out.begin(), out.end());

  if (det_.crosstalk_prob > 0.0 && !out.empty()) {
    Rng xt = make_rng(seed_, Stream::Crosstalk, up);
    std::geometric_distribution<long long> skip(det_.crosstalk_prob);
    for (int d : {-1, +1}) {
      const int target = pixel + d;
      if (target < 0 || target >= static_cast<int>(done_.size()) || det_.dead_pixels.count(target)) continue;
      auto& dst = copies_[target];
      for (long long i = skip(xt); i < static_cast<long long>(out.size()); i += 1 + skip(xt)) {
        const double j = det_.crosstalk_jitter_ps > 0.0 ? det_.crosstalk_jitter_ps * normal_draw(xt) : 0.0;
        const Picoseconds r = out[i] + std::llround(j);
        if (r < 0 || r >= limit) continue;
        dst.push_back(r);
      }
    }
  }
}

DetectedStreams DetectorModel::finish() {
  for (int p = 0; p < static_cast<int>(done_.size()); ++p)
    if (!done_[p]) process_pixel(p, {});
  for (std::size_t p = 0; p < copies_.size(); ++p) {
    auto& c = copies_[p];
    if (c.empty()) continue;
    std::sort(c.begin(), c.end());
    auto& v = out_.by_pixel[p];
    const auto mid = static_cast<std::ptrdiff_t>(v.size());
    v.insert(v.end(), c.begin(), c.end());
    std::inplace_merge(v.begin(), v.begin() + mid, v.end());
    out_.crosstalk += c.size();
    c = {};
  }
  return std::move(out_);
}

DetectedStreams apply_detector(std::vector<std::vector<double>> photons_by_pixel, const ChannelMap& map,
                               const DetectorConfig& det, std::uint64_t seed, double duration_ps) {
  DetectorModel model(map, det, seed, duration_ps);
  for (std::size_t p = 0; p < photons_by_pixel.size(); ++p) {
    if (photons_by_pixel[p].empty()) continue;
    auto& v = photons_by_pixel[p];
    if (!std::is_sorted(v.begin(), v.end())) throw OrderingError("apply_detector: input not sorted");
    model.process_pixel(static_cast<int>(p), std::move(v));
  }
  return model.finish();
}

// ---------------------------------------------------------------------------
// Cluster sampler

namespace {

struct CovTable {
  double step_ps = 1.0;
  int half = 0;
  std::vector<cplx> v;

  cplx at(double tau) const {
    const double u = tau / step_ps + half;
    if (u < 0.0 || u > 2.0 * half) return 0.0;
    const auto i = static_cast<int>(u);
    if (i >= 2 * half) return v[2 * half];
    const double f = u - i;
    return v[i] * (1.0 - f) + v[i + 1] * f;
  }
};

struct GroupModel {
  std::vector<int> channels;
  double gap_ps = 0.0;
  std::vector<std::vector<CovTable>> pool; // pool[s][k * g + k']
};

/// Covariance tables C_kk'(tau) = sum_m w_km w_k'm exp(i 2 pi f_m tau) for
/// weights normalized to sum_m w_km^2 = 1.
std::vector<CovTable> build_tables(const std::vector<double>& freqs, const std::vector<std::vector<double>>& w,
                                   double sigma_c_ps) {
  const int g = static_cast<int>(w.size());
  const int half = static_cast<int>(kTableSigmas * kTableStepsPerSigma);
  const double step = sigma_c_ps / kTableStepsPerSigma;
  std::vector<CovTable> t(static_cast<std::size_t>(g * g));
  for (auto& x : t) {
    x.step_ps = step;
    x.half = half;
    x.v.assign(2 * half + 1, 0.0);
  }
  for (std::size_t m = 0; m < freqs.size(); ++m) {
    const double omega = 2.0 * kPi * freqs[m] * 1e-12;
    const cplx rot = std::polar(1.0, omega * step);
    cplx ph = std::polar(1.0, -omega * step * half);
    std::vector<double> wk(g);
    for (int k = 0; k < g; ++k) wk[k] = w[k][m];
    for (int i = 0; i <= 2 * half; ++i) {
      if (i % 256 == 0) ph = std::polar(1.0, omega * step * (i - half));
      for (int a = 0; a < g; ++a) {
        if (wk[a] == 0.0) continue;
        for (int b = 0; b < g; ++b) t[a * g + b].v[i] += (wk[a] * wk[b]) * ph;
      }
      ph *= rot;
    }
  }
  return t;
}

GroupModel build_group(const std::vector<SimChannel>& chans, const std::vector<int>& members, int mode_count,
                       std::uint64_t seed) {
  GroupModel gm;
  gm.channels = members;
  const int g = static_cast<int>(members.size());
  double sigma_c_max = 0.0, sigma_f_min = 1e300, sigma_f_max = 0.0;
  for (int c : members) {
    sigma_c_max = std::max(sigma_c_max, chans[c].sigma_c_ps);
    sigma_f_min = std::min(sigma_f_min, chans[c].sigma_f_hz);
    sigma_f_max = std::max(sigma_f_max, chans[c].sigma_f_hz);
  }
  gm.gap_ps = kGapSigmas * sigma_c_max;
  Rng rng = make_rng(seed, Stream::Modes, static_cast<std::uint64_t>(members.front()));

  std::vector<double> centre(g);
  double mean_f = 0.0;
  for (int k = 0; k < g; ++k) mean_f += frequency_hz(chans[members[k]].lambda_nm) / g;
  for (int k = 0; k < g; ++k) centre[k] = frequency_hz(chans[members[k]].lambda_nm) - mean_f;

  for (int s = 0; s < kModePool; ++s) {
    std::vector<double> freqs;
    std::vector<std::vector<double>> w(g);
    if (g == 1) {
      freqs = gaussian_mode_frequencies(chans[members[0]].sigma_f_hz, mode_count, rng);
      w[0].assign(freqs.size(), 1.0 / std::sqrt(static_cast<double>(freqs.size())));
    } else {
      // uniform strata across the group band; mode_count modes per +-4 sigma
      const double lo = *std::min_element(centre.begin(), centre.end()) - 4.0 * sigma_f_max;
      const double hi = *std::max_element(centre.begin(), centre.end()) + 4.0 * sigma_f_max;
      const double df = 8.0 * sigma_f_min / mode_count;
      const auto L = static_cast<int>(std::ceil((hi - lo) / df));
      for (int m = 0; m < L; ++m) freqs.push_back(lo + (m + uniform01(rng)) * df);
      for (int k = 0; k < g; ++k) {
        const double sf = chans[members[k]].sigma_f_hz;
        double norm = 0.0;
        w[k].resize(freqs.size());
        for (std::size_t m = 0; m < freqs.size(); ++m) {
          const double d = freqs[m] - centre[k];
          w[k][m] = std::exp(-d * d / (4.0 * sf * sf));
          norm += w[k][m] * w[k][m];
        }
        for (auto& x : w[k]) x /= std::sqrt(norm);
      }
    }
    gm.pool.push_back(build_tables(freqs, w, sigma_c_max));
  }
  return gm;
}

struct Candidate {
  double t;
  int k; // position within the group
};

} // namespace

std::vector<ChannelTruth> channel_truth(const SimConfig& cfg) {
  const auto chans = sim_channels(cfg.channel_map);
  const auto& det = cfg.detector;
  std::vector<ChannelTruth> out;
  for (const auto& c : chans) {
    ChannelTruth t;
    t.channel = c;
    t.source_rate_cps = 2.0 * cfg.rate_per_channel_cps / det.pde;
    auto rate = [&](int pixel) {
      if (pixel < 0 || det.dead_pixels.count(pixel)) return 0.0;
      return cfg.rate_per_channel_cps + det.dark_rate_cps;
    };
    t.expected_rate_a = rate(c.pixel_a);
    t.expected_rate_b = rate(c.pixel_b);
    double dilution = 0.0;
    if (t.expected_rate_a > 0.0 && t.expected_rate_b > 0.0)
      dilution = cfg.rate_per_channel_cps * cfg.rate_per_channel_cps / (t.expected_rate_a * t.expected_rate_b);
    const auto pair = analytic_contrast(c.sigma_c_ps, det.jitter_sigma_ps, 0.0);
    const auto summed = analytic_contrast(c.sigma_c_ps, det.jitter_sigma_ps, det.offset_residual_ps);
    t.pair_contrast = pair.contrast * dilution;
    t.pair_sigma_ps = pair.peak_sigma_ps;
    t.summed_contrast = summed.contrast * dilution;
    t.summed_sigma_ps = summed.peak_sigma_ps;
    const double oa = c.pixel_a >= 0 ? pixel_timing_offset_ps(det, cfg.seed, c.pixel_a) : 0.0;
    const double ob = c.pixel_b >= 0 ? pixel_timing_offset_ps(det, cfg.seed, c.pixel_b) : 0.0;
    t.nominal_mu_ps = det.fiber_delay_ps + ob - oa;
    out.push_back(t);
  }
  return out;
}

SimulatedData simulate_detections(const SimConfig& cfg) {
  cfg.validate();
  SimulatedData data;
  const auto chans = sim_channels(cfg.channel_map);
  data.truth = channel_truth(cfg);
  const double T = s_to_ps(cfg.duration_s);

  std::vector<std::vector<int>> groups;
  std::vector<bool> grouped(chans.size(), false);
  for (const auto& g : cfg.shared_band_groups) {
    auto s = g;
    std::sort(s.begin(), s.end());
    for (int c : s) grouped[c] = true;
    groups.push_back(s);
  }
  for (std::size_t c = 0; c < chans.size(); ++c)
    if (!grouped[c]) groups.push_back({static_cast<int>(c)});
  std::sort(groups.begin(), groups.end());

  DetectorModel detector(cfg.channel_map, cfg.detector, cfg.seed, T);
  const double source_rate = 2.0 * cfg.rate_per_channel_cps / cfg.detector.pde; // both arms
  const double cand_per_ps = source_rate * kClip / -std::expm1(-kClip) * 1e-12;
  const double p_single = -std::expm1(-kClip) / kClip;

  for (const auto& members : groups) {
    const GroupModel gm = build_group(chans, members, cfg.mode_count, cfg.seed);
    const int g = static_cast<int>(members.size());
    Rng rng = make_rng(cfg.seed, Stream::Source, static_cast<std::uint64_t>(members.front()));
    std::vector<std::vector<double>> arm_a(g), arm_b(g);
    const double expect = source_rate * cfg.duration_s * 0.5 * 1.1 + 16;
    for (int k = 0; k < g; ++k) {
      if (chans[members[k]].pixel_a >= 0) arm_a[k].reserve(static_cast<std::size_t>(expect));
      if (chans[members[k]].pixel_b >= 0) arm_b[k].reserve(static_cast<std::size_t>(expect));
    }

    auto emit = [&](const Candidate& c) {
      ++data.photons;
      const bool to_b = (rng() >> 63) != 0;
      const auto& ch = chans[members[c.k]];
      if (to_b) {
        if (ch.pixel_b >= 0) arm_b[c.k].push_back(c.t);
      } else if (ch.pixel_a >= 0) {
        arm_a[c.k].push_back(c.t);
      }
    };

    std::vector<Candidate> cluster;
    Eigen::MatrixXcd cov;
    Eigen::VectorXcd z, field;
    auto flush = [&] {
      const std::size_t n = cluster.size();
      if (n == 1) {
        if (uniform01(rng) < p_single) emit(cluster[0]);
      } else if (n >= 2) {
        const auto& tables = gm.pool[rng() % kModePool];
        auto C = [&](std::size_t i, std::size_t j) {
          return tables[cluster[i].k * g + cluster[j].k].at(cluster[i].t - cluster[j].t);
        };
        field.resize(static_cast<Eigen::Index>(n));
        if (n == 2) {
          cplx c = C(0, 1);
          const double mag = std::abs(c);
          if (mag > 1.0) c /= mag;
          const cplx z1 = complex_normal(rng), z2 = complex_normal(rng);
          field[0] = z1;
          field[1] = std::conj(c) * z1 + std::sqrt(std::max(0.0, 1.0 - std::norm(c))) * z2;
        } else {
          cov.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j <= i; ++j) {
              const cplx v = i == j ? cplx(1.0) : C(i, j);
              cov(i, j) = v;
              cov(j, i) = std::conj(v);
            }
          Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(cov);
          z.resize(static_cast<Eigen::Index>(n));
          for (std::size_t i = 0; i < n; ++i)
            z[i] = complex_normal(rng) * std::sqrt(std::max(0.0, es.eigenvalues()[i]));
          field = es.eigenvectors() * z;
        }
        for (std::size_t i = 0; i < n; ++i)
          if (uniform01(rng) * kClip < std::norm(field[static_cast<Eigen::Index>(i)])) emit(cluster[i]);
      }
      cluster.clear();
    };

    std::vector<double> next(g);
    for (int k = 0; k < g; ++k) next[k] = exp_draw(rng) / cand_per_ps;
    while (true) {
      int k = 0;
      for (int q = 1; q < g; ++q)
        if (next[q] < next[k]) k = q;
      const double t = next[k];
      if (!(t < T)) break;
      ++data.candidates;
      if (!cluster.empty() && t - cluster.back().t > gm.gap_ps) flush();
      cluster.push_back({t, k});
      next[k] = t + exp_draw(rng) / cand_per_ps;
    }
    flush();

    for (int k = 0; k < g; ++k) {
      const auto& ch = chans[members[k]];
      if (ch.pixel_a >= 0) detector.process_pixel(ch.pixel_a, std::move(arm_a[k]));
      if (ch.pixel_b >= 0) detector.process_pixel(ch.pixel_b, std::move(arm_b[k]));
    }
  }
  data.streams = detector.finish();
  data.timing_offset_ps.resize(data.streams.by_pixel.size());
  for (std::size_t p = 0; p < data.timing_offset_ps.size(); ++p)
    data.timing_offset_ps[p] = pixel_timing_offset_ps(cfg.detector, cfg.seed, static_cast<int>(p));
  return data;
}

namespace {

nlohmann::json manifest_json(const SimConfig& cfg, const SimulatedData& d, std::uint64_t records) {
  using nlohmann::json;
  const auto& det = cfg.detector;
  json chans = json::array();
  for (const auto& t : d.truth) {
    chans.push_back({{"index", t.channel.index},
                     {"pixel_a", t.channel.pixel_a},
                     {"pixel_b", t.channel.pixel_b},
                     {"lambda_nm", t.channel.lambda_nm},
                     {"sigma_lambda_nm", t.channel.sigma_lambda_nm},
                     {"sigma_f_hz", t.channel.sigma_f_hz},
                     {"sigma_c_ps", t.channel.sigma_c_ps},
                     {"source_rate_cps", t.source_rate_cps},
                     {"expected_rate_a_cps", t.expected_rate_a},
                     {"expected_rate_b_cps", t.expected_rate_b},
                     {"expected_pair_contrast", t.pair_contrast},
                     {"expected_pair_sigma_ps", t.pair_sigma_ps},
                     {"expected_summed_contrast", t.summed_contrast},
                     {"expected_summed_sigma_ps", t.summed_sigma_ps},
                     {"nominal_mu_ps", t.nominal_mu_ps}});
  }
  json offsets = json::array();
  for (std::size_t p = 0; p < d.timing_offset_ps.size(); ++p)
    offsets.push_back({{"pixel", p}, {"timing_offset_ps", d.timing_offset_ps[p]}});
  json groups = json::array();
  for (const auto& g : cfg.shared_band_groups) groups.push_back(g);
  std::vector<int> dead(det.dead_pixels.begin(), det.dead_pixels.end());
  std::vector<int> masked(cfg.channel_map.masked().begin(), cfg.channel_map.masked().end());
  return {{"schema", "hbt.sim/1"},
          {"seed", cfg.seed},
          {"duration_s", cfg.duration_s},
          {"duration_ps", d.streams.duration_ps},
          {"rate_per_channel_cps", cfg.rate_per_channel_cps},
          {"mode_count", cfg.mode_count},
          {"shared_band_groups", groups},
          {"pixel_count", cfg.channel_map.pixel_count()},
          {"masked", masked},
          {"detector",
           {{"jitter_sigma_ps", det.jitter_sigma_ps},
            {"dark_rate_cps", det.dark_rate_cps},
            {"crosstalk_prob", det.crosstalk_prob},
            {"crosstalk_jitter_ps", det.crosstalk_jitter_ps},
            {"offset_residual_ps", det.offset_residual_ps},
            {"pde", det.pde},
            {"fiber_delay_ps", det.fiber_delay_ps},
            {"dead_pixels", dead}}},
          {"counts",
           {{"records", records},
            {"candidates", d.candidates},
            {"photons", d.photons},
            {"signal", d.streams.signal},
            {"dark", d.streams.dark},
            {"crosstalk", d.streams.crosstalk},
            {"out_of_range", d.streams.out_of_range}}},
          {"channels", chans},
          {"pixel_offsets", offsets}};
}

} // namespace

DatasetSummary simulate_dataset(const SimConfig& cfg, const std::string& tags_path,
                                const std::string& manifest_path) {
  SimulatedData data = simulate_detections(cfg);
  DatasetSummary s;
  s.records = data.streams.total();
  if (!tags_path.empty()) {
    TagFileHeader h;
    h.pixel_count = static_cast<std::uint16_t>(cfg.channel_map.pixel_count());
    h.duration_ps = static_cast<std::uint64_t>(data.streams.duration_ps);
    TagWriter w(tags_path, h);
    std::vector<PixelSeries> series;
    for (std::size_t p = 0; p < data.streams.by_pixel.size(); ++p)
      if (!data.streams.by_pixel[p].empty())
        series.push_back({static_cast<std::uint16_t>(p), data.streams.by_pixel[p]});
    merge_series(series, [&](std::span<const TimeTag> b) { w.append(b); });
    s.records = w.finish();
  }
  s.manifest_json = manifest_json(cfg, data, s.records).dump(1);
  if (!manifest_path.empty()) {
    std::ofstream f(manifest_path);
    if (!f) throw IoError("cannot write manifest '" + manifest_path + "'");
    f << s.manifest_json << "\n";
  }
  return s;
}

// ---------------------------------------------------------------------------
// Configuration

KeyValueConfig sim_preset(const std::string& name) {
  KeyValueConfig kv;
  if (name == "replication") {
    kv.set("channels", "100");
    kv.set("lambda_start_nm", "635");
    kv.set("pitch_nm", "0.11");
    kv.set("lambda_sigma_nm", "0.04");
    kv.set("rate_per_channel_cps", "3e7");
    kv.set("duration_s", "0.0167");
    kv.set("detector.model", "linospad2");
    kv.set("detector.offset_residual_ps", "29");
  } else if (name == "smoke") {
    kv.set("channels", "5");
    kv.set("lambda_start_nm", "640");
    kv.set("pitch_nm", "0.11");
    kv.set("lambda_sigma_nm", "0.01");
    kv.set("rate_per_channel_cps", "1e7");
    kv.set("duration_s", "0.1");
    kv.set("detector.model", "linospad2");
  } else {
    throw ConfigError("unknown simulation preset '" + name + "' (expected replication or smoke)");
  }
  return kv;
}

namespace {

std::vector<std::vector<int>> parse_groups(const std::string& text) {
  std::vector<std::vector<int>> out;
  std::string s = text;
  s.erase(std::remove_if(s.begin(), s.end(), [](char c) { return c == '[' || c == ']' || c == ' '; }), s.end());
  std::stringstream ss(s);
  std::string group;
  while (std::getline(ss, group, ';')) {
    if (group.empty()) continue;
    std::vector<int> g;
    std::stringstream gs(group);
    std::string item;
    while (std::getline(gs, item, ',')) {
      const auto dash = item.find('-');
      try {
        if (dash != std::string::npos && dash > 0) {
          const int a = std::stoi(item.substr(0, dash)), b = std::stoi(item.substr(dash + 1));
          for (int i = a; i <= b; ++i) g.push_back(i);
        } else if (!item.empty()) {
          g.push_back(std::stoi(item));
        }
      } catch (const std::exception&) {
        throw ConfigError("shared_band_groups: cannot parse '" + item + "'");
      }
    }
    out.push_back(g);
  }
  return out;
}

std::set<int> int_set(const std::vector<double>& v, const char* what) {
  std::set<int> s;
  for (double x : v) {
    if (x != std::floor(x) || x < 0) throw ConfigError(std::string(what) + ": expected pixel indices");
    s.insert(static_cast<int>(x));
  }
  return s;
}

} // namespace

SimConfig sim_config_from(const KeyValueConfig& user) {
  KeyValueConfig kv;
  const std::string preset = user.get_string("preset", "");
  if (!preset.empty()) kv = sim_preset(preset);
  for (const auto& [k, v] : user.values()) kv.set(k, v);

  SimConfig cfg;
  const std::string model = kv.get_string("detector.model", "ideal");
  if (model == "linospad2") {
    cfg.detector = DetectorConfig::linospad2();
  } else if (model != "ideal") {
    throw ConfigError("detector.model must be 'ideal' or 'linospad2'");
  }
  auto& d = cfg.detector;
  d.jitter_sigma_ps = kv.get_double("detector.jitter_sigma_ps", d.jitter_sigma_ps);
  d.dark_rate_cps = kv.get_double("detector.dark_rate_cps", d.dark_rate_cps);
  d.crosstalk_prob = kv.get_double("detector.crosstalk_prob", d.crosstalk_prob);
  d.crosstalk_jitter_ps = kv.get_double("detector.crosstalk_jitter_ps", d.crosstalk_jitter_ps);
  d.offset_residual_ps = kv.get_double("detector.offset_residual_ps", d.offset_residual_ps);
  d.pde = kv.get_double("detector.pde", d.pde);
  d.fiber_delay_ps = kv.get_double("detector.fiber_delay_ps", d.fiber_delay_ps);
  if (kv.has("detector.dead_pixels")) d.dead_pixels = int_set(kv.get_list("detector.dead_pixels"), "dead_pixels");

  if (kv.has("map")) {
    cfg.channel_map = ChannelMap::load(kv.get_string("map", ""));
  } else {
    const auto channels = kv.get_int("channels", 0);
    if (channels <= 0) throw ConfigError("simulation config needs 'map' or a positive 'channels'");
    cfg.channel_map = ChannelMap::mirrored(static_cast<int>(channels), kv.get_double("lambda_start_nm", 640.0),
                                           kv.get_double("pitch_nm", 0.11), kv.get_double("lambda_sigma_nm", 0.04),
                                           static_cast<int>(kv.get_int("first_pixel", 0)));
  }
  if (kv.has("masked")) cfg.channel_map = cfg.channel_map.with_masked(int_set(kv.get_list("masked"), "masked"));

  cfg.rate_per_channel_cps = kv.get_double("rate_per_channel_cps", cfg.rate_per_channel_cps);
  cfg.duration_s = kv.get_double("duration_s", cfg.duration_s);
  const long long seed = kv.get_int("seed", 1);
  if (seed < 0) throw ConfigError("seed must be >= 0");
  cfg.seed = static_cast<std::uint64_t>(seed);
  cfg.mode_count = static_cast<int>(kv.get_int("mode_count", cfg.mode_count));
  if (kv.has("shared_band_groups")) cfg.shared_band_groups = parse_groups(kv.get_string("shared_band_groups", ""));
  cfg.validate();
  return cfg;
}

} // namespace hbt
