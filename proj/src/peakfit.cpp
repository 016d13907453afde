#include "hbt/peakfit.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <thread>

#include "hbt/errors.hpp"
#include "json.hpp"

namespace hbt {

void FitConstraints::validate() const {
  auto ordered = [](double lo, double hi, const char* what) {
    if (!(lo < hi)) throw ConfigError(std::string("fit constraints: ") + what + " min must be < max");
  };
  if (!(mu_halfrange_ps > 0.0)) throw ConfigError("fit constraints: mu half-range must be > 0");
  ordered(sigma_min_ps, sigma_max_ps, "sigma");
  ordered(contrast_min, contrast_max, "contrast");
  if (!(sigma_min_ps > 0.0)) throw ConfigError("fit constraints: sigma_min must be > 0");
  if (sine_term) {
    ordered(period_min_ps, period_max_ps, "period");
    if (!(period_min_ps > 0.0)) throw ConfigError("fit constraints: period_min must be > 0");
  }
  if (fit_halfwidth_ps < 0.0) throw ConfigError("fit constraints: fit half-width must be >= 0");
  if (max_iterations < 1) throw ConfigError("fit constraints: max_iterations must be >= 1");
}

const char* to_string(FitStatus s) {
  switch (s) {
    case FitStatus::Converged: return "converged";
    case FitStatus::AtBound: return "at_bound";
    case FitStatus::Failed: return "failed";
  }
  return "failed";
}

FitStatus parse_fit_status(const std::string& s) {
  if (s == "converged") return FitStatus::Converged;
  if (s == "at_bound") return FitStatus::AtBound;
  if (s == "failed") return FitStatus::Failed;
  throw ConfigError("unknown fit status '" + s + "'");
}

namespace {

enum Param { kC = 0, kMu = 1, kSigma = 2, kSin = 3, kCos = 4, kPeriod = 5 };

struct Problem {
  std::vector<double> x, y, inv_sd;
  int np = 3;
  Eigen::VectorXd lo, hi;
};

double model_at(const Eigen::VectorXd& p, int np, double x) {
  const double z = (x - p[kMu]) / p[kSigma];
  const double zz = 0.5 * z * z;
  double f = 1.0 + (zz < 60.0 ? p[kC] * std::exp(-zz) : 0.0);
  if (np == 6) {
    const double w = 2.0 * kPi / p[kPeriod];
    f += p[kSin] * std::sin(w * x) + p[kCos] * std::cos(w * x);
  }
  return f;
}

double objective(const Problem& pr, const Eigen::VectorXd& p) {
  double chi2 = 0.0;
  for (std::size_t i = 0; i < pr.x.size(); ++i) {
    const double r = (pr.y[i] - model_at(p, pr.np, pr.x[i])) * pr.inv_sd[i];
    chi2 += r * r;
  }
  return chi2;
}

/// Builds J^T J and J^T r for the weighted residuals r = (y - f) / sd.
void normal_equations(const Problem& pr, const Eigen::VectorXd& p, Eigen::MatrixXd& A, Eigen::VectorXd& g) {
  const int np = pr.np;
  A.setZero(np, np);
  g.setZero(np);
  Eigen::VectorXd j(np);
  const double w = np == 6 ? 2.0 * kPi / p[kPeriod] : 0.0;
  for (std::size_t i = 0; i < pr.x.size(); ++i) {
    const double x = pr.x[i];
    const double z = (x - p[kMu]) / p[kSigma];
    const double zz = 0.5 * z * z;
    const double e = zz < 60.0 ? std::exp(-zz) : 0.0;
    j[kC] = e;
    j[kMu] = p[kC] * e * z / p[kSigma];
    j[kSigma] = p[kC] * e * z * z / p[kSigma];
    double f = 1.0 + p[kC] * e;
    if (np == 6) {
      const double s = std::sin(w * x), c = std::cos(w * x);
      j[kSin] = s;
      j[kCos] = c;
      j[kPeriod] = (p[kSin] * c - p[kCos] * s) * x * (-w / p[kPeriod]);
      f += p[kSin] * s + p[kCos] * c;
    }
    j *= pr.inv_sd[i];
    const double r = (pr.y[i] - f) * pr.inv_sd[i];
    A.selfadjointView<Eigen::Lower>().rankUpdate(j);
    g += r * j;
  }
  A = A.selfadjointView<Eigen::Lower>();
}

bool at_lower(const Problem& pr, const Eigen::VectorXd& p, int k) {
  return p[k] <= pr.lo[k] + 1e-9 * (pr.hi[k] - pr.lo[k]);
}
bool at_upper(const Problem& pr, const Eigen::VectorXd& p, int k) {
  return p[k] >= pr.hi[k] - 1e-9 * (pr.hi[k] - pr.lo[k]);
}

struct LmOutcome {
  Eigen::VectorXd p;
  double chi2 = 0.0;
  int iterations = 0;
  std::vector<double> trace;
  bool finite = true;
};

LmOutcome levenberg_marquardt(const Problem& pr, Eigen::VectorXd p, int max_iterations) {
  LmOutcome out;
  const int np = pr.np;
  for (int k = 0; k < np; ++k) p[k] = std::clamp(p[k], pr.lo[k], pr.hi[k]);
  double chi2 = objective(pr, p);
  out.trace.push_back(chi2);
  double lambda = 1e-3;
  Eigen::MatrixXd A;
  Eigen::VectorXd g;
  int it = 0;
  bool refresh = true;
  for (; it < max_iterations; ++it) {
    if (refresh) normal_equations(pr, p, A, g);
    refresh = false;
    std::vector<int> free;
    for (int k = 0; k < np; ++k) {
      // g is the descent direction of chi2; a bound blocks it when it points outward
      if (at_lower(pr, p, k) && g[k] <= 0.0) continue;
      if (at_upper(pr, p, k) && g[k] >= 0.0) continue;
      free.push_back(k);
    }
    if (free.empty()) break;
    const int nf = static_cast<int>(free.size());
    Eigen::MatrixXd Af(nf, nf);
    Eigen::VectorXd gf(nf);
    double dmax = 0.0;
    for (int a = 0; a < nf; ++a) dmax = std::max(dmax, A(free[a], free[a]));
    for (int a = 0; a < nf; ++a) {
      gf[a] = g[free[a]];
      for (int b = 0; b < nf; ++b) Af(a, b) = A(free[a], free[b]);
    }
    for (int a = 0; a < nf; ++a) Af(a, a) += lambda * std::max(Af(a, a), 1e-12 * (1.0 + dmax));
    const Eigen::VectorXd step = Af.ldlt().solve(gf);
    if (!step.allFinite()) {
      lambda *= 10.0;
      if (lambda > 1e12) break;
      continue;
    }
    Eigen::VectorXd trial = p;
    for (int a = 0; a < nf; ++a) {
      const int k = free[a];
      trial[k] = std::clamp(p[k] + step[a], pr.lo[k], pr.hi[k]);
    }
    const double chi2_new = objective(pr, trial);
    if (std::isfinite(chi2_new) && chi2_new < chi2) {
      const double gain = chi2 - chi2_new;
      p = trial;
      chi2 = chi2_new;
      out.trace.push_back(chi2);
      lambda = std::max(lambda * 0.1, 1e-12);
      refresh = true;
      if (gain <= 1e-10 * chi2 + 1e-14) {
        ++it;
        break;
      }
    } else {
      lambda *= 10.0;
      if (lambda > 1e12) break;
    }
  }
  out.p = p;
  out.chi2 = chi2;
  out.iterations = it;
  out.finite = p.allFinite() && std::isfinite(chi2);
  return out;
}

/// Inverse of A restricted to `keep`; empty matrix when singular.
Eigen::MatrixXd restricted_inverse(const Eigen::MatrixXd& A, const std::vector<int>& keep) {
  const int n = static_cast<int>(keep.size());
  Eigen::MatrixXd S(n, n);
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b) S(a, b) = A(keep[a], keep[b]);
  Eigen::FullPivLU<Eigen::MatrixXd> lu(S);
  lu.setThreshold(1e-10);
  if (!lu.isInvertible()) return {};
  Eigen::MatrixXd inv = lu.inverse();
  for (int a = 0; a < n; ++a)
    if (!(inv(a, a) > 0.0) || !std::isfinite(inv(a, a))) return {};
  return inv;
}

PeakFitResult failed(const std::string& why) {
  PeakFitResult r;
  r.status = FitStatus::Failed;
  r.message = why;
  return r;
}

} // namespace

PeakFitResult fit_peak(const NormalizedHistogram& h, const FitConstraints& c) {
  c.validate();
  if (h.x.size() != h.y.size()) return failed("histogram x/y size mismatch");
  if (!(h.background > 0.0) || !std::isfinite(h.background)) return failed("no background level");

  Problem pr;
  pr.np = c.sine_term ? 6 : 3;
  const double floor_var = 1.0 / h.background;
  for (std::size_t i = 0; i < h.x.size(); ++i) {
    if (c.fit_halfwidth_ps > 0.0 && std::abs(h.x[i] - c.mu_nominal_ps) > c.fit_halfwidth_ps) continue;
    if (!std::isfinite(h.y[i]) || !std::isfinite(h.x[i])) return failed("non-finite histogram value");
    const double var = std::max(h.y[i], floor_var) / h.background;
    pr.x.push_back(h.x[i]);
    pr.y.push_back(h.y[i]);
    pr.inv_sd.push_back(1.0 / std::sqrt(var));
  }
  const int n = static_cast<int>(pr.x.size());
  if (n <= pr.np) return failed("fewer bins than parameters");

  const double big = std::numeric_limits<double>::infinity();
  pr.lo.resize(pr.np);
  pr.hi.resize(pr.np);
  pr.lo[kC] = c.contrast_min;
  pr.hi[kC] = c.contrast_max;
  pr.lo[kMu] = c.mu_nominal_ps - c.mu_halfrange_ps;
  pr.hi[kMu] = c.mu_nominal_ps + c.mu_halfrange_ps;
  pr.lo[kSigma] = c.sigma_min_ps;
  pr.hi[kSigma] = c.sigma_max_ps;
  if (c.sine_term) {
    pr.lo[kSin] = pr.lo[kCos] = -big;
    pr.hi[kSin] = pr.hi[kCos] = big;
    pr.lo[kPeriod] = c.period_min_ps;
    pr.hi[kPeriod] = c.period_max_ps;
  }

  Eigen::VectorXd seed(pr.np);
  seed[kC] = c.contrast_seed;
  seed[kMu] = c.mu_nominal_ps;
  seed[kSigma] = c.sigma_seed_ps;

  LmOutcome best;
  best.chi2 = big;
  if (!c.sine_term) {
    best = levenberg_marquardt(pr, seed, c.max_iterations);
  } else {
    constexpr int kStarts = 8;
    const double ratio = c.period_max_ps / c.period_min_ps;
    for (int s = 0; s < kStarts; ++s) {
      Eigen::VectorXd start = seed;
      start[kSin] = start[kCos] = 0.0;
      start[kPeriod] = c.period_min_ps * std::pow(ratio, (s + 0.5) / kStarts);
      auto o = levenberg_marquardt(pr, start, c.max_iterations);
      if (o.finite && o.chi2 < best.chi2) best = std::move(o);
    }
  }
  if (!best.finite || best.p.size() == 0) return failed("non-finite fit");

  PeakFitResult r;
  const auto& p = best.p;
  r.contrast = p[kC];
  r.mu_ps = p[kMu];
  r.sigma_ps = p[kSigma];
  r.chi2 = best.chi2;
  r.dof = n - pr.np;
  r.chi2_per_dof = best.chi2 / r.dof;
  r.iterations = best.iterations;
  r.trace = std::move(best.trace);
  r.background = h.background;
  r.contrast_at_bound = at_lower(pr, p, kC) || at_upper(pr, p, kC);
  r.mu_at_bound = at_lower(pr, p, kMu) || at_upper(pr, p, kMu);
  r.sigma_at_bound = at_lower(pr, p, kSigma) || at_upper(pr, p, kSigma);
  if (c.sine_term) {
    r.sine_enabled = true;
    r.sine_amplitude = std::hypot(p[kSin], p[kCos]);
    r.sine_phase = std::atan2(p[kCos], p[kSin]);
    r.sine_period_ps = p[kPeriod];
    r.period_at_bound = at_lower(pr, p, kPeriod) || at_upper(pr, p, kPeriod);
  }

  // Curvature errors; bounded parameters sitting on a bound are held fixed.
  Eigen::MatrixXd A;
  Eigen::VectorXd g;
  normal_equations(pr, p, A, g);
  std::vector<int> keep{kC};
  if (!r.mu_at_bound) keep.push_back(kMu);
  if (!r.sigma_at_bound) keep.push_back(kSigma);
  if (c.sine_term) {
    keep.push_back(kSin);
    keep.push_back(kCos);
    if (!r.period_at_bound) keep.push_back(kPeriod);
  }
  Eigen::MatrixXd cov = restricted_inverse(A, keep);
  if (cov.size() == 0) {
    // C ~ 0 leaves mu and sigma unconstrained
    keep.erase(std::remove_if(keep.begin(), keep.end(), [](int k) { return k == kMu || k == kSigma; }),
               keep.end());
    cov = restricted_inverse(A, keep);
  }
  if (cov.size() == 0) {
    r.status = FitStatus::Failed;
    r.message = "singular curvature";
    return r;
  }
  for (std::size_t a = 0; a < keep.size(); ++a) {
    const double e = std::sqrt(cov(a, a));
    if (keep[a] == kC) r.contrast_err = e;
    if (keep[a] == kMu) r.mu_err = e;
    if (keep[a] == kSigma) r.sigma_err = e;
  }
  const bool any_bound = r.contrast_at_bound || r.mu_at_bound || r.sigma_at_bound || r.period_at_bound;
  r.status = any_bound ? FitStatus::AtBound : FitStatus::Converged;
  if (best.iterations >= c.max_iterations) r.message = "iteration limit reached";
  return r;
}

std::vector<PeakFitResult> batch_fit(std::span<const CoincidenceHistogram> hists,
                                     std::span<const FitConstraints> constraints, const BatchOptions& opt) {
  if (constraints.size() != 1 && constraints.size() != hists.size())
    throw ConfigError("batch_fit: need one constraint set or one per histogram");
  for (const auto& c : constraints) c.validate();
  std::vector<PeakFitResult> out(hists.size());

  auto fit_one = [&](std::size_t i) {
    const auto& h = hists[i];
    const auto& c = constraints.size() == 1 ? constraints[0] : constraints[i];
    PeakFitResult r;
    if (h.missing || h.counts.empty() || h.total == 0) {
      r = failed(h.missing ? "pixel stream missing" : "empty histogram");
    } else {
      std::vector<ExclusionZone> zones{{c.mu_nominal_ps, opt.exclusion_halfwidth_ps}};
      for (const auto& z : opt.raw_zones)
        zones.push_back({z.center_ps - static_cast<double>(h.shift_ps), z.halfwidth_ps});
      try {
        r = fit_peak(normalize_histogram(h, zones), c);
      } catch (const Error& e) {
        r = failed(e.what());
      }
    }
    r.pixel_a = h.pixel_a;
    r.pixel_b = h.pixel_b;
    r.shift_ps = static_cast<double>(h.shift_ps);
    r.count_a = h.count_a;
    r.count_b = h.count_b;
    r.duration_s = ps_to_s(static_cast<double>(h.duration_ps));
    out[i] = std::move(r);
  };

  const int workers = std::max(1, std::min<int>(opt.workers, static_cast<int>(hists.size())));
  if (workers <= 1) {
    for (std::size_t i = 0; i < hists.size(); ++i) fit_one(i);
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        for (std::size_t i = w; i < hists.size(); i += workers) fit_one(i);
      });
    for (auto& t : pool) t.join();
  }
  return out;
}

// ---------------------------------------------------------------------------

void save_fits_json(const std::string& path, std::span<const PeakFitResult> fits, const std::string& extra_json) {
  using nlohmann::json;
  json arr = json::array();
  for (const auto& r : fits) {
    json j = {{"pixel_a", r.pixel_a},
              {"pixel_b", r.pixel_b},
              {"status", to_string(r.status)},
              {"shift_ps", r.shift_ps},
              {"contrast", r.contrast},
              {"contrast_err", r.contrast_err},
              {"mu_ps", r.mu_ps},
              {"mu_err", r.mu_err},
              {"sigma_ps", r.sigma_ps},
              {"sigma_err", r.sigma_err},
              {"chi2", r.chi2},
              {"chi2_per_dof", r.chi2_per_dof},
              {"dof", r.dof},
              {"contrast_at_bound", r.contrast_at_bound},
              {"mu_at_bound", r.mu_at_bound},
              {"sigma_at_bound", r.sigma_at_bound},
              {"iterations", r.iterations},
              {"background", r.background},
              {"count_a", r.count_a},
              {"count_b", r.count_b},
              {"duration_s", r.duration_s}};
    if (r.sine_enabled)
      j["sine"] = {{"amplitude", r.sine_amplitude},
                   {"period_ps", r.sine_period_ps},
                   {"phase", r.sine_phase},
                   {"period_at_bound", r.period_at_bound}};
    if (!r.message.empty()) j["message"] = r.message;
    arr.push_back(std::move(j));
  }
  json doc = {{"schema", "hbt.fits/1"}, {"meta", json::parse(extra_json)}, {"fits", std::move(arr)}};
  std::ofstream f(path);
  if (!f) throw IoError("cannot write '" + path + "'");
  f << doc.dump(1) << "\n";
  if (!f) throw IoError("write to '" + path + "' failed");
}

std::vector<PeakFitResult> load_fits_json(const std::string& path) {
  using nlohmann::json;
  std::ifstream f(path);
  if (!f) throw IoError("cannot open '" + path + "'");
  json doc;
  try {
    doc = json::parse(f);
  } catch (const json::exception& e) {
    throw ConfigError("'" + path + "' is not valid JSON: " + e.what());
  }
  if (doc.value("schema", "") != "hbt.fits/1") throw ConfigError("'" + path + "' is not an hbt.fits/1 file");
  std::vector<PeakFitResult> out;
  try {
    for (const auto& j : doc.at("fits")) {
      PeakFitResult r;
      r.pixel_a = j.at("pixel_a");
      r.pixel_b = j.at("pixel_b");
      r.status = parse_fit_status(j.at("status"));
      r.shift_ps = j.value("shift_ps", 0.0);
      r.contrast = j.value("contrast", 0.0);
      r.contrast_err = j.value("contrast_err", 0.0);
      r.mu_ps = j.value("mu_ps", 0.0);
      r.mu_err = j.value("mu_err", 0.0);
      r.sigma_ps = j.value("sigma_ps", 0.0);
      r.sigma_err = j.value("sigma_err", 0.0);
      r.chi2 = j.value("chi2", 0.0);
      r.chi2_per_dof = j.value("chi2_per_dof", 0.0);
      r.dof = j.value("dof", 0);
      r.contrast_at_bound = j.value("contrast_at_bound", false);
      r.mu_at_bound = j.value("mu_at_bound", false);
      r.sigma_at_bound = j.value("sigma_at_bound", false);
      r.iterations = j.value("iterations", 0);
      r.background = j.value("background", 0.0);
      r.count_a = j.value("count_a", std::uint64_t{0});
      r.count_b = j.value("count_b", std::uint64_t{0});
      r.duration_s = j.value("duration_s", 0.0);
      r.message = j.value("message", "");
      if (j.contains("sine")) {
        const auto& s = j["sine"];
        r.sine_enabled = true;
        r.sine_amplitude = s.value("amplitude", 0.0);
        r.sine_period_ps = s.value("period_ps", 0.0);
        r.sine_phase = s.value("phase", 0.0);
        r.period_at_bound = s.value("period_at_bound", false);
      }
      out.push_back(std::move(r));
    }
  } catch (const json::exception& e) {
    throw ConfigError("'" + path + "': malformed fit record: " + e.what());
  }
  return out;
}

} // namespace hbt
