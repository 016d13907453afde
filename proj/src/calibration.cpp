#include "hbt/calibration.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "hbt/errors.hpp"
#include "json.hpp"

namespace hbt {

std::vector<LineReference> load_line_references(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open line list '" + path + "'");
  std::vector<LineReference> out;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ss(line);
    LineReference r;
    if (!(ss >> r.lambda_nm)) {
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      throw ConfigError("line list '" + path + "' line " + std::to_string(lineno) + ": expected a wavelength");
    }
    std::getline(ss >> std::ws, r.label);
    out.push_back(r);
  }
  return out;
}

std::vector<double> load_spectrum_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open spectrum '" + path + "'");
  std::vector<double> out;
  std::string line;
  bool first = true;
  while (std::getline(f, line)) {
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ss(line);
    std::vector<double> fields;
    double v;
    while (ss >> v) fields.push_back(v);
    if (fields.empty() || !ss.eof()) {
      if (first) {
        first = false;
        continue; // header row
      }
      throw ConfigError("spectrum '" + path + "': unparsable row '" + line + "'");
    }
    first = false;
    if (fields.size() == 1) {
      out.push_back(fields[0]);
    } else {
      const auto pixel = static_cast<long>(fields[0]);
      if (pixel < 0 || static_cast<double>(pixel) != fields[0])
        throw ConfigError("spectrum '" + path + "': bad pixel index");
      if (static_cast<std::size_t>(pixel) >= out.size()) out.resize(pixel + 1, 0.0);
      out[pixel] = fields[1];
    }
  }
  return out;
}

std::vector<double> find_line_centroids(std::span<const double> counts, int expected_count) {
  if (expected_count < 1) throw CalibrationError("find_line_centroids: expected_count must be >= 1");
  const int n = static_cast<int>(counts.size());
  if (n < 3) throw CalibrationError("find_line_centroids: spectrum too short");
  for (double c : counts)
    if (!std::isfinite(c)) throw CalibrationError("find_line_centroids: non-finite count");

  std::vector<double> sorted(counts.begin(), counts.end());
  std::nth_element(sorted.begin(), sorted.begin() + n / 2, sorted.end());
  const double median = sorted[n / 2];
  const double threshold = 5.0 * std::max(median, 0.0);

  std::vector<int> maxima;
  for (int i = 0; i < n; ++i) {
    const bool left = i == 0 || counts[i] > counts[i - 1];
    const bool right = i == n - 1 || counts[i] >= counts[i + 1];
    if (left && right && counts[i] > threshold) maxima.push_back(i);
  }
  std::stable_sort(maxima.begin(), maxima.end(), [&](int a, int b) { return counts[a] > counts[b]; });
  std::vector<int> picked;
  for (int m : maxima) {
    if (static_cast<int>(picked.size()) == expected_count) break;
    bool close = false;
    for (int p : picked)
      if (std::abs(p - m) <= 3) close = true;
    if (!close) picked.push_back(m);
  }
  if (static_cast<int>(picked.size()) < expected_count) {
    std::ostringstream msg;
    msg << "find_line_centroids: expected " << expected_count << " lines above 5x median background (" << threshold
        << "), found " << picked.size();
    if (!picked.empty()) {
      msg << " at pixels";
      for (int p : picked) msg << ' ' << p;
    }
    throw CalibrationError(msg.str());
  }

  std::vector<double> out;
  for (int p : picked) {
    double sw = 0.0, swx = 0.0;
    for (int k = std::max(0, p - 3); k <= std::min(n - 1, p + 3); ++k) {
      const double w = std::max(counts[k] - median, 0.0);
      sw += w;
      swx += w * k;
    }
    out.push_back(sw > 0.0 ? swx / sw : p);
  }
  std::sort(out.begin(), out.end());
  return out;
}

WavelengthFit fit_wavelength_map(std::span<const double> centroids, std::span<const LineReference> lines, Arm arm) {
  if (centroids.size() != lines.size())
    throw CalibrationError("fit_wavelength_map: " + std::to_string(centroids.size()) + " centroids for " +
                           std::to_string(lines.size()) + " lines");
  if (centroids.size() < 2) throw CalibrationError("fit_wavelength_map: need at least two lines");
  const auto n = static_cast<double>(centroids.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < centroids.size(); ++i) {
    mx += centroids[i];
    my += lines[i].lambda_nm;
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < centroids.size(); ++i) {
    sxx += (centroids[i] - mx) * (centroids[i] - mx);
    sxy += (centroids[i] - mx) * (lines[i].lambda_nm - my);
  }
  if (!(sxx > 1e-12 * (1.0 + mx * mx))) throw CalibrationError("fit_wavelength_map: coincident centroids");
  WavelengthFit fit;
  fit.arm = arm;
  fit.slope_nm_per_px = sxy / sxx;
  fit.intercept_nm = my - fit.slope_nm_per_px * mx;
  if (fit.slope_nm_per_px == 0.0) throw CalibrationError("fit_wavelength_map: zero slope");
  double ss = 0.0;
  for (std::size_t i = 0; i < centroids.size(); ++i) {
    const double r = lines[i].lambda_nm - fit.lambda_at(centroids[i]);
    ss += r * r;
  }
  fit.residual_rms_nm = std::sqrt(ss / n);
  fit.points = static_cast<int>(centroids.size());
  return fit;
}

// ---------------------------------------------------------------------------
// Offset network

double OffsetTable::offset(int pixel) const {
  auto it = offset_ps.find(pixel);
  return it == offset_ps.end() ? 0.0 : it->second;
}

namespace {

struct UnionFind {
  std::vector<int> parent;
  explicit UnionFind(int n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  int find(int x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  }
  void unite(int a, int b) { parent[find(a)] = find(b); }
};

} // namespace

OffsetTable solve_offsets(std::span<const PairMeasurement> meas, int reference_pixel) {
  if (meas.empty()) throw CalibrationError("solve_offsets: no pair measurements");
  std::map<int, Arm> arm;
  for (const auto& m : meas) {
    if (!(m.mu_err_ps > 0.0) || !std::isfinite(m.mu_ps))
      throw CalibrationError("solve_offsets: pair (" + std::to_string(m.pixel_a) + ", " + std::to_string(m.pixel_b) +
                             ") needs a finite position and positive uncertainty");
    for (auto [p, a] : {std::pair{m.pixel_a, Arm::A}, std::pair{m.pixel_b, Arm::B}}) {
      auto [it, inserted] = arm.emplace(p, a);
      if (!inserted && it->second != a)
        throw CalibrationError("solve_offsets: pixel " + std::to_string(p) + " appears in both arms");
    }
  }
  if (!arm.count(reference_pixel))
    throw CalibrationError("solve_offsets: reference pixel " + std::to_string(reference_pixel) +
                           " is not in any pair");

  std::map<int, int> index;
  std::vector<int> pixels;
  for (const auto& [p, a] : arm) {
    index[p] = static_cast<int>(pixels.size());
    pixels.push_back(p);
  }
  const int n = static_cast<int>(pixels.size());

  UnionFind uf(n);
  for (const auto& m : meas) uf.unite(index[m.pixel_a], index[m.pixel_b]);
  std::map<int, std::vector<int>> components;
  for (int i = 0; i < n; ++i) components[uf.find(i)].push_back(pixels[i]);
  if (components.size() > 1) {
    std::ostringstream msg;
    msg << "solve_offsets: pair graph has " << components.size() << " disconnected components:";
    int shown = 0;
    for (const auto& [root, members] : components) {
      if (shown++ == 8) {
        msg << " ...";
        break;
      }
      msg << " {";
      for (std::size_t k = 0; k < members.size() && k < 6; ++k) msg << (k ? " " : "") << members[k];
      if (members.size() > 6) msg << " ...";
      msg << "}";
    }
    throw CalibrationError(msg.str());
  }

  // unknowns: [delay, o_0 .. o_{n-1}]; constraints: o_ref = 0, mean of other arm = 0
  const int u = n + 1;
  const Arm ref_arm = arm[reference_pixel];
  Eigen::MatrixXd N = Eigen::MatrixXd::Zero(u, u);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(u);
  for (const auto& m : meas) {
    Eigen::VectorXd row = Eigen::VectorXd::Zero(u);
    row[0] = 1.0;
    row[1 + index[m.pixel_a]] += 1.0;
    row[1 + index[m.pixel_b]] -= 1.0;
    const double w = 1.0 / (m.mu_err_ps * m.mu_err_ps);
    N.noalias() += w * row * row.transpose();
    rhs += w * m.mu_ps * row;
  }
  Eigen::MatrixXd C = Eigen::MatrixXd::Zero(2, u);
  C(0, 1 + index[reference_pixel]) = 1.0;
  int other = 0;
  for (int i = 0; i < n; ++i)
    if (arm[pixels[i]] != ref_arm) {
      C(1, 1 + i) = 1.0;
      ++other;
    }
  for (int i = 0; i < n; ++i)
    if (other > 0 && C(1, 1 + i) != 0.0) C(1, 1 + i) = 1.0 / other;

  Eigen::MatrixXd K = Eigen::MatrixXd::Zero(u + 2, u + 2);
  K.topLeftCorner(u, u) = N;
  K.topRightCorner(u, 2) = C.transpose();
  K.bottomLeftCorner(2, u) = C;
  Eigen::VectorXd b = Eigen::VectorXd::Zero(u + 2);
  b.head(u) = rhs;
  Eigen::FullPivLU<Eigen::MatrixXd> lu(K);
  if (!lu.isInvertible()) throw CalibrationError("solve_offsets: singular system");
  const Eigen::MatrixXd Kinv = lu.inverse();
  const Eigen::VectorXd sol = Kinv * b;

  OffsetTable t;
  t.reference_pixel = reference_pixel;
  t.arm = arm;
  t.delay_ps = sol[0];
  t.delay_err_ps = std::sqrt(std::max(Kinv(0, 0), 0.0));
  for (int i = 0; i < n; ++i) {
    t.offset_ps[pixels[i]] = sol[1 + i];
    t.offset_err_ps[pixels[i]] = std::sqrt(std::max(Kinv(1 + i, 1 + i), 0.0));
  }
  t.offset_ps[reference_pixel] = 0.0;
  t.offset_err_ps[reference_pixel] = 0.0;
  for (const auto& m : meas) {
    const double r = (m.mu_ps - t.predicted(m.pixel_a, m.pixel_b)) / m.mu_err_ps;
    t.chi2 += r * r;
  }
  t.pairs_used = static_cast<int>(meas.size());
  t.dof = static_cast<int>(meas.size()) - (u - 2);
  return t;
}

std::vector<PairMeasurement> offset_inputs(std::span<const PeakFitResult> fits, double min_significance) {
  std::vector<PairMeasurement> out;
  for (const auto& f : fits) {
    if (f.status == FitStatus::Failed || f.mu_at_bound || !(f.mu_err > 0.0)) continue;
    if (!(f.significance() > min_significance)) continue;
    out.push_back({f.pixel_a, f.pixel_b, f.mu_ps + f.shift_ps, f.mu_err});
  }
  return out;
}

void OffsetTable::save_json(const std::string& path) const {
  using nlohmann::json;
  json pix = json::array();
  for (const auto& [p, o] : offset_ps) {
    json j = {{"pixel", p}, {"offset_ps", o}, {"err_ps", offset_err_ps.count(p) ? offset_err_ps.at(p) : 0.0}};
    if (arm.count(p)) j["arm"] = std::string(1, arm_letter(arm.at(p)));
    pix.push_back(std::move(j));
  }
  json doc = {{"schema", "hbt.offsets/1"}, {"reference_pixel", reference_pixel},
              {"delay_ps", delay_ps},      {"delay_err_ps", delay_err_ps},
              {"chi2", chi2},              {"dof", dof},
              {"pairs_used", pairs_used},  {"pixels", std::move(pix)}};
  std::ofstream f(path);
  if (!f) throw IoError("cannot write '" + path + "'");
  f << doc.dump(1) << "\n";
}

OffsetTable OffsetTable::load_json(const std::string& path) {
  using nlohmann::json;
  std::ifstream f(path);
  if (!f) throw IoError("cannot open '" + path + "'");
  OffsetTable t;
  try {
    const json doc = json::parse(f);
    if (doc.value("schema", "") != "hbt.offsets/1") throw ConfigError("'" + path + "' is not an hbt.offsets/1 file");
    t.reference_pixel = doc.value("reference_pixel", -1);
    t.delay_ps = doc.at("delay_ps");
    t.delay_err_ps = doc.value("delay_err_ps", 0.0);
    t.chi2 = doc.value("chi2", 0.0);
    t.dof = doc.value("dof", 0);
    t.pairs_used = doc.value("pairs_used", 0);
    for (const auto& j : doc.at("pixels")) {
      const int p = j.at("pixel");
      t.offset_ps[p] = j.at("offset_ps");
      t.offset_err_ps[p] = j.value("err_ps", 0.0);
      if (j.contains("arm")) t.arm[p] = parse_arm(j["arm"].get<std::string>());
    }
  } catch (const json::exception& e) {
    throw ConfigError("'" + path + "': malformed offsets file: " + e.what());
  }
  return t;
}

} // namespace hbt
