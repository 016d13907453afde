#include "hbt/core.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>

#include "hbt/errors.hpp"

namespace hbt {

char arm_letter(Arm arm) { return arm == Arm::A ? 'A' : 'B'; }

Arm parse_arm(const std::string& text) {
  if (text == "A" || text == "a") return Arm::A;
  if (text == "B" || text == "b") return Arm::B;
  throw ConfigError("unknown arm '" + text + "' (expected A or B)");
}

double freq_sigma_from_lambda(double lambda_nm, double sigma_lambda_nm) {
  if (!(lambda_nm > 0.0) || !(sigma_lambda_nm > 0.0))
    throw DomainError("freq_sigma_from_lambda: wavelength and width must be positive");
  const double lambda_m = lambda_nm * 1e-9;
  return kSpeedOfLight * (sigma_lambda_nm * 1e-9) / (lambda_m * lambda_m);
}

double coherence_sigma_ps(double sigma_f_hz) {
  if (!(sigma_f_hz > 0.0)) throw DomainError("coherence_sigma_ps: sigma_f must be positive");
  return 1.0 / (2.0 * std::sqrt(2.0) * kPi * sigma_f_hz) * kPsPerSecond;
}

double frequency_hz(double lambda_nm) {
  if (!(lambda_nm > 0.0)) throw DomainError("frequency_hz: wavelength must be positive");
  return kSpeedOfLight / (lambda_nm * 1e-9);
}

// ---------------------------------------------------------------------------
// DetectorConfig

DetectorConfig DetectorConfig::linospad2() {
  DetectorConfig d;
  d.jitter_sigma_ps = 40.0;
  d.dark_rate_cps = 125.0;
  d.crosstalk_prob = 0.002;
  d.fiber_delay_ps = 5000.0;
  return d;
}

void DetectorConfig::validate() const {
  auto nonneg = [](double v, const char* name) {
    if (!(v >= 0.0) || !std::isfinite(v))
      throw ConfigError(std::string("detector.") + name + " must be finite and >= 0");
  };
  nonneg(jitter_sigma_ps, "jitter_sigma_ps");
  nonneg(dark_rate_cps, "dark_rate_cps");
  nonneg(crosstalk_prob, "crosstalk_prob");
  nonneg(crosstalk_jitter_ps, "crosstalk_jitter_ps");
  nonneg(offset_residual_ps, "offset_residual_ps");
  nonneg(pde, "pde");
  nonneg(fiber_delay_ps, "fiber_delay_ps");
  if (pde > 1.0) throw ConfigError("detector.pde must be <= 1");
  if (crosstalk_prob >= 0.5) throw ConfigError("detector.crosstalk_prob must be < 0.5");
  if (crosstalk_jitter_ps > 10.0) throw ConfigError("detector.crosstalk_jitter_ps must be <= 10");
}

// ---------------------------------------------------------------------------
// ChannelMap

namespace {

double fit_slope(const std::vector<SpectralChannel>& chans) {
  if (chans.size() < 2) return 0.0;
  double mx = 0, my = 0;
  for (const auto& c : chans) {
    mx += c.pixel;
    my += c.lambda_center_nm;
  }
  mx /= chans.size();
  my /= chans.size();
  double sxy = 0, sxx = 0;
  for (const auto& c : chans) {
    sxy += (c.pixel - mx) * (c.lambda_center_nm - my);
    sxx += (c.pixel - mx) * (c.pixel - mx);
  }
  return sxx > 0 ? sxy / sxx : 0.0;
}

} // namespace

ChannelMap::ChannelMap(std::vector<SpectralChannel> arm_a, std::vector<SpectralChannel> arm_b,
                       std::set<int> masked, int pixel_count)
    : arm_a_(std::move(arm_a)), arm_b_(std::move(arm_b)), masked_(std::move(masked)),
      pixel_count_(pixel_count) {
  validate();
}

void ChannelMap::validate() {
  auto by_pixel = [](const SpectralChannel& x, const SpectralChannel& y) { return x.pixel < y.pixel; };
  std::sort(arm_a_.begin(), arm_a_.end(), by_pixel);
  std::sort(arm_b_.begin(), arm_b_.end(), by_pixel);

  int max_pixel = -1;
  for (Arm a : {Arm::A, Arm::B}) {
    auto& chans = a == Arm::A ? arm_a_ : arm_b_;
    for (auto& c : chans) {
      c.arm = a;
      if (c.pixel < 0 || c.pixel > 65535) throw ConfigError("channel map: pixel index out of range");
      if (!(c.lambda_sigma_nm > 0.0)) throw ConfigError("channel map: lambda_sigma must be > 0");
      if (!(c.lambda_center_nm > 0.0)) throw ConfigError("channel map: lambda_center must be > 0");
      max_pixel = std::max(max_pixel, c.pixel);
    }
    for (std::size_t i = 1; i < chans.size(); ++i) {
      if (chans[i].pixel == chans[i - 1].pixel)
        throw ConfigError("channel map: duplicate pixel " + std::to_string(chans[i].pixel));
    }
    // strictly monotone wavelength in pixel
    if (chans.size() >= 2) {
      const bool up = chans[1].lambda_center_nm > chans[0].lambda_center_nm;
      for (std::size_t i = 1; i < chans.size(); ++i) {
        const double d = chans[i].lambda_center_nm - chans[i - 1].lambda_center_nm;
        if (d == 0.0 || (d > 0) != up)
          throw ConfigError(std::string("channel map: wavelength not monotone in pixel on arm ") +
                            arm_letter(a));
      }
    }
  }
  if (!arm_a_.empty() && !arm_b_.empty()) {
    const bool a_first = arm_a_.back().pixel < arm_b_.front().pixel;
    const bool b_first = arm_b_.back().pixel < arm_a_.front().pixel;
    if (!a_first && !b_first) throw ConfigError("channel map: arms must occupy disjoint pixel ranges");
  }
  if (pixel_count_ == 0) pixel_count_ = max_pixel + 1;
  if (pixel_count_ <= max_pixel) throw ConfigError("channel map: pixel_count smaller than largest pixel");
  if (pixel_count_ > 65536) throw ConfigError("channel map: pixel_count exceeds 16-bit range");

  pixel_to_index_.assign(static_cast<std::size_t>(pixel_count_), -1);
  for (std::size_t i = 0; i < arm_a_.size(); ++i) pixel_to_index_[arm_a_[i].pixel] = static_cast<int>(i);
  for (std::size_t i = 0; i < arm_b_.size(); ++i)
    pixel_to_index_[arm_b_[i].pixel] = -static_cast<int>(i) - 2;
}

ChannelMap ChannelMap::mirrored(int channels, double lambda_start_nm, double pitch_nm, double sigma_nm,
                                int first_pixel) {
  if (channels <= 0) throw ConfigError("channel map: channel count must be positive");
  if (!(pitch_nm > 0.0)) throw ConfigError("channel map: pitch must be positive");
  std::vector<SpectralChannel> a, b;
  for (int k = 0; k < channels; ++k) {
    const double lambda = lambda_start_nm + pitch_nm * k;
    a.push_back({Arm::A, first_pixel + k, lambda, sigma_nm});
    b.push_back({Arm::B, first_pixel + 2 * channels - 1 - k, lambda, sigma_nm});
  }
  return ChannelMap(std::move(a), std::move(b), {}, 0);
}

double ChannelMap::pixel_pitch_nm(Arm a) const { return fit_slope(arm(a)); }

bool ChannelMap::is_mirrored() const {
  const double sa = pixel_pitch_nm(Arm::A);
  const double sb = pixel_pitch_nm(Arm::B);
  return sa * sb < 0.0;
}

const SpectralChannel* ChannelMap::find(int pixel) const {
  if (pixel < 0 || pixel >= static_cast<int>(pixel_to_index_.size())) return nullptr;
  const int idx = pixel_to_index_[pixel];
  if (idx >= 0) return &arm_a_[idx];
  if (idx <= -2) return &arm_b_[-idx - 2];
  return nullptr;
}

std::optional<Arm> ChannelMap::arm_of(int pixel) const {
  const auto* c = find(pixel);
  if (!c) return std::nullopt;
  return c->arm;
}

std::vector<SpectralChannel> ChannelMap::wavelength_ordered(Arm a) const {
  std::vector<SpectralChannel> out;
  for (const auto& c : arm(a))
    if (!is_masked(c.pixel)) out.push_back(c);
  std::sort(out.begin(), out.end(), [](const auto& x, const auto& y) {
    return x.lambda_center_nm < y.lambda_center_nm;
  });
  return out;
}

ChannelMap ChannelMap::with_masked(std::set<int> masked) const {
  return ChannelMap(arm_a_, arm_b_, std::move(masked), pixel_count_);
}

bool operator==(const ChannelMap& x, const ChannelMap& y) {
  auto same = [](const std::vector<SpectralChannel>& p, const std::vector<SpectralChannel>& q) {
    if (p.size() != q.size()) return false;
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (p[i].arm != q[i].arm || p[i].pixel != q[i].pixel ||
          p[i].lambda_center_nm != q[i].lambda_center_nm || p[i].lambda_sigma_nm != q[i].lambda_sigma_nm)
        return false;
    }
    return true;
  };
  return same(x.arm_a_, y.arm_a_) && same(x.arm_b_, y.arm_b_) && x.masked_ == y.masked_ &&
         x.pixel_count_ == y.pixel_count_;
}

// Text format, one statement per line:
//   # comment
//   pixel_count <n>
//   masked <pixel> [<pixel> ...]
//   <arm> <pixel> <lambda_center_nm> <lambda_sigma_nm>
ChannelMap ChannelMap::parse(std::istream& in) {
  std::vector<SpectralChannel> a, b;
  std::set<int> masked;
  int pixel_count = 0;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ss(line);
    std::string head;
    if (!(ss >> head)) continue;
    auto fail = [&](const std::string& why) {
      throw ConfigError("channel map line " + std::to_string(lineno) + ": " + why);
    };
    if (head == "pixel_count") {
      if (!(ss >> pixel_count)) fail("expected pixel count");
    } else if (head == "masked") {
      int p;
      while (ss >> p) masked.insert(p);
    } else if (head == "A" || head == "B") {
      SpectralChannel c;
      c.arm = parse_arm(head);
      if (!(ss >> c.pixel >> c.lambda_center_nm >> c.lambda_sigma_nm))
        fail("expected '<arm> <pixel> <lambda_center_nm> <lambda_sigma_nm>'");
      (c.arm == Arm::A ? a : b).push_back(c);
    } else {
      fail("unknown statement '" + head + "'");
    }
  }
  return ChannelMap(std::move(a), std::move(b), std::move(masked), pixel_count);
}

ChannelMap ChannelMap::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open channel map '" + path + "'");
  return parse(f);
}

void ChannelMap::write(std::ostream& out) const {
  out << "# arm pixel lambda_center_nm lambda_sigma_nm\n";
  out << "pixel_count " << pixel_count_ << "\n";
  if (!masked_.empty()) {
    out << "masked";
    for (int p : masked_) out << ' ' << p;
    out << "\n";
  }
  out << std::setprecision(10);
  for (const auto* chans : {&arm_a_, &arm_b_})
    for (const auto& c : *chans)
      out << arm_letter(c.arm) << ' ' << c.pixel << ' ' << c.lambda_center_nm << ' ' << c.lambda_sigma_nm
          << "\n";
}

void ChannelMap::save(const std::string& path) const {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write channel map '" + path + "'");
  write(f);
}

} // namespace hbt
