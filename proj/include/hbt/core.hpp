#pragma once

// Shared domain types and unit conventions.
//
// Units: timestamps are integer picoseconds, wavelengths nanometres,
// frequencies hertz. Conversions between them live here and nowhere else.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace hbt {

inline constexpr double kSpeedOfLight = 2.99792458e8; // m/s
inline constexpr double kPi = 3.14159265358979323846;

using Picoseconds = std::int64_t;

inline constexpr double kPsPerSecond = 1e12;

enum class Arm : std::uint8_t { A, B };

char arm_letter(Arm arm);
Arm parse_arm(const std::string& text);

/// One photon detection.
struct TimeTag {
  std::uint16_t pixel = 0;
  Picoseconds t = 0;

  friend bool operator==(const TimeTag&, const TimeTag&) = default;
};

/// Orders by time, then pixel; the order used for merged streams.
inline bool tag_less(const TimeTag& x, const TimeTag& y) {
  return x.t < y.t || (x.t == y.t && x.pixel < y.pixel);
}

struct SpectralChannel {
  Arm arm = Arm::A;
  int pixel = 0; ///< sensor pixel index; the two arms occupy disjoint ranges
  double lambda_center_nm = 0.0;
  double lambda_sigma_nm = 0.0; ///< rms of the Gaussian spectral response
};

/// Pixel to wavelength assignment for both spectrometer arms.
///
/// Within an arm the wavelength is strictly monotone in pixel index. The
/// construction helper `mirrored` lays the arms out the way the dual
/// spectrometer images them: arm A increasing, arm B decreasing, adjacent on
/// the sensor.
class ChannelMap {
public:
  ChannelMap() = default;
  ChannelMap(std::vector<SpectralChannel> arm_a, std::vector<SpectralChannel> arm_b,
             std::set<int> masked = {}, int pixel_count = 0);

  /// `channels` pixels per arm starting at `lambda_start_nm`; arm A on pixels
  /// [first_pixel, first_pixel + channels), arm B on the following range with
  /// reversed wavelength order so matched wavelengths mirror about the gap.
  static ChannelMap mirrored(int channels, double lambda_start_nm, double pitch_nm,
                             double sigma_nm, int first_pixel = 0);

  static ChannelMap parse(std::istream& in);
  static ChannelMap load(const std::string& path);
  void write(std::ostream& out) const;
  void save(const std::string& path) const;

  const std::vector<SpectralChannel>& arm(Arm a) const { return a == Arm::A ? arm_a_ : arm_b_; }
  const std::vector<SpectralChannel>& arm_a() const { return arm_a_; }
  const std::vector<SpectralChannel>& arm_b() const { return arm_b_; }
  const std::set<int>& masked() const { return masked_; }
  int pixel_count() const { return pixel_count_; }

  /// Signed nm per pixel from a least-squares line through the arm's channels.
  double pixel_pitch_nm(Arm a) const;
  /// True when the arms' wavelength slopes have opposite signs.
  bool is_mirrored() const;

  const SpectralChannel* find(int pixel) const;
  std::optional<Arm> arm_of(int pixel) const;
  bool is_masked(int pixel) const { return masked_.count(pixel) != 0; }

  /// Unmasked channels of an arm sorted by increasing wavelength.
  std::vector<SpectralChannel> wavelength_ordered(Arm a) const;

  ChannelMap with_masked(std::set<int> masked) const;

  friend bool operator==(const ChannelMap&, const ChannelMap&);

private:
  void validate();

  std::vector<SpectralChannel> arm_a_;
  std::vector<SpectralChannel> arm_b_;
  std::set<int> masked_;
  int pixel_count_ = 0;
  std::vector<int> pixel_to_index_; // >=0: arm A index, <=-2: arm B index -(i+2), -1: none
};

/// Detector non-idealities. Zero-initialised values describe an ideal detector.
struct DetectorConfig {
  double jitter_sigma_ps = 0.0;
  double dark_rate_cps = 0.0;
  double crosstalk_prob = 0.0;
  double crosstalk_jitter_ps = 5.0;
  double offset_residual_ps = 0.0;
  double pde = 1.0;
  double fiber_delay_ps = 0.0;
  std::set<int> dead_pixels;

  /// LinoSPAD2-like values: 40 ps jitter, 125 cps dark, 0.2 % cross-talk, 5 ns delay.
  static DetectorConfig linospad2();

  void validate() const;
};

/// Frequency rms (Hz) equivalent to a wavelength rms: c * sigma_lambda / lambda^2.
double freq_sigma_from_lambda(double lambda_nm, double sigma_lambda_nm);

/// RMS width (ps) of |g1(tau)|^2 for a Gaussian spectrum of rms width sigma_f.
double coherence_sigma_ps(double sigma_f_hz);

/// Optical frequency of a vacuum wavelength.
double frequency_hz(double lambda_nm);

inline double ps_to_s(double ps) { return ps / kPsPerSecond; }
inline double s_to_ps(double s) { return s * kPsPerSecond; }

} // namespace hbt
