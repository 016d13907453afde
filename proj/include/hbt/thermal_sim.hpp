#pragma once

// Chaotic-light photon generation and detector model.
//
// Two samplers share one field model (a sum of randomly phased spectral modes
// with complex Gaussian amplitudes):
//  * a grid sampler, simulate_channel_intensity + sample_photons, for trace
//    level work on a dt <= sigma_c / 10 grid;
//  * a cluster sampler used by simulate_dataset. Candidate photons come from a
//    homogeneous process; the field is only evaluated where candidates fall
//    within a few coherence times of each other, drawn exactly from the mode
//    set's covariance. Isolated candidates need only the Exp(1) marginal.

#include <complex>
#include <cstdint>
#include <string>
#include <vector>

#include "hbt/config.hpp"
#include "hbt/core.hpp"
#include "hbt/random.hpp"

namespace hbt {

struct SimConfig {
  ChannelMap channel_map;
  DetectorConfig detector;
  double rate_per_channel_cps = 1e5; ///< detected signal rate per arm pixel
  double duration_s = 0.1;
  std::uint64_t seed = 1;
  int mode_count = 64;
  /// Groups of adjacent simulation channels (indices into sim_channels) that
  /// share one mode set.
  std::vector<std::vector<int>> shared_band_groups;

  void validate() const;
};

/// One spectral slice of the source. Photons go 50:50 to the arm-A and arm-B
/// pixels imaging the slice; a missing pixel (-1) discards its share.
struct SimChannel {
  int index = 0;
  int pixel_a = -1;
  int pixel_b = -1;
  double lambda_nm = 0.0;
  double sigma_lambda_nm = 0.0;
  double sigma_f_hz = 0.0;
  double sigma_c_ps = 0.0;
};

/// Arm-A channels in wavelength order, each joined with the arm-B channel of
/// matching wavelength (within half a spectral rms); unmatched B channels follow.
std::vector<SimChannel> sim_channels(const ChannelMap& map);

// --- grid sampler -----------------------------------------------------------

struct IntensityTrace {
  double dt_ps = 0.0;
  std::vector<double> intensity; ///< unit mean; sample k covers [k dt, (k+1) dt)

  double duration_ps() const { return dt_ps * static_cast<double>(intensity.size()); }
};

/// Stratified Gaussian mode frequencies (Hz, relative to the channel centre).
std::vector<double> gaussian_mode_frequencies(double sigma_f_hz, int mode_count, Rng& rng);

/// I(t) = |sum_k a_k exp(i 2 pi f_k t)|^2 on a uniform grid, normalized to unit
/// mean. dt_ps <= 0 picks sigma_c / 10; a coarser dt is rejected.
IntensityTrace simulate_channel_intensity(const SimChannel& channel, int mode_count, double duration_ps,
                                          std::uint64_t seed, double dt_ps = 0.0);

struct PhotonArms {
  std::vector<double> a; ///< sorted arrival times, ps
  std::vector<double> b;
};

/// Piecewise-constant Poisson sampling at 2 rate I(t) (both arms together),
/// each photon routed to A or B with probability 1/2.
PhotonArms sample_photons(const IntensityTrace& trace, double rate_cps, std::uint64_t seed);

/// Rounds continuous times to integer picoseconds.
std::vector<Picoseconds> to_picoseconds(const std::vector<double>& t_ps);

// --- detector ---------------------------------------------------------------

/// Per-pixel fixed timing offset added to every detection, drawn once per
/// pixel from (seed, pixel) with rms offset_residual_ps.
double pixel_timing_offset_ps(const DetectorConfig& det, std::uint64_t seed, int pixel);

struct DetectedStreams {
  std::vector<std::vector<Picoseconds>> by_pixel; ///< sorted, indexed by pixel
  std::uint64_t signal = 0;
  std::uint64_t dark = 0;
  std::uint64_t crosstalk = 0;
  std::uint64_t out_of_range = 0; ///< pushed outside [0, duration) by jitter or delay
  Picoseconds duration_ps = 0;

  std::uint64_t total() const { return signal + dark + crosstalk; }
};

/// Detector applied pixel by pixel. Order per detection: PDE thinning,
/// Gaussian jitter, fixed pixel offset, fiber delay on arm B; then Poisson dark
/// counts; then cross-talk copies into pixel -/+ 1 (same time plus a few ps of
/// jitter). Dead pixels produce and receive nothing. Detections outside
/// [0, duration) are dropped.
class DetectorModel {
public:
  DetectorModel(const ChannelMap& map, const DetectorConfig& det, std::uint64_t seed, double duration_ps);

  /// `photons` are sorted true arrival times; each pixel at most once.
  void process_pixel(int pixel, std::vector<double>&& photons);
  DetectedStreams finish();

private:
  const ChannelMap& map_;
  DetectorConfig det_;
  std::uint64_t seed_;
  double duration_ps_;
  DetectedStreams out_;
  std::vector<bool> done_;
  std::vector<std::vector<Picoseconds>> copies_;
};

/// Convenience wrapper: photons_by_pixel[p] are pixel p's arrival times.
DetectedStreams apply_detector(std::vector<std::vector<double>> photons_by_pixel, const ChannelMap& map,
                               const DetectorConfig& det, std::uint64_t seed, double duration_ps);

// --- dataset ----------------------------------------------------------------

struct ChannelTruth {
  SimChannel channel;
  double source_rate_cps = 0.0; ///< both arms, before PDE
  double expected_rate_a = 0.0; ///< detected, including dark counts
  double expected_rate_b = 0.0;
  double pair_contrast = 0.0;   ///< expected single-pair contrast incl. dark dilution
  double pair_sigma_ps = 0.0;
  double summed_contrast = 0.0; ///< after aligning by nominal offsets (residual smearing)
  double summed_sigma_ps = 0.0;
  double nominal_mu_ps = 0.0;   ///< true peak position t_b - t_a
};

struct SimulatedData {
  DetectedStreams streams;
  std::vector<ChannelTruth> truth;
  std::vector<double> timing_offset_ps; ///< per pixel
  std::uint64_t candidates = 0;
  std::uint64_t photons = 0;
};

std::vector<ChannelTruth> channel_truth(const SimConfig& cfg);

/// Runs the cluster sampler and the detector, in memory.
SimulatedData simulate_detections(const SimConfig& cfg);

struct DatasetSummary {
  std::uint64_t records = 0;
  std::string manifest_json;
};

/// Writes the merged tag file and a JSON manifest (schema "hbt.sim/1") with the
/// per-channel truth. Either path may be empty to skip that output.
DatasetSummary simulate_dataset(const SimConfig& cfg, const std::string& tags_path,
                                const std::string& manifest_path);

/// Builds a SimConfig from key/value configuration; see README for keys.
SimConfig sim_config_from(const KeyValueConfig& kv);
/// Preset defaults ("replication", "smoke"); unknown names throw.
KeyValueConfig sim_preset(const std::string& name);

} // namespace hbt
