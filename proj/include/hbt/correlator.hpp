#pragma once

// Cross-arm time-difference histograms.
//
// Sign convention: dt = t_b - t_a (arm B minus arm A). A per-pair shift s is
// subtracted before binning, so the binned quantity is dt - s. A value x is
// counted when |x| <= window and lands in bin floor((x + window) / width);
// x == +window is folded into the last bin.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "hbt/core.hpp"
#include "hbt/tag_io.hpp"

namespace hbt {

struct CoincidenceHistogram {
  int pixel_a = -1;
  int pixel_b = -1;
  Picoseconds window_ps = 20000;
  Picoseconds bin_width_ps = 20;
  Picoseconds shift_ps = 0;
  Picoseconds duration_ps = 0;
  std::vector<std::uint64_t> counts;
  std::uint64_t total = 0;   ///< sum of counts
  std::uint64_t count_a = 0; ///< input tags on the A side
  std::uint64_t count_b = 0;
  bool missing = false; ///< a pixel of the pair had no stream

  int bins() const { return static_cast<int>(counts.size()); }
  /// Centre of bin i in shifted coordinates (dt - shift).
  double bin_center(int i) const {
    return -static_cast<double>(window_ps) + (i + 0.5) * static_cast<double>(bin_width_ps);
  }

  friend bool operator==(const CoincidenceHistogram&, const CoincidenceHistogram&) = default;
};

/// Validates window/width and returns the bin count 2*window/width.
int histogram_bins(Picoseconds window_ps, Picoseconds bin_width_ps);

CoincidenceHistogram pair_histogram(std::span<const Picoseconds> tags_a, std::span<const Picoseconds> tags_b,
                                    Picoseconds window_ps, Picoseconds bin_width_ps, Picoseconds shift_ps = 0);

struct PairSpec {
  int pixel_a = 0;
  int pixel_b = 0;
  Picoseconds shift_ps = 0;
};

struct CorrelationJob {
  std::vector<PairSpec> pairs;
  Picoseconds window_ps = 20000;
  Picoseconds bin_width_ps = 20;
  int workers = 1;
  /// Length of a sweep block; bounds the merge buffers.
  Picoseconds block_ps = 2'000'000'000;
};

/// All pairs of arm-A x arm-B unmasked channels in wavelength order, zero shift.
std::vector<PairSpec> all_cross_pairs(const ChannelMap& map);

/// One histogram per job pair, in job order. Pairs whose pixels have no stream
/// come back empty and flagged `missing`.
std::vector<CoincidenceHistogram> run_all_pairs(const PixelStreams& streams, const CorrelationJob& job);

struct ExclusionZone {
  double center_ps = 0.0;
  double halfwidth_ps = 0.0;
};

struct NormalizedHistogram {
  std::vector<double> x; ///< bin centres, ps (shifted coordinates)
  std::vector<double> y; ///< counts / background
  double background = 0.0; ///< mean sideband counts per bin
  int sideband_bins = 0;
};

inline constexpr int kMinSidebandBins = 50;

/// Divides by the mean count of bins whose centres lie outside every zone.
NormalizedHistogram normalize_histogram(const CoincidenceHistogram& h, std::span<const ExclusionZone> zones);
NormalizedHistogram normalize_histogram(const CoincidenceHistogram& h, double center_ps, double halfwidth_ps);

// Histogram container file, little-endian:
//   header 48 bytes: magic "HBTHIST1", u32 version, u32 pair_count,
//     i64 window_ps, i64 bin_width_ps, u32 bins, u32 reserved, i64 duration_ps
//   per pair: u16 pixel_a, u16 pixel_b, u32 flags (bit 0 = missing),
//     i64 shift_ps, u64 total, u64 count_a, u64 count_b, i64 duration_ps,
//     u64 counts[bins] (all zero when missing)
void save_histograms(const std::string& path, std::span<const CoincidenceHistogram> hists);
std::vector<CoincidenceHistogram> load_histograms(const std::string& path);

} // namespace hbt
