#include "hbt/correlator.hpp"

#include <algorithm>
#include <cstring>
#include <limits>
#include <map>
#include <thread>

#include "byteio.hpp"
#include "hbt/errors.hpp"

namespace hbt {

using namespace detail;

int histogram_bins(Picoseconds window_ps, Picoseconds bin_width_ps) {
  if (window_ps <= 0 || bin_width_ps <= 0) throw ConfigError("window and bin width must be positive");
  if (window_ps % bin_width_ps != 0) throw ConfigError("window must be a multiple of the bin width");
  const Picoseconds bins = 2 * window_ps / bin_width_ps;
  if (bins > 10'000'000) throw ConfigError("too many histogram bins");
  return static_cast<int>(bins);
}

CoincidenceHistogram pair_histogram(std::span<const Picoseconds> tags_a, std::span<const Picoseconds> tags_b,
                                    Picoseconds window_ps, Picoseconds bin_width_ps, Picoseconds shift_ps) {
  const int bins = histogram_bins(window_ps, bin_width_ps);
  if (!std::is_sorted(tags_a.begin(), tags_a.end())) throw OrderingError("pair_histogram: arm A tags not sorted");
  if (!std::is_sorted(tags_b.begin(), tags_b.end())) throw OrderingError("pair_histogram: arm B tags not sorted");

  CoincidenceHistogram h;
  h.window_ps = window_ps;
  h.bin_width_ps = bin_width_ps;
  h.shift_ps = shift_ps;
  h.counts.assign(static_cast<std::size_t>(bins), 0);
  h.count_a = tags_a.size();
  h.count_b = tags_b.size();

  std::size_t lo = 0;
  const std::size_t nb = tags_b.size();
  for (const Picoseconds ta : tags_a) {
    const Picoseconds first = ta + shift_ps - window_ps;
    const Picoseconds last = ta + shift_ps + window_ps;
    while (lo < nb && tags_b[lo] < first) ++lo;
    for (std::size_t k = lo; k < nb && tags_b[k] <= last; ++k) {
      auto bin = static_cast<int>((tags_b[k] - first) / bin_width_ps);
      if (bin == bins) bin = bins - 1;
      ++h.counts[bin];
      ++h.total;
    }
  }
  return h;
}

std::vector<PairSpec> all_cross_pairs(const ChannelMap& map) {
  std::vector<PairSpec> pairs;
  const auto a = map.wavelength_ordered(Arm::A);
  const auto b = map.wavelength_ordered(Arm::B);
  pairs.reserve(a.size() * b.size());
  for (const auto& ca : a)
    for (const auto& cb : b) pairs.push_back({ca.pixel, cb.pixel, 0});
  return pairs;
}

// ---------------------------------------------------------------------------
// run_all_pairs: time-blocked sweep over the merged A and merged B streams.
//
// Within a block every tag is packed as ((t - base) << 16) | local_pixel, so
// one integer sort merges the per-pixel arrays. For each A tag the B cursor
// covers the union of all pair windows; a lookup table maps (a, b) to the
// job pair, whose own shift decides the bin.

namespace {

constexpr int kPixelBits = 16;
constexpr std::uint64_t kPixelMask = (1u << kPixelBits) - 1;

struct SweepTask {
  std::vector<int> a_pixels; // local A index -> pixel
  std::vector<int> b_pixels;
  std::vector<std::int32_t> lut; // a_local * nb + b_local -> pair, -1 if none
  std::vector<Picoseconds> shift;
  std::vector<std::uint64_t*> counts;
};

void sweep(const PixelStreams& streams, const SweepTask& task, Picoseconds window, Picoseconds width, int bins,
           Picoseconds block) {
  if (task.a_pixels.empty() || task.b_pixels.empty()) return;
  const Picoseconds s_min = *std::min_element(task.shift.begin(), task.shift.end());
  const Picoseconds s_max = *std::max_element(task.shift.begin(), task.shift.end());

  Picoseconds t_begin = std::numeric_limits<Picoseconds>::max();
  Picoseconds t_end = std::numeric_limits<Picoseconds>::min();
  for (int p : task.a_pixels) {
    const auto& v = *streams.get(p);
    if (!v.empty()) {
      t_begin = std::min(t_begin, v.front());
      t_end = std::max(t_end, v.back() + 1);
    }
  }
  if (t_begin >= t_end) return;

  const std::size_t na = task.a_pixels.size();
  const std::size_t nb = task.b_pixels.size();
  std::vector<std::size_t> a_cur(na, 0), b_lo(nb, 0);
  std::vector<std::uint64_t> akeys, bkeys;

  for (Picoseconds t0 = t_begin; t0 < t_end; t0 += block) {
    const Picoseconds t1 = t0 + block;
    const Picoseconds b_first = t0 + s_min - window;
    const Picoseconds b_last = t1 + s_max + window;
    const Picoseconds base = std::min(t0, b_first);

    akeys.clear();
    for (std::size_t i = 0; i < na; ++i) {
      const auto& v = *streams.get(task.a_pixels[i]);
      std::size_t k = a_cur[i];
      while (k < v.size() && v[k] < t1) {
        akeys.push_back((static_cast<std::uint64_t>(v[k] - base) << kPixelBits) | i);
        ++k;
      }
      a_cur[i] = k;
    }
    if (akeys.empty()) continue;

    bkeys.clear();
    for (std::size_t j = 0; j < nb; ++j) {
      const auto& v = *streams.get(task.b_pixels[j]);
      std::size_t k = b_lo[j];
      while (k < v.size() && v[k] < b_first) ++k;
      b_lo[j] = k;
      for (; k < v.size() && v[k] <= b_last; ++k)
        bkeys.push_back((static_cast<std::uint64_t>(v[k] - base) << kPixelBits) | j);
    }
    if (bkeys.empty()) continue;

    std::sort(akeys.begin(), akeys.end());
    std::sort(bkeys.begin(), bkeys.end());

    const auto lo_off = static_cast<std::int64_t>(s_min - window);
    const auto hi_off = static_cast<std::int64_t>(s_max + window);
    std::size_t lo = 0;
    const std::size_t nbk = bkeys.size();
    for (const std::uint64_t ak : akeys) {
      const auto ta = static_cast<std::int64_t>(ak >> kPixelBits);
      const std::size_t ai = ak & kPixelMask;
      const std::int32_t* row = task.lut.data() + ai * nb;
      const std::int64_t first = ta + lo_off;
      const std::int64_t last = ta + hi_off;
      while (lo < nbk && static_cast<std::int64_t>(bkeys[lo] >> kPixelBits) < first) ++lo;
      for (std::size_t k = lo; k < nbk; ++k) {
        const auto tb = static_cast<std::int64_t>(bkeys[k] >> kPixelBits);
        if (tb > last) break;
        const std::int32_t pair = row[bkeys[k] & kPixelMask];
        if (pair < 0) continue;
        const std::int64_t x = tb - ta - task.shift[pair] + window;
        if (x < 0 || x > 2 * window) continue;
        auto bin = static_cast<int>(x / width);
        if (bin == bins) bin = bins - 1;
        ++task.counts[pair][bin];
      }
    }
  }
}

} // namespace

std::vector<CoincidenceHistogram> run_all_pairs(const PixelStreams& streams, const CorrelationJob& job) {
  const int bins = histogram_bins(job.window_ps, job.bin_width_ps);
  if (job.block_ps <= 0) throw ConfigError("correlation block length must be positive");
  if (job.block_ps + 2 * job.window_ps > (Picoseconds{1} << 46))
    throw ConfigError("correlation block too long");

  std::vector<CoincidenceHistogram> out(job.pairs.size());
  std::map<std::pair<int, int>, std::size_t> first_of; // duplicate (a, b) entries
  std::vector<std::size_t> swept;
  std::vector<std::size_t> direct;

  for (std::size_t i = 0; i < job.pairs.size(); ++i) {
    const auto& p = job.pairs[i];
    auto& h = out[i];
    h.pixel_a = p.pixel_a;
    h.pixel_b = p.pixel_b;
    h.window_ps = job.window_ps;
    h.bin_width_ps = job.bin_width_ps;
    h.shift_ps = p.shift_ps;
    h.duration_ps = streams.duration_ps;
    if (p.pixel_a == p.pixel_b) throw ConfigError("pair uses the same pixel twice: " + std::to_string(p.pixel_a));
    const auto* va = streams.get(p.pixel_a);
    const auto* vb = streams.get(p.pixel_b);
    if (!va || !vb) {
      h.missing = true;
      continue;
    }
    h.counts.assign(static_cast<std::size_t>(bins), 0);
    h.count_a = va->size();
    h.count_b = vb->size();
    if (first_of.emplace(std::make_pair(p.pixel_a, p.pixel_b), i).second) {
      swept.push_back(i);
    } else {
      direct.push_back(i);
    }
  }

  // Partition distinct A pixels over workers; each histogram has one owner.
  const int workers = std::max(1, job.workers);
  std::map<int, int> a_owner;
  for (std::size_t i : swept) a_owner.emplace(job.pairs[i].pixel_a, 0);
  {
    int k = 0;
    for (auto& [pixel, owner] : a_owner) owner = k++ % workers;
  }

  std::vector<SweepTask> tasks(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    auto& t = tasks[w];
    std::map<int, int> a_local, b_local;
    for (std::size_t i : swept) {
      const auto& p = job.pairs[i];
      if (a_owner[p.pixel_a] != w) continue;
      a_local.emplace(p.pixel_a, 0);
      b_local.emplace(p.pixel_b, 0);
    }
    for (auto& [pixel, idx] : a_local) {
      idx = static_cast<int>(t.a_pixels.size());
      t.a_pixels.push_back(pixel);
    }
    for (auto& [pixel, idx] : b_local) {
      idx = static_cast<int>(t.b_pixels.size());
      t.b_pixels.push_back(pixel);
    }
    if (t.b_pixels.size() > kPixelMask || t.a_pixels.size() > kPixelMask) throw ConfigError("too many pixels");
    t.lut.assign(t.a_pixels.size() * t.b_pixels.size(), -1);
    for (std::size_t i : swept) {
      const auto& p = job.pairs[i];
      if (a_owner[p.pixel_a] != w) continue;
      const auto local = static_cast<std::int32_t>(t.shift.size());
      t.lut[a_local[p.pixel_a] * t.b_pixels.size() + b_local[p.pixel_b]] = local;
      t.shift.push_back(p.shift_ps);
      t.counts.push_back(out[i].counts.data());
    }
  }

  if (workers == 1) {
    sweep(streams, tasks[0], job.window_ps, job.bin_width_ps, bins, job.block_ps);
  } else {
    std::vector<std::thread> pool;
    for (const auto& t : tasks)
      pool.emplace_back([&, tp = &t] { sweep(streams, *tp, job.window_ps, job.bin_width_ps, bins, job.block_ps); });
    for (auto& th : pool) th.join();
  }

  for (std::size_t i : direct) {
    const auto& p = job.pairs[i];
    auto h = pair_histogram(*streams.get(p.pixel_a), *streams.get(p.pixel_b), job.window_ps, job.bin_width_ps,
                            p.shift_ps);
    out[i].counts = std::move(h.counts);
  }
  for (auto& h : out) {
    h.total = 0;
    for (auto c : h.counts) h.total += c;
  }
  return out;
}

// ---------------------------------------------------------------------------

NormalizedHistogram normalize_histogram(const CoincidenceHistogram& h, std::span<const ExclusionZone> zones) {
  NormalizedHistogram n;
  const int bins = h.bins();
  n.x.resize(bins);
  double sum = 0.0;
  for (int i = 0; i < bins; ++i) {
    n.x[i] = h.bin_center(i);
    bool excluded = false;
    for (const auto& z : zones)
      if (std::abs(n.x[i] - z.center_ps) <= z.halfwidth_ps) excluded = true;
    if (!excluded) {
      sum += static_cast<double>(h.counts[i]);
      ++n.sideband_bins;
    }
  }
  if (n.sideband_bins == 0) throw DomainError("normalize_histogram: no sideband bins outside the exclusion zones");
  if (n.sideband_bins < kMinSidebandBins)
    throw DomainError("normalize_histogram: only " + std::to_string(n.sideband_bins) + " sideband bins (need " +
                      std::to_string(kMinSidebandBins) + ")");
  n.background = sum / n.sideband_bins;
  if (!(n.background > 0.0)) throw DomainError("normalize_histogram: sidebands are empty");
  n.y.resize(bins);
  for (int i = 0; i < bins; ++i) n.y[i] = static_cast<double>(h.counts[i]) / n.background;
  return n;
}

NormalizedHistogram normalize_histogram(const CoincidenceHistogram& h, double center_ps, double halfwidth_ps) {
  const ExclusionZone z{center_ps, halfwidth_ps};
  return normalize_histogram(h, std::span<const ExclusionZone>(&z, 1));
}

// ---------------------------------------------------------------------------
// Histogram files

namespace {
constexpr char kHistMagic[8] = {'H', 'B', 'T', 'H', 'I', 'S', 'T', '1'};
constexpr std::uint32_t kHistVersion = 1;
constexpr std::size_t kHistHeaderBytes = 48;
constexpr std::size_t kHistPairFixedBytes = 48;
} // namespace

void save_histograms(const std::string& path, std::span<const CoincidenceHistogram> hists) {
  Picoseconds window = 20000, width = 20, duration = 0;
  int bins = 0;
  if (!hists.empty()) {
    window = hists[0].window_ps;
    width = hists[0].bin_width_ps;
    duration = hists[0].duration_ps;
    bins = histogram_bins(window, width);
  }
  for (const auto& h : hists) {
    if (h.window_ps != window || h.bin_width_ps != width)
      throw ConfigError("save_histograms: histograms use different binning");
    if (!h.missing && h.bins() != bins) throw ConfigError("save_histograms: bin count mismatch");
    if (h.pixel_a < 0 || h.pixel_a > 65535 || h.pixel_b < 0 || h.pixel_b > 65535)
      throw ConfigError("save_histograms: pixel out of 16-bit range");
  }
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  std::uint64_t offset = 0;
  auto write = [&](const unsigned char* p, std::size_t n) {
    if (std::fwrite(p, 1, n, f) != n) {
      std::fclose(f);
      throw IoError("write to '" + path + "' failed", offset);
    }
    offset += n;
  };
  unsigned char hdr[kHistHeaderBytes] = {};
  std::memcpy(hdr, kHistMagic, 8);
  put_u32(hdr + 8, kHistVersion);
  put_u32(hdr + 12, static_cast<std::uint32_t>(hists.size()));
  put_u64(hdr + 16, static_cast<std::uint64_t>(window));
  put_u64(hdr + 24, static_cast<std::uint64_t>(width));
  put_u32(hdr + 32, static_cast<std::uint32_t>(bins));
  put_u32(hdr + 36, 0);
  put_u64(hdr + 40, static_cast<std::uint64_t>(duration));
  write(hdr, sizeof hdr);

  std::vector<unsigned char> rec(kHistPairFixedBytes + 8 * static_cast<std::size_t>(bins));
  for (const auto& h : hists) {
    std::fill(rec.begin(), rec.end(), 0);
    put_u16(rec.data(), static_cast<std::uint16_t>(h.pixel_a));
    put_u16(rec.data() + 2, static_cast<std::uint16_t>(h.pixel_b));
    put_u32(rec.data() + 4, h.missing ? 1u : 0u);
    put_u64(rec.data() + 8, static_cast<std::uint64_t>(h.shift_ps));
    put_u64(rec.data() + 16, h.total);
    put_u64(rec.data() + 24, h.count_a);
    put_u64(rec.data() + 32, h.count_b);
    put_u64(rec.data() + 40, static_cast<std::uint64_t>(h.duration_ps));
    if (!h.missing)
      for (int i = 0; i < bins; ++i) put_u64(rec.data() + kHistPairFixedBytes + 8 * i, h.counts[i]);
    write(rec.data(), rec.size());
  }
  if (std::fclose(f) != 0) throw IoError("close of '" + path + "' failed", offset);
}

std::vector<CoincidenceHistogram> load_histograms(const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw IoError("cannot open '" + path + "'");
  struct Closer {
    std::FILE* f;
    ~Closer() { std::fclose(f); }
  } closer{f};

  unsigned char hdr[kHistHeaderBytes];
  const std::size_t got = std::fread(hdr, 1, sizeof hdr, f);
  if (got >= 8 && std::memcmp(hdr, kHistMagic, 8) != 0) throw FormatError("bad histogram magic", 0);
  if (got < sizeof hdr) throw FormatError("truncated histogram header", got);
  if (get_u32(hdr + 8) != kHistVersion) throw FormatError("unsupported histogram version", 8);
  const std::uint32_t count = get_u32(hdr + 12);
  const auto window = static_cast<Picoseconds>(get_u64(hdr + 16));
  const auto width = static_cast<Picoseconds>(get_u64(hdr + 24));
  const std::uint32_t bins = get_u32(hdr + 32);
  if (count > 0) {
    int expect = 0;
    try {
      expect = histogram_bins(window, width);
    } catch (const ConfigError&) {
      throw FormatError("invalid binning in histogram header", 16);
    }
    if (static_cast<std::uint32_t>(expect) != bins) throw FormatError("bin count inconsistent with window", 32);
  }

  std::vector<CoincidenceHistogram> out(count);
  std::vector<unsigned char> rec(kHistPairFixedBytes + 8 * static_cast<std::size_t>(bins));
  std::uint64_t offset = kHistHeaderBytes;
  for (auto& h : out) {
    if (std::fread(rec.data(), 1, rec.size(), f) != rec.size()) throw FormatError("truncated histogram record", offset);
    h.pixel_a = get_u16(rec.data());
    h.pixel_b = get_u16(rec.data() + 2);
    h.missing = (get_u32(rec.data() + 4) & 1u) != 0;
    h.shift_ps = static_cast<Picoseconds>(get_u64(rec.data() + 8));
    h.total = get_u64(rec.data() + 16);
    h.count_a = get_u64(rec.data() + 24);
    h.count_b = get_u64(rec.data() + 32);
    h.duration_ps = static_cast<Picoseconds>(get_u64(rec.data() + 40));
    h.window_ps = window;
    h.bin_width_ps = width;
    if (!h.missing) {
      h.counts.resize(bins);
      std::uint64_t sum = 0;
      for (std::uint32_t i = 0; i < bins; ++i) {
        h.counts[i] = get_u64(rec.data() + kHistPairFixedBytes + 8 * i);
        sum += h.counts[i];
      }
      if (sum != h.total) throw FormatError("histogram total does not match its counts", offset + 16);
    }
    offset += rec.size();
  }
  if (std::fgetc(f) != EOF) throw FormatError("trailing bytes after last histogram", offset);
  return out;
}

} // namespace hbt
