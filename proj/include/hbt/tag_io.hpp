#pragma once

// Binary time-tag files.
//
// Layout (little-endian throughout):
//
//   header, 36 bytes
//     0  char[8]  magic "HBTTAG01"
//     8  u32      version (1)
//    12  u16      pixel_count
//    14  u16      reserved, 0
//    16  u32      tick_ps, picoseconds per timestamp unit
//    20  u64      duration_ps
//    28  u64      record_count
//
//   record, 12 bytes, repeated record_count times
//     0  u16      pixel
//     2  u16      reserved, 0
//     4  u64      t, in ticks
//
// Records are globally non-decreasing in t. Nothing time-of-writing dependent
// is stored, so identical inputs give identical files.

#include <cstdint>
#include <cstdio>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "hbt/core.hpp"

namespace hbt {

inline constexpr char kTagMagic[8] = {'H', 'B', 'T', 'T', 'A', 'G', '0', '1'};
inline constexpr std::uint32_t kTagVersion = 1;
inline constexpr std::size_t kTagHeaderBytes = 36;
inline constexpr std::size_t kTagRecordBytes = 12;

struct TagFileHeader {
  std::uint32_t version = kTagVersion;
  std::uint16_t pixel_count = 0;
  std::uint32_t tick_ps = 1;
  std::uint64_t duration_ps = 0;
  std::uint64_t record_count = 0;

  friend bool operator==(const TagFileHeader&, const TagFileHeader&) = default;
};

/// Streaming writer. Validates ordering and pixel range on every append and
/// patches record_count into the header on finish().
class TagWriter {
public:
  TagWriter(const std::string& path, const TagFileHeader& header);
  ~TagWriter();
  TagWriter(const TagWriter&) = delete;
  TagWriter& operator=(const TagWriter&) = delete;

  void append(std::span<const TimeTag> tags);
  /// Flushes, writes the final record count, closes. Returns records written.
  std::uint64_t finish();

  std::uint64_t records_written() const { return count_; }

private:
  void flush_buffer();

  std::FILE* file_ = nullptr;
  std::string path_;
  TagFileHeader header_;
  std::vector<unsigned char> buffer_;
  std::uint64_t count_ = 0;
  std::uint64_t bytes_ = 0;
  Picoseconds last_t_ = 0;
  bool finished_ = false;
};

std::uint64_t write_tags(const TagFileHeader& header, std::span<const TimeTag> tags, const std::string& path);

/// Chunked reader; memory use is O(chunk_hint) records whatever the file size.
class TagReader {
public:
  explicit TagReader(const std::string& path);
  ~TagReader();
  TagReader(const TagReader&) = delete;
  TagReader& operator=(const TagReader&) = delete;

  const TagFileHeader& header() const { return header_; }

  /// Fills `batch` with up to chunk_hint records in file order (timestamps in
  /// ps). Returns false at end of file.
  bool next(std::vector<TimeTag>& batch, std::size_t chunk_hint);

  std::uint64_t records_read() const { return read_; }

private:
  std::FILE* file_ = nullptr;
  TagFileHeader header_;
  std::uint64_t read_ = 0;
  Picoseconds last_t_ = 0;
  std::vector<unsigned char> raw_;
};

TagFileHeader read_tag_header(const std::string& path);
std::vector<TimeTag> read_tags(const std::string& path);

/// Per-pixel sorted timestamp arrays for the unmasked pixels of a channel map.
struct PixelStreams {
  std::vector<std::vector<Picoseconds>> by_pixel; ///< indexed by pixel
  std::vector<bool> present;                      ///< pixel kept by the map
  std::uint64_t kept = 0;
  std::uint64_t dropped_masked = 0;   ///< tags on masked pixels
  std::uint64_t dropped_unmapped = 0; ///< tags on pixels outside both arms
  Picoseconds duration_ps = 0;

  std::uint64_t dropped() const { return dropped_masked + dropped_unmapped; }
  std::uint64_t total() const { return kept + dropped(); }
  /// Sorted times for a kept pixel, or nullptr when the pixel has no stream.
  const std::vector<Picoseconds>* get(int pixel) const;
  std::size_t memory_bytes() const;
};

/// Incremental split of a time-ordered stream into per-pixel arrays.
class PixelSplitter {
public:
  explicit PixelSplitter(const ChannelMap& map);
  void add(std::span<const TimeTag> batch);
  PixelStreams finish(Picoseconds duration_ps = 0);

private:
  PixelStreams out_;
  std::vector<bool> masked_;
};

PixelStreams split_by_pixel(std::span<const TimeTag> stream, const ChannelMap& map);
PixelStreams split_by_pixel(TagReader& reader, const ChannelMap& map, std::size_t chunk_hint = 1 << 20);

/// One pixel's sorted timestamps, used as k-way merge input.
struct PixelSeries {
  std::uint16_t pixel = 0;
  std::span<const Picoseconds> times;
};

/// K-way merge of sorted per-pixel series into (t, pixel)-ordered batches.
void merge_series(std::span<const PixelSeries> series,
                  const std::function<void(std::span<const TimeTag>)>& sink, std::size_t batch = 1 << 16);

} // namespace hbt
