#include "hbt/tag_io.hpp"

#include <algorithm>
#include <array>
#include <cstring>
#include <queue>

#include "hbt/errors.hpp"
#include "byteio.hpp"

namespace hbt {

namespace {

using namespace detail;

std::array<unsigned char, kTagHeaderBytes> encode_header(const TagFileHeader& h) {
  std::array<unsigned char, kTagHeaderBytes> b{};
  std::memcpy(b.data(), kTagMagic, 8);
  put_u32(b.data() + 8, h.version);
  put_u16(b.data() + 12, h.pixel_count);
  put_u16(b.data() + 14, 0);
  put_u32(b.data() + 16, h.tick_ps);
  put_u64(b.data() + 20, h.duration_ps);
  put_u64(b.data() + 28, h.record_count);
  return b;
}

constexpr std::size_t kWriteBufferBytes = 1 << 20;

} // namespace

// ---------------------------------------------------------------------------
// TagWriter

TagWriter::TagWriter(const std::string& path, const TagFileHeader& header) : path_(path), header_(header) {
  if (header_.pixel_count == 0) throw ConfigError("tag header: pixel_count must be > 0");
  if (header_.tick_ps == 0) throw ConfigError("tag header: tick_ps must be >= 1");
  file_ = std::fopen(path.c_str(), "wb");
  if (!file_) throw IoError("cannot open '" + path + "' for writing", 0);
  header_.record_count = 0;
  const auto h = encode_header(header_);
  if (std::fwrite(h.data(), 1, h.size(), file_) != h.size()) throw IoError("header write failed", 0);
  bytes_ = h.size();
  buffer_.reserve(kWriteBufferBytes);
}

TagWriter::~TagWriter() {
  if (file_) std::fclose(file_);
}

void TagWriter::flush_buffer() {
  if (buffer_.empty()) return;
  const std::size_t n = std::fwrite(buffer_.data(), 1, buffer_.size(), file_);
  if (n != buffer_.size()) throw IoError("write to '" + path_ + "' failed", bytes_ + n);
  bytes_ += n;
  buffer_.clear();
}

void TagWriter::append(std::span<const TimeTag> tags) {
  if (finished_) throw Error("TagWriter: append after finish");
  const Picoseconds tick = header_.tick_ps;
  for (const auto& tag : tags) {
    if (tag.t < 0) throw OrderingError("negative timestamp at record " + std::to_string(count_));
    if (tag.t < last_t_)
      throw OrderingError("timestamps not sorted at record " + std::to_string(count_) + " (" +
                          std::to_string(tag.t) + " < " + std::to_string(last_t_) + ")");
    if (tag.pixel >= header_.pixel_count)
      throw ConfigError("pixel " + std::to_string(tag.pixel) + " >= pixel_count at record " +
                        std::to_string(count_));
    if (tag.t % tick != 0)
      throw ConfigError("timestamp " + std::to_string(tag.t) + " is not a multiple of tick_ps");
    last_t_ = tag.t;
    unsigned char rec[kTagRecordBytes];
    put_u16(rec, tag.pixel);
    put_u16(rec + 2, 0);
    put_u64(rec + 4, static_cast<std::uint64_t>(tag.t / tick));
    buffer_.insert(buffer_.end(), rec, rec + kTagRecordBytes);
    ++count_;
    if (buffer_.size() >= kWriteBufferBytes) flush_buffer();
  }
}

std::uint64_t TagWriter::finish() {
  if (finished_) return count_;
  flush_buffer();
  header_.record_count = count_;
  const auto h = encode_header(header_);
  if (std::fseek(file_, 0, SEEK_SET) != 0 || std::fwrite(h.data(), 1, h.size(), file_) != h.size())
    throw IoError("header update of '" + path_ + "' failed", 0);
  if (std::fclose(file_) != 0) {
    file_ = nullptr;
    throw IoError("close of '" + path_ + "' failed", bytes_);
  }
  file_ = nullptr;
  finished_ = true;
  return count_;
}

std::uint64_t write_tags(const TagFileHeader& header, std::span<const TimeTag> tags, const std::string& path) {
  TagWriter w(path, header);
  w.append(tags);
  return w.finish();
}

// ---------------------------------------------------------------------------
// TagReader

TagReader::TagReader(const std::string& path) {
  file_ = std::fopen(path.c_str(), "rb");
  if (!file_) throw IoError("cannot open '" + path + "'");
  unsigned char h[kTagHeaderBytes];
  const std::size_t got = std::fread(h, 1, sizeof h, file_);
  if (got >= 8 && std::memcmp(h, kTagMagic, 8) != 0) throw FormatError("bad magic in '" + path + "'", 0);
  if (got < sizeof h) throw FormatError("truncated header in '" + path + "'", got);
  header_.version = get_u32(h + 8);
  header_.pixel_count = get_u16(h + 12);
  header_.tick_ps = get_u32(h + 16);
  header_.duration_ps = get_u64(h + 20);
  header_.record_count = get_u64(h + 28);
  if (header_.version != kTagVersion) throw FormatError("unsupported version", 8);
  if (header_.pixel_count == 0) throw FormatError("pixel_count is zero", 12);
  if (header_.tick_ps == 0) throw FormatError("tick_ps is zero", 16);

  if (std::fseek(file_, 0, SEEK_END) != 0) throw IoError("seek failed on '" + path + "'");
  const auto size = static_cast<std::uint64_t>(std::ftell(file_));
  std::fseek(file_, static_cast<long>(kTagHeaderBytes), SEEK_SET);
  const std::uint64_t expected = kTagHeaderBytes + header_.record_count * kTagRecordBytes;
  if (size < expected) {
    const std::uint64_t complete = (size - kTagHeaderBytes) / kTagRecordBytes;
    throw FormatError("truncated record in '" + path + "'", kTagHeaderBytes + complete * kTagRecordBytes);
  }
  if (size > expected) throw FormatError("trailing bytes after last record in '" + path + "'", expected);
}

TagReader::~TagReader() {
  if (file_) std::fclose(file_);
}

bool TagReader::next(std::vector<TimeTag>& batch, std::size_t chunk_hint) {
  batch.clear();
  if (chunk_hint == 0) chunk_hint = 1;
  const std::uint64_t remaining = header_.record_count - read_;
  if (remaining == 0) return false;
  const std::size_t n = static_cast<std::size_t>(std::min<std::uint64_t>(remaining, chunk_hint));
  raw_.resize(n * kTagRecordBytes);
  const std::size_t got = std::fread(raw_.data(), 1, raw_.size(), file_);
  const std::uint64_t base = kTagHeaderBytes + read_ * kTagRecordBytes;
  if (got != raw_.size()) throw FormatError("truncated record", base + (got / kTagRecordBytes) * kTagRecordBytes);
  batch.resize(n);
  const Picoseconds tick = header_.tick_ps;
  for (std::size_t i = 0; i < n; ++i) {
    const unsigned char* r = raw_.data() + i * kTagRecordBytes;
    const std::uint16_t pixel = get_u16(r);
    const auto t = static_cast<Picoseconds>(get_u64(r + 4)) * tick;
    if (pixel >= header_.pixel_count) throw FormatError("pixel out of range", base + i * kTagRecordBytes);
    if (t < last_t_) throw FormatError("timestamps not sorted", base + i * kTagRecordBytes);
    last_t_ = t;
    batch[i] = {pixel, t};
  }
  read_ += n;
  return true;
}

TagFileHeader read_tag_header(const std::string& path) { return TagReader(path).header(); }

std::vector<TimeTag> read_tags(const std::string& path) {
  TagReader r(path);
  std::vector<TimeTag> all, batch;
  all.reserve(static_cast<std::size_t>(r.header().record_count));
  while (r.next(batch, 1 << 20)) all.insert(all.end(), batch.begin(), batch.end());
  return all;
}

// ---------------------------------------------------------------------------
// Per-pixel split

const std::vector<Picoseconds>* PixelStreams::get(int pixel) const {
  if (pixel < 0 || pixel >= static_cast<int>(by_pixel.size()) || !present[pixel]) return nullptr;
  return &by_pixel[pixel];
}

std::size_t PixelStreams::memory_bytes() const {
  std::size_t b = 0;
  for (const auto& v : by_pixel) b += v.capacity() * sizeof(Picoseconds);
  return b;
}

PixelSplitter::PixelSplitter(const ChannelMap& map) {
  const auto n = static_cast<std::size_t>(std::max(map.pixel_count(), 1));
  out_.by_pixel.resize(n);
  out_.present.assign(n, false);
  for (Arm a : {Arm::A, Arm::B})
    for (const auto& c : map.arm(a))
      if (!map.is_masked(c.pixel)) out_.present[c.pixel] = true;
  // masked pixels that are mapped are reported as masked, the rest as unmapped
  masked_.assign(n, false);
  for (int p : map.masked())
    if (p >= 0 && p < static_cast<int>(n) && map.find(p)) masked_[p] = true;
}

void PixelSplitter::add(std::span<const TimeTag> batch) {
  for (const auto& tag : batch) {
    const std::size_t p = tag.pixel;
    if (p < out_.present.size() && out_.present[p]) {
      auto& v = out_.by_pixel[p];
      if (!v.empty() && tag.t < v.back())
        throw OrderingError("pixel " + std::to_string(p) + " timestamps not sorted");
      v.push_back(tag.t);
      ++out_.kept;
    } else if (p < masked_.size() && masked_[p]) {
      ++out_.dropped_masked;
    } else {
      ++out_.dropped_unmapped;
    }
  }
}

PixelStreams PixelSplitter::finish(Picoseconds duration_ps) {
  for (auto& v : out_.by_pixel) v.shrink_to_fit();
  out_.duration_ps = duration_ps;
  return std::move(out_);
}

PixelStreams split_by_pixel(std::span<const TimeTag> stream, const ChannelMap& map) {
  PixelSplitter s(map);
  s.add(stream);
  Picoseconds duration = stream.empty() ? 0 : stream.back().t + 1;
  return s.finish(duration);
}

PixelStreams split_by_pixel(TagReader& reader, const ChannelMap& map, std::size_t chunk_hint) {
  PixelSplitter s(map);
  std::vector<TimeTag> batch;
  while (reader.next(batch, chunk_hint)) s.add(batch);
  return s.finish(static_cast<Picoseconds>(reader.header().duration_ps));
}

// ---------------------------------------------------------------------------
// k-way merge

void merge_series(std::span<const PixelSeries> series,
                  const std::function<void(std::span<const TimeTag>)>& sink, std::size_t batch) {
  struct Head {
    Picoseconds t;
    std::uint16_t pixel;
    std::uint32_t source;
    std::size_t pos;
  };
  auto later = [](const Head& x, const Head& y) { return x.t > y.t || (x.t == y.t && x.pixel > y.pixel); };
  std::priority_queue<Head, std::vector<Head>, decltype(later)> heap(later);
  for (std::uint32_t i = 0; i < series.size(); ++i)
    if (!series[i].times.empty()) heap.push({series[i].times[0], series[i].pixel, i, 0});

  std::vector<TimeTag> out;
  out.reserve(batch);
  while (!heap.empty()) {
    Head h = heap.top();
    heap.pop();
    out.push_back({h.pixel, h.t});
    const auto& s = series[h.source];
    if (++h.pos < s.times.size()) {
      h.t = s.times[h.pos];
      heap.push(h);
    }
    if (out.size() >= batch) {
      sink(out);
      out.clear();
    }
  }
  if (!out.empty()) sink(out);
}

} // namespace hbt
