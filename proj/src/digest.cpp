#include "hbt/digest.hpp"

#include <openssl/evp.h>

#include <cstdio>
#include <filesystem>
#include <memory>
#include <vector>

#include "hbt/errors.hpp"

namespace hbt {

namespace {

struct Sha256 {
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx{EVP_MD_CTX_new(), &EVP_MD_CTX_free};

  Sha256() {
    if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) throw Error("sha256: init failed");
  }
  void update(const void* p, std::size_t n) {
    if (EVP_DigestUpdate(ctx.get(), p, n) != 1) throw Error("sha256: update failed");
  }
  std::string hex() {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_DigestFinal_ex(ctx.get(), md, &len) != 1) throw Error("sha256: final failed");
    static const char* digits = "0123456789abcdef";
    std::string out;
    for (unsigned i = 0; i < len; ++i) {
      out += digits[md[i] >> 4];
      out += digits[md[i] & 15];
    }
    return out;
  }
};

} // namespace

std::string sha256_file(const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw IoError("cannot open '" + path + "' for hashing");
  Sha256 h;
  std::vector<unsigned char> buf(1 << 20);
  std::uint64_t offset = 0;
  while (true) {
    const std::size_t n = std::fread(buf.data(), 1, buf.size(), f);
    if (n > 0) h.update(buf.data(), n);
    offset += n;
    if (n < buf.size()) {
      const bool bad = std::ferror(f) != 0;
      std::fclose(f);
      if (bad) throw IoError("read error while hashing '" + path + "'", offset);
      break;
    }
  }
  return h.hex();
}

std::string sha256_string(const std::string& data) {
  Sha256 h;
  h.update(data.data(), data.size());
  return h.hex();
}

std::uint64_t file_size_bytes(const std::string& path) {
  std::error_code ec;
  const auto n = std::filesystem::file_size(path, ec);
  if (ec) throw IoError("cannot stat '" + path + "': " + ec.message());
  return n;
}

} // namespace hbt
