#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace memdial {

/// Streaming FNV-1a 64 over arbitrary bytes; used for config hashes,
/// data-manifest hashes and schedule byte-identity checks.
class Fnv64 {
 public:
  void update(std::string_view s) {
    for (unsigned char c : s) {
      h_ ^= c;
      h_ *= 1099511628211ULL;
    }
  }
  void update_bytes(const void* p, std::size_t n) {
    const unsigned char* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h_ ^= b[i];
      h_ *= 1099511628211ULL;
    }
  }
  template <typename T>
  void update_pod(const T& v) {
    update_bytes(&v, sizeof(T));
  }
  void update_ints(const std::vector<int>& v) {
    for (int x : v) update_pod(x);
  }
  std::uint64_t digest() const { return h_; }

  std::string hex() const {
    static const char* k = "0123456789abcdef";
    std::string out(16, '0');
    std::uint64_t h = h_;
    for (int i = 15; i >= 0; --i) {
      out[static_cast<std::size_t>(i)] = k[h & 0xf];
      h >>= 4;
    }
    return out;
  }

 private:
  std::uint64_t h_ = 1469598103934665603ULL;
};

inline std::string fnv_hex(std::string_view s) {
  Fnv64 f;
  f.update(s);
  return f.hex();
}

}  // namespace memdial
