#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace grdr {

// Error hierarchy. Every failure the engine reports is one of these; the CLI
// maps the category onto its exit code.
enum class ErrorCategory { config, io, format, numerical, invalid_argument };

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& what)
      : std::runtime_error(what), category_(category) {}
  ErrorCategory category() const noexcept { return category_; }

 private:
  ErrorCategory category_;
};

inline Error config_error(const std::string& what) { return {ErrorCategory::config, what}; }
inline Error io_error(const std::string& what) { return {ErrorCategory::io, what}; }
inline Error format_error(const std::string& what) { return {ErrorCategory::format, what}; }
inline Error numerical_error(const std::string& what) { return {ErrorCategory::numerical, what}; }
inline Error invalid_argument(const std::string& what) {
  return {ErrorCategory::invalid_argument, what};
}

// Vector math. Storage is single precision; every reduction accumulates in
// double.

inline double dot(std::span<const float> a, std::span<const float> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * b[i];
  return s;
}

inline double dot(std::span<const double> a, std::span<const float> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * static_cast<double>(b[i]);
  return s;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

template <class T>
double norm(std::span<const T> a) {
  double s = 0.0;
  for (T v : a) s += static_cast<double>(v) * static_cast<double>(v);
  return std::sqrt(s);
}

inline double norm(const std::vector<double>& a) { return norm(std::span<const double>(a)); }
inline double norm(const std::vector<float>& a) { return norm(std::span<const float>(a)); }

// Cosine with a 0 result when either side has zero norm.
template <class A, class B>
double cosine(std::span<const A> a, std::span<const B> b) {
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double x = a[i], y = b[i];
    ab += x * y;
    aa += x * x;
    bb += y * y;
  }
  if (aa == 0.0 || bb == 0.0) return 0.0;
  return ab / (std::sqrt(aa) * std::sqrt(bb));
}

// Gradient of cos(a, b) w.r.t. a, scaled by `upstream` and added to `grad_a`.
// `na`, `nb` are the norms, `c` the cosine value.
template <class A, class B>
void add_cosine_grad(std::span<const A> a, std::span<const B> b, double na, double nb, double c,
                     double upstream, std::span<double> grad_a) {
  if (na == 0.0 || nb == 0.0 || upstream == 0.0) return;
  const double inv = 1.0 / (na * nb);
  const double self = c / (na * na);
  for (std::size_t i = 0; i < a.size(); ++i) {
    grad_a[i] += upstream * (static_cast<double>(b[i]) * inv - static_cast<double>(a[i]) * self);
  }
}

inline bool all_finite(std::span<const float> v) {
  for (float x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

// Numerically stable softmax in place; returns log of the partition function.
inline double softmax_inplace(std::span<double> logits) {
  double mx = -INFINITY;
  for (double x : logits) mx = std::max(mx, x);
  double z = 0.0;
  for (double& x : logits) {
    x = std::exp(x - mx);
    z += x;
  }
  for (double& x : logits) x /= z;
  return mx + std::log(z);
}

// Log-probability clamp shared by every likelihood loss.
inline constexpr double kLogClamp = 1e-12;
inline double clamped_log(double p) { return std::log(std::max(p, kLogClamp)); }

// FNV-1a 64; used for config hashes and checkpoint fingerprints.
inline std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[static_cast<std::size_t>(i)] = digits[v & 0xf];
    v >>= 4;
  }
  return s;
}

// Little-endian byte sink/source used by every binary format in the engine.
class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u16(std::uint16_t v) { put_le(v, 2); }
  void u32(std::uint32_t v) { put_le(v, 4); }
  void u64(std::uint64_t v) { put_le(v, 8); }
  void f32(float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    u32(bits);
  }
  void bytes(std::string_view s) { buf_.append(s.data(), s.size()); }
  void at_u32(std::size_t pos, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_[pos + i] = static_cast<char>((v >> (8 * i)) & 0xff);
  }
  std::size_t size() const { return buf_.size(); }
  const std::string& str() const { return buf_; }
  std::string take() { return std::move(buf_); }

 private:
  void put_le(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  std::string buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string_view data) : data_(data) {}

  bool has(std::size_t n) const { return data_.size() - pos_ >= n; }
  std::size_t remaining() const { return data_.size() - pos_; }
  std::size_t position() const { return pos_; }

  std::uint8_t u8() { return static_cast<std::uint8_t>(get_le(1)); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(get_le(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(get_le(4)); }
  std::uint64_t u64() { return get_le(8); }
  float f32() {
    const std::uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  std::string_view bytes(std::size_t n) {
    require(n);
    auto s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  void require(std::size_t n) const {
    if (!has(n)) throw std::out_of_range("read past end of buffer");
  }
  std::uint64_t get_le(int n) {
    require(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }

  std::string_view data_;
  std::size_t pos_ = 0;
};

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open file for reading: " + path);
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw io_error("read failed: " + path);
  return data;
}

inline void write_file(const std::string& path, std::string_view data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw io_error("cannot open file for writing: " + path);
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out) throw io_error("write failed: " + path);
}

}  // namespace grdr
