#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "grdr/common.hpp"

namespace grdr {

enum class StoreKind { video, query };

inline constexpr std::string_view kVideoMagic = "GRDFV1";
inline constexpr std::string_view kQueryMagic = "GRDFQ1";
inline constexpr std::size_t kStoreHeaderBytes = 16;

// Distinct load failures; each maps to its own reportable message.
enum class StoreErrorCode { bad_magic, truncated, trailing_bytes, zero_dimension, duplicate_id, non_finite, zero_norm };

class StoreError : public Error {
 public:
  StoreError(StoreErrorCode code, const std::string& what)
      : Error(ErrorCategory::format, what), code_(code) {}
  StoreErrorCode code() const noexcept { return code_; }

 private:
  StoreErrorCode code_;
};

/// Id-addressed collection of fixed-dimension vectors. Video stores carry
/// only ids; query stores also carry the ground-truth target video and an
/// optional text. Immutable once built; rows are contiguous and row-major.
class FeatureStore {
 public:
  FeatureStore() = default;
  FeatureStore(StoreKind kind, std::uint32_t dimension) : kind_(kind), dimension_(dimension) {
    if (dimension == 0) throw StoreError(StoreErrorCode::zero_dimension, "feature dimension must be positive");
  }

  void add_video(std::uint64_t id, std::span<const float> features) {
    if (kind_ != StoreKind::video) throw invalid_argument("add_video on a query store");
    append(id, features);
  }

  void add_query(std::uint64_t id, std::uint64_t target_video, std::string text,
                 std::span<const float> features) {
    if (kind_ != StoreKind::query) throw invalid_argument("add_query on a video store");
    append(id, features);
    targets_.push_back(target_video);
    texts_.push_back(std::move(text));
  }

  StoreKind kind() const { return kind_; }
  std::uint32_t dimension() const { return dimension_; }
  std::size_t size() const { return ids_.size(); }
  bool empty() const { return ids_.empty(); }
  bool normalized() const { return normalized_; }

  std::uint64_t id(std::size_t i) const { return ids_[i]; }
  std::uint64_t target(std::size_t i) const { return targets_.at(i); }
  const std::string& text(std::size_t i) const { return texts_.at(i); }
  std::span<const float> row(std::size_t i) const {
    return {data_.data() + i * dimension_, dimension_};
  }
  const std::vector<std::uint64_t>& ids() const { return ids_; }
  std::span<const float> data() const { return data_; }

  bool contains(std::uint64_t id) const { return index_.count(id) != 0; }
  std::size_t index_of(std::uint64_t id) const {
    auto it = index_.find(id);
    if (it == index_.end()) throw invalid_argument("unknown id " + std::to_string(id));
    return it->second;
  }

  bool operator==(const FeatureStore& o) const {
    return kind_ == o.kind_ && dimension_ == o.dimension_ && ids_ == o.ids_ && targets_ == o.targets_ &&
           texts_ == o.texts_ && data_.size() == o.data_.size() &&
           std::memcmp(data_.data(), o.data_.data(), data_.size() * 4) == 0;
  }

 private:
  friend struct StoreAccess;

  void append(std::uint64_t id, std::span<const float> features) {
    if (features.size() != dimension_)
      throw invalid_argument("record " + std::to_string(id) + " has dimension " +
                             std::to_string(features.size()) + ", store has " + std::to_string(dimension_));
    if (!index_.emplace(id, ids_.size()).second)
      throw StoreError(StoreErrorCode::duplicate_id, "duplicate id " + std::to_string(id));
    ids_.push_back(id);
    data_.insert(data_.end(), features.begin(), features.end());
  }

  StoreKind kind_ = StoreKind::video;
  std::uint32_t dimension_ = 1;
  bool normalized_ = false;
  std::vector<std::uint64_t> ids_;
  std::vector<std::uint64_t> targets_;
  std::vector<std::string> texts_;
  std::vector<float> data_;
  std::unordered_map<std::uint64_t, std::size_t> index_;
};

struct StoreAccess {
  static std::vector<float>& data(FeatureStore& s) { return s.data_; }
  static void set_normalized(FeatureStore& s, bool v) { s.normalized_ = v; }
};

inline std::string serialize_store(const FeatureStore& store) {
  ByteWriter w;
  w.bytes(store.kind() == StoreKind::video ? kVideoMagic : kQueryMagic);
  w.u16(0);
  w.u32(static_cast<std::uint32_t>(store.size()));
  w.u32(store.dimension());
  for (std::size_t i = 0; i < store.size(); ++i) {
    w.u64(store.id(i));
    if (store.kind() == StoreKind::query) {
      w.u64(store.target(i));
      w.u32(static_cast<std::uint32_t>(store.text(i).size()));
      w.bytes(store.text(i));
    }
    for (float v : store.row(i)) w.f32(v);
  }
  return w.take();
}

/// Parses a feature file image. Vectors are taken verbatim; no
/// normalization happens here.
inline FeatureStore parse_store(std::string_view bytes, StoreKind kind) {
  if (bytes.size() < kStoreHeaderBytes)
    throw StoreError(StoreErrorCode::truncated, "file shorter than the 16-byte header");
  const auto magic = kind == StoreKind::video ? kVideoMagic : kQueryMagic;
  if (bytes.substr(0, 6) != magic)
    throw StoreError(StoreErrorCode::bad_magic,
                     "bad magic: expected " + std::string(magic) + " got '" + std::string(bytes.substr(0, 6)) + "'");
  ByteReader r(bytes);
  r.bytes(8);
  const std::uint32_t count = r.u32();
  const std::uint32_t dim = r.u32();
  if (dim == 0) throw StoreError(StoreErrorCode::zero_dimension, "dimension 0 in header");

  FeatureStore store(kind, dim);
  std::vector<float> row(dim);
  const std::size_t payload = static_cast<std::size_t>(dim) * 4;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::size_t fixed = kind == StoreKind::video ? 8 : 20;
    if (!r.has(fixed))
      throw StoreError(StoreErrorCode::truncated, "truncated: header declares " + std::to_string(count) +
                                                      " records, file ends in record " + std::to_string(i));
    const std::uint64_t id = r.u64();
    std::uint64_t target = 0;
    std::string text;
    if (kind == StoreKind::query) {
      target = r.u64();
      const std::uint32_t len = r.u32();
      if (!r.has(len)) throw StoreError(StoreErrorCode::truncated, "truncated text in record " + std::to_string(i));
      text = std::string(r.bytes(len));
    }
    if (!r.has(payload))
      throw StoreError(StoreErrorCode::truncated, "truncated: header declares " + std::to_string(count) +
                                                      " records, file ends in record " + std::to_string(i));
    for (auto& v : row) v = r.f32();
    if (!all_finite(row))
      throw StoreError(StoreErrorCode::non_finite, "non-finite component in record " + std::to_string(id));
    if (kind == StoreKind::video)
      store.add_video(id, row);
    else
      store.add_query(id, target, std::move(text), row);
  }
  if (r.remaining() != 0)
    throw StoreError(StoreErrorCode::trailing_bytes,
                     std::to_string(r.remaining()) + " trailing bytes after " + std::to_string(count) + " records");
  return store;
}

inline FeatureStore load_store(const std::string& path, StoreKind kind) {
  return parse_store(read_file(path), kind);
}

inline void save_store(const FeatureStore& store, const std::string& path) {
  write_file(path, serialize_store(store));
}

struct NormalizeReport {
  std::size_t degenerate = 0;  // zero-norm rows replaced by e_0
};

/// Scales every row to unit norm. Rows already unit within 1e-6 are kept
/// verbatim so the operation is idempotent bit-for-bit.
inline FeatureStore normalize(const FeatureStore& in, bool allow_degenerate = false,
                              NormalizeReport* report = nullptr) {
  FeatureStore out = in;
  auto& data = StoreAccess::data(out);
  const std::size_t d = in.dimension();
  std::size_t degenerate = 0;
  for (std::size_t i = 0; i < in.size(); ++i) {
    std::span<float> row(data.data() + i * d, d);
    const double n = norm(std::span<const float>(row));
    if (n == 0.0) {
      if (!allow_degenerate)
        throw StoreError(StoreErrorCode::zero_norm, "zero-norm vector for id " + std::to_string(in.id(i)));
      std::fill(row.begin(), row.end(), 0.0f);
      row[0] = 1.0f;
      ++degenerate;
      continue;
    }
    if (std::abs(n - 1.0) <= 1e-6) continue;
    for (float& v : row) v = static_cast<float>(v / n);
  }
  StoreAccess::set_normalized(out, true);
  if (report) report->degenerate = degenerate;
  return out;
}

}  // namespace grdr
