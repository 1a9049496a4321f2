#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "grdr/common.hpp"
#include "grdr/tokenizer.hpp"

namespace grdr {

struct Posting {
  std::uint64_t video_id = 0;
  std::uint8_t view_id = 0;
  auto operator<=>(const Posting&) const = default;
};

using PostingList = std::vector<Posting>;

inline constexpr std::string_view kIndexMagic = "GRDIX1";

/// Immutable prefix trie over fixed-length semantic ids. Children are kept
/// sorted by code; postings live only at depth M.
class TrieIndex {
 public:
  static constexpr std::uint32_t kRoot = 0;

  TrieIndex() : TrieIndex(1, 1) {}
  TrieIndex(std::size_t num_layers, std::size_t codebook_size) : m_(num_layers), k_(codebook_size) {
    if (num_layers == 0 || num_layers > 255) throw invalid_argument("trie depth must be in [1, 255]");
    if (codebook_size == 0 || codebook_size > 65535) throw invalid_argument("trie code range must be in [1, 65535]");
    nodes_.emplace_back();
  }

  std::size_t num_layers() const { return m_; }
  std::size_t codebook_size() const { return k_; }
  std::size_t video_count() const { return video_count_; }
  std::size_t node_count() const { return nodes_.size(); }
  std::size_t leaf_count() const { return leaves_; }
  std::size_t posting_count() const { return postings_; }
  bool empty() const { return nodes_[kRoot].codes.empty(); }
  std::size_t code_bytes() const { return k_ <= 256 ? 1 : 2; }

  /// Child of `node` along `code`, or nullopt.
  std::optional<std::uint32_t> child(std::uint32_t node, Code code) const {
    const auto& n = nodes_[node];
    auto it = std::lower_bound(n.codes.begin(), n.codes.end(), code);
    if (it == n.codes.end() || *it != code) return std::nullopt;
    return n.children[static_cast<std::size_t>(it - n.codes.begin())];
  }
  std::span<const Code> child_codes(std::uint32_t node) const { return nodes_[node].codes; }
  std::span<const std::uint32_t> children(std::uint32_t node) const { return nodes_[node].children; }
  const PostingList& postings(std::uint32_t node) const { return nodes_[node].postings; }

  /// Node reached by walking `prefix` from the root.
  std::optional<std::uint32_t> find(std::span<const Code> prefix) const {
    if (prefix.size() > m_) return std::nullopt;
    std::uint32_t node = kRoot;
    for (Code c : prefix) {
      auto next = child(node, c);
      if (!next) return std::nullopt;
      node = *next;
    }
    return node;
  }

  /// Valid next codes after `prefix`; empty for full-depth or unknown prefixes.
  std::vector<Code> allowed_next(std::span<const Code> prefix) const {
    if (prefix.size() >= m_) return {};
    auto node = find(prefix);
    if (!node) return {};
    const auto codes = child_codes(*node);
    return {codes.begin(), codes.end()};
  }

  /// Postings of a full-length id; empty when the path does not exist.
  const PostingList& resolve(const SemanticId& id) const {
    static const PostingList none;
    if (id.codes.size() != m_) return none;
    auto node = find(id.codes);
    return node ? nodes_[*node].postings : none;
  }

  /// Every (id, postings) leaf in lexicographic id order.
  std::vector<std::pair<SemanticId, const PostingList*>> leaves() const {
    std::vector<std::pair<SemanticId, const PostingList*>> out;
    SemanticId path;
    walk(kRoot, path, out);
    return out;
  }

  std::string serialize() const {
    ByteWriter w;
    w.bytes(kIndexMagic);
    w.u8(static_cast<std::uint8_t>(m_));
    w.u16(static_cast<std::uint16_t>(k_));
    w.u32(static_cast<std::uint32_t>(video_count_));
    write_node(w, kRoot, 0);
    return w.take();
  }

  static TrieIndex deserialize(std::string_view bytes) {
    ByteReader r(bytes);
    try {
      if (!r.has(kIndexMagic.size()) || r.bytes(kIndexMagic.size()) != kIndexMagic)
        throw format_error("index: bad magic");
      const std::size_t m = r.u8();
      const std::size_t k = r.u16();
      if (m == 0 || k == 0) throw format_error("index: zero depth or code range");
      TrieIndex t(m, k);
      t.video_count_ = r.u32();
      t.read_node(r, kRoot, 0);
      if (r.remaining() != 0) throw format_error("index: trailing bytes");
      return t;
    } catch (const std::out_of_range&) {
      throw format_error("index: truncated");
    }
  }

 private:
  friend TrieIndex build_trie(const std::map<std::uint64_t, SemanticIdSet>&, std::size_t, std::size_t);

  struct Node {
    std::vector<Code> codes;
    std::vector<std::uint32_t> children;
    PostingList postings;
  };

  std::uint32_t add_child(std::uint32_t node, Code code) {
    auto& n = nodes_[node];
    auto it = std::lower_bound(n.codes.begin(), n.codes.end(), code);
    const auto pos = static_cast<std::size_t>(it - n.codes.begin());
    if (it != n.codes.end() && *it == code) return n.children[pos];
    const auto id = static_cast<std::uint32_t>(nodes_.size());
    nodes_[node].codes.insert(nodes_[node].codes.begin() + static_cast<std::ptrdiff_t>(pos), code);
    nodes_[node].children.insert(nodes_[node].children.begin() + static_cast<std::ptrdiff_t>(pos), id);
    nodes_.emplace_back();
    return id;
  }

  void walk(std::uint32_t node, SemanticId& path, std::vector<std::pair<SemanticId, const PostingList*>>& out) const {
    if (path.codes.size() == m_) {
      out.emplace_back(path, &nodes_[node].postings);
      return;
    }
    const auto& n = nodes_[node];
    for (std::size_t i = 0; i < n.codes.size(); ++i) {
      path.codes.push_back(n.codes[i]);
      walk(n.children[i], path, out);
      path.codes.pop_back();
    }
  }

  void write_code(ByteWriter& w, Code c) const {
    if (code_bytes() == 1)
      w.u8(static_cast<std::uint8_t>(c));
    else
      w.u16(c);
  }

  void write_node(ByteWriter& w, std::uint32_t node, std::size_t depth) const {
    const auto& n = nodes_[node];
    if (depth == m_) {
      w.u32(static_cast<std::uint32_t>(n.postings.size()));
      for (const auto& p : n.postings) {
        w.u64(p.video_id);
        w.u8(p.view_id);
      }
      return;
    }
    w.u16(static_cast<std::uint16_t>(n.codes.size()));
    for (std::size_t i = 0; i < n.codes.size(); ++i) {
      write_code(w, n.codes[i]);
      const std::size_t at = w.size();
      w.u32(0);
      write_node(w, n.children[i], depth + 1);
      w.at_u32(at, static_cast<std::uint32_t>(w.size() - at - 4));
    }
  }

  void read_node(ByteReader& r, std::uint32_t node, std::size_t depth) {
    if (depth == m_) {
      const std::uint32_t count = r.u32();
      if (count == 0) throw format_error("index: empty posting list");
      if (!r.has(static_cast<std::size_t>(count) * 9)) throw format_error("index: truncated");
      PostingList list(count);
      for (auto& p : list) {
        p.video_id = r.u64();
        p.view_id = r.u8();
      }
      for (std::size_t i = 1; i < list.size(); ++i)
        if (!(list[i - 1] < list[i])) throw format_error("index: posting list not strictly increasing");
      postings_ += list.size();
      ++leaves_;
      nodes_[node].postings = std::move(list);
      return;
    }
    const std::uint16_t count = r.u16();
    if (count == 0 && depth > 0) throw format_error("index: internal node without children");
    int prev = -1;
    for (std::uint16_t i = 0; i < count; ++i) {
      const Code c = code_bytes() == 1 ? r.u8() : r.u16();
      if (c >= k_) throw format_error("index: code " + std::to_string(c) + " out of range");
      if (static_cast<int>(c) <= prev) throw format_error("index: child codes not strictly increasing");
      prev = c;
      const std::uint32_t len = r.u32();
      const std::size_t start = r.position();
      const auto id = static_cast<std::uint32_t>(nodes_.size());
      nodes_[node].codes.push_back(c);
      nodes_[node].children.push_back(id);
      nodes_.emplace_back();
      read_node(r, id, depth + 1);
      if (r.position() - start != len) throw format_error("index: subtree length mismatch");
    }
  }

  std::size_t m_, k_;
  std::size_t video_count_ = 0, leaves_ = 0, postings_ = 0;
  std::vector<Node> nodes_;
};

/// Builds the trie over every view id of every video. Videos sharing an id
/// share one leaf; postings are sorted by (video_id, view_id).
inline TrieIndex build_trie(const std::map<std::uint64_t, SemanticIdSet>& ids, std::size_t num_layers,
                            std::size_t codebook_size) {
  TrieIndex t(num_layers, codebook_size);
  for (const auto& [vid, set] : ids) {
    if (set.size() > 256) throw invalid_argument("video " + std::to_string(vid) + " has more than 256 views");
    for (std::size_t view = 0; view < set.size(); ++view) {
      const auto& id = set[view];
      if (id.codes.size() != num_layers)
        throw invalid_argument("video " + std::to_string(vid) + " view " + std::to_string(view) + ": id length " +
                               std::to_string(id.codes.size()) + " != " + std::to_string(num_layers));
      std::uint32_t node = TrieIndex::kRoot;
      for (Code c : id.codes) {
        if (c >= codebook_size)
          throw invalid_argument("video " + std::to_string(vid) + ": code " + std::to_string(c) + " out of range");
        node = t.add_child(node, c);
      }
      auto& list = t.nodes_[node].postings;
      const Posting p{vid, static_cast<std::uint8_t>(view)};
      auto it = std::lower_bound(list.begin(), list.end(), p);
      if (it == list.end() || *it != p) {
        if (list.empty()) ++t.leaves_;
        list.insert(it, p);
        ++t.postings_;
      }
    }
  }
  t.video_count_ = ids.size();
  return t;
}

inline void save_index(const TrieIndex& t, const std::string& path) { write_file(path, t.serialize()); }
inline TrieIndex load_index(const std::string& path) { return TrieIndex::deserialize(read_file(path)); }

struct StorageReport {
  std::size_t videos = 0;
  std::size_t postings = 0;
  std::size_t id_payload_bytes = 0;  // postings x M x code width
  std::size_t index_bytes = 0;       // serialized trie with posting lists
  std::size_t dense_video_bytes = 0; // videos x d_f x 4
  std::size_t dense_frame_bytes = 0; // dense_video_bytes x frames
  std::optional<double> video_ratio_payload, video_ratio_index, frame_ratio_payload, frame_ratio_index;
};

inline std::optional<double> safe_ratio(std::size_t num, std::size_t den) {
  if (den == 0 || num == 0) return std::nullopt;
  return static_cast<double>(num) / static_cast<double>(den);
}

inline StorageReport storage_report(const TrieIndex& t, std::size_t feature_dim, std::size_t frames) {
  StorageReport r;
  r.videos = t.video_count();
  r.postings = t.posting_count();
  r.id_payload_bytes = r.postings * t.num_layers() * t.code_bytes();
  r.index_bytes = r.videos == 0 ? 0 : t.serialize().size();
  r.dense_video_bytes = r.videos * feature_dim * 4;
  r.dense_frame_bytes = r.dense_video_bytes * frames;
  r.video_ratio_payload = safe_ratio(r.dense_video_bytes, r.id_payload_bytes);
  r.video_ratio_index = safe_ratio(r.dense_video_bytes, r.index_bytes);
  r.frame_ratio_payload = safe_ratio(r.dense_frame_bytes, r.id_payload_bytes);
  r.frame_ratio_index = safe_ratio(r.dense_frame_bytes, r.index_bytes);
  return r;
}

/// Three significant figures; "n/a" for an undefined ratio.
inline std::string format_ratio(const std::optional<double>& r) {
  if (!r) return "n/a";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", *r);
  return buf;
}

inline json to_json(const StorageReport& r) {
  auto ratio = [](const std::optional<double>& v) -> json { return v ? json(format_ratio(v)) : json(nullptr); };
  return json{{"videos", r.videos},
              {"postings", r.postings},
              {"id_payload_bytes", r.id_payload_bytes},
              {"index_bytes", r.index_bytes},
              {"dense_video_bytes", r.dense_video_bytes},
              {"dense_frame_bytes", r.dense_frame_bytes},
              {"video_ratio_payload", ratio(r.video_ratio_payload)},
              {"video_ratio_index", ratio(r.video_ratio_index)},
              {"frame_ratio_payload", ratio(r.frame_ratio_payload)},
              {"frame_ratio_index", ratio(r.frame_ratio_index)}};
}

}  // namespace grdr
