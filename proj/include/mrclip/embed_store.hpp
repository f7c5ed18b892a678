#pragma once

// Keyed embedding store with exact cosine top-k search.
//
// File: "MREM" | version u32 | d u32 | count u64 |
//       per record: id_len u32 | id bytes | modality u8 | group_label u32 | d x f32 LE

#include "mrclip/error.hpp"
#include "mrclip/util.hpp"

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace mrclip {

enum class Modality : std::uint8_t { Image = 0, Text = 1 };

inline const char* modality_name(Modality m) { return m == Modality::Image ? "IMAGE" : "TEXT"; }

struct EmbeddingRecord {
    std::string volume_id;
    Modality modality = Modality::Image;
    std::vector<float> vector;
    int group_label = -1;

    bool operator==(const EmbeddingRecord&) const = default;
};

struct Match {
    std::string volume_id;
    double cosine;

    bool operator==(const Match&) const = default;
};

inline double dot(std::span<const float> a, std::span<const float> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        s += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    }
    return s;
}

class EmbeddingStore {
public:
    inline static constexpr double kNormTolerance = 1e-4;

    std::size_t dim() const { return dim_; }
    std::size_t size() const { return records_.size(); }
    bool empty() const { return records_.empty(); }

    void put(EmbeddingRecord r) {
        require(!r.volume_id.empty(), ErrorCode::InvalidArgument, "embedding needs a volume_id");
        require(!r.vector.empty() && (dim_ == 0 || r.vector.size() == dim_), ErrorCode::ShapeMismatch,
                "embedding dimension " + std::to_string(r.vector.size()) + " does not match store dimension " +
                    std::to_string(dim_));
        const double norm = std::sqrt(dot(r.vector, r.vector));
        require(std::abs(norm - 1.0) <= kNormTolerance, ErrorCode::InvalidArgument,
                "embedding for '" + r.volume_id + "' is not unit norm (" + std::to_string(norm) + ")");
        Key key{r.volume_id, r.modality};
        require(!records_.contains(key), ErrorCode::DuplicateKey,
                std::string("duplicate embedding (") + r.volume_id + ", " + modality_name(r.modality) + ")");
        dim_ = r.vector.size();
        records_.emplace(std::move(key), std::move(r));
    }

    const EmbeddingRecord* get(const std::string& id, Modality m) const {
        const auto it = records_.find(Key{id, m});
        return it == records_.end() ? nullptr : &it->second;
    }

    /// Sorted by volume_id (IMAGE before TEXT for equal ids).
    std::vector<const EmbeddingRecord*> scan(std::optional<Modality> filter = std::nullopt) const {
        std::vector<const EmbeddingRecord*> out;
        for (const auto& [key, r] : records_) {
            if (!filter || r.modality == *filter) {
                out.push_back(&r);
            }
        }
        return out;
    }

    /// Exact search: every candidate is scored, ties go to the smaller id.
    std::vector<Match> topk(std::span<const float> query, std::size_t k, std::optional<Modality> filter = std::nullopt) const {
        require(k >= 1, ErrorCode::InvalidArgument, "k must be at least 1");
        const auto candidates = scan(filter);
        require(!candidates.empty(), ErrorCode::EmptyStore, "no embeddings to search");
        require(query.size() == dim_, ErrorCode::ShapeMismatch, "query dimension does not match store");
        std::vector<Match> scored;
        scored.reserve(candidates.size());
        for (const auto* r : candidates) {
            scored.push_back({r->volume_id, dot(query, r->vector)});
        }
        const std::size_t n = std::min(k, scored.size());
        std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(n), scored.end(),
                          [](const Match& a, const Match& b) {
                              return a.cosine != b.cosine ? a.cosine > b.cosine : a.volume_id < b.volume_id;
                          });
        scored.resize(n);
        return scored;
    }

private:
    using Key = std::pair<std::string, Modality>;
    std::size_t dim_ = 0;
    std::map<Key, EmbeddingRecord> records_;
};

inline constexpr std::string_view kStoreMagic = "MREM";
inline constexpr std::uint32_t kStoreVersion = 1;

inline std::vector<std::uint8_t> encode_store(const EmbeddingStore& store) {
    ByteWriter w;
    w.put_bytes(kStoreMagic);
    w.put<std::uint32_t>(kStoreVersion);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(store.dim()));
    w.put<std::uint64_t>(store.size());
    for (const auto* r : store.scan()) {
        w.put<std::uint32_t>(static_cast<std::uint32_t>(r->volume_id.size()));
        w.put_bytes(r->volume_id);
        w.put<std::uint8_t>(static_cast<std::uint8_t>(r->modality));
        w.put<std::uint32_t>(static_cast<std::uint32_t>(r->group_label));
        w.put_array<float>(r->vector);
    }
    return w.take();
}

inline EmbeddingStore decode_store(std::span<const std::uint8_t> bytes) {
    ByteReader rd(bytes);
    require(rd.get_string(4) == kStoreMagic, ErrorCode::BadFormat, "not an MREM embedding file");
    require(rd.get<std::uint32_t>() == kStoreVersion, ErrorCode::BadFormat, "unsupported embedding file version");
    const auto d = rd.get<std::uint32_t>();
    const auto count = rd.get<std::uint64_t>();
    require(count == 0 || d > 0, ErrorCode::BadFormat, "zero embedding dimension");
    EmbeddingStore store;
    for (std::uint64_t i = 0; i < count; ++i) {
        EmbeddingRecord r;
        r.volume_id = rd.get_string(rd.get<std::uint32_t>());
        const auto m = rd.get<std::uint8_t>();
        require(m <= 1, ErrorCode::BadFormat, "unknown modality code " + std::to_string(m));
        r.modality = static_cast<Modality>(m);
        r.group_label = static_cast<int>(static_cast<std::int32_t>(rd.get<std::uint32_t>()));
        r.vector.resize(d);
        rd.get_array<float>(r.vector);
        store.put(std::move(r));
    }
    require(rd.remaining() == 0, ErrorCode::BadFormat, "trailing bytes after embeddings");
    return store;
}

inline void write_store(const std::string& path, const EmbeddingStore& s) { write_file_bytes(path, encode_store(s)); }

inline EmbeddingStore read_store(const std::string& path) { return decode_store(read_file_bytes(path)); }

} // namespace mrclip
