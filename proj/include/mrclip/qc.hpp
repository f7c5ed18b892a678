#pragma once

// Metadata quality control: controlled corruption of records, image-text
// cosine scoring and detection AUC.

#include "mrclip/embed_store.hpp"
#include "mrclip/encoders.hpp"
#include "mrclip/grouping.hpp"
#include "mrclip/templating.hpp"

#include <map>
#include <numeric>

namespace mrclip {

enum class CorruptionKind { Numeric, WrongTag, MissingTag };
enum class CorruptionLevel { Small, Medium, Large };

inline std::string_view kind_name(CorruptionKind k) {
    switch (k) {
    case CorruptionKind::Numeric: return "NUMERIC";
    case CorruptionKind::WrongTag: return "WRONG_TAG";
    case CorruptionKind::MissingTag: return "MISSING_TAG";
    }
    return "?";
}

inline std::string_view level_name(CorruptionLevel l) {
    switch (l) {
    case CorruptionLevel::Small: return "SMALL";
    case CorruptionLevel::Medium: return "MEDIUM";
    case CorruptionLevel::Large: return "LARGE";
    }
    return "?";
}

inline CorruptionKind kind_from_name(std::string_view s) {
    if (s == "NUMERIC") return CorruptionKind::Numeric;
    if (s == "WRONG_TAG") return CorruptionKind::WrongTag;
    if (s == "MISSING_TAG" || s == "MISSING") return CorruptionKind::MissingTag;
    fail(ErrorCode::InvalidArgument, "unknown corruption kind '" + std::string(s) + "'");
}

inline CorruptionLevel level_from_name(std::string_view s) {
    if (s == "SMALL") return CorruptionLevel::Small;
    if (s == "MEDIUM") return CorruptionLevel::Medium;
    if (s == "LARGE") return CorruptionLevel::Large;
    fail(ErrorCode::InvalidArgument, "unknown corruption level '" + std::string(s) + "'");
}

struct CorruptionSpec {
    CorruptionKind kind = CorruptionKind::MissingTag;
    CorruptionLevel level = CorruptionLevel::Large;
    double rate = 0.5;
    std::uint64_t seed = 0;

    void validate() const {
        require(rate >= 0.0 && rate <= 1.0, ErrorCode::InvalidArgument, "corruption rate must be in [0, 1]");
    }
};

namespace detail {

using StringField = std::optional<std::string> MetadataRecord::*;
using NumberField = std::optional<double> MetadataRecord::*;

/// Categorical fields grouped as they are corrupted together; levels are
/// cumulative (SMALL uses the first group, LARGE all three).
struct FieldGroup {
    std::vector<StringField> strings;
    std::vector<NumberField> numbers;
};

inline const std::array<FieldGroup, 3>& tag_groups() {
    static const std::array<FieldGroup, 3> groups{{
        {{&MetadataRecord::series_description}, {}},
        {{&MetadataRecord::sequence_type, &MetadataRecord::sequence_variant}, {}},
        {{&MetadataRecord::manufacturer, &MetadataRecord::scanner_model}, {&MetadataRecord::field_strength_t}},
    }};
    return groups;
}

inline std::size_t group_count(CorruptionLevel l) { return static_cast<std::size_t>(l) + 1; }

inline bool same_values(const FieldGroup& g, const MetadataRecord& a, const MetadataRecord& b) {
    for (auto f : g.strings)
        if (a.*f != b.*f) return false;
    for (auto f : g.numbers)
        if (a.*f != b.*f) return false;
    return true;
}

inline constexpr std::array<NumberField, 3> kTimingFields{&MetadataRecord::echo_time_ms, &MetadataRecord::repetition_time_ms,
                                                          &MetadataRecord::inversion_time_ms};

} // namespace detail

/// Returns a corrupted copy of `r`. `donors` supplies replacement values for
/// NUMERIC-MEDIUM and WRONG_TAG; fields without a suitable donor stay as
/// they are. Everything outside the level's field list is untouched.
inline MetadataRecord corrupt(const MetadataRecord& r, CorruptionKind kind, CorruptionLevel level,
                              const std::vector<MetadataRecord>& donors, Rng& rng) {
    MetadataRecord out = r;
    switch (kind) {
    case CorruptionKind::Numeric:
        for (auto f : detail::kTimingFields) {
            if (!(out.*f)) continue;
            if (level == CorruptionLevel::Small) {
                out.*f = *(out.*f) * rng.uniform(0.9, 1.1);
            } else if (level == CorruptionLevel::Large) {
                out.*f = *(out.*f) * 1000.0;
            } else {
                // A value typical of another sequence: drawn from a record whose
                // categorical identity differs.
                const auto own = categorical_key(r);
                std::vector<double> pool;
                for (const auto& d : donors) {
                    if (d.*f && categorical_key(d) != own) pool.push_back(*(d.*f));
                }
                if (!pool.empty()) out.*f = pool[rng.below(pool.size())];
            }
        }
        break;
    case CorruptionKind::WrongTag:
        for (std::size_t g = 0; g < detail::group_count(level); ++g) {
            const auto& group = detail::tag_groups()[g];
            std::vector<const MetadataRecord*> pool;
            for (const auto& d : donors) {
                if (!detail::same_values(group, d, r)) pool.push_back(&d);
            }
            if (pool.empty()) continue;
            const auto* donor = pool[rng.below(pool.size())];
            for (auto f : group.strings) out.*f = donor->*f;
            for (auto f : group.numbers) out.*f = donor->*f;
        }
        break;
    case CorruptionKind::MissingTag:
        for (std::size_t g = 0; g < detail::group_count(level); ++g) {
            for (auto f : detail::tag_groups()[g].strings) (out.*f).reset();
            for (auto f : detail::tag_groups()[g].numbers) (out.*f).reset();
        }
        break;
    }
    return out;
}

struct CorruptedSet {
    std::vector<MetadataRecord> records;
    std::vector<bool> corrupted;
};

/// Corrupts exactly round(rate * n) records, chosen by spec.seed.
inline CorruptedSet corrupt_set(const std::vector<MetadataRecord>& records, const CorruptionSpec& spec,
                                const std::vector<MetadataRecord>& donors) {
    spec.validate();
    Rng rng(spec.seed);
    std::vector<std::size_t> order(records.size());
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    const auto m = static_cast<std::size_t>(std::llround(spec.rate * static_cast<double>(records.size())));
    CorruptedSet out{records, std::vector<bool>(records.size(), false)};
    std::sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(m));
    for (std::size_t i = 0; i < m; ++i) {
        const auto k = order[i];
        out.records[k] = corrupt(records[k], spec.kind, spec.level, donors, rng);
        out.corrupted[k] = true;
    }
    return out;
}

/// Text embeddings of records after re-binning and templating.
inline ad::Tensor<float> embed_records(TextEncoder<float>& text, const std::vector<MetadataRecord>& records,
                                       const BinningScheme& scheme, const GroupingOptions& opt) {
    std::vector<TokenSequence> seqs;
    for (const auto& r : records) {
        seqs.push_back(tokenize(render_template(r, scheme, opt), text.config().vocab));
    }
    return encode_texts(text, seqs);
}

inline std::vector<double> row_cosines(const ad::Tensor<float>& a, const ad::Tensor<float>& b) {
    require(a.shape() == b.shape() && a.rank() == 2, ErrorCode::ShapeMismatch, "paired embeddings must have equal shapes");
    const std::size_t n = a.dim(0), d = a.dim(1);
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        out[i] = dot(a.data().subspan(i * d, d), b.data().subspan(i * d, d));
    }
    return out;
}

/// cosine(image embedding, text embedding of the rendered record).
inline double qc_score(MrClipModel<float>& model, const std::vector<float>& volume, const MetadataRecord& record,
                       const BinningScheme& scheme, const GroupingOptions& opt = {}) {
    const std::size_t side = model.config().image.input_side;
    const auto img = encode_images(model.image, Tensor<float>(Shape{1, 1, side, side, side}, volume));
    const auto txt = embed_records(model.text, {record}, scheme, opt);
    return row_cosines(img, txt)[0];
}

struct QcVerdict {
    std::string volume_id;
    double cosine = 0.0;
    bool corrupted = false;
};

/// Mann-Whitney AUC of score = -cosine with corrupted as the positive class,
/// via midranks: ties count one half.
inline double detection_auc(const std::vector<QcVerdict>& verdicts) {
    std::vector<std::size_t> order(verdicts.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return -verdicts[a].cosine < -verdicts[b].cosine; });
    double rank_sum = 0.0;
    std::size_t pos = 0;
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j < order.size() && -verdicts[order[j]].cosine == -verdicts[order[i]].cosine) ++j;
        const double midrank = 0.5 * static_cast<double>(i + 1 + j); // mean of ranks i+1..j
        for (std::size_t k = i; k < j; ++k) {
            if (verdicts[order[k]].corrupted) {
                rank_sum += midrank;
                ++pos;
            }
        }
        i = j;
    }
    const std::size_t neg = verdicts.size() - pos;
    require(pos > 0 && neg > 0, ErrorCode::SingleClass, "AUC needs both corrupted and clean verdicts");
    const double np = static_cast<double>(pos);
    return (rank_sum - np * (np + 1.0) / 2.0) / (np * static_cast<double>(neg));
}

struct CurvePoint {
    double rate = 0.0;
    double mean_cosine = 0.0;
    double standard_error = 0.0;
    std::optional<double> auc;
    std::vector<QcVerdict> verdicts;
};

/// For every rate, corrupts a fresh copy of the set and averages the cosine
/// over all records. Image embeddings are fixed, so only text is re-encoded.
inline std::vector<CurvePoint> degradation_curve(TextEncoder<float>& text, const ad::Tensor<float>& image_emb,
                                                 const std::vector<MetadataRecord>& records,
                                                 const std::vector<MetadataRecord>& donors, const BinningScheme& scheme,
                                                 const GroupingOptions& opt, CorruptionKind kind, CorruptionLevel level,
                                                 const std::vector<double>& rates, std::uint64_t seed) {
    require(image_emb.rank() == 2 && image_emb.dim(0) == records.size(), ErrorCode::ShapeMismatch,
            "one image embedding per record required");
    require(!rates.empty() && std::is_sorted(rates.begin(), rates.end()), ErrorCode::InvalidArgument,
            "rates must be sorted ascending");
    std::vector<CurvePoint> out;
    for (double rate : rates) {
        const auto set = corrupt_set(records, {kind, level, rate, seed}, donors);
        const auto cos = row_cosines(image_emb, embed_records(text, set.records, scheme, opt));
        CurvePoint p;
        p.rate = rate;
        const auto ms = [&] {
            double mean = std::accumulate(cos.begin(), cos.end(), 0.0) / static_cast<double>(cos.size());
            double var = 0.0;
            for (double c : cos) var += (c - mean) * (c - mean);
            var /= static_cast<double>(cos.size() > 1 ? cos.size() - 1 : 1);
            return std::pair{mean, std::sqrt(var / static_cast<double>(cos.size()))};
        }();
        p.mean_cosine = ms.first;
        p.standard_error = ms.second;
        for (std::size_t i = 0; i < records.size(); ++i) {
            p.verdicts.push_back({records[i].volume_id, cos[i], set.corrupted[i]});
        }
        const auto n_bad = std::count(set.corrupted.begin(), set.corrupted.end(), true);
        if (n_bad > 0 && static_cast<std::size_t>(n_bad) < records.size()) {
            p.auc = detection_auc(p.verdicts);
        }
        out.push_back(std::move(p));
    }
    return out;
}

inline nlohmann::json curve_to_json(CorruptionKind kind, CorruptionLevel level, const std::vector<CurvePoint>& curve) {
    nlohmann::json rates = nlohmann::json::object();
    for (const auto& p : curve) {
        char key[32];
        std::snprintf(key, sizeof key, "%.2f", p.rate);
        rates[key] = {{"mean_cosine", p.mean_cosine},
                      {"standard_error", p.standard_error},
                      {"auc", p.auc ? nlohmann::json(*p.auc) : nlohmann::json(nullptr)}};
    }
    return {{"kind", kind_name(kind)}, {"level", level_name(level)}, {"rates", rates}};
}

inline std::string verdicts_csv(const std::vector<CurvePoint>& curve) {
    std::string out = "rate,volume_id,cosine,corrupted\n";
    for (const auto& p : curve) {
        for (const auto& x : p.verdicts) {
            char rate[16], tail[48];
            std::snprintf(rate, sizeof rate, "%.2f,", p.rate);
            std::snprintf(tail, sizeof tail, ",%.9f,%d\n", x.cosine, x.corrupted ? 1 : 0);
            out += rate + x.volume_id + tail;
        }
    }
    return out;
}

} // namespace mrclip
