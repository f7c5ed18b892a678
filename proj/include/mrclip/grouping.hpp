#pragma once

#include "mrclip/error.hpp"
#include "mrclip/metadata.hpp"
#include "mrclip/util.hpp"

#include "json.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace mrclip {

inline constexpr std::size_t kBinCount = 20;
inline constexpr std::size_t kEdgeCount = kBinCount - 1;
inline constexpr int kAbsentBin = -1;

using BinEdges = std::array<double, kEdgeCount>;

/// Log-quantile bin edges for TE, TR and TI. Each field has 20 bins; an
/// absent value lands in bin -1.
struct BinningScheme {
    BinEdges te_edges{};
    BinEdges tr_edges{};
    BinEdges ti_edges{};
    std::string fitted_on;

    bool operator==(const BinningScheme&) const = default;
};

struct GroupingOptions {
    bool include_series_description = true;
};

struct GroupKey {
    int te_bin = kAbsentBin;
    int tr_bin = kAbsentBin;
    int ti_bin = kAbsentBin;
    std::string categorical_key;

    auto operator<=>(const GroupKey&) const = default;
};

struct ContrastGroup {
    GroupKey key;
    std::vector<std::string> member_ids; // sorted
    int label_index = 0;
};

inline std::string format_2dp(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

/// Number of edges strictly below `value`; absent maps to -1.
inline int bin_index(const std::optional<double>& value, const BinEdges& edges) {
    if (!value) {
        return kAbsentBin;
    }
    return static_cast<int>(std::lower_bound(edges.begin(), edges.end(), *value) - edges.begin());
}

namespace detail {

/// Edges at the k/20 quantiles (k = 1..19) of log(values), linear
/// interpolation between order statistics, mapped back with exp. Ties are
/// pushed apart by one ulp so the edges ascend strictly.
inline BinEdges log_quantile_edges(std::vector<double> values) {
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    BinEdges edges{};
    for (std::size_t k = 1; k <= kEdgeCount; ++k) {
        const double pos = static_cast<double>(k) / static_cast<double>(kBinCount) * static_cast<double>(n - 1);
        const auto lo = static_cast<std::size_t>(std::floor(pos));
        const std::size_t hi = std::min(lo + 1, n - 1);
        const double frac = pos - static_cast<double>(lo);
        double edge;
        if (values[lo] == values[hi] || frac == 0.0) {
            edge = values[lo];
        } else {
            const double a = std::log(values[lo]);
            const double b = std::log(values[hi]);
            edge = std::exp(a + frac * (b - a));
        }
        edges[k - 1] = edge;
    }
    for (std::size_t i = 1; i < edges.size(); ++i) {
        if (!(edges[i] > edges[i - 1])) {
            edges[i] = std::nextafter(edges[i - 1], std::numeric_limits<double>::infinity());
        }
    }
    return edges;
}

/// Used for TI when no record in the corpus carries it: log-spaced 10 ms..10 s.
inline BinEdges default_ti_edges() {
    BinEdges edges{};
    for (std::size_t k = 0; k < kEdgeCount; ++k) {
        edges[k] = std::pow(10.0, 1.0 + 3.0 * static_cast<double>(k) / static_cast<double>(kEdgeCount - 1));
    }
    return edges;
}

inline std::string corpus_fingerprint(const std::vector<MetadataRecord>& records) {
    std::vector<std::string> ids;
    ids.reserve(records.size());
    for (const auto& r : records) {
        ids.push_back(r.volume_id);
    }
    std::sort(ids.begin(), ids.end());
    std::uint64_t h = kFnvOffset;
    for (const auto& id : ids) {
        h = fnv1a64(id, h);
        h = fnv1a64(std::string_view("\n", 1), h);
    }
    char buf[40];
    std::snprintf(buf, sizeof buf, "fnv1a64:%016llx/n=%zu", static_cast<unsigned long long>(h), records.size());
    return buf;
}

} // namespace detail

inline BinningScheme fit_binning(const std::vector<MetadataRecord>& records) {
    std::vector<double> te, tr, ti;
    std::size_t both = 0;
    for (const auto& r : records) {
        if (r.echo_time_ms) {
            te.push_back(*r.echo_time_ms);
        }
        if (r.repetition_time_ms) {
            tr.push_back(*r.repetition_time_ms);
        }
        if (r.inversion_time_ms) {
            ti.push_back(*r.inversion_time_ms);
        }
        both += (r.echo_time_ms && r.repetition_time_ms) ? 1 : 0;
    }
    require(both >= kBinCount, ErrorCode::InsufficientData,
            "need at least 20 records with TE and TR, got " + std::to_string(both));
    BinningScheme s;
    s.te_edges = detail::log_quantile_edges(std::move(te));
    s.tr_edges = detail::log_quantile_edges(std::move(tr));
    s.ti_edges = ti.empty() ? detail::default_ti_edges() : detail::log_quantile_edges(std::move(ti));
    s.fitted_on = detail::corpus_fingerprint(records);
    return s;
}

inline std::string categorical_key(const MetadataRecord& r, const GroupingOptions& opt = {}) {
    auto field = [](const std::optional<std::string>& s) { return s ? *s : std::string("NONE"); };
    auto number = [](const std::optional<double>& v) { return v ? format_2dp(*v) : std::string("NONE"); };
    std::string key;
    key += field(r.manufacturer);
    key += '|' + field(r.scanner_model);
    key += '|' + (r.imaging_plane ? std::string(plane_name(*r.imaging_plane)) : std::string("NONE"));
    key += '|' + number(r.field_strength_t);
    key += '|' + field(r.sequence_type);
    key += '|' + field(r.sequence_variant);
    if (opt.include_series_description) {
        key += '|' + field(r.series_description);
    }
    key += '|' + number(r.flip_angle_deg);
    return key;
}

inline GroupKey assign_group(const MetadataRecord& r, const BinningScheme& s, const GroupingOptions& opt = {}) {
    return GroupKey{bin_index(r.echo_time_ms, s.te_edges), bin_index(r.repetition_time_ms, s.tr_edges),
                    bin_index(r.inversion_time_ms, s.ti_edges), categorical_key(r, opt)};
}

/// Partition records by GroupKey; label_index follows ascending key order,
/// so the result does not depend on input order.
inline std::vector<ContrastGroup> build_groups(const std::vector<MetadataRecord>& records, const BinningScheme& s,
                                               const GroupingOptions& opt = {}) {
    std::map<GroupKey, std::set<std::string>> buckets;
    for (const auto& r : records) {
        buckets[assign_group(r, s, opt)].insert(r.volume_id);
    }
    std::vector<ContrastGroup> groups;
    groups.reserve(buckets.size());
    int label = 0;
    for (auto& [key, ids] : buckets) {
        groups.push_back(ContrastGroup{key, {ids.begin(), ids.end()}, label++});
    }
    return groups;
}

/// volume_id -> label_index lookup plus key -> label, for stages that get
/// their grouping from a file.
struct GroupTable {
    BinningScheme scheme;
    GroupingOptions options;
    std::vector<ContrastGroup> groups;

    std::map<std::string, int> label_by_id() const {
        std::map<std::string, int> out;
        for (const auto& g : groups) {
            for (const auto& id : g.member_ids) {
                out[id] = g.label_index;
            }
        }
        return out;
    }

    /// -1 when the key was never seen while grouping.
    int label_of(const GroupKey& key) const {
        const auto it = std::lower_bound(groups.begin(), groups.end(), key,
                                         [](const ContrastGroup& g, const GroupKey& k) { return g.key < k; });
        return (it != groups.end() && it->key == key) ? it->label_index : -1;
    }
};

inline GroupTable make_group_table(const std::vector<MetadataRecord>& records, const GroupingOptions& opt = {}) {
    GroupTable t;
    t.scheme = fit_binning(records);
    t.options = opt;
    t.groups = build_groups(records, t.scheme, opt);
    return t;
}

// ----------------------------------------------------------------------------
// JSON

inline nlohmann::json scheme_to_json(const BinningScheme& s) {
    return {{"te_edges", s.te_edges}, {"tr_edges", s.tr_edges}, {"ti_edges", s.ti_edges}, {"fitted_on", s.fitted_on}};
}

inline BinningScheme scheme_from_json(const nlohmann::json& j) {
    BinningScheme s;
    try {
        auto edges = [&](const char* key) {
            const auto v = j.at(key).get<std::vector<double>>();
            require(v.size() == kEdgeCount, ErrorCode::SchemaViolation, std::string(key) + " needs 19 edges");
            BinEdges e{};
            std::copy(v.begin(), v.end(), e.begin());
            for (std::size_t i = 0; i < e.size(); ++i) {
                require(std::isfinite(e[i]) && e[i] > 0.0 && (i == 0 || e[i] > e[i - 1]), ErrorCode::SchemaViolation,
                        std::string(key) + " must be positive and strictly increasing");
            }
            return e;
        };
        s.te_edges = edges("te_edges");
        s.tr_edges = edges("tr_edges");
        s.ti_edges = edges("ti_edges");
        s.fitted_on = j.value("fitted_on", "");
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::SchemaViolation, std::string("binning scheme: ") + e.what());
    }
    return s;
}

inline nlohmann::json group_table_to_json(const GroupTable& t) {
    nlohmann::json groups = nlohmann::json::array();
    for (const auto& g : t.groups) {
        groups.push_back({{"label_index", g.label_index},
                          {"te_bin", g.key.te_bin},
                          {"tr_bin", g.key.tr_bin},
                          {"ti_bin", g.key.ti_bin},
                          {"categorical_key", g.key.categorical_key},
                          {"member_ids", g.member_ids}});
    }
    return {{"scheme", scheme_to_json(t.scheme)},
            {"options", {{"include_series_description", t.options.include_series_description}}},
            {"groups", groups}};
}

inline GroupTable group_table_from_json(const nlohmann::json& j) {
    GroupTable t;
    try {
        t.scheme = scheme_from_json(j.at("scheme"));
        t.options.include_series_description = j.at("options").value("include_series_description", true);
        for (const auto& g : j.at("groups")) {
            ContrastGroup c;
            c.label_index = g.at("label_index").get<int>();
            c.key = GroupKey{g.at("te_bin").get<int>(), g.at("tr_bin").get<int>(), g.at("ti_bin").get<int>(),
                             g.at("categorical_key").get<std::string>()};
            c.member_ids = g.at("member_ids").get<std::vector<std::string>>();
            t.groups.push_back(std::move(c));
        }
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::SchemaViolation, std::string("groups file: ") + e.what());
    }
    std::sort(t.groups.begin(), t.groups.end(), [](const auto& a, const auto& b) { return a.key < b.key; });
    return t;
}

} // namespace mrclip
