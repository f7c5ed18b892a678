#pragma once

#include "mrclip/error.hpp"
#include "mrclip/metadata.hpp"

#include "json.hpp"

#include <set>
#include <string>
#include <vector>

namespace mrclip {

using json = nlohmann::json;

struct ManifestEntry {
    MetadataRecord record;
    std::string volume_path;

    bool operator==(const ManifestEntry&) const = default;
};

inline json record_to_json(const MetadataRecord& r) {
    json j = json::object();
    j["volume_id"] = r.volume_id;
    auto put = [&](const char* key, const auto& v) {
        if (v) {
            j[key] = *v;
        }
    };
    put("echo_time_ms", r.echo_time_ms);
    put("repetition_time_ms", r.repetition_time_ms);
    put("inversion_time_ms", r.inversion_time_ms);
    put("flip_angle_deg", r.flip_angle_deg);
    put("manufacturer", r.manufacturer);
    put("scanner_model", r.scanner_model);
    if (r.imaging_plane) {
        j["imaging_plane"] = std::string(plane_name(*r.imaging_plane));
    }
    put("field_strength_t", r.field_strength_t);
    put("sequence_type", r.sequence_type);
    put("sequence_variant", r.sequence_variant);
    put("series_description", r.series_description);
    return j;
}

/// Decode one manifest object. Strings are normalized; wrong JSON types and
/// invariant violations raise SchemaViolation.
inline ManifestEntry entry_from_json(const json& j, std::size_t index) {
    const std::string where = "manifest entry " + std::to_string(index);
    require(j.is_object(), ErrorCode::SchemaViolation, where + " is not an object");
    ManifestEntry e;
    MetadataRecord& r = e.record;

    auto str = [&](const char* key) -> std::optional<std::string> {
        const auto it = j.find(key);
        if (it == j.end() || it->is_null()) {
            return std::nullopt;
        }
        require(it->is_string(), ErrorCode::SchemaViolation, where + ": '" + key + "' must be a string");
        return it->get<std::string>();
    };
    auto num = [&](const char* key) -> std::optional<double> {
        const auto it = j.find(key);
        if (it == j.end() || it->is_null()) {
            return std::nullopt;
        }
        require(it->is_number(), ErrorCode::SchemaViolation, where + ": '" + key + "' must be a number");
        return it->get<double>();
    };

    const auto id = str("volume_id");
    require(id && !id->empty(), ErrorCode::SchemaViolation, where + ": missing volume_id");
    r.volume_id = *id;
    r.echo_time_ms = num("echo_time_ms");
    r.repetition_time_ms = num("repetition_time_ms");
    r.inversion_time_ms = num("inversion_time_ms");
    r.flip_angle_deg = num("flip_angle_deg");
    r.field_strength_t = num("field_strength_t");
    r.manufacturer = str("manufacturer");
    r.scanner_model = str("scanner_model");
    r.sequence_type = str("sequence_type");
    r.sequence_variant = str("sequence_variant");
    r.series_description = str("series_description");
    if (const auto plane = str("imaging_plane")) {
        const auto p = plane_from_name(normalize_text(*plane));
        require(p.has_value(), ErrorCode::SchemaViolation, where + ": unknown imaging_plane '" + *plane + "'");
        r.imaging_plane = p;
    }
    e.volume_path = str("volume_path").value_or("");
    r = normalized(std::move(r));
    validate(r);
    return e;
}

inline std::vector<ManifestEntry> parse_manifest(std::string_view text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        fail(ErrorCode::SchemaViolation, std::string("manifest is not valid JSON: ") + e.what());
    }
    require(doc.is_array(), ErrorCode::SchemaViolation, "manifest must be a JSON array");
    std::vector<ManifestEntry> out;
    out.reserve(doc.size());
    std::set<std::string> seen;
    for (std::size_t i = 0; i < doc.size(); ++i) {
        auto e = entry_from_json(doc[i], i);
        require(seen.insert(e.record.volume_id).second, ErrorCode::DuplicateVolumeId,
                "volume_id '" + e.record.volume_id + "' appears twice");
        out.push_back(std::move(e));
    }
    return out;
}

inline json manifest_to_json(const std::vector<ManifestEntry>& entries) {
    json arr = json::array();
    for (const auto& e : entries) {
        json j = record_to_json(e.record);
        if (!e.volume_path.empty()) {
            j["volume_path"] = e.volume_path;
        }
        arr.push_back(std::move(j));
    }
    return arr;
}

inline std::vector<MetadataRecord> records_of(const std::vector<ManifestEntry>& entries) {
    std::vector<MetadataRecord> out;
    out.reserve(entries.size());
    for (const auto& e : entries) {
        out.push_back(e.record);
    }
    return out;
}

} // namespace mrclip
