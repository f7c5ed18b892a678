#pragma once

#include "mrclip/error.hpp"

#include <cctype>
#include <cmath>
#include <optional>
#include <string>
#include <string_view>

namespace mrclip {

enum class ImagingPlane { Axial, Coronal, Sagittal, Oblique, Unknown };

constexpr std::string_view plane_name(ImagingPlane p) noexcept {
    switch (p) {
    case ImagingPlane::Axial: return "AXIAL";
    case ImagingPlane::Coronal: return "CORONAL";
    case ImagingPlane::Sagittal: return "SAGITTAL";
    case ImagingPlane::Oblique: return "OBLIQUE";
    case ImagingPlane::Unknown: return "UNKNOWN";
    }
    return "UNKNOWN";
}

inline std::optional<ImagingPlane> plane_from_name(std::string_view s) {
    for (auto p : {ImagingPlane::Axial, ImagingPlane::Coronal, ImagingPlane::Sagittal, ImagingPlane::Oblique,
                   ImagingPlane::Unknown}) {
        if (plane_name(p) == s) {
            return p;
        }
    }
    return std::nullopt;
}

/// Acquisition parameters of one volume. Strings are kept in canonical form
/// (see normalize_text); numeric fields are absent or strictly positive.
struct MetadataRecord {
    std::string volume_id;
    std::optional<double> echo_time_ms;
    std::optional<double> repetition_time_ms;
    std::optional<double> inversion_time_ms;
    std::optional<double> flip_angle_deg;
    std::optional<std::string> manufacturer;
    std::optional<std::string> scanner_model;
    std::optional<ImagingPlane> imaging_plane;
    std::optional<double> field_strength_t;
    std::optional<std::string> sequence_type;
    std::optional<std::string> sequence_variant;
    std::optional<std::string> series_description;

    bool operator==(const MetadataRecord&) const = default;
};

/// Uppercase, collapse interior whitespace runs (NUL counts as whitespace)
/// to one space, strip both ends.
inline std::string normalize_text(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    bool pending_space = false;
    for (char c : s) {
        const auto u = static_cast<unsigned char>(c);
        if (c == '\0' || std::isspace(u)) {
            pending_space = !out.empty();
            continue;
        }
        if (pending_space) {
            out.push_back(' ');
            pending_space = false;
        }
        out.push_back(static_cast<char>(std::toupper(u)));
    }
    return out;
}

inline std::optional<std::string> normalize_optional(const std::optional<std::string>& s) {
    if (!s) {
        return std::nullopt;
    }
    std::string n = normalize_text(*s);
    if (n.empty()) {
        return std::nullopt;
    }
    return n;
}

inline MetadataRecord normalized(MetadataRecord r) {
    r.manufacturer = normalize_optional(r.manufacturer);
    r.scanner_model = normalize_optional(r.scanner_model);
    r.sequence_type = normalize_optional(r.sequence_type);
    r.sequence_variant = normalize_optional(r.sequence_variant);
    r.series_description = normalize_optional(r.series_description);
    return r;
}

inline bool valid_positive(const std::optional<double>& v) {
    return !v || (std::isfinite(*v) && *v > 0.0);
}

/// Throws SchemaViolation when a record breaks the MetadataRecord invariants.
inline void validate(const MetadataRecord& r) {
    require(!r.volume_id.empty(), ErrorCode::SchemaViolation, "empty volume_id");
    auto check = [&](const std::optional<double>& v, const char* name) {
        require(valid_positive(v), ErrorCode::SchemaViolation,
                std::string(name) + " must be positive and finite (" + r.volume_id + ")");
    };
    check(r.echo_time_ms, "echo_time_ms");
    check(r.repetition_time_ms, "repetition_time_ms");
    check(r.inversion_time_ms, "inversion_time_ms");
    check(r.flip_angle_deg, "flip_angle_deg");
    check(r.field_strength_t, "field_strength_t");
    for (const auto* s : {&r.manufacturer, &r.scanner_model, &r.sequence_type, &r.sequence_variant,
                          &r.series_description}) {
        if (*s) {
            require(**s == normalize_text(**s) && !(*s)->empty(), ErrorCode::SchemaViolation,
                    "string field not normalized (" + r.volume_id + ")");
        }
    }
}

} // namespace mrclip
