#pragma once

// Reader for the small DICOM Part 10 subset the pipeline needs: preamble,
// "DICM" magic, explicit-VR little-endian elements, defined lengths only.
// Only acquisition tags that feed MetadataRecord are decoded; everything else
// is skipped by its declared length.

#include "mrclip/error.hpp"
#include "mrclip/metadata.hpp"

#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace mrclip::dicom {

struct TagAddress {
    std::uint16_t group = 0;
    std::uint16_t element = 0;

    auto operator<=>(const TagAddress&) const = default;

    std::string str() const {
        char buf[16];
        std::snprintf(buf, sizeof buf, "(%04X,%04X)", group, element);
        return buf;
    }
};

namespace tags {
inline constexpr TagAddress TransferSyntax{0x0002, 0x0010};
inline constexpr TagAddress Manufacturer{0x0008, 0x0070};
inline constexpr TagAddress SeriesDescription{0x0008, 0x103E};
inline constexpr TagAddress ModelName{0x0008, 0x1090};
inline constexpr TagAddress ScanningSequence{0x0018, 0x0020};
inline constexpr TagAddress SequenceVariant{0x0018, 0x0021};
inline constexpr TagAddress RepetitionTime{0x0018, 0x0080};
inline constexpr TagAddress EchoTime{0x0018, 0x0081};
inline constexpr TagAddress InversionTime{0x0018, 0x0082};
inline constexpr TagAddress FieldStrength{0x0018, 0x0087};
inline constexpr TagAddress FlipAngle{0x0018, 0x1314};
inline constexpr TagAddress SeriesInstanceUid{0x0020, 0x000E};
inline constexpr TagAddress ImageOrientationPatient{0x0020, 0x0037};
} // namespace tags

inline constexpr std::size_t kPreambleSize = 128;
inline constexpr std::string_view kMagic = "DICM";
inline constexpr std::string_view kExplicitVrLittleEndian = "1.2.840.10008.1.2.1";

/// VRs whose explicit-VR header carries 2 reserved bytes and a 32-bit length.
inline bool has_long_length(std::string_view vr) {
    static constexpr std::array<std::string_view, 13> kLong{"OB", "OD", "OF", "OL", "OV", "OW", "SQ",
                                                            "SV", "UC", "UN", "UR", "UT", "UV"};
    for (auto v : kLong) {
        if (v == vr) {
            return true;
        }
    }
    return false;
}

/// Dominance threshold on the slice-normal component.
inline constexpr double kPlaneDominance = 0.8;
inline constexpr double kUnitNormTolerance = 1e-2;

/// Slice normal = row x column; the axis with the largest |component| picks
/// the plane when it reaches kPlaneDominance, otherwise OBLIQUE.
inline ImagingPlane plane_from_orientation(std::span<const double, 6> cosines) {
    const std::array<double, 3> row{cosines[0], cosines[1], cosines[2]};
    const std::array<double, 3> col{cosines[3], cosines[4], cosines[5]};
    auto norm = [](const std::array<double, 3>& v) { return std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]); };
    for (const auto* v : {&row, &col}) {
        const double n = norm(*v);
        require(std::isfinite(n) && std::abs(n - 1.0) <= kUnitNormTolerance, ErrorCode::DegenerateOrientation,
                "direction cosine norm " + std::to_string(n));
    }
    const std::array<double, 3> normal{row[1] * col[2] - row[2] * col[1], row[2] * col[0] - row[0] * col[2],
                                       row[0] * col[1] - row[1] * col[0]};
    std::size_t axis = 0;
    for (std::size_t i = 1; i < 3; ++i) {
        if (std::abs(normal[i]) > std::abs(normal[axis])) {
            axis = i;
        }
    }
    if (std::abs(normal[axis]) < kPlaneDominance) {
        return ImagingPlane::Oblique;
    }
    static constexpr std::array<ImagingPlane, 3> kByAxis{ImagingPlane::Sagittal, ImagingPlane::Coronal,
                                                         ImagingPlane::Axial};
    return kByAxis[axis];
}

struct DicomParseResult {
    MetadataRecord record;
    std::vector<std::string> warnings;
};

namespace detail {

inline std::string_view trim_padding(std::string_view s) {
    auto pad = [](char c) { return c == ' ' || c == '\0'; };
    while (!s.empty() && pad(s.front())) {
        s.remove_prefix(1);
    }
    while (!s.empty() && pad(s.back())) {
        s.remove_suffix(1);
    }
    return s;
}

inline std::vector<std::string_view> split_values(std::string_view s) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto bs = s.find('\\', start);
        out.push_back(trim_padding(s.substr(start, bs - start)));
        if (bs == std::string_view::npos) {
            break;
        }
        start = bs + 1;
    }
    return out;
}

inline std::optional<double> parse_decimal(std::string_view s) {
    if (!s.empty() && s.front() == '+') {
        s.remove_prefix(1);
    }
    if (s.empty()) {
        return std::nullopt;
    }
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size() || !std::isfinite(v)) {
        return std::nullopt;
    }
    return v;
}

} // namespace detail

/// Parse acquisition metadata from Part 10 bytes. Malformed decimals leave
/// the field absent and add a warning; structural problems throw.
inline DicomParseResult parse_dicom_meta(std::span<const std::uint8_t> bytes, std::string_view fallback_id = {}) {
    require(bytes.size() >= kPreambleSize + kMagic.size() &&
                std::string_view(reinterpret_cast<const char*>(bytes.data()) + kPreambleSize, kMagic.size()) == kMagic,
            ErrorCode::MissingMagic, "no DICM magic after 128-byte preamble");

    DicomParseResult result;
    MetadataRecord& rec = result.record;
    std::optional<std::string> uid;

    auto u16 = [&](std::size_t at) {
        return static_cast<std::uint16_t>(bytes[at] | (bytes[at + 1] << 8));
    };
    auto u32 = [&](std::size_t at) {
        return static_cast<std::uint32_t>(bytes[at]) | (static_cast<std::uint32_t>(bytes[at + 1]) << 8) |
               (static_cast<std::uint32_t>(bytes[at + 2]) << 16) | (static_cast<std::uint32_t>(bytes[at + 3]) << 24);
    };

    auto decimal_field = [&](TagAddress tag, std::string_view value, std::optional<double>& out) {
        const auto first = detail::split_values(value).front();
        const auto v = detail::parse_decimal(first);
        if (!v || *v <= 0.0) {
            result.warnings.push_back("MalformedDecimal: " + tag.str() + " '" + std::string(first) + "'");
            out.reset();
            return;
        }
        out = v;
    };
    auto string_field = [&](std::string_view value, std::optional<std::string>& out) {
        out = normalize_optional(std::string(value));
    };

    std::size_t pos = kPreambleSize + kMagic.size();
    while (pos < bytes.size()) {
        require(bytes.size() - pos >= 8, ErrorCode::TruncatedElement, "element header at offset " + std::to_string(pos));
        const TagAddress tag{u16(pos), u16(pos + 2)};
        const std::string_view vr(reinterpret_cast<const char*>(bytes.data()) + pos + 4, 2);
        require(std::isupper(static_cast<unsigned char>(vr[0])) && std::isupper(static_cast<unsigned char>(vr[1])),
                ErrorCode::TruncatedElement, tag.str() + " has no explicit VR (implicit VR is not supported)");
        std::size_t header = 8;
        std::uint64_t length = u16(pos + 6);
        if (has_long_length(vr)) {
            require(bytes.size() - pos >= 12, ErrorCode::TruncatedElement, tag.str() + " long header");
            header = 12;
            length = u32(pos + 8);
            require(length != 0xFFFFFFFFu, ErrorCode::TruncatedElement, tag.str() + " has undefined length");
        }
        require(length <= bytes.size() - pos - header, ErrorCode::TruncatedElement,
                tag.str() + " length " + std::to_string(length) + " overruns buffer");
        const std::string_view value(reinterpret_cast<const char*>(bytes.data()) + pos + header, length);
        pos += header + length;

        if (tag == tags::TransferSyntax) {
            require(detail::trim_padding(value) == kExplicitVrLittleEndian, ErrorCode::TruncatedElement,
                    "unsupported transfer syntax '" + std::string(detail::trim_padding(value)) + "'");
        } else if (tag == tags::EchoTime) {
            decimal_field(tag, value, rec.echo_time_ms);
        } else if (tag == tags::RepetitionTime) {
            decimal_field(tag, value, rec.repetition_time_ms);
        } else if (tag == tags::InversionTime) {
            decimal_field(tag, value, rec.inversion_time_ms);
        } else if (tag == tags::FlipAngle) {
            decimal_field(tag, value, rec.flip_angle_deg);
        } else if (tag == tags::FieldStrength) {
            decimal_field(tag, value, rec.field_strength_t);
        } else if (tag == tags::Manufacturer) {
            string_field(value, rec.manufacturer);
        } else if (tag == tags::ModelName) {
            string_field(value, rec.scanner_model);
        } else if (tag == tags::ScanningSequence) {
            string_field(value, rec.sequence_type);
        } else if (tag == tags::SequenceVariant) {
            string_field(value, rec.sequence_variant);
        } else if (tag == tags::SeriesDescription) {
            string_field(value, rec.series_description);
        } else if (tag == tags::SeriesInstanceUid) {
            const auto t = detail::trim_padding(value);
            if (!t.empty()) {
                uid = std::string(t);
            }
        } else if (tag == tags::ImageOrientationPatient) {
            const auto parts = detail::split_values(value);
            std::array<double, 6> cosines{};
            bool ok = parts.size() == 6;
            for (std::size_t i = 0; ok && i < 6; ++i) {
                const auto v = detail::parse_decimal(parts[i]);
                ok = v.has_value();
                cosines[i] = v.value_or(0.0);
            }
            if (!ok) {
                result.warnings.push_back("MalformedDecimal: " + tag.str() + " needs exactly 6 decimals");
                rec.imaging_plane.reset();
                continue;
            }
            try {
                rec.imaging_plane = plane_from_orientation(cosines);
            } catch (const Error& e) {
                result.warnings.push_back(e.what());
                rec.imaging_plane.reset();
            }
        }
    }

    if (uid) {
        rec.volume_id = *uid;
    } else {
        require(!fallback_id.empty(), ErrorCode::MissingVolumeId, "no SeriesInstanceUID and no fallback id");
        rec.volume_id = std::string(fallback_id);
    }
    return result;
}

} // namespace mrclip::dicom
