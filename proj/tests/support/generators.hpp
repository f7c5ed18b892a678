#pragma once

// Random inputs for property-style tests.

#include "dicom_writer.hpp"

#include "mrclip/metadata.hpp"
#include "mrclip/util.hpp"

#include <string>
#include <vector>

namespace mrclip::testing {

inline std::string random_word(Rng& rng, std::size_t max_len = 8) {
    static constexpr std::string_view kAlphabet = "ABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789-_";
    std::string s;
    const std::size_t n = 1 + rng.below(max_len);
    for (std::size_t i = 0; i < n; ++i) {
        s.push_back(kAlphabet[rng.below(kAlphabet.size())]);
    }
    return s;
}

inline std::string random_phrase(Rng& rng) {
    std::string s = random_word(rng);
    const std::size_t words = rng.below(3);
    for (std::size_t i = 0; i < words; ++i) {
        s += " " + random_word(rng);
    }
    return s;
}

/// Values have at most two decimals so their shortest decimal form fits a DS.
inline double random_decimal(Rng& rng, double lo, double hi) {
    const double v = std::round(rng.uniform(lo, hi) * 100.0) / 100.0;
    return v > 0.0 ? v : 0.01;
}

inline MetadataRecord random_record(Rng& rng, const std::string& id) {
    MetadataRecord r;
    r.volume_id = id;
    auto maybe = [&](double p) { return rng.uniform() < p; };
    if (maybe(0.9)) r.echo_time_ms = random_decimal(rng, 1, 300);
    if (maybe(0.9)) r.repetition_time_ms = random_decimal(rng, 100, 10000);
    if (maybe(0.5)) r.inversion_time_ms = random_decimal(rng, 50, 3000);
    if (maybe(0.8)) r.flip_angle_deg = random_decimal(rng, 5, 180);
    if (maybe(0.8)) r.field_strength_t = random_decimal(rng, 0.5, 7);
    if (maybe(0.8)) r.manufacturer = random_phrase(rng);
    if (maybe(0.8)) r.scanner_model = random_phrase(rng);
    if (maybe(0.8)) r.sequence_type = random_word(rng, 4);
    if (maybe(0.8)) r.sequence_variant = random_word(rng, 4);
    if (maybe(0.8)) r.series_description = random_phrase(rng);
    if (maybe(0.8)) {
        static constexpr ImagingPlane kPlanes[] = {ImagingPlane::Axial, ImagingPlane::Coronal, ImagingPlane::Sagittal,
                                                   ImagingPlane::Oblique};
        r.imaging_plane = kPlanes[rng.below(4)];
    }
    return r;
}

/// Elements in groups the reader never interprets, with even lengths.
inline std::vector<RawElement> random_unrelated_elements(Rng& rng, std::size_t count) {
    static constexpr std::string_view kVrs[] = {"LO", "SH", "CS", "DS", "OB", "UN", "UT", "US"};
    std::vector<RawElement> out;
    for (std::size_t i = 0; i < count; ++i) {
        const auto group = static_cast<std::uint16_t>(0x0009 + 2 * rng.below(8)); // odd (private) groups only
        const auto element = static_cast<std::uint16_t>(0x0010 + rng.below(0xEF00));
        const std::string vr(kVrs[rng.below(std::size(kVrs))]);
        std::string value;
        const std::size_t len = 2 * rng.below(20);
        for (std::size_t k = 0; k < len; ++k) {
            value.push_back(static_cast<char>(rng.below(256)));
        }
        out.push_back({{group, element}, vr, value});
    }
    return out;
}

} // namespace mrclip::testing
