#pragma once

#include "mrclip/error.hpp"
#include "mrclip/grouping.hpp"
#include "mrclip/metadata.hpp"
#include "mrclip/util.hpp"

#include <cctype>
#include <cstdint>
#include <string>
#include <vector>

namespace mrclip {

inline constexpr std::uint32_t kDefaultVocab = 4096;

struct TokenSequence {
    std::vector<std::uint32_t> tokens;
    std::uint32_t vocab = kDefaultVocab;
    std::string source_text;

    bool operator==(const TokenSequence&) const = default;
};

/// Fixed-skeleton sentence for a record. Numeric timings appear only as bin
/// indices, so every member of a contrast group renders the same sentence.
inline std::string render_template(const MetadataRecord& r, const BinningScheme& scheme,
                                   const GroupingOptions& opt = {}) {
    const GroupKey key = assign_group(r, scheme, opt);
    auto text = [](const std::optional<std::string>& s) { return s ? *s : std::string("unknown"); };
    auto number = [](const std::optional<double>& v) { return v ? format_2dp(*v) : std::string("unknown"); };
    const std::string plane = r.imaging_plane ? std::string(plane_name(*r.imaging_plane)) : std::string("unknown");
    const std::string series = opt.include_series_description ? text(r.series_description) : std::string("unknown");

    std::string s = "a " + number(r.field_strength_t) + " tesla " + text(r.manufacturer) + " " +
                    text(r.scanner_model) + " scan in " + plane + " plane sequence " + text(r.sequence_type) +
                    " variant " + text(r.sequence_variant) + " te bin " + std::to_string(key.te_bin) + " tr bin " +
                    std::to_string(key.tr_bin) + " ti bin " + std::to_string(key.ti_bin) + " flip angle " +
                    number(r.flip_angle_deg) + " series " + series;
    for (char& c : s) {
        c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    }
    return s;
}

/// Whitespace split; id = FNV-1a 64 of the token bytes mod vocab.
inline TokenSequence tokenize(std::string_view text, std::uint32_t vocab = kDefaultVocab) {
    require(vocab > 0, ErrorCode::InvalidArgument, "vocabulary size must be positive");
    TokenSequence seq;
    seq.vocab = vocab;
    seq.source_text = std::string(text);
    std::size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) {
            ++i;
        }
        std::size_t j = i;
        while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) {
            ++j;
        }
        if (j > i) {
            seq.tokens.push_back(static_cast<std::uint32_t>(fnv1a64(text.substr(i, j - i)) % vocab));
        }
        i = j;
    }
    require(!seq.tokens.empty(), ErrorCode::EmptyText, "nothing to tokenize");
    return seq;
}

} // namespace mrclip
