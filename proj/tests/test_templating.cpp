#include "mrclip/templating.hpp"

#include <gtest/gtest.h>

namespace mrclip {
namespace {

BinningScheme ladder_scheme() {
    BinningScheme s;
    for (std::size_t i = 0; i < kEdgeCount; ++i) {
        s.te_edges[i] = 10.0 * static_cast<double>(i + 1);   // te bin b covers (10b, 10(b+1)]
        s.tr_edges[i] = 100.0 * static_cast<double>(i + 1);
        s.ti_edges[i] = 100.0 * static_cast<double>(i + 1);
    }
    return s;
}

std::size_t count_of(const std::string& haystack, const std::string& needle) {
    std::size_t n = 0;
    for (auto pos = haystack.find(needle); pos != std::string::npos; pos = haystack.find(needle, pos + 1)) {
        ++n;
    }
    return n;
}

TEST(RenderTemplate, FullyAbsentRecord) {
    MetadataRecord r;
    r.volume_id = "x";
    const auto s = render_template(r, ladder_scheme());
    EXPECT_EQ(s,
              "a unknown tesla unknown unknown scan in unknown plane sequence unknown variant unknown "
              "te bin -1 tr bin -1 ti bin -1 flip angle unknown series unknown");
    EXPECT_EQ(count_of(s, "unknown") + count_of(s, "bin -1"), 11u);
    EXPECT_EQ(s, render_template(r, ladder_scheme()));
}

TEST(RenderTemplate, DirectSubstitution) {
    MetadataRecord r;
    r.volume_id = "x";
    r.field_strength_t = 1.5;
    r.manufacturer = "SIEMENS";
    r.imaging_plane = ImagingPlane::Axial;
    r.sequence_type = "SE";
    r.echo_time_ms = 35;    // bin 3
    r.repetition_time_ms = 750; // bin 7
    const auto s = render_template(r, ladder_scheme());
    EXPECT_EQ(s.rfind("a 1.50 tesla siemens ", 0), 0u) << s;
    EXPECT_NE(s.find("scan in axial plane sequence se "), std::string::npos);
    EXPECT_NE(s.find("te bin 3 tr bin 7 ti bin -1"), std::string::npos);
}

TEST(RenderTemplate, SameGroupSameSentence) {
    const auto scheme = ladder_scheme();
    MetadataRecord a;
    a.volume_id = "a";
    a.manufacturer = "GE";
    a.echo_time_ms = 31;
    a.repetition_time_ms = 410;
    MetadataRecord b = a;
    b.volume_id = "b";
    b.echo_time_ms = 39;
    b.repetition_time_ms = 490;
    ASSERT_EQ(assign_group(a, scheme), assign_group(b, scheme));
    EXPECT_EQ(render_template(a, scheme), render_template(b, scheme));
    EXPECT_EQ(tokenize(render_template(a, scheme)), tokenize(render_template(b, scheme)));
}

TEST(RenderTemplate, ExcludedSeriesDescriptionRendersUnknown) {
    MetadataRecord r;
    r.volume_id = "x";
    r.series_description = "T1 AX";
    EXPECT_NE(render_template(r, ladder_scheme()).find("series t1 ax"), std::string::npos);
    EXPECT_NE(render_template(r, ladder_scheme(), {.include_series_description = false}).find("series unknown"),
              std::string::npos);
}

TEST(Tokenize, FnvReferenceVector) {
    EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cULL);
    EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ULL);
    const auto seq = tokenize("a", 4096);
    ASSERT_EQ(seq.tokens.size(), 1u);
    EXPECT_EQ(seq.tokens[0], 0xaf63dc4c8601ec8cULL % 4096);
}

TEST(Tokenize, RepeatedWordRepeatedId) {
    const auto seq = tokenize("a a a");
    ASSERT_EQ(seq.tokens.size(), 3u);
    EXPECT_EQ(seq.tokens[0], seq.tokens[1]);
    EXPECT_EQ(seq.tokens[1], seq.tokens[2]);
    EXPECT_EQ(seq.source_text, "a a a");
}

TEST(Tokenize, OneWordDifference) {
    const auto a = tokenize("te bin 3");
    const auto b = tokenize("te bin 4");
    ASSERT_EQ(a.tokens.size(), b.tokens.size());
    int diffs = 0;
    for (std::size_t i = 0; i < a.tokens.size(); ++i) {
        diffs += a.tokens[i] != b.tokens[i];
    }
    EXPECT_EQ(diffs, 1);
}

TEST(Tokenize, Deterministic) {
    EXPECT_EQ(tokenize("x  y\tz", 97), tokenize("x  y\tz", 97));
    for (auto id : tokenize("some longer sentence of words", 16).tokens) {
        EXPECT_LT(id, 16u);
    }
}

TEST(Tokenize, EmptyTextFails) {
    for (const char* text : {"", "   \t"}) {
        try {
            tokenize(text);
            FAIL();
        } catch (const Error& e) {
            EXPECT_EQ(e.code(), ErrorCode::EmptyText);
        }
    }
}

} // namespace
} // namespace mrclip
