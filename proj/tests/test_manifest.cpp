#include "mrclip/manifest.hpp"

#include <gtest/gtest.h>

namespace mrclip {
namespace {

ErrorCode code_of(std::string_view text) {
    try {
        parse_manifest(text);
    } catch (const Error& e) {
        return e.code();
    }
    return ErrorCode::InvalidArgument;
}

TEST(ParseManifest, SingleEntry) {
    const auto entries = parse_manifest(R"([{"volume_id":"a","echo_time_ms":30,"volume_path":"a.vol"}])");
    ASSERT_EQ(entries.size(), 1u);
    EXPECT_EQ(entries[0].record.volume_id, "a");
    EXPECT_DOUBLE_EQ(*entries[0].record.echo_time_ms, 30.0);
    EXPECT_EQ(entries[0].volume_path, "a.vol");
    EXPECT_FALSE(entries[0].record.repetition_time_ms.has_value());
}

TEST(ParseManifest, EmptyArray) { EXPECT_TRUE(parse_manifest("[]").empty()); }

TEST(ParseManifest, DuplicateVolumeId) {
    EXPECT_EQ(code_of(R"([{"volume_id":"a"},{"volume_id":"a"}])"), ErrorCode::DuplicateVolumeId);
}

TEST(ParseManifest, WrongTypesAreSchemaViolations) {
    EXPECT_EQ(code_of(R"([{"volume_id":"a","echo_time_ms":"30"}])"), ErrorCode::SchemaViolation);
    EXPECT_EQ(code_of(R"([{"volume_id":3}])"), ErrorCode::SchemaViolation);
    EXPECT_EQ(code_of(R"([{"volume_id":"a","manufacturer":7}])"), ErrorCode::SchemaViolation);
    EXPECT_EQ(code_of(R"([{"volume_id":"a","imaging_plane":"DIAGONAL"}])"), ErrorCode::SchemaViolation);
    EXPECT_EQ(code_of(R"({"volume_id":"a"})"), ErrorCode::SchemaViolation);
    EXPECT_EQ(code_of(R"([1])"), ErrorCode::SchemaViolation);
    EXPECT_EQ(code_of("[{"), ErrorCode::SchemaViolation);
}

TEST(ParseManifest, InvariantViolationsAreRejected) {
    EXPECT_EQ(code_of(R"([{"volume_id":""}])"), ErrorCode::SchemaViolation);
    EXPECT_EQ(code_of(R"([{"volume_id":"a","repetition_time_ms":0}])"), ErrorCode::SchemaViolation);
    EXPECT_EQ(code_of(R"([{"volume_id":"a","flip_angle_deg":-10}])"), ErrorCode::SchemaViolation);
}

TEST(ParseManifest, NormalizesStringsAndPlane) {
    const auto e = parse_manifest(
        R"([{"volume_id":"x","manufacturer":" ge  medical ","imaging_plane":"sagittal","series_description":"   "}])");
    EXPECT_EQ(e[0].record.manufacturer, "GE MEDICAL");
    EXPECT_EQ(e[0].record.imaging_plane, ImagingPlane::Sagittal);
    EXPECT_FALSE(e[0].record.series_description.has_value());
}

TEST(ParseManifest, NullMeansAbsent) {
    const auto e = parse_manifest(R"([{"volume_id":"x","inversion_time_ms":null}])");
    EXPECT_FALSE(e[0].record.inversion_time_ms.has_value());
}

TEST(ParseManifest, SerializationRoundTrip) {
    const std::string text =
        R"([{"volume_id":"v1","echo_time_ms":12.5,"repetition_time_ms":500,"imaging_plane":"AXIAL","manufacturer":"GE","volume_path":"v1.mrvl"},
            {"volume_id":"v2","inversion_time_ms":2400,"field_strength_t":3}])";
    const auto entries = parse_manifest(text);
    EXPECT_EQ(parse_manifest(manifest_to_json(entries).dump()), entries);
}

} // namespace
} // namespace mrclip
