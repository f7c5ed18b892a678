#include "mrclip/grouping.hpp"
#include "mrclip/phantom.hpp"

#include <gtest/gtest.h>

#include <map>
#include <set>

namespace mrclip {
namespace {

const TissueTable kTissues{};

TEST(Signal, LimitingCaseGivesProtonDensity) {
    EXPECT_NEAR(signal(kTissues.wm, 1e-9, 1e9, std::nullopt), 0.7, 1e-6);
    EXPECT_NEAR(signal(kTissues.csf, 1e-9, 1e9, std::nullopt), 1.0, 1e-6);
}

TEST(Signal, InversionNullPoint) {
    const double ti = kTissues.wm.t1_ms * std::log(2.0);
    EXPECT_LT(std::abs(signal(kTissues.wm, 1e-9, 1e9, ti)), 1e-3 * kTissues.wm.proton_density);
}

TEST(Signal, WhiteMatterPlugIn) {
    EXPECT_NEAR(signal(kTissues.wm, 100, 4000, std::nullopt), 0.7 * (1 - std::exp(-5.0)) * std::exp(-1.25), 1e-12);
}

TEST(TissueTable, DefaultsAreValid) {
    for (auto t : {Tissue::WM, Tissue::GM, Tissue::CSF, Tissue::Lesion}) {
        EXPECT_LT(kTissues[t].t2_ms, kTissues[t].t1_ms);
        EXPECT_GT(kTissues[t].proton_density, 0.0);
        EXPECT_LE(kTissues[t].proton_density, 1.0);
    }
}

TEST(Recipes, SixDistinctSequenceTypesWithConsistentTiming) {
    std::set<std::string> types;
    for (const auto& r : default_recipes()) {
        types.insert(r.sequence_type);
        EXPECT_EQ(r.family == SequenceFamily::InversionRecovery, r.ti_ms.has_value()) << r.name;
        EXPECT_GT(r.te_ms.lo, 0);
        EXPECT_LT(r.te_ms.lo, r.te_ms.hi);
        EXPECT_LT(r.tr_ms.lo, r.tr_ms.hi);
    }
    EXPECT_EQ(default_recipes().size(), 6u);
    EXPECT_EQ(types.size(), 6u);
}

TEST(GenerateVolume, SameSeedSameOutput) {
    const auto& recipe = default_recipes()[3];
    const auto a = generate_volume(recipe, 42, "v");
    const auto b = generate_volume(recipe, 42, "v");
    EXPECT_EQ(a.volume, b.volume);
    EXPECT_EQ(a.record, b.record);
    const auto c = generate_volume(recipe, 43, "v");
    EXPECT_NE(a.volume, c.volume);
}

TEST(GenerateVolume, RecordFollowsRecipe) {
    for (const auto& recipe : default_recipes()) {
        const auto p = generate_volume(recipe, 5, "x", {.side = 8});
        EXPECT_EQ(p.record.sequence_type, recipe.sequence_type);
        EXPECT_EQ(p.record.imaging_plane, recipe.plane);
        EXPECT_GE(*p.record.echo_time_ms, recipe.te_ms.lo);
        EXPECT_LE(*p.record.echo_time_ms, recipe.te_ms.hi);
        EXPECT_EQ(p.record.inversion_time_ms.has_value(), recipe.ti_ms.has_value());
        EXPECT_EQ(p.volume.size(), 512u);
    }
}

TEST(GenerateVolume, StandardizedIntensities) {
    const auto p = generate_volume(default_recipes()[0], 9, "x");
    double mean = 0, ss = 0;
    for (float v : p.volume.voxels) mean += v;
    mean /= p.volume.size();
    for (float v : p.volume.voxels) ss += (v - mean) * (v - mean);
    EXPECT_NEAR(mean, 0.0, 1e-5);
    EXPECT_NEAR(std::sqrt(ss / p.volume.size()), 1.0, 1e-4);
}

TEST(GenerateVolume, SameRecipeDifferentAnatomy) {
    const auto& recipe = default_recipes()[1];
    const auto a = generate_volume(recipe, 100, "a");
    const auto b = generate_volume(recipe, 101, "b");
    EXPECT_NE(a.volume, b.volume);
    const auto corpus = generate_corpus(60, 3, {.side = 8});
    std::vector<MetadataRecord> records;
    for (const auto& p : corpus.phantoms) records.push_back(p.record);
    const auto scheme = fit_binning(records);
    auto same = a.record;
    same.volume_id = "b";
    same.echo_time_ms = *a.record.echo_time_ms;
    EXPECT_EQ(assign_group(a.record, scheme), assign_group(same, scheme));
}

TEST(Contrast, NoiseFreeRenderIsDeterministic) {
    Rng rng(1);
    const auto labels = rasterize(random_anatomy(rng), ImagingPlane::Axial, 16);
    const auto x = render_signal(labels, kTissues, 15, 500, std::nullopt);
    const auto y = render_signal(labels, kTissues, 15, 500, std::nullopt);
    EXPECT_EQ(x, y);
}

TEST(Contrast, SpinEchoWeightingsAreDistinguishable) {
    Rng rng(2);
    const auto labels = rasterize(random_anatomy(rng), ImagingPlane::Axial, 32);
    auto t1 = render_signal(labels, kTissues, 15, 500, std::nullopt);
    auto t2 = render_signal(labels, kTissues, 100, 4000, std::nullopt);
    standardize(t1);
    standardize(t2);
    double mad = 0;
    for (std::size_t i = 0; i < t1.size(); ++i) mad += std::abs(t1[i] - t2[i]);
    EXPECT_GT(mad / t1.size(), 0.1);
}

TEST(Anatomy, EllipsoidCountInRange) {
    Rng rng(3);
    for (int i = 0; i < 200; ++i) {
        const auto a = random_anatomy(rng);
        EXPECT_GE(a.ellipsoids.size(), 3u);
        EXPECT_LE(a.ellipsoids.size(), 7u);
    }
}

TEST(Corpus, GroupsArePureInRecipe) {
    const auto corpus = generate_corpus(600, 11, {.side = 8});
    std::vector<MetadataRecord> records;
    std::map<std::string, std::size_t> recipe_of;
    for (std::size_t i = 0; i < corpus.phantoms.size(); ++i) {
        records.push_back(corpus.phantoms[i].record);
        recipe_of[corpus.phantoms[i].record.volume_id] = corpus.recipe_index[i];
    }
    const auto groups = build_groups(records, fit_binning(records));
    EXPECT_GE(groups.size(), 6u);
    std::set<std::size_t> recipes_seen;
    for (const auto& g : groups) {
        std::set<std::size_t> r;
        for (const auto& id : g.member_ids) r.insert(recipe_of.at(id));
        EXPECT_EQ(r.size(), 1u);
        recipes_seen.insert(*r.begin());
    }
    EXPECT_EQ(recipes_seen.size(), 6u);
}

TEST(Corpus, ThreadCountDoesNotChangeOutput) {
    set_thread_count(1);
    const auto a = generate_corpus(12, 5, {.side = 8});
    set_thread_count(3);
    const auto b = generate_corpus(12, 5, {.side = 8});
    set_thread_count(1);
    for (std::size_t i = 0; i < 12; ++i) {
        EXPECT_EQ(a.phantoms[i].volume, b.phantoms[i].volume);
        EXPECT_EQ(a.phantoms[i].record, b.phantoms[i].record);
    }
}

TEST(VolumeFile, RoundTripAndCorruption) {
    const auto p = generate_volume(default_recipes()[2], 1, "x", {.side = 4});
    const auto bytes = encode_volume(p.volume);
    EXPECT_EQ(bytes.size(), 4 + 4 + 12 + 64 * 4u);
    EXPECT_EQ(decode_volume(bytes), p.volume);
    auto bad = bytes;
    bad[1] = 'X';
    EXPECT_THROW(decode_volume(bad), Error);
    EXPECT_THROW(decode_volume(std::span(bytes).first(bytes.size() - 4)), Error);
}

} // namespace
} // namespace mrclip
