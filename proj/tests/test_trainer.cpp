#include "mrclip/phantom.hpp"
#include "mrclip/trainer.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <set>

namespace mrclip {
namespace {

std::vector<std::string> ids(std::size_t n) {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(phantom_id(i));
    return out;
}

TEST(Split, ExactCountsAndPartition) {
    const auto s = split_ids(ids(600), {});
    EXPECT_EQ(s.train.size(), 360u);
    EXPECT_EQ(s.val.size(), 60u);
    EXPECT_EQ(s.test.size(), 180u);
    std::set<std::string> all(s.train.begin(), s.train.end());
    all.insert(s.val.begin(), s.val.end());
    all.insert(s.test.begin(), s.test.end());
    EXPECT_EQ(all.size(), 600u);
}

TEST(Split, SmallCorpusRounding) {
    const auto s = split_ids(ids(10), {});
    EXPECT_EQ(s.train.size(), 6u);
    EXPECT_EQ(s.val.size(), 1u);
    EXPECT_EQ(s.test.size(), 3u);
}

TEST(Split, IndependentOfInputOrderAndSeeded) {
    auto a = ids(100);
    auto b = a;
    std::reverse(b.begin(), b.end());
    EXPECT_EQ(split_ids(a, {}).test, split_ids(b, {}).test);
    SplitSpec other;
    other.seed = 7;
    EXPECT_NE(split_ids(a, {}).test, split_ids(a, other).test);
}

TEST(Split, Errors) {
    try {
        split_ids(ids(9), {});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::TooFewRecords);
    }
    auto dup = ids(20);
    dup[3] = dup[4];
    try {
        split_ids(dup, {});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::DuplicateVolumeId);
    }
}

std::vector<Example> labelled(const std::vector<int>& labels) {
    std::vector<Example> out;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        Example e;
        e.volume_id = phantom_id(i);
        e.label = labels[i];
        out.push_back(e);
    }
    return out;
}

TEST(Sampler, SpreadsOverSeveralGroupsWithPositives) {
    std::vector<int> labels;
    for (int g = 0; g < 40; ++g) {
        for (int m = 0; m < 1 + g % 5; ++m) labels.push_back(g);
    }
    const auto ex = labelled(labels);
    const GroupIndex index(ex);
    Rng rng(3);
    std::size_t anchors = 0, with_positive = 0;
    for (int b = 0; b < 1000; ++b) {
        const auto batch = sample_batch(index, 32, rng);
        ASSERT_EQ(batch.size(), 32u);
        std::map<int, int> count;
        for (auto i : batch) ++count[ex[i].label];
        EXPECT_GE(count.size(), 2u);
        for (auto i : batch) {
            ++anchors;
            with_positive += count[ex[i].label] >= 2;
        }
    }
    EXPECT_GE(static_cast<double>(with_positive) / static_cast<double>(anchors), 0.5);
}

TEST(Sampler, SingleGroupRejected) {
    const auto ex = labelled({0, 0, 0, 0});
    const GroupIndex index(ex);
    Rng rng(1);
    try {
        sample_batch(index, 4, rng);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::SingleGroupCorpus);
    }
}

TEST(TrainConfig, JsonRoundTripAndValidation) {
    TrainConfig c;
    c.epochs = 3;
    c.lr = 2e-3;
    c.seed = 11;
    const auto back = train_config_from_json(train_config_to_json(c));
    EXPECT_EQ(train_config_to_json(back), train_config_to_json(c));
    try {
        train_config_from_json({{"lr", -1.0}});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::InvalidArgument);
    }
}

struct Smoke {
    TrainConfig cfg;
    std::vector<Example> train, val;
};

Smoke smoke_setup() {
    Smoke s;
    s.cfg.epochs = 8;
    s.cfg.batch_size = 8;
    s.cfg.lr = 3e-3;
    s.cfg.warmup_steps = 0;
    s.cfg.seed = 5;
    s.cfg.model.image.input_side = 16;
    s.cfg.model.image.channels = {4, 8};
    s.cfg.model.image.embed_dim = 16;
    s.cfg.model.text.vocab = 256;
    s.cfg.model.text.token_dim = 8;
    s.cfg.model.text.mlp_hidden = 16;
    s.cfg.model.text.embed_dim = 16;
    PhantomOptions opt;
    opt.side = 16;
    const auto& all = default_recipes();
    const std::vector<SequenceRecipe> recipes{all[0], all[1]};
    const auto corpus = generate_corpus(24, 2, opt, recipes);
    std::vector<MetadataRecord> records;
    for (const auto& p : corpus.phantoms) records.push_back(p.record);
    const auto table = make_group_table(records);
    for (const auto& p : corpus.phantoms) {
        s.train.push_back(make_example(p.record, p.volume.voxels, table, s.cfg.model.text.vocab));
    }
    s.val = s.train;
    return s;
}

TEST(Train, SmokeLossDecreases) {
    auto s = smoke_setup();
    MrClipModel<float> model(s.cfg.model, s.cfg.seed);
    const auto dir = (std::filesystem::temp_directory_path() / "mrclip_train_smoke").string();
    std::filesystem::remove_all(dir);
    const auto res = train(model, s.train, s.val, s.cfg, {dir, {}});
    ASSERT_EQ(res.epochs.size(), s.cfg.epochs);
    EXPECT_LT(res.best_val_loss, res.epochs.front().val_loss);
    EXPECT_LT(res.epochs.back().train_loss, res.epochs.front().train_loss);
    EXPECT_NEAR(res.uniform_baseline, std::log(8.0), 1e-12);
    EXPECT_TRUE(std::filesystem::exists(dir + "/best.mrct"));
    EXPECT_TRUE(std::filesystem::exists(dir + "/last.mrct"));
    const auto lines = read_file_text(dir + "/metrics.jsonl");
    EXPECT_EQ(std::count(lines.begin(), lines.end(), '\n'), 2 * static_cast<long>(s.cfg.epochs));

    // The model ends on the best epoch's weights.
    MrClipModel<float> best(s.cfg.model, 99);
    best.load_named_tensors(ad::decode_checkpoint(read_file_bytes(dir + "/best.mrct")));
    const auto a = model.to_named_tensors();
    const auto b = best.to_named_tensors();
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].tensor.data()[0], b[i].tensor.data()[0]) << a[i].name;
    }
    std::filesystem::remove_all(dir);
}

TEST(Train, DeterministicSingleThread) {
    set_thread_count(1);
    auto s = smoke_setup();
    s.cfg.epochs = 2;
    MrClipModel<float> m1(s.cfg.model, s.cfg.seed), m2(s.cfg.model, s.cfg.seed);
    const auto r1 = train(m1, s.train, s.val, s.cfg);
    const auto r2 = train(m2, s.train, s.val, s.cfg);
    EXPECT_EQ(ad::encode_checkpoint(m1.to_named_tensors()), ad::encode_checkpoint(m2.to_named_tensors()));
    EXPECT_EQ(r1.epochs.back().val_loss, r2.epochs.back().val_loss);
}

} // namespace
} // namespace mrclip
