#pragma once

// Scan-level splitting, group-stratified batch sampling and the training
// loop (Adam with linear warm-up, learnable temperature, per-epoch
// validation, best-by-validation checkpoint selection).

#include "mrclip/checkpoint.hpp"
#include "mrclip/encoders.hpp"
#include "mrclip/grouping.hpp"
#include "mrclip/loss.hpp"
#include "mrclip/optim.hpp"
#include "mrclip/phantom.hpp"
#include "mrclip/templating.hpp"

#include <filesystem>
#include <functional>
#include <map>
#include <set>

namespace mrclip {

// ----------------------------------------------------------------------------
// split

struct SplitSpec {
    double train_frac = 0.6;
    double val_frac = 0.1;
    double test_frac = 0.3;
    std::uint64_t seed = 0;

    void validate() const {
        const bool ok = train_frac >= 0 && val_frac >= 0 && test_frac >= 0 &&
                        std::abs(train_frac + val_frac + test_frac - 1.0) < 1e-9;
        require(ok, ErrorCode::InvalidArgument, "split fractions must be non-negative and sum to 1");
    }
};

struct Split {
    std::vector<std::string> train, val, test; // each sorted

    /// "train", "val" or "test".
    std::map<std::string, std::string> role_by_id() const {
        std::map<std::string, std::string> out;
        for (const auto& id : train) out[id] = "train";
        for (const auto& id : val) out[id] = "val";
        for (const auto& id : test) out[id] = "test";
        return out;
    }
};

/// Ids are ranked by a seeded hash of the id alone, so the assignment ignores
/// input order and file paths; counts are round(n*train) and round(n*val).
inline Split split_ids(std::vector<std::string> ids, const SplitSpec& spec) {
    spec.validate();
    require(ids.size() >= 10, ErrorCode::TooFewRecords, "split needs at least 10 records, got " + std::to_string(ids.size()));
    std::sort(ids.begin(), ids.end());
    require(std::adjacent_find(ids.begin(), ids.end()) == ids.end(), ErrorCode::DuplicateVolumeId, "duplicate id in split");
    auto key = [&](const std::string& id) { return splitmix64(fnv1a64(id) ^ splitmix64(spec.seed)); };
    std::vector<std::pair<std::uint64_t, std::string>> ranked;
    for (auto& id : ids) {
        ranked.emplace_back(key(id), id);
    }
    std::sort(ranked.begin(), ranked.end());
    const std::size_t n = ids.size();
    const auto n_train = static_cast<std::size_t>(std::llround(spec.train_frac * static_cast<double>(n)));
    const auto n_val = std::min(n - n_train, static_cast<std::size_t>(std::llround(spec.val_frac * static_cast<double>(n))));
    Split s;
    for (std::size_t i = 0; i < n; ++i) {
        auto& bucket = i < n_train ? s.train : (i < n_train + n_val ? s.val : s.test);
        bucket.push_back(ranked[i].second);
    }
    for (auto* v : {&s.train, &s.val, &s.test}) {
        std::sort(v->begin(), v->end());
    }
    return s;
}

inline nlohmann::json split_to_json(const Split& s) { return {{"train", s.train}, {"val", s.val}, {"test", s.test}}; }

// ----------------------------------------------------------------------------
// examples and batches

struct Example {
    std::string volume_id;
    std::vector<float> voxels; // S^3, standardized
    TokenSequence tokens;
    int label = -1;
};

/// Pairs each volume with its templated sentence and contrast-group label.
inline Example make_example(const MetadataRecord& r, std::vector<float> voxels, const GroupTable& table,
                            std::uint32_t vocab) {
    Example e;
    e.volume_id = r.volume_id;
    e.voxels = std::move(voxels);
    e.tokens = tokenize(render_template(r, table.scheme, table.options), vocab);
    e.label = table.label_of(assign_group(r, table.scheme, table.options));
    return e;
}

inline Batch<float> assemble_batch(const std::vector<const Example*>& items, std::size_t side) {
    require(!items.empty(), ErrorCode::InvalidArgument, "empty batch");
    const std::size_t per = side * side * side;
    Batch<float> b;
    b.volumes = Tensor<float>(Shape{items.size(), 1, side, side, side});
    for (std::size_t i = 0; i < items.size(); ++i) {
        require(items[i]->voxels.size() == per, ErrorCode::ShapeMismatch,
                "volume '" + items[i]->volume_id + "' does not have side " + std::to_string(side));
        std::copy(items[i]->voxels.begin(), items[i]->voxels.end(), b.volumes.data().begin() + static_cast<std::ptrdiff_t>(i * per));
        b.tokens.push_back(items[i]->tokens);
        b.labels.push_back(items[i]->label);
        b.volume_ids.push_back(items[i]->volume_id);
    }
    return b;
}

/// Examples indexed by contrast-group label.
class GroupIndex {
public:
    explicit GroupIndex(const std::vector<Example>& examples) {
        for (std::size_t i = 0; i < examples.size(); ++i) {
            require(examples[i].label >= 0, ErrorCode::InvalidArgument,
                    "example '" + examples[i].volume_id + "' has no contrast group");
            members_[examples[i].label].push_back(i);
        }
        for (const auto& [label, m] : members_) {
            labels_.push_back(label);
        }
    }

    std::size_t group_count() const { return labels_.size(); }
    const std::vector<int>& labels() const { return labels_; }
    const std::vector<std::size_t>& members(int label) const { return members_.at(label); }

private:
    std::map<int, std::vector<std::size_t>> members_;
    std::vector<int> labels_;
};

/// Draws ceil(B/4) distinct groups (at least two), spreads the B slots over
/// them as evenly as possible and fills each slot with a member drawn with
/// replacement, so most anchors see several positives.
inline std::vector<std::size_t> sample_batch(const GroupIndex& index, std::size_t batch_size, Rng& rng) {
    require(index.group_count() >= 2, ErrorCode::SingleGroupCorpus, "batch sampling needs at least two contrast groups");
    require(batch_size >= 2, ErrorCode::InvalidArgument, "batch size must be at least 2");
    const std::size_t g = std::min(index.group_count(), std::max<std::size_t>(2, (batch_size + 3) / 4));
    std::vector<int> pool = index.labels();
    for (std::size_t i = 0; i < g; ++i) {
        std::swap(pool[i], pool[i + rng.below(pool.size() - i)]);
    }
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < g; ++i) {
        const std::size_t slots = batch_size / g + (i < batch_size % g ? 1 : 0);
        const auto& members = index.members(pool[i]);
        for (std::size_t s = 0; s < slots; ++s) {
            out.push_back(members[rng.below(members.size())]);
        }
    }
    return out;
}

// ----------------------------------------------------------------------------
// training

struct TrainConfig {
    std::size_t epochs = 30;
    std::size_t batch_size = 32;
    double lr = 1e-4;
    double weight_decay = 0.2;
    long warmup_steps = 50;
    std::uint64_t seed = 0;
    std::size_t val_batches = 0; // 0: ceil(|val| / batch_size)
    ModelConfig model{};

    void validate() const {
        require(epochs > 0, ErrorCode::InvalidArgument, "epochs must be positive");
        require(batch_size >= 4, ErrorCode::InvalidArgument, "batch_size must be at least 4");
        require(lr > 0 && weight_decay >= 0 && warmup_steps >= 0, ErrorCode::InvalidArgument,
                "lr must be positive and weight_decay, warmup_steps non-negative");
        model.validate();
    }
};

inline nlohmann::json train_config_to_json(const TrainConfig& c) {
    return {{"epochs", c.epochs},        {"batch_size", c.batch_size}, {"lr", c.lr},
            {"weight_decay", c.weight_decay}, {"warmup_steps", c.warmup_steps}, {"seed", c.seed},
            {"val_batches", c.val_batches}, {"model", model_config_to_json(c.model)}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
    require(j.is_object(), ErrorCode::SchemaViolation, "train config must be a JSON object");
    TrainConfig c;
    try {
        c.epochs = j.value("epochs", c.epochs);
        c.batch_size = j.value("batch_size", c.batch_size);
        c.lr = j.value("lr", c.lr);
        c.weight_decay = j.value("weight_decay", c.weight_decay);
        c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
        c.seed = j.value("seed", c.seed);
        c.val_batches = j.value("val_batches", c.val_batches);
        if (j.contains("model")) {
            c.model = model_config_from_json(j.at("model"));
        }
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::SchemaViolation, std::string("train config: ") + e.what());
    }
    c.validate();
    return c;
}

struct EpochMetrics {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double tau = 0.0;
};

struct TrainResult {
    std::vector<EpochMetrics> epochs;
    std::size_t best_epoch = 0;
    double best_val_loss = 0.0;
    double uniform_baseline = 0.0; // loss of uninformative embeddings, log B
    long steps = 0;
};

/// Where training writes; empty paths disable the corresponding output.
struct TrainOutputs {
    std::string dir; // last.mrct, best.mrct, metrics.jsonl
    std::function<void(const EpochMetrics&)> on_epoch;
};

template <class Model>
double batch_loss(Model& model, const Batch<float>& b, bool train) {
    Tape<float> tape;
    const auto zi = model.image.forward(tape, tape.constant(b.volumes));
    const auto zt = model.text.forward(tape, b.tokens);
    const auto loss = supcon_symmetric(zi, zt, b.labels, model.temperature.inverse(tape));
    if (train) {
        tape.backward(loss);
    }
    return loss.value().item();
}

inline std::string metrics_line(std::size_t epoch, const char* split, double loss, double tau) {
    return nlohmann::json{{"epoch", epoch}, {"split", split}, {"loss", loss}, {"tau", tau}}.dump() + "\n";
}

/// Trains `model` in place and leaves it holding the best-validation weights.
inline TrainResult train(MrClipModel<float>& model, const std::vector<Example>& train_set,
                         const std::vector<Example>& val_set, const TrainConfig& cfg, const TrainOutputs& out = {}) {
    cfg.validate();
    require(!val_set.empty(), ErrorCode::TooFewRecords, "validation split is empty");
    const std::size_t side = cfg.model.image.input_side;
    const GroupIndex train_index(train_set);
    const GroupIndex val_index(val_set);

    // Validation batches are drawn once and reused every epoch.
    std::vector<Batch<float>> val_batches;
    {
        Rng vrng(splitmix64(cfg.seed ^ 0x76616cULL));
        const std::size_t n = cfg.val_batches ? cfg.val_batches : (val_set.size() + cfg.batch_size - 1) / cfg.batch_size;
        for (std::size_t i = 0; i < n; ++i) {
            std::vector<const Example*> items;
            for (auto k : sample_batch(val_index, cfg.batch_size, vrng)) items.push_back(&val_set[k]);
            val_batches.push_back(assemble_batch(items, side));
        }
    }
    auto validation_loss = [&]() {
        double acc = 0.0;
        for (const auto& b : val_batches) acc += batch_loss(model, b, false);
        return acc / static_cast<double>(val_batches.size());
    };

    auto params = model.parameters();
    ad::AdamState<float> adam;
    adam.weight_decay = cfg.weight_decay;
    Rng rng(splitmix64(cfg.seed ^ 0x747261696eULL));
    const std::size_t steps_per_epoch = (train_set.size() + cfg.batch_size - 1) / cfg.batch_size;

    TrainResult result;
    result.uniform_baseline = std::log(static_cast<double>(cfg.batch_size));
    std::vector<ad::NamedTensor> best;
    std::string metrics;
    if (!out.dir.empty()) {
        std::filesystem::create_directories(out.dir);
    }
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        double train_loss = 0.0;
        for (std::size_t s = 0; s < steps_per_epoch; ++s) {
            std::vector<const Example*> items;
            for (auto k : sample_batch(train_index, cfg.batch_size, rng)) items.push_back(&train_set[k]);
            const auto batch = assemble_batch(items, side);
            ad::zero_grads(params);
            try {
                train_loss += batch_loss(model, batch, true);
            } catch (const Error& e) {
                if (e.code() == ErrorCode::NonFiniteValue) {
                    fail(ErrorCode::NonFiniteValue, "step " + std::to_string(result.steps) + ": " + e.what());
                }
                throw;
            }
            ad::adam_step(params, adam, ad::warmup_lr(cfg.lr, result.steps, cfg.warmup_steps));
            model.temperature.clamp();
            ++result.steps;
        }
        EpochMetrics m{epoch, train_loss / static_cast<double>(steps_per_epoch), validation_loss(), model.temperature.tau()};
        result.epochs.push_back(m);
        const bool improved = best.empty() || m.val_loss < result.best_val_loss;
        if (improved) {
            result.best_epoch = epoch;
            result.best_val_loss = m.val_loss;
            best = model.to_named_tensors();
        }
        if (!out.dir.empty()) {
            const auto bytes = ad::encode_checkpoint(model.to_named_tensors());
            write_file_bytes(out.dir + "/last.mrct", bytes);
            if (improved) {
                write_file_bytes(out.dir + "/best.mrct", bytes);
            }
            metrics += metrics_line(epoch, "train", m.train_loss, m.tau);
            metrics += metrics_line(epoch, "val", m.val_loss, m.tau);
            write_file_text(out.dir + "/metrics.jsonl", metrics);
        }
        if (out.on_epoch) {
            out.on_epoch(m);
        }
    }
    model.load_named_tensors(best);
    return result;
}

} // namespace mrclip
