#pragma once

// File-level plumbing shared by the command-line stages: manifests with
// resolved volume paths, the model sidecar that travels with checkpoints,
// and corpus embedding.

#include "mrclip/embed_store.hpp"
#include "mrclip/manifest.hpp"
#include "mrclip/trainer.hpp"

#include <filesystem>

namespace mrclip {

namespace fs = std::filesystem;

/// Relative volume paths are resolved against the manifest's directory.
inline std::vector<ManifestEntry> read_manifest(const std::string& path) {
    auto entries = parse_manifest(read_file_text(path));
    const auto base = fs::path(path).parent_path();
    for (auto& e : entries) {
        if (!e.volume_path.empty() && fs::path(e.volume_path).is_relative()) {
            e.volume_path = (base / e.volume_path).lexically_normal().string();
        }
    }
    return entries;
}

/// Writes entries with volume paths relative to the output file's directory.
inline void write_manifest(const std::string& path, std::vector<ManifestEntry> entries) {
    const auto base = fs::absolute(fs::path(path)).parent_path();
    for (auto& e : entries) {
        if (!e.volume_path.empty()) {
            e.volume_path = fs::absolute(e.volume_path).lexically_normal().lexically_relative(base).generic_string();
        }
    }
    write_file_text(path, manifest_to_json(entries).dump(2) + "\n");
}

struct Corpus {
    std::vector<ManifestEntry> entries;
    std::vector<std::vector<float>> volumes;

    std::vector<MetadataRecord> records() const { return records_of(entries); }

    std::map<std::string, std::size_t> index_by_id() const {
        std::map<std::string, std::size_t> out;
        for (std::size_t i = 0; i < entries.size(); ++i) out[entries[i].record.volume_id] = i;
        return out;
    }
};

inline Corpus load_corpus(const std::string& manifest_path, std::size_t side) {
    Corpus c;
    c.entries = read_manifest(manifest_path);
    c.volumes.resize(c.entries.size());
    for (const auto& e : c.entries) {
        require(!e.volume_path.empty(), ErrorCode::InvalidArgument, "entry '" + e.record.volume_id + "' has no volume_path");
    }
    parallel_for(c.entries.size(), [&](std::size_t i) {
        auto v = read_volume(c.entries[i].volume_path);
        require(v.dims[0] == side && v.dims[1] == side && v.dims[2] == side, ErrorCode::ShapeMismatch,
                "volume '" + c.entries[i].record.volume_id + "' is not " + std::to_string(side) + "^3");
        c.volumes[i] = std::move(v.voxels);
    });
    return c;
}

/// Everything besides the weights needed to use a checkpoint.
struct ModelBundle {
    ModelConfig model;
    GroupTable groups;
};

inline nlohmann::json bundle_to_json(const ModelBundle& b) {
    return {{"model", model_config_to_json(b.model)}, {"groups", group_table_to_json(b.groups)}};
}

inline ModelBundle bundle_from_json(const nlohmann::json& j) {
    require(j.is_object() && j.contains("model") && j.contains("groups"), ErrorCode::SchemaViolation,
            "model sidecar needs 'model' and 'groups'");
    return {model_config_from_json(j.at("model")), group_table_from_json(j.at("groups"))};
}

inline std::string sidecar_path(const std::string& checkpoint) {
    return (fs::path(checkpoint).parent_path() / "model.json").string();
}

inline ModelBundle read_bundle(const std::string& path) {
    try {
        return bundle_from_json(nlohmann::json::parse(read_file_text(path)));
    } catch (const nlohmann::json::parse_error& e) {
        fail(ErrorCode::SchemaViolation, path + ": " + e.what());
    }
}

inline MrClipModel<float> load_model(const std::string& checkpoint, const ModelBundle& bundle) {
    MrClipModel<float> model(bundle.model, 0);
    model.load_named_tensors(ad::decode_checkpoint(read_file_bytes(checkpoint)));
    return model;
}

inline Tensor<float> stack_volumes(const std::vector<const std::vector<float>*>& vols, std::size_t side) {
    const std::size_t per = side * side * side;
    Tensor<float> t(Shape{vols.size(), 1, side, side, side});
    for (std::size_t i = 0; i < vols.size(); ++i) {
        require(vols[i]->size() == per, ErrorCode::ShapeMismatch, "volume does not have side " + std::to_string(side));
        std::copy(vols[i]->begin(), vols[i]->end(), t.data().begin() + static_cast<std::ptrdiff_t>(i * per));
    }
    return t;
}

inline Tensor<float> image_embeddings(MrClipModel<float>& model, const Corpus& c) {
    std::vector<const std::vector<float>*> vols;
    for (const auto& v : c.volumes) vols.push_back(&v);
    return encode_images(model.image, stack_volumes(vols, model.config().image.input_side));
}

/// IMAGE and TEXT embeddings for every entry; labels are -1 for records
/// whose contrast group is not in the table.
inline EmbeddingStore embed_corpus(MrClipModel<float>& model, const Corpus& c, const GroupTable& table) {
    require(!c.entries.empty(), ErrorCode::EmptySequence, "nothing to embed");
    const auto img = image_embeddings(model, c);
    std::vector<TokenSequence> seqs;
    for (const auto& e : c.entries) {
        seqs.push_back(tokenize(render_template(e.record, table.scheme, table.options), model.config().text.vocab));
    }
    const auto txt = encode_texts(model.text, seqs);
    const std::size_t d = img.dim(1);
    EmbeddingStore store;
    for (std::size_t i = 0; i < c.entries.size(); ++i) {
        const auto& r = c.entries[i].record;
        const int label = table.label_of(assign_group(r, table.scheme, table.options));
        const auto row = [&](const Tensor<float>& t) {
            return std::vector<float>(t.data().begin() + static_cast<std::ptrdiff_t>(i * d),
                                      t.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * d));
        };
        store.put({r.volume_id, Modality::Image, row(img), label});
        store.put({r.volume_id, Modality::Text, row(txt), label});
    }
    return store;
}

inline std::vector<Example> examples_for(const Corpus& c, const std::vector<std::string>& ids, const GroupTable& table,
                                         std::uint32_t vocab) {
    const auto index = c.index_by_id();
    std::vector<Example> out;
    for (const auto& id : ids) {
        const auto i = index.at(id);
        auto e = make_example(c.entries[i].record, c.volumes[i], table, vocab);
        require(e.label >= 0, ErrorCode::InvalidArgument, "volume '" + id + "' is not covered by the group table");
        out.push_back(std::move(e));
    }
    return out;
}

inline Split split_from_json(const nlohmann::json& j) {
    require(j.is_object(), ErrorCode::SchemaViolation, "split must be a JSON object");
    Split s;
    try {
        s.train = j.at("train").get<std::vector<std::string>>();
        s.val = j.at("val").get<std::vector<std::string>>();
        s.test = j.at("test").get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::SchemaViolation, std::string("split: ") + e.what());
    }
    return s;
}

/// Embeddings for `ids`, in that order.
inline Tensor<float> rows_for(const EmbeddingStore& store, const std::vector<std::string>& ids, Modality m) {
    Tensor<float> out(Shape{ids.size(), store.dim()});
    for (std::size_t i = 0; i < ids.size(); ++i) {
        const auto* r = store.get(ids[i], m);
        require(r != nullptr, ErrorCode::InvalidArgument, "no " + std::string(modality_name(m)) + " embedding for '" + ids[i] + "'");
        std::copy(r->vector.begin(), r->vector.end(), out.data().begin() + static_cast<std::ptrdiff_t>(i * store.dim()));
    }
    return out;
}

} // namespace mrclip
