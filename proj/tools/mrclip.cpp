// mrclip: the pipeline as subcommands with file-based handoff between stages.

#include "mrclip/dicom.hpp"
#include "mrclip/evaluation.hpp"
#include "mrclip/pipeline.hpp"
#include "mrclip/qc.hpp"

#include "CLI11.hpp"

#include <iostream>
#include <sstream>
#include <thread>

namespace {

using namespace mrclip;
using nlohmann::json;

fs::path parent_dir(const std::string& file) {
    const auto p = fs::path(file).parent_path();
    return p.empty() ? fs::path(".") : p;
}

/// Every stage records its resolved options and the tool version next to
/// its outputs before doing any work.
void write_run_config(const fs::path& dir, const std::string& command, const json& options) {
    fs::create_directories(dir);
    const json j{{"version", kToolVersion}, {"command", command}, {"options", options}};
    write_file_text((dir / (command + ".config.json")).string(), j.dump(2) + "\n");
}

json read_json(const std::string& path) {
    try {
        return json::parse(read_file_text(path));
    } catch (const json::parse_error& e) {
        fail(ErrorCode::SchemaViolation, path + ": " + e.what());
    }
}

void write_json(const std::string& path, const json& j) { write_file_text(path, j.dump(2) + "\n"); }

std::vector<std::string> ids_of(const std::vector<MetadataRecord>& records) {
    std::vector<std::string> out;
    for (const auto& r : records) out.push_back(r.volume_id);
    return out;
}

// ----------------------------------------------------------------------------
// phantom gen

struct GenOptions {
    std::string out;
    std::size_t count = 600;
    std::uint64_t seed = 0;
    std::uint32_t side = 32;
    double noise = 0.02;
};

void run_gen(const GenOptions& o) {
    write_run_config(o.out, "phantom_gen",
                     {{"out", o.out}, {"count", o.count}, {"seed", o.seed}, {"side", o.side}, {"noise", o.noise}});
    PhantomOptions opt;
    opt.side = o.side;
    opt.noise_sigma = o.noise;
    const auto corpus = generate_corpus(o.count, o.seed, opt);
    const auto vol_dir = fs::path(o.out) / "volumes";
    fs::create_directories(vol_dir);
    std::vector<ManifestEntry> entries(corpus.phantoms.size());
    parallel_for(corpus.phantoms.size(), [&](std::size_t i) {
        const auto& p = corpus.phantoms[i];
        const auto path = (vol_dir / (p.record.volume_id + ".mrvl")).string();
        write_volume(path, p.volume);
        entries[i] = {p.record, path};
    });
    write_manifest((fs::path(o.out) / "manifest.json").string(), entries);
    std::cout << "generated " << entries.size() << " phantoms in " << o.out << "\n";
}

// ----------------------------------------------------------------------------
// ingest

struct IngestOptions {
    std::string dicom_dir;
    std::string manifest;
    std::string volume_dir;
    std::string out;
};

std::vector<ManifestEntry> ingest_dicom(const IngestOptions& o) {
    std::vector<fs::path> files;
    for (const auto& f : fs::recursive_directory_iterator(o.dicom_dir)) {
        if (f.is_regular_file()) files.push_back(f.path());
    }
    std::sort(files.begin(), files.end());
    std::vector<ManifestEntry> entries;
    std::set<std::string> seen;
    for (const auto& f : files) {
        dicom::DicomParseResult res;
        try {
            res = dicom::parse_dicom_meta(read_file_bytes(f.string()), f.stem().string());
        } catch (const Error& e) {
            fail(e.code(), f.string() + ": " + std::string(e.what()).substr(code_name(e.code()).size() + 2));
        }
        for (const auto& w : res.warnings) std::cerr << "warning: " << f.string() << ": " << w << "\n";
        const auto& id = res.record.volume_id;
        require(seen.insert(id).second, ErrorCode::DuplicateVolumeId, "volume_id '" + id + "' appears twice");
        ManifestEntry e{res.record, {}};
        if (!o.volume_dir.empty()) {
            const auto vp = fs::path(o.volume_dir) / (id + ".mrvl");
            if (fs::exists(vp)) e.volume_path = vp.string();
        }
        entries.push_back(std::move(e));
    }
    return entries;
}

void run_ingest(const IngestOptions& o) {
    write_run_config(parent_dir(o.out), "ingest",
                     {{"dicom_dir", o.dicom_dir}, {"manifest", o.manifest}, {"volume_dir", o.volume_dir}, {"out", o.out}});
    const auto entries = o.dicom_dir.empty() ? read_manifest(o.manifest) : ingest_dicom(o);
    write_manifest(o.out, entries);
    std::cout << "ingested " << entries.size() << " records into " << o.out << "\n";
}

// ----------------------------------------------------------------------------
// group

struct GroupOptions {
    std::string records;
    std::string out;
    bool exclude_series = false;
};

void run_group(const GroupOptions& o) {
    write_run_config(parent_dir(o.out), "group",
                     {{"records", o.records}, {"out", o.out}, {"exclude_series_description", o.exclude_series}});
    GroupingOptions opt;
    opt.include_series_description = !o.exclude_series;
    const auto table = make_group_table(records_of(read_manifest(o.records)), opt);
    write_json(o.out, group_table_to_json(table));
    std::cout << table.groups.size() << " contrast groups written to " << o.out << "\n";
}

// ----------------------------------------------------------------------------
// train

struct TrainOptions {
    std::string manifest;
    std::string groups;
    std::string config;
    std::string out;
    std::optional<std::size_t> epochs;
    std::optional<double> lr;
    std::optional<std::uint64_t> seed;
};

void run_train(const TrainOptions& o) {
    TrainConfig cfg = o.config.empty() ? TrainConfig{} : train_config_from_json(read_json(o.config));
    if (o.epochs) cfg.epochs = *o.epochs;
    if (o.lr) cfg.lr = *o.lr;
    if (o.seed) cfg.seed = *o.seed;
    cfg.validate();
    write_run_config(o.out, "train",
                     {{"manifest", o.manifest}, {"groups", o.groups}, {"config", o.config}, {"out", o.out},
                      {"resolved", train_config_to_json(cfg)}});

    const auto table = group_table_from_json(read_json(o.groups));
    write_json((fs::path(o.out) / "model.json").string(), bundle_to_json({cfg.model, table}));
    const auto corpus = load_corpus(o.manifest, cfg.model.image.input_side);
    SplitSpec spec;
    spec.seed = cfg.seed;
    const auto split = split_ids(ids_of(corpus.records()), spec);
    write_json((fs::path(o.out) / "split.json").string(), split_to_json(split));

    const auto train_set = examples_for(corpus, split.train, table, cfg.model.text.vocab);
    const auto val_set = examples_for(corpus, split.val, table, cfg.model.text.vocab);
    MrClipModel<float> model(cfg.model, cfg.seed);
    TrainOutputs out;
    out.dir = o.out;
    out.on_epoch = [](const EpochMetrics& m) {
        std::printf("epoch %zu train %.4f val %.4f tau %.4f\n", m.epoch, m.train_loss, m.val_loss, m.tau);
        std::fflush(stdout);
    };
    const auto res = train(model, train_set, val_set, cfg, out);
    write_json((fs::path(o.out) / "train_summary.json").string(),
               {{"kind", "train"},
                {"best_epoch", res.best_epoch},
                {"best_val_loss", res.best_val_loss},
                {"first_val_loss", res.epochs.front().val_loss},
                {"final_val_loss", res.epochs.back().val_loss},
                {"uniform_baseline", res.uniform_baseline},
                {"steps", res.steps},
                {"checkpoint", "best.mrct"}});
    std::cout << "best epoch " << res.best_epoch << ", val loss " << res.best_val_loss << "\n";
}

// ----------------------------------------------------------------------------
// embed

struct EmbedOptions {
    std::string checkpoint;
    std::string model;
    std::string manifest;
    std::string out;
};

void run_embed(const EmbedOptions& o) {
    const auto sidecar = o.model.empty() ? sidecar_path(o.checkpoint) : o.model;
    write_run_config(parent_dir(o.out), "embed",
                     {{"checkpoint", o.checkpoint}, {"model", sidecar}, {"manifest", o.manifest}, {"out", o.out}});
    const auto bundle = read_bundle(sidecar);
    auto model = load_model(o.checkpoint, bundle);
    const auto corpus = load_corpus(o.manifest, bundle.model.image.input_side);
    const auto store = embed_corpus(model, corpus, bundle.groups);
    write_store(o.out, store);
    std::cout << store.size() << " embeddings written to " << o.out << "\n";
}

// ----------------------------------------------------------------------------
// shared by probe, fewshot and cluster

struct EvalInputs {
    std::string store;
    std::string records;
    std::string split;
    std::string model;
    std::string task = "SEQ_TYPE";
    std::uint64_t seed = 0;

    json to_json() const {
        return {{"store", store}, {"records", records}, {"split", split}, {"model", model}, {"task", task}, {"seed", seed}};
    }
};

struct EvalData {
    EmbeddingStore store;
    std::map<std::string, MetadataRecord> records;
    Split split;
    BinningScheme scheme;
    ProbeTarget target{};
    std::optional<ModelBundle> bundle;

    std::vector<std::string> labels(const std::vector<std::string>& ids) const {
        std::vector<std::string> out;
        for (const auto& id : ids) out.push_back(probe_label(records.at(id), target, scheme));
        return out;
    }
};

/// Without a split file the records are split afresh with the given seed.
/// Without a model sidecar, bins come from the records themselves.
EvalData load_eval(const EvalInputs& in) {
    EvalData d;
    d.store = read_store(in.store);
    const auto entries = read_manifest(in.records);
    for (const auto& e : entries) d.records[e.record.volume_id] = e.record;
    d.target = probe_target_from_name(in.task);
    if (!in.model.empty()) {
        d.bundle = read_bundle(in.model);
        d.scheme = d.bundle->groups.scheme;
    } else {
        d.scheme = fit_binning(records_of(entries));
    }
    if (!in.split.empty()) {
        d.split = split_from_json(read_json(in.split));
    } else {
        SplitSpec spec;
        spec.seed = in.seed;
        d.split = split_ids(ids_of(records_of(entries)), spec);
    }
    return d;
}

void add_eval_options(CLI::App* cmd, EvalInputs& in, bool needs_task = true) {
    cmd->add_option("--store", in.store, "Embedding store (.mrem)")->required()->check(CLI::ExistingFile);
    cmd->add_option("--records", in.records, "Manifest or records.json with the metadata")->required()->check(CLI::ExistingFile);
    cmd->add_option("--split", in.split, "split.json from a training run")->check(CLI::ExistingFile);
    cmd->add_option("--model", in.model, "model.json sidecar (bin edges, encoder config)")->check(CLI::ExistingFile);
    auto* task = cmd->add_option("--task", in.task, "ACQ_PLANE, FIELD_STRENGTH, SEQ_TYPE, SEQ_VARIANT, MANUFACTURER, "
                                                    "MODEL, FLIP_ANGLE, TE_BIN, TR_BIN or TI_BIN");
    if (needs_task) task->required();
    cmd->add_option("--seed", in.seed, "Split seed when no --split is given");
}

// ----------------------------------------------------------------------------
// probe

struct ProbeOptions {
    EvalInputs in;
    std::string out;
};

void run_probe(const ProbeOptions& o) {
    write_run_config(parent_dir(o.out), "probe", {{"inputs", o.in.to_json()}, {"out", o.out}});
    const auto d = load_eval(o.in);
    const auto rep = linear_probe(rows_for(d.store, d.split.train, Modality::Image), d.labels(d.split.train),
                                  rows_for(d.store, d.split.test, Modality::Image), d.labels(d.split.test),
                                  is_bin_target(d.target));
    write_json(o.out, {{"kind", "probe"}, {"task", o.in.task}, {"report", probe_report_to_json(rep)}});
    std::printf("%s accuracy %.4f\n", o.in.task.c_str(), rep.accuracy);
}

// ----------------------------------------------------------------------------
// fewshot

struct FewShotOptions {
    EvalInputs in;
    std::string k_list = "1,2,5,10";
    std::size_t repeats = 10;
    std::string out;
    bool baseline = false;
    std::size_t baseline_min_steps = ScratchConfig{}.min_steps;
    double baseline_epochs = ScratchConfig{}.epochs;
};

std::vector<std::size_t> parse_k_list(const std::string& s) {
    std::vector<std::size_t> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item == "full") {
            out.push_back(kFullShot);
            continue;
        }
        try {
            std::size_t used = 0;
            const auto k = std::stoul(item, &used);
            require(used == item.size() && k > 0, ErrorCode::InvalidArgument, "bad k '" + item + "'");
            out.push_back(k);
        } catch (const std::logic_error&) {
            fail(ErrorCode::InvalidArgument, "bad k '" + item + "'");
        }
    }
    require(!out.empty(), ErrorCode::InvalidArgument, "empty k list");
    return out;
}

void run_fewshot(const FewShotOptions& o) {
    write_run_config(parent_dir(o.out), "fewshot",
                     {{"inputs", o.in.to_json()},
                      {"k_list", o.k_list},
                      {"repeats", o.repeats},
                      {"baseline", o.baseline},
                      {"baseline_min_steps", o.baseline_min_steps},
                      {"baseline_epochs", o.baseline_epochs},
                      {"out", o.out}});
    const auto ks = parse_k_list(o.k_list);
    const auto d = load_eval(o.in);
    const auto pool_y = d.labels(d.split.train);
    const auto test_y = d.labels(d.split.test);

    BaselineArm arm;
    Corpus corpus;
    std::map<std::string, int> class_index;
    if (o.baseline) {
        require(d.bundle.has_value(), ErrorCode::InvalidArgument, "--baseline needs --model for the encoder config");
        corpus = load_corpus(o.in.records, d.bundle->model.image.input_side);
        for (const auto& l : pool_y) class_index.emplace(l, 0);
        int next = 0;
        for (auto& [l, i] : class_index) i = next++;
        arm = [&](const std::vector<std::size_t>& support, std::uint64_t seed) {
            const auto index = corpus.index_by_id();
            std::vector<const std::vector<float>*> sv, tv;
            std::vector<int> sl, tl;
            for (auto i : support) {
                sv.push_back(&corpus.volumes[index.at(d.split.train[i])]);
                sl.push_back(class_index.at(pool_y[i]));
            }
            for (std::size_t i = 0; i < d.split.test.size(); ++i) {
                tv.push_back(&corpus.volumes[index.at(d.split.test[i])]);
                const auto it = class_index.find(test_y[i]);
                tl.push_back(it == class_index.end() ? -1 : it->second);
            }
            ScratchConfig sc;
            sc.encoder = d.bundle->model.image;
            sc.min_steps = o.baseline_min_steps;
            sc.epochs = o.baseline_epochs;
            return scratch_baseline_accuracy(sv, sl, tv, tl, class_index.size(), sc, seed);
        };
    }
    const auto points = few_shot_eval(rows_for(d.store, d.split.train, Modality::Image), pool_y,
                                      rows_for(d.store, d.split.test, Modality::Image), test_y, ks, o.repeats,
                                      o.in.seed, arm);
    write_json(o.out, {{"kind", "fewshot"}, {"task", o.in.task}, {"points", few_shot_to_json(points)}});
    for (const auto& p : points) {
        const auto pr = mean_sd(p.probe_accuracy);
        std::printf("k=%s probe %.4f +- %.4f", p.k == kFullShot ? "full" : std::to_string(p.k).c_str(), pr.mean, pr.sd);
        if (!p.baseline_accuracy.empty()) {
            const auto bl = mean_sd(p.baseline_accuracy);
            std::printf("  baseline %.4f +- %.4f", bl.mean, bl.sd);
        }
        std::printf("\n");
    }
}

// ----------------------------------------------------------------------------
// cluster

struct ClusterOptions {
    EvalInputs in;
    std::string out;
};

void run_cluster(const ClusterOptions& o) {
    write_run_config(parent_dir(o.out), "cluster", {{"inputs", o.in.to_json()}, {"out", o.out}});
    const auto d = load_eval(o.in);
    const auto labels = d.labels(d.split.test);
    const auto rep = cluster_report(rows_for(d.store, d.split.test, Modality::Image), labels);
    write_file_text(o.out, cluster_csv(rep, d.split.test, labels));
    const auto summary = fs::path(o.out).replace_extension(".json").string();
    write_json(summary, {{"kind", "cluster"},
                         {"task", o.in.task},
                         {"silhouette", rep.silhouette},
                         {"explained_variance", rep.explained_variance},
                         {"one_dimensional", rep.one_dimensional},
                         {"coordinates", o.out}});
    std::printf("silhouette %.4f\n", rep.silhouette);
}

// ----------------------------------------------------------------------------
// qc

struct QcOptions {
    std::string checkpoint;
    std::string model;
    std::string test_manifest;
    std::string donors;
    std::string kind = "MISSING_TAG";
    std::string level = "LARGE";
    std::vector<double> rates{0.0, 0.1, 0.2, 0.3, 0.4, 0.5};
    std::uint64_t seed = 0;
    std::string out;
};

void run_qc(const QcOptions& o) {
    const auto sidecar = o.model.empty() ? sidecar_path(o.checkpoint) : o.model;
    write_run_config(parent_dir(o.out), "qc",
                     {{"checkpoint", o.checkpoint}, {"model", sidecar}, {"test_manifest", o.test_manifest},
                      {"donors", o.donors}, {"kind", o.kind}, {"level", o.level}, {"rates", o.rates},
                      {"seed", o.seed}, {"out", o.out}});
    const auto kind = kind_from_name(o.kind);
    const auto level = level_from_name(o.level);
    const auto bundle = read_bundle(sidecar);
    auto model = load_model(o.checkpoint, bundle);
    const auto corpus = load_corpus(o.test_manifest, bundle.model.image.input_side);
    const auto records = corpus.records();
    const auto donors = o.donors.empty() ? records : records_of(read_manifest(o.donors));
    const auto curve = degradation_curve(model.text, image_embeddings(model, corpus), records, donors,
                                         bundle.groups.scheme, bundle.groups.options, kind, level, o.rates, o.seed);
    auto j = curve_to_json(kind, level, curve);
    j = {{"kind", "qc"}, {"curve", j}};
    write_json(o.out, j);
    write_file_text(fs::path(o.out).replace_extension(".verdicts.csv").string(), verdicts_csv(curve));
    for (const auto& p : curve) {
        std::printf("rate %.2f mean cosine %.4f (se %.4f)", p.rate, p.mean_cosine, p.standard_error);
        if (p.auc) std::printf(" auc %.4f", *p.auc);
        std::printf("\n");
    }
}

// ----------------------------------------------------------------------------
// report

std::string format_report(const fs::path& dir) {
    std::ostringstream os;
    os << "run directory: " << dir.string() << "\n";
    std::vector<fs::path> files;
    for (const auto& f : fs::directory_iterator(dir)) {
        if (f.is_regular_file() && f.path().extension() == ".json") files.push_back(f.path());
    }
    std::sort(files.begin(), files.end());
    char buf[256];
    for (const auto& f : files) {
        json j;
        try {
            j = json::parse(read_file_text(f.string()));
        } catch (const json::parse_error&) {
            continue;
        }
        if (!j.is_object() || !j.contains("kind") || !j["kind"].is_string()) continue;
        const auto kind = j["kind"].get<std::string>();
        os << "\n[" << f.filename().string() << "]\n";
        if (kind == "train") {
            std::snprintf(buf, sizeof buf, "  val loss %.4f (epoch 1) -> %.4f (final), best %.4f at epoch %d; log B = %.4f\n",
                          j["first_val_loss"].get<double>(), j["final_val_loss"].get<double>(),
                          j["best_val_loss"].get<double>(), j["best_epoch"].get<int>(), j["uniform_baseline"].get<double>());
            os << buf;
        } else if (kind == "probe") {
            const auto& r = j["report"];
            std::snprintf(buf, sizeof buf, "  %s accuracy %.4f over %d classes\n", j["task"].get<std::string>().c_str(),
                          r["accuracy"].get<double>(), r["classes"].get<int>());
            os << buf;
            if (!r["mean_bin_deviation"].is_null()) {
                std::snprintf(buf, sizeof buf, "  mean bin deviation %.3f\n", r["mean_bin_deviation"].get<double>());
                os << buf;
            }
        } else if (kind == "fewshot") {
            for (const auto& p : j["points"]) {
                const std::string k = p["k"].is_string() ? p["k"].get<std::string>() : std::to_string(p["k"].get<int>());
                std::snprintf(buf, sizeof buf, "  k=%-4s probe %.4f +- %.4f", k.c_str(), p["probe"]["mean"].get<double>(),
                              p["probe"]["sd"].get<double>());
                os << buf;
                if (p.contains("baseline")) {
                    std::snprintf(buf, sizeof buf, "  baseline %.4f +- %.4f", p["baseline"]["mean"].get<double>(),
                                  p["baseline"]["sd"].get<double>());
                    os << buf;
                }
                os << "\n";
            }
        } else if (kind == "cluster") {
            std::snprintf(buf, sizeof buf, "  silhouette %.4f (%s)\n", j["silhouette"].get<double>(),
                          j["task"].get<std::string>().c_str());
            os << buf;
        } else if (kind == "qc") {
            const auto& c = j["curve"];
            os << "  " << c["kind"].get<std::string>() << "-" << c["level"].get<std::string>() << "\n";
            for (const auto& [rate, v] : c["rates"].items()) {
                std::snprintf(buf, sizeof buf, "  rate %s mean cosine %.4f", rate.c_str(), v["mean_cosine"].get<double>());
                os << buf;
                if (!v["auc"].is_null()) {
                    std::snprintf(buf, sizeof buf, " auc %.4f", v["auc"].get<double>());
                    os << buf;
                }
                os << "\n";
            }
        }
    }
    const auto metrics = dir / "metrics.jsonl";
    if (fs::exists(metrics)) {
        os << "\n[metrics.jsonl]\n";
        std::istringstream lines(read_file_text(metrics.string()));
        std::string line;
        while (std::getline(lines, line)) {
            const auto m = json::parse(line);
            if (m["split"] != "val") continue;
            std::snprintf(buf, sizeof buf, "  epoch %3d val %.4f tau %.4f\n", m["epoch"].get<int>(), m["loss"].get<double>(),
                          m["tau"].get<double>());
            os << buf;
        }
    }
    return os.str();
}

void run_report(const std::string& dir) {
    require(fs::is_directory(dir), ErrorCode::Io, "not a directory: " + dir);
    const auto text = format_report(dir);
    write_file_text((fs::path(dir) / "report.txt").string(), text);
    std::cout << text;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"MR-CLIP desk-scale pipeline: phantoms, DICOM metadata, contrastive training and evaluation"};
    app.set_version_flag("--version", std::string(kToolVersion));
    app.require_subcommand(1);
    unsigned threads = std::max(1u, std::thread::hardware_concurrency());
    app.add_option("--threads", threads, "Worker threads; 1 gives bitwise reproducible outputs")
        ->check(CLI::PositiveNumber);

    auto* phantom = app.add_subcommand("phantom", "Synthetic phantom corpus");
    phantom->require_subcommand(1);
    GenOptions gen;
    auto* gen_cmd = phantom->add_subcommand("gen", "Write volumes/*.mrvl and manifest.json");
    gen_cmd->add_option("--out", gen.out, "Output directory")->required();
    gen_cmd->add_option("--count", gen.count, "Number of phantoms")->check(CLI::PositiveNumber);
    gen_cmd->add_option("--seed", gen.seed, "Corpus seed");
    gen_cmd->add_option("--side", gen.side, "Volume side in voxels")->check(CLI::PositiveNumber);
    gen_cmd->add_option("--noise", gen.noise, "Gaussian noise sigma before standardization")->check(CLI::NonNegativeNumber);

    IngestOptions ingest;
    auto* ingest_cmd = app.add_subcommand("ingest", "Parse DICOM headers or validate a manifest into records.json");
    auto* dicom_opt = ingest_cmd->add_option("--dicom-dir", ingest.dicom_dir, "Directory of Part 10 files")
                          ->check(CLI::ExistingDirectory);
    auto* manifest_opt = ingest_cmd->add_option("--manifest", ingest.manifest, "JSON manifest")->check(CLI::ExistingFile);
    dicom_opt->excludes(manifest_opt);
    ingest_cmd->add_option("--volume-dir", ingest.volume_dir, "Directory holding <volume_id>.mrvl for DICOM input")
        ->needs(dicom_opt);
    ingest_cmd->add_option("--out", ingest.out, "records.json to write")->required();

    GroupOptions group;
    auto* group_cmd = app.add_subcommand("group", "Fit bin edges and build contrast groups");
    group_cmd->add_option("--records", group.records, "records.json")->required()->check(CLI::ExistingFile);
    group_cmd->add_option("--out", group.out, "groups.json to write")->required();
    group_cmd->add_flag("--exclude-series-description", group.exclude_series, "Leave series descriptions out of keys and text");

    TrainOptions tr;
    auto* train_cmd = app.add_subcommand("train", "Train the paired encoders");
    train_cmd->add_option("--manifest", tr.manifest, "Manifest with volume paths")->required()->check(CLI::ExistingFile);
    train_cmd->add_option("--groups", tr.groups, "groups.json")->required()->check(CLI::ExistingFile);
    train_cmd->add_option("--config", tr.config, "Training config JSON")->check(CLI::ExistingFile);
    train_cmd->add_option("--out", tr.out, "Run directory")->required();
    train_cmd->add_option("--epochs", tr.epochs, "Override epochs");
    train_cmd->add_option("--lr", tr.lr, "Override learning rate");
    train_cmd->add_option("--seed", tr.seed, "Override seed");

    EmbedOptions emb;
    auto* embed_cmd = app.add_subcommand("embed", "Embed volumes and metadata into a store");
    embed_cmd->add_option("--checkpoint", emb.checkpoint, "Checkpoint (.mrct)")->required()->check(CLI::ExistingFile);
    embed_cmd->add_option("--model", emb.model, "model.json (default: next to the checkpoint)")->check(CLI::ExistingFile);
    embed_cmd->add_option("--manifest", emb.manifest, "Manifest with volume paths")->required()->check(CLI::ExistingFile);
    embed_cmd->add_option("--out", emb.out, "Store (.mrem) to write")->required();

    ProbeOptions probe;
    auto* probe_cmd = app.add_subcommand("probe", "Linear probe on image embeddings for one tag");
    add_eval_options(probe_cmd, probe.in);
    probe_cmd->add_option("--out", probe.out, "report.json to write")->required();

    FewShotOptions fs_opt;
    auto* fewshot_cmd = app.add_subcommand("fewshot", "k-shot probe curve, optionally against a from-scratch encoder");
    add_eval_options(fewshot_cmd, fs_opt.in, false);
    fewshot_cmd->add_option("--k-list", fs_opt.k_list, "Comma-separated k values; 'full' uses the whole pool");
    fewshot_cmd->add_option("--repeats", fs_opt.repeats, "Episodes per k")->check(CLI::PositiveNumber);
    fewshot_cmd->add_flag("--baseline", fs_opt.baseline, "Also train the image encoder from scratch per episode");
    fewshot_cmd->add_option("--baseline-min-steps", fs_opt.baseline_min_steps, "Minimum optimizer steps for the scratch baseline");
    fewshot_cmd->add_option("--baseline-epochs", fs_opt.baseline_epochs, "Scratch baseline passes over the support set")
        ->check(CLI::PositiveNumber);
    fewshot_cmd->add_option("--out", fs_opt.out, "report.json to write")->required();

    ClusterOptions cl;
    auto* cluster_cmd = app.add_subcommand("cluster", "PCA coordinates and silhouette of test image embeddings");
    add_eval_options(cluster_cmd, cl.in, false);
    cluster_cmd->add_option("--out", cl.out, "Coordinates CSV to write (summary goes to the .json sibling)")->required();

    QcOptions qc;
    auto* qc_cmd = app.add_subcommand("qc", "Corrupt test metadata and measure image-text agreement");
    qc_cmd->add_option("--checkpoint", qc.checkpoint, "Checkpoint (.mrct)")->required()->check(CLI::ExistingFile);
    qc_cmd->add_option("--model", qc.model, "model.json (default: next to the checkpoint)")->check(CLI::ExistingFile);
    qc_cmd->add_option("--test-manifest", qc.test_manifest, "Manifest of the records to corrupt")->required()->check(CLI::ExistingFile);
    qc_cmd->add_option("--donors", qc.donors, "Manifest supplying replacement values (default: the test set)")
        ->check(CLI::ExistingFile);
    qc_cmd->add_option("--kind", qc.kind, "NUMERIC, WRONG_TAG or MISSING_TAG");
    qc_cmd->add_option("--level", qc.level, "SMALL, MEDIUM or LARGE");
    qc_cmd->add_option("--rates", qc.rates, "Ascending corruption rates")->delimiter(',');
    qc_cmd->add_option("--seed", qc.seed, "Corruption seed");
    qc_cmd->add_option("--out", qc.out, "qc.json to write (verdicts go to .verdicts.csv)")->required();

    std::string run_dir;
    auto* report_cmd = app.add_subcommand("report", "Summarize the JSON outputs in a run directory");
    report_cmd->add_option("--run-dir", run_dir, "Run directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        set_thread_count(threads);
        if (*gen_cmd) run_gen(gen);
        if (*ingest_cmd) {
            require(!ingest.dicom_dir.empty() || !ingest.manifest.empty(), ErrorCode::InvalidArgument,
                    "ingest needs --dicom-dir or --manifest");
            run_ingest(ingest);
        }
        if (*group_cmd) run_group(group);
        if (*train_cmd) run_train(tr);
        if (*embed_cmd) run_embed(emb);
        if (*probe_cmd) run_probe(probe);
        if (*fewshot_cmd) run_fewshot(fs_opt);
        if (*cluster_cmd) run_cluster(cl);
        if (*qc_cmd) run_qc(qc);
        if (*report_cmd) run_report(run_dir);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: Io: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
