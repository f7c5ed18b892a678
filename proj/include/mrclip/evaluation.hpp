#pragma once

// Frozen-embedding evaluation: per-tag linear probes, few-shot curves
// against a from-scratch supervised encoder, and PCA + silhouette cluster
// summaries.

#include "mrclip/encoders.hpp"
#include "mrclip/grouping.hpp"
#include "mrclip/optim.hpp"

#include <functional>
#include <map>
#include <numeric>
#include <set>

namespace mrclip {

// ----------------------------------------------------------------------------
// probe targets

enum class ProbeTarget { AcqPlane, FieldStrength, SeqType, SeqVariant, Manufacturer, Model, FlipAngle, TeBin, TrBin, TiBin };

inline constexpr std::array<std::pair<ProbeTarget, std::string_view>, 10> kProbeTargets{{
    {ProbeTarget::AcqPlane, "ACQ_PLANE"},
    {ProbeTarget::FieldStrength, "FIELD_STRENGTH"},
    {ProbeTarget::SeqType, "SEQ_TYPE"},
    {ProbeTarget::SeqVariant, "SEQ_VARIANT"},
    {ProbeTarget::Manufacturer, "MANUFACTURER"},
    {ProbeTarget::Model, "MODEL"},
    {ProbeTarget::FlipAngle, "FLIP_ANGLE"},
    {ProbeTarget::TeBin, "TE_BIN"},
    {ProbeTarget::TrBin, "TR_BIN"},
    {ProbeTarget::TiBin, "TI_BIN"},
}};

inline std::string_view probe_target_name(ProbeTarget t) {
    for (const auto& [k, name] : kProbeTargets) {
        if (k == t) return name;
    }
    return "?";
}

inline ProbeTarget probe_target_from_name(std::string_view s) {
    for (const auto& [k, name] : kProbeTargets) {
        if (name == s) return k;
    }
    fail(ErrorCode::InvalidArgument, "unknown probe task '" + std::string(s) + "'");
}

inline bool is_bin_target(ProbeTarget t) {
    return t == ProbeTarget::TeBin || t == ProbeTarget::TrBin || t == ProbeTarget::TiBin;
}

inline std::string probe_label(const MetadataRecord& r, ProbeTarget t, const BinningScheme& scheme) {
    auto text = [](const std::optional<std::string>& s) { return s.value_or("NONE"); };
    auto num = [](const std::optional<double>& v) { return v ? format_2dp(*v) : std::string("NONE"); };
    switch (t) {
    case ProbeTarget::AcqPlane: return r.imaging_plane ? std::string(plane_name(*r.imaging_plane)) : std::string("NONE");
    case ProbeTarget::FieldStrength: return num(r.field_strength_t);
    case ProbeTarget::SeqType: return text(r.sequence_type);
    case ProbeTarget::SeqVariant: return text(r.sequence_variant);
    case ProbeTarget::Manufacturer: return text(r.manufacturer);
    case ProbeTarget::Model: return text(r.scanner_model);
    case ProbeTarget::FlipAngle: return num(r.flip_angle_deg);
    case ProbeTarget::TeBin: return std::to_string(bin_index(r.echo_time_ms, scheme.te_edges));
    case ProbeTarget::TrBin: return std::to_string(bin_index(r.repetition_time_ms, scheme.tr_edges));
    case ProbeTarget::TiBin: return std::to_string(bin_index(r.inversion_time_ms, scheme.ti_edges));
    }
    return "NONE";
}

// ----------------------------------------------------------------------------
// multinomial logistic regression

struct LogisticConfig {
    std::size_t steps = 2000;
    double lr = 1.0;
};

class LogisticRegression {
public:
    /// Zero-initialised, full-batch gradient descent on mean cross-entropy.
    /// Features are centred on the training mean and divided by one global
    /// RMS, which keeps the fit invariant to rotations of the feature space.
    LogisticRegression(const ad::Tensor<float>& x, const std::vector<int>& y, std::size_t classes,
                       const LogisticConfig& cfg = {}) {
        require(x.rank() == 2 && x.dim(0) == y.size() && !y.empty(), ErrorCode::ShapeMismatch,
                "probe features must be [n, d] with one label per row");
        const std::size_t n = x.dim(0), d = x.dim(1);
        mean_.assign(d, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < d; ++j) mean_[j] += static_cast<double>(x[i * d + j]) / static_cast<double>(n);
        }
        double ss = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < d; ++j) ss += std::pow(static_cast<double>(x[i * d + j]) - mean_[j], 2);
        }
        const double rms = std::sqrt(ss / static_cast<double>(n));
        inv_scale_ = rms > 1e-12 ? 1.0 / rms : 1.0;
        w_ = ad::Tensor<double>({d, classes});
        b_ = ad::Tensor<double>({classes});
        w_.set_requires_grad(true);
        b_.set_requires_grad(true);
        const auto xd = standardize(x);
        std::vector<std::vector<std::size_t>> targets;
        for (int label : y) {
            require(label >= 0 && static_cast<std::size_t>(label) < classes, ErrorCode::InvalidArgument, "probe label out of range");
            targets.push_back({static_cast<std::size_t>(label)});
        }
        for (std::size_t step = 0; step < cfg.steps; ++step) {
            w_.zero_grad();
            b_.zero_grad();
            ad::Tape<double> tape;
            const auto logits = ad::add(ad::matmul(tape.constant(xd), tape.param(w_)), tape.param(b_));
            tape.backward(ad::scale(ad::mean(ad::gather_log_prob(ad::log_softmax(logits, 1), targets)), -1.0));
            for (auto* p : {&w_, &b_}) {
                auto g = p->grad();
                for (std::size_t i = 0; i < p->size(); ++i) {
                    (*p)[i] -= cfg.lr * g[i];
                }
            }
        }
    }

    /// Argmax class per row; ties resolve to the lower class index.
    std::vector<int> predict(const ad::Tensor<float>& x) const {
        const std::size_t d = w_.dim(0), c = w_.dim(1);
        require(x.rank() == 2 && x.dim(1) == d, ErrorCode::ShapeMismatch, "probe features have the wrong width");
        const auto xd = standardize(x);
        std::vector<int> out(x.dim(0));
        for (std::size_t i = 0; i < x.dim(0); ++i) {
            double best = -std::numeric_limits<double>::infinity();
            for (std::size_t k = 0; k < c; ++k) {
                double z = b_[k];
                for (std::size_t j = 0; j < d; ++j) {
                    z += xd[i * d + j] * w_[j * c + k];
                }
                if (z > best) {
                    best = z;
                    out[i] = static_cast<int>(k);
                }
            }
        }
        return out;
    }

private:
    ad::Tensor<double> standardize(const ad::Tensor<float>& x) const {
        auto out = x.cast<double>();
        const std::size_t d = mean_.size();
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = (out[i] - mean_[i % d]) * inv_scale_;
        return out;
    }

    std::vector<double> mean_;
    double inv_scale_ = 1.0;
    ad::Tensor<double> w_, b_;
};

struct ProbeReport {
    double accuracy = 0.0;
    std::map<std::string, double> per_class_error;
    std::optional<double> mean_bin_deviation;
    std::size_t classes = 0;
};

inline constexpr std::string_view kOtherClass = "OTHER";

/// Classes come from the training labels; test labels never seen in
/// training are scored under OTHER and always count as errors.
inline ProbeReport linear_probe(const ad::Tensor<float>& train_x, const std::vector<std::string>& train_y,
                                const ad::Tensor<float>& test_x, const std::vector<std::string>& test_y,
                                bool bin_task = false, const LogisticConfig& cfg = {}) {
    const std::set<std::string> distinct(train_y.begin(), train_y.end());
    require(distinct.size() >= 2, ErrorCode::DegenerateLabels, "probe needs at least two training classes");
    require(test_x.rank() == 2 && test_x.dim(0) == test_y.size() && !test_y.empty(), ErrorCode::ShapeMismatch,
            "test features must be [n, d] with one label per row");
    const std::vector<std::string> classes(distinct.begin(), distinct.end());
    std::map<std::string, int> index;
    for (std::size_t i = 0; i < classes.size(); ++i) index[classes[i]] = static_cast<int>(i);
    std::vector<int> y;
    for (const auto& l : train_y) y.push_back(index.at(l));

    const LogisticRegression model(train_x, y, classes.size(), cfg);
    const auto pred = model.predict(test_x);

    ProbeReport rep;
    rep.classes = classes.size();
    std::map<std::string, std::pair<std::size_t, std::size_t>> tally; // errors, count
    std::size_t correct = 0;
    double deviation = 0.0;
    for (std::size_t i = 0; i < test_y.size(); ++i) {
        const auto& truth = test_y[i];
        const auto& guess = classes[static_cast<std::size_t>(pred[i])];
        const bool ok = guess == truth;
        correct += ok;
        auto& t = tally[index.contains(truth) ? truth : std::string(kOtherClass)];
        t.first += !ok;
        ++t.second;
        if (bin_task) {
            deviation += std::abs(std::stod(guess) - std::stod(truth));
        }
    }
    rep.accuracy = static_cast<double>(correct) / static_cast<double>(test_y.size());
    for (const auto& [label, t] : tally) {
        rep.per_class_error[label] = static_cast<double>(t.first) / static_cast<double>(t.second);
    }
    if (bin_task) {
        rep.mean_bin_deviation = deviation / static_cast<double>(test_y.size());
    }
    return rep;
}

inline nlohmann::json probe_report_to_json(const ProbeReport& r) {
    nlohmann::json j{{"accuracy", r.accuracy}, {"per_class_error", r.per_class_error}, {"classes", r.classes}};
    j["mean_bin_deviation"] = r.mean_bin_deviation ? nlohmann::json(*r.mean_bin_deviation) : nlohmann::json(nullptr);
    return j;
}

// ----------------------------------------------------------------------------
// few-shot

inline constexpr std::size_t kFullShot = 0;

inline ad::Tensor<float> select_rows(const ad::Tensor<float>& x, const std::vector<std::size_t>& rows) {
    const std::size_t d = x.dim(1);
    ad::Tensor<float> out({rows.size(), d});
    for (std::size_t i = 0; i < rows.size(); ++i) {
        std::copy_n(&x.data()[rows[i] * d], d, &out[i * d]);
    }
    return out;
}

/// k examples per class, drawn without replacement from the pool.
inline std::vector<std::size_t> sample_support(const std::vector<std::string>& labels, std::size_t k, Rng& rng) {
    std::map<std::string, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
    require(by_class.size() >= 2, ErrorCode::DegenerateLabels, "few-shot needs at least two classes");
    std::vector<std::size_t> out;
    for (auto& [label, members] : by_class) {
        if (k == kFullShot) {
            out.insert(out.end(), members.begin(), members.end());
            continue;
        }
        require(k <= members.size(), ErrorCode::InsufficientClassSize,
                "class '" + label + "' has " + std::to_string(members.size()) + " examples, k = " + std::to_string(k));
        for (std::size_t i = 0; i < k; ++i) {
            std::swap(members[i], members[i + rng.below(members.size() - i)]);
        }
        out.insert(out.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(k));
    }
    std::sort(out.begin(), out.end());
    return out;
}

struct MeanSd {
    double mean = 0.0;
    double sd = 0.0;
};

inline MeanSd mean_sd(const std::vector<double>& v) {
    MeanSd m;
    if (v.empty()) return m;
    for (double x : v) m.mean += x;
    m.mean /= static_cast<double>(v.size());
    if (v.size() > 1) {
        for (double x : v) m.sd += (x - m.mean) * (x - m.mean);
        m.sd = std::sqrt(m.sd / static_cast<double>(v.size() - 1));
    }
    return m;
}

struct FewShotPoint {
    std::size_t k = 0; // kFullShot for the whole pool
    std::vector<double> probe_accuracy;
    std::vector<double> baseline_accuracy;
};

/// Test accuracy of the comparison arm trained only on `support` (indices
/// into the pool); `seed` is the episode seed.
using BaselineArm = std::function<double(const std::vector<std::size_t>& support, std::uint64_t seed)>;

/// For each k, `repeats` episodes with seeds seed + episode index. Both arms
/// see the same support set; queries are the disjoint test set.
inline std::vector<FewShotPoint> few_shot_eval(const ad::Tensor<float>& pool_x, const std::vector<std::string>& pool_y,
                                               const ad::Tensor<float>& test_x, const std::vector<std::string>& test_y,
                                               const std::vector<std::size_t>& ks, std::size_t repeats, std::uint64_t seed,
                                               const BaselineArm& baseline = {}) {
    require(repeats >= 1, ErrorCode::InvalidArgument, "repeats must be positive");
    std::vector<FewShotPoint> out;
    for (auto k : ks) {
        FewShotPoint pt;
        pt.k = k;
        for (std::size_t e = 0; e < repeats; ++e) {
            const std::uint64_t episode_seed = seed + e;
            Rng rng(episode_seed);
            const auto support = sample_support(pool_y, k, rng);
            std::vector<std::string> sy;
            for (auto i : support) sy.push_back(pool_y[i]);
            pt.probe_accuracy.push_back(linear_probe(select_rows(pool_x, support), sy, test_x, test_y).accuracy);
            if (baseline) {
                pt.baseline_accuracy.push_back(baseline(support, episode_seed));
            }
        }
        out.push_back(std::move(pt));
    }
    return out;
}

inline nlohmann::json few_shot_to_json(const std::vector<FewShotPoint>& points) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& p : points) {
        const auto pr = mean_sd(p.probe_accuracy);
        nlohmann::json j{{"k", p.k == kFullShot ? nlohmann::json("full") : nlohmann::json(p.k)},
                         {"probe", {{"mean", pr.mean}, {"sd", pr.sd}, {"episodes", p.probe_accuracy}}}};
        if (!p.baseline_accuracy.empty()) {
            const auto bl = mean_sd(p.baseline_accuracy);
            j["baseline"] = {{"mean", bl.mean}, {"sd", bl.sd}, {"episodes", p.baseline_accuracy}};
        }
        arr.push_back(std::move(j));
    }
    return arr;
}

/// The image encoder architecture plus a linear head, trained from random
/// initialisation with cross-entropy on a support set.
/// The step budget is max(min_steps, epochs passes over the support set),
/// so small supports get a fixed floor and the full training pool is not
/// cut off after a couple of passes.
struct ScratchConfig {
    ImageEncoderConfig encoder{};
    std::size_t min_steps = 60;
    double epochs = 10.0;
    std::size_t batch_size = 16;
    double lr = 1e-3;

    std::size_t steps_for(std::size_t support) const {
        const double per_epoch = std::ceil(static_cast<double>(support) / static_cast<double>(batch_size));
        return std::max(min_steps, static_cast<std::size_t>(std::ceil(epochs * per_epoch)));
    }
};

inline double scratch_baseline_accuracy(const std::vector<const std::vector<float>*>& support_volumes,
                                        const std::vector<int>& support_labels,
                                        const std::vector<const std::vector<float>*>& test_volumes,
                                        const std::vector<int>& test_labels, std::size_t classes,
                                        const ScratchConfig& cfg, std::uint64_t seed) {
    require(!support_volumes.empty() && support_volumes.size() == support_labels.size(), ErrorCode::InvalidArgument,
            "baseline needs labelled support volumes");
    Rng rng(seed);
    ImageEncoder<float> encoder(cfg.encoder, rng);
    const std::size_t d = cfg.encoder.embed_dim, side = cfg.encoder.input_side, per = side * side * side;
    auto head_w = detail::normal_init<float>(Shape{d, classes}, std::sqrt(1.0 / double(d)), rng);
    auto head_b = detail::zero_init<float>(Shape{classes});
    std::vector<ParamRef<float>> params;
    encoder.collect(params, "encoder.");
    params.push_back({"head.weight", &head_w, true});
    params.push_back({"head.bias", &head_b, false});
    ad::AdamState<float> adam;

    auto stack = [&](const std::vector<const std::vector<float>*>& vols, const std::vector<std::size_t>& rows) {
        Tensor<float> t(Shape{rows.size(), 1, side, side, side});
        for (std::size_t i = 0; i < rows.size(); ++i) {
            require(vols[rows[i]]->size() == per, ErrorCode::ShapeMismatch, "baseline volume has the wrong size");
            std::copy(vols[rows[i]]->begin(), vols[rows[i]]->end(), t.data().begin() + static_cast<std::ptrdiff_t>(i * per));
        }
        return t;
    };
    const std::size_t batch = std::min(cfg.batch_size, support_volumes.size());
    const std::size_t steps = cfg.steps_for(support_volumes.size());
    for (std::size_t step = 0; step < steps; ++step) {
        std::vector<std::size_t> rows;
        std::vector<std::vector<std::size_t>> targets;
        for (std::size_t i = 0; i < batch; ++i) {
            rows.push_back(batch == support_volumes.size() ? i : rng.below(support_volumes.size()));
            targets.push_back({static_cast<std::size_t>(support_labels[rows.back()])});
        }
        ad::zero_grads(params);
        Tape<float> tape;
        const auto z = encoder.forward(tape, tape.constant(stack(support_volumes, rows)));
        const auto logits = ad::add(ad::matmul(z, tape.param(head_w)), tape.param(head_b));
        tape.backward(ad::scale(ad::mean(ad::gather_log_prob(ad::log_softmax(logits, 1), targets)), -1.0f));
        ad::adam_step(params, adam, cfg.lr);
    }

    std::vector<std::size_t> all(test_volumes.size());
    std::iota(all.begin(), all.end(), 0);
    const auto emb = encode_images(encoder, stack(test_volumes, all));
    std::size_t correct = 0;
    for (std::size_t i = 0; i < test_volumes.size(); ++i) {
        std::size_t best = 0;
        double best_z = -std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < classes; ++c) {
            double zc = head_b[c];
            for (std::size_t j = 0; j < d; ++j) zc += static_cast<double>(emb[i * d + j]) * head_w[j * classes + c];
            if (zc > best_z) {
                best_z = zc;
                best = c;
            }
        }
        correct += static_cast<int>(best) == test_labels[i];
    }
    return static_cast<double>(correct) / static_cast<double>(test_volumes.size());
}

// ----------------------------------------------------------------------------
// clusters

struct ClusterReport {
    std::vector<std::array<double, 2>> coords;
    std::array<double, 2> explained_variance{0.0, 0.0};
    double silhouette = 0.0;
    bool one_dimensional = false;
};

/// Top eigenvector of a symmetric matrix by power iteration.
inline std::pair<double, std::vector<double>> power_iteration(const std::vector<double>& m, std::size_t n,
                                                              std::size_t iters = 1000) {
    std::vector<double> v(n), next(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = 1.0 + 0.01 * static_cast<double>(i); // deterministic start
    double lambda = 0.0;
    for (std::size_t it = 0; it < iters; ++it) {
        double norm = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < n; ++j) s += m[i * n + j] * v[j];
            next[i] = s;
            norm += s * s;
        }
        norm = std::sqrt(norm);
        if (norm == 0.0) {
            return {0.0, v};
        }
        double delta = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            next[i] /= norm;
            delta = std::max(delta, std::abs(next[i] - v[i]));
        }
        v.swap(next);
        lambda = norm;
        if (delta < 1e-12) break;
    }
    return {lambda, v};
}

/// Mean over points of (b - a) / max(a, b) with cosine distance; points in
/// singleton clusters contribute 0.
inline double silhouette_cosine(const ad::Tensor<float>& x, const std::vector<std::string>& labels) {
    const std::size_t n = x.dim(0), d = x.dim(1);
    require(labels.size() == n, ErrorCode::ShapeMismatch, "one label per point required");
    std::vector<double> norms(n);
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < d; ++j) s += double(x[i * d + j]) * x[i * d + j];
        norms[i] = std::sqrt(s);
    }
    std::map<std::string, std::size_t> cls;
    for (const auto& l : labels) cls.emplace(l, cls.size());
    std::vector<std::size_t> c(n), size(cls.size(), 0);
    for (std::size_t i = 0; i < n; ++i) {
        c[i] = cls.at(labels[i]);
        ++size[c[i]];
    }
    std::vector<double> score(n, 0.0);
    parallel_for(n, [&](std::size_t i) {
        if (size[c[i]] < 2) return;
        std::vector<double> sum(cls.size(), 0.0);
        for (std::size_t k = 0; k < n; ++k) {
            if (k == i) continue;
            double dt = 0.0;
            for (std::size_t j = 0; j < d; ++j) dt += double(x[i * d + j]) * x[k * d + j];
            const double denom = norms[i] * norms[k];
            sum[c[k]] += 1.0 - (denom > 0.0 ? dt / denom : 0.0);
        }
        const double a = sum[c[i]] / static_cast<double>(size[c[i]] - 1);
        double b = std::numeric_limits<double>::infinity();
        for (std::size_t g = 0; g < cls.size(); ++g) {
            if (g != c[i]) b = std::min(b, sum[g] / static_cast<double>(size[g]));
        }
        const double m = std::max(a, b);
        score[i] = m > 0.0 ? (b - a) / m : 0.0;
    });
    return std::accumulate(score.begin(), score.end(), 0.0) / static_cast<double>(n);
}

inline ClusterReport cluster_report(const ad::Tensor<float>& x, const std::vector<std::string>& labels) {
    require(x.rank() == 2 && x.dim(0) == labels.size(), ErrorCode::ShapeMismatch, "one label per embedding row required");
    require(x.dim(0) >= 10, ErrorCode::TooFewRecords, "cluster report needs at least 10 points");
    require(std::set<std::string>(labels.begin(), labels.end()).size() >= 2, ErrorCode::DegenerateLabels,
            "cluster report needs at least two labels");
    const std::size_t n = x.dim(0), d = x.dim(1);
    std::vector<double> mean(d, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) mean[j] += x[i * d + j];
    for (auto& m : mean) m /= static_cast<double>(n);
    std::vector<double> cov(d * d, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t a = 0; a < d; ++a) {
            const double xa = x[i * d + a] - mean[a];
            for (std::size_t b = 0; b < d; ++b) cov[a * d + b] += xa * (x[i * d + b] - mean[b]);
        }
    for (auto& v : cov) v /= static_cast<double>(n - 1);
    double trace = 0.0;
    for (std::size_t a = 0; a < d; ++a) trace += cov[a * d + a];

    ClusterReport rep;
    const auto [l1, v1] = power_iteration(cov, d);
    require(l1 > 1e-12 * std::max(1.0, trace), ErrorCode::DegenerateCovariance, "embeddings have zero variance");
    for (std::size_t a = 0; a < d; ++a)
        for (std::size_t b = 0; b < d; ++b) cov[a * d + b] -= l1 * v1[a] * v1[b];
    auto [l2, v2] = power_iteration(cov, d);
    rep.one_dimensional = l2 <= 1e-9 * l1;
    rep.explained_variance = {l1 / trace, rep.one_dimensional ? 0.0 : l2 / trace};
    rep.coords.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        double p1 = 0.0, p2 = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double xc = x[i * d + j] - mean[j];
            p1 += xc * v1[j];
            p2 += xc * v2[j];
        }
        rep.coords[i] = {p1, rep.one_dimensional ? 0.0 : p2};
    }
    rep.silhouette = silhouette_cosine(x, labels);
    return rep;
}

inline std::string cluster_csv(const ClusterReport& r, const std::vector<std::string>& ids, const std::vector<std::string>& labels) {
    std::string out = "volume_id,x,y,label\n";
    for (std::size_t i = 0; i < ids.size(); ++i) {
        char buf[64];
        std::snprintf(buf, sizeof buf, ",%.6f,%.6f,", r.coords[i][0], r.coords[i][1]);
        out += ids[i] + buf + labels[i] + "\n";
    }
    return out;
}

} // namespace mrclip
