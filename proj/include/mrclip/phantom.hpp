#pragma once

// Synthetic MR volumes. Anatomy is a stack of random ellipsoids labelled
// with tissue classes; voxel intensity follows the spin-echo or
// inversion-recovery signal equation for the sampled TE/TR/TI, so image
// contrast is fixed by the metadata while anatomy varies freely.
//
// Volume file: "MRVL" | version u32 | dims u32 x 3 | f32 LE voxels

#include "mrclip/error.hpp"
#include "mrclip/metadata.hpp"
#include "mrclip/util.hpp"

#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

namespace mrclip {

enum class Tissue : std::uint8_t { Background, WM, GM, CSF, Lesion };

struct TissueParams {
    double t1_ms;
    double t2_ms;
    double proton_density;
};

struct TissueTable {
    TissueParams wm{800, 80, 0.7};
    TissueParams gm{1300, 110, 0.85};
    TissueParams csf{4000, 2000, 1.0};
    TissueParams lesion{1100, 200, 0.9};

    const TissueParams& operator[](Tissue t) const {
        switch (t) {
        case Tissue::WM: return wm;
        case Tissue::GM: return gm;
        case Tissue::CSF: return csf;
        case Tissue::Lesion: return lesion;
        case Tissue::Background: break;
        }
        fail(ErrorCode::InvalidArgument, "background has no tissue parameters");
    }
};

enum class SequenceFamily { SpinEcho, InversionRecovery };

/// Spin echo:          S = PD (1 - e^{-TR/T1}) e^{-TE/T2}
/// Inversion recovery: S = PD |1 - 2 e^{-TI/T1} + e^{-TR/T1}| e^{-TE/T2}
inline double signal(const TissueParams& t, double te, double tr, std::optional<double> ti) {
    const double decay = std::exp(-te / t.t2_ms);
    if (!ti) {
        return t.proton_density * (1.0 - std::exp(-tr / t.t1_ms)) * decay;
    }
    return t.proton_density * std::abs(1.0 - 2.0 * std::exp(-*ti / t.t1_ms) + std::exp(-tr / t.t1_ms)) * decay;
}

struct Range {
    double lo;
    double hi;
};

struct SequenceRecipe {
    std::string name;
    SequenceFamily family;
    Range te_ms;
    Range tr_ms;
    std::optional<Range> ti_ms;
    std::string manufacturer;
    std::string scanner_model;
    ImagingPlane plane;
    double field_strength_t;
    std::string sequence_type;
    std::string sequence_variant;
    double flip_angle_deg;
    std::string series_description;
};

/// Six contrasts: T1w, T2w and PD spin echo, FLAIR and T1 inversion
/// recovery, and a heavily T2-weighted long-TE spin echo.
inline const std::vector<SequenceRecipe>& default_recipes() {
    using F = SequenceFamily;
    using P = ImagingPlane;
    static const std::vector<SequenceRecipe> recipes{
        {"T1W_SE", F::SpinEcho, {10, 20}, {400, 700}, std::nullopt, "SIEMENS", "AVANTO", P::Axial, 1.5, "SE", "SP", 90,
         "T1 AXIAL SE"},
        {"T2W_SE", F::SpinEcho, {80, 120}, {3000, 5000}, std::nullopt, "PHILIPS", "ACHIEVA", P::Axial, 3.0, "TSE", "SK",
         90, "T2 AXIAL TSE"},
        {"PD_SE", F::SpinEcho, {10, 30}, {2000, 3500}, std::nullopt, "GE MEDICAL SYSTEMS", "SIGNA HDXT", P::Coronal, 1.5,
         "PD SE", "SS", 90, "PD CORONAL"},
        {"FLAIR", F::InversionRecovery, {100, 140}, {8000, 10000}, Range{2200, 2600}, "SIEMENS", "PRISMA", P::Axial, 3.0,
         "IR FLAIR", "SK SP", 150, "FLAIR AXIAL"},
        {"T1_IR", F::InversionRecovery, {10, 20}, {1800, 2500}, Range{700, 1000}, "GE MEDICAL SYSTEMS",
         "DISCOVERY MR750", P::Sagittal, 3.0, "IR", "SP MP", 15, "T1 SAGITTAL IR"},
        {"HEAVY_T2", F::SpinEcho, {200, 300}, {6000, 9000}, std::nullopt, "PHILIPS", "INGENIA", P::Coronal, 1.5, "HASTE",
         "SK", 90, "HEAVY T2 CORONAL"},
    };
    return recipes;
}

struct Volume {
    std::array<std::uint32_t, 3> dims{0, 0, 0};
    std::vector<float> voxels;

    std::size_t size() const { return std::size_t{dims[0]} * dims[1] * dims[2]; }
    bool operator==(const Volume&) const = default;
};

struct PhantomOptions {
    std::uint32_t side = 32;
    double noise_sigma = 0.02;
    TissueTable tissues{};
};

struct Ellipsoid {
    std::array<double, 3> center;
    std::array<double, 3> semi_axes;
    Tissue tissue;
};

/// Ellipsoids in a head-centred frame (x = left-right, y = anterior-posterior,
/// z = superior-inferior), coordinates in [-1, 1]. Later entries overwrite
/// earlier ones.
struct Anatomy {
    std::vector<Ellipsoid> ellipsoids;
};

/// 3 to 7 ellipsoids: a grey-matter head, a white-matter core and up to five
/// CSF, lesion or grey-matter inclusions.
inline Anatomy random_anatomy(Rng& rng) {
    Anatomy a;
    auto jitter = [&](double v, double rel) { return v * (1.0 + rel * (2.0 * rng.uniform() - 1.0)); };
    const std::array<double, 3> head{jitter(0.72, 0.08), jitter(0.86, 0.08), jitter(0.66, 0.08)};
    const std::array<double, 3> offset{rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05)};
    a.ellipsoids.push_back({offset, head, Tissue::GM});
    a.ellipsoids.push_back({offset, {head[0] * 0.78, head[1] * 0.8, head[2] * 0.75}, Tissue::WM});
    const std::size_t extra = 1 + rng.below(5);
    static constexpr Tissue kInclusions[] = {Tissue::CSF, Tissue::Lesion, Tissue::GM};
    for (std::size_t i = 0; i < extra; ++i) {
        Ellipsoid e;
        for (int k = 0; k < 3; ++k) {
            e.center[k] = offset[k] + rng.uniform(-0.45, 0.45) * head[k];
            e.semi_axes[k] = rng.uniform(0.08, 0.3);
        }
        e.tissue = kInclusions[rng.below(3)];
        a.ellipsoids.push_back(e);
    }
    return a;
}

/// Head-frame coordinate of voxel (i, j, k) for a volume acquired in `plane`:
/// the slowest axis is the slice normal.
inline std::array<double, 3> head_coordinate(ImagingPlane plane, std::uint32_t side, std::uint32_t i, std::uint32_t j,
                                             std::uint32_t k) {
    auto c = [side](std::uint32_t v) { return (2.0 * (v + 0.5) / side) - 1.0; };
    const double a = c(i), b = c(j), d = c(k);
    switch (plane) {
    case ImagingPlane::Coronal: return {d, a, -b};
    case ImagingPlane::Sagittal: return {a, d, -b};
    case ImagingPlane::Oblique: {
        const double s = std::numbers::sqrt2 / 2.0;
        return {d, s * (b - a), s * (a + b)};
    }
    case ImagingPlane::Axial:
    case ImagingPlane::Unknown: break;
    }
    return {d, b, a};
}

inline std::vector<Tissue> rasterize(const Anatomy& anatomy, ImagingPlane plane, std::uint32_t side) {
    std::vector<Tissue> labels(std::size_t{side} * side * side, Tissue::Background);
    for (std::uint32_t i = 0; i < side; ++i) {
        for (std::uint32_t j = 0; j < side; ++j) {
            for (std::uint32_t k = 0; k < side; ++k) {
                const auto p = head_coordinate(plane, side, i, j, k);
                Tissue t = Tissue::Background;
                for (const auto& e : anatomy.ellipsoids) {
                    double r = 0.0;
                    for (int a = 0; a < 3; ++a) {
                        const double u = (p[a] - e.center[a]) / e.semi_axes[a];
                        r += u * u;
                    }
                    if (r <= 1.0) {
                        t = e.tissue;
                    }
                }
                labels[(std::size_t{i} * side + j) * side + k] = t;
            }
        }
    }
    return labels;
}

/// Noise-free signal image before standardization.
inline std::vector<float> render_signal(const std::vector<Tissue>& labels, const TissueTable& tissues, double te,
                                        double tr, std::optional<double> ti) {
    std::array<float, 5> lut{0.0f, 0.0f, 0.0f, 0.0f, 0.0f};
    for (auto t : {Tissue::WM, Tissue::GM, Tissue::CSF, Tissue::Lesion}) {
        lut[static_cast<std::size_t>(t)] = static_cast<float>(signal(tissues[t], te, tr, ti));
    }
    std::vector<float> out(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        out[i] = lut[static_cast<std::size_t>(labels[i])];
    }
    return out;
}

/// Zero mean, unit variance (a constant image becomes all zeros).
inline void standardize(std::vector<float>& v) {
    double mean = 0.0;
    for (float x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double var = 0.0;
    for (float x : v) var += (x - mean) * (x - mean);
    const double sd = std::sqrt(var / static_cast<double>(v.size()));
    for (auto& x : v) {
        x = sd > 0.0 ? static_cast<float>((x - mean) / sd) : 0.0f;
    }
}

struct Phantom {
    Volume volume;
    MetadataRecord record;
};

inline double sample_parameter(Rng& rng, Range r) {
    return std::round(rng.uniform(r.lo, r.hi) * 100.0) / 100.0;
}

inline Phantom generate_volume(const SequenceRecipe& recipe, std::uint64_t seed, std::string volume_id,
                               const PhantomOptions& opt = {}) {
    require(opt.side > 0, ErrorCode::InvalidArgument, "phantom side must be positive");
    Rng rng(seed);
    Phantom ph;
    auto& r = ph.record;
    r.volume_id = std::move(volume_id);
    r.echo_time_ms = sample_parameter(rng, recipe.te_ms);
    r.repetition_time_ms = sample_parameter(rng, recipe.tr_ms);
    if (recipe.family == SequenceFamily::InversionRecovery) {
        require(recipe.ti_ms.has_value(), ErrorCode::InvalidArgument, "inversion recovery recipe needs a TI range");
        r.inversion_time_ms = sample_parameter(rng, *recipe.ti_ms);
    }
    r.flip_angle_deg = recipe.flip_angle_deg;
    r.manufacturer = recipe.manufacturer;
    r.scanner_model = recipe.scanner_model;
    r.imaging_plane = recipe.plane;
    r.field_strength_t = recipe.field_strength_t;
    r.sequence_type = recipe.sequence_type;
    r.sequence_variant = recipe.sequence_variant;
    r.series_description = recipe.series_description;
    r = normalized(r);
    validate(r);

    const auto labels = rasterize(random_anatomy(rng), recipe.plane, opt.side);
    ph.volume.dims = {opt.side, opt.side, opt.side};
    ph.volume.voxels = render_signal(labels, opt.tissues, *r.echo_time_ms, *r.repetition_time_ms, r.inversion_time_ms);
    if (opt.noise_sigma > 0.0) {
        for (auto& v : ph.volume.voxels) {
            v += static_cast<float>(opt.noise_sigma * rng.normal());
        }
    }
    standardize(ph.volume.voxels);
    return ph;
}

struct PhantomCorpus {
    std::vector<Phantom> phantoms;
    std::vector<std::size_t> recipe_index;
};

inline std::string phantom_id(std::size_t i) {
    std::string digits = std::to_string(i);
    return "PH" + std::string(digits.size() < 6 ? 6 - digits.size() : 0, '0') + digits;
}

/// Volume i uses recipe i mod R and its own derived seed, so any prefix of
/// a corpus is itself a valid corpus.
inline PhantomCorpus generate_corpus(std::size_t count, std::uint64_t seed, const PhantomOptions& opt = {},
                                     const std::vector<SequenceRecipe>& recipes = default_recipes()) {
    require(!recipes.empty(), ErrorCode::InvalidArgument, "no recipes");
    PhantomCorpus c;
    c.phantoms.resize(count);
    c.recipe_index.resize(count);
    parallel_for(count, [&](std::size_t i) {
        c.recipe_index[i] = i % recipes.size();
        c.phantoms[i] = generate_volume(recipes[i % recipes.size()], splitmix64(seed ^ splitmix64(i + 1)), phantom_id(i), opt);
    });
    return c;
}

inline constexpr std::string_view kVolumeMagic = "MRVL";
inline constexpr std::uint32_t kVolumeVersion = 1;

inline std::vector<std::uint8_t> encode_volume(const Volume& v) {
    ByteWriter w;
    w.put_bytes(kVolumeMagic);
    w.put<std::uint32_t>(kVolumeVersion);
    for (auto d : v.dims) {
        w.put<std::uint32_t>(d);
    }
    w.put_array<float>(v.voxels);
    return w.take();
}

inline Volume decode_volume(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes);
    require(r.get_string(4) == kVolumeMagic, ErrorCode::BadFormat, "not an MRVL volume");
    require(r.get<std::uint32_t>() == kVolumeVersion, ErrorCode::BadFormat, "unsupported volume version");
    Volume v;
    for (auto& d : v.dims) {
        d = r.get<std::uint32_t>();
        require(d > 0, ErrorCode::BadFormat, "zero volume dimension");
    }
    require(v.size() * sizeof(float) == r.remaining(), ErrorCode::BadFormat, "volume payload does not match dims");
    v.voxels.resize(v.size());
    r.get_array<float>(v.voxels);
    return v;
}

inline void write_volume(const std::string& path, const Volume& v) { write_file_bytes(path, encode_volume(v)); }

inline Volume read_volume(const std::string& path) { return decode_volume(read_file_bytes(path)); }

} // namespace mrclip
