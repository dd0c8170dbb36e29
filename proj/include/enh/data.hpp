#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "enh/image.hpp"
#include "enh/rng.hpp"

namespace enh {

// Normalized box, corners (x1,y1)-(x2,y2), x1<x2, y1<y2.
struct BoxN {
    double x1 = 0, y1 = 0, x2 = 1, y2 = 1;
    bool valid() const { return x1 < x2 && y1 < y2 && x1 >= 0 && y1 >= 0 && x2 <= 1 && y2 <= 1; }
};

// Parametric degradation applied in normalized Lab:
//   L <- L^gamma_dark ; a,b <- 0.5 + chroma_scale*(a,b - 0.5) + tint_shift
struct Degradation {
    double gamma_dark = 1.0;      // sampled from [1.5, 2.5]
    double chroma_scale = 1.0;    // sampled from [0.3, 0.7]
    // color corpora: each component in [-0.08, 0.08];
    // tint corpora: a pure cast with magnitude in [0.10, 0.16]
    std::array<double, 2> tint_shift{0.0, 0.0};
};

struct ManifestEntry {
    std::string path;
    std::string label;  // "good" | "bad"
    std::optional<Degradation> degradation;
    std::vector<int> pairs;       // indices of paired good entries (k=5 after pairing)
    std::optional<BoxN> bbox;     // salient-object ground truth (crop corpora)
};

struct DatasetManifest {
    std::vector<ManifestEntry> entries;

    std::vector<int> good_indices() const;
    std::vector<int> bad_indices() const;
};

enum class DatasetKind { Color, Tint, Crop };
DatasetKind dataset_kind_from_name(const std::string& name);

// Procedural 64x64 scene: smooth background gradient plus 2-5 anti-aliased
// colored shapes with a saturated palette. Deterministic in seed.
RgbImage generate_scene(std::uint64_t seed, int size = 64);

// Dark-background scene with one bright salient object. area_lo/area_hi
// bound the object's area fraction; returns the object's bounding box.
RgbImage generate_salient_scene(std::uint64_t seed, BoxN& bbox, int size = 64,
                                double area_lo = 0.4, double area_hi = 0.6);

RgbImage degrade(const RgbImage& img, const Degradation& d);

Degradation sample_degradation(Rng& rng, DatasetKind kind);

// Generates the corpus under out_dir (good/, bad/, and for degraded
// corpora ref/ holding the undegraded originals of the bad pool, which
// never enter training). Pairings are left empty; run pair_manifest once
// a feature extractor exists.
DatasetManifest build_dataset(DatasetKind kind, int n_good, int n_bad,
                              std::uint64_t seed, const std::string& out_dir);

void save_manifest(const std::string& path, const DatasetManifest& m);
DatasetManifest load_manifest(const std::string& path);

// Exact k-NN in feature space: for each bad entry, the k nearest good
// entries by Euclidean distance (ties broken by smaller index).
// feats[i] are aligned with manifest entry indices.
void pair_manifest(DatasetManifest& m, const std::vector<std::vector<double>>& feats, int k = 5);

}  // namespace enh
