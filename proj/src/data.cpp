#include "enh/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "enh/colorspace.hpp"
#include "enh/imageio.hpp"

namespace enh {
namespace {

void hsv_to_rgb(double h, double s, double v, double rgb[3]) {
    h = h - std::floor(h);
    double c = v * s;
    double hp = h * 6.0;
    double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
    double r = 0, g = 0, b = 0;
    switch (static_cast<int>(hp) % 6) {
        case 0: r = c; g = x; break;
        case 1: r = x; g = c; break;
        case 2: g = c; b = x; break;
        case 3: g = x; b = c; break;
        case 4: r = x; b = c; break;
        default: r = c; b = x; break;
    }
    double m = v - c;
    rgb[0] = r + m;
    rgb[1] = g + m;
    rgb[2] = b + m;
}

double smoothstep(double e0, double e1, double x) {
    double t = (x - e0) / (e1 - e0);
    t = t < 0.0 ? 0.0 : (t > 1.0 ? 1.0 : t);
    return t * t * (3.0 - 2.0 * t);
}

struct Shape {
    bool circle = true;
    double cx = 0, cy = 0;   // center, pixels
    double rx = 1, ry = 1;   // radii / half extents, pixels
    double color[3] = {0, 0, 0};
};

// coverage in [0,1], ~1px anti-aliased edge
double shape_coverage(const Shape& s, double x, double y) {
    if (s.circle) {
        double dx = (x - s.cx) / s.rx, dy = (y - s.cy) / s.ry;
        double d = std::sqrt(dx * dx + dy * dy) - 1.0;
        double edge = 1.0 / std::min(s.rx, s.ry);
        return 1.0 - smoothstep(-edge, edge, d);
    }
    double dx = std::abs(x - s.cx) - s.rx;
    double dy = std::abs(y - s.cy) - s.ry;
    double d = std::max(dx, dy);
    return 1.0 - smoothstep(-0.75, 0.75, d);
}

void composite(RgbImage& img, const Shape& s) {
    int x0 = std::max(0, static_cast<int>(s.cx - s.rx - 2));
    int x1 = std::min(img.w - 1, static_cast<int>(s.cx + s.rx + 2));
    int y0 = std::max(0, static_cast<int>(s.cy - s.ry - 2));
    int y1 = std::min(img.h - 1, static_cast<int>(s.cy + s.ry + 2));
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
            double a = shape_coverage(s, x + 0.5, y + 0.5);
            if (a <= 0.0) continue;
            for (int c = 0; c < 3; ++c)
                img.at(y, x, c) = (1.0 - a) * img.at(y, x, c) + a * s.color[c];
        }
}

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

std::vector<int> DatasetManifest::good_indices() const {
    std::vector<int> out;
    for (std::size_t i = 0; i < entries.size(); ++i)
        if (entries[i].label == "good") out.push_back(static_cast<int>(i));
    return out;
}

std::vector<int> DatasetManifest::bad_indices() const {
    std::vector<int> out;
    for (std::size_t i = 0; i < entries.size(); ++i)
        if (entries[i].label == "bad") out.push_back(static_cast<int>(i));
    return out;
}

DatasetKind dataset_kind_from_name(const std::string& name) {
    if (name == "color") return DatasetKind::Color;
    if (name == "tint") return DatasetKind::Tint;
    if (name == "crop") return DatasetKind::Crop;
    throw std::invalid_argument("unknown dataset kind: " + name);
}

RgbImage generate_scene(std::uint64_t seed, int size) {
    Rng rng(seed);
    RgbImage img(size, size);
    // smooth background: bilinear blend of four corner colors spanning
    // dark to bright so the corpus covers the full luminance range
    double corner[4][3];
    for (int k = 0; k < 4; ++k) {
        double h = rng.uniform();
        double s = rng.uniform(0.2, 0.7);
        double v = (k % 2 == 0) ? rng.uniform(0.05, 0.45) : rng.uniform(0.55, 0.98);
        hsv_to_rgb(h, s, v, corner[k]);
    }
    for (int y = 0; y < size; ++y) {
        double ty = (y + 0.5) / size;
        for (int x = 0; x < size; ++x) {
            double tx = (x + 0.5) / size;
            for (int c = 0; c < 3; ++c) {
                double top = (1 - tx) * corner[0][c] + tx * corner[1][c];
                double bot = (1 - tx) * corner[2][c] + tx * corner[3][c];
                img.at(y, x, c) = (1 - ty) * top + ty * bot;
            }
        }
    }
    int n_shapes = rng.uniform_int(2, 5);
    for (int k = 0; k < n_shapes; ++k) {
        Shape s;
        s.circle = rng.uniform() < 0.5;
        s.cx = rng.uniform(0.1, 0.9) * size;
        s.cy = rng.uniform(0.1, 0.9) * size;
        s.rx = rng.uniform(0.08, 0.28) * size;
        s.ry = rng.uniform(0.08, 0.28) * size;
        // saturated palette; alternate dark and bright values
        double v = (k % 2 == 0) ? rng.uniform(0.6, 1.0) : rng.uniform(0.15, 0.5);
        hsv_to_rgb(rng.uniform(), rng.uniform(0.7, 1.0), v, s.color);
        composite(img, s);
    }
    return img;
}

RgbImage generate_salient_scene(std::uint64_t seed, BoxN& bbox, int size,
                                double area_lo, double area_hi) {
    Rng rng(seed);
    RgbImage img(size, size);
    // dark, low-chroma background
    double bg[3];
    hsv_to_rgb(rng.uniform(), rng.uniform(0.0, 0.3), rng.uniform(0.02, 0.12), bg);
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x)
            for (int c = 0; c < 3; ++c) img.at(y, x, c) = bg[c];
    double area = rng.uniform(area_lo, area_hi);
    double aspect = rng.uniform(0.75, 1.3333);
    double w = std::min(0.98, std::sqrt(area * aspect));
    double h = std::min(0.98, area / w);
    double x0 = rng.uniform(0.01, 0.99 - w);
    double y0 = rng.uniform(0.01, 0.99 - h);
    Shape s;
    s.circle = rng.uniform() < 0.5;
    s.cx = (x0 + w / 2) * size;
    s.cy = (y0 + h / 2) * size;
    s.rx = w / 2 * size;
    s.ry = h / 2 * size;
    hsv_to_rgb(rng.uniform(), rng.uniform(0.7, 1.0), rng.uniform(0.75, 1.0), s.color);
    composite(img, s);
    bbox = BoxN{x0, y0, x0 + w, y0 + h};
    return img;
}

RgbImage degrade(const RgbImage& img, const Degradation& d) {
    LabImage lab = srgb_to_lab(img);
    for (std::size_t i = 0; i < lab.count(); i += 3) {
        lab.px[i] = std::pow(lab.px[i], d.gamma_dark);
        for (int c = 1; c < 3; ++c) {
            double v = 0.5 + d.chroma_scale * (lab.px[i + c] - 0.5) + d.tint_shift[c - 1];
            lab.px[i + c] = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
        }
    }
    return lab_to_srgb(lab);
}

// gray-world chroma centering. Tint corpora need chroma-balanced scenes:
// natural per-scene color bias is the same size as the injected cast and
// would make "tinted" statistically invisible otherwise.
static RgbImage neutralize_chroma(const RgbImage& img) {
    LabImage lab = srgb_to_lab(img);
    int n = lab.w * lab.h;
    for (int pass = 0; pass < 2; ++pass) {
        double ma = 0.0, mb = 0.0;
        for (std::size_t i = 0; i < lab.count(); i += 3) {
            ma += lab.px[i + 1];
            mb += lab.px[i + 2];
        }
        ma = ma / n - 0.5;
        mb = mb / n - 0.5;
        for (std::size_t i = 0; i < lab.count(); i += 3) {
            for (int c = 1; c < 3; ++c) {
                double v = lab.px[i + c] - (c == 1 ? ma : mb);
                lab.px[i + c] = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
            }
        }
    }
    return lab_to_srgb(lab);
}

Degradation sample_degradation(Rng& rng, DatasetKind kind) {
    Degradation d;
    if (kind == DatasetKind::Color) {
        d.gamma_dark = rng.uniform(1.5, 2.5);
        d.chroma_scale = rng.uniform(0.3, 0.7);
        d.tint_shift = {rng.uniform(-0.08, 0.08), rng.uniform(-0.08, 0.08)};
    } else if (kind == DatasetKind::Tint) {
        // cast only: leave luminance and chroma spread untouched, and keep
        // the cast strong enough to be visible
        double ang = rng.uniform(0.0, 6.283185307179586);
        double mag = rng.uniform(0.10, 0.16);
        d.tint_shift = {mag * std::cos(ang), mag * std::sin(ang)};
    }
    return d;
}

DatasetManifest build_dataset(DatasetKind kind, int n_good, int n_bad,
                              std::uint64_t seed, const std::string& out_dir) {
    if (n_good < 5) throw std::invalid_argument("need at least 5 good images for pairing");
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(out_dir) / "good");
    fs::create_directories(fs::path(out_dir) / "bad");
    bool degraded = kind != DatasetKind::Crop;
    if (degraded) fs::create_directories(fs::path(out_dir) / "ref");

    Rng rng(seed);
    DatasetManifest m;
    char name[64];
    // good and bad pools come from disjoint scene seed streams: unpaired
    // setting, no aligned ground truth in training
    for (int i = 0; i < n_good; ++i) {
        std::uint64_t s = seed * 2654435761ULL + 1000003ULL * i + 1;
        std::snprintf(name, sizeof(name), "good/g_%05d.png", i);
        ManifestEntry e;
        e.path = name;
        e.label = "good";
        if (kind == DatasetKind::Crop) {
            BoxN box;
            RgbImage img = generate_salient_scene(s, box, 64, 0.8, 0.95);
            save_image((fs::path(out_dir) / e.path).string(), img);
            e.bbox = box;
        } else {
            RgbImage img = generate_scene(s);
            if (kind == DatasetKind::Tint) img = neutralize_chroma(img);
            save_image((fs::path(out_dir) / e.path).string(), img);
        }
        m.entries.push_back(std::move(e));
    }
    for (int i = 0; i < n_bad; ++i) {
        std::uint64_t s = seed * 2654435761ULL + 1000003ULL * (n_good + i) + 500009ULL;
        std::snprintf(name, sizeof(name), "bad/b_%05d.png", i);
        ManifestEntry e;
        e.path = name;
        e.label = "bad";
        if (kind == DatasetKind::Crop) {
            BoxN box;
            RgbImage img = generate_salient_scene(s, box, 64, 0.4, 0.6);
            save_image((fs::path(out_dir) / e.path).string(), img);
            e.bbox = box;
        } else {
            RgbImage orig = generate_scene(s);
            if (kind == DatasetKind::Tint) orig = neutralize_chroma(orig);
            Degradation d = sample_degradation(rng, kind);
            RgbImage bad = degrade(orig, d);
            save_image((fs::path(out_dir) / e.path).string(), bad);
            std::snprintf(name, sizeof(name), "ref/b_%05d.png", i);
            save_image((fs::path(out_dir) / name).string(), orig);
            e.degradation = d;
        }
        m.entries.push_back(std::move(e));
    }
    save_manifest((fs::path(out_dir) / "manifest.tsv").string(), m);
    return m;
}

void save_manifest(const std::string& path, const DatasetManifest& m) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write manifest: " + path);
    out << "# enhds-manifest v1\tpath\tlabel\tdegradation\tpairs\tbbox\n";
    for (const auto& e : m.entries) {
        out << e.path << '\t' << e.label << '\t';
        if (e.degradation) {
            const auto& d = *e.degradation;
            out << "g=" << fmt_double(d.gamma_dark) << ";c=" << fmt_double(d.chroma_scale)
                << ";ta=" << fmt_double(d.tint_shift[0]) << ";tb=" << fmt_double(d.tint_shift[1]);
        } else {
            out << '-';
        }
        out << '\t';
        if (e.pairs.empty()) {
            out << '-';
        } else {
            for (std::size_t i = 0; i < e.pairs.size(); ++i)
                out << (i ? "," : "") << e.pairs[i];
        }
        out << '\t';
        if (e.bbox) {
            out << fmt_double(e.bbox->x1) << ',' << fmt_double(e.bbox->y1) << ','
                << fmt_double(e.bbox->x2) << ',' << fmt_double(e.bbox->y2);
        } else {
            out << '-';
        }
        out << '\n';
    }
}

DatasetManifest load_manifest(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open manifest: " + path);
    std::string line;
    if (!std::getline(in, line) || line.rfind("# enhds-manifest v1", 0) != 0)
        throw IoError("manifest missing/unsupported header: " + path);
    DatasetManifest m;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<std::string> cols;
        std::stringstream ss(line);
        std::string col;
        while (std::getline(ss, col, '\t')) cols.push_back(col);
        if (cols.size() != 5)
            throw IoError(path + ":" + std::to_string(lineno) + ": expected 5 columns");
        ManifestEntry e;
        e.path = cols[0];
        e.label = cols[1];
        if (e.label != "good" && e.label != "bad")
            throw IoError(path + ":" + std::to_string(lineno) + ": bad label " + e.label);
        if (cols[2] != "-") {
            Degradation d;
            if (std::sscanf(cols[2].c_str(), "g=%lf;c=%lf;ta=%lf;tb=%lf", &d.gamma_dark,
                            &d.chroma_scale, &d.tint_shift[0], &d.tint_shift[1]) != 4)
                throw IoError(path + ":" + std::to_string(lineno) + ": bad degradation record");
            e.degradation = d;
        }
        if (cols[3] != "-") {
            std::stringstream ps(cols[3]);
            std::string tok;
            while (std::getline(ps, tok, ',')) e.pairs.push_back(std::stoi(tok));
        }
        if (cols[4] != "-") {
            BoxN b;
            if (std::sscanf(cols[4].c_str(), "%lf,%lf,%lf,%lf", &b.x1, &b.y1, &b.x2, &b.y2) != 4)
                throw IoError(path + ":" + std::to_string(lineno) + ": bad bbox record");
            e.bbox = b;
        }
        m.entries.push_back(std::move(e));
    }
    return m;
}

void pair_manifest(DatasetManifest& m, const std::vector<std::vector<double>>& feats, int k) {
    std::vector<int> good = m.good_indices();
    if (static_cast<int>(good.size()) < k)
        throw std::invalid_argument("not enough good images to pair k=" + std::to_string(k));
    for (auto& e : m.entries) {
        if (e.label != "bad") continue;
        // exact k-NN by Euclidean distance, ties broken by smaller index
        const auto& f = feats[&e - m.entries.data()];
        std::vector<std::pair<double, int>> d;
        d.reserve(good.size());
        for (int gi : good) {
            double s = 0.0;
            const auto& g = feats[gi];
            for (std::size_t j = 0; j < f.size(); ++j) {
                double t = f[j] - g[j];
                s += t * t;
            }
            d.emplace_back(s, gi);
        }
        std::stable_sort(d.begin(), d.end(), [](const auto& a, const auto& b) {
            if (a.first != b.first) return a.first < b.first;
            return a.second < b.second;
        });
        e.pairs.clear();
        for (int i = 0; i < k; ++i) e.pairs.push_back(d[i].second);
    }
}

}  // namespace enh
