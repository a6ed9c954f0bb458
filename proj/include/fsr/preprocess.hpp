#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "fsr/error.hpp"
#include "fsr/image.hpp"
#include "fsr/image_io.hpp"
#include "fsr/parallel.hpp"

namespace fsr {

// Background-referenced hard threshold: T = mean + k*std of the darkest half
// of the pixels; values below T are zeroed, values at or above T pass through.
inline Image2D threshold_denoise(const Image2D& img, double k = 2.0) {
    std::vector<double> sorted = img.values;
    std::sort(sorted.begin(), sorted.end());
    size_t m = std::max<size_t>(1, sorted.size() / 2);
    double mean = 0.0;
    for (size_t i = 0; i < m; ++i) mean += sorted[i];
    mean /= static_cast<double>(m);
    double var = 0.0;
    for (size_t i = 0; i < m; ++i) {
        double d = sorted[i] - mean;
        var += d * d;
    }
    var /= static_cast<double>(m);
    double t = mean + k * std::sqrt(var);
    Image2D out = img;
    for (double& v : out.values)
        if (v < t) v = 0.0;
    return out;
}

// Doubles both dimensions by normalized Gaussian-weighted resampling: output
// pixel (y, x) sits at input coordinate (y/2, x/2) and averages input pixels
// within radius max(1, 3*sigma) (sigma in input-pixel units; the 0.35 default
// is 0.7 px at output scale).  Pixel pitch is halved.
inline Image2D gaussian_upsample_x2(const Image2D& img, double sigma_px = 0.35) {
    if (sigma_px <= 0.0)
        throw Error(Error::Kind::Param, "upsampling sigma must be positive");
    const int h = img.height, w = img.width;
    Image2D out(2 * w, 2 * h, img.pixel_pitch_nm / 2.0, img.source_depth);
    const double rad = std::max(1.0, 3.0 * sigma_px);
    const double rad2 = rad * rad;
    const double denom = 2.0 * sigma_px * sigma_px;
    parallel_for(0, 2 * h, [&](long y) {
        double cy = static_cast<double>(y) / 2.0;
        int y0 = std::max(0, static_cast<int>(std::floor(cy - rad)));
        int y1 = std::min(h - 1, static_cast<int>(std::ceil(cy + rad)));
        for (int x = 0; x < 2 * w; ++x) {
            double cx = static_cast<double>(x) / 2.0;
            int x0 = std::max(0, static_cast<int>(std::floor(cx - rad)));
            int x1 = std::min(w - 1, static_cast<int>(std::ceil(cx + rad)));
            double num = 0.0, den = 0.0;
            for (int yi = y0; yi <= y1; ++yi) {
                double dy = cy - yi;
                for (int xi = x0; xi <= x1; ++xi) {
                    double dx = cx - xi;
                    double d2 = dy * dy + dx * dx;
                    if (d2 <= rad2) {
                        double g = std::exp(-d2 / denom);
                        num += g * img.at(yi, xi);
                        den += g;
                    }
                }
            }
            out.at(static_cast<int>(y), x) = den > 0.0 ? num / den : 0.0;
        }
    });
    return out;
}

namespace detail {

// 1D squared Euclidean distance transform (lower envelope of parabolas).
inline void edt_1d(const std::vector<double>& f, std::vector<double>& d) {
    const int n = static_cast<int>(f.size());
    d.assign(n, 0.0);
    std::vector<int> v(n, 0);
    std::vector<double> z(n + 1, 0.0);
    int k = 0;
    v[0] = 0;
    z[0] = -std::numeric_limits<double>::infinity();
    z[1] = std::numeric_limits<double>::infinity();
    for (int q = 1; q < n; ++q) {
        double s;
        for (;;) {
            int p = v[k];
            s = ((f[q] + q * q) - (f[p] + p * p)) / (2.0 * q - 2.0 * p);
            if (s <= z[k]) {
                --k;
            } else {
                break;
            }
        }
        ++k;
        v[k] = q;
        z[k] = s;
        z[k + 1] = std::numeric_limits<double>::infinity();
    }
    k = 0;
    for (int q = 0; q < n; ++q) {
        while (z[k + 1] < q) ++k;
        int p = v[k];
        d[q] = (q - p) * static_cast<double>(q - p) + f[p];
    }
}

// Exact squared EDT of a mask (distance 0 inside the mask).
inline std::vector<double> edt_squared(const std::vector<char>& mask, int w, int h) {
    const double INF = 1e18;
    std::vector<double> g(static_cast<size_t>(w) * h);
    std::vector<double> col(h), dcol(h);
    for (int x = 0; x < w; ++x) {
        for (int y = 0; y < h; ++y)
            col[y] = mask[static_cast<size_t>(y) * w + x] ? 0.0 : INF;
        edt_1d(col, dcol);
        for (int y = 0; y < h; ++y) g[static_cast<size_t>(y) * w + x] = dcol[y];
    }
    std::vector<double> out(static_cast<size_t>(w) * h);
    std::vector<double> row(w), drow(w);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) row[x] = g[static_cast<size_t>(y) * w + x];
        edt_1d(row, drow);
        for (int x = 0; x < w; ++x) out[static_cast<size_t>(y) * w + x] = drow[x];
    }
    return out;
}

// 8-connected foreground components; returns the component id per pixel
// (-1 = background) and the component count.
inline int connected_components(const Image2D& label, std::vector<int>& comp) {
    const int w = label.width, h = label.height;
    comp.assign(static_cast<size_t>(w) * h, -1);
    int next = 0;
    std::deque<std::pair<int, int>> queue;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            size_t idx = static_cast<size_t>(y) * w + x;
            if (label.values[idx] != 1.0 || comp[idx] >= 0) continue;
            comp[idx] = next;
            queue.push_back({y, x});
            while (!queue.empty()) {
                auto [cy, cx] = queue.front();
                queue.pop_front();
                for (int dy = -1; dy <= 1; ++dy) {
                    for (int dx = -1; dx <= 1; ++dx) {
                        if (dy == 0 && dx == 0) continue;
                        int ny = cy + dy, nx = cx + dx;
                        if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
                        size_t nidx = static_cast<size_t>(ny) * w + nx;
                        if (label.values[nidx] == 1.0 && comp[nidx] < 0) {
                            comp[nidx] = next;
                            queue.push_back({ny, nx});
                        }
                    }
                }
            }
            ++next;
        }
    }
    return next;
}

}  // namespace detail

// Boundary-emphasizing loss weights:
//   w(x) = w_c(x) + w0 * exp(-(d1+d2)^2 / (2 sigma_w^2))
// where w_c is inverse class frequency and d1/d2 are the Euclidean distances
// to the nearest and second-nearest foreground component (d2 = d1 when fewer
// than two components exist; the boundary term vanishes with no components).
// *degenerate reports an all-foreground or all-background label.
inline std::vector<double> compute_weight_map(const Image2D& label, double w0 = 10.0,
                                              double sigma_w = 5.0,
                                              bool* degenerate = nullptr) {
    if (sigma_w <= 0.0)
        throw Error(Error::Kind::Param, "weight-map sigma must be positive");
    if (w0 < 0.0)
        throw Error(Error::Kind::Param, "weight-map boundary gain must be non-negative");
    const int w = label.width, h = label.height;
    const size_t n = label.size();
    size_t n_fg = 0;
    for (double v : label.values) {
        if (v != 0.0 && v != 1.0)
            throw Error(Error::Kind::Range, "weight map requires a binary label");
        if (v == 1.0) ++n_fg;
    }
    size_t n_bg = n - n_fg;
    if (degenerate) *degenerate = (n_fg == 0 || n_bg == 0);
    double wc_fg = static_cast<double>(n) / (2.0 * static_cast<double>(std::max<size_t>(1, n_fg)));
    double wc_bg = static_cast<double>(n) / (2.0 * static_cast<double>(std::max<size_t>(1, n_bg)));

    std::vector<double> omega(n);
    for (size_t i = 0; i < n; ++i)
        omega[i] = label.values[i] == 1.0 ? wc_fg : wc_bg;

    std::vector<int> comp;
    int ncomp = detail::connected_components(label, comp);
    if (ncomp == 0 || w0 == 0.0) return omega;

    const double INF = 1e18;
    std::vector<double> best1(n, INF), best2(n, INF);
    std::vector<char> mask(n);
    for (int c = 0; c < ncomp; ++c) {
        for (size_t i = 0; i < n; ++i) mask[i] = comp[i] == c ? 1 : 0;
        std::vector<double> d2 = detail::edt_squared(mask, w, h);
        for (size_t i = 0; i < n; ++i) {
            double d = d2[i];
            if (d < best1[i]) {
                best2[i] = best1[i];
                best1[i] = d;
            } else if (d < best2[i]) {
                best2[i] = d;
            }
        }
    }
    const double denom = 2.0 * sigma_w * sigma_w;
    for (size_t i = 0; i < n; ++i) {
        double d1 = std::sqrt(best1[i]);
        double d2 = ncomp >= 2 ? std::sqrt(best2[i]) : d1;
        double s = d1 + d2;
        omega[i] += w0 * std::exp(-(s * s) / denom);
    }
    return omega;
}

struct DatasetPair {
    Image2D original;            // normalized to [0, 1]
    Image2D label;               // binary
    std::vector<double> weight;  // per-pixel loss weights
};

struct DatasetManifest {
    int tile_size = 0;
    std::string split = "train";
    struct Entry {
        std::string original, label, weight;  // paths relative to dir
    };
    std::vector<Entry> pairs;
    std::filesystem::path dir;  // directory holding manifest + files
};

inline void save_manifest(const DatasetManifest& m, const std::string& filename = "manifest.json") {
    nlohmann::json j;
    j["tile_size"] = m.tile_size;
    j["split"] = m.split;
    j["count"] = m.pairs.size();
    j["pairs"] = nlohmann::json::array();
    for (const auto& p : m.pairs)
        j["pairs"].push_back({{"original", p.original}, {"label", p.label}, {"weight", p.weight}});
    std::filesystem::create_directories(m.dir);
    std::ofstream out(m.dir / filename);
    if (!out) throw Error(Error::Kind::Io, "cannot write dataset manifest");
    out << j.dump(2) << "\n";
}

inline DatasetManifest load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(Error::Kind::Io, "cannot open dataset manifest: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw Error(Error::Kind::Format, "malformed dataset manifest: " + std::string(e.what()));
    }
    DatasetManifest m;
    try {
        m.tile_size = j.at("tile_size").get<int>();
        m.split = j.value("split", "train");
        for (const auto& p : j.at("pairs"))
            m.pairs.push_back({p.at("original").get<std::string>(),
                               p.at("label").get<std::string>(),
                               p.at("weight").get<std::string>()});
    } catch (const nlohmann::json::exception& e) {
        throw Error(Error::Kind::Format, "dataset manifest missing fields: " + std::string(e.what()));
    }
    m.dir = std::filesystem::path(path).parent_path();
    return m;
}

// Loads one manifest entry and enforces the pair invariants.
inline DatasetPair load_pair(const DatasetManifest& m, size_t index) {
    if (index >= m.pairs.size())
        throw Error(Error::Kind::Index, "dataset pair index out of range");
    const auto& e = m.pairs[index];
    DatasetPair pair;
    pair.original = load_image((m.dir / e.original).string());
    pair.label = load_image((m.dir / e.label).string());
    Image2D wimg = load_image((m.dir / e.weight).string());
    if (pair.original.width != pair.label.width || pair.original.height != pair.label.height ||
        pair.original.width != wimg.width || pair.original.height != wimg.height)
        throw Error(Error::Kind::Pairing, "dataset pair images have mismatched dimensions");
    for (double v : pair.label.values)
        if (v != 0.0 && v != 1.0)
            throw Error(Error::Kind::Pairing, "dataset label is not binary");
    for (double v : wimg.values)
        if (!(v > 0.0) || !std::isfinite(v))
            throw Error(Error::Kind::Pairing, "dataset weights must be positive and finite");
    pair.weight = std::move(wimg.values);
    return pair;
}

// Tiles original/label pairs, computes per-tile weight maps, normalizes the
// originals to [0, 1] (per source image, before tiling), and writes
// everything plus a manifest under out_dir.
inline DatasetManifest build_dataset(const std::vector<Image2D>& originals,
                                     const std::vector<Image2D>& labels, int tile_size,
                                     const std::string& out_dir,
                                     const std::string& split = "train", double w0 = 10.0,
                                     double sigma_w = 5.0) {
    if (originals.size() != labels.size())
        throw Error(Error::Kind::Pairing, "originals and labels differ in count");
    DatasetManifest m;
    m.tile_size = tile_size;
    m.split = split;
    m.dir = out_dir;
    std::filesystem::create_directories(m.dir);
    size_t serial = 0;
    char name[64];
    for (size_t i = 0; i < originals.size(); ++i) {
        const Image2D& orig = originals[i];
        const Image2D& lab = labels[i];
        if (orig.width != lab.width || orig.height != lab.height)
            throw Error(Error::Kind::Pairing, "original/label dimensions differ at pair " +
                                                  std::to_string(i));
        for (double v : lab.values)
            if (v != 0.0 && v != 1.0)
                throw Error(Error::Kind::Pairing,
                            "label is not binary at pair " + std::to_string(i));
        Image2D norm = normalize_unit(orig);
        std::vector<Image2D> otiles = split_tiles(norm, tile_size);
        std::vector<Image2D> ltiles = split_tiles(lab, tile_size);
        for (size_t t = 0; t < otiles.size(); ++t, ++serial) {
            std::vector<double> weights = compute_weight_map(ltiles[t], w0, sigma_w);
            Image2D wimg(tile_size, tile_size, ltiles[t].pixel_pitch_nm);
            wimg.values = std::move(weights);
            std::snprintf(name, sizeof(name), "orig_%05zu.f32", serial);
            std::string orig_name = name;
            std::snprintf(name, sizeof(name), "label_%05zu.f32", serial);
            std::string label_name = name;
            std::snprintf(name, sizeof(name), "weight_%05zu.f32", serial);
            std::string weight_name = name;
            save_image(otiles[t], (m.dir / orig_name).string(), SourceDepth::F32);
            save_image(ltiles[t], (m.dir / label_name).string(), SourceDepth::F32);
            save_image(wimg, (m.dir / weight_name).string(), SourceDepth::F32);
            m.pairs.push_back({orig_name, label_name, weight_name});
        }
    }
    save_manifest(m);
    return m;
}

}  // namespace fsr
