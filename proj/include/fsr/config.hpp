#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fsr/error.hpp"

namespace fsr {

// One JSON document configures every subcommand; command-line flags override
// individual keys by dotted path (e.g. "train.epochs=50").
struct RunConfig {
    uint64_t seed = 7;
    bool determinism = true;
    int workers = 0;  // 0 = hardware concurrency

    struct Phantom {
        int width = 64, height = 64;
        int count = 1;
        int n_filaments = 1;
        double thickness_px = 0.5;
        double intensity = 1.0;
        double curvature = 0.3;
        double pixel_pitch_nm = 250.0;
    } phantom;

    struct Degrade {
        double psf_sigma_px = 2.0;
        int psf_radius_px = 6;
        std::string noise = "gaussian";  // none | gaussian | poisson
        double noise_param = 0.05;
        bool noise_relative = true;  // gaussian std = noise_param * max(blurred)
    } degrade;

    struct Dwdc {
        std::string wavelet = "haar";  // haar | db4
        int levels = 2;
        std::string shrink = "soft";  // soft | hard
        double threshold = -1.0;      // < 0 = universal threshold
        double lr_sigma_px = 4.0;
        int lr_radius_px = 12;
        int lr_iters = 250;
        std::string binarize = "otsu";  // otsu | fixed
        double binarize_threshold = 0.5;
    } dwdc;

    struct Preprocess {
        double denoise_k = 2.0;
        double upsample_sigma_px = 0.35;  // in input-pixel units
    } preprocess;

    struct Dataset {
        int tile_size = 64;
        double w0 = 10.0;
        double sigma_w = 5.0;
    } dataset;

    struct Train {
        int depth = 3;
        int base_channels = 8;
        int epochs = 200;
        double lr = 1e-4;
        int checkpoint_every = 0;
    } train;

    struct Predict {
        double threshold = 0.5;
        int tile = 0;  // 0 = whole image as one tile
    } predict;

    struct Eval {
        double max_val = 255.0;
    } eval;

    struct Stack {
        double z_step_nm = 500.0;
    } stack;

    struct Reproduce {
        int count = 80;        // total phantoms
        int train_count = 64;  // first train_count go to training
        int coarse_size = 32;  // phantom size before 2x upsampling
        int epochs = 160;      // training epochs for the end-to-end run
        double profile_win = 14;  // half-window (px) for resolution profiles
    } reproduce;
};

namespace detail {

template <typename T>
inline void read_key(const nlohmann::json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace detail

inline RunConfig config_from_json(const nlohmann::json& j) {
    RunConfig c;
    try {
        detail::read_key(j, "seed", c.seed);
        detail::read_key(j, "determinism", c.determinism);
        detail::read_key(j, "workers", c.workers);
        if (j.contains("phantom")) {
            const auto& b = j.at("phantom");
            detail::read_key(b, "width", c.phantom.width);
            detail::read_key(b, "height", c.phantom.height);
            detail::read_key(b, "count", c.phantom.count);
            detail::read_key(b, "n_filaments", c.phantom.n_filaments);
            detail::read_key(b, "thickness_px", c.phantom.thickness_px);
            detail::read_key(b, "intensity", c.phantom.intensity);
            detail::read_key(b, "curvature", c.phantom.curvature);
            detail::read_key(b, "pixel_pitch_nm", c.phantom.pixel_pitch_nm);
        }
        if (j.contains("degrade")) {
            const auto& b = j.at("degrade");
            detail::read_key(b, "psf_sigma_px", c.degrade.psf_sigma_px);
            detail::read_key(b, "psf_radius_px", c.degrade.psf_radius_px);
            detail::read_key(b, "noise", c.degrade.noise);
            detail::read_key(b, "noise_param", c.degrade.noise_param);
            detail::read_key(b, "noise_relative", c.degrade.noise_relative);
        }
        if (j.contains("dwdc")) {
            const auto& b = j.at("dwdc");
            detail::read_key(b, "wavelet", c.dwdc.wavelet);
            detail::read_key(b, "levels", c.dwdc.levels);
            detail::read_key(b, "shrink", c.dwdc.shrink);
            detail::read_key(b, "threshold", c.dwdc.threshold);
            detail::read_key(b, "lr_sigma_px", c.dwdc.lr_sigma_px);
            detail::read_key(b, "lr_radius_px", c.dwdc.lr_radius_px);
            detail::read_key(b, "lr_iters", c.dwdc.lr_iters);
            detail::read_key(b, "binarize", c.dwdc.binarize);
            detail::read_key(b, "binarize_threshold", c.dwdc.binarize_threshold);
        }
        if (j.contains("preprocess")) {
            const auto& b = j.at("preprocess");
            detail::read_key(b, "denoise_k", c.preprocess.denoise_k);
            detail::read_key(b, "upsample_sigma_px", c.preprocess.upsample_sigma_px);
        }
        if (j.contains("dataset")) {
            const auto& b = j.at("dataset");
            detail::read_key(b, "tile_size", c.dataset.tile_size);
            detail::read_key(b, "w0", c.dataset.w0);
            detail::read_key(b, "sigma_w", c.dataset.sigma_w);
        }
        if (j.contains("train")) {
            const auto& b = j.at("train");
            detail::read_key(b, "depth", c.train.depth);
            detail::read_key(b, "base_channels", c.train.base_channels);
            detail::read_key(b, "epochs", c.train.epochs);
            detail::read_key(b, "lr", c.train.lr);
            detail::read_key(b, "checkpoint_every", c.train.checkpoint_every);
        }
        if (j.contains("predict")) {
            const auto& b = j.at("predict");
            detail::read_key(b, "threshold", c.predict.threshold);
            detail::read_key(b, "tile", c.predict.tile);
        }
        if (j.contains("eval")) {
            const auto& b = j.at("eval");
            detail::read_key(b, "max_val", c.eval.max_val);
        }
        if (j.contains("stack")) {
            const auto& b = j.at("stack");
            detail::read_key(b, "z_step_nm", c.stack.z_step_nm);
        }
        if (j.contains("reproduce")) {
            const auto& b = j.at("reproduce");
            detail::read_key(b, "count", c.reproduce.count);
            detail::read_key(b, "train_count", c.reproduce.train_count);
            detail::read_key(b, "coarse_size", c.reproduce.coarse_size);
            detail::read_key(b, "epochs", c.reproduce.epochs);
            detail::read_key(b, "profile_win", c.reproduce.profile_win);
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(Error::Kind::Config, "configuration type error: " + std::string(e.what()));
    }
    return c;
}

inline nlohmann::json load_config_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(Error::Kind::Io, "cannot open configuration file: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw Error(Error::Kind::Format, "malformed configuration JSON: " + std::string(e.what()));
    }
    return j;
}

// Applies "dotted.path=value" to a JSON document; the value text is parsed
// as JSON when possible (numbers, booleans), otherwise taken as a string.
inline void apply_override(nlohmann::json& j, const std::string& assignment) {
    size_t eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0)
        throw Error(Error::Kind::Config,
                    "override must look like key.path=value, got: " + assignment);
    std::string path = assignment.substr(0, eq);
    std::string text = assignment.substr(eq + 1);
    nlohmann::json value;
    try {
        value = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception&) {
        value = text;  // plain string
    }
    nlohmann::json* cur = &j;
    size_t start = 0;
    while (true) {
        size_t dot = path.find('.', start);
        std::string key = path.substr(start, dot == std::string::npos ? dot : dot - start);
        if (key.empty())
            throw Error(Error::Kind::Config, "override path has an empty segment: " + path);
        if (dot == std::string::npos) {
            (*cur)[key] = value;
            break;
        }
        cur = &(*cur)[key];
        start = dot + 1;
    }
}

// Collects every precondition violation; messages name the offending keys.
inline std::vector<std::string> validate_config(const RunConfig& c) {
    std::vector<std::string> v;
    auto bad = [&v](const std::string& msg) { v.push_back(msg); };
    if (c.workers < 0) bad("workers must be >= 0");
    if (c.phantom.width < 8 || c.phantom.height < 8)
        bad("phantom.width/phantom.height must be >= 8");
    if (c.phantom.count < 1) bad("phantom.count must be >= 1");
    if (c.phantom.n_filaments < 1) bad("phantom.n_filaments must be >= 1");
    if (!(c.phantom.thickness_px >= 0.5)) bad("phantom.thickness_px must be >= 0.5");
    if (!(c.phantom.intensity > 0.0)) bad("phantom.intensity must be > 0");
    if (c.phantom.curvature < 0.0) bad("phantom.curvature must be >= 0");
    if (!(c.phantom.pixel_pitch_nm > 0.0)) bad("phantom.pixel_pitch_nm must be > 0");
    if (!(c.degrade.psf_sigma_px > 0.0)) bad("degrade.psf_sigma_px must be > 0");
    if (c.degrade.psf_radius_px < 1) bad("degrade.psf_radius_px must be >= 1");
    if (c.degrade.noise != "none" && c.degrade.noise != "gaussian" && c.degrade.noise != "poisson")
        bad("degrade.noise must be one of none|gaussian|poisson");
    if (c.degrade.noise_param < 0.0) bad("degrade.noise_param must be >= 0");
    if (c.dwdc.wavelet != "haar" && c.dwdc.wavelet != "db4")
        bad("dwdc.wavelet must be haar or db4");
    if (c.dwdc.levels < 1) bad("dwdc.levels must be >= 1");
    if (c.dwdc.shrink != "soft" && c.dwdc.shrink != "hard")
        bad("dwdc.shrink must be soft or hard");
    if (!(c.dwdc.lr_sigma_px > 0.0)) bad("dwdc.lr_sigma_px must be > 0");
    if (c.dwdc.lr_radius_px < 1) bad("dwdc.lr_radius_px must be >= 1");
    if (c.dwdc.lr_iters < 0) bad("dwdc.lr_iters must be >= 0");
    if (c.dwdc.binarize != "otsu" && c.dwdc.binarize != "fixed")
        bad("dwdc.binarize must be otsu or fixed");
    if (!(c.preprocess.denoise_k >= 0.0)) bad("preprocess.denoise_k must be >= 0");
    if (!(c.preprocess.upsample_sigma_px > 0.0)) bad("preprocess.upsample_sigma_px must be > 0");
    if (c.dataset.tile_size < 8) bad("dataset.tile_size must be >= 8");
    if (!(c.dataset.w0 >= 0.0)) bad("dataset.w0 must be >= 0");
    if (!(c.dataset.sigma_w > 0.0)) bad("dataset.sigma_w must be > 0");
    if (c.train.depth < 1) bad("train.depth must be >= 1");
    if (c.train.base_channels < 1) bad("train.base_channels must be >= 1");
    if (c.train.epochs < 0) bad("train.epochs must be >= 0");
    if (!(c.train.lr > 0.0)) bad("train.lr must be > 0");
    if (c.train.checkpoint_every < 0) bad("train.checkpoint_every must be >= 0");
    if (c.dataset.tile_size >= 8 && c.train.depth >= 1) {
        int div = 1 << c.train.depth;
        if (c.dataset.tile_size % div != 0)
            bad("dataset.tile_size must be divisible by 2^train.depth (" +
                std::to_string(c.dataset.tile_size) + " vs 2^" + std::to_string(c.train.depth) +
                " = " + std::to_string(div) + ")");
    }
    if (!(c.predict.threshold >= 0.0 && c.predict.threshold <= 1.0))
        bad("predict.threshold must lie in [0, 1]");
    if (c.predict.tile < 0) bad("predict.tile must be >= 0");
    if (!(c.eval.max_val > 0.0)) bad("eval.max_val must be > 0");
    if (!(c.stack.z_step_nm > 0.0)) bad("stack.z_step_nm must be > 0");
    if (c.reproduce.count < 2) bad("reproduce.count must be >= 2");
    if (c.reproduce.train_count < 1 || c.reproduce.train_count >= c.reproduce.count)
        bad("reproduce.train_count must be >= 1 and < reproduce.count");
    if (c.reproduce.coarse_size < 16) bad("reproduce.coarse_size must be >= 16");
    if (c.reproduce.epochs < 1) bad("reproduce.epochs must be >= 1");
    if (!(c.reproduce.profile_win >= 4)) bad("reproduce.profile_win must be >= 4");
    return v;
}

}  // namespace fsr
