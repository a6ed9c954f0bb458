#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fsr/error.hpp"
#include "fsr/image.hpp"
#include "fsr/network.hpp"
#include "fsr/optim.hpp"
#include "fsr/preprocess.hpp"
#include "fsr/rng.hpp"

namespace fsr {

// Shortest round-trip-exact decimal text for a double (deterministic logs).
inline std::string format_double(double v) {
    char buf[40];
    for (int prec = 1; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
        if (std::strtod(buf, nullptr) == v) break;
    }
    return buf;
}

// ---------------------------------------------------------------------------
// Checkpoints: "<name>.json" manifest (config, parameter names/shapes and
// element offsets, buffer layout, optimizer metadata, epoch) plus
// "<name>.bin" holding all values concatenated as little-endian 32-bit
// floats in manifest order: parameters, buffers, then optimizer first and
// second moments (same layout as the parameters).
// ---------------------------------------------------------------------------

inline void save_checkpoint(const std::string& name_prefix, const AnetModel& model,
                            const AdamState* adam, int epoch) {
    nlohmann::json j;
    j["config"] = {{"depth", model.config.depth},
                   {"base_channels", model.config.base_channels},
                   {"in_channels", model.config.in_channels},
                   {"classes", model.config.classes},
                   {"bn_epsilon", model.config.bn_epsilon},
                   {"bn_momentum", model.config.bn_momentum}};
    j["epoch"] = epoch;
    std::vector<float> blob;
    size_t offset = 0;
    j["params"] = nlohmann::json::array();
    for (const Param& p : model.params) {
        j["params"].push_back({{"name", p.name}, {"shape", p.shape}, {"offset", offset}});
        for (double v : p.value) blob.push_back(static_cast<float>(v));
        offset += p.count();
    }
    j["buffers"] = nlohmann::json::array();
    for (const Buffer& b : model.buffers) {
        j["buffers"].push_back(
            {{"name", b.name}, {"shape", {b.value.size()}}, {"offset", offset}});
        for (double v : b.value) blob.push_back(static_cast<float>(v));
        offset += b.value.size();
    }
    if (adam) {
        size_t m_offset = offset;
        for (const auto& m : adam->m) {
            for (double v : m) blob.push_back(static_cast<float>(v));
            offset += m.size();
        }
        size_t v_offset = offset;
        for (const auto& vv : adam->v) {
            for (double v : vv) blob.push_back(static_cast<float>(v));
            offset += vv.size();
        }
        j["adam"] = {{"lr", adam->lr},       {"beta1", adam->beta1}, {"beta2", adam->beta2},
                     {"epsilon", adam->epsilon}, {"t", adam->t},
                     {"m_offset", m_offset}, {"v_offset", v_offset}};
    }
    j["total_elements"] = offset;

    std::filesystem::path jpath(name_prefix + ".json");
    if (jpath.has_parent_path()) std::filesystem::create_directories(jpath.parent_path());
    std::ofstream jo(jpath);
    if (!jo) throw Error(Error::Kind::Io, "cannot write checkpoint manifest: " + jpath.string());
    jo << j.dump(2) << "\n";
    jo.close();
    std::ofstream bo(name_prefix + ".bin", std::ios::binary);
    if (!bo) throw Error(Error::Kind::Io, "cannot write checkpoint data: " + name_prefix + ".bin");
    bo.write(reinterpret_cast<const char*>(blob.data()),
             static_cast<std::streamsize>(blob.size() * sizeof(float)));
    if (!bo) throw Error(Error::Kind::Io, "short write on checkpoint data");
}

struct LoadedCheckpoint {
    AnetModel model;
    AdamState adam;      // zeroed state when the checkpoint carries none
    bool has_adam = false;
    int epoch = 0;
};

inline LoadedCheckpoint load_checkpoint(const std::string& name_prefix) {
    std::ifstream ji(name_prefix + ".json");
    if (!ji)
        throw Error(Error::Kind::Io, "cannot open checkpoint manifest: " + name_prefix + ".json");
    nlohmann::json j;
    try {
        ji >> j;
    } catch (const nlohmann::json::exception& e) {
        throw Error(Error::Kind::Format, "malformed checkpoint manifest: " + std::string(e.what()));
    }
    std::ifstream bi(name_prefix + ".bin", std::ios::binary);
    if (!bi) throw Error(Error::Kind::Io, "cannot open checkpoint data: " + name_prefix + ".bin");
    bi.seekg(0, std::ios::end);
    size_t bytes = static_cast<size_t>(bi.tellg());
    bi.seekg(0, std::ios::beg);
    if (bytes % sizeof(float) != 0)
        throw Error(Error::Kind::Format, "checkpoint data size is not a whole number of floats");
    std::vector<float> blob(bytes / sizeof(float), 0.0f);
    bi.read(reinterpret_cast<char*>(blob.data()), static_cast<std::streamsize>(bytes));
    if (!bi) throw Error(Error::Kind::Io, "short read on checkpoint data");

    LoadedCheckpoint out;
    try {
        AnetConfig cfg;
        cfg.depth = j.at("config").at("depth").get<int>();
        cfg.base_channels = j.at("config").at("base_channels").get<int>();
        cfg.in_channels = j.at("config").at("in_channels").get<int>();
        cfg.classes = j.at("config").at("classes").get<int>();
        cfg.bn_epsilon = j.at("config").at("bn_epsilon").get<double>();
        cfg.bn_momentum = j.at("config").at("bn_momentum").get<double>();
        out.model = make_anet(cfg, uint64_t{0});
        out.epoch = j.value("epoch", 0);
        const auto& jp = j.at("params");
        if (jp.size() != out.model.params.size())
            throw Error(Error::Kind::Format, "checkpoint parameter count mismatch");
        for (size_t i = 0; i < out.model.params.size(); ++i) {
            Param& p = out.model.params[i];
            if (jp[i].at("name").get<std::string>() != p.name)
                throw Error(Error::Kind::Format,
                            "checkpoint parameter order mismatch at " + p.name);
            std::vector<int> shape = jp[i].at("shape").get<std::vector<int>>();
            if (shape != p.shape)
                throw Error(Error::Kind::Format, "checkpoint shape mismatch for " + p.name);
            size_t off = jp[i].at("offset").get<size_t>();
            if (off + p.count() > blob.size())
                throw Error(Error::Kind::Format, "checkpoint data truncated at " + p.name);
            for (size_t k = 0; k < p.count(); ++k) p.value[k] = blob[off + k];
        }
        const auto& jb = j.at("buffers");
        if (jb.size() != out.model.buffers.size())
            throw Error(Error::Kind::Format, "checkpoint buffer count mismatch");
        for (size_t i = 0; i < out.model.buffers.size(); ++i) {
            Buffer& b = out.model.buffers[i];
            if (jb[i].at("name").get<std::string>() != b.name)
                throw Error(Error::Kind::Format, "checkpoint buffer order mismatch at " + b.name);
            size_t off = jb[i].at("offset").get<size_t>();
            if (off + b.value.size() > blob.size())
                throw Error(Error::Kind::Format, "checkpoint data truncated at " + b.name);
            for (size_t k = 0; k < b.value.size(); ++k) b.value[k] = blob[off + k];
        }
        if (j.contains("adam")) {
            const auto& ja = j.at("adam");
            out.adam = make_adam(out.model, ja.at("lr").get<double>());
            out.adam.beta1 = ja.at("beta1").get<double>();
            out.adam.beta2 = ja.at("beta2").get<double>();
            out.adam.epsilon = ja.at("epsilon").get<double>();
            out.adam.t = ja.at("t").get<int64_t>();
            size_t mo = ja.at("m_offset").get<size_t>();
            size_t vo = ja.at("v_offset").get<size_t>();
            size_t k = 0;
            for (auto& m : out.adam.m)
                for (double& v : m) v = blob.at(mo + k), ++k;
            k = 0;
            for (auto& vv : out.adam.v)
                for (double& v : vv) v = blob.at(vo + k), ++k;
            out.has_adam = true;
        } else {
            out.adam = make_adam(out.model, 1e-4);
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(Error::Kind::Format,
                    "checkpoint manifest missing fields: " + std::string(e.what()));
    } catch (const std::out_of_range& e) {
        throw Error(Error::Kind::Format, "checkpoint data truncated: " + std::string(e.what()));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainOptions {
    int epochs = 200;
    double lr = 1e-4;
    uint64_t seed = 0;
    int checkpoint_every = 0;        // 0 = no periodic checkpoints
    std::string checkpoint_prefix;   // "<prefix>_epoch####"; required if periodic
};

struct TrainResult {
    AnetModel model;
    AdamState adam;
    std::vector<std::string> log_lines;  // CSV rows: epoch,step,loss,clamped_pixels
    double first_epoch_mean_loss = 0.0;
    double final_epoch_mean_loss = 0.0;
};

inline void sample_to_tensors(const DatasetPair& pair, Tensor4& x, std::vector<int>& truth,
                              std::vector<double>& weight) {
    x = Tensor4(1, 1, pair.original.height, pair.original.width);
    x.v.assign(pair.original.values.begin(), pair.original.values.end());
    truth.resize(pair.label.values.size());
    for (size_t i = 0; i < truth.size(); ++i) truth[i] = pair.label.values[i] > 0.5 ? 1 : 0;
    weight = pair.weight;
}

inline std::string training_log_header() { return "epoch,step,loss,clamped_pixels"; }

// Batch-size-1 training over the manifest with per-epoch shuffling.  One RNG
// stream covers initialization and all shuffles, so a (manifest, config,
// seed) triple fixes the whole run.
inline TrainResult train(const DatasetManifest& manifest, const AnetConfig& cfg,
                         const TrainOptions& opts) {
    if (manifest.pairs.empty())
        throw Error(Error::Kind::Param, "training manifest lists no sample pairs");
    if (opts.epochs < 0) throw Error(Error::Kind::Param, "epoch count must be >= 0");
    std::vector<DatasetPair> pairs;
    pairs.reserve(manifest.pairs.size());
    for (size_t i = 0; i < manifest.pairs.size(); ++i) pairs.push_back(load_pair(manifest, i));

    Rng rng(opts.seed);
    TrainResult res;
    res.model = make_anet(cfg, rng);
    res.adam = make_adam(res.model, opts.lr);
    res.log_lines.push_back(training_log_header());

    AnetCache cache;
    Tensor4 x;
    std::vector<int> truth;
    std::vector<double> weight;
    for (int epoch = 1; epoch <= opts.epochs; ++epoch) {
        std::vector<size_t> order = rng.shuffle_indices(pairs.size());
        double epoch_loss = 0.0;
        for (size_t step = 0; step < order.size(); ++step) {
            const DatasetPair& pair = pairs[order[step]];
            sample_to_tensors(pair, x, truth, weight);
            LossResult loss = model_gradients(res.model, x, truth, weight, cache);
            if (!std::isfinite(loss.value)) {
                if (!opts.checkpoint_prefix.empty())
                    save_checkpoint(opts.checkpoint_prefix + "_diagnostic", res.model, &res.adam,
                                    epoch);
                throw Error(Error::Kind::Range,
                            "non-finite loss at epoch " + std::to_string(epoch) + " step " +
                                std::to_string(step + 1) +
                                (opts.checkpoint_prefix.empty()
                                     ? ""
                                     : "; diagnostic checkpoint written to " +
                                           opts.checkpoint_prefix + "_diagnostic"));
            }
            adam_step(res.adam, res.model);
            epoch_loss += loss.value;
            res.log_lines.push_back(std::to_string(epoch) + "," + std::to_string(step + 1) + "," +
                                    format_double(loss.value) + "," +
                                    std::to_string(loss.clamped_pixels));
        }
        double mean = epoch_loss / static_cast<double>(order.size());
        if (epoch == 1) res.first_epoch_mean_loss = mean;
        res.final_epoch_mean_loss = mean;
        if (opts.checkpoint_every > 0 && !opts.checkpoint_prefix.empty() &&
            epoch % opts.checkpoint_every == 0) {
            char tag[32];
            std::snprintf(tag, sizeof(tag), "_epoch%04d", epoch);
            save_checkpoint(opts.checkpoint_prefix + tag, res.model, &res.adam, epoch);
        }
    }
    return res;
}

inline void save_training_log(const std::vector<std::string>& lines, const std::string& path) {
    std::filesystem::path p(path);
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    std::ofstream out(path);
    if (!out) throw Error(Error::Kind::Io, "cannot write training log: " + path);
    for (const std::string& l : lines) out << l << "\n";
}

// ---------------------------------------------------------------------------
// Prediction
// ---------------------------------------------------------------------------

// Eval-mode forward + softmax on one tile; returns the foreground-probability
// channel as an image (values in [0, 1]).
inline Image2D predict_tile(AnetModel& model, const Image2D& tile) {
    Tensor4 x(1, 1, tile.height, tile.width);
    x.v.assign(tile.values.begin(), tile.values.end());
    Tensor4 scores = anet_forward(model, x, NetMode::Eval);
    Tensor4 probs = softmax_pixelwise(scores);
    Image2D out(tile.width, tile.height, tile.pixel_pitch_nm, SourceDepth::F32);
    const double* fg = probs.plane(0, 1);
    for (size_t i = 0; i < out.values.size(); ++i) out.values[i] = fg[i];
    return out;
}

// Whole-image prediction: normalize to [0, 1], split into tiles (tile_size 0
// runs the image as a single tile), predict each, reassemble.
inline Image2D predict_image(AnetModel& model, const Image2D& img, int tile_size = 0) {
    Image2D norm = normalize_unit(img);
    if (tile_size == 0) return predict_tile(model, norm);
    TileGrid grid;
    std::vector<Image2D> tiles = split_tiles(norm, tile_size, &grid);
    std::vector<Image2D> preds;
    preds.reserve(tiles.size());
    for (const Image2D& t : tiles) preds.push_back(predict_tile(model, t));
    return assemble_tiles(preds, grid, img.width, img.height);
}

}  // namespace fsr
