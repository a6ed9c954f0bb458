#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "fsr/preprocess.hpp"
#include "fsr/train.hpp"

namespace {

std::filesystem::path temp_dir(const char* leaf) {
    auto d = std::filesystem::temp_directory_path() / leaf;
    std::filesystem::remove_all(d);
    std::filesystem::create_directories(d);
    return d;
}

fsr::AnetConfig tiny_config() {
    fsr::AnetConfig cfg;
    cfg.depth = 2;
    cfg.base_channels = 4;
    cfg.in_channels = 1;
    cfg.classes = 2;
    return cfg;
}

// Four 16x16 images, each a bright vertical ridge at a different column, with
// matching binary column masks.  Trivially separable by brightness, so a small
// model must be able to drive the training loss close to zero.
fsr::DatasetManifest toy_dataset(const std::filesystem::path& dir) {
    std::vector<fsr::Image2D> originals, labels;
    for (int i = 0; i < 4; ++i) {
        fsr::Image2D orig(16, 16, 100.0, fsr::SourceDepth::F32);
        fsr::Image2D lab(16, 16, 100.0, fsr::SourceDepth::F32);
        int cx = 3 + 3 * i;
        for (int y = 0; y < 16; ++y)
            for (int x = 0; x < 16; ++x) {
                double d = x - cx;
                orig.at(y, x) = 100.0 * std::exp(-d * d / (2.0 * 1.5 * 1.5)) + 0.5;
                lab.at(y, x) = std::abs(d) <= 1 ? 1.0 : 0.0;
            }
        originals.push_back(orig);
        labels.push_back(lab);
    }
    return fsr::build_dataset(originals, labels, 16, dir.string());
}

bool params_bitwise_equal(const fsr::AnetModel& a, const fsr::AnetModel& b) {
    if (a.params.size() != b.params.size()) return false;
    for (size_t i = 0; i < a.params.size(); ++i)
        if (a.params[i].value != b.params[i].value) return false;
    return true;
}

}  // namespace

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

TEST(AdamOptimizer, FirstStepMatchesClosedForm) {
    fsr::AnetModel model = fsr::make_anet(tiny_config(), uint64_t{11});
    fsr::AdamState adam = fsr::make_adam(model, 1e-3);
    // Synthetic gradients with varied magnitudes and signs, including zeros.
    std::vector<std::vector<double>> grads(model.params.size());
    std::vector<std::vector<double>> before(model.params.size());
    for (size_t pi = 0; pi < model.params.size(); ++pi) {
        before[pi] = model.params[pi].value;
        grads[pi].resize(model.params[pi].count());
        for (size_t k = 0; k < grads[pi].size(); ++k)
            grads[pi][k] = 0.01 * (static_cast<double>((pi + k) % 7) - 3.0);
        model.params[pi].grad = grads[pi];
    }
    fsr::adam_step(adam, model);
    EXPECT_EQ(adam.t, 1);
    // After one step: m-hat = g, v-hat = g*g, so the update is
    // -lr * g / (|g| + eps); a zero gradient leaves the value bitwise intact.
    for (size_t pi = 0; pi < model.params.size(); ++pi)
        for (size_t k = 0; k < grads[pi].size(); ++k) {
            double g = grads[pi][k];
            double expected =
                before[pi][k] - 1e-3 * g / (std::sqrt(g * g) + adam.epsilon);
            if (g == 0.0)
                EXPECT_EQ(model.params[pi].value[k], before[pi][k]);
            else
                EXPECT_NEAR(model.params[pi].value[k], expected,
                            1e-12 * std::max(1.0, std::fabs(expected)));
        }
}

TEST(AdamOptimizer, TwoStepsMatchManualRecurrence) {
    fsr::AnetModel model = fsr::make_anet(tiny_config(), uint64_t{3});
    fsr::AdamState adam = fsr::make_adam(model, 2e-3);
    // Manual replica of the update for one tracked parameter tensor.
    const size_t pi = 2;
    std::vector<double> value = model.params[pi].value;
    std::vector<double> m(value.size(), 0.0), v(value.size(), 0.0);
    for (int step = 1; step <= 2; ++step) {
        for (size_t qi = 0; qi < model.params.size(); ++qi)
            for (size_t k = 0; k < model.params[qi].count(); ++k)
                model.params[qi].grad[k] =
                    0.05 * std::sin(static_cast<double>(qi + 3 * k + step));
        std::vector<double> g = model.params[pi].grad;
        fsr::adam_step(adam, model);
        double bc1 = 1.0 - std::pow(adam.beta1, step);
        double bc2 = 1.0 - std::pow(adam.beta2, step);
        for (size_t k = 0; k < value.size(); ++k) {
            m[k] = adam.beta1 * m[k] + (1.0 - adam.beta1) * g[k];
            v[k] = adam.beta2 * v[k] + (1.0 - adam.beta2) * g[k] * g[k];
            value[k] -= adam.lr * (m[k] / bc1) / (std::sqrt(v[k] / bc2) + adam.epsilon);
        }
    }
    EXPECT_EQ(adam.t, 2);
    for (size_t k = 0; k < value.size(); ++k) {
        EXPECT_DOUBLE_EQ(model.params[pi].value[k], value[k]);
        EXPECT_DOUBLE_EQ(adam.m[pi][k], m[k]);
        EXPECT_DOUBLE_EQ(adam.v[pi][k], v[k]);
    }
}

TEST(AdamOptimizer, Validation) {
    fsr::AnetModel model = fsr::make_anet(tiny_config(), uint64_t{0});
    EXPECT_THROW(fsr::make_adam(model, 0.0), fsr::Error);
    EXPECT_THROW(fsr::make_adam(model, -1e-4), fsr::Error);
    EXPECT_THROW(fsr::make_adam(model, std::numeric_limits<double>::infinity()), fsr::Error);
    try {
        fsr::make_adam(model, 0.0);
        FAIL() << "expected error";
    } catch (const fsr::Error& e) {
        EXPECT_EQ(e.kind(), fsr::Error::Kind::Param);
    }
    // Optimizer state built for a different layout must be rejected.
    fsr::AnetConfig other = tiny_config();
    other.depth = 1;
    fsr::AnetModel small = fsr::make_anet(other, uint64_t{0});
    fsr::AdamState mismatched = fsr::make_adam(small, 1e-4);
    try {
        fsr::adam_step(mismatched, model);
        FAIL() << "expected error";
    } catch (const fsr::Error& e) {
        EXPECT_EQ(e.kind(), fsr::Error::Kind::Shape);
    }
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

TEST(Checkpointing, RoundTripPreservesModelAndOptimizer) {
    auto dir = temp_dir("fsr_ckpt_roundtrip");
    fsr::AnetModel model = fsr::make_anet(tiny_config(), uint64_t{77});
    // Make the running statistics non-trivial with one train-mode pass.
    fsr::Rng rng(5);
    fsr::Tensor4 x(1, 1, 16, 16);
    for (double& v : x.v) v = rng.uniform01();
    fsr::anet_forward(model, x, fsr::NetMode::Train);
    // Make the optimizer moments non-trivial with three update steps.
    fsr::AdamState adam = fsr::make_adam(model, 3e-4);
    for (int step = 0; step < 3; ++step) {
        for (auto& p : model.params)
            for (double& g : p.grad) g = rng.uniform01() - 0.5;
        fsr::adam_step(adam, model);
    }

    std::string prefix = (dir / "ck").string();
    fsr::save_checkpoint(prefix, model, &adam, 9);
    fsr::LoadedCheckpoint loaded = fsr::load_checkpoint(prefix);

    EXPECT_EQ(loaded.epoch, 9);
    EXPECT_TRUE(loaded.has_adam);
    EXPECT_EQ(loaded.model.config.depth, model.config.depth);
    EXPECT_EQ(loaded.model.config.base_channels, model.config.base_channels);
    EXPECT_EQ(loaded.model.config.in_channels, model.config.in_channels);
    EXPECT_EQ(loaded.model.config.classes, model.config.classes);
    EXPECT_DOUBLE_EQ(loaded.model.config.bn_epsilon, model.config.bn_epsilon);
    EXPECT_DOUBLE_EQ(loaded.model.config.bn_momentum, model.config.bn_momentum);
    EXPECT_DOUBLE_EQ(loaded.adam.lr, adam.lr);
    EXPECT_DOUBLE_EQ(loaded.adam.beta1, adam.beta1);
    EXPECT_DOUBLE_EQ(loaded.adam.beta2, adam.beta2);
    EXPECT_DOUBLE_EQ(loaded.adam.epsilon, adam.epsilon);
    EXPECT_EQ(loaded.adam.t, adam.t);

    // Values pass through a 32-bit float container, so the loaded doubles must
    // equal the float-rounded originals exactly.
    ASSERT_EQ(loaded.model.params.size(), model.params.size());
    for (size_t pi = 0; pi < model.params.size(); ++pi) {
        EXPECT_EQ(loaded.model.params[pi].name, model.params[pi].name);
        EXPECT_EQ(loaded.model.params[pi].shape, model.params[pi].shape);
        for (size_t k = 0; k < model.params[pi].count(); ++k)
            ASSERT_EQ(loaded.model.params[pi].value[k],
                      static_cast<double>(static_cast<float>(model.params[pi].value[k])))
                << model.params[pi].name << "[" << k << "]";
    }
    ASSERT_EQ(loaded.model.buffers.size(), model.buffers.size());
    for (size_t bi = 0; bi < model.buffers.size(); ++bi) {
        EXPECT_EQ(loaded.model.buffers[bi].name, model.buffers[bi].name);
        for (size_t k = 0; k < model.buffers[bi].value.size(); ++k)
            ASSERT_EQ(loaded.model.buffers[bi].value[k],
                      static_cast<double>(static_cast<float>(model.buffers[bi].value[k])))
                << model.buffers[bi].name << "[" << k << "]";
    }
    for (size_t pi = 0; pi < adam.m.size(); ++pi)
        for (size_t k = 0; k < adam.m[pi].size(); ++k) {
            ASSERT_EQ(loaded.adam.m[pi][k],
                      static_cast<double>(static_cast<float>(adam.m[pi][k])));
            ASSERT_EQ(loaded.adam.v[pi][k],
                      static_cast<double>(static_cast<float>(adam.v[pi][k])));
        }
}

TEST(Checkpointing, ModelOnlyCheckpointLoadsWithFreshOptimizer) {
    auto dir = temp_dir("fsr_ckpt_modelonly");
    fsr::AnetModel model = fsr::make_anet(tiny_config(), uint64_t{4});
    std::string prefix = (dir / "m").string();
    fsr::save_checkpoint(prefix, model, nullptr, 1);
    fsr::LoadedCheckpoint loaded = fsr::load_checkpoint(prefix);
    EXPECT_FALSE(loaded.has_adam);
    EXPECT_EQ(loaded.adam.t, 0);
    for (const auto& m : loaded.adam.m)
        for (double v : m) EXPECT_EQ(v, 0.0);
}

TEST(Checkpointing, ErrorKinds) {
    auto dir = temp_dir("fsr_ckpt_errors");
    fsr::AnetModel model = fsr::make_anet(tiny_config(), uint64_t{4});
    fsr::AdamState adam = fsr::make_adam(model, 1e-4);
    std::string prefix = (dir / "ck").string();
    fsr::save_checkpoint(prefix, model, &adam, 2);

    try {
        fsr::load_checkpoint((dir / "missing").string());
        FAIL() << "expected error";
    } catch (const fsr::Error& e) {
        EXPECT_EQ(e.kind(), fsr::Error::Kind::Io);
    }

    // Malformed manifest JSON.
    {
        std::ofstream bad(prefix + "_badjson.json");
        bad << "this is not json";
        bad.close();
        std::ofstream bin(prefix + "_badjson.bin", std::ios::binary);
        bin << "\0\0\0\0";
    }
    try {
        fsr::load_checkpoint(prefix + "_badjson");
        FAIL() << "expected error";
    } catch (const fsr::Error& e) {
        EXPECT_EQ(e.kind(), fsr::Error::Kind::Format);
    }

    // Data file whose byte count is not a whole number of floats.
    std::filesystem::copy_file(prefix + ".json", prefix + "_ragged.json");
    {
        std::ifstream in(prefix + ".bin", std::ios::binary);
        std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                                std::istreambuf_iterator<char>());
        bytes.pop_back();
        std::ofstream out(prefix + "_ragged.bin", std::ios::binary);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    }
    try {
        fsr::load_checkpoint(prefix + "_ragged");
        FAIL() << "expected error";
    } catch (const fsr::Error& e) {
        EXPECT_EQ(e.kind(), fsr::Error::Kind::Format);
    }

    // Data file shortened by whole floats: manifest offsets now overrun it.
    std::filesystem::copy_file(prefix + ".json", prefix + "_short.json");
    {
        std::ifstream in(prefix + ".bin", std::ios::binary);
        std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                                std::istreambuf_iterator<char>());
        bytes.resize(bytes.size() - 64 * sizeof(float));
        std::ofstream out(prefix + "_short.bin", std::ios::binary);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    }
    try {
        fsr::load_checkpoint(prefix + "_short");
        FAIL() << "expected error";
    } catch (const fsr::Error& e) {
        EXPECT_EQ(e.kind(), fsr::Error::Kind::Format);
    }
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

TEST(Training, ZeroEpochsReturnsSeededInitialization) {
    auto dir = temp_dir("fsr_train_zero");
    fsr::DatasetManifest manifest = toy_dataset(dir);
    fsr::TrainOptions opts;
    opts.epochs = 0;
    opts.seed = 5;
    fsr::TrainResult res = fsr::train(manifest, tiny_config(), opts);
    fsr::AnetModel fresh = fsr::make_anet(tiny_config(), uint64_t{5});
    EXPECT_TRUE(params_bitwise_equal(res.model, fresh));
    ASSERT_EQ(res.log_lines.size(), 1u);
    EXPECT_EQ(res.log_lines[0], fsr::training_log_header());
    EXPECT_EQ(res.first_epoch_mean_loss, 0.0);
    EXPECT_EQ(res.final_epoch_mean_loss, 0.0);
}

TEST(Training, Validation) {
    auto dir = temp_dir("fsr_train_validation");
    fsr::DatasetManifest manifest = toy_dataset(dir);
    fsr::DatasetManifest empty;
    fsr::TrainOptions opts;
    try {
        fsr::train(empty, tiny_config(), opts);
        FAIL() << "expected error";
    } catch (const fsr::Error& e) {
        EXPECT_EQ(e.kind(), fsr::Error::Kind::Param);
    }
    opts.epochs = -1;
    EXPECT_THROW(fsr::train(manifest, tiny_config(), opts), fsr::Error);
}

TEST(Training, LogFormatAndDeterminism) {
    auto dir = temp_dir("fsr_train_log");
    fsr::DatasetManifest manifest = toy_dataset(dir);
    fsr::TrainOptions opts;
    opts.epochs = 3;
    opts.seed = 21;
    fsr::TrainResult a = fsr::train(manifest, tiny_config(), opts);

    ASSERT_EQ(a.log_lines.size(), 1u + 3u * 4u);
    EXPECT_EQ(a.log_lines[0], "epoch,step,loss,clamped_pixels");
    for (size_t i = 1; i < a.log_lines.size(); ++i) {
        int epoch = 0, step = 0;
        long clamped = -1;
        char lossbuf[64] = {0};
        ASSERT_EQ(std::sscanf(a.log_lines[i].c_str(), "%d,%d,%63[^,],%ld", &epoch, &step,
                              lossbuf, &clamped),
                  4)
            << a.log_lines[i];
        EXPECT_EQ(epoch, static_cast<int>((i - 1) / 4) + 1);
        EXPECT_EQ(step, static_cast<int>((i - 1) % 4) + 1);
        double loss = std::strtod(lossbuf, nullptr);
        EXPECT_TRUE(std::isfinite(loss)) << a.log_lines[i];
        EXPECT_GE(loss, 0.0);
        EXPECT_GE(clamped, 0);
    }

    // Same options reproduce the run bit for bit; a different seed does not.
    fsr::TrainResult b = fsr::train(manifest, tiny_config(), opts);
    EXPECT_EQ(a.log_lines, b.log_lines);
    EXPECT_TRUE(params_bitwise_equal(a.model, b.model));
    opts.seed = 22;
    fsr::TrainResult c = fsr::train(manifest, tiny_config(), opts);
    EXPECT_FALSE(params_bitwise_equal(a.model, c.model));
}

TEST(Training, OverfitsToyDatasetAndPredictsIt) {
    auto dir = temp_dir("fsr_train_overfit");
    fsr::DatasetManifest manifest = toy_dataset(dir);
    fsr::TrainOptions opts;
    opts.epochs = 200;
    opts.lr = 1e-3;
    opts.seed = 7;
    fsr::TrainResult res = fsr::train(manifest, tiny_config(), opts);
    EXPECT_GT(res.first_epoch_mean_loss, 0.0);
    EXPECT_LT(res.final_epoch_mean_loss, 0.1 * res.first_epoch_mean_loss)
        << "first " << res.first_epoch_mean_loss << " final " << res.final_epoch_mean_loss;

    // The fitted model must reproduce the mask of a training tile.
    fsr::DatasetPair pair = fsr::load_pair(manifest, 0);
    fsr::Image2D prob = fsr::predict_tile(res.model, pair.original);
    double fg_sum = 0.0, bg_sum = 0.0;
    int fg_n = 0, bg_n = 0;
    for (size_t i = 0; i < prob.values.size(); ++i) {
        if (pair.label.values[i] > 0.5) {
            fg_sum += prob.values[i];
            ++fg_n;
        } else {
            bg_sum += prob.values[i];
            ++bg_n;
        }
    }
    ASSERT_GT(fg_n, 0);
    ASSERT_GT(bg_n, 0);
    EXPECT_GT(fg_sum / fg_n, 0.8);
    EXPECT_LT(bg_sum / bg_n, 0.2);
}

TEST(Training, PeriodicCheckpointsMatchFinalState) {
    auto dir = temp_dir("fsr_train_ckpt");
    fsr::DatasetManifest manifest = toy_dataset(dir);
    fsr::TrainOptions opts;
    opts.epochs = 4;
    opts.seed = 13;
    opts.checkpoint_every = 2;
    opts.checkpoint_prefix = (dir / "run").string();
    fsr::TrainResult res = fsr::train(manifest, tiny_config(), opts);

    EXPECT_FALSE(std::filesystem::exists(dir / "run_epoch0001.json"));
    EXPECT_FALSE(std::filesystem::exists(dir / "run_epoch0003.json"));
    ASSERT_TRUE(std::filesystem::exists(dir / "run_epoch0002.json"));
    ASSERT_TRUE(std::filesystem::exists(dir / "run_epoch0002.bin"));
    ASSERT_TRUE(std::filesystem::exists(dir / "run_epoch0004.json"));

    // The last periodic checkpoint is the final state (float-rounded).
    fsr::LoadedCheckpoint last = fsr::load_checkpoint((dir / "run_epoch0004").string());
    EXPECT_EQ(last.epoch, 4);
    EXPECT_TRUE(last.has_adam);
    EXPECT_EQ(last.adam.t, 16);  // 4 epochs x 4 steps
    for (size_t pi = 0; pi < res.model.params.size(); ++pi)
        for (size_t k = 0; k < res.model.params[pi].count(); ++k)
            ASSERT_EQ(last.model.params[pi].value[k],
                      static_cast<double>(static_cast<float>(res.model.params[pi].value[k])));
}

TEST(Training, NonFiniteLossWritesDiagnosticCheckpoint) {
    auto dir = temp_dir("fsr_train_nan");
    fsr::DatasetManifest manifest = toy_dataset(dir);
    fsr::TrainOptions opts;
    opts.epochs = 5;
    opts.seed = 1;
    // An absurd learning rate drives the parameters to overflow, producing a
    // non-finite loss within a few steps.
    opts.lr = 1e308;
    opts.checkpoint_prefix = (dir / "boom").string();
    try {
        fsr::train(manifest, tiny_config(), opts);
        FAIL() << "expected non-finite loss";
    } catch (const fsr::Error& e) {
        EXPECT_EQ(e.kind(), fsr::Error::Kind::Range);
        EXPECT_NE(std::string(e.what()).find("diagnostic"), std::string::npos);
    }
    EXPECT_TRUE(std::filesystem::exists(dir / "boom_diagnostic.json"));
    EXPECT_TRUE(std::filesystem::exists(dir / "boom_diagnostic.bin"));
}

TEST(Training, SaveTrainingLogRoundtrip) {
    auto dir = temp_dir("fsr_train_savelog");
    std::vector<std::string> lines = {fsr::training_log_header(), "1,1,0.5,0", "1,2,0.25,3"};
    std::string path = (dir / "logs" / "training_log.csv").string();
    fsr::save_training_log(lines, path);
    std::ifstream in(path);
    ASSERT_TRUE(in.good());
    std::string line;
    std::vector<std::string> readback;
    while (std::getline(in, line)) readback.push_back(line);
    EXPECT_EQ(readback, lines);
}

// ---------------------------------------------------------------------------
// Prediction
// ---------------------------------------------------------------------------

TEST(Prediction, TileOutputIsProbabilityImage) {
    fsr::AnetModel model = fsr::make_anet(tiny_config(), uint64_t{2});
    fsr::Image2D tile(16, 16, 62.5, fsr::SourceDepth::F32);
    fsr::Rng rng(9);
    for (double& v : tile.values) v = rng.uniform01();
    fsr::Image2D prob = fsr::predict_tile(model, tile);
    EXPECT_EQ(prob.width, 16);
    EXPECT_EQ(prob.height, 16);
    EXPECT_DOUBLE_EQ(prob.pixel_pitch_nm, 62.5);
    for (double v : prob.values) {
        EXPECT_GT(v, 0.0);
        EXPECT_LT(v, 1.0);
    }
    // Eval mode must not mutate the model: a second call is bitwise identical.
    fsr::Image2D again = fsr::predict_tile(model, tile);
    EXPECT_EQ(prob.values, again.values);
}

TEST(Prediction, WholeImageMatchesManualTiling) {
    fsr::AnetModel model = fsr::make_anet(tiny_config(), uint64_t{6});
    fsr::Image2D img(24, 16, 250.0, fsr::SourceDepth::F32);
    fsr::Rng rng(31);
    for (double& v : img.values) v = 40.0 * rng.uniform01() + 1.0;

    fsr::Image2D via_api = fsr::predict_image(model, img, 8);
    fsr::Image2D norm = fsr::normalize_unit(img);
    fsr::TileGrid grid;
    std::vector<fsr::Image2D> tiles = fsr::split_tiles(norm, 8, &grid);
    std::vector<fsr::Image2D> preds;
    for (const auto& t : tiles) preds.push_back(fsr::predict_tile(model, t));
    fsr::Image2D manual = fsr::assemble_tiles(preds, grid, img.width, img.height);
    ASSERT_EQ(via_api.values.size(), manual.values.size());
    EXPECT_EQ(via_api.values, manual.values);

    // tile_size 0 runs the image as one tile.
    fsr::Image2D whole = fsr::predict_image(model, img, 0);
    fsr::Image2D whole_manual = fsr::predict_tile(model, norm);
    EXPECT_EQ(whole.values, whole_manual.values);
}

// ---------------------------------------------------------------------------
// Log number formatting
// ---------------------------------------------------------------------------

TEST(LogFormatting, ShortestRoundTripDoubles) {
    const double cases[] = {0.0,   1.0,         0.5,      1.0 / 3.0, 1e-300,
                            -2.25, 6.02214e23,  1.1356,   1e308,     5e-324};
    for (double v : cases) {
        std::string s = fsr::format_double(v);
        EXPECT_EQ(std::strtod(s.c_str(), nullptr), v) << s;
    }
    EXPECT_EQ(fsr::format_double(0.5), "0.5");
    EXPECT_EQ(fsr::format_double(1.0), "1");
    EXPECT_EQ(fsr::format_double(-2.25), "-2.25");
}
