// Command-line front end for the filament super-resolution pipeline.
//
// Subcommands cover each pipeline stage (phantom, degrade, label, dataset,
// train, predict, eval, profile, stack) plus `reproduce`, which chains the
// whole desk-scale run and writes a resolution report.  One JSON document
// configures everything; flags override config keys (repeatable --set uses
// dotted paths, e.g. --set train.epochs=50).

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fsr/fsr.hpp"

namespace {

struct GlobalArgs {
    std::string config_path;
    std::vector<std::string> overrides;
    int workers = -1;
};

fsr::RunConfig build_config(const GlobalArgs& g) {
    nlohmann::json j = nlohmann::json::object();
    if (!g.config_path.empty()) j = fsr::load_config_json(g.config_path);
    for (const std::string& o : g.overrides) fsr::apply_override(j, o);
    return fsr::config_from_json(j);
}

void require_valid(const fsr::RunConfig& cfg) {
    std::vector<std::string> violations = fsr::validate_config(cfg);
    if (violations.empty()) return;
    std::string msg = "configuration invalid:";
    for (const std::string& v : violations) msg += "\n  - " + v;
    throw fsr::Error(fsr::Error::Kind::Config, msg);
}

std::vector<std::string> list_images_sorted(const std::string& dir) {
    std::vector<std::string> files;
    if (!std::filesystem::is_directory(dir))
        throw fsr::Error(fsr::Error::Kind::Io, "not a directory: " + dir);
    for (const auto& e : std::filesystem::directory_iterator(dir)) {
        if (!e.is_regular_file()) continue;
        std::string ext = e.path().extension().string();
        if (ext == ".f32" || ext == ".pgm") files.push_back(e.path().string());
    }
    std::sort(files.begin(), files.end());
    if (files.empty())
        throw fsr::Error(fsr::Error::Kind::Io, "no .f32/.pgm images found in " + dir);
    return files;
}

fsr::WaveletSpec wavelet_from(const fsr::RunConfig& cfg) {
    fsr::WaveletSpec w;
    w.family = cfg.dwdc.wavelet == "db4" ? fsr::WaveletFamily::Daubechies4
                                         : fsr::WaveletFamily::Haar;
    w.levels = cfg.dwdc.levels;
    w.threshold_mode =
        cfg.dwdc.shrink == "hard" ? fsr::ThresholdMode::Hard : fsr::ThresholdMode::Soft;
    if (cfg.dwdc.threshold >= 0.0) w.threshold_value = cfg.dwdc.threshold;
    return w;
}

fsr::LrSpec lr_from(const fsr::RunConfig& cfg) {
    fsr::LrSpec l;
    l.psf = fsr::gaussian_psf(cfg.dwdc.lr_sigma_px, cfg.dwdc.lr_radius_px);
    l.iterations = cfg.dwdc.lr_iters;
    return l;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Filament image super-resolution pipeline"};
    app.require_subcommand(1);
    app.fallthrough();

    GlobalArgs g;
    app.add_option("--config", g.config_path, "JSON configuration file");
    app.add_option("--set", g.overrides,
                   "override a config key by dotted path, e.g. --set train.epochs=50");
    app.add_option("--workers", g.workers, "worker thread count (0 = hardware concurrency)");

    // ---- phantom ----------------------------------------------------------
    auto* sc_phantom = app.add_subcommand("phantom", "generate synthetic filament images");
    std::string phantom_spec, phantom_out;
    sc_phantom->add_option("--spec", phantom_spec, "config file (alias for --config)");
    sc_phantom->add_option("--out", phantom_out, "output directory")->required();
    uint64_t phantom_seed = 0;
    auto* phantom_seed_opt = sc_phantom->add_option("--seed", phantom_seed, "base seed");

    // ---- degrade ----------------------------------------------------------
    auto* sc_degrade = app.add_subcommand("degrade", "blur + noise forward model");
    std::string degrade_in, degrade_out;
    sc_degrade->add_option("--in", degrade_in, "latent input image")->required();
    sc_degrade->add_option("--out", degrade_out, "degraded output image")->required();
    double degrade_sigma = 0;
    int degrade_radius = 0;
    std::string degrade_noise;
    double degrade_param = 0;
    uint64_t degrade_seed = 0;
    auto* o_dsig = sc_degrade->add_option("--psf-sigma", degrade_sigma, "blur kernel sigma (px)");
    auto* o_drad = sc_degrade->add_option("--psf-radius", degrade_radius, "blur kernel radius (px)");
    auto* o_dnoise = sc_degrade->add_option("--noise", degrade_noise, "none|gaussian|poisson");
    auto* o_dparam = sc_degrade->add_option("--noise-param", degrade_param, "noise strength");
    auto* o_drel = sc_degrade->add_flag("--noise-rel", "noise strength relative to blurred max");
    auto* o_dseed = sc_degrade->add_option("--seed", degrade_seed, "noise seed");

    // ---- label ------------------------------------------------------------
    auto* sc_label = app.add_subcommand("label", "classic denoise+deconvolve+binarize labeling");
    std::string label_in, label_out;
    sc_label->add_option("--in", label_in, "preprocessed input image")->required();
    sc_label->add_option("--out", label_out, "binary label output")->required();
    std::string label_wavelet, label_shrink, label_binarize;
    int label_levels = 0, label_lr_iters = 0, label_lr_radius = 0;
    double label_threshold = 0, label_lr_sigma = 0, label_bin_threshold = 0;
    auto* o_lwav = sc_label->add_option("--wavelet", label_wavelet, "haar|db4");
    auto* o_llev = sc_label->add_option("--levels", label_levels, "decomposition levels");
    auto* o_lshr = sc_label->add_option("--shrink", label_shrink, "soft|hard");
    auto* o_lthr = sc_label->add_option("--threshold", label_threshold,
                                        "detail threshold (omit for universal)");
    auto* o_lsig = sc_label->add_option("--lr-sigma", label_lr_sigma, "deconvolution PSF sigma");
    auto* o_lrad = sc_label->add_option("--lr-radius", label_lr_radius, "deconvolution PSF radius");
    auto* o_lit = sc_label->add_option("--lr-iters", label_lr_iters, "deconvolution iterations");
    auto* o_lbin = sc_label->add_option("--binarize", label_binarize, "otsu|fixed");
    auto* o_lbthr = sc_label->add_option("--binarize-threshold", label_bin_threshold,
                                         "threshold for --binarize fixed");

    // ---- dataset ----------------------------------------------------------
    auto* sc_dataset = app.add_subcommand("dataset", "tile originals+labels into a training set");
    std::string ds_orig, ds_label, ds_out, ds_split = "train";
    int ds_tile = 0;
    sc_dataset->add_option("--originals", ds_orig, "directory of original images")->required();
    sc_dataset->add_option("--labels", ds_label, "directory of label images")->required();
    sc_dataset->add_option("--out", ds_out, "output dataset directory")->required();
    auto* o_tile = sc_dataset->add_option("--tile", ds_tile, "tile size (px)");
    sc_dataset->add_option("--split", ds_split, "split name recorded in the manifest");
    double ds_w0 = 0, ds_sigma_w = 0;
    auto* o_w0 = sc_dataset->add_option("--w0", ds_w0, "boundary weight amplitude");
    auto* o_sw = sc_dataset->add_option("--sigma-w", ds_sigma_w, "boundary weight falloff");

    // ---- train ------------------------------------------------------------
    auto* sc_train = app.add_subcommand("train", "train the segmentation network");
    std::string tr_manifest, tr_out, tr_log;
    sc_train->add_option("--manifest", tr_manifest, "dataset manifest.json")->required();
    sc_train->add_option("--out", tr_out, "checkpoint prefix to write")->required();
    sc_train->add_option("--log", tr_log, "training log CSV path (default <out>_log.csv)");
    int tr_depth = 0, tr_base = 0, tr_epochs = 0, tr_ckpt = 0;
    double tr_lr = 0;
    uint64_t tr_seed = 0;
    auto* o_tdepth = sc_train->add_option("--depth", tr_depth, "encoder depth");
    auto* o_tbase = sc_train->add_option("--base", tr_base, "base channel count");
    auto* o_tepochs = sc_train->add_option("--epochs", tr_epochs, "training epochs");
    auto* o_tlr = sc_train->add_option("--lr", tr_lr, "learning rate");
    auto* o_tseed = sc_train->add_option("--seed", tr_seed, "init/shuffle seed");
    auto* o_tckpt = sc_train->add_option("--checkpoint-every", tr_ckpt,
                                         "write a checkpoint every N epochs (0 = off)");

    // ---- predict ----------------------------------------------------------
    auto* sc_predict = app.add_subcommand("predict",
                                          "predict a test image and apply the binary mask");
    std::string pr_model, pr_in, pr_out, pr_prob, pr_mask;
    sc_predict->add_option("--model", pr_model, "checkpoint prefix")->required();
    sc_predict->add_option("--in", pr_in, "test image")->required();
    sc_predict->add_option("--out", pr_out, "masked result image")->required();
    sc_predict->add_option("--prob", pr_prob, "also write the probability map here");
    sc_predict->add_option("--mask", pr_mask, "also write the binary mask here");
    double pr_threshold = 0;
    int pr_tile = -1;
    auto* o_pthr = sc_predict->add_option("--threshold", pr_threshold, "mask threshold");
    auto* o_ptile = sc_predict->add_option("--tile", pr_tile, "tile size (0 = whole image)");

    // ---- eval -------------------------------------------------------------
    auto* sc_eval = app.add_subcommand("eval", "PSNR/SSIM quality report for an image pair");
    std::string ev_a, ev_b, ev_report;
    sc_eval->add_option("--a", ev_a, "first image")->required();
    sc_eval->add_option("--b", ev_b, "second image")->required();
    sc_eval->add_option("--report", ev_report, "output JSON report")->required();
    double ev_max = 0;
    auto* o_emax = sc_eval->add_option("--max-val", ev_max, "dynamic range (default by depth)");

    // ---- profile ----------------------------------------------------------
    auto* sc_profile = app.add_subcommand("profile", "export an intensity line profile as CSV");
    std::string pf_in, pf_out;
    int pf_row = -1, pf_col = -1, pf_begin = 0, pf_end = -1;
    sc_profile->add_option("--in", pf_in, "input image")->required();
    sc_profile->add_option("--out", pf_out, "output CSV")->required();
    auto* o_prow = sc_profile->add_option("--row", pf_row, "horizontal profile along this row");
    auto* o_pcol = sc_profile->add_option("--col", pf_col, "vertical profile along this column");
    sc_profile->add_option("--begin", pf_begin, "span start (default 0)");
    sc_profile->add_option("--end", pf_end, "span end (default full extent)");
    auto* o_pfwhm = sc_profile->add_flag("--fwhm", "print the profile's width measurement");

    // ---- stack ------------------------------------------------------------
    auto* sc_stack = app.add_subcommand("stack", "assemble result slices into a z-stack");
    std::vector<std::string> st_slices;
    std::string st_out, st_mip;
    double st_zstep = 0;
    sc_stack->add_option("--slices", st_slices, "slice images, in z order")
        ->required()
        ->expected(-1);
    sc_stack->add_option("--out", st_out, "output stack directory")->required();
    auto* o_zstep = sc_stack->add_option("--zstep", st_zstep, "z spacing in nm");
    sc_stack->add_option("--mip", st_mip, "also write the maximum-intensity projection here");

    // ---- reproduce --------------------------------------------------------
    auto* sc_repro = app.add_subcommand(
        "reproduce", "end-to-end desk-scale run: synthesize, train, predict, report");
    std::string rp_out = "reproduce_out";
    sc_repro->add_option("--out", rp_out, "output directory");
    uint64_t rp_seed = 0;
    auto* o_rseed = sc_repro->add_option("--seed", rp_seed, "global seed");
    int rp_epochs = 0;
    auto* o_repochs = sc_repro->add_option("--epochs", rp_epochs, "training epochs");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        std::cout << app.help() << std::endl;
        return 0;
    } catch (const CLI::CallForAllHelp& e) {
        std::cout << app.help("", CLI::AppFormatMode::All) << std::endl;
        return 0;
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n\n" << app.help() << std::endl;
        return 2;
    }

    try {
        if (g.workers >= 0) {
            setenv("FILAMENT_SR_WORKERS", std::to_string(g.workers).c_str(), 1);
        }
        if (sc_phantom->parsed()) {
            if (!phantom_spec.empty()) g.config_path = phantom_spec;
            fsr::RunConfig cfg = build_config(g);
            if (phantom_seed_opt->count()) cfg.seed = phantom_seed;
            require_valid(cfg);
            std::filesystem::create_directories(phantom_out);
            nlohmann::json curves_doc = nlohmann::json::array();
            for (int i = 0; i < cfg.phantom.count; ++i) {
                fsr::PhantomSpec ps;
                ps.width = cfg.phantom.width;
                ps.height = cfg.phantom.height;
                ps.n_filaments = cfg.phantom.n_filaments;
                ps.thickness_px = cfg.phantom.thickness_px;
                ps.intensity = cfg.phantom.intensity;
                ps.curvature = cfg.phantom.curvature;
                ps.seed = cfg.seed + static_cast<uint64_t>(i);
                std::vector<fsr::QuadCurve> curves;
                fsr::Image2D img = fsr::generate_phantom(ps, &curves);
                img.pixel_pitch_nm = cfg.phantom.pixel_pitch_nm;
                char name[32];
                std::snprintf(name, sizeof(name), "phantom_%04d.f32", i);
                fsr::save_image(img, (std::filesystem::path(phantom_out) / name).string(),
                                fsr::SourceDepth::F32);
                nlohmann::json jc = nlohmann::json::array();
                for (const fsr::QuadCurve& c : curves)
                    jc.push_back({{"p0", {c.p0x, c.p0y}},
                                  {"p1", {c.p1x, c.p1y}},
                                  {"p2", {c.p2x, c.p2y}}});
                curves_doc.push_back({{"image", name}, {"filaments", jc}});
            }
            std::ofstream co(std::filesystem::path(phantom_out) / "curves.json");
            co << curves_doc.dump(2) << "\n";
            std::cout << "wrote " << cfg.phantom.count << " phantom image(s) to " << phantom_out
                      << std::endl;
        } else if (sc_degrade->parsed()) {
            fsr::RunConfig cfg = build_config(g);
            if (o_dsig->count()) cfg.degrade.psf_sigma_px = degrade_sigma;
            if (o_drad->count()) cfg.degrade.psf_radius_px = degrade_radius;
            if (o_dnoise->count()) cfg.degrade.noise = degrade_noise;
            if (o_dparam->count()) cfg.degrade.noise_param = degrade_param;
            if (o_drel->count()) cfg.degrade.noise_relative = true;
            if (o_dseed->count()) cfg.seed = degrade_seed;
            require_valid(cfg);
            fsr::Image2D in = fsr::load_image(degrade_in);
            fsr::DegradationSpec ds;
            ds.psf = fsr::gaussian_psf(cfg.degrade.psf_sigma_px, cfg.degrade.psf_radius_px);
            ds.noise_kind = cfg.degrade.noise == "none"
                                ? fsr::NoiseKind::None
                                : (cfg.degrade.noise == "poisson" ? fsr::NoiseKind::Poisson
                                                                  : fsr::NoiseKind::Gaussian);
            ds.noise_param = cfg.degrade.noise_param;
            ds.noise_relative = cfg.degrade.noise_relative;
            ds.seed = cfg.seed;
            fsr::Image2D out = fsr::degrade(in, ds);
            fsr::save_image(out, degrade_out, fsr::SourceDepth::F32);
            std::cout << "wrote " << degrade_out << std::endl;
        } else if (sc_label->parsed()) {
            fsr::RunConfig cfg = build_config(g);
            if (o_lwav->count()) cfg.dwdc.wavelet = label_wavelet;
            if (o_llev->count()) cfg.dwdc.levels = label_levels;
            if (o_lshr->count()) cfg.dwdc.shrink = label_shrink;
            if (o_lthr->count()) cfg.dwdc.threshold = label_threshold;
            if (o_lsig->count()) cfg.dwdc.lr_sigma_px = label_lr_sigma;
            if (o_lrad->count()) cfg.dwdc.lr_radius_px = label_lr_radius;
            if (o_lit->count()) cfg.dwdc.lr_iters = label_lr_iters;
            if (o_lbin->count()) cfg.dwdc.binarize = label_binarize;
            if (o_lbthr->count()) cfg.dwdc.binarize_threshold = label_bin_threshold;
            require_valid(cfg);
            fsr::Image2D in = fsr::load_image(label_in);
            fsr::BinarizeMethod method =
                cfg.dwdc.binarize == "fixed"
                    ? fsr::BinarizeMethod::fixed(cfg.dwdc.binarize_threshold)
                    : fsr::BinarizeMethod::otsu();
            bool degenerate = false;
            fsr::Image2D label =
                fsr::make_label(in, wavelet_from(cfg), lr_from(cfg), method, &degenerate);
            fsr::save_image(label, label_out, fsr::SourceDepth::F32);
            if (degenerate)
                std::cerr << "warning: structureless input; label is all background" << std::endl;
            std::cout << "wrote " << label_out << std::endl;
        } else if (sc_dataset->parsed()) {
            fsr::RunConfig cfg = build_config(g);
            if (o_tile->count()) cfg.dataset.tile_size = ds_tile;
            if (o_w0->count()) cfg.dataset.w0 = ds_w0;
            if (o_sw->count()) cfg.dataset.sigma_w = ds_sigma_w;
            require_valid(cfg);
            std::vector<fsr::Image2D> originals, labels;
            for (const std::string& f : list_images_sorted(ds_orig))
                originals.push_back(fsr::load_image(f));
            for (const std::string& f : list_images_sorted(ds_label))
                labels.push_back(fsr::load_image(f));
            fsr::DatasetManifest m =
                fsr::build_dataset(originals, labels, cfg.dataset.tile_size, ds_out, ds_split,
                                   cfg.dataset.w0, cfg.dataset.sigma_w);
            std::cout << "wrote " << m.pairs.size() << " tile pair(s) to " << ds_out << std::endl;
        } else if (sc_train->parsed()) {
            fsr::RunConfig cfg = build_config(g);
            if (o_tdepth->count()) cfg.train.depth = tr_depth;
            if (o_tbase->count()) cfg.train.base_channels = tr_base;
            if (o_tepochs->count()) cfg.train.epochs = tr_epochs;
            if (o_tlr->count()) cfg.train.lr = tr_lr;
            if (o_tseed->count()) cfg.seed = tr_seed;
            if (o_tckpt->count()) cfg.train.checkpoint_every = tr_ckpt;
            require_valid(cfg);
            fsr::DatasetManifest manifest = fsr::load_manifest(tr_manifest);
            fsr::AnetConfig net;
            net.depth = cfg.train.depth;
            net.base_channels = cfg.train.base_channels;
            fsr::TrainOptions topts;
            topts.epochs = cfg.train.epochs;
            topts.lr = cfg.train.lr;
            topts.seed = cfg.seed;
            topts.checkpoint_every = cfg.train.checkpoint_every;
            topts.checkpoint_prefix = tr_out;
            fsr::TrainResult res = fsr::train(manifest, net, topts);
            fsr::save_checkpoint(tr_out, res.model, &res.adam, topts.epochs);
            std::string log_path = tr_log.empty() ? tr_out + "_log.csv" : tr_log;
            fsr::save_training_log(res.log_lines, log_path);
            std::cout << "trained " << topts.epochs << " epoch(s); checkpoint " << tr_out
                      << ".json/.bin; log " << log_path << std::endl;
        } else if (sc_predict->parsed()) {
            fsr::RunConfig cfg = build_config(g);
            if (o_pthr->count()) cfg.predict.threshold = pr_threshold;
            if (o_ptile->count()) cfg.predict.tile = pr_tile;
            require_valid(cfg);
            fsr::LoadedCheckpoint ck = fsr::load_checkpoint(pr_model);
            fsr::Image2D in = fsr::load_image(pr_in);
            fsr::Image2D prob = fsr::predict_image(ck.model, in, cfg.predict.tile);
            fsr::Image2D test = fsr::normalize_unit(in);
            fsr::Image2D result = fsr::postprocess_result(prob, test, cfg.predict.threshold);
            fsr::save_image(result, pr_out, fsr::SourceDepth::F32);
            if (!pr_prob.empty()) fsr::save_image(prob, pr_prob, fsr::SourceDepth::F32);
            if (!pr_mask.empty())
                fsr::save_image(fsr::binarize_fixed(prob, cfg.predict.threshold), pr_mask,
                                fsr::SourceDepth::F32);
            std::cout << "wrote " << pr_out << std::endl;
        } else if (sc_eval->parsed()) {
            fsr::Image2D a = fsr::load_image(ev_a);
            fsr::Image2D b = fsr::load_image(ev_b);
            double max_val = o_emax->count() ? ev_max : fsr::default_max_val(a);
            fsr::QualityReport rep = fsr::quality_report(a, b, max_val);
            std::filesystem::path rp(ev_report);
            if (rp.has_parent_path()) std::filesystem::create_directories(rp.parent_path());
            std::ofstream out(ev_report);
            if (!out)
                throw fsr::Error(fsr::Error::Kind::Io, "cannot write report: " + ev_report);
            out << fsr::quality_report_json(rep).dump(2) << "\n";
            std::cout << (rep.psnr_infinite ? std::string("psnr=inf")
                                            : "psnr=" + fsr::format_double(rep.psnr_db))
                      << " ssim=" << fsr::format_double(rep.ssim_value) << std::endl;
        } else if (sc_profile->parsed()) {
            if (o_prow->count() == o_pcol->count())
                throw fsr::Error(fsr::Error::Kind::Param,
                                 "profile needs exactly one of --row or --col");
            fsr::Image2D img = fsr::load_image(pf_in);
            fsr::LineProfile p;
            if (o_prow->count()) {
                int end = pf_end < 0 ? img.width : pf_end;
                p = fsr::line_profile(img, pf_row, pf_begin, end);
            } else {
                int end = pf_end < 0 ? img.height : pf_end;
                p = fsr::column_profile(img, pf_col, pf_begin, end);
            }
            fsr::save_profile_csv(p, pf_out);
            if (o_pfwhm->count()) {
                fsr::FwhmResult f = fsr::fwhm(p);
                std::cout << "fwhm_nm=" << fsr::format_double(f.fwhm_nm)
                          << (f.multimodal ? " (multimodal)" : "") << std::endl;
            }
            std::cout << "wrote " << pf_out << std::endl;
        } else if (sc_stack->parsed()) {
            fsr::RunConfig cfg = build_config(g);
            if (o_zstep->count()) cfg.stack.z_step_nm = st_zstep;
            require_valid(cfg);
            std::vector<fsr::Image2D> slices;
            for (const std::string& s : st_slices) slices.push_back(fsr::load_image(s));
            fsr::ImageStack stack = fsr::stack_result(slices, cfg.stack.z_step_nm, st_out);
            if (!st_mip.empty())
                fsr::save_image(fsr::max_intensity_projection(stack), st_mip,
                                fsr::SourceDepth::F32);
            std::cout << "wrote " << stack.slices.size() << " slice(s) to " << st_out
                      << std::endl;
        } else if (sc_repro->parsed()) {
            fsr::RunConfig cfg = build_config(g);
            if (o_rseed->count()) cfg.seed = rp_seed;
            if (o_repochs->count()) cfg.reproduce.epochs = rp_epochs;
            fsr::ReproduceReport rep = fsr::reproduce(cfg, rp_out);
            std::cout << "median_test_fwhm_nm=" << fsr::format_double(rep.median_test_fwhm_nm)
                      << " median_result_fwhm_nm="
                      << fsr::format_double(rep.median_result_fwhm_nm)
                      << " ratio=" << fsr::format_double(rep.fwhm_ratio)
                      << " measurable=" << fsr::format_double(rep.measurable_fraction)
                      << std::endl;
        }
    } catch (const fsr::Error& e) {
        std::cerr << "error [" << fsr::Error::kind_name(e.kind()) << "]: " << e.what()
                  << std::endl;
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << std::endl;
        return 1;
    }
    return 0;
}
