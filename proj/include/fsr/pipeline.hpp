#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fsr/config.hpp"
#include "fsr/error.hpp"
#include "fsr/image.hpp"
#include "fsr/image_io.hpp"
#include "fsr/label.hpp"
#include "fsr/metrics.hpp"
#include "fsr/phantom.hpp"
#include "fsr/preprocess.hpp"
#include "fsr/synth.hpp"
#include "fsr/train.hpp"

namespace fsr {

inline double median_of(std::vector<double> v) {
    if (v.empty()) throw Error(Error::Kind::Param, "median of an empty set");
    std::sort(v.begin(), v.end());
    size_t n = v.size();
    if (n % 2 == 1) return v[n / 2];
    return 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// ---------------------------------------------------------------------------
// Measurement-site selection along a filament centerline.  A site is a pixel
// on the curve where a straight profile cut across the filament stays inside
// the image and clear of other filaments; candidates are ranked by how
// perpendicular the cut is to the local tangent (plus a clearance bonus) so
// the width estimate is least biased.
// ---------------------------------------------------------------------------

struct SiteCandidate {
    double score = 0.0;
    bool steep = false;  // |dy| >= |dx|: cut along the row, else along the column
    int row = 0;
    int col = 0;
};

inline std::vector<std::array<double, 2>> curve_points(const QuadCurve& c, int n = 300) {
    std::vector<std::array<double, 2>> pts(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        double t = static_cast<double>(i) / (n - 1);
        double x, y;
        c.point(t, x, y);
        pts[static_cast<size_t>(i)] = {x, y};
    }
    return pts;
}

inline std::vector<SiteCandidate> pick_sites(const QuadCurve& curve,
                                             const std::vector<QuadCurve>& others, int size,
                                             int win, int max_sites = 5) {
    std::vector<std::vector<std::array<double, 2>>> other_pts;
    other_pts.reserve(others.size());
    for (const QuadCurve& oc : others) other_pts.push_back(curve_points(oc));
    std::vector<SiteCandidate> cands;
    for (int ti = 0; ti < 15; ++ti) {
        double t = 0.15 + static_cast<double>(ti) * (0.85 - 0.15) / 14.0;
        double x, y, dx, dy;
        curve.point(t, x, y);
        curve.tangent(t, dx, dy);
        if (!(x >= win && x < size - win && y >= win && y < size - win)) continue;
        bool steep = std::abs(dy) >= std::abs(dx);
        int row = static_cast<int>(std::lround(y));
        int col = static_cast<int>(std::lround(x));
        // Clearance: every sample of the profile segment must stay at least
        // 4 px from any other filament's centerline.
        double dmin = 1e9;
        for (const auto& pts : other_pts) {
            for (int s = -win; s <= win; ++s) {
                double sx = steep ? static_cast<double>(col + s) : static_cast<double>(col);
                double sy = steep ? static_cast<double>(row) : static_cast<double>(row + s);
                for (const auto& p : pts) {
                    double d = std::hypot(p[0] - sx, p[1] - sy);
                    dmin = std::min(dmin, d);
                }
            }
        }
        if (dmin < 4.0) continue;
        double q = std::max(std::abs(dy), std::abs(dx)) / (std::hypot(dx, dy) + 1e-12);
        SiteCandidate c;
        c.score = q + 0.01 * std::min(dmin, 20.0);
        c.steep = steep;
        c.row = row;
        c.col = col;
        cands.push_back(c);
    }
    std::stable_sort(cands.begin(), cands.end(),
                     [](const SiteCandidate& a, const SiteCandidate& b) { return a.score > b.score; });
    std::vector<SiteCandidate> out;
    for (const SiteCandidate& c : cands) {
        bool dup = false;
        for (const SiteCandidate& o : out)
            if (o.row == c.row && o.col == c.col) dup = true;
        if (dup) continue;
        out.push_back(c);
        if (static_cast<int>(out.size()) >= max_sites) break;
    }
    return out;
}

inline LineProfile site_profile(const Image2D& img, const SiteCandidate& s, int win) {
    if (s.steep) return line_profile(img, s.row, s.col - win, s.col + win + 1);
    return column_profile(img, s.col, s.row - win, s.row + win + 1);
}

// ---------------------------------------------------------------------------
// End-to-end run: synthesize -> degrade -> preprocess -> classic label ->
// dataset -> train -> predict held-out -> postprocess -> resolution report.
// ---------------------------------------------------------------------------

struct ReproduceFilament {
    int image = 0;
    int filament = 0;
    bool measurable = false;
    int site_row = -1, site_col = -1;
    bool site_steep = false;
    double test_fwhm_nm = 0.0;
    double result_fwhm_nm = 0.0;
};

struct ReproduceReport {
    int count = 0;
    int train_count = 0;
    int held_out = 0;
    int epochs = 0;
    double first_epoch_mean_loss = 0.0;
    double final_epoch_mean_loss = 0.0;
    double median_test_fwhm_nm = 0.0;
    double median_result_fwhm_nm = 0.0;
    double fwhm_ratio = 0.0;
    double measurable_fraction = 0.0;
    int measured = 0;
    int unmeasurable = 0;
    std::vector<ReproduceFilament> filaments;
};

inline nlohmann::json reproduce_report_json(const ReproduceReport& r) {
    nlohmann::json j;
    j["count"] = r.count;
    j["train_count"] = r.train_count;
    j["held_out"] = r.held_out;
    j["epochs"] = r.epochs;
    j["first_epoch_mean_loss"] = r.first_epoch_mean_loss;
    j["final_epoch_mean_loss"] = r.final_epoch_mean_loss;
    j["median_test_fwhm_nm"] = r.median_test_fwhm_nm;
    j["median_result_fwhm_nm"] = r.median_result_fwhm_nm;
    j["fwhm_ratio"] = r.fwhm_ratio;
    j["measurable_fraction"] = r.measurable_fraction;
    j["measured"] = r.measured;
    j["unmeasurable"] = r.unmeasurable;
    j["filaments"] = nlohmann::json::array();
    for (const ReproduceFilament& f : r.filaments) {
        nlohmann::json e;
        e["image"] = f.image;
        e["filament"] = f.filament;
        e["measurable"] = f.measurable;
        if (f.measurable) {
            e["site_row"] = f.site_row;
            e["site_col"] = f.site_col;
            e["site_steep"] = f.site_steep;
            e["test_fwhm_nm"] = f.test_fwhm_nm;
            e["result_fwhm_nm"] = f.result_fwhm_nm;
        }
        j["filaments"].push_back(e);
    }
    return j;
}

inline ReproduceReport reproduce(const RunConfig& cfg, const std::string& out_dir) {
    {
        std::vector<std::string> violations = validate_config(cfg);
        if (!violations.empty()) {
            std::string msg = "configuration invalid:";
            for (const std::string& v : violations) msg += "\n  - " + v;
            throw Error(Error::Kind::Config, msg);
        }
    }
    std::filesystem::create_directories(out_dir);
    const int size_c = cfg.reproduce.coarse_size;
    const int size_f = 2 * size_c;
    const int total = cfg.reproduce.count;
    const int n_train = cfg.reproduce.train_count;
    const int win = static_cast<int>(cfg.reproduce.profile_win);

    // Per-image artifacts of the data-preparation chain.
    struct Prepared {
        Image2D test;   // upsampled, normalized degraded observation
        Image2D label;  // classic-pipeline binary mask
        std::vector<QuadCurve> curves;  // coarse-grid centerlines
    };
    std::vector<Prepared> prepared(static_cast<size_t>(total));

    Psf psf_c = gaussian_psf(cfg.degrade.psf_sigma_px, cfg.degrade.psf_radius_px);
    WaveletSpec wspec;
    wspec.family =
        cfg.dwdc.wavelet == "db4" ? WaveletFamily::Daubechies4 : WaveletFamily::Haar;
    wspec.levels = cfg.dwdc.levels;
    wspec.threshold_mode =
        cfg.dwdc.shrink == "hard" ? ThresholdMode::Hard : ThresholdMode::Soft;
    if (cfg.dwdc.threshold >= 0.0) wspec.threshold_value = cfg.dwdc.threshold;
    LrSpec lrspec;
    lrspec.psf = gaussian_psf(cfg.dwdc.lr_sigma_px, cfg.dwdc.lr_radius_px);
    lrspec.iterations = cfg.dwdc.lr_iters;
    BinarizeMethod bin = cfg.dwdc.binarize == "fixed"
                             ? BinarizeMethod::fixed(cfg.dwdc.binarize_threshold)
                             : BinarizeMethod::otsu();

    for (int p = 0; p < total; ++p) {
        PhantomSpec ps;
        ps.width = size_c;
        ps.height = size_c;
        ps.n_filaments = cfg.phantom.n_filaments;
        ps.thickness_px = cfg.phantom.thickness_px;
        ps.intensity = cfg.phantom.intensity;
        ps.curvature = cfg.phantom.curvature;
        ps.seed = cfg.seed + static_cast<uint64_t>(p);
        std::vector<QuadCurve> curves;
        Image2D truth = generate_phantom(ps, &curves);
        truth.pixel_pitch_nm = cfg.phantom.pixel_pitch_nm;

        DegradationSpec ds;
        ds.psf = psf_c;
        ds.noise_kind = cfg.degrade.noise == "none"
                            ? NoiseKind::None
                            : (cfg.degrade.noise == "poisson" ? NoiseKind::Poisson
                                                              : NoiseKind::Gaussian);
        ds.noise_param = cfg.degrade.noise_param;
        ds.noise_relative = cfg.degrade.noise_relative;
        ds.seed = cfg.seed + 7777 + static_cast<uint64_t>(p);
        Image2D observed = degrade(truth, ds);

        Image2D cleaned = threshold_denoise(observed, cfg.preprocess.denoise_k);
        Image2D up = gaussian_upsample_x2(cleaned, cfg.preprocess.upsample_sigma_px);

        Prepared& pr = prepared[static_cast<size_t>(p)];
        pr.test = normalize_unit(up);
        bool label_degenerate = false;
        pr.label = make_label(up, wspec, lrspec, bin, &label_degenerate);
        pr.curves = curves;
    }

    // Dataset from the training split.
    std::vector<Image2D> train_orig, train_label;
    for (int p = 0; p < n_train; ++p) {
        train_orig.push_back(prepared[static_cast<size_t>(p)].test);
        train_label.push_back(prepared[static_cast<size_t>(p)].label);
    }
    std::string dataset_dir = (std::filesystem::path(out_dir) / "dataset").string();
    DatasetManifest manifest = build_dataset(train_orig, train_label, size_f, dataset_dir,
                                             "train", cfg.dataset.w0, cfg.dataset.sigma_w);

    AnetConfig net_cfg;
    net_cfg.depth = cfg.train.depth;
    net_cfg.base_channels = cfg.train.base_channels;
    TrainOptions topts;
    topts.epochs = cfg.reproduce.epochs;
    topts.lr = cfg.train.lr;
    topts.seed = cfg.seed;
    topts.checkpoint_every = cfg.train.checkpoint_every;
    topts.checkpoint_prefix = (std::filesystem::path(out_dir) / "model").string();
    TrainResult tr = train(manifest, net_cfg, topts);
    save_checkpoint(topts.checkpoint_prefix + "_final", tr.model, &tr.adam, topts.epochs);
    save_training_log(tr.log_lines, (std::filesystem::path(out_dir) / "training_log.csv").string());

    // Held-out evaluation: predict, postprocess, measure widths.
    ReproduceReport report;
    report.count = total;
    report.train_count = n_train;
    report.held_out = total - n_train;
    report.epochs = topts.epochs;
    report.first_epoch_mean_loss = tr.first_epoch_mean_loss;
    report.final_epoch_mean_loss = tr.final_epoch_mean_loss;
    std::vector<double> test_fwhm, result_fwhm;
    std::filesystem::path held_dir = std::filesystem::path(out_dir) / "heldout";
    std::filesystem::create_directories(held_dir);
    for (int p = n_train; p < total; ++p) {
        const Prepared& pr = prepared[static_cast<size_t>(p)];
        Image2D prob = predict_image(tr.model, pr.test, 0);
        Image2D result = postprocess_result(prob, pr.test, cfg.predict.threshold);
        char tag[32];
        std::snprintf(tag, sizeof(tag), "%03d", p - n_train);
        save_image(pr.test, (held_dir / ("test_" + std::string(tag) + ".f32")).string(),
                   SourceDepth::F32);
        save_image(prob, (held_dir / ("prob_" + std::string(tag) + ".f32")).string(),
                   SourceDepth::F32);
        save_image(result, (held_dir / ("result_" + std::string(tag) + ".f32")).string(),
                   SourceDepth::F32);

        // Centerlines on the fine grid: coordinates double under 2x upsampling.
        std::vector<QuadCurve> fine;
        for (const QuadCurve& c : pr.curves) {
            QuadCurve f = c;
            f.p0x *= 2.0, f.p0y *= 2.0, f.p1x *= 2.0, f.p1y *= 2.0, f.p2x *= 2.0, f.p2y *= 2.0;
            fine.push_back(f);
        }
        for (size_t ci = 0; ci < fine.size(); ++ci) {
            ReproduceFilament fil;
            fil.image = p - n_train;
            fil.filament = static_cast<int>(ci);
            std::vector<QuadCurve> others;
            for (size_t k = 0; k < fine.size(); ++k)
                if (k != ci) others.push_back(fine[k]);
            std::vector<SiteCandidate> sites = pick_sites(fine[ci], others, size_f, win, 5);
            for (const SiteCandidate& s : sites) {
                try {
                    FwhmResult ft = fwhm(site_profile(pr.test, s, win));
                    FwhmResult fr = fwhm(site_profile(result, s, win));
                    fil.measurable = true;
                    fil.site_row = s.row;
                    fil.site_col = s.col;
                    fil.site_steep = s.steep;
                    fil.test_fwhm_nm = ft.fwhm_nm;
                    fil.result_fwhm_nm = fr.fwhm_nm;
                    break;
                } catch (const Error& e) {
                    if (e.kind() != Error::Kind::NoPeak) throw;
                }
            }
            if (fil.measurable) {
                test_fwhm.push_back(fil.test_fwhm_nm);
                result_fwhm.push_back(fil.result_fwhm_nm);
                ++report.measured;
            } else {
                ++report.unmeasurable;
            }
            report.filaments.push_back(fil);
        }
    }
    if (!test_fwhm.empty()) {
        report.median_test_fwhm_nm = median_of(test_fwhm);
        report.median_result_fwhm_nm = median_of(result_fwhm);
        report.fwhm_ratio = report.median_result_fwhm_nm / report.median_test_fwhm_nm;
    }
    int total_fil = report.measured + report.unmeasurable;
    report.measurable_fraction =
        total_fil > 0 ? static_cast<double>(report.measured) / total_fil : 0.0;

    std::ofstream out(std::filesystem::path(out_dir) / "report.json");
    if (!out) throw Error(Error::Kind::Io, "cannot write report in " + out_dir);
    out << reproduce_report_json(report).dump(2) << "\n";
    return report;
}

}  // namespace fsr
