#pragma once

#include <cmath>
#include <fstream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "fsr/error.hpp"
#include "fsr/image.hpp"
#include "fsr/label.hpp"
#include "fsr/train.hpp"

namespace fsr {

// result = binarize(prediction, fixed threshold) * test, elementwise.
inline Image2D postprocess_result(const Image2D& prediction, const Image2D& test,
                                  double threshold = 0.5) {
    if (prediction.width != test.width || prediction.height != test.height)
        throw Error(Error::Kind::Shape, "prediction/test image dimensions differ");
    Image2D mask = binarize_fixed(prediction, threshold);
    Image2D out = test;
    for (size_t i = 0; i < out.values.size(); ++i) out.values[i] *= mask.values[i];
    return out;
}

constexpr double kPsnrInfinite = std::numeric_limits<double>::infinity();

inline double default_max_val(const Image2D& img) {
    switch (img.source_depth) {
        case SourceDepth::U8: return 255.0;
        case SourceDepth::U16: return 65535.0;
        case SourceDepth::F32: return 255.0;
    }
    return 255.0;
}

// 10*log10(max^2 / MSE); identical images return the +infinity sentinel.
inline double psnr(const Image2D& a, const Image2D& b, double max_val) {
    if (a.width != b.width || a.height != b.height)
        throw Error(Error::Kind::Shape, "images for PSNR must share dimensions");
    if (!(max_val > 0.0)) throw Error(Error::Kind::Param, "PSNR dynamic range must be positive");
    double mse = 0.0;
    for (size_t i = 0; i < a.values.size(); ++i) {
        double d = a.values[i] - b.values[i];
        mse += d * d;
    }
    mse /= static_cast<double>(a.values.size());
    if (mse == 0.0) return kPsnrInfinite;
    return 10.0 * std::log10(max_val * max_val / mse);
}

namespace detail {

inline std::vector<double> ssim_window() {
    // 11x11 Gaussian, sigma 1.5, normalized to sum 1.
    std::vector<double> w(11 * 11);
    double sum = 0.0;
    for (int y = 0; y < 11; ++y)
        for (int x = 0; x < 11; ++x) {
            double dy = y - 5.0, dx = x - 5.0;
            double v = std::exp(-(dx * dx + dy * dy) / (2.0 * 1.5 * 1.5));
            w[static_cast<size_t>(y) * 11 + x] = v;
            sum += v;
        }
    for (double& v : w) v /= sum;
    return w;
}

}  // namespace detail

// Mean local SSIM over valid (fully interior) 11x11 windows, Gaussian
// weighted with sigma 1.5; K1 = 0.01, K2 = 0.03 on the given dynamic range.
inline double ssim(const Image2D& a, const Image2D& b, double dynamic_range = 255.0) {
    if (a.width != b.width || a.height != b.height)
        throw Error(Error::Kind::Shape, "images for SSIM must share dimensions");
    if (a.width < 11 || a.height < 11)
        throw Error(Error::Kind::Shape, "SSIM needs at least 11x11 images");
    if (!(dynamic_range > 0.0))
        throw Error(Error::Kind::Param, "SSIM dynamic range must be positive");
    static const std::vector<double> win = detail::ssim_window();
    const double c1 = (0.01 * dynamic_range) * (0.01 * dynamic_range);
    const double c2 = (0.03 * dynamic_range) * (0.03 * dynamic_range);
    double acc = 0.0;
    long count = 0;
    for (int y = 0; y + 11 <= a.height; ++y) {
        for (int x = 0; x + 11 <= a.width; ++x) {
            double mu_a = 0, mu_b = 0;
            for (int wy = 0; wy < 11; ++wy)
                for (int wx = 0; wx < 11; ++wx) {
                    double wv = win[static_cast<size_t>(wy) * 11 + wx];
                    mu_a += wv * a.at(y + wy, x + wx);
                    mu_b += wv * b.at(y + wy, x + wx);
                }
            double var_a = 0, var_b = 0, cov = 0;
            for (int wy = 0; wy < 11; ++wy)
                for (int wx = 0; wx < 11; ++wx) {
                    double wv = win[static_cast<size_t>(wy) * 11 + wx];
                    double da = a.at(y + wy, x + wx) - mu_a;
                    double db = b.at(y + wy, x + wx) - mu_b;
                    var_a += wv * da * da;
                    var_b += wv * db * db;
                    cov += wv * da * db;
                }
            double num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2);
            double den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2);
            acc += num / den;
            ++count;
        }
    }
    return acc / static_cast<double>(count);
}

struct LineProfile {
    std::vector<double> positions_nm;  // strictly increasing, uniform spacing
    std::vector<double> intensities;
};

// Horizontal intensity profile along a row over [col_begin, col_end).
inline LineProfile line_profile(const Image2D& img, int row, int col_begin, int col_end) {
    if (row < 0 || row >= img.height)
        throw Error(Error::Kind::Index, "profile row out of bounds");
    if (col_begin < 0 || col_end > img.width || col_begin >= col_end)
        throw Error(Error::Kind::Index, "profile column span out of bounds");
    LineProfile p;
    for (int x = col_begin; x < col_end; ++x) {
        p.positions_nm.push_back(static_cast<double>(x) * img.pixel_pitch_nm);
        p.intensities.push_back(img.at(row, x));
    }
    return p;
}

// Vertical profile along a column over [row_begin, row_end).
inline LineProfile column_profile(const Image2D& img, int col, int row_begin, int row_end) {
    if (col < 0 || col >= img.width)
        throw Error(Error::Kind::Index, "profile column out of bounds");
    if (row_begin < 0 || row_end > img.height || row_begin >= row_end)
        throw Error(Error::Kind::Index, "profile row span out of bounds");
    LineProfile p;
    for (int y = row_begin; y < row_end; ++y) {
        p.positions_nm.push_back(static_cast<double>(y) * img.pixel_pitch_nm);
        p.intensities.push_back(img.at(y, col));
    }
    return p;
}

inline void save_profile_csv(const LineProfile& p, const std::string& path) {
    std::filesystem::path fp(path);
    if (fp.has_parent_path()) std::filesystem::create_directories(fp.parent_path());
    std::ofstream out(path);
    if (!out) throw Error(Error::Kind::Io, "cannot write profile CSV: " + path);
    out << "position_nm,intensity\n";
    for (size_t i = 0; i < p.positions_nm.size(); ++i)
        out << format_double(p.positions_nm[i]) << "," << format_double(p.intensities[i]) << "\n";
}

struct FwhmResult {
    double fwhm_nm = 0.0;
    double peak_position_nm = 0.0;
    bool multimodal = false;  // intensity exceeds half level outside the measured peak
};

// Full width at half maximum of the global-max peak.  Baseline is the
// profile minimum; crossings are linearly interpolated on each side.
// Throws a no-peak error when either side never drops through the half
// level; flags multimodality when samples outside the measured peak stand
// above the half level.
inline FwhmResult fwhm(const LineProfile& profile) {
    const std::vector<double>& v = profile.intensities;
    const std::vector<double>& pos = profile.positions_nm;
    if (v.size() < 3) throw Error(Error::Kind::NoPeak, "profile too short for a peak");
    size_t peak = 0;
    for (size_t i = 1; i < v.size(); ++i)
        if (v[i] > v[peak]) peak = i;
    double baseline = v[0];
    for (double x : v) baseline = std::min(baseline, x);
    double half = baseline + (v[peak] - baseline) / 2.0;
    if (!(v[peak] > baseline))
        throw Error(Error::Kind::NoPeak, "profile is flat; no peak above baseline");

    // Left crossing: first descent through the half level moving left.
    std::optional<double> left;
    for (size_t i = peak; i > 0; --i) {
        if (v[i] >= half && v[i - 1] < half) {
            double f = (half - v[i - 1]) / (v[i] - v[i - 1]);
            left = pos[i - 1] + f * (pos[i] - pos[i - 1]);
            break;
        }
    }
    std::optional<double> right;
    for (size_t i = peak; i + 1 < v.size(); ++i) {
        if (v[i] >= half && v[i + 1] < half) {
            double f = (v[i] - half) / (v[i] - v[i + 1]);
            right = pos[i] + f * (pos[i + 1] - pos[i]);
            break;
        }
    }
    if (!left || !right)
        throw Error(Error::Kind::NoPeak, "half-maximum crossing missing on one side of the peak");
    FwhmResult res;
    res.fwhm_nm = *right - *left;
    res.peak_position_nm = pos[peak];
    for (size_t i = 0; i < v.size(); ++i) {
        if (pos[i] < *left - 1e-12 || pos[i] > *right + 1e-12) {
            if (v[i] > half) {
                res.multimodal = true;
                break;
            }
        }
    }
    return res;
}

struct QualityReport {
    double psnr_db = 0.0;
    bool psnr_infinite = false;
    double ssim_value = 0.0;
    std::optional<double> fwhm_nm;
    bool fwhm_multimodal = false;
    std::string notes;
};

inline nlohmann::json quality_report_json(const QualityReport& r) {
    nlohmann::json j;
    if (r.psnr_infinite)
        j["psnr_db"] = nullptr;
    else
        j["psnr_db"] = r.psnr_db;
    j["psnr_infinite"] = r.psnr_infinite;
    j["ssim"] = r.ssim_value;
    if (r.fwhm_nm)
        j["fwhm_nm"] = *r.fwhm_nm;
    else
        j["fwhm_nm"] = nullptr;
    j["fwhm_multimodal"] = r.fwhm_multimodal;
    if (!r.notes.empty()) j["notes"] = r.notes;
    return j;
}

inline QualityReport quality_report(const Image2D& a, const Image2D& b, double max_val) {
    QualityReport r;
    double p = psnr(a, b, max_val);
    if (std::isinf(p)) {
        r.psnr_infinite = true;
    } else {
        r.psnr_db = p;
    }
    r.ssim_value = ssim(a, b, max_val);
    return r;
}

}  // namespace fsr
