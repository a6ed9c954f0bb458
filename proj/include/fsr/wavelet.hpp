#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

#include "fsr/error.hpp"
#include "fsr/image.hpp"

namespace fsr {

enum class WaveletFamily { Haar, Daubechies4 };
enum class ThresholdMode { Soft, Hard };

struct WaveletSpec {
    WaveletFamily family = WaveletFamily::Haar;
    int levels = 2;
    ThresholdMode threshold_mode = ThresholdMode::Soft;
    std::optional<double> threshold_value;  // nullopt = universal threshold
};

struct Band {
    int width = 0;
    int height = 0;
    std::vector<double> v;

    Band() = default;
    Band(int w, int h) : width(w), height(h), v(static_cast<size_t>(w) * h, 0.0) {}
    double& at(int y, int x) { return v[static_cast<size_t>(y) * width + x]; }
    double at(int y, int x) const { return v[static_cast<size_t>(y) * width + x]; }
};

// One decomposition level.  horizontal/vertical/diagonal are the detail
// orientations (horizontal = low-x/high-y, vertical = high-x/low-y,
// diagonal = high/high).  in_width/in_height are the level input dimensions
// before the pad-to-even extension, so the inverse can crop back exactly.
struct DwtLevel {
    Band horizontal, vertical, diagonal;
    int in_width = 0, in_height = 0;
};

struct DwtPyramid {
    std::vector<DwtLevel> levels;  // finest first
    Band approximation;
    WaveletFamily family = WaveletFamily::Haar;
};

namespace detail {

inline std::vector<double> wavelet_lowpass(WaveletFamily family) {
    const double s2 = std::sqrt(2.0);
    if (family == WaveletFamily::Haar) return {1.0 / s2, 1.0 / s2};
    const double s3 = std::sqrt(3.0);
    const double d = 4.0 * s2;
    return {(1.0 + s3) / d, (3.0 + s3) / d, (3.0 - s3) / d, (1.0 - s3) / d};
}

inline std::vector<double> wavelet_highpass(const std::vector<double>& h) {
    size_t L = h.size();
    std::vector<double> g(L);
    for (size_t k = 0; k < L; ++k)
        g[k] = ((k % 2 == 0) ? 1.0 : -1.0) * h[L - 1 - k];
    return g;
}

// Periodic analysis step along a strided 1D signal of even length n.
inline void analyze_1d(const double* x, int n, int stride,
                       const std::vector<double>& h, const std::vector<double>& g,
                       double* a, double* d, int out_stride) {
    int L = static_cast<int>(h.size());
    for (int k = 0; k < n / 2; ++k) {
        double sa = 0.0, sd = 0.0;
        for (int m = 0; m < L; ++m) {
            int i = (2 * k + m) % n;
            double xv = x[static_cast<size_t>(i) * stride];
            sa += h[m] * xv;
            sd += g[m] * xv;
        }
        a[static_cast<size_t>(k) * out_stride] = sa;
        d[static_cast<size_t>(k) * out_stride] = sd;
    }
}

// Periodic synthesis: exact adjoint (= inverse, filters orthonormal).
inline void synthesize_1d(const double* a, const double* d, int half, int in_stride,
                          const std::vector<double>& h, const std::vector<double>& g,
                          double* x, int stride) {
    int n = 2 * half;
    int L = static_cast<int>(h.size());
    for (int i = 0; i < n; ++i) x[static_cast<size_t>(i) * stride] = 0.0;
    for (int k = 0; k < half; ++k) {
        double av = a[static_cast<size_t>(k) * in_stride];
        double dv = d[static_cast<size_t>(k) * in_stride];
        for (int m = 0; m < L; ++m) {
            int i = (2 * k + m) % n;
            x[static_cast<size_t>(i) * stride] += h[m] * av + g[m] * dv;
        }
    }
}

// Edge-replicate pad to even dimensions (at most one row/column).
inline Band pad_to_even(const Band& in) {
    int pw = in.width + (in.width % 2);
    int ph = in.height + (in.height % 2);
    if (pw == in.width && ph == in.height) return in;
    Band out(pw, ph);
    for (int y = 0; y < ph; ++y) {
        int sy = std::min(y, in.height - 1);
        for (int x = 0; x < pw; ++x)
            out.at(y, x) = in.at(sy, std::min(x, in.width - 1));
    }
    return out;
}

}  // namespace detail

inline void validate_wavelet_spec(const WaveletSpec& spec) {
    if (spec.levels < 1)
        throw Error(Error::Kind::Param, "wavelet levels must be at least 1");
    if (spec.threshold_value && *spec.threshold_value < 0.0)
        throw Error(Error::Kind::Param, "wavelet threshold must be non-negative");
}

// Separable orthonormal 2D DWT, one level per recursion on the approximation.
// Odd level inputs are edge-replicated to even size first; the pre-pad
// dimensions are recorded so the inverse crops back, making the roundtrip
// exact for every input size.
inline DwtPyramid dwt2_forward(const Image2D& img, const WaveletSpec& spec) {
    validate_wavelet_spec(spec);
    int min_side = std::min(img.width, img.height);
    if ((1 << spec.levels) > min_side)
        throw Error(Error::Kind::Param,
                    "too many wavelet levels for image size (need side >= 2^levels)");
    auto h = detail::wavelet_lowpass(spec.family);
    auto g = detail::wavelet_highpass(h);

    DwtPyramid pyr;
    pyr.family = spec.family;
    Band cur(img.width, img.height);
    cur.v = img.values;
    for (int lev = 0; lev < spec.levels; ++lev) {
        DwtLevel level;
        level.in_width = cur.width;
        level.in_height = cur.height;
        Band padded = detail::pad_to_even(cur);
        int pw = padded.width, ph = padded.height;
        int hw = pw / 2, hh = ph / 2;
        // Rows first: split along x into low/high halves.
        Band rows_lo(hw, ph), rows_hi(hw, ph);
        for (int y = 0; y < ph; ++y)
            detail::analyze_1d(&padded.at(y, 0), pw, 1, h, g,
                               &rows_lo.at(y, 0), &rows_hi.at(y, 0), 1);
        // Columns: split along y.
        Band ll(hw, hh), lh(hw, hh), hl(hw, hh), hh_band(hw, hh);
        for (int x = 0; x < hw; ++x) {
            detail::analyze_1d(&rows_lo.at(0, x), ph, hw, h, g,
                               &ll.v[x], &lh.v[x], hw);
            detail::analyze_1d(&rows_hi.at(0, x), ph, hw, h, g,
                               &hl.v[x], &hh_band.v[x], hw);
        }
        level.horizontal = std::move(lh);
        level.vertical = std::move(hl);
        level.diagonal = std::move(hh_band);
        pyr.levels.push_back(std::move(level));
        cur = std::move(ll);
    }
    pyr.approximation = std::move(cur);
    return pyr;
}

inline Image2D dwt2_inverse(const DwtPyramid& pyr, const WaveletSpec& spec,
                            double pixel_pitch_nm = 250.0) {
    validate_wavelet_spec(spec);
    if (pyr.levels.empty())
        throw Error(Error::Kind::Pyramid, "pyramid has no levels");
    if (static_cast<int>(pyr.levels.size()) != spec.levels)
        throw Error(Error::Kind::Pyramid, "pyramid level count does not match spec");
    if (pyr.family != spec.family)
        throw Error(Error::Kind::Pyramid, "pyramid family does not match spec");
    auto h = detail::wavelet_lowpass(spec.family);
    auto g = detail::wavelet_highpass(h);

    Band cur = pyr.approximation;
    for (int lev = static_cast<int>(pyr.levels.size()) - 1; lev >= 0; --lev) {
        const DwtLevel& level = pyr.levels[lev];
        int pw = level.in_width + (level.in_width % 2);
        int ph = level.in_height + (level.in_height % 2);
        int hw = pw / 2, hh = ph / 2;
        const Band& lh = level.horizontal;
        const Band& hl = level.vertical;
        const Band& dd = level.diagonal;
        if (cur.width != hw || cur.height != hh ||
            lh.width != hw || lh.height != hh ||
            hl.width != hw || hl.height != hh ||
            dd.width != hw || dd.height != hh)
            throw Error(Error::Kind::Pyramid, "pyramid band shapes are inconsistent");
        // Invert columns: rebuild the row-transform halves.
        Band rows_lo(hw, ph), rows_hi(hw, ph);
        for (int x = 0; x < hw; ++x) {
            detail::synthesize_1d(&cur.v[x], &lh.v[x], hh, hw, h, g, &rows_lo.v[x], hw);
            detail::synthesize_1d(&hl.v[x], &dd.v[x], hh, hw, h, g, &rows_hi.v[x], hw);
        }
        // Invert rows.
        Band padded(pw, ph);
        for (int y = 0; y < ph; ++y)
            detail::synthesize_1d(&rows_lo.at(y, 0), &rows_hi.at(y, 0), hw, 1, h, g,
                                  &padded.at(y, 0), 1);
        // Crop the pad-to-even extension.
        Band next(level.in_width, level.in_height);
        for (int y = 0; y < level.in_height; ++y)
            for (int x = 0; x < level.in_width; ++x)
                next.at(y, x) = padded.at(y, x);
        cur = std::move(next);
    }
    Image2D out(cur.width, cur.height, pixel_pitch_nm);
    out.values = std::move(cur.v);
    return out;
}

// Auto threshold: sigma estimated from the finest diagonal band via the
// median absolute coefficient / 0.6745, scaled by sqrt(2 ln N).
inline double universal_threshold(const DwtPyramid& pyr, size_t n_pixels) {
    const Band& hh = pyr.levels.front().diagonal;
    std::vector<double> mags(hh.v.size());
    for (size_t i = 0; i < hh.v.size(); ++i) mags[i] = std::fabs(hh.v[i]);
    std::sort(mags.begin(), mags.end());
    size_t n = mags.size();
    double med = (n % 2 == 1) ? mags[n / 2] : 0.5 * (mags[n / 2 - 1] + mags[n / 2]);
    double sigma_hat = med / 0.6745;
    return sigma_hat * std::sqrt(2.0 * std::log(static_cast<double>(n_pixels)));
}

inline double apply_threshold(double c, double t, ThresholdMode mode) {
    if (mode == ThresholdMode::Soft) {
        double m = std::fabs(c) - t;
        return m > 0.0 ? (c > 0.0 ? m : -m) : 0.0;
    }
    return std::fabs(c) < t ? 0.0 : c;
}

// Transform, shrink all detail bands (approximation untouched), invert,
// clamp negatives to zero.
inline Image2D wavelet_denoise(const Image2D& img, const WaveletSpec& spec) {
    DwtPyramid pyr = dwt2_forward(img, spec);
    double t = spec.threshold_value ? *spec.threshold_value
                                    : universal_threshold(pyr, img.size());
    for (DwtLevel& level : pyr.levels) {
        for (Band* band : {&level.horizontal, &level.vertical, &level.diagonal})
            for (double& c : band->v) c = apply_threshold(c, t, spec.threshold_mode);
    }
    Image2D out = dwt2_inverse(pyr, spec, img.pixel_pitch_nm);
    out.source_depth = img.source_depth;
    for (double& v : out.values)
        if (v < 0.0) v = 0.0;
    return out;
}

}  // namespace fsr
