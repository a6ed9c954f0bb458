#pragma once

#include <array>
#include <cmath>
#include <vector>

#include "fsr/deconv.hpp"
#include "fsr/error.hpp"
#include "fsr/image.hpp"
#include "fsr/wavelet.hpp"

namespace fsr {

struct BinarizeMethod {
    enum class Kind { Otsu, Fixed };
    Kind kind = Kind::Otsu;
    double threshold = 0.5;  // used by Fixed

    static BinarizeMethod otsu() { return {Kind::Otsu, 0.0}; }
    static BinarizeMethod fixed(double t) { return {Kind::Fixed, t}; }
};

// Otsu's threshold over a 256-bin histogram of max-normalized intensities;
// maximizes the between-class variance.  Returns the raw-value threshold via
// threshold_out; foreground is every pixel whose bin lies above the split.
inline Image2D binarize_otsu(const Image2D& img, double* threshold_out = nullptr) {
    double maxv = img.max_value();
    if (maxv <= 0.0)
        throw Error(Error::Kind::DegenerateHistogram,
                    "cannot binarize: image has no positive values");
    std::array<long, 256> hist{};
    std::vector<int> bins(img.size());
    for (size_t i = 0; i < img.size(); ++i) {
        int b = static_cast<int>(img.values[i] / maxv * 256.0);
        if (b > 255) b = 255;
        if (b < 0) b = 0;
        bins[i] = b;
        ++hist[b];
    }
    double total = static_cast<double>(img.size());
    double grand = 0.0;
    for (int b = 0; b < 256; ++b) grand += static_cast<double>(hist[b]) * b;
    double best_var = -1.0;
    int best_k = -1;
    double w0 = 0.0, sum0 = 0.0;
    for (int k = 0; k < 255; ++k) {
        w0 += hist[k];
        sum0 += static_cast<double>(hist[k]) * k;
        double w1 = total - w0;
        if (w0 == 0.0 || w1 == 0.0) continue;
        double m0 = sum0 / w0;
        double m1 = (grand - sum0) / w1;
        double var = w0 * w1 * (m0 - m1) * (m0 - m1);
        if (var > best_var) {
            best_var = var;
            best_k = k;
        }
    }
    if (best_k < 0)
        throw Error(Error::Kind::DegenerateHistogram,
                    "cannot binarize: all intensities fall in one histogram bin");
    Image2D out(img.width, img.height, img.pixel_pitch_nm, img.source_depth);
    for (size_t i = 0; i < img.size(); ++i)
        out.values[i] = bins[i] > best_k ? 1.0 : 0.0;
    if (threshold_out) *threshold_out = (best_k + 1) / 256.0 * maxv;
    return out;
}

inline Image2D binarize_fixed(const Image2D& img, double threshold) {
    Image2D out(img.width, img.height, img.pixel_pitch_nm, img.source_depth);
    for (size_t i = 0; i < img.size(); ++i)
        out.values[i] = img.values[i] > threshold ? 1.0 : 0.0;
    return out;
}

inline Image2D binarize(const Image2D& img, const BinarizeMethod& method,
                        double* threshold_out = nullptr) {
    if (method.kind == BinarizeMethod::Kind::Otsu) return binarize_otsu(img, threshold_out);
    if (threshold_out) *threshold_out = method.threshold;
    return binarize_fixed(img, method.threshold);
}

// Label synthesis chain: wavelet denoise -> Richardson-Lucy -> Otsu.
// Degenerate inputs (all zero, or featureless after denoising/deconvolution)
// produce an all-zero label with *warning set rather than an error — a blank
// label is the correct training target for a structureless image.
inline Image2D make_label(const Image2D& preprocessed, const WaveletSpec& wspec,
                          const LrSpec& lspec, const BinarizeMethod& method = BinarizeMethod::otsu(),
                          bool* warning = nullptr) {
    if (warning) *warning = false;
    auto zero_label = [&]() {
        if (warning) *warning = true;
        Image2D z(preprocessed.width, preprocessed.height, preprocessed.pixel_pitch_nm,
                  preprocessed.source_depth);
        return z;
    };
    if (preprocessed.max_value() <= 0.0) return zero_label();
    Image2D denoised = wavelet_denoise(preprocessed, wspec);
    if (denoised.max_value() <= 0.0) return zero_label();
    bool lr_zero = false;
    Image2D deconvolved = lucy_richardson(denoised, lspec, &lr_zero);
    if (lr_zero) return zero_label();
    try {
        return binarize(deconvolved, method);
    } catch (const Error& e) {
        if (e.kind() == Error::Kind::DegenerateHistogram) return zero_label();
        throw;
    }
}

}  // namespace fsr
