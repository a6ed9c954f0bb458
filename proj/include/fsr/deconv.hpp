#pragma once

#include <cmath>
#include <vector>

#include "fsr/error.hpp"
#include "fsr/image.hpp"
#include "fsr/synth.hpp"

namespace fsr {

struct LrSpec {
    Psf psf;
    int iterations = 20;
    double epsilon = 1e-12;  // division guard
};

inline void validate_lr_spec(const LrSpec& spec) {
    if (spec.iterations < 1)
        throw Error(Error::Kind::Param, "deconvolution iteration count must be at least 1");
    if (!(spec.epsilon > 0.0) || spec.epsilon > 1e-3)
        throw Error(Error::Kind::Param, "division guard must lie in (0, 1e-3]");
    double sum = 0.0;
    for (double v : spec.psf.kernel) {
        if (v < 0.0) throw Error(Error::Kind::Param, "PSF entries must be non-negative");
        sum += v;
    }
    if (std::fabs(sum - 1.0) > 1e-6)
        throw Error(Error::Kind::Param, "PSF must be normalized to sum 1");
}

inline Psf rotate180(const Psf& p) {
    Psf out = p;
    size_t n = p.kernel.size();
    for (size_t i = 0; i < n; ++i) out.kernel[i] = p.kernel[n - 1 - i];
    return out;
}

// Richardson-Lucy multiplicative deblurring:
//   u <- u .* ( (d ./ max(u (*) p, eps)) (*) rot180(p) ),  u0 = d.
// Reflect boundaries keep the correction kernel an exact adjoint, so total
// intensity is conserved and the Poisson likelihood is non-decreasing on
// noiseless data.  An all-zero observation short-circuits to zeros and sets
// *zero_input_warning.
inline Image2D lucy_richardson(const Image2D& observed, const LrSpec& spec,
                               bool* zero_input_warning = nullptr) {
    validate_lr_spec(spec);
    for (double v : observed.values)
        if (v < 0.0)
            throw Error(Error::Kind::Range, "deconvolution input must be non-negative");
    if (zero_input_warning) *zero_input_warning = false;
    if (observed.max_value() <= 0.0) {
        if (zero_input_warning) *zero_input_warning = true;
        return observed;
    }
    Psf flipped = rotate180(spec.psf);
    Image2D u = observed;
    Image2D ratio(observed.width, observed.height, observed.pixel_pitch_nm,
                  observed.source_depth);
    for (int it = 0; it < spec.iterations; ++it) {
        Image2D blur = convolve2d(u, spec.psf, Boundary::Reflect);
        for (size_t i = 0; i < ratio.values.size(); ++i) {
            double denom = blur.values[i] > spec.epsilon ? blur.values[i] : spec.epsilon;
            ratio.values[i] = observed.values[i] / denom;
        }
        Image2D corr = convolve2d(ratio, flipped, Boundary::Reflect);
        for (size_t i = 0; i < u.values.size(); ++i) u.values[i] *= corr.values[i];
    }
    return u;
}

// Poisson log-likelihood sum(d ln(u*p) - u*p), the quantity Richardson-Lucy
// ascends; exposed for the monotonicity checks.
inline double poisson_log_likelihood(const Image2D& observed, const Image2D& estimate,
                                     const Psf& psf, double eps = 1e-12) {
    Image2D blur = convolve2d(estimate, psf, Boundary::Reflect);
    double ll = 0.0;
    for (size_t i = 0; i < observed.values.size(); ++i) {
        double b = blur.values[i];
        if (observed.values[i] > 0.0)
            ll += observed.values[i] * std::log(b > eps ? b : eps);
        ll -= b;
    }
    return ll;
}

}  // namespace fsr
