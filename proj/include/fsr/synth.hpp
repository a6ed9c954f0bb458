#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "fsr/error.hpp"
#include "fsr/image.hpp"
#include "fsr/parallel.hpp"
#include "fsr/rng.hpp"

namespace fsr {

// Normalized 2D point-spread kernel with odd side length.
struct Psf {
    int side = 0;  // odd
    double sigma_px = 0.0;
    std::vector<double> kernel;  // row-major, sums to 1

    double at(int y, int x) const {
        return kernel[static_cast<size_t>(y) * side + x];
    }
    int radius() const { return side / 2; }
};

inline Psf gaussian_psf(double sigma_px, int radius_px) {
    if (sigma_px <= 0.0)
        throw Error(Error::Kind::Param, "PSF sigma must be positive");
    if (radius_px < 1)
        throw Error(Error::Kind::Param, "PSF radius must be at least 1");
    Psf p;
    p.side = 2 * radius_px + 1;
    p.sigma_px = sigma_px;
    p.kernel.resize(static_cast<size_t>(p.side) * p.side);
    double sum = 0.0;
    for (int y = -radius_px; y <= radius_px; ++y) {
        for (int x = -radius_px; x <= radius_px; ++x) {
            double v = std::exp(-(static_cast<double>(y) * y + static_cast<double>(x) * x) /
                                (2.0 * sigma_px * sigma_px));
            p.kernel[static_cast<size_t>(y + radius_px) * p.side + (x + radius_px)] = v;
            sum += v;
        }
    }
    for (double& v : p.kernel) v /= sum;
    return p;
}

enum class Boundary { Reflect, Zero };

namespace detail {

// Extends img by `pad` pixels on every side.  Reflection is half-sample
// symmetric (index -1 maps to 0), which is self-adjoint for centro-symmetric
// kernels — the property the deconvolution flux/likelihood guarantees rely on.
inline std::vector<double> pad_extend(const Image2D& img, int pad, Boundary boundary) {
    int ph = img.height + 2 * pad, pw = img.width + 2 * pad;
    std::vector<double> ext(static_cast<size_t>(ph) * pw, 0.0);
    for (int y = 0; y < ph; ++y) {
        int sy = y - pad;
        if (boundary == Boundary::Reflect) {
            sy = reflect_index(sy, img.height);
        } else if (sy < 0 || sy >= img.height) {
            continue;  // zero row
        }
        double* dst = &ext[static_cast<size_t>(y) * pw];
        for (int x = 0; x < pw; ++x) {
            int sx = x - pad;
            if (boundary == Boundary::Reflect) {
                sx = reflect_index(sx, img.width);
            } else if (sx < 0 || sx >= img.width) {
                continue;
            }
            dst[x] = img.at(sy, sx);
        }
    }
    return ext;
}

}  // namespace detail

// True 2D convolution (kernel flipped): out(y,x) = sum_k k(a,b) img(y-a+r, x-b+r)
// with the chosen boundary extension.  Output size equals input size.
inline Image2D convolve2d(const Image2D& img, const Psf& psf, Boundary boundary) {
    if (psf.side > img.width || psf.side > img.height)
        throw Error(Error::Kind::Size, "PSF is larger than the image");
    const int r = psf.radius();
    const int pw = img.width + 2 * r;
    std::vector<double> ext = detail::pad_extend(img, r, boundary);
    Image2D out(img.width, img.height, img.pixel_pitch_nm, img.source_depth);
    const int w = img.width;
    // out(y,x) = sum_{a,b} k(a,b) * ext(y + 2r - a, x + 2r - b); each output
    // row is a sum of kernel-weighted contiguous extended rows.
    parallel_for(0, img.height, [&](long y) {
        double* orow = &out.values[static_cast<size_t>(y) * w];
        for (int a = 0; a < psf.side; ++a) {
            const double* erow = &ext[static_cast<size_t>(y + 2 * r - a) * pw];
            for (int b = 0; b < psf.side; ++b) {
                double kv = psf.at(a, b);
                if (kv == 0.0) continue;
                const double* src = erow + (2 * r - b);
                for (int x = 0; x < w; ++x) orow[x] += kv * src[x];
            }
        }
    });
    return out;
}

enum class NoiseKind { None, Gaussian, Poisson };

struct DegradationSpec {
    Psf psf;
    NoiseKind noise_kind = NoiseKind::Gaussian;
    double noise_param = 0.0;     // std for Gaussian; scale for Poisson
    bool noise_relative = false;  // Gaussian std = noise_param * max(blurred)
    uint64_t seed = 0;
};

// Forward observation model: blur the latent image, add seeded noise, clamp
// at zero.  noise_param 0 reproduces the noiseless blur exactly.
inline Image2D degrade(const Image2D& h, const DegradationSpec& spec) {
    for (double v : h.values)
        if (v < 0.0) throw Error(Error::Kind::Range, "latent image must be non-negative");
    if (spec.noise_param < 0.0)
        throw Error(Error::Kind::Param, "noise parameter must be non-negative");
    Image2D out = convolve2d(h, spec.psf, Boundary::Reflect);
    if (spec.noise_kind != NoiseKind::None && spec.noise_param > 0.0) {
        Rng rng(spec.seed);
        if (spec.noise_kind == NoiseKind::Gaussian) {
            double std = spec.noise_param;
            if (spec.noise_relative) std *= out.max_value();
            for (double& v : out.values) v += rng.normal(0.0, std);
        } else {
            double scale = spec.noise_param;
            for (double& v : out.values)
                v = static_cast<double>(rng.poisson(v * scale)) / scale;
        }
    }
    for (double& v : out.values)
        if (v < 0.0) v = 0.0;
    return out;
}

}  // namespace fsr
