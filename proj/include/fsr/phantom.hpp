#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "fsr/error.hpp"
#include "fsr/image.hpp"
#include "fsr/rng.hpp"

namespace fsr {

// Quadratic Bezier curve; control points in pixel coordinates (x, y).
struct QuadCurve {
    double p0x, p0y;
    double p1x, p1y;
    double p2x, p2y;

    void point(double t, double& x, double& y) const {
        double u = 1.0 - t;
        x = u * u * p0x + 2.0 * t * u * p1x + t * t * p2x;
        y = u * u * p0y + 2.0 * t * u * p1y + t * t * p2y;
    }
    void tangent(double t, double& dx, double& dy) const {
        dx = 2.0 * (1.0 - t) * (p1x - p0x) + 2.0 * t * (p2x - p1x);
        dy = 2.0 * (1.0 - t) * (p1y - p0y) + 2.0 * t * (p2y - p1y);
    }
    double chord_length() const {
        return std::hypot(p1x - p0x, p1y - p0y) + std::hypot(p2x - p1x, p2y - p1y);
    }
};

struct PhantomSpec {
    int width = 64;
    int height = 64;
    int n_filaments = 1;
    double thickness_px = 1.0;   // cross-section FWHM in pixels
    double intensity = 1.0;
    double curvature = 0.3;      // 0 = straight segments
    uint64_t seed = 0;
};

inline void validate_phantom_spec(const PhantomSpec& s) {
    if (s.width <= 0 || s.height <= 0)
        throw Error(Error::Kind::Param, "phantom dimensions must be positive");
    if (s.n_filaments < 1)
        throw Error(Error::Kind::Param, "phantom needs at least one filament");
    if (s.thickness_px < 0.5)
        throw Error(Error::Kind::Param, "filament thickness must be at least 0.5 px");
    if (s.intensity <= 0.0)
        throw Error(Error::Kind::Param, "filament intensity must be positive");
    if (s.curvature < 0.0)
        throw Error(Error::Kind::Param, "curvature must be non-negative");
}

// Renders seeded random smooth filaments: long quadratic curves with a
// Gaussian cross-section of FWHM = thickness_px, combined by maximum.
// Background is exactly 0.  Curve geometry is returned through curves_out
// so measurement code can pick profile sites analytically.
inline Image2D generate_phantom(const PhantomSpec& spec,
                                std::vector<QuadCurve>* curves_out = nullptr) {
    validate_phantom_spec(spec);
    const int w = spec.width, h = spec.height;
    Rng rng(spec.seed);
    Image2D img(w, h);
    const double sigma_c = spec.thickness_px / 2.3548200450309493;  // FWHM -> sigma
    const double cutoff = 4.0 * sigma_c;
    const double min_span = 0.6 * std::min(w, h);
    std::vector<QuadCurve> curves;

    std::vector<double> dist2(img.size());
    for (int f = 0; f < spec.n_filaments; ++f) {
        double p0x = rng.uniform(0, w - 1), p0y = rng.uniform(0, h - 1);
        double p2x = rng.uniform(0, w - 1), p2y = rng.uniform(0, h - 1);
        while (std::hypot(p2x - p0x, p2y - p0y) < min_span) {
            p0x = rng.uniform(0, w - 1);
            p0y = rng.uniform(0, h - 1);
            p2x = rng.uniform(0, w - 1);
            p2y = rng.uniform(0, h - 1);
        }
        double span = std::hypot(p2x - p0x, p2y - p0y);
        double perpx = -(p2y - p0y) / (span + 1e-12);
        double perpy = (p2x - p0x) / (span + 1e-12);
        double offset = rng.normal(0.0, spec.curvature * span / 4.0);
        QuadCurve c{p0x, p0y,
                    (p0x + p2x) / 2.0 + perpx * offset,
                    (p0y + p2y) / 2.0 + perpy * offset,
                    p2x, p2y};
        curves.push_back(c);

        // Min squared distance to a dense polyline sampling of the curve;
        // sample step <= 0.25 px so quantization is far below thickness.
        std::fill(dist2.begin(), dist2.end(), 1e18);
        int n_samples = std::max(400, static_cast<int>(std::ceil(4.0 * c.chord_length())));
        int box = static_cast<int>(std::ceil(cutoff)) + 1;
        for (int s = 0; s <= n_samples; ++s) {
            double t = static_cast<double>(s) / n_samples;
            double px, py;
            c.point(t, px, py);
            int y0 = std::max(0, static_cast<int>(std::floor(py)) - box);
            int y1 = std::min(h - 1, static_cast<int>(std::ceil(py)) + box);
            int x0 = std::max(0, static_cast<int>(std::floor(px)) - box);
            int x1 = std::min(w - 1, static_cast<int>(std::ceil(px)) + box);
            for (int y = y0; y <= y1; ++y) {
                double dy = y - py;
                for (int x = x0; x <= x1; ++x) {
                    double dx = x - px;
                    double d2 = dx * dx + dy * dy;
                    double& cell = dist2[static_cast<size_t>(y) * w + x];
                    if (d2 < cell) cell = d2;
                }
            }
        }
        double c2 = cutoff * cutoff;
        double denom = 2.0 * sigma_c * sigma_c;
        for (size_t i = 0; i < img.size(); ++i) {
            if (dist2[i] <= c2) {
                double v = spec.intensity * std::exp(-dist2[i] / denom);
                if (v > img.values[i]) img.values[i] = v;
            }
        }
    }
    if (img.max_value() <= 0.0)
        throw Error(Error::Kind::Param, "degenerate phantom spec: rendered image is empty");
    if (curves_out) *curves_out = std::move(curves);
    return img;
}

}  // namespace fsr
