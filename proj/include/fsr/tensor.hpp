#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "fsr/error.hpp"

namespace fsr {

// Rank-4 array (batch, channel, height, width), row-major within (C, H, W).
struct Tensor4 {
    int n = 0, c = 0, h = 0, w = 0;
    std::vector<double> v;

    Tensor4() = default;
    Tensor4(int n_, int c_, int h_, int w_) : n(n_), c(c_), h(h_), w(w_) {
        if (n_ <= 0 || c_ <= 0 || h_ <= 0 || w_ <= 0)
            throw Error(Error::Kind::Shape, "tensor dimensions must be positive");
        v.assign(static_cast<size_t>(n_) * c_ * h_ * w_, 0.0);
    }

    size_t size() const { return v.size(); }

    size_t index(int in, int ic, int iy, int ix) const {
        return ((static_cast<size_t>(in) * c + ic) * h + iy) * w + ix;
    }
    double& at(int in, int ic, int iy, int ix) { return v[index(in, ic, iy, ix)]; }
    double at(int in, int ic, int iy, int ix) const { return v[index(in, ic, iy, ix)]; }

    // Pointer to the start of one (n, c) plane.
    double* plane(int in, int ic) { return &v[index(in, ic, 0, 0)]; }
    const double* plane(int in, int ic) const { return &v[index(in, ic, 0, 0)]; }

    bool same_shape(const Tensor4& o) const {
        return n == o.n && c == o.c && h == o.h && w == o.w;
    }
    std::string shape_str() const {
        return "(" + std::to_string(n) + "," + std::to_string(c) + "," +
               std::to_string(h) + "," + std::to_string(w) + ")";
    }
};

}  // namespace fsr
