#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "fsr/error.hpp"
#include "fsr/network.hpp"

namespace fsr {

struct AdamState {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    int64_t t = 0;                        // completed steps
    std::vector<std::vector<double>> m;   // first-moment estimate, per parameter
    std::vector<std::vector<double>> v;   // second-moment estimate, per parameter
};

inline AdamState make_adam(const AnetModel& model, double lr) {
    if (!(lr > 0.0) || !std::isfinite(lr))
        throw Error(Error::Kind::Param, "learning rate must be positive and finite");
    AdamState s;
    s.lr = lr;
    s.m.reserve(model.params.size());
    s.v.reserve(model.params.size());
    for (const Param& p : model.params) {
        s.m.emplace_back(p.count(), 0.0);
        s.v.emplace_back(p.count(), 0.0);
    }
    return s;
}

// Standard bias-corrected Adam update using the gradients stored in the
// model parameters.  Mutates parameters and optimizer state; t advances by 1.
inline void adam_step(AdamState& state, AnetModel& model) {
    if (state.m.size() != model.params.size() || state.v.size() != model.params.size())
        throw Error(Error::Kind::Shape, "optimizer state does not match model layout");
    state.t += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
    for (size_t pi = 0; pi < model.params.size(); ++pi) {
        Param& p = model.params[pi];
        std::vector<double>& m = state.m[pi];
        std::vector<double>& v = state.v[pi];
        if (m.size() != p.count() || v.size() != p.count())
            throw Error(Error::Kind::Shape,
                        "optimizer state size mismatch for parameter " + p.name);
        for (size_t i = 0; i < p.value.size(); ++i) {
            double g = p.grad[i];
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g;
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g * g;
            double mhat = m[i] / bc1;
            double vhat = v[i] / bc2;
            p.value[i] -= state.lr * mhat / (std::sqrt(vhat) + state.epsilon);
        }
    }
}

}  // namespace fsr
