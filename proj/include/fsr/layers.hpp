#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "fsr/error.hpp"
#include "fsr/parallel.hpp"
#include "fsr/tensor.hpp"

namespace fsr {

// ---------------------------------------------------------------------------
// Same-padding convolution (cross-correlation), kernel 3x3 or 1x1.
// Weights are [out_ch, in_ch, k, k]; output spatial size equals input size.
// ---------------------------------------------------------------------------

namespace detail {

// Zero-pads one (H, W) plane by p on each side into a (H+2p, W+2p) buffer.
inline void pad_plane(const double* src, int h, int w, int p, std::vector<double>& dst) {
    int pw = w + 2 * p;
    std::fill(dst.begin(), dst.end(), 0.0);
    for (int y = 0; y < h; ++y) {
        double* drow = &dst[static_cast<size_t>(y + p) * pw + p];
        const double* srow = src + static_cast<size_t>(y) * w;
        for (int x = 0; x < w; ++x) drow[x] = srow[x];
    }
}

}  // namespace detail

inline Tensor4 conv2d_same(const Tensor4& x, const Tensor4& weight,
                           const std::vector<double>& bias) {
    const int k = weight.h;
    if (k != weight.w || (k != 1 && k != 3))
        throw Error(Error::Kind::Shape, "convolution kernels must be 1x1 or 3x3");
    if (weight.c != x.c)
        throw Error(Error::Kind::Shape, "convolution input channels mismatch: expected " +
                                            std::to_string(weight.c) + ", got " +
                                            std::to_string(x.c));
    if (static_cast<int>(bias.size()) != weight.n)
        throw Error(Error::Kind::Shape, "convolution bias size mismatch");
    const int p = k / 2;
    const int h = x.h, w = x.w, pw = w + 2 * p;
    Tensor4 out(x.n, weight.n, h, w);
    for (int in = 0; in < x.n; ++in) {
        parallel_for(0, weight.n, [&](long oc) {
            std::vector<double> pad(static_cast<size_t>(h + 2 * p) * pw);
            double* oplane = out.plane(in, static_cast<int>(oc));
            for (size_t i = 0; i < static_cast<size_t>(h) * w; ++i)
                oplane[i] = bias[static_cast<size_t>(oc)];
            for (int ic = 0; ic < x.c; ++ic) {
                detail::pad_plane(x.plane(in, ic), h, w, p, pad);
                for (int a = 0; a < k; ++a) {
                    for (int b = 0; b < k; ++b) {
                        double wv = weight.at(static_cast<int>(oc), ic, a, b);
                        if (wv == 0.0) continue;
                        for (int y = 0; y < h; ++y) {
                            const double* prow = &pad[static_cast<size_t>(y + a) * pw + b];
                            double* orow = oplane + static_cast<size_t>(y) * w;
                            for (int xx = 0; xx < w; ++xx) orow[xx] += wv * prow[xx];
                        }
                    }
                }
            }
        });
    }
    return out;
}

// Gradients of conv2d_same.  d_weight/d_bias accumulate in place (callers
// zero them per step); returns d_input.
inline Tensor4 conv2d_same_backward(const Tensor4& x, const Tensor4& weight,
                                    const Tensor4& d_out, Tensor4& d_weight,
                                    std::vector<double>& d_bias) {
    const int k = weight.h;
    const int p = k / 2;
    const int h = x.h, w = x.w, pw = w + 2 * p;
    Tensor4 d_in(x.n, x.c, h, w);
    for (int in = 0; in < x.n; ++in) {
        // d_bias and d_weight: partition by output channel (sole writer).
        parallel_for(0, weight.n, [&](long oc) {
            const double* dplane = d_out.plane(in, static_cast<int>(oc));
            double db = 0.0;
            for (size_t i = 0; i < static_cast<size_t>(h) * w; ++i) db += dplane[i];
            d_bias[static_cast<size_t>(oc)] += db;
            std::vector<double> pad(static_cast<size_t>(h + 2 * p) * pw);
            for (int ic = 0; ic < x.c; ++ic) {
                detail::pad_plane(x.plane(in, ic), h, w, p, pad);
                for (int a = 0; a < k; ++a) {
                    for (int b = 0; b < k; ++b) {
                        double acc = 0.0;
                        for (int y = 0; y < h; ++y) {
                            const double* prow = &pad[static_cast<size_t>(y + a) * pw + b];
                            const double* drow = dplane + static_cast<size_t>(y) * w;
                            for (int xx = 0; xx < w; ++xx) acc += prow[xx] * drow[xx];
                        }
                        d_weight.at(static_cast<int>(oc), ic, a, b) += acc;
                    }
                }
            }
        });
        // d_input: partition by input channel (sole writer of its plane).
        parallel_for(0, x.c, [&](long ic) {
            std::vector<double> dpad(static_cast<size_t>(h + 2 * p) * pw, 0.0);
            for (int oc = 0; oc < weight.n; ++oc) {
                const double* dplane = d_out.plane(in, oc);
                for (int a = 0; a < k; ++a) {
                    for (int b = 0; b < k; ++b) {
                        double wv = weight.at(oc, static_cast<int>(ic), a, b);
                        if (wv == 0.0) continue;
                        for (int y = 0; y < h; ++y) {
                            double* prow = &dpad[static_cast<size_t>(y + a) * pw + b];
                            const double* drow = dplane + static_cast<size_t>(y) * w;
                            for (int xx = 0; xx < w; ++xx) prow[xx] += wv * drow[xx];
                        }
                    }
                }
            }
            double* dst = d_in.plane(in, static_cast<int>(ic));
            for (int y = 0; y < h; ++y)
                for (int xx = 0; xx < w; ++xx)
                    dst[static_cast<size_t>(y) * w + xx] =
                        dpad[static_cast<size_t>(y + p) * pw + (xx + p)];
        });
    }
    return d_in;
}

// ---------------------------------------------------------------------------
// Batch normalization over (N, H, W) per channel.
// ---------------------------------------------------------------------------

struct BnCache {
    std::vector<double> mean, invstd;  // per channel
};

// Train-mode forward: normalize with the biased batch variance, then update
// running stats with momentum (running variance uses the unbiased estimate).
inline Tensor4 batchnorm_train(const Tensor4& x, const std::vector<double>& scale,
                               const std::vector<double>& shift,
                               std::vector<double>& running_mean,
                               std::vector<double>& running_var, double eps,
                               double momentum, BnCache& cache) {
    if (static_cast<int>(scale.size()) != x.c || static_cast<int>(shift.size()) != x.c)
        throw Error(Error::Kind::Shape, "batchnorm parameter size mismatch");
    const size_t plane = static_cast<size_t>(x.h) * x.w;
    const double m = static_cast<double>(x.n) * plane;
    Tensor4 out(x.n, x.c, x.h, x.w);
    cache.mean.assign(x.c, 0.0);
    cache.invstd.assign(x.c, 0.0);
    parallel_for(0, x.c, [&](long c) {
        double sum = 0.0;
        for (int in = 0; in < x.n; ++in) {
            const double* src = x.plane(in, static_cast<int>(c));
            for (size_t i = 0; i < plane; ++i) sum += src[i];
        }
        double mean = sum / m;
        double sq = 0.0;
        for (int in = 0; in < x.n; ++in) {
            const double* src = x.plane(in, static_cast<int>(c));
            for (size_t i = 0; i < plane; ++i) {
                double d = src[i] - mean;
                sq += d * d;
            }
        }
        double var = sq / m;
        double invstd = 1.0 / std::sqrt(var + eps);
        cache.mean[static_cast<size_t>(c)] = mean;
        cache.invstd[static_cast<size_t>(c)] = invstd;
        double g = scale[static_cast<size_t>(c)], b = shift[static_cast<size_t>(c)];
        for (int in = 0; in < x.n; ++in) {
            const double* src = x.plane(in, static_cast<int>(c));
            double* dst = out.plane(in, static_cast<int>(c));
            for (size_t i = 0; i < plane; ++i) dst[i] = g * (src[i] - mean) * invstd + b;
        }
        double var_unbiased = m > 1.0 ? var * m / (m - 1.0) : var;
        running_mean[static_cast<size_t>(c)] =
            (1.0 - momentum) * running_mean[static_cast<size_t>(c)] + momentum * mean;
        running_var[static_cast<size_t>(c)] =
            (1.0 - momentum) * running_var[static_cast<size_t>(c)] + momentum * var_unbiased;
    });
    return out;
}

inline Tensor4 batchnorm_eval(const Tensor4& x, const std::vector<double>& scale,
                              const std::vector<double>& shift,
                              const std::vector<double>& running_mean,
                              const std::vector<double>& running_var, double eps) {
    if (static_cast<int>(scale.size()) != x.c)
        throw Error(Error::Kind::Shape, "batchnorm parameter size mismatch");
    const size_t plane = static_cast<size_t>(x.h) * x.w;
    Tensor4 out(x.n, x.c, x.h, x.w);
    parallel_for(0, x.c, [&](long c) {
        size_t ci = static_cast<size_t>(c);
        double invstd = 1.0 / std::sqrt(running_var[ci] + eps);
        double g = scale[ci], b = shift[ci], mean = running_mean[ci];
        for (int in = 0; in < x.n; ++in) {
            const double* src = x.plane(in, static_cast<int>(c));
            double* dst = out.plane(in, static_cast<int>(c));
            for (size_t i = 0; i < plane; ++i) dst[i] = g * (src[i] - mean) * invstd + b;
        }
    });
    return out;
}

// Backward through the train-mode batch statistics:
//   dx = g*invstd*(dy - mean(dy) - xhat*mean(dy*xhat))
inline Tensor4 batchnorm_backward(const Tensor4& x, const Tensor4& d_out,
                                  const std::vector<double>& scale, const BnCache& cache,
                                  std::vector<double>& d_scale,
                                  std::vector<double>& d_shift) {
    const size_t plane = static_cast<size_t>(x.h) * x.w;
    const double m = static_cast<double>(x.n) * plane;
    Tensor4 d_in(x.n, x.c, x.h, x.w);
    parallel_for(0, x.c, [&](long c) {
        size_t ci = static_cast<size_t>(c);
        double mean = cache.mean[ci], invstd = cache.invstd[ci];
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (int in = 0; in < x.n; ++in) {
            const double* xs = x.plane(in, static_cast<int>(c));
            const double* dy = d_out.plane(in, static_cast<int>(c));
            for (size_t i = 0; i < plane; ++i) {
                double xhat = (xs[i] - mean) * invstd;
                sum_dy += dy[i];
                sum_dy_xhat += dy[i] * xhat;
            }
        }
        d_shift[ci] += sum_dy;
        d_scale[ci] += sum_dy_xhat;
        double g = scale[ci];
        double mean_dy = sum_dy / m;
        double mean_dy_xhat = sum_dy_xhat / m;
        for (int in = 0; in < x.n; ++in) {
            const double* xs = x.plane(in, static_cast<int>(c));
            const double* dy = d_out.plane(in, static_cast<int>(c));
            double* dx = d_in.plane(in, static_cast<int>(c));
            for (size_t i = 0; i < plane; ++i) {
                double xhat = (xs[i] - mean) * invstd;
                dx[i] = g * invstd * (dy[i] - mean_dy - xhat * mean_dy_xhat);
            }
        }
    });
    return d_in;
}

// ---------------------------------------------------------------------------
// ReLU, max pooling, transposed convolution, skip concatenation.
// ---------------------------------------------------------------------------

inline Tensor4 relu(const Tensor4& x) {
    Tensor4 out = x;
    for (double& v : out.v)
        if (v < 0.0) v = 0.0;
    return out;
}

// d_in = d_out where the forward OUTPUT was positive (x > 0 iff relu(x) > 0).
inline Tensor4 relu_backward(const Tensor4& out, const Tensor4& d_out) {
    Tensor4 d_in = d_out;
    for (size_t i = 0; i < d_in.v.size(); ++i)
        if (out.v[i] <= 0.0) d_in.v[i] = 0.0;
    return d_in;
}

// 2x2 max pooling with stride 2; argmax (0..3, scan order) recorded for the
// backward routing.  Ties resolve to the first maximum, deterministically.
inline Tensor4 maxpool2(const Tensor4& x, std::vector<uint8_t>& argmax) {
    if (x.h % 2 != 0 || x.w % 2 != 0)
        throw Error(Error::Kind::Shape, "max pooling requires even spatial dimensions");
    Tensor4 out(x.n, x.c, x.h / 2, x.w / 2);
    argmax.assign(out.size(), 0);
    const int oh = out.h, ow = out.w;
    for (int in = 0; in < x.n; ++in) {
        parallel_for(0, x.c, [&](long c) {
            const double* src = x.plane(in, static_cast<int>(c));
            double* dst = out.plane(in, static_cast<int>(c));
            uint8_t* am = &argmax[out.index(in, static_cast<int>(c), 0, 0)];
            for (int y = 0; y < oh; ++y) {
                for (int xx = 0; xx < ow; ++xx) {
                    size_t base = static_cast<size_t>(2 * y) * x.w + 2 * xx;
                    double v0 = src[base], v1 = src[base + 1];
                    double v2 = src[base + x.w], v3 = src[base + x.w + 1];
                    double best = v0;
                    uint8_t bi = 0;
                    if (v1 > best) { best = v1; bi = 1; }
                    if (v2 > best) { best = v2; bi = 2; }
                    if (v3 > best) { best = v3; bi = 3; }
                    dst[static_cast<size_t>(y) * ow + xx] = best;
                    am[static_cast<size_t>(y) * ow + xx] = bi;
                }
            }
        });
    }
    return out;
}

inline Tensor4 maxpool2_backward(const Tensor4& x, const Tensor4& d_out,
                                 const std::vector<uint8_t>& argmax) {
    Tensor4 d_in(x.n, x.c, x.h, x.w);
    const int oh = d_out.h, ow = d_out.w;
    for (int in = 0; in < x.n; ++in) {
        parallel_for(0, x.c, [&](long c) {
            const double* dy = d_out.plane(in, static_cast<int>(c));
            double* dx = d_in.plane(in, static_cast<int>(c));
            const uint8_t* am = &argmax[d_out.index(in, static_cast<int>(c), 0, 0)];
            for (int y = 0; y < oh; ++y) {
                for (int xx = 0; xx < ow; ++xx) {
                    uint8_t bi = am[static_cast<size_t>(y) * ow + xx];
                    size_t base = static_cast<size_t>(2 * y + bi / 2) * x.w + 2 * xx + bi % 2;
                    dx[base] = dy[static_cast<size_t>(y) * ow + xx];
                }
            }
        });
    }
    return d_in;
}

// Transposed convolution, kernel 2x2, stride 2 (non-overlapping): exactly
// doubles H and W.  Weights are [in_ch, out_ch, 2, 2].
inline Tensor4 tconv2(const Tensor4& x, const Tensor4& weight,
                      const std::vector<double>& bias) {
    if (weight.h != 2 || weight.w != 2)
        throw Error(Error::Kind::Shape, "transposed convolution kernel must be 2x2");
    if (weight.n != x.c)
        throw Error(Error::Kind::Shape, "transposed convolution input channels mismatch");
    if (static_cast<int>(bias.size()) != weight.c)
        throw Error(Error::Kind::Shape, "transposed convolution bias size mismatch");
    Tensor4 out(x.n, weight.c, 2 * x.h, 2 * x.w);
    const int ih = x.h, iw = x.w, ow = out.w;
    for (int in = 0; in < x.n; ++in) {
        parallel_for(0, weight.c, [&](long oc) {
            double* oplane = out.plane(in, static_cast<int>(oc));
            double b = bias[static_cast<size_t>(oc)];
            for (size_t i = 0; i < static_cast<size_t>(out.h) * ow; ++i) oplane[i] = b;
            for (int ic = 0; ic < x.c; ++ic) {
                const double* src = x.plane(in, ic);
                for (int a = 0; a < 2; ++a) {
                    for (int bb = 0; bb < 2; ++bb) {
                        double wv = weight.at(ic, static_cast<int>(oc), a, bb);
                        if (wv == 0.0) continue;
                        for (int y = 0; y < ih; ++y) {
                            double* orow = oplane + static_cast<size_t>(2 * y + a) * ow + bb;
                            const double* srow = src + static_cast<size_t>(y) * iw;
                            for (int xx = 0; xx < iw; ++xx) orow[2 * xx] += wv * srow[xx];
                        }
                    }
                }
            }
        });
    }
    return out;
}

inline Tensor4 tconv2_backward(const Tensor4& x, const Tensor4& weight,
                               const Tensor4& d_out, Tensor4& d_weight,
                               std::vector<double>& d_bias) {
    Tensor4 d_in(x.n, x.c, x.h, x.w);
    const int ih = x.h, iw = x.w, ow = d_out.w;
    for (int in = 0; in < x.n; ++in) {
        parallel_for(0, weight.c, [&](long oc) {
            const double* dplane = d_out.plane(in, static_cast<int>(oc));
            double db = 0.0;
            for (size_t i = 0; i < static_cast<size_t>(d_out.h) * ow; ++i) db += dplane[i];
            d_bias[static_cast<size_t>(oc)] += db;
        });
        // d_in and d_weight: partition by input channel (sole writer of both
        // its d_in plane and the d_weight rows (ic, *, *, *)).
        parallel_for(0, x.c, [&](long ic) {
            const double* src = x.plane(in, static_cast<int>(ic));
            double* dst = d_in.plane(in, static_cast<int>(ic));
            for (int oc = 0; oc < weight.c; ++oc) {
                const double* dplane = d_out.plane(in, oc);
                for (int a = 0; a < 2; ++a) {
                    for (int bb = 0; bb < 2; ++bb) {
                        double wv = weight.at(static_cast<int>(ic), oc, a, bb);
                        double acc = 0.0;
                        for (int y = 0; y < ih; ++y) {
                            const double* drow = dplane + static_cast<size_t>(2 * y + a) * ow + bb;
                            const double* srow = src + static_cast<size_t>(y) * iw;
                            double* dxrow = dst + static_cast<size_t>(y) * iw;
                            for (int xx = 0; xx < iw; ++xx) {
                                double dv = drow[2 * xx];
                                dxrow[xx] += wv * dv;
                                acc += srow[xx] * dv;
                            }
                        }
                        d_weight.at(static_cast<int>(ic), oc, a, bb) += acc;
                    }
                }
            }
        });
    }
    return d_in;
}

// Channel concatenation, encoder features first.
inline Tensor4 concat_skip(const Tensor4& encoder_fm, const Tensor4& decoder_fm) {
    if (encoder_fm.n != decoder_fm.n || encoder_fm.h != decoder_fm.h ||
        encoder_fm.w != decoder_fm.w)
        throw Error(Error::Kind::Shape,
                    "skip concatenation spatial mismatch: " + encoder_fm.shape_str() +
                        " vs " + decoder_fm.shape_str());
    Tensor4 out(encoder_fm.n, encoder_fm.c + decoder_fm.c, encoder_fm.h, encoder_fm.w);
    const size_t plane = static_cast<size_t>(out.h) * out.w;
    for (int in = 0; in < out.n; ++in) {
        for (int c = 0; c < encoder_fm.c; ++c)
            std::copy_n(encoder_fm.plane(in, c), plane, out.plane(in, c));
        for (int c = 0; c < decoder_fm.c; ++c)
            std::copy_n(decoder_fm.plane(in, c), plane, out.plane(in, encoder_fm.c + c));
    }
    return out;
}

inline void concat_skip_backward(const Tensor4& d_out, int encoder_channels,
                                 Tensor4& d_encoder, Tensor4& d_decoder) {
    const size_t plane = static_cast<size_t>(d_out.h) * d_out.w;
    d_encoder = Tensor4(d_out.n, encoder_channels, d_out.h, d_out.w);
    d_decoder = Tensor4(d_out.n, d_out.c - encoder_channels, d_out.h, d_out.w);
    for (int in = 0; in < d_out.n; ++in) {
        for (int c = 0; c < encoder_channels; ++c)
            std::copy_n(d_out.plane(in, c), plane, d_encoder.plane(in, c));
        for (int c = 0; c < d_decoder.c; ++c)
            std::copy_n(d_out.plane(in, encoder_channels + c), plane, d_decoder.plane(in, c));
    }
}

// ---------------------------------------------------------------------------
// Per-pixel softmax over channels and the weighted cross-entropy loss.
// ---------------------------------------------------------------------------

inline Tensor4 softmax_pixelwise(const Tensor4& scores) {
    Tensor4 probs(scores.n, scores.c, scores.h, scores.w);
    const size_t plane = static_cast<size_t>(scores.h) * scores.w;
    for (int in = 0; in < scores.n; ++in) {
        for (size_t i = 0; i < plane; ++i) {
            double maxv = -std::numeric_limits<double>::infinity();
            for (int c = 0; c < scores.c; ++c) {
                double v = scores.plane(in, c)[i];
                if (v > maxv) maxv = v;
            }
            double sum = 0.0;
            for (int c = 0; c < scores.c; ++c) {
                double e = std::exp(scores.plane(in, c)[i] - maxv);
                probs.plane(in, c)[i] = e;
                sum += e;
            }
            for (int c = 0; c < scores.c; ++c) probs.plane(in, c)[i] /= sum;
        }
    }
    return probs;
}

struct LossResult {
    double value = 0.0;
    long clamped_pixels = 0;
};

// Weighted cross entropy, normalized by the total weight:
//   E = -sum_x w(x) ln P_true(x) / sum_x w(x), with P clamped at 1e-12.
// truth holds class indices (0 background, 1 foreground) per pixel.
// normalize=false gives the plain weighted sum (loss scales linearly with
// duplicated samples), used by linearity checks.
inline LossResult weighted_ce_value(const Tensor4& probs, const std::vector<int>& truth,
                                    const std::vector<double>& weight, bool normalize = true) {
    const size_t plane = static_cast<size_t>(probs.h) * probs.w;
    if (truth.size() != plane * probs.n || weight.size() != plane * probs.n)
        throw Error(Error::Kind::Shape, "loss truth/weight size mismatch");
    LossResult res;
    double wsum = 0.0, acc = 0.0;
    for (int in = 0; in < probs.n; ++in) {
        for (size_t i = 0; i < plane; ++i) {
            size_t gi = static_cast<size_t>(in) * plane + i;
            int g = truth[gi];
            if (g < 0 || g >= probs.c)
                throw Error(Error::Kind::Range, "loss truth class out of range");
            double p = probs.plane(in, g)[i];
            if (p < 1e-12) {
                p = 1e-12;
                ++res.clamped_pixels;
            }
            acc += weight[gi] * std::log(p);
            wsum += weight[gi];
        }
    }
    if (normalize)
        res.value = wsum > 0.0 ? -acc / wsum : 0.0;
    else
        res.value = -acc;
    return res;
}

// Fused softmax + weighted-CE gradient with respect to the class scores:
//   dE/da_i(x) = w(x)/sum(w) * (P_i(x) - [i == truth(x)]).
inline Tensor4 weighted_ce_score_gradient(const Tensor4& probs, const std::vector<int>& truth,
                                          const std::vector<double>& weight,
                                          bool normalize = true) {
    const size_t plane = static_cast<size_t>(probs.h) * probs.w;
    double wsum = 0.0;
    for (double v : weight) wsum += v;
    Tensor4 d_scores(probs.n, probs.c, probs.h, probs.w);
    if (normalize && wsum <= 0.0) return d_scores;  // zero weights -> zero gradients
    double denom = normalize ? wsum : 1.0;
    for (int in = 0; in < probs.n; ++in) {
        for (int c = 0; c < probs.c; ++c) {
            const double* ps = probs.plane(in, c);
            double* ds = d_scores.plane(in, c);
            for (size_t i = 0; i < plane; ++i) {
                size_t gi = static_cast<size_t>(in) * plane + i;
                double ind = truth[gi] == c ? 1.0 : 0.0;
                ds[i] = weight[gi] / denom * (ps[i] - ind);
            }
        }
    }
    return d_scores;
}

}  // namespace fsr
