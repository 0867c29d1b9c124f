#pragma once
// Differentiable ops. Every op validates shapes, computes the forward result,
// and records one backward closure on the graph tape. Gradients always
// accumulate (+=) so tensors consumed by several ops collect contributions
// from each consumer. Inputs may be [L,C] or [N,L,C] where noted; batch
// statistics and kernels treat the rank-2 form as a single sample.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "emgdis/gemm.hpp"
#include "emgdis/rng.hpp"
#include "emgdis/tensor.hpp"

namespace emgdis::ad {

enum class Mode { Train, Eval };

template <typename T>
struct BatchNormState {
    std::vector<T> running_mean;
    std::vector<T> running_var;
    T momentum = T(0.1);
    T eps = T(1e-5);
    int64_t updates = 0;

    BatchNormState() = default;
    explicit BatchNormState(int channels)
        : running_mean(static_cast<size_t>(channels), T(0)),
          running_var(static_cast<size_t>(channels), T(1)) {}

    int channels() const { return static_cast<int>(running_mean.size()); }
};

namespace detail {

struct Dims3 {
    int n, l, c;
    bool batched;
};

// Interpret a tensor as [N,L,C], accepting [L,C] as N=1.
inline Dims3 as_nlc(const std::vector<int>& shape, const char* op) {
    if (shape.size() == 2) return {1, shape[0], shape[1], false};
    if (shape.size() == 3) return {shape[0], shape[1], shape[2], true};
    throw ShapeError(std::string(op) + " expects [L,C] or [N,L,C], got " + shape_str(shape));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// conv1d: temporal convolution over [*,L,Cin] with weight [Cout,Cin,K] and
// bias [Cout]. Zero padding on both ends; output length L + 2*padding - K + 1.
// ---------------------------------------------------------------------------
template <typename T>
TensorPtr<T> conv1d(Graph<T>& g, const TensorPtr<T>& in, const TensorPtr<T>& w,
                    const TensorPtr<T>& b, int padding) {
    const auto d = detail::as_nlc(in->shape, "conv1d");
    if (w->rank() != 3)
        throw ShapeError("conv1d weight must be [Cout,Cin,K], got " + shape_str(w->shape));
    const int co = w->dim(0), ci = w->dim(1), k = w->dim(2);
    if (k < 1 || k % 2 == 0)
        throw ShapeError("conv1d kernel size must be odd and positive, got " + std::to_string(k));
    if (ci != d.c)
        throw ShapeError("conv1d input channels " + std::to_string(d.c) + " do not match weight " +
                         shape_str(w->shape));
    if (b->shape != std::vector<int>{co})
        throw ShapeError("conv1d bias must be [Cout], got " + shape_str(b->shape));
    if (padding < 0) throw ValidationError("conv1d padding must be >= 0");
    const int lp = d.l + 2 * padding - k + 1;
    if (lp < 1)
        throw ShapeError("conv1d output length would be " + std::to_string(lp) + " for input " +
                         shape_str(in->shape));

    const int kc = k * ci;
    // Kernel laid out as [Cout][K*Cin] to match the im2col column order.
    std::vector<T> wt(static_cast<size_t>(co) * kc);
    for (int o = 0; o < co; ++o)
        for (int c = 0; c < ci; ++c)
            for (int kk = 0; kk < k; ++kk)
                wt[static_cast<size_t>(o) * kc + kk * ci + c] =
                    w->v[(static_cast<size_t>(o) * ci + c) * k + kk];

    auto out = make_tensor<T>(d.batched ? std::vector<int>{d.n, lp, co} : std::vector<int>{lp, co});
    out->requires_grad = g.recording() && (in->requires_grad || w->requires_grad || b->requires_grad);

    const size_t in_stride = static_cast<size_t>(d.l) * d.c;
    const size_t out_stride = static_cast<size_t>(lp) * co;
    std::vector<T> col(static_cast<size_t>(lp) * kc);
    auto fill_col = [&](const T* x) {
        for (int t = 0; t < lp; ++t) {
            T* row = col.data() + static_cast<size_t>(t) * kc;
            for (int kk = 0; kk < k; ++kk) {
                const int src = t + kk - padding;
                if (src < 0 || src >= d.l) {
                    std::fill(row + kk * ci, row + (kk + 1) * ci, T(0));
                } else {
                    const T* px = x + static_cast<size_t>(src) * d.c;
                    std::copy(px, px + ci, row + kk * ci);
                }
            }
        }
    };

    for (int s = 0; s < d.n; ++s) {
        fill_col(in->v.data() + s * in_stride);
        T* y = out->v.data() + s * out_stride;
        detail::gemm_nt(lp, co, kc, col.data(), wt.data(), y, T(0));
        for (int t = 0; t < lp; ++t)
            for (int o = 0; o < co; ++o) y[static_cast<size_t>(t) * co + o] += b->v[o];
    }

    if (out->requires_grad) {
        g.record([in, w, b, out, wt, d, padding, k, ci, co, lp, kc, in_stride, out_stride]() {
            if (!out->has_grad()) return;
            const bool need_in = in->requires_grad;
            const bool need_w = w->requires_grad;
            const bool need_b = b->requires_grad;
            if (need_in) in->ensure_grad();
            if (need_w) w->ensure_grad();
            if (need_b) b->ensure_grad();

            std::vector<T> col(static_cast<size_t>(lp) * kc);
            std::vector<T> dcol(need_in ? col.size() : 0);
            std::vector<T> dwt(need_w ? wt.size() : 0, T(0));

            for (int s = 0; s < d.n; ++s) {
                const T* dy = out->g.data() + s * out_stride;
                if (need_w) {
                    const T* x = in->v.data() + s * in_stride;
                    for (int t = 0; t < lp; ++t) {
                        T* row = col.data() + static_cast<size_t>(t) * kc;
                        for (int kk = 0; kk < k; ++kk) {
                            const int src = t + kk - padding;
                            if (src < 0 || src >= d.l)
                                std::fill(row + kk * ci, row + (kk + 1) * ci, T(0));
                            else
                                std::copy(x + static_cast<size_t>(src) * d.c,
                                          x + static_cast<size_t>(src) * d.c + ci, row + kk * ci);
                        }
                    }
                    detail::gemm_tn(co, kc, lp, dy, col.data(), dwt.data(), T(1));
                }
                if (need_in) {
                    detail::gemm_nn(lp, kc, co, dy, wt.data(), dcol.data(), T(0));
                    T* dx = in->g.data() + s * in_stride;
                    for (int t = 0; t < lp; ++t) {
                        const T* row = dcol.data() + static_cast<size_t>(t) * kc;
                        for (int kk = 0; kk < k; ++kk) {
                            const int src = t + kk - padding;
                            if (src < 0 || src >= d.l) continue;
                            T* px = dx + static_cast<size_t>(src) * d.c;
                            const T* pr = row + kk * ci;
                            for (int c = 0; c < ci; ++c) px[c] += pr[c];
                        }
                    }
                }
                if (need_b) {
                    for (int t = 0; t < lp; ++t)
                        for (int o = 0; o < co; ++o)
                            b->g[o] += dy[static_cast<size_t>(t) * co + o];
                }
            }
            if (need_w) {
                for (int o = 0; o < co; ++o)
                    for (int c = 0; c < ci; ++c)
                        for (int kk = 0; kk < k; ++kk)
                            w->g[(static_cast<size_t>(o) * ci + c) * k + kk] +=
                                dwt[static_cast<size_t>(o) * kc + kk * ci + c];
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// batchnorm1d: per-channel normalization over all batch and time positions.
// Train mode uses biased batch variance for the transform and updates running
// stats with the unbiased variance; eval mode uses the running stats.
// ---------------------------------------------------------------------------
template <typename T>
TensorPtr<T> batchnorm1d(Graph<T>& g, const TensorPtr<T>& in, const TensorPtr<T>& gamma,
                         const TensorPtr<T>& beta, BatchNormState<T>& state, Mode mode) {
    const auto d = detail::as_nlc(in->shape, "batchnorm1d");
    const int c = d.c;
    if (gamma->shape != std::vector<int>{c} || beta->shape != std::vector<int>{c})
        throw ShapeError("batchnorm1d gamma/beta must be [C] with C=" + std::to_string(c));
    if (state.channels() != c)
        throw ShapeError("batchnorm1d state has " + std::to_string(state.channels()) +
                         " channels, input has " + std::to_string(c));
    const int64_t m = static_cast<int64_t>(d.n) * d.l;
    if (mode == Mode::Train && m < 2)
        throw ValidationError("batchnorm1d train mode needs at least 2 positions per channel");

    std::vector<T> mean(c), inv_std(c);
    if (mode == Mode::Train) {
        std::vector<double> sum(c, 0.0), ssq(c, 0.0);
        const T* x = in->v.data();
        for (int64_t i = 0; i < m; ++i)
            for (int ch = 0; ch < c; ++ch) sum[ch] += static_cast<double>(x[i * c + ch]);
        for (int ch = 0; ch < c; ++ch) mean[ch] = static_cast<T>(sum[ch] / static_cast<double>(m));
        for (int64_t i = 0; i < m; ++i)
            for (int ch = 0; ch < c; ++ch) {
                const double dlt = static_cast<double>(x[i * c + ch]) - static_cast<double>(mean[ch]);
                ssq[ch] += dlt * dlt;
            }
        for (int ch = 0; ch < c; ++ch) {
            const double var = ssq[ch] / static_cast<double>(m);
            inv_std[ch] = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(state.eps)));
            const double unbiased = m > 1 ? ssq[ch] / static_cast<double>(m - 1) : 0.0;
            state.running_mean[ch] = (T(1) - state.momentum) * state.running_mean[ch] +
                                     state.momentum * mean[ch];
            state.running_var[ch] = (T(1) - state.momentum) * state.running_var[ch] +
                                    state.momentum * static_cast<T>(unbiased);
        }
        ++state.updates;
    } else {
        for (int ch = 0; ch < c; ++ch) {
            mean[ch] = state.running_mean[ch];
            inv_std[ch] = static_cast<T>(
                1.0 / std::sqrt(static_cast<double>(state.running_var[ch]) +
                                static_cast<double>(state.eps)));
        }
    }

    auto out = make_tensor<T>(in->shape);
    out->requires_grad =
        g.recording() && (in->requires_grad || gamma->requires_grad || beta->requires_grad);
    {
        const T* x = in->v.data();
        T* y = out->v.data();
        for (int64_t i = 0; i < m; ++i)
            for (int ch = 0; ch < c; ++ch)
                y[i * c + ch] = gamma->v[ch] * (x[i * c + ch] - mean[ch]) * inv_std[ch] + beta->v[ch];
    }

    if (out->requires_grad) {
        g.record([in, gamma, beta, out, mean, inv_std, m, c, mode]() {
            if (!out->has_grad()) return;
            const T* x = in->v.data();
            const T* dy = out->g.data();
            std::vector<double> sum_dy(c, 0.0), sum_dy_xhat(c, 0.0);
            for (int64_t i = 0; i < m; ++i)
                for (int ch = 0; ch < c; ++ch) {
                    const double dyv = static_cast<double>(dy[i * c + ch]);
                    const double xhat = (static_cast<double>(x[i * c + ch]) -
                                         static_cast<double>(mean[ch])) *
                                        static_cast<double>(inv_std[ch]);
                    sum_dy[ch] += dyv;
                    sum_dy_xhat[ch] += dyv * xhat;
                }
            if (beta->requires_grad) {
                beta->ensure_grad();
                for (int ch = 0; ch < c; ++ch) beta->g[ch] += static_cast<T>(sum_dy[ch]);
            }
            if (gamma->requires_grad) {
                gamma->ensure_grad();
                for (int ch = 0; ch < c; ++ch) gamma->g[ch] += static_cast<T>(sum_dy_xhat[ch]);
            }
            if (in->requires_grad) {
                in->ensure_grad();
                T* dx = in->g.data();
                if (mode == Mode::Train) {
                    const double inv_m = 1.0 / static_cast<double>(m);
                    for (int64_t i = 0; i < m; ++i)
                        for (int ch = 0; ch < c; ++ch) {
                            const double xhat = (static_cast<double>(x[i * c + ch]) -
                                                 static_cast<double>(mean[ch])) *
                                                static_cast<double>(inv_std[ch]);
                            const double t = static_cast<double>(dy[i * c + ch]) -
                                             sum_dy[ch] * inv_m - xhat * sum_dy_xhat[ch] * inv_m;
                            dx[i * c + ch] += static_cast<T>(static_cast<double>(gamma->v[ch]) *
                                                             static_cast<double>(inv_std[ch]) * t);
                        }
                } else {
                    for (int64_t i = 0; i < m; ++i)
                        for (int ch = 0; ch < c; ++ch)
                            dx[i * c + ch] += dy[i * c + ch] * gamma->v[ch] * inv_std[ch];
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// relu, elementwise. Gradient at exactly zero is zero.
// ---------------------------------------------------------------------------
template <typename T>
TensorPtr<T> relu(Graph<T>& g, const TensorPtr<T>& in) {
    auto out = make_tensor<T>(in->shape);
    out->requires_grad = g.recording() && in->requires_grad;
    for (size_t i = 0; i < in->v.size(); ++i) out->v[i] = in->v[i] > T(0) ? in->v[i] : T(0);
    if (out->requires_grad) {
        g.record([in, out]() {
            if (!out->has_grad()) return;
            in->ensure_grad();
            for (size_t i = 0; i < in->v.size(); ++i)
                if (in->v[i] > T(0)) in->g[i] += out->g[i];
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// maxpool1d: window 2, stride 2 along time. Odd trailing element is dropped.
// Ties route the gradient to the earlier position.
// ---------------------------------------------------------------------------
template <typename T>
TensorPtr<T> maxpool1d(Graph<T>& g, const TensorPtr<T>& in) {
    const auto d = detail::as_nlc(in->shape, "maxpool1d");
    if (d.l < 2) throw ShapeError("maxpool1d needs length >= 2, got " + shape_str(in->shape));
    const int lo = d.l / 2;
    auto out = make_tensor<T>(d.batched ? std::vector<int>{d.n, lo, d.c}
                                        : std::vector<int>{lo, d.c});
    out->requires_grad = g.recording() && in->requires_grad;

    std::vector<int64_t> arg(out->numel());
    const size_t in_stride = static_cast<size_t>(d.l) * d.c;
    const size_t out_stride = static_cast<size_t>(lo) * d.c;
    for (int s = 0; s < d.n; ++s) {
        const T* x = in->v.data() + s * in_stride;
        T* y = out->v.data() + s * out_stride;
        int64_t* as = arg.data() + s * out_stride;
        for (int t = 0; t < lo; ++t)
            for (int ch = 0; ch < d.c; ++ch) {
                const size_t i0 = static_cast<size_t>(2 * t) * d.c + ch;
                const size_t i1 = i0 + d.c;
                const bool second = x[i1] > x[i0];
                y[static_cast<size_t>(t) * d.c + ch] = second ? x[i1] : x[i0];
                as[static_cast<size_t>(t) * d.c + ch] =
                    static_cast<int64_t>(s * in_stride + (second ? i1 : i0));
            }
    }

    if (out->requires_grad) {
        g.record([in, out, arg]() {
            if (!out->has_grad()) return;
            in->ensure_grad();
            for (size_t i = 0; i < out->g.size(); ++i)
                in->g[static_cast<size_t>(arg[i])] += out->g[i];
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// linear: out[N,O] = in[N,F] * w[O,F]^T + b[O]
// ---------------------------------------------------------------------------
template <typename T>
TensorPtr<T> linear(Graph<T>& g, const TensorPtr<T>& in, const TensorPtr<T>& w,
                    const TensorPtr<T>& b) {
    if (in->rank() != 2)
        throw ShapeError("linear expects [N,F] input, got " + shape_str(in->shape));
    if (w->rank() != 2)
        throw ShapeError("linear weight must be [O,F], got " + shape_str(w->shape));
    const int n = in->dim(0), f = in->dim(1), o = w->dim(0);
    if (w->dim(1) != f)
        throw ShapeError("linear weight " + shape_str(w->shape) + " does not match input " +
                         shape_str(in->shape));
    if (b->shape != std::vector<int>{o})
        throw ShapeError("linear bias must be [O], got " + shape_str(b->shape));

    auto out = make_tensor<T>({n, o});
    out->requires_grad = g.recording() && (in->requires_grad || w->requires_grad || b->requires_grad);
    detail::gemm_nt(n, o, f, in->v.data(), w->v.data(), out->v.data(), T(0));
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < o; ++j) out->v[static_cast<size_t>(i) * o + j] += b->v[j];

    if (out->requires_grad) {
        g.record([in, w, b, out, n, f, o]() {
            if (!out->has_grad()) return;
            if (in->requires_grad) {
                in->ensure_grad();
                detail::gemm_nn(n, f, o, out->g.data(), w->v.data(), in->g.data(), T(1));
            }
            if (w->requires_grad) {
                w->ensure_grad();
                detail::gemm_tn(o, f, n, out->g.data(), in->v.data(), w->g.data(), T(1));
            }
            if (b->requires_grad) {
                b->ensure_grad();
                for (int i = 0; i < n; ++i)
                    for (int j = 0; j < o; ++j) b->g[j] += out->g[static_cast<size_t>(i) * o + j];
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// dropout: inverted scaling. Each element is zeroed independently with the
// given probability in train mode and the survivors are scaled by 1/(1-rate).
// rate 0 and eval mode are identity and consume no randomness.
// ---------------------------------------------------------------------------
template <typename T>
TensorPtr<T> dropout(Graph<T>& g, const TensorPtr<T>& in, double rate, Mode mode, Rng* rng) {
    if (rate < 0.0 || rate >= 1.0)
        throw ValidationError("dropout rate must be in [0,1), got " + std::to_string(rate));
    auto out = make_tensor<T>(in->shape);
    out->requires_grad = g.recording() && in->requires_grad;
    if (mode == Mode::Eval || rate == 0.0) {
        out->v = in->v;
        if (out->requires_grad) {
            g.record([in, out]() {
                if (!out->has_grad()) return;
                in->ensure_grad();
                for (size_t i = 0; i < in->g.size(); ++i) in->g[i] += out->g[i];
            });
        }
        return out;
    }
    if (rng == nullptr) throw ValidationError("dropout in train mode requires an rng");
    const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
    std::vector<T> mask(in->v.size());
    for (size_t i = 0; i < mask.size(); ++i)
        mask[i] = rng->uniform() < rate ? T(0) : keep_scale;
    for (size_t i = 0; i < mask.size(); ++i) out->v[i] = in->v[i] * mask[i];
    if (out->requires_grad) {
        g.record([in, out, mask]() {
            if (!out->has_grad()) return;
            in->ensure_grad();
            for (size_t i = 0; i < in->g.size(); ++i) in->g[i] += out->g[i] * mask[i];
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// softmax + cross entropy, fused. Targets must be exact one-hot rows. The
// loss is the sum over the batch of -log p[target]; callers divide by the
// batch size when they want the mean. Stable log-sum-exp throughout.
// ---------------------------------------------------------------------------
template <typename T>
struct SoftmaxCrossEntropy {
    TensorPtr<T> loss;   // scalar, sum over rows
    TensorPtr<T> probs;  // [N,K], detached
};

template <typename T>
std::vector<T> softmax_values(const T* logits, int n, int k) {
    std::vector<T> p(static_cast<size_t>(n) * k);
    for (int i = 0; i < n; ++i) {
        const T* row = logits + static_cast<size_t>(i) * k;
        T* pr = p.data() + static_cast<size_t>(i) * k;
        T mx = row[0];
        for (int j = 1; j < k; ++j) mx = std::max(mx, row[j]);
        double denom = 0.0;
        for (int j = 0; j < k; ++j) {
            const double e = std::exp(static_cast<double>(row[j] - mx));
            pr[j] = static_cast<T>(e);
            denom += e;
        }
        const T inv = static_cast<T>(1.0 / denom);
        for (int j = 0; j < k; ++j) pr[j] *= inv;
    }
    return p;
}

template <typename T>
SoftmaxCrossEntropy<T> softmax_cross_entropy(Graph<T>& g, const TensorPtr<T>& logits,
                                             const TensorPtr<T>& targets) {
    if (logits->rank() != 2)
        throw ShapeError("softmax_cross_entropy expects [N,K] logits, got " +
                         shape_str(logits->shape));
    if (targets->shape != logits->shape)
        throw ShapeError("targets " + shape_str(targets->shape) + " do not match logits " +
                         shape_str(logits->shape));
    const int n = logits->dim(0), k = logits->dim(1);
    std::vector<int> target_idx(static_cast<size_t>(n), -1);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < k; ++j) {
            const T y = targets->v[static_cast<size_t>(i) * k + j];
            if (y == T(1)) {
                if (target_idx[static_cast<size_t>(i)] != -1)
                    throw ValidationError("target row " + std::to_string(i) + " has multiple ones");
                target_idx[static_cast<size_t>(i)] = j;
            } else if (y != T(0)) {
                throw ValidationError("target row " + std::to_string(i) + " is not one-hot");
            }
        }
        if (target_idx[static_cast<size_t>(i)] == -1)
            throw ValidationError("target row " + std::to_string(i) + " has no class");
    }

    auto probs = make_tensor<T>({n, k});
    probs->v = softmax_values(logits->v.data(), n, k);
    auto loss = make_tensor<T>({1});
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
        const T* row = logits->v.data() + static_cast<size_t>(i) * k;
        T mx = row[0];
        for (int j = 1; j < k; ++j) mx = std::max(mx, row[j]);
        double denom = 0.0;
        for (int j = 0; j < k; ++j) denom += std::exp(static_cast<double>(row[j] - mx));
        total += std::log(denom) + static_cast<double>(mx) -
                 static_cast<double>(row[target_idx[static_cast<size_t>(i)]]);
    }
    loss->v[0] = static_cast<T>(total);
    loss->requires_grad = g.recording() && logits->requires_grad;

    if (loss->requires_grad) {
        g.record([logits, targets, probs, loss, n, k]() {
            if (!loss->has_grad()) return;
            logits->ensure_grad();
            const T gl = loss->g[0];
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < k; ++j) {
                    const size_t idx = static_cast<size_t>(i) * k + j;
                    logits->g[idx] += gl * (probs->v[idx] - targets->v[idx]);
                }
        });
    }
    return {loss, probs};
}

// ---------------------------------------------------------------------------
// gradient_reversal: identity forward, multiplies the incoming gradient by
// -lambda on the way back.
// ---------------------------------------------------------------------------
template <typename T>
TensorPtr<T> gradient_reversal(Graph<T>& g, const TensorPtr<T>& in, T lambda) {
    if (!(lambda >= T(0)))
        throw ValidationError("gradient reversal coefficient must be >= 0");
    auto out = make_tensor<T>(in->shape);
    out->v = in->v;
    out->requires_grad = g.recording() && in->requires_grad;
    if (out->requires_grad) {
        g.record([in, out, lambda]() {
            if (!out->has_grad()) return;
            in->ensure_grad();
            for (size_t i = 0; i < in->g.size(); ++i) in->g[i] += -lambda * out->g[i];
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// small glue ops
// ---------------------------------------------------------------------------
template <typename T>
TensorPtr<T> add(Graph<T>& g, const TensorPtr<T>& a, const TensorPtr<T>& b) {
    if (a->shape != b->shape)
        throw ShapeError("add shape mismatch " + shape_str(a->shape) + " vs " + shape_str(b->shape));
    auto out = make_tensor<T>(a->shape);
    out->requires_grad = g.recording() && (a->requires_grad || b->requires_grad);
    for (size_t i = 0; i < a->v.size(); ++i) out->v[i] = a->v[i] + b->v[i];
    if (out->requires_grad) {
        g.record([a, b, out]() {
            if (!out->has_grad()) return;
            if (a->requires_grad) {
                a->ensure_grad();
                for (size_t i = 0; i < a->g.size(); ++i) a->g[i] += out->g[i];
            }
            if (b->requires_grad) {
                b->ensure_grad();
                for (size_t i = 0; i < b->g.size(); ++i) b->g[i] += out->g[i];
            }
        });
    }
    return out;
}

template <typename T>
TensorPtr<T> scale(Graph<T>& g, const TensorPtr<T>& a, T factor) {
    auto out = make_tensor<T>(a->shape);
    out->requires_grad = g.recording() && a->requires_grad;
    for (size_t i = 0; i < a->v.size(); ++i) out->v[i] = a->v[i] * factor;
    if (out->requires_grad) {
        g.record([a, out, factor]() {
            if (!out->has_grad()) return;
            a->ensure_grad();
            for (size_t i = 0; i < a->g.size(); ++i) a->g[i] += factor * out->g[i];
        });
    }
    return out;
}

template <typename T>
TensorPtr<T> reshape(Graph<T>& g, const TensorPtr<T>& a, std::vector<int> shape) {
    if (shape_numel(shape) != a->numel())
        throw ShapeError("reshape from " + shape_str(a->shape) + " to " + shape_str(shape) +
                         " changes element count");
    auto out = make_tensor<T>(std::move(shape));
    out->v = a->v;
    out->requires_grad = g.recording() && a->requires_grad;
    if (out->requires_grad) {
        g.record([a, out]() {
            if (!out->has_grad()) return;
            a->ensure_grad();
            for (size_t i = 0; i < a->g.size(); ++i) a->g[i] += out->g[i];
        });
    }
    return out;
}

// Scalar loss Sum_i c_i * x_i with fixed coefficients; handy for tests.
template <typename T>
TensorPtr<T> weighted_sum(Graph<T>& g, const TensorPtr<T>& a, std::vector<T> coeffs) {
    if (coeffs.size() != a->v.size())
        throw ShapeError("weighted_sum coefficient count does not match tensor");
    auto out = make_tensor<T>({1});
    double acc = 0.0;
    for (size_t i = 0; i < coeffs.size(); ++i)
        acc += static_cast<double>(coeffs[i]) * static_cast<double>(a->v[i]);
    out->v[0] = static_cast<T>(acc);
    out->requires_grad = g.recording() && a->requires_grad;
    if (out->requires_grad) {
        g.record([a, out, coeffs]() {
            if (!out->has_grad()) return;
            a->ensure_grad();
            for (size_t i = 0; i < a->g.size(); ++i) a->g[i] += coeffs[i] * out->g[0];
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// sgd_step: plain SGD, w -= lr * grad, then clears the grads it consumed.
// Every parameter must have an allocated gradient.
// ---------------------------------------------------------------------------
template <typename T>
void sgd_step(std::span<const TensorPtr<T>> params, double lr) {
    if (!(lr > 0.0)) throw ValidationError("sgd_step learning rate must be > 0");
    for (const auto& p : params) {
        if (!p->requires_grad)
            throw ContractError("sgd_step on tensor '" + p->name + "' that does not require grad");
        if (!p->has_grad())
            throw ContractError("sgd_step: tensor '" + p->name + "' has no gradient buffer");
    }
    const T step = static_cast<T>(lr);
    for (const auto& p : params) {
        for (size_t i = 0; i < p->v.size(); ++i) p->v[i] -= step * p->g[i];
        p->zero_grad();
    }
}

template <typename T>
void sgd_step(const std::vector<TensorPtr<T>>& params, double lr) {
    sgd_step(std::span<const TensorPtr<T>>(params.data(), params.size()), lr);
}

}  // namespace emgdis::ad
