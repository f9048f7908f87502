#include "flexshift/nn.hpp"

#include <cmath>
#include <limits>
#include <random>

#include "conv_kernels.hpp"

namespace flexshift {

template <typename T>
std::vector<ParamRef<T>> trainable(Parameters<T>& params) {
    std::vector<ParamRef<T>> refs;
    auto add = [&](LayerParams<T>& p) {
        if (!p.weight.empty()) refs.push_back({ParamRole::weight, &p.weight});
        if (!p.bias.empty()) refs.push_back({ParamRole::bias, &p.bias});
        if (!p.gamma.empty()) refs.push_back({ParamRole::bn_gamma, &p.gamma});
        if (!p.beta.empty()) refs.push_back({ParamRole::bn_beta, &p.beta});
    };
    for (auto& l : params.layers) add(l);
    for (auto& l : params.projections) add(l);
    return refs;
}

template <typename T>
Parameters<T> build_network(const NetworkConfig& config, std::uint64_t seed) {
    infer_shapes(config);
    std::mt19937_64 rng(seed);
    auto kaiming = [&](Shape shape, std::size_t fan_in) {
        std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
        Tensor<T> w(std::move(shape));
        for (auto& v : w.data()) v = static_cast<T>(dist(rng));
        return w;
    };

    Parameters<T> params;
    params.layers.resize(config.layers.size());
    for (std::size_t i = 0; i < config.layers.size(); ++i) {
        const LayerSpec& l = config.layers[i];
        LayerParams<T>& p = params.layers[i];
        switch (l.kind) {
            case LayerKind::conv2d:
                p.weight = kaiming({l.out_channels, l.in_channels, l.kernel, l.kernel},
                                   l.in_channels * l.kernel * l.kernel);
                p.bias = Tensor<T>({l.out_channels});
                break;
            case LayerKind::dense:
                p.weight = kaiming({l.out_channels, l.in_channels}, l.in_channels);
                p.bias = Tensor<T>({l.out_channels});
                break;
            case LayerKind::batchnorm:
                p.gamma = Tensor<T>({l.out_channels}, T(1));
                p.beta = Tensor<T>({l.out_channels});
                p.running_mean = Tensor<T>({l.out_channels});
                p.running_var = Tensor<T>({l.out_channels}, T(1));
                break;
            default: break;
        }
    }
    for (const auto& proj : projection_specs(config)) {
        LayerParams<T> p;
        if (proj) {
            p.weight = kaiming({proj->out_channels, proj->in_channels, 1, 1}, proj->in_channels);
            p.bias = Tensor<T>({proj->out_channels});
        }
        params.projections.push_back(std::move(p));
    }
    return params;
}

namespace {

template <typename T>
void check_param_shapes(const NetworkConfig& config, const Parameters<T>& params) {
    if (params.layers.size() != config.layers.size() || params.projections.size() != config.skips.size())
        throw ConfigError("parameter set does not match the network layout");
    for (std::size_t i = 0; i < config.layers.size(); ++i) {
        const LayerSpec& l = config.layers[i];
        const LayerParams<T>& p = params.layers[i];
        bool ok = true;
        if (l.kind == LayerKind::conv2d)
            ok = p.weight.shape() == Shape{l.out_channels, l.in_channels, l.kernel, l.kernel} &&
                 p.bias.shape() == Shape{l.out_channels};
        else if (l.kind == LayerKind::dense)
            ok = p.weight.shape() == Shape{l.out_channels, l.in_channels} && p.bias.shape() == Shape{l.out_channels};
        else if (l.kind == LayerKind::batchnorm)
            ok = p.gamma.size() == l.out_channels && p.beta.size() == l.out_channels &&
                 p.running_mean.size() == l.out_channels && p.running_var.size() == l.out_channels;
        if (!ok) throw ConfigError("parameters of layer " + std::to_string(i) + " do not match its spec");
    }
}

template <typename T>
void conv_forward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, std::size_t stride,
                  std::size_t padding, Tensor<T>& y) {
    const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::size_t o = weight.dim(0), k = weight.dim(2);
    const std::size_t ho = (h + 2 * padding - k) / stride + 1, wo = (w + 2 * padding - k) / stride + 1;
    const std::size_t ckk = c * k * k, hw = ho * wo;
    y = Tensor<T>({n, o, ho, wo});
    std::vector<T> cols(ckk * hw);
    for (std::size_t b = 0; b < n; ++b) {
        detail::im2col(x.raw() + b * c * h * w, c, h, w, k, stride, padding, ho, wo, cols.data());
        T* out = y.raw() + b * o * hw;
        for (std::size_t oc = 0; oc < o; ++oc) std::fill(out + oc * hw, out + (oc + 1) * hw, bias[oc]);
        detail::gemm_nn(o, ckk, hw, weight.raw(), cols.data(), out);
    }
}

template <typename T>
void conv_backward(const Tensor<T>& x, const Tensor<T>& weight, std::size_t stride, std::size_t padding,
                   const Tensor<T>& dy, Tensor<T>& dw, Tensor<T>& db, Tensor<T>* dx) {
    const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::size_t o = weight.dim(0), k = weight.dim(2);
    const std::size_t ho = dy.dim(2), wo = dy.dim(3);
    const std::size_t ckk = c * k * k, hw = ho * wo;
    dw = Tensor<T>(weight.shape());
    db = Tensor<T>({o});
    if (dx) *dx = Tensor<T>(x.shape());
    std::vector<T> cols(ckk * hw), cols_t(ckk * hw), dcols(ckk * hw);
    for (std::size_t b = 0; b < n; ++b) {
        const T* g = dy.raw() + b * o * hw;
        detail::im2col(x.raw() + b * c * h * w, c, h, w, k, stride, padding, ho, wo, cols.data());
        detail::transpose(ckk, hw, cols.data(), cols_t.data());
        detail::gemm_nn(o, hw, ckk, g, cols_t.data(), dw.raw());
        for (std::size_t oc = 0; oc < o; ++oc) {
            T s = 0;
            for (std::size_t i = 0; i < hw; ++i) s += g[oc * hw + i];
            db[oc] += s;
        }
        if (dx) {
            std::fill(dcols.begin(), dcols.end(), T(0));
            detail::gemm_tn(ckk, o, hw, weight.raw(), g, dcols.data());
            detail::col2im(dcols.data(), c, h, w, k, stride, padding, ho, wo, dx->raw() + b * c * h * w);
        }
    }
}

// Channel layout helper: (N, C, S) view of a rank-2 or rank-4 tensor.
struct ChannelView {
    std::size_t n, c, s;
};

template <typename T>
ChannelView channel_view(const Tensor<T>& x) {
    if (x.rank() == 2) return {x.dim(0), x.dim(1), 1};
    return {x.dim(0), x.dim(1), x.dim(2) * x.dim(3)};
}

}  // namespace

template <typename T>
Tensor<T> forward(const NetworkConfig& config, const Parameters<T>& params, const Tensor<T>& batch, Mode mode,
                  ForwardCache<T>* cache, BatchNormOptions bn) {
    const auto shapes = infer_shapes(config);
    check_param_shapes(config, params);
    if (batch.rank() != 4 || Shape(batch.shape().begin() + 1, batch.shape().end()) != config.input_shape)
        throw ConfigError("batch shape " + shape_string(batch.shape()) + " does not match network input " +
                          shape_string(config.input_shape));
    const std::size_t n = batch.dim(0);
    const std::size_t L = config.layers.size();
    const auto proj = projection_specs(config);

    ForwardCache<T> local;
    ForwardCache<T>& c = cache ? *cache : local;
    c = ForwardCache<T>{};
    c.mode = mode;
    c.activations.reserve(L + 1);
    c.activations.push_back(batch);
    c.bn_xhat.resize(L);
    c.bn_inv_std.resize(L);
    c.bn_batch_mean.resize(L);
    c.bn_batch_var.resize(L);
    c.pool_argmax.resize(L);

    for (std::size_t i = 0; i < L; ++i) {
        const LayerSpec& l = config.layers[i];
        const LayerParams<T>& p = params.layers[i];
        const Tensor<T>& x = c.activations[i];
        Shape out_shape{n};
        out_shape.insert(out_shape.end(), shapes[i + 1].begin(), shapes[i + 1].end());
        Tensor<T> y;
        switch (l.kind) {
            case LayerKind::conv2d: conv_forward(x, p.weight, p.bias, l.stride, l.padding, y); break;
            case LayerKind::dense: {
                const std::size_t f = l.in_channels, o = l.out_channels;
                y = Tensor<T>(out_shape);
                for (std::size_t b = 0; b < n; ++b)
                    for (std::size_t oc = 0; oc < o; ++oc) {
                        const T* wr = p.weight.raw() + oc * f;
                        const T* xr = x.raw() + b * f;
                        T s = p.bias[oc];
                        for (std::size_t j = 0; j < f; ++j) s += wr[j] * xr[j];
                        y[b * o + oc] = s;
                    }
                break;
            }
            case LayerKind::batchnorm: {
                const auto v = channel_view(x);
                y = Tensor<T>(x.shape());
                Tensor<T> xhat(x.shape());
                std::vector<T> inv_std(v.c), bmean(v.c), bvar(v.c);
                const double m = static_cast<double>(v.n * v.s);
                for (std::size_t ch = 0; ch < v.c; ++ch) {
                    double mean, var;
                    if (mode == Mode::train) {
                        double s = 0.0;
                        for (std::size_t b = 0; b < v.n; ++b)
                            for (std::size_t j = 0; j < v.s; ++j) s += x[(b * v.c + ch) * v.s + j];
                        mean = s / m;
                        double ss = 0.0;
                        for (std::size_t b = 0; b < v.n; ++b)
                            for (std::size_t j = 0; j < v.s; ++j) {
                                const double d = x[(b * v.c + ch) * v.s + j] - mean;
                                ss += d * d;
                            }
                        var = ss / m;
                        bmean[ch] = static_cast<T>(mean);
                        bvar[ch] = static_cast<T>(m > 1 ? ss / (m - 1) : var);
                    } else {
                        mean = p.running_mean[ch];
                        var = p.running_var[ch];
                    }
                    const T istd = static_cast<T>(1.0 / std::sqrt(var + bn.eps));
                    inv_std[ch] = istd;
                    const T mu = static_cast<T>(mean);
                    for (std::size_t b = 0; b < v.n; ++b)
                        for (std::size_t j = 0; j < v.s; ++j) {
                            const std::size_t idx = (b * v.c + ch) * v.s + j;
                            const T xh = (x[idx] - mu) * istd;
                            xhat[idx] = xh;
                            y[idx] = p.gamma[ch] * xh + p.beta[ch];
                        }
                }
                c.bn_xhat[i] = std::move(xhat);
                c.bn_inv_std[i] = std::move(inv_std);
                if (mode == Mode::train) {
                    c.bn_batch_mean[i] = std::move(bmean);
                    c.bn_batch_var[i] = std::move(bvar);
                }
                break;
            }
            case LayerKind::leaky_relu: {
                y = Tensor<T>(x.shape());
                const T slope = static_cast<T>(l.negative_slope);
                for (std::size_t j = 0; j < x.size(); ++j) y[j] = x[j] >= T(0) ? x[j] : slope * x[j];
                break;
            }
            case LayerKind::maxpool: {
                const std::size_t ch = x.dim(1), h = x.dim(2), w = x.dim(3), k = l.pool;
                const std::size_t ho = h / k, wo = w / k;
                y = Tensor<T>(out_shape);
                std::vector<std::uint32_t> arg(y.size());
                for (std::size_t b = 0; b < n; ++b)
                    for (std::size_t cc = 0; cc < ch; ++cc) {
                        const std::size_t base = (b * ch + cc) * h * w;
                        for (std::size_t oy = 0; oy < ho; ++oy)
                            for (std::size_t ox = 0; ox < wo; ++ox) {
                                std::size_t best = base + oy * k * w + ox * k;
                                for (std::size_t dy = 0; dy < k; ++dy)
                                    for (std::size_t dx = 0; dx < k; ++dx) {
                                        const std::size_t idx = base + (oy * k + dy) * w + ox * k + dx;
                                        if (x[idx] > x[best]) best = idx;
                                    }
                                const std::size_t o = ((b * ch + cc) * ho + oy) * wo + ox;
                                y[o] = x[best];
                                arg[o] = static_cast<std::uint32_t>(best);
                            }
                    }
                c.pool_argmax[i] = std::move(arg);
                break;
            }
            case LayerKind::flatten: y = x.reshaped(out_shape); break;
        }
        for (std::size_t s = 0; s < config.skips.size(); ++s) {
            if (config.skips[s].to != i) continue;
            const Tensor<T>& src = c.activations[config.skips[s].from];
            if (proj[s]) {
                Tensor<T> shortcut;
                conv_forward(src, params.projections[s].weight, params.projections[s].bias, proj[s]->stride, 0,
                             shortcut);
                for (std::size_t j = 0; j < y.size(); ++j) y[j] += shortcut[j];
            } else {
                for (std::size_t j = 0; j < y.size(); ++j) y[j] += src[j];
            }
        }
        c.activations.push_back(std::move(y));
    }
    if (!c.activations.back().all_finite()) throw NumericError("forward pass produced non-finite logits");
    c.owner = &params;
    c.valid = true;
    return c.activations.back();
}

template <typename T>
Gradients<T> backward(const NetworkConfig& config, const Parameters<T>& params, const ForwardCache<T>& cache,
                      const Tensor<T>& logit_grad, bool want_input_grad, BatchNormOptions) {
    const std::size_t L = config.layers.size();
    if (!cache.valid || cache.owner != &params || cache.activations.size() != L + 1)
        throw UsageError("backward called without a matching forward cache");
    if (logit_grad.shape() != cache.activations.back().shape())
        throw UsageError("logit gradient shape " + shape_string(logit_grad.shape()) + " does not match logits " +
                         shape_string(cache.activations.back().shape()));
    const auto proj = projection_specs(config);
    const std::size_t n = logit_grad.dim(0);

    Gradients<T> g;
    g.params.layers.resize(L);
    g.params.projections.resize(config.skips.size());
    std::vector<Tensor<T>> grad_act(L + 1);
    grad_act[L] = logit_grad;

    auto accumulate = [](Tensor<T>& into, const Tensor<T>& add) {
        if (into.empty()) {
            into = add;
            return;
        }
        for (std::size_t j = 0; j < into.size(); ++j) into[j] += add[j];
    };

    for (std::size_t ii = L; ii-- > 0;) {
        const LayerSpec& l = config.layers[ii];
        const LayerParams<T>& p = params.layers[ii];
        const Tensor<T>& x = cache.activations[ii];
        const Tensor<T>& dy = grad_act[ii + 1];
        const bool need_dx = ii > 0 || want_input_grad;

        for (std::size_t s = 0; s < config.skips.size(); ++s) {
            if (config.skips[s].to != ii) continue;
            const std::size_t from = config.skips[s].from;
            if (proj[s]) {
                Tensor<T> dsrc;
                conv_backward(cache.activations[from], params.projections[s].weight, proj[s]->stride, 0, dy,
                              g.params.projections[s].weight, g.params.projections[s].bias,
                              (from > 0 || want_input_grad) ? &dsrc : nullptr);
                if (!dsrc.empty()) accumulate(grad_act[from], dsrc);
            } else if (from > 0 || want_input_grad) {
                accumulate(grad_act[from], dy);
            }
        }

        Tensor<T> dx;
        switch (l.kind) {
            case LayerKind::conv2d:
                conv_backward(x, p.weight, l.stride, l.padding, dy, g.params.layers[ii].weight,
                              g.params.layers[ii].bias, need_dx ? &dx : nullptr);
                break;
            case LayerKind::dense: {
                const std::size_t f = l.in_channels, o = l.out_channels;
                Tensor<T> dw({o, f}), db({o});
                if (need_dx) dx = Tensor<T>(x.shape());
                for (std::size_t b = 0; b < n; ++b)
                    for (std::size_t oc = 0; oc < o; ++oc) {
                        const T go = dy[b * o + oc];
                        db[oc] += go;
                        T* dwr = dw.raw() + oc * f;
                        const T* xr = x.raw() + b * f;
                        for (std::size_t j = 0; j < f; ++j) dwr[j] += go * xr[j];
                        if (need_dx) {
                            const T* wr = p.weight.raw() + oc * f;
                            T* dxr = dx.raw() + b * f;
                            for (std::size_t j = 0; j < f; ++j) dxr[j] += go * wr[j];
                        }
                    }
                g.params.layers[ii].weight = std::move(dw);
                g.params.layers[ii].bias = std::move(db);
                break;
            }
            case LayerKind::batchnorm: {
                const auto v = channel_view(x);
                const Tensor<T>& xhat = cache.bn_xhat[ii];
                const auto& inv_std = cache.bn_inv_std[ii];
                Tensor<T> dgamma({v.c}), dbeta({v.c});
                if (need_dx) dx = Tensor<T>(x.shape());
                const double m = static_cast<double>(v.n * v.s);
                for (std::size_t ch = 0; ch < v.c; ++ch) {
                    double sum_dy = 0.0, sum_dy_xhat = 0.0;
                    for (std::size_t b = 0; b < v.n; ++b)
                        for (std::size_t j = 0; j < v.s; ++j) {
                            const std::size_t idx = (b * v.c + ch) * v.s + j;
                            sum_dy += dy[idx];
                            sum_dy_xhat += static_cast<double>(dy[idx]) * xhat[idx];
                        }
                    dgamma[ch] = static_cast<T>(sum_dy_xhat);
                    dbeta[ch] = static_cast<T>(sum_dy);
                    if (!need_dx) continue;
                    const double gam = p.gamma[ch], istd = inv_std[ch];
                    for (std::size_t b = 0; b < v.n; ++b)
                        for (std::size_t j = 0; j < v.s; ++j) {
                            const std::size_t idx = (b * v.c + ch) * v.s + j;
                            if (cache.mode == Mode::train)
                                dx[idx] = static_cast<T>(gam * istd / m *
                                                         (m * dy[idx] - sum_dy - xhat[idx] * sum_dy_xhat));
                            else
                                dx[idx] = static_cast<T>(gam * istd * dy[idx]);
                        }
                }
                g.params.layers[ii].gamma = std::move(dgamma);
                g.params.layers[ii].beta = std::move(dbeta);
                break;
            }
            case LayerKind::leaky_relu: {
                if (!need_dx) break;
                dx = Tensor<T>(x.shape());
                const T slope = static_cast<T>(l.negative_slope);
                for (std::size_t j = 0; j < x.size(); ++j) dx[j] = x[j] >= T(0) ? dy[j] : slope * dy[j];
                break;
            }
            case LayerKind::maxpool: {
                if (!need_dx) break;
                dx = Tensor<T>(x.shape());
                const auto& arg = cache.pool_argmax[ii];
                for (std::size_t j = 0; j < dy.size(); ++j) dx[arg[j]] += dy[j];
                break;
            }
            case LayerKind::flatten:
                if (need_dx) dx = dy.reshaped(x.shape());
                break;
        }
        if (need_dx && !dx.empty()) accumulate(grad_act[ii], dx);
    }
    if (want_input_grad) g.input = grad_act[0].empty() ? Tensor<T>(cache.activations[0].shape()) : grad_act[0];
    return g;
}

template <typename T>
void update_running_stats(Parameters<T>& params, const ForwardCache<T>& cache, BatchNormOptions bn) {
    if (!cache.valid || cache.mode != Mode::train) throw UsageError("running statistics need a training-mode cache");
    for (std::size_t i = 0; i < params.layers.size() && i < cache.bn_batch_mean.size(); ++i) {
        const auto& mean = cache.bn_batch_mean[i];
        if (mean.empty()) continue;
        auto& p = params.layers[i];
        const auto& var = cache.bn_batch_var[i];
        const T mom = static_cast<T>(bn.momentum);
        for (std::size_t ch = 0; ch < mean.size(); ++ch) {
            p.running_mean[ch] = (T(1) - mom) * p.running_mean[ch] + mom * mean[ch];
            p.running_var[ch] = (T(1) - mom) * p.running_var[ch] + mom * var[ch];
        }
    }
}

template <typename T>
LossResult<T> cross_entropy(const Tensor<T>& logits, std::span<const std::uint8_t> labels) {
    if (logits.rank() != 2 || logits.dim(0) != labels.size())
        throw InputError("cross_entropy expects (N, C) logits and N labels");
    const std::size_t n = logits.dim(0), c = logits.dim(1);
    LossResult<T> r;
    r.grad = Tensor<T>(logits.shape());
    double total = 0.0;
    std::vector<double> p(c);
    for (std::size_t b = 0; b < n; ++b) {
        if (labels[b] >= c)
            throw InputError("label " + std::to_string(labels[b]) + " out of range for " + std::to_string(c) +
                             " classes");
        const T* row = logits.raw() + b * c;
        double mx = row[0];
        for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, static_cast<double>(row[j]));
        double z = 0.0;
        for (std::size_t j = 0; j < c; ++j) z += (p[j] = std::exp(row[j] - mx));
        total += mx + std::log(z) - row[labels[b]];
        for (std::size_t j = 0; j < c; ++j)
            r.grad[b * c + j] = static_cast<T>((p[j] / z - (j == labels[b] ? 1.0 : 0.0)) / static_cast<double>(n));
    }
    r.loss = total / static_cast<double>(n);
    return r;
}

template <typename T>
std::vector<std::size_t> argmax_rows(const Tensor<T>& scores) {
    const std::size_t n = scores.dim(0), c = scores.dim(1);
    std::vector<std::size_t> out(n);
    for (std::size_t b = 0; b < n; ++b) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < c; ++j)
            if (scores[b * c + j] > scores[b * c + best]) best = j;
        out[b] = best;
    }
    return out;
}

template <typename T>
void adam_step(std::span<Tensor<T>* const> params, std::span<const Tensor<T>* const> grads, AdamState<T>& state,
               double lr) {
    if (params.size() != grads.size()) throw UsageError("adam_step: parameter and gradient counts differ");
    if (!(lr > 0.0)) throw UsageError("adam_step: learning rate must be positive");
    if (state.step == 0 && state.m.empty()) {
        for (auto* p : params) {
            state.m.emplace_back(p->shape());
            state.v.emplace_back(p->shape());
        }
    }
    if (state.m.size() != params.size()) throw UsageError("adam_step: state was built for a different parameter set");
    for (std::size_t i = 0; i < params.size(); ++i)
        if (params[i]->shape() != grads[i]->shape() || state.m[i].shape() != params[i]->shape())
            throw UsageError("adam_step: shape mismatch for parameter " + std::to_string(i));

    ++state.step;
    const double b1 = state.config.beta1, b2 = state.config.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor<T>& p = *params[i];
        const Tensor<T>& g = *grads[i];
        Tensor<T>& m = state.m[i];
        Tensor<T>& v = state.v[i];
        for (std::size_t j = 0; j < p.size(); ++j) {
            const double gj = g[j];
            const double mj = b1 * m[j] + (1.0 - b1) * gj;
            const double vj = b2 * v[j] + (1.0 - b2) * gj * gj;
            m[j] = static_cast<T>(mj);
            v[j] = static_cast<T>(vj);
            const double update = lr * (mj / c1) / (std::sqrt(vj / c2) + state.config.eps);
            p[j] = static_cast<T>(p[j] - update);
        }
    }
}

#define FLEXSHIFT_INSTANTIATE(T)                                                                                   \
    template std::vector<ParamRef<T>> trainable(Parameters<T>&);                                                   \
    template Parameters<T> build_network<T>(const NetworkConfig&, std::uint64_t);                                  \
    template Tensor<T> forward(const NetworkConfig&, const Parameters<T>&, const Tensor<T>&, Mode,                 \
                               ForwardCache<T>*, BatchNormOptions);                                                \
    template Gradients<T> backward(const NetworkConfig&, const Parameters<T>&, const ForwardCache<T>&,             \
                                   const Tensor<T>&, bool, BatchNormOptions);                                      \
    template void update_running_stats(Parameters<T>&, const ForwardCache<T>&, BatchNormOptions);                  \
    template LossResult<T> cross_entropy(const Tensor<T>&, std::span<const std::uint8_t>);                         \
    template std::vector<std::size_t> argmax_rows(const Tensor<T>&);                                               \
    template void adam_step(std::span<Tensor<T>* const>, std::span<const Tensor<T>* const>, AdamState<T>&, double);

FLEXSHIFT_INSTANTIATE(float)
FLEXSHIFT_INSTANTIATE(double)

}  // namespace flexshift
