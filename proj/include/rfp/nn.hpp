#pragma once

// Minimal volumetric layers with hand-written backward passes.
//
// Every layer is templated on the scalar type: networks train in float and
// are gradient-checked in double. Forward calls take an optional cache; a
// backward call consumes that cache, accumulates parameter gradients and
// returns the gradient with respect to the layer input.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "errors.hpp"
#include "random.hpp"
#include "volume.hpp"

namespace rfp::nn {

template <class S>
using Matrix = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class S>
struct Tensor {
    std::size_t channels = 0;
    Dims dims;
    std::vector<S> data;

    Tensor() = default;
    Tensor(std::size_t c, Dims d, S fill = S(0)) : channels(c), dims(d), data(c * d.count(), fill) {}

    std::size_t spatial() const { return dims.count(); }
    S* channel(std::size_t c) { return data.data() + c * spatial(); }
    const S* channel(std::size_t c) const { return data.data() + c * spatial(); }

    Tensor& operator+=(const Tensor& o)
    {
        for (std::size_t i = 0; i < data.size(); ++i) data[i] += o.data[i];
        return *this;
    }
};

template <class S>
struct Param {
    std::string name;
    std::vector<S> value;
    std::vector<S> grad;

    Param() = default;
    Param(std::string n, std::size_t size) : name(std::move(n)), value(size, S(0)), grad(size, S(0)) {}
    void zero_grad() { std::fill(grad.begin(), grad.end(), S(0)); }
};

template <class S>
using ParamList = std::vector<Param<S>*>;

template <class S>
void zero_grads(const ParamList<S>& ps)
{
    for (auto* p : ps) p->zero_grad();
}

template <class S>
void init_uniform(Param<S>& p, Rng& rng, double bound)
{
    for (auto& v : p.value) v = static_cast<S>(uniform(rng, -bound, bound));
}

// ---------------------------------------------------------------------------

inline Dims conv_out_dims(const Dims& in, int stride)
{
    auto o = [stride](std::size_t n) { return (n - 1) / static_cast<std::size_t>(stride) + 1; };
    return Dims{o(in.depth), o(in.height), o(in.width)};
}

/// 3x3x3 convolution, zero padding 1, stride 1 or 2.
template <class S>
class Conv3d {
public:
    struct Cache {
        Dims in_dims;
        Dims out_dims;
        Matrix<S> cols;
    };

    Conv3d() = default;
    Conv3d(const std::string& name, int cin, int cout, int stride)
        : cin_(cin), cout_(cout), stride_(stride), weight_(name + ".weight", std::size_t(cout * cin * 27)),
          bias_(name + ".bias", std::size_t(cout))
    {
        require(stride == 1 || stride == 2, "conv stride must be 1 or 2");
    }

    void init(Rng& rng) { init_uniform(weight_, rng, std::sqrt(6.0 / (cin_ * 27.0))); }

    int in_channels() const { return cin_; }
    int out_channels() const { return cout_; }
    int stride() const { return stride_; }
    ParamList<S> params() { return {&weight_, &bias_}; }

    Tensor<S> forward(const Tensor<S>& x, Cache* cache) const
    {
        require(x.channels == std::size_t(cin_), "conv input channel mismatch in " + weight_.name);
        const Dims od = conv_out_dims(x.dims, stride_);
        Matrix<S> cols = im2col(x, od);
        Tensor<S> y(std::size_t(cout_), od);
        Eigen::Map<Matrix<S>> out(y.data.data(), cout_, Eigen::Index(od.count()));
        Eigen::Map<const Matrix<S>> w(weight_.value.data(), cout_, cin_ * 27);
        out.noalias() = w * cols;
        for (int c = 0; c < cout_; ++c) out.row(c).array() += bias_.value[std::size_t(c)];
        if (cache) *cache = Cache{x.dims, od, std::move(cols)};
        return y;
    }

    Tensor<S> backward(const Tensor<S>& dy, const Cache& cache, bool need_input_grad = true)
    {
        const auto p = Eigen::Index(cache.out_dims.count());
        Eigen::Map<const Matrix<S>> g(dy.data.data(), cout_, p);
        Eigen::Map<Matrix<S>> gw(weight_.grad.data(), cout_, cin_ * 27);
        gw.noalias() += g * cache.cols.transpose();
        // plain loop: Eigen's redux peels by pointer alignment, which breaks run-to-run bit equality
        for (int c = 0; c < cout_; ++c) {
            const S* row = dy.channel(std::size_t(c));
            S acc = 0;
            for (Eigen::Index i = 0; i < p; ++i) acc += row[i];
            bias_.grad[std::size_t(c)] += acc;
        }
        if (!need_input_grad) return {};
        Eigen::Map<const Matrix<S>> w(weight_.value.data(), cout_, cin_ * 27);
        Matrix<S> dcols = w.transpose() * g;
        return col2im(dcols, cache.in_dims, cache.out_dims);
    }

private:
    // Output columns [first, last) whose tap kx lands inside the input row.
    std::pair<long, long> valid_range(long kx, long in_w, long out_w) const
    {
        const long s = stride_;
        long first = 0;
        while (first < out_w && first * s + kx - 1 < 0) ++first;
        long last = out_w;
        while (last > first && (last - 1) * s + kx - 1 >= in_w) --last;
        return {first, last};
    }

    Matrix<S> im2col(const Tensor<S>& x, const Dims& od) const
    {
        const Dims& id = x.dims;
        const long s = stride_;
        Matrix<S> cols(cin_ * 27, Eigen::Index(od.count()));
        for (int ci = 0; ci < cin_; ++ci) {
            const S* src = x.channel(std::size_t(ci));
            for (int k = 0; k < 27; ++k) {
                const long kz = k / 9, ky = (k / 3) % 3, kx = k % 3;
                S* row = cols.row(ci * 27 + k).data();
                std::size_t o = 0;
                for (long oz = 0; oz < long(od.depth); ++oz) {
                    const long iz = oz * s + kz - 1;
                    for (long oy = 0; oy < long(od.height); ++oy) {
                        const long iy = oy * s + ky - 1;
                        if (iz < 0 || iz >= long(id.depth) || iy < 0 || iy >= long(id.height)) {
                            std::fill(row + o, row + o + od.width, S(0));
                            o += od.width;
                            continue;
                        }
                        const S* line = src + (std::size_t(iz) * id.height + std::size_t(iy)) * id.width;
                        const auto [x0, x1] = valid_range(kx, long(id.width), long(od.width));
                        S* dst = row + o;
                        std::fill(dst, dst + x0, S(0));
                        if (s == 1) {
                            std::copy(line + x0 + kx - 1, line + x1 + kx - 1, dst + x0);
                        } else {
                            for (long ox = x0; ox < x1; ++ox) dst[ox] = line[ox * 2 + kx - 1];
                        }
                        std::fill(dst + x1, dst + od.width, S(0));
                        o += od.width;
                    }
                }
            }
        }
        return cols;
    }

    Tensor<S> col2im(const Matrix<S>& cols, const Dims& id, const Dims& od) const
    {
        Tensor<S> dx(std::size_t(cin_), id);
        const long s = stride_;
        for (int ci = 0; ci < cin_; ++ci) {
            S* dst = dx.channel(std::size_t(ci));
            for (int k = 0; k < 27; ++k) {
                const long kz = k / 9, ky = (k / 3) % 3, kx = k % 3;
                const S* row = cols.row(ci * 27 + k).data();
                std::size_t o = 0;
                for (long oz = 0; oz < long(od.depth); ++oz) {
                    const long iz = oz * s + kz - 1;
                    for (long oy = 0; oy < long(od.height); ++oy) {
                        const long iy = oy * s + ky - 1;
                        if (iz < 0 || iz >= long(id.depth) || iy < 0 || iy >= long(id.height)) {
                            o += od.width;
                            continue;
                        }
                        S* line = dst + (std::size_t(iz) * id.height + std::size_t(iy)) * id.width;
                        const auto [x0, x1] = valid_range(kx, long(id.width), long(od.width));
                        const S* src = row + o;
                        if (s == 1) {
                            for (long ox = x0; ox < x1; ++ox) line[ox + kx - 1] += src[ox];
                        } else {
                            for (long ox = x0; ox < x1; ++ox) line[ox * 2 + kx - 1] += src[ox];
                        }
                        o += od.width;
                    }
                }
            }
        }
        return dx;
    }

    int cin_ = 0, cout_ = 0, stride_ = 1;
    Param<S> weight_, bias_;
};

// ---------------------------------------------------------------------------

template <class S>
S sigmoid(S x)
{
    return S(1) / (S(1) + std::exp(-x));
}

/// x * sigmoid(x), in place; returns the pre-activation for backward.
template <class S>
Tensor<S> silu_inplace(Tensor<S>& x)
{
    Tensor<S> pre = x;
    for (auto& v : x.data) v = v * sigmoid(v);
    return pre;
}

template <class S>
void silu_backward_inplace(Tensor<S>& grad, const Tensor<S>& pre)
{
    for (std::size_t i = 0; i < grad.data.size(); ++i) {
        const S s = sigmoid(pre.data[i]);
        grad.data[i] *= s * (S(1) + pre.data[i] * (S(1) - s));
    }
}

/// Nearest-neighbour 2x upsampling.
template <class S>
Tensor<S> upsample2(const Tensor<S>& x)
{
    const Dims& d = x.dims;
    Tensor<S> y(x.channels, Dims{d.depth * 2, d.height * 2, d.width * 2});
    for (std::size_t c = 0; c < x.channels; ++c) {
        const S* src = x.channel(c);
        S* dst = y.channel(c);
        for (std::size_t z = 0; z < y.dims.depth; ++z)
            for (std::size_t yy = 0; yy < y.dims.height; ++yy) {
                const S* line = src + ((z / 2) * d.height + yy / 2) * d.width;
                S* out = dst + (z * y.dims.height + yy) * y.dims.width;
                for (std::size_t xx = 0; xx < y.dims.width; ++xx) out[xx] = line[xx / 2];
            }
    }
    return y;
}

template <class S>
Tensor<S> upsample2_backward(const Tensor<S>& dy)
{
    const Dims& od = dy.dims;
    Tensor<S> dx(dy.channels, Dims{od.depth / 2, od.height / 2, od.width / 2});
    for (std::size_t c = 0; c < dy.channels; ++c) {
        const S* src = dy.channel(c);
        S* dst = dx.channel(c);
        for (std::size_t z = 0; z < od.depth; ++z)
            for (std::size_t y = 0; y < od.height; ++y) {
                const S* line = src + (z * od.height + y) * od.width;
                S* out = dst + ((z / 2) * dx.dims.height + y / 2) * dx.dims.width;
                for (std::size_t x = 0; x < od.width; ++x) out[x / 2] += line[x];
            }
    }
    return dx;
}

template <class S>
std::vector<S> global_avg_pool(const Tensor<S>& x)
{
    std::vector<S> out(x.channels, S(0));
    const auto n = static_cast<S>(x.spatial());
    for (std::size_t c = 0; c < x.channels; ++c) {
        const S* p = x.channel(c);
        S s(0);
        for (std::size_t i = 0; i < x.spatial(); ++i) s += p[i];
        out[c] = s / n;
    }
    return out;
}

template <class S>
Tensor<S> global_avg_pool_backward(const std::vector<S>& dy, std::size_t channels, const Dims& dims)
{
    Tensor<S> dx(channels, dims);
    const auto n = static_cast<S>(dims.count());
    for (std::size_t c = 0; c < channels; ++c) std::fill(dx.channel(c), dx.channel(c) + dims.count(), dy[c] / n);
    return dx;
}

// ---------------------------------------------------------------------------

template <class S>
class Linear {
public:
    Linear() = default;
    Linear(const std::string& name, int in, int out)
        : in_(in), out_(out), weight_(name + ".weight", std::size_t(in * out)), bias_(name + ".bias", std::size_t(out))
    {
    }

    void init(Rng& rng) { init_uniform(weight_, rng, std::sqrt(3.0 / in_)); }
    int in_features() const { return in_; }
    int out_features() const { return out_; }
    ParamList<S> params() { return {&weight_, &bias_}; }

    std::vector<S> forward(const std::vector<S>& x) const
    {
        require(x.size() == std::size_t(in_), "linear input size mismatch in " + weight_.name);
        std::vector<S> y(bias_.value);
        for (int o = 0; o < out_; ++o) {
            const S* w = &weight_.value[std::size_t(o) * std::size_t(in_)];
            S acc = 0;
            for (int i = 0; i < in_; ++i) acc += w[i] * x[std::size_t(i)];
            y[std::size_t(o)] += acc;
        }
        return y;
    }

    std::vector<S> backward(const std::vector<S>& x, const std::vector<S>& dy)
    {
        std::vector<S> dx(std::size_t(in_), S(0));
        for (int o = 0; o < out_; ++o) {
            const S g = dy[std::size_t(o)];
            const std::size_t base = std::size_t(o) * std::size_t(in_);
            for (int i = 0; i < in_; ++i) {
                weight_.grad[base + std::size_t(i)] += g * x[std::size_t(i)];
                dx[std::size_t(i)] += weight_.value[base + std::size_t(i)] * g;
            }
            bias_.grad[std::size_t(o)] += g;
        }
        return dx;
    }

private:
    int in_ = 0, out_ = 0;
    Param<S> weight_, bias_;
};

/// Layer normalisation over a single feature vector, with per-element gain
/// and bias.
template <class S>
class LayerNorm {
public:
    struct Cache {
        std::vector<S> xhat;
        S inv_std = S(0);
    };

    LayerNorm() = default;
    LayerNorm(const std::string& name, int n, double eps = 1e-5)
        : n_(n), eps_(eps), gain_(name + ".gain", std::size_t(n)), bias_(name + ".bias", std::size_t(n))
    {
        std::fill(gain_.value.begin(), gain_.value.end(), S(1));
    }

    int size() const { return n_; }
    ParamList<S> params() { return {&gain_, &bias_}; }

    std::vector<S> forward(const std::vector<S>& x, Cache* cache) const
    {
        const auto n = static_cast<S>(n_);
        S mean(0);
        for (S v : x) mean += v;
        mean /= n;
        S var(0);
        for (S v : x) var += (v - mean) * (v - mean);
        var /= n;
        const S inv_std = S(1) / std::sqrt(var + static_cast<S>(eps_));
        std::vector<S> xhat(x.size()), y(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) {
            xhat[i] = (x[i] - mean) * inv_std;
            y[i] = gain_.value[i] * xhat[i] + bias_.value[i];
        }
        if (cache) *cache = Cache{std::move(xhat), inv_std};
        return y;
    }

    std::vector<S> backward(const std::vector<S>& dy, const Cache& cache)
    {
        const auto n = static_cast<S>(n_);
        std::vector<S> dxhat(dy.size());
        S sum_d(0), sum_dx(0);
        for (std::size_t i = 0; i < dy.size(); ++i) {
            gain_.grad[i] += dy[i] * cache.xhat[i];
            bias_.grad[i] += dy[i];
            dxhat[i] = dy[i] * gain_.value[i];
            sum_d += dxhat[i];
            sum_dx += dxhat[i] * cache.xhat[i];
        }
        std::vector<S> dx(dy.size());
        for (std::size_t i = 0; i < dy.size(); ++i)
            dx[i] = cache.inv_std / n * (n * dxhat[i] - sum_d - cache.xhat[i] * sum_dx);
        return dx;
    }

private:
    int n_ = 0;
    double eps_ = 1e-5;
    Param<S> gain_, bias_;
};

// ---------------------------------------------------------------------------
// Optimisers

struct SgdConfig {
    double lr = 0.01;
    double momentum = 0.9;
};

template <class S>
class Sgd {
public:
    Sgd(ParamList<S> params, SgdConfig cfg) : params_(std::move(params)), cfg_(cfg)
    {
        for (auto* p : params_) velocity_.emplace_back(p->value.size(), S(0));
    }

    void step()
    {
        const auto lr = static_cast<S>(cfg_.lr), mu = static_cast<S>(cfg_.momentum);
        for (std::size_t k = 0; k < params_.size(); ++k) {
            auto& p = *params_[k];
            auto& v = velocity_[k];
            for (std::size_t i = 0; i < p.value.size(); ++i) {
                v[i] = mu * v[i] + p.grad[i];
                p.value[i] -= lr * v[i];
            }
        }
    }

private:
    ParamList<S> params_;
    SgdConfig cfg_;
    std::vector<std::vector<S>> velocity_;
};

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

template <class S>
class Adam {
public:
    Adam(ParamList<S> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg)
    {
        for (auto* p : params_) {
            m_.emplace_back(p->value.size(), 0.0);
            v_.emplace_back(p->value.size(), 0.0);
        }
    }

    void step()
    {
        ++t_;
        const double c1 = 1.0 - std::pow(cfg_.beta1, double(t_)), c2 = 1.0 - std::pow(cfg_.beta2, double(t_));
        for (std::size_t k = 0; k < params_.size(); ++k) {
            auto& p = *params_[k];
            for (std::size_t i = 0; i < p.value.size(); ++i) {
                const double g = p.grad[i];
                m_[k][i] = cfg_.beta1 * m_[k][i] + (1.0 - cfg_.beta1) * g;
                v_[k][i] = cfg_.beta2 * v_[k][i] + (1.0 - cfg_.beta2) * g * g;
                const double upd = cfg_.lr * (m_[k][i] / c1) / (std::sqrt(v_[k][i] / c2) + cfg_.eps);
                p.value[i] = static_cast<S>(p.value[i] - upd);
            }
        }
    }

private:
    ParamList<S> params_;
    AdamConfig cfg_;
    std::vector<std::vector<double>> m_, v_;
    long t_ = 0;
};

// ---------------------------------------------------------------------------
// Weight (de)serialisation: {"<param name>": [flat row-major values], ...}

template <class S>
nlohmann::json params_to_json(const ParamList<S>& ps)
{
    nlohmann::json j = nlohmann::json::object();
    for (const auto* p : ps) {
        nlohmann::json arr = nlohmann::json::array();
        for (S v : p->value) arr.push_back(static_cast<double>(v));
        j[p->name] = std::move(arr);
    }
    return j;
}

template <class S>
void params_from_json(const ParamList<S>& ps, const nlohmann::json& j)
{
    for (auto* p : ps) {
        if (!j.contains(p->name)) throw FormatError("model weights: missing array '" + p->name + "'");
        const auto& arr = j.at(p->name);
        if (!arr.is_array() || arr.size() != p->value.size())
            throw FormatError("model weights: array '" + p->name + "' has wrong length");
        for (std::size_t i = 0; i < arr.size(); ++i) {
            if (!arr[i].is_number()) throw FormatError("model weights: non-numeric entry in '" + p->name + "'");
            p->value[i] = static_cast<S>(arr[i].template get<double>());
        }
    }
    if (j.size() != ps.size()) throw FormatError("model weights: unexpected extra arrays");
}

} // namespace rfp::nn
