#pragma once

// Healthy-persona generation by diffusion inpainting.
//
// A small volumetric encoder-decoder predicts the injected noise from three
// input channels (noisy volume, masked context, mask). Sampling runs the
// reverse chain from pure noise and re-imposes the forward-diffused known
// region at every step.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "errors.hpp"
#include "nn.hpp"
#include "random.hpp"
#include "volume.hpp"

namespace rfp {

struct NoiseSchedule {
    int T = 0;
    double beta_start = 0.0;
    double beta_end = 0.0;
    std::vector<double> betas;
    std::vector<double> alphas;
    std::vector<double> alpha_bars;
};

/// Linear beta schedule from beta_start to beta_end over T steps.
inline NoiseSchedule make_schedule(int T, double beta_start, double beta_end)
{
    require(T >= 2, "schedule needs T >= 2");
    require(beta_start > 0.0 && beta_start < beta_end && beta_end < 1.0,
            "schedule needs 0 < beta_start < beta_end < 1");
    NoiseSchedule s{T, beta_start, beta_end, {}, {}, {}};
    s.betas.resize(std::size_t(T));
    s.alphas.resize(std::size_t(T));
    s.alpha_bars.resize(std::size_t(T));
    double prod = 1.0;
    for (int t = 0; t < T; ++t) {
        const double b = t == T - 1 ? beta_end : beta_start + (beta_end - beta_start) * double(t) / double(T - 1);
        s.betas[std::size_t(t)] = b;
        s.alphas[std::size_t(t)] = 1.0 - b;
        prod *= 1.0 - b;
        s.alpha_bars[std::size_t(t)] = prod;
    }
    return s;
}

/// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) noise.
inline Volume forward_diffuse(const Volume& x0, int t, const Volume& noise, const NoiseSchedule& s)
{
    if (!(x0.dims() == noise.dims())) throw ValidationError("forward_diffuse: shape mismatch");
    require(t >= 0 && t < s.T, "forward_diffuse: t out of range");
    const double a = std::sqrt(s.alpha_bars[std::size_t(t)]), b = std::sqrt(1.0 - s.alpha_bars[std::size_t(t)]);
    Volume out(x0.dims());
    auto o = out.voxels();
    auto x = x0.voxels();
    auto e = noise.voxels();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = static_cast<float>(a * double(x[i]) + b * double(e[i]));
    return out;
}

// ---------------------------------------------------------------------------

struct DenoiserTopology {
    int in_channels = 3;
    std::array<int, 3> widths{8, 16, 32};  // stage 0, stage 1, bottleneck
    int time_embedding = 16;
};

template <class S>
std::vector<S> timestep_embedding(int t, int dim)
{
    std::vector<S> e(std::size_t(dim), S(0));
    const int half = dim / 2;
    for (int i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(10000.0) * double(i) / double(half));
        e[std::size_t(i)] = static_cast<S>(std::sin(double(t) * freq));
        e[std::size_t(half + i)] = static_cast<S>(std::cos(double(t) * freq));
    }
    return e;
}

/// Two-stage encoder-decoder with additive skips and a timestep embedding
/// added at the bottleneck. Input dims must be divisible by 4.
template <class S>
class Denoiser {
public:
    struct Tape {
        typename nn::Conv3d<S>::Cache c0, c1, c2, c3, c4, c5, c6;
        nn::Tensor<S> a0, a1, a2, a3, a4, a5;
        std::vector<S> temb_in;
    };

    Denoiser() : Denoiser(DenoiserTopology{}) {}
    explicit Denoiser(DenoiserTopology topo) : topo_(topo)
    {
        const auto [w0, w1, w2] = topo.widths;
        enc0_ = nn::Conv3d<S>("enc0", topo.in_channels, w0, 1);
        enc1_ = nn::Conv3d<S>("enc1", w0, w1, 2);
        enc2_ = nn::Conv3d<S>("enc2", w1, w2, 2);
        temb_ = nn::Linear<S>("temb", topo.time_embedding, w2);
        mid_ = nn::Conv3d<S>("mid", w2, w2, 1);
        dec1_ = nn::Conv3d<S>("dec1", w2, w1, 1);
        dec0_ = nn::Conv3d<S>("dec0", w1, w0, 1);
        out_ = nn::Conv3d<S>("out", w0, 1, 1);
    }

    const DenoiserTopology& topology() const { return topo_; }

    void init(Rng& rng)
    {
        enc0_.init(rng);
        enc1_.init(rng);
        enc2_.init(rng);
        temb_.init(rng);
        mid_.init(rng);
        dec1_.init(rng);
        dec0_.init(rng);
        out_.init(rng);
    }

    nn::ParamList<S> params()
    {
        nn::ParamList<S> ps;
        for (const auto& l : {enc0_.params(), enc1_.params(), enc2_.params(), temb_.params(), mid_.params(),
                              dec1_.params(), dec0_.params(), out_.params()})
            ps.insert(ps.end(), l.begin(), l.end());
        return ps;
    }

    nn::Tensor<S> forward(const nn::Tensor<S>& input, int t, Tape* tape) const
    {
        const Dims& d = input.dims;
        if (d.depth % 4 || d.height % 4 || d.width % 4)
            throw ValidationError("denoiser: dims " + to_string(d) + " must be divisible by 4");
        Tape local;
        Tape& tp = tape ? *tape : local;

        nn::Tensor<S> h0 = enc0_.forward(input, &tp.c0);
        tp.a0 = nn::silu_inplace(h0);
        nn::Tensor<S> h1 = enc1_.forward(h0, &tp.c1);
        tp.a1 = nn::silu_inplace(h1);
        nn::Tensor<S> h2 = enc2_.forward(h1, &tp.c2);
        tp.a2 = nn::silu_inplace(h2);
        tp.temb_in = timestep_embedding<S>(t, topo_.time_embedding);
        const auto emb = temb_.forward(tp.temb_in);
        for (std::size_t c = 0; c < h2.channels; ++c) {
            S* p = h2.channel(c);
            for (std::size_t i = 0; i < h2.spatial(); ++i) p[i] += emb[c];
        }
        nn::Tensor<S> h3 = mid_.forward(h2, &tp.c3);
        tp.a3 = nn::silu_inplace(h3);
        nn::Tensor<S> h4 = dec1_.forward(h3, &tp.c4);
        tp.a4 = nn::silu_inplace(h4);
        nn::Tensor<S> u4 = nn::upsample2(h4);
        u4 += h1;
        nn::Tensor<S> h5 = dec0_.forward(u4, &tp.c5);
        tp.a5 = nn::silu_inplace(h5);
        nn::Tensor<S> u5 = nn::upsample2(h5);
        u5 += h0;
        return out_.forward(u5, &tp.c6);
    }

    /// Accumulates parameter gradients for dL/d(output) = grad.
    void backward(const nn::Tensor<S>& grad, const Tape& tp)
    {
        nn::Tensor<S> du5 = out_.backward(grad, tp.c6);
        nn::Tensor<S> dh0 = du5;
        nn::Tensor<S> dh5 = nn::upsample2_backward(du5);
        nn::silu_backward_inplace(dh5, tp.a5);
        nn::Tensor<S> du4 = dec0_.backward(dh5, tp.c5);
        nn::Tensor<S> dh1 = du4;
        nn::Tensor<S> dh4 = nn::upsample2_backward(du4);
        nn::silu_backward_inplace(dh4, tp.a4);
        nn::Tensor<S> dh3 = dec1_.backward(dh4, tp.c4);
        nn::silu_backward_inplace(dh3, tp.a3);
        nn::Tensor<S> dh2 = mid_.backward(dh3, tp.c3);
        std::vector<S> demb(dh2.channels, S(0));
        for (std::size_t c = 0; c < dh2.channels; ++c) {
            const S* p = dh2.channel(c);
            for (std::size_t i = 0; i < dh2.spatial(); ++i) demb[c] += p[i];
        }
        temb_.backward(tp.temb_in, demb);
        nn::silu_backward_inplace(dh2, tp.a2);
        dh1 += enc2_.backward(dh2, tp.c2);
        nn::silu_backward_inplace(dh1, tp.a1);
        dh0 += enc1_.backward(dh1, tp.c1);
        nn::silu_backward_inplace(dh0, tp.a0);
        enc0_.backward(dh0, tp.c0, false);
    }

private:
    DenoiserTopology topo_;
    nn::Conv3d<S> enc0_, enc1_, enc2_, mid_, dec1_, dec0_, out_;
    nn::Linear<S> temb_;
};

/// Stacks (x_t, context, mask) into the three-channel denoiser input.
template <class S>
nn::Tensor<S> denoiser_input(const std::vector<S>& x_t, const std::vector<S>& context, const BoxMask& mask,
                             const Dims& dims)
{
    nn::Tensor<S> in(3, dims);
    std::copy(x_t.begin(), x_t.end(), in.channel(0));
    std::copy(context.begin(), context.end(), in.channel(1));
    S* m = in.channel(2);
    for (std::size_t z = 0; z < dims.depth; ++z)
        for (std::size_t y = 0; y < dims.height; ++y)
            for (std::size_t x = 0; x < dims.width; ++x)
                m[(z * dims.height + y) * dims.width + x] = mask.contains(z, y, x) ? S(1) : S(0);
    return in;
}

/// Squared-error noise-prediction loss, averaged over the voxels selected by
/// `weights` (1 = counted). Returns dL/d(prediction) through `grad` if given.
template <class S>
double noise_loss(const nn::Tensor<S>& pred, const std::vector<S>& noise, const std::vector<S>& weights,
                  nn::Tensor<S>* grad)
{
    double count = 0.0, loss = 0.0;
    for (std::size_t i = 0; i < noise.size(); ++i) count += double(weights[i]);
    require(count > 0.0, "noise_loss: empty loss region");
    if (grad) *grad = nn::Tensor<S>(1, pred.dims);
    for (std::size_t i = 0; i < noise.size(); ++i) {
        const double d = double(pred.data[i]) - double(noise[i]);
        loss += double(weights[i]) * d * d;
        if (grad) grad->data[i] = static_cast<S>(2.0 * double(weights[i]) * d / count);
    }
    return loss / count;
}

// ---------------------------------------------------------------------------

enum class LossRegion { mask, full };
enum class SamplerVariance { beta, posterior };

struct PersonaTrainConfig {
    int T = 100;
    double beta_start = 1e-3;
    double beta_end = 0.2;
    int steps = 3000;
    int batch_size = 2;
    double lr = 2e-3;
    std::array<double, 3> mask_fractions{0.5, 0.3, 0.5};
    LossRegion loss_region = LossRegion::mask;
    SamplerVariance sampler_variance = SamplerVariance::beta;
    std::uint64_t seed = 0;
    DenoiserTopology topology{};
};

struct DiffusionModel {
    static constexpr const char* kVersion = "rfp-persona-1";

    NoiseSchedule schedule;
    Denoiser<float> net;
    PersonaTrainConfig config;
    double shift = 0.0;  // intensity normalisation: (v - shift) / scale
    double scale = 1.0;
    double clip_lo = -5.0;  // clamp range for x0 estimates, normalised units
    double clip_hi = 5.0;
    std::vector<double> loss_curve;
};

struct HealthySubject {
    std::string id;
    bool abn = false;
    std::array<Volume, 3> views;
};

/// One frozen (volume, t, noise) draw for loss monitoring.
struct DenoiseSample {
    std::vector<float> x0;  // normalised
    int t = 0;
    std::vector<float> noise;
};

namespace detail {

inline std::vector<float> normalise(const Volume& v, double shift, double scale)
{
    std::vector<float> out(v.size());
    auto s = v.voxels();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>((double(s[i]) - shift) / scale);
    return out;
}

inline std::vector<float> region_weights(const Dims& d, const BoxMask& m, LossRegion r)
{
    std::vector<float> w(d.count(), 1.0f);
    if (r == LossRegion::full) return w;
    for (std::size_t z = 0; z < d.depth; ++z)
        for (std::size_t y = 0; y < d.height; ++y)
            for (std::size_t x = 0; x < d.width; ++x)
                w[(z * d.height + y) * d.width + x] = m.contains(z, y, x) ? 1.0f : 0.0f;
    return w;
}

inline double denoise_loss(Denoiser<float>& net, const NoiseSchedule& sched, const DenoiseSample& s,
                           const BoxMask& mask, const Dims& dims, LossRegion region, bool accumulate)
{
    const double a = std::sqrt(sched.alpha_bars[std::size_t(s.t)]), b = std::sqrt(1.0 - sched.alpha_bars[std::size_t(s.t)]);
    std::vector<float> xt(s.x0.size()), ctx(s.x0.size());
    for (std::size_t i = 0; i < xt.size(); ++i) xt[i] = static_cast<float>(a * s.x0[i] + b * s.noise[i]);
    for (std::size_t z = 0; z < dims.depth; ++z)
        for (std::size_t y = 0; y < dims.height; ++y)
            for (std::size_t x = 0; x < dims.width; ++x) {
                const std::size_t i = (z * dims.height + y) * dims.width + x;
                ctx[i] = mask.contains(z, y, x) ? 0.0f : s.x0[i];
            }
    typename Denoiser<float>::Tape tape;
    const auto pred = net.forward(denoiser_input(xt, ctx, mask, dims), s.t, accumulate ? &tape : nullptr);
    nn::Tensor<float> grad;
    const double loss = noise_loss(pred, s.noise, region_weights(dims, mask, region), accumulate ? &grad : nullptr);
    if (accumulate) net.backward(grad, tape);
    return loss;
}

} // namespace detail

inline DenoiseSample make_denoise_sample(const DiffusionModel& m, const Volume& v, Rng& rng)
{
    DenoiseSample s;
    s.x0 = detail::normalise(v, m.shift, m.scale);
    s.t = static_cast<int>(rng() % static_cast<std::uint64_t>(m.schedule.T));
    s.noise.resize(s.x0.size());
    for (auto& e : s.noise) e = static_cast<float>(std_normal(rng));
    return s;
}

/// Mean noise-prediction loss of the model on a fixed batch.
inline double validation_loss(DiffusionModel& m, const std::vector<DenoiseSample>& batch, const Dims& dims)
{
    const BoxMask mask = central_mask(dims, m.config.mask_fractions);
    double total = 0.0;
    for (const auto& s : batch)
        total += detail::denoise_loss(m.net, m.schedule, s, mask, dims, m.config.loss_region, false);
    return total / double(batch.size());
}

inline DiffusionModel init_persona_model(const std::vector<HealthySubject>& healthy, const PersonaTrainConfig& cfg)
{
    require(!healthy.empty(), "train_persona: no training subjects");
    for (const auto& s : healthy)
        if (s.abn)
            throw ValidationError("train_persona: subject " + s.id +
                                  " is labelled abnormal; personas are trained on healthy subjects only");
    require(cfg.steps >= 0 && cfg.batch_size >= 1 && cfg.lr > 0.0, "train_persona: bad optimiser settings");

    DiffusionModel m;
    m.schedule = make_schedule(cfg.T, cfg.beta_start, cfg.beta_end);
    m.config = cfg;
    m.net = Denoiser<float>(cfg.topology);
    Rng init_rng = make_rng(derive_seed(cfg.seed, 1));
    m.net.init(init_rng);

    const Dims dims = healthy.front().views[0].dims();
    double sum = 0.0, sum_sq = 0.0, count = 0.0, lo = 1e300, hi = -1e300;
    for (const auto& s : healthy)
        for (const auto& v : s.views) {
            if (!(v.dims() == dims)) throw ValidationError("train_persona: volumes differ in dims");
            for (float x : v.voxels()) {
                sum += x;
                sum_sq += double(x) * x;
                count += 1.0;
                lo = std::min(lo, double(x));
                hi = std::max(hi, double(x));
            }
        }
    m.shift = sum / count;
    m.scale = std::max(std::sqrt(std::max(0.0, sum_sq / count - m.shift * m.shift)), 1e-6);
    const double pad = 0.1 * (hi - lo) / m.scale;
    m.clip_lo = (lo - m.shift) / m.scale - pad;
    m.clip_hi = (hi - m.shift) / m.scale + pad;
    return m;
}

/// Trains the noise predictor on healthy subjects with the central box mask.
inline DiffusionModel train_persona(const std::vector<HealthySubject>& healthy, const PersonaTrainConfig& cfg)
{
    DiffusionModel m = init_persona_model(healthy, cfg);
    const Dims dims = healthy.front().views[0].dims();
    const BoxMask mask = central_mask(dims, cfg.mask_fractions);

    auto params = m.net.params();
    nn::Adam<float> opt(params, nn::AdamConfig{cfg.lr});
    Rng rng = make_rng(derive_seed(cfg.seed, 2));
    m.loss_curve.reserve(std::size_t(cfg.steps));
    for (int step = 0; step < cfg.steps; ++step) {
        nn::zero_grads(params);
        double loss = 0.0;
        for (int b = 0; b < cfg.batch_size; ++b) {
            const auto& subj = healthy[rng() % healthy.size()];
            const auto& vol = subj.views[rng() % 3];
            const DenoiseSample s = make_denoise_sample(m, vol, rng);
            loss += detail::denoise_loss(m.net, m.schedule, s, mask, dims, cfg.loss_region, true);
        }
        for (auto* p : params)
            for (auto& g : p->grad) g /= float(cfg.batch_size);
        opt.step();
        m.loss_curve.push_back(loss / cfg.batch_size);
    }
    return m;
}

/// Fills the box with a healthy-looking completion; voxels outside the box
/// are copied from `v` unchanged.
inline Volume inpaint(const DiffusionModel& model, const Volume& v, const BoxMask& mask, std::uint64_t seed)
{
    if (!mask.fits(v.dims())) throw ValidationError("inpaint: mask out of bounds for volume " + to_string(v.dims()));
    const Dims dims = v.dims();
    const NoiseSchedule& s = model.schedule;
    const std::vector<float> x0 = detail::normalise(v, model.shift, model.scale);
    std::vector<float> ctx = x0;
    std::vector<std::uint8_t> inside(x0.size(), 0);
    for (std::size_t z = 0; z < dims.depth; ++z)
        for (std::size_t y = 0; y < dims.height; ++y)
            for (std::size_t x = 0; x < dims.width; ++x)
                if (mask.contains(z, y, x)) {
                    const std::size_t i = (z * dims.height + y) * dims.width + x;
                    inside[i] = 1;
                    ctx[i] = 0.0f;
                }

    Rng rng = make_rng(seed);
    std::vector<float> x(x0.size());
    for (auto& e : x) e = static_cast<float>(std_normal(rng));

    typename Denoiser<float>::Tape tape;
    for (int t = s.T - 1; t >= 0; --t) {
        const double ab = s.alpha_bars[std::size_t(t)];
        const double sa = std::sqrt(ab), sb = std::sqrt(1.0 - ab);
        for (std::size_t i = 0; i < x.size(); ++i)
            if (!inside[i]) x[i] = static_cast<float>(sa * x0[i] + sb * std_normal(rng));

        const auto eps = model.net.forward(denoiser_input(x, ctx, mask, dims), t, &tape);
        const double ab_prev = t > 0 ? s.alpha_bars[std::size_t(t - 1)] : 1.0;
        const double beta = s.betas[std::size_t(t)];
        const double c0 = std::sqrt(ab_prev) * beta / (1.0 - ab);
        const double ct = std::sqrt(s.alphas[std::size_t(t)]) * (1.0 - ab_prev) / (1.0 - ab);
        const double var = model.config.sampler_variance == SamplerVariance::beta ? beta
                                                                                   : beta * (1.0 - ab_prev) / (1.0 - ab);
        for (std::size_t i = 0; i < x.size(); ++i) {
            double x0_hat = (double(x[i]) - sb * double(eps.data[i])) / sa;
            x0_hat = std::clamp(x0_hat, model.clip_lo, model.clip_hi);
            x[i] = t > 0 ? static_cast<float>(c0 * x0_hat + ct * x[i] + std::sqrt(var) * std_normal(rng))
                         : static_cast<float>(x0_hat);
        }
    }

    Volume out = v;
    auto o = out.voxels();
    for (std::size_t i = 0; i < o.size(); ++i)
        if (inside[i]) o[i] = static_cast<float>(double(x[i]) * model.scale + model.shift);
    return out;
}

// ---------------------------------------------------------------------------
// Reconstruction metrics

inline double mse(const Volume& a, const Volume& b)
{
    if (!(a.dims() == b.dims())) throw ValidationError("mse: dim mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = double(a.voxels()[i]) - double(b.voxels()[i]);
        s += d * d;
    }
    return s / double(a.size());
}

inline constexpr std::size_t kSsimWindow = 7;

/// Mean SSIM over all fully contained 7^3 windows (uniform weights,
/// population moments). L is the dynamic range of `a`.
inline double ssim3d(const Volume& a, const Volume& b)
{
    if (!(a.dims() == b.dims())) throw ValidationError("ssim3d: dim mismatch");
    const Dims& d = a.dims();
    if (d.depth < kSsimWindow || d.height < kSsimWindow || d.width < kSsimWindow)
        throw ValidationError("ssim3d: volume " + to_string(d) + " smaller than the 7^3 window");

    const auto [lo, hi] = std::minmax_element(a.voxels().begin(), a.voxels().end());
    double L = double(*hi) - double(*lo);
    if (L <= 0.0) L = 1.0;
    const double c1 = (0.01 * L) * (0.01 * L), c2 = (0.03 * L) * (0.03 * L);

    // zero-padded prefix sums of a, b, a^2, b^2, ab
    const std::size_t D = d.depth + 1, H = d.height + 1, W = d.width + 1;
    std::array<std::vector<double>, 5> P;
    for (auto& p : P) p.assign(D * H * W, 0.0);
    auto at = [&](std::size_t z, std::size_t y, std::size_t x) { return (z * H + y) * W + x; };
    for (std::size_t z = 1; z < D; ++z)
        for (std::size_t y = 1; y < H; ++y)
            for (std::size_t x = 1; x < W; ++x) {
                const double va = a.at(z - 1, y - 1, x - 1), vb = b.at(z - 1, y - 1, x - 1);
                const std::array<double, 5> v{va, vb, va * va, vb * vb, va * vb};
                for (std::size_t k = 0; k < 5; ++k)
                    P[k][at(z, y, x)] = v[k] + P[k][at(z - 1, y, x)] + P[k][at(z, y - 1, x)] + P[k][at(z, y, x - 1)] -
                                        P[k][at(z - 1, y - 1, x)] - P[k][at(z - 1, y, x - 1)] -
                                        P[k][at(z, y - 1, x - 1)] + P[k][at(z - 1, y - 1, x - 1)];
            }
    const std::size_t w = kSsimWindow;
    const double n = double(w * w * w);
    double total = 0.0;
    std::size_t windows = 0;
    for (std::size_t z = 0; z + w <= d.depth; ++z)
        for (std::size_t y = 0; y + w <= d.height; ++y)
            for (std::size_t x = 0; x + w <= d.width; ++x) {
                std::array<double, 5> s{};
                for (std::size_t k = 0; k < 5; ++k) {
                    const auto& p = P[k];
                    s[k] = p[at(z + w, y + w, x + w)] - p[at(z, y + w, x + w)] - p[at(z + w, y, x + w)] -
                           p[at(z + w, y + w, x)] + p[at(z, y, x + w)] + p[at(z, y + w, x)] + p[at(z + w, y, x)] -
                           p[at(z, y, x)];
                }
                const double ma = s[0] / n, mb = s[1] / n;
                const double va = std::max(0.0, s[2] / n - ma * ma), vb = std::max(0.0, s[3] / n - mb * mb);
                const double cov = s[4] / n - ma * mb;
                total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                ++windows;
            }
    return total / double(windows);
}

// ---------------------------------------------------------------------------
// Model file

inline nlohmann::json persona_config_to_json(const PersonaTrainConfig& c)
{
    return {{"T", c.T},
            {"beta_start", c.beta_start},
            {"beta_end", c.beta_end},
            {"steps", c.steps},
            {"batch_size", c.batch_size},
            {"lr", c.lr},
            {"mask_fractions", c.mask_fractions},
            {"loss_region", c.loss_region == LossRegion::mask ? "mask" : "full"},
            {"sampler_variance", c.sampler_variance == SamplerVariance::beta ? "beta" : "posterior"},
            {"seed", c.seed}};
}

inline nlohmann::json diffusion_model_to_json(DiffusionModel& m)
{
    const auto& topo = m.net.topology();
    return {{"version", DiffusionModel::kVersion},
            {"schedule", {{"T", m.schedule.T}, {"beta_start", m.schedule.beta_start}, {"beta_end", m.schedule.beta_end}}},
            {"topology",
             {{"in_channels", topo.in_channels}, {"widths", topo.widths}, {"time_embedding", topo.time_embedding}}},
            {"normalisation", {{"shift", m.shift}, {"scale", m.scale}, {"clip_lo", m.clip_lo}, {"clip_hi", m.clip_hi}}},
            {"training", persona_config_to_json(m.config)},
            {"loss_curve", m.loss_curve},
            {"seed", m.config.seed},
            {"weights", nn::params_to_json(m.net.params())}};
}

inline DiffusionModel diffusion_model_from_json(const nlohmann::json& j)
{
    try {
        if (j.at("version") != DiffusionModel::kVersion) throw FormatError("persona model: unsupported version");
        DiffusionModel m;
        const auto& tr = j.at("training");
        PersonaTrainConfig c;
        c.T = j.at("schedule").at("T");
        c.beta_start = j.at("schedule").at("beta_start");
        c.beta_end = j.at("schedule").at("beta_end");
        c.steps = tr.at("steps");
        c.batch_size = tr.at("batch_size");
        c.lr = tr.at("lr");
        c.mask_fractions = tr.at("mask_fractions").get<std::array<double, 3>>();
        c.loss_region = tr.at("loss_region") == "mask" ? LossRegion::mask : LossRegion::full;
        c.sampler_variance = tr.at("sampler_variance") == "beta" ? SamplerVariance::beta : SamplerVariance::posterior;
        c.seed = j.at("seed");
        const auto& tp = j.at("topology");
        c.topology.in_channels = tp.at("in_channels");
        c.topology.widths = tp.at("widths").get<std::array<int, 3>>();
        c.topology.time_embedding = tp.at("time_embedding");
        m.config = c;
        m.schedule = make_schedule(c.T, c.beta_start, c.beta_end);
        m.net = Denoiser<float>(c.topology);
        const auto& nrm = j.at("normalisation");
        m.shift = nrm.at("shift");
        m.scale = nrm.at("scale");
        m.clip_lo = nrm.at("clip_lo");
        m.clip_hi = nrm.at("clip_hi");
        m.loss_curve = j.at("loss_curve").get<std::vector<double>>();
        nn::params_from_json(m.net.params(), j.at("weights"));
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("persona model: ") + e.what());
    } catch (const ValidationError& e) {
        throw FormatError(std::string("persona model: ") + e.what());
    }
}

} // namespace rfp
