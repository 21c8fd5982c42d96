#pragma once

// Image-conditioned feature usage with a transparent logistic read-out.
//
//   u = sigmoid(LayerNorm(FC(concat_v GAP(conv^3(view_v)))))     usage weights
//   p = sigmoid(sum_n beta_n u_n r_n [+ b])                       prediction
//
// Training minimises the positive-weighted cross-entropy plus
// lambda_u * mean_b ||u_b||_1 + lambda_beta * ||beta||_2^2 jointly over the
// usage network and beta. At inference, usage below the threshold T_u is
// zeroed (hard selection).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "errors.hpp"
#include "metrics.hpp"
#include "nn.hpp"
#include "radiomics.hpp"
#include "random.hpp"
#include "view.hpp"
#include "volume.hpp"

namespace rfp {

enum class Task { abn, acl, men };

inline std::string_view task_name(Task t)
{
    switch (t) {
    case Task::abn: return "abn";
    case Task::acl: return "acl";
    case Task::men: return "men";
    }
    return "?";
}

inline Task parse_task(std::string_view s)
{
    for (Task t : {Task::abn, Task::acl, Task::men})
        if (task_name(t) == s) return t;
    throw ValidationError("unknown task '" + std::string(s) + "'");
}

template <class S>
nn::Tensor<S> to_tensor(const Volume& v)
{
    nn::Tensor<S> t(1, v.dims());
    std::copy(v.voxels().begin(), v.voxels().end(), t.data.begin());
    return t;
}

template <class S>
using ViewTensors = std::array<nn::Tensor<S>, 3>;

template <class S>
ViewTensors<S> to_view_tensors(const std::array<Volume, 3>& views)
{
    return {to_tensor<S>(views[0]), to_tensor<S>(views[1]), to_tensor<S>(views[2])};
}

// ---------------------------------------------------------------------------

/// Per-view branch of three stride-2 conv blocks with global average pooling;
/// the pooled embeddings feed one FC layer with layer normalisation and a
/// sigmoid, giving one usage weight per candidate feature.
template <class S>
class UsagePredictor {
public:
    struct BranchTape {
        std::array<typename nn::Conv3d<S>::Cache, 3> conv;
        std::array<nn::Tensor<S>, 3> pre;
        Dims pooled_dims;
    };
    struct Tape {
        std::array<BranchTape, 3> branch;
        std::vector<S> embedding;
        typename nn::LayerNorm<S>::Cache norm;
        std::vector<S> u;
    };

    UsagePredictor() = default;
    UsagePredictor(int outputs, std::array<int, 3> widths = {8, 16, 32}) : outputs_(outputs), widths_(widths)
    {
        require(outputs >= 1, "usage predictor needs at least one output");
        for (int v = 0; v < 3; ++v) {
            const std::string p = "view" + std::to_string(v) + ".";
            branches_[std::size_t(v)] = {nn::Conv3d<S>(p + "conv1", 1, widths[0], 2),
                                         nn::Conv3d<S>(p + "conv2", widths[0], widths[1], 2),
                                         nn::Conv3d<S>(p + "conv3", widths[1], widths[2], 2)};
        }
        fc_ = nn::Linear<S>("fc", 3 * widths[2], outputs);
        norm_ = nn::LayerNorm<S>("norm", outputs);
    }

    int outputs() const { return outputs_; }
    const std::array<int, 3>& widths() const { return widths_; }

    void init(Rng& rng)
    {
        for (auto& b : branches_)
            for (auto& c : b) c.init(rng);
        fc_.init(rng);
    }

    void set_zero()
    {
        for (auto* p : params()) std::fill(p->value.begin(), p->value.end(), S(0));
    }

    nn::ParamList<S> params()
    {
        nn::ParamList<S> ps;
        for (auto& b : branches_)
            for (auto& c : b) {
                auto l = c.params();
                ps.insert(ps.end(), l.begin(), l.end());
            }
        for (const auto& l : {fc_.params(), norm_.params()}) ps.insert(ps.end(), l.begin(), l.end());
        return ps;
    }

    std::vector<S> forward(const ViewTensors<S>& views, Tape* tape) const
    {
        Tape local;
        Tape& tp = tape ? *tape : local;
        tp.embedding.clear();
        for (std::size_t v = 0; v < 3; ++v) {
            nn::Tensor<S> h = views[v];
            for (std::size_t k = 0; k < 3; ++k) {
                h = branches_[v][k].forward(h, &tp.branch[v].conv[k]);
                tp.branch[v].pre[k] = nn::silu_inplace(h);
            }
            tp.branch[v].pooled_dims = h.dims;
            const auto pooled = nn::global_avg_pool(h);
            tp.embedding.insert(tp.embedding.end(), pooled.begin(), pooled.end());
        }
        const auto logits = norm_.forward(fc_.forward(tp.embedding), &tp.norm);
        tp.u.resize(logits.size());
        for (std::size_t i = 0; i < logits.size(); ++i) tp.u[i] = nn::sigmoid(logits[i]);
        return tp.u;
    }

    /// Accumulates parameter gradients given dL/du.
    void backward(const std::vector<S>& du, const Tape& tp)
    {
        std::vector<S> dlogit(du.size());
        for (std::size_t i = 0; i < du.size(); ++i) dlogit[i] = du[i] * tp.u[i] * (S(1) - tp.u[i]);
        const auto dfc = norm_.backward(dlogit, tp.norm);
        const auto demb = fc_.backward(tp.embedding, dfc);
        const auto w = std::size_t(widths_[2]);
        for (std::size_t v = 0; v < 3; ++v) {
            std::vector<S> dpool(demb.begin() + long(v * w), demb.begin() + long((v + 1) * w));
            nn::Tensor<S> g = nn::global_avg_pool_backward(dpool, w, tp.branch[v].pooled_dims);
            for (std::size_t k = 3; k-- > 0;) {
                nn::silu_backward_inplace(g, tp.branch[v].pre[k]);
                g = branches_[v][k].backward(g, tp.branch[v].conv[k], k > 0);
            }
        }
    }

private:
    int outputs_ = 0;
    std::array<int, 3> widths_{8, 16, 32};
    std::array<std::array<nn::Conv3d<S>, 3>, 3> branches_;
    nn::Linear<S> fc_;
    nn::LayerNorm<S> norm_;
};

// ---------------------------------------------------------------------------
// Logistic read-out and the exact latent-usage marginal

inline double log1p_exp(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

inline double logistic(double x)
{
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

inline double usage_logit(std::span<const double> beta, std::span<const double> u, std::span<const double> r,
                          double intercept = 0.0)
{
    if (beta.size() != u.size() || beta.size() != r.size()) throw ValidationError("predict_prob: length mismatch");
    double z = intercept;
    for (std::size_t n = 0; n < beta.size(); ++n) z += beta[n] * u[n] * r[n];
    return z;
}

inline double predict_prob(std::span<const double> beta, std::span<const double> u, std::span<const double> r,
                           double intercept = 0.0)
{
    return logistic(usage_logit(beta, u, r, intercept));
}

inline constexpr std::size_t kMaxExactUsage = 20;

/// Sum over all z in {0,1}^N of prod_n u_n^z_n (1-u_n)^(1-z_n) * sigmoid(sum_n beta_n z_n r_n + b).
inline double marginalize_exact(std::span<const double> beta, std::span<const double> u, std::span<const double> r,
                                double intercept = 0.0)
{
    if (beta.size() != u.size() || beta.size() != r.size())
        throw ValidationError("marginalize_exact: length mismatch");
    if (beta.size() > kMaxExactUsage)
        throw ValidationError("marginalize_exact: N=" + std::to_string(beta.size()) + " exceeds the enumeration bound " +
                              std::to_string(kMaxExactUsage));
    const std::size_t n = beta.size();
    double total = 0.0;
    for (std::uint64_t z = 0; z < (std::uint64_t(1) << n); ++z) {
        double w = 1.0, logit = intercept;
        for (std::size_t k = 0; k < n && w != 0.0; ++k) {
            if ((z >> k) & 1U) {
                w *= u[k];
                logit += beta[k] * r[k];
            } else {
                w *= 1.0 - u[k];
            }
        }
        if (w != 0.0) total += w * logistic(logit);
    }
    return total;
}

/// z_n = 1 iff u_n >= threshold.
inline std::vector<std::uint8_t> hard_select(std::span<const double> u, double threshold)
{
    std::vector<std::uint8_t> z(u.size());
    for (std::size_t i = 0; i < u.size(); ++i) z[i] = u[i] >= threshold ? 1 : 0;
    return z;
}

// ---------------------------------------------------------------------------
// Objective

struct ClassifierParams {
    nn::Param<double> beta;
    nn::Param<double> intercept{"intercept", 1};
    bool use_intercept = false;

    ClassifierParams() = default;
    explicit ClassifierParams(std::size_t n, bool with_intercept = false)
        : beta("beta", n), use_intercept(with_intercept)
    {
    }

    double bias() const { return use_intercept ? intercept.value[0] : 0.0; }
    nn::ParamList<double> params()
    {
        if (use_intercept) return {&beta, &intercept};
        return {&beta};
    }
};

struct ObjectiveWeights {
    double lambda_u = 0.0;
    double lambda_beta = 0.0;
    double pos_weight = 1.0;
};

template <class S>
struct Example {
    const ViewTensors<S>* views = nullptr;
    const std::vector<double>* r = nullptr;  // standardised features
    bool label = false;
};

/// Positive-weighted BCE in logit form: w c softplus(-z) + (1 - c) softplus(z).
inline double weighted_bce(double logit, bool label, double pos_weight)
{
    return label ? pos_weight * log1p_exp(-logit) : log1p_exp(logit);
}

/// Batch objective. With `alpha == nullptr` usage is pinned to 1 and the
/// usage penalty (then a constant) is left out. When `accumulate` is set the
/// gradients are added to the parameter grad buffers.
template <class S>
double fingerprint_objective(UsagePredictor<S>* alpha, ClassifierParams& cls, std::span<const Example<S>> batch,
                             const ObjectiveWeights& w, bool accumulate)
{
    if (batch.empty()) throw ValidationError("objective: empty batch");
    const std::size_t n = cls.beta.value.size();
    const double inv_b = 1.0 / double(batch.size());
    double loss = 0.0;
    typename UsagePredictor<S>::Tape tape;
    std::vector<double> u(n, 1.0);
    for (const auto& ex : batch) {
        if (ex.r->size() != n) throw ValidationError("objective: feature length does not match beta");
        if (alpha) {
            const auto us = alpha->forward(*ex.views, accumulate ? &tape : nullptr);
            if (us.size() != n) throw ValidationError("objective: usage length does not match beta");
            for (std::size_t k = 0; k < n; ++k) u[k] = double(us[k]);
        }
        const double z = usage_logit(cls.beta.value, u, *ex.r, cls.bias());
        loss += inv_b * weighted_bce(z, ex.label, w.pos_weight);
        if (alpha) loss += inv_b * w.lambda_u * std::accumulate(u.begin(), u.end(), 0.0);

        if (!accumulate) continue;
        const double p = logistic(z);
        const double dz = inv_b * (ex.label ? -w.pos_weight * (1.0 - p) : p);
        const auto& r = *ex.r;
        for (std::size_t k = 0; k < n; ++k) cls.beta.grad[k] += dz * u[k] * r[k];
        if (cls.use_intercept) cls.intercept.grad[0] += dz;
        if (alpha) {
            std::vector<S> du(n);
            for (std::size_t k = 0; k < n; ++k) du[k] = static_cast<S>(dz * cls.beta.value[k] * r[k] + inv_b * w.lambda_u);
            alpha->backward(du, tape);
        }
    }
    double sq = 0.0;
    for (double b : cls.beta.value) sq += b * b;
    loss += w.lambda_beta * sq;
    if (accumulate)
        for (std::size_t k = 0; k < n; ++k) cls.beta.grad[k] += 2.0 * w.lambda_beta * cls.beta.value[k];
    return loss;
}

// ---------------------------------------------------------------------------
// Model, training, inference

struct FingerprintConfig {
    Task task = Task::abn;
    FeatureMode mode = FeatureMode::path_persona;
    int grid_n = 2;
    bool use_usage = true;  // false: NoFS ablation, u = 1
    double usage_threshold = 0.4;
    double lambda_u = 1e-4;
    double lambda_beta = 1e-3;
    bool intercept = false;
    int epochs = 30;
    int batch_size = 16;
    double lr_beta = 0.02;
    double lr_alpha = 0.02;
    double momentum = 0.9;
    int threshold_every = 10;
    std::uint64_t seed = 0;
    std::array<int, 3> widths{8, 16, 32};
};

struct HistoryEntry {
    int epoch = 0;
    double train_loss = 0.0;
    std::optional<double> val_auc;
    std::optional<double> decision_threshold;
};

struct FingerprintModel {
    static constexpr const char* kVersion = "rfp-fingerprint-1";

    FingerprintConfig config;
    UsagePredictor<double> alpha;
    ClassifierParams cls;
    StandardizerStats stats;
    double decision_threshold = 0.5;
    double pos_weight = 1.0;
    std::vector<HistoryEntry> history;

    std::size_t features() const { return cls.beta.value.size(); }
};

struct LabeledSubject {
    std::string id;
    std::array<Volume, 3> views;
    FeatureVector features;  // raw, unstandardised
    bool label = false;
};

/// Usage weights for one subject (all ones for the NoFS configuration).
inline std::vector<double> usage_forward(const FingerprintModel& m, const ViewTensors<double>& views)
{
    if (!m.config.use_usage) return std::vector<double>(m.features(), 1.0);
    return m.alpha.forward(views, nullptr);
}

struct Prediction {
    std::vector<double> u;
    std::vector<std::uint8_t> selected;
    double logit = 0.0;
    double probability = 0.5;
};

/// Inference with hard selection: logit = sum_n beta_n z_n u_n r_n (+ b).
inline Prediction predict_standardized(const FingerprintModel& m, const ViewTensors<double>& views,
                                       std::span<const double> r)
{
    if (r.size() != m.features()) throw ValidationError("predict: feature length does not match model");
    Prediction p;
    p.u = usage_forward(m, views);
    p.selected = hard_select(p.u, m.config.usage_threshold);
    std::vector<double> eff(p.u.size());
    for (std::size_t i = 0; i < eff.size(); ++i) eff[i] = p.selected[i] ? p.u[i] : 0.0;
    p.logit = usage_logit(m.cls.beta.value, eff, r, m.cls.bias());
    p.probability = logistic(p.logit);
    return p;
}

inline Prediction predict(const FingerprintModel& m, const std::array<Volume, 3>& views, const FeatureVector& raw)
{
    if (raw.grid_n != m.config.grid_n || raw.mode != m.config.mode)
        throw ValidationError("predict: feature configuration does not match model");
    const auto r = standardize(raw, m.stats);
    return predict_standardized(m, to_view_tensors<double>(views), r.values);
}

inline FingerprintModel train_fingerprint(const std::vector<LabeledSubject>& train, const std::vector<LabeledSubject>& val,
                                          const FingerprintConfig& cfg)
{
    require(!train.empty(), "train_fingerprint: empty training split");
    const auto pos = std::size_t(std::count_if(train.begin(), train.end(), [](const auto& s) { return s.label; }));
    if (pos == 0 || pos == train.size())
        throw ValidationError(std::string("train_fingerprint: training split for task ") +
                              std::string(task_name(cfg.task)) + " contains a single class");
    require(cfg.epochs >= 0 && cfg.batch_size >= 1, "train_fingerprint: bad epochs/batch size");
    require(cfg.usage_threshold >= 0.0 && cfg.usage_threshold <= 1.0, "usage threshold must lie in [0,1]");
    for (const auto& s : train)
        if (s.features.grid_n != cfg.grid_n || s.features.mode != cfg.mode)
            throw ValidationError("train_fingerprint: features of " + s.id + " do not match the configuration");

    FingerprintModel m;
    m.config = cfg;
    m.pos_weight = double(train.size() - pos) / double(pos);

    std::vector<FeatureVector> raw;
    raw.reserve(train.size());
    for (const auto& s : train) raw.push_back(s.features);
    m.stats = fit_standardizer(raw);
    const std::size_t n = raw.front().size();

    m.alpha = UsagePredictor<double>(int(n), cfg.widths);
    Rng init_rng = make_rng(derive_seed(cfg.seed, 11));
    m.alpha.init(init_rng);
    m.cls = ClassifierParams(n, cfg.intercept);

    auto prepare = [&](const std::vector<LabeledSubject>& subjects, std::vector<ViewTensors<double>>& views,
                       std::vector<std::vector<double>>& feats) {
        views.clear();
        feats.clear();
        for (const auto& s : subjects) {
            views.push_back(cfg.use_usage ? to_view_tensors<double>(s.views) : ViewTensors<double>{});
            feats.push_back(standardize(s.features, m.stats).values);
        }
    };
    std::vector<ViewTensors<double>> train_views, val_views;
    std::vector<std::vector<double>> train_r, val_r;
    prepare(train, train_views, train_r);
    prepare(val, val_views, val_r);

    auto alpha_params = m.alpha.params();
    auto cls_params = m.cls.params();
    nn::Sgd<double> opt_alpha(alpha_params, nn::SgdConfig{cfg.lr_alpha, cfg.momentum});
    nn::Sgd<double> opt_beta(cls_params, nn::SgdConfig{cfg.lr_beta, cfg.momentum});
    const ObjectiveWeights weights{cfg.lambda_u, cfg.lambda_beta, m.pos_weight};
    UsagePredictor<double>* alpha = cfg.use_usage ? &m.alpha : nullptr;

    auto refresh_threshold = [&](HistoryEntry& h) {
        if (val.empty()) return;
        ScoredLabels sl;
        for (std::size_t i = 0; i < val.size(); ++i) {
            sl.scores.push_back(predict_standardized(m, val_views[i], val_r[i]).probability);
            sl.labels.push_back(val[i].label);
        }
        if (sl.positives() == 0 || sl.negatives() == 0) return;
        m.decision_threshold = youden_threshold(sl);
        h.val_auc = roc_auc(sl);
        h.decision_threshold = m.decision_threshold;
    };

    Rng rng = make_rng(derive_seed(cfg.seed, 12));
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < order.size(); start += std::size_t(cfg.batch_size)) {
            const std::size_t end = std::min(order.size(), start + std::size_t(cfg.batch_size));
            std::vector<Example<double>> batch;
            for (std::size_t k = start; k < end; ++k)
                batch.push_back({&train_views[order[k]], &train_r[order[k]], train[order[k]].label});
            nn::zero_grads(alpha_params);
            nn::zero_grads(cls_params);
            epoch_loss += fingerprint_objective<double>(alpha, m.cls, batch, weights, true) * double(end - start);
            if (alpha) opt_alpha.step();
            opt_beta.step();
        }
        HistoryEntry h{epoch + 1, epoch_loss / double(order.size()), std::nullopt, std::nullopt};
        if ((epoch + 1) % cfg.threshold_every == 0 || epoch + 1 == cfg.epochs) refresh_threshold(h);
        m.history.push_back(h);
    }
    return m;
}

// ---------------------------------------------------------------------------
// Interpretability

struct FeatureContribution {
    FeatureId id;
    double u = 0.0;
    bool selected = false;
    double beta = 0.0;
    double r = 0.0;  // standardised value
    double contribution = 0.0;
};

struct PatchUsage {
    View view = View::sagittal;
    PatchIndex patch;
    double mean_usage = 0.0;
};

struct InterpretabilityReport {
    std::vector<FeatureContribution> features;
    std::vector<PatchUsage> per_patch;
    double intercept = 0.0;
    double logit = 0.0;
    double probability = 0.5;
    std::size_t selected_count = 0;
};

/// Mean usage per (view, patch) over every catalogue entry and source.
inline std::vector<PatchUsage> per_patch_usage(const std::vector<FeatureId>& ids, std::span<const double> u)
{
    std::map<std::pair<int, PatchIndex>, std::pair<double, std::size_t>> acc;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        auto& a = acc[{int(ids[i].view), ids[i].patch}];
        a.first += u[i];
        a.second += 1;
    }
    std::vector<PatchUsage> out;
    for (const auto& [key, a] : acc) out.push_back({View(key.first), key.second, a.first / double(a.second)});
    return out;
}

inline InterpretabilityReport explain(const FingerprintModel& m, const std::array<Volume, 3>& views,
                                      const FeatureVector& raw)
{
    if (raw.grid_n != m.config.grid_n || raw.mode != m.config.mode || raw.size() != m.features())
        throw ValidationError("explain: feature configuration does not match model");
    const auto r = standardize(raw, m.stats);
    const auto pred = predict_standardized(m, to_view_tensors<double>(views), r.values);

    InterpretabilityReport rep;
    rep.intercept = m.cls.bias();
    rep.logit = pred.logit;
    rep.probability = pred.probability;
    for (std::size_t i = 0; i < raw.size(); ++i) {
        const double eff = pred.selected[i] ? pred.u[i] : 0.0;
        rep.features.push_back({raw.ids[i], pred.u[i], pred.selected[i] != 0, m.cls.beta.value[i], r.values[i],
                                m.cls.beta.value[i] * eff * r.values[i]});
        rep.selected_count += pred.selected[i];
    }
    rep.per_patch = per_patch_usage(raw.ids, pred.u);
    return rep;
}

inline constexpr std::string_view kReportCsvHeader =
    "view,patch_ix,patch_iy,patch_iz,source,feature_name,u,selected,beta,contribution";

inline void write_report_csv(std::ostream& os, const InterpretabilityReport& rep)
{
    os << kReportCsvHeader << '\n';
    for (const auto& f : rep.features)
        os << view_name(f.id.view) << ',' << f.id.patch.ix << ',' << f.id.patch.iy << ',' << f.id.patch.iz << ','
           << source_name(f.id.source) << ',' << f.id.name() << ',' << format_g17(f.u) << ',' << (f.selected ? 1 : 0)
           << ',' << format_g17(f.beta) << ',' << format_g17(f.contribution) << '\n';
}

inline nlohmann::json report_summary_json(const InterpretabilityReport& rep)
{
    nlohmann::json patches = nlohmann::json::array();
    for (const auto& p : rep.per_patch)
        patches.push_back({{"view", view_name(p.view)},
                           {"patch", {p.patch.ix, p.patch.iy, p.patch.iz}},
                           {"mean_usage", p.mean_usage}});
    return {{"probability", rep.probability},
            {"logit", rep.logit},
            {"intercept", rep.intercept},
            {"selected_count", rep.selected_count},
            {"per_patch_usage", patches}};
}

// ---------------------------------------------------------------------------
// Model file

inline nlohmann::json fingerprint_config_to_json(const FingerprintConfig& c)
{
    return {{"task", task_name(c.task)},
            {"mode", mode_name(c.mode)},
            {"grid_n", c.grid_n},
            {"use_usage", c.use_usage},
            {"usage_threshold", c.usage_threshold},
            {"lambda_u", c.lambda_u},
            {"lambda_beta", c.lambda_beta},
            {"intercept", c.intercept},
            {"epochs", c.epochs},
            {"batch_size", c.batch_size},
            {"lr_beta", c.lr_beta},
            {"lr_alpha", c.lr_alpha},
            {"momentum", c.momentum},
            {"threshold_every", c.threshold_every},
            {"seed", c.seed},
            {"widths", c.widths}};
}

inline FingerprintConfig fingerprint_config_from_json(const nlohmann::json& j)
{
    FingerprintConfig c;
    c.task = parse_task(j.at("task").get<std::string>());
    c.mode = parse_mode(j.at("mode").get<std::string>());
    c.grid_n = j.at("grid_n");
    c.use_usage = j.at("use_usage");
    c.usage_threshold = j.at("usage_threshold");
    c.lambda_u = j.at("lambda_u");
    c.lambda_beta = j.at("lambda_beta");
    c.intercept = j.at("intercept");
    c.epochs = j.at("epochs");
    c.batch_size = j.at("batch_size");
    c.lr_beta = j.at("lr_beta");
    c.lr_alpha = j.at("lr_alpha");
    c.momentum = j.at("momentum");
    c.threshold_every = j.at("threshold_every");
    c.seed = j.at("seed");
    c.widths = j.at("widths").get<std::array<int, 3>>();
    return c;
}

inline nlohmann::json fingerprint_model_to_json(FingerprintModel& m)
{
    nlohmann::json hist = nlohmann::json::array();
    for (const auto& h : m.history) {
        nlohmann::json e{{"epoch", h.epoch}, {"train_loss", h.train_loss}};
        if (h.val_auc) e["val_auc"] = *h.val_auc;
        if (h.decision_threshold) e["decision_threshold"] = *h.decision_threshold;
        hist.push_back(std::move(e));
    }
    return {{"version", FingerprintModel::kVersion},
            {"task", task_name(m.config.task)},
            {"mode", mode_name(m.config.mode)},
            {"grid_n", m.config.grid_n},
            {"thresholds", {{"usage", m.config.usage_threshold}, {"decision", m.decision_threshold}}},
            {"lambda", {{"u", m.config.lambda_u}, {"beta", m.config.lambda_beta}}},
            {"pos_weight", m.pos_weight},
            {"standardizer", {{"mean", m.stats.mean}, {"std", m.stats.std}, {"epsilon", m.stats.epsilon}}},
            {"alpha", nn::params_to_json(m.alpha.params())},
            {"beta", m.cls.beta.value},
            {"intercept", m.cls.use_intercept ? nlohmann::json(m.cls.intercept.value[0]) : nlohmann::json(nullptr)},
            {"seed", m.config.seed},
            {"config", fingerprint_config_to_json(m.config)},
            {"history", hist}};
}

inline FingerprintModel fingerprint_model_from_json(const nlohmann::json& j)
{
    try {
        if (j.at("version") != FingerprintModel::kVersion) throw FormatError("fingerprint model: unsupported version");
        FingerprintModel m;
        m.config = fingerprint_config_from_json(j.at("config"));
        m.decision_threshold = j.at("thresholds").at("decision");
        m.pos_weight = j.at("pos_weight");
        m.stats.mean = j.at("standardizer").at("mean").get<std::vector<double>>();
        m.stats.std = j.at("standardizer").at("std").get<std::vector<double>>();
        m.stats.epsilon = j.at("standardizer").at("epsilon");
        const auto beta = j.at("beta").get<std::vector<double>>();
        if (beta.size() != feature_dimension(m.config.grid_n, m.config.mode) || m.stats.mean.size() != beta.size() ||
            m.stats.std.size() != beta.size())
            throw FormatError("fingerprint model: array lengths do not match the feature configuration");
        m.cls = ClassifierParams(beta.size(), m.config.intercept);
        m.cls.beta.value = beta;
        if (m.config.intercept) m.cls.intercept.value[0] = j.at("intercept").get<double>();
        m.alpha = UsagePredictor<double>(int(beta.size()), m.config.widths);
        nn::params_from_json(m.alpha.params(), j.at("alpha"));
        for (const auto& e : j.at("history")) {
            HistoryEntry h{e.at("epoch"), e.at("train_loss"), std::nullopt, std::nullopt};
            if (e.contains("val_auc")) h.val_auc = e.at("val_auc").get<double>();
            if (e.contains("decision_threshold")) h.decision_threshold = e.at("decision_threshold").get<double>();
            m.history.push_back(h);
        }
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("fingerprint model: ") + e.what());
    } catch (const ValidationError& e) {
        throw FormatError(std::string("fingerprint model: ") + e.what());
    }
}

} // namespace rfp
