// Acceptance run: one PASS/FAIL line per criterion. Exit status is nonzero
// if any criterion fails. Usage: rfp_acceptance [work_dir] [--only N,...]

#include <bit>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>

#include "oracles.hpp"
#include "rfp/pipeline.hpp"

using namespace rfp;
namespace fs = std::filesystem;

namespace {

// Pinned tolerances and budgets.
constexpr double kFirstOrderRelTol = 1e-9;
constexpr double kGradRelTol = 1e-4;
constexpr double kGradRelFloor = 1e-6;  // denominator floor for near-zero gradients
constexpr double kMarginalTol = 1e-12;
constexpr double kAlphaBarMax = 1e-3;
constexpr double kSsimGain = 0.05;
constexpr double kAucTarget = 0.90;
constexpr double kC1Seconds = 10, kC3Seconds = 60, kC4Seconds = 30, kC6Seconds = 30 * 60, kC7Seconds = 20 * 60,
                 kC9Seconds = 10;
constexpr int kC6Steps = 6000;
constexpr int kC6TrainHealthy = 120;
constexpr int kC6HeldOut = 50;
constexpr std::size_t kC8MinPositives = 50;

struct Outcome {
    bool pass = false;
    std::string detail;
};

/// Process CPU seconds.
double cpu_seconds() { return double(std::clock()) / CLOCKS_PER_SEC; }

std::string fmt(const char* f, auto... args)
{
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

int uniform_int(Rng& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

std::vector<double> randv(Rng& rng, std::size_t n, double lo, double hi)
{
    std::vector<double> v(n);
    for (auto& x : v) x = uniform(rng, lo, hi);
    return v;
}

// ---------------------------------------------------------------------------

Outcome criterion1()
{
    const double t0 = cpu_seconds();
    Rng rng = make_rng(101);
    double worst = 0;
    std::size_t face_mismatch = 0;
    for (int trial = 0; trial < 200; ++trial) {
        const Dims d{std::size_t(uniform_int(rng, 1, 6)), std::size_t(uniform_int(rng, 1, 6)),
                     std::size_t(uniform_int(rng, 1, 6))};
        Volume p(d);
        for (auto& x : p.voxels()) x = float(uniform(rng, -2.0, 6.0));
        const auto got = first_order_features(p);
        const auto want = oracle::first_order(std::vector<double>(p.voxels().begin(), p.voxels().end()));
        for (std::size_t k = 0; k < 19; ++k) worst = std::max(worst, oracle::rel_err(got[k], want[k]));

        const VoxelMask m = foreground_mask(p);
        oracle::Mask o(d.depth, std::vector<std::vector<bool>>(d.height, std::vector<bool>(d.width)));
        for (std::size_t z = 0; z < d.depth; ++z)
            for (std::size_t y = 0; y < d.height; ++y)
                for (std::size_t x = 0; x < d.width; ++x) o[z][y][x] = m.at(z, y, x);
        const double area = shape_features_of_mask(m)[catalogue_index("SurfaceArea") - 19];
        face_mismatch += area != double(oracle::exposed_faces(o));
    }
    const double secs = cpu_seconds() - t0;
    return {worst < kFirstOrderRelTol && face_mismatch == 0 && secs < kC1Seconds,
            fmt("max rel err %.3g (tol %.0e), surface mismatches %zu, %.2f s", worst, kFirstOrderRelTol, face_mismatch, secs)};
}

Outcome criterion2()
{
    Rng rng = make_rng(102);
    std::array<Volume, 3> views, personas;
    for (auto* set : {&views, &personas})
        for (auto& v : *set) {
            v = Volume(Dims{12, 12, 12});
            for (auto& x : v.voxels()) x = float(uniform01(rng));
        }
    std::string detail;
    bool ok = true;
    for (int n : {1, 2, 3}) {
        const auto got = assemble_features(views, &personas, n, FeatureMode::path_persona).size();
        const std::size_t want = std::size_t(3 * n * n * n * 2 * 38);
        ok = ok && got == want && canonical_ids(n, FeatureMode::path_persona).size() == want;
        detail += fmt("n=%d: %zu/%zu ", n, got, want);
    }
    return {ok, detail};
}

Outcome criterion3()
{
    const double t0 = cpu_seconds();
    double worst_u = 0, worst_d = 0;
    std::size_t checked = 0;

    {
        constexpr std::size_t N = 6;
        Rng rng = make_rng(103);
        UsagePredictor<double> alpha(int(N), {2, 3, 4});
        alpha.init(rng);
        for (auto* p : alpha.params())
            for (auto& v : p->value) v += uniform(rng, -0.2, 0.2);
        ClassifierParams cls(N, true);
        cls.beta.value = randv(rng, N, -1, 1);
        cls.intercept.value[0] = -0.2;
        std::vector<ViewTensors<double>> views(2);
        std::vector<std::vector<double>> r(2);
        for (std::size_t i = 0; i < 2; ++i) {
            for (auto& t : views[i]) {
                t = nn::Tensor<double>(1, Dims{8, 8, 8});
                for (auto& x : t.data) x = uniform01(rng);
            }
            r[i] = randv(rng, N, -2, 2);
        }
        const std::vector<Example<double>> batch{{&views[0], &r[0], true}, {&views[1], &r[1], false}};
        const ObjectiveWeights w{0.05, 0.01, 1.5};
        auto loss = [&]() { return fingerprint_objective<double>(&alpha, cls, batch, w, false); };
        auto ap = alpha.params(), cp = cls.params();
        nn::zero_grads(ap);
        nn::zero_grads(cp);
        fingerprint_objective<double>(&alpha, cls, batch, w, true);
        for (const auto& list : {ap, cp})
            for (auto* p : list)
                for (std::size_t i = 0; i < p->value.size(); ++i) {
                    worst_u = std::max(worst_u, oracle::rel_err(p->grad[i], oracle::central_diff(loss, p->value, i), kGradRelFloor));
                    ++checked;
                }
    }
    {
        Rng rng = make_rng(104);
        Denoiser<double> net(DenoiserTopology{3, {2, 3, 4}, 4});
        net.init(rng);
        for (auto* p : net.params())
            for (auto& v : p->value) v += uniform(rng, -0.1, 0.1);
        const Dims d{4, 4, 8};
        nn::Tensor<double> in(3, d);
        for (auto& x : in.data) x = uniform(rng, -1, 1);
        std::vector<double> target(d.count()), weights(d.count());
        for (auto& x : target) x = std_normal(rng);
        for (auto& x : weights) x = uniform01(rng) < 0.7 ? 1.0 : 0.0;
        auto loss = [&]() { return noise_loss<double>(net.forward(in, 2, nullptr), target, weights, nullptr); };
        auto params = net.params();
        nn::zero_grads(params);
        typename Denoiser<double>::Tape tape;
        nn::Tensor<double> g;
        noise_loss(net.forward(in, 2, &tape), target, weights, &g);
        net.backward(g, tape);
        for (auto* p : params)
            for (std::size_t i = 0; i < p->value.size(); ++i) {
                worst_d = std::max(worst_d, oracle::rel_err(p->grad[i], oracle::central_diff(loss, p->value, i), kGradRelFloor));
                ++checked;
            }
    }
    const double secs = cpu_seconds() - t0;
    return {worst_u < kGradRelTol && worst_d < kGradRelTol && secs < kC3Seconds,
            fmt("%zu params, max rel err usage %.3g denoiser %.3g (tol %.0e), %.1f s", checked, worst_u, worst_d,
                kGradRelTol, secs)};
}

Outcome criterion4()
{
    const double t0 = cpu_seconds();
    Rng rng = make_rng(105);
    double worst_bin = 0, worst_oracle = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const auto n = std::size_t(uniform_int(rng, 1, 12));
        const auto beta = randv(rng, n, -2, 2), r = randv(rng, n, -2, 2), u = randv(rng, n, 0, 1);
        std::vector<double> ub(n);
        for (auto& x : ub) x = uniform01(rng) < 0.5 ? 0.0 : 1.0;
        worst_bin = std::max(worst_bin, std::abs(predict_prob(beta, ub, r) - marginalize_exact(beta, ub, r)));
        worst_oracle = std::max(worst_oracle, std::abs(marginalize_exact(beta, u, r) - oracle::marginal(beta, u, r)));
    }
    const double secs = cpu_seconds() - t0;
    return {worst_bin <= kMarginalTol && worst_oracle <= kMarginalTol && secs < kC4Seconds,
            fmt("binary-u gap %.3g, oracle gap %.3g (tol %.0e), %.2f s", worst_bin, worst_oracle, kMarginalTol, secs)};
}

Outcome criterion5()
{
    const auto s = make_schedule(1000, 1e-4, 2e-2);
    bool monotone = true;
    for (std::size_t t = 1; t < s.alpha_bars.size(); ++t) monotone = monotone && s.alpha_bars[t] < s.alpha_bars[t - 1];
    const double last = s.alpha_bars.back();

    Rng rng = make_rng(106);
    PhantomConfig pc;
    pc.p_acl = pc.p_men = 0;
    std::vector<HealthySubject> healthy{{"h", false, gen_phantom(1, pc).views}};
    PersonaTrainConfig dc;
    dc.T = 10;
    dc.steps = 0;
    const auto model = train_persona(healthy, dc);
    std::size_t changed = 0;
    for (int k = 0; k < 50; ++k) {
        const Dims d{std::size_t(4 * uniform_int(rng, 1, 3)), std::size_t(4 * uniform_int(rng, 1, 4)),
                     std::size_t(4 * uniform_int(rng, 1, 4))};
        Volume v(d);
        for (auto& x : v.voxels()) x = float(uniform(rng, -1, 2));
        const Dims ext{std::size_t(uniform_int(rng, 1, int(d.depth))), std::size_t(uniform_int(rng, 1, int(d.height))),
                       std::size_t(uniform_int(rng, 1, int(d.width)))};
        const Index3 org{std::size_t(uniform_int(rng, 0, int(d.depth - ext.depth))),
                         std::size_t(uniform_int(rng, 0, int(d.height - ext.height))),
                         std::size_t(uniform_int(rng, 0, int(d.width - ext.width)))};
        const BoxMask mask{org, ext};
        const Volume out = inpaint(model, v, mask, std::uint64_t(k));
        for (std::size_t z = 0; z < d.depth; ++z)
            for (std::size_t y = 0; y < d.height; ++y)
                for (std::size_t x = 0; x < d.width; ++x)
                    if (!mask.contains(z, y, x)) changed += std::bit_cast<std::uint32_t>(out.at(z, y, x)) != std::bit_cast<std::uint32_t>(v.at(z, y, x));
    }
    return {monotone && last < kAlphaBarMax && changed == 0,
            fmt("alpha_bars strictly decreasing: %s, alpha_bar_T %.3g (< %.0e), context voxels changed %zu over 50 cases",
                monotone ? "yes" : "no", last, kAlphaBarMax, changed)};
}

Outcome criterion6()
{
    const double t0 = cpu_seconds();
    PhantomConfig pc;
    pc.p_acl = pc.p_men = 0;
    std::vector<HealthySubject> train, held;
    for (int i = 0; i < kC6TrainHealthy; ++i) train.push_back({"t" + std::to_string(i), false, gen_phantom(derive_seed(600, std::uint64_t(i)), pc).views});
    for (int i = 0; i < kC6HeldOut; ++i) held.push_back({"v" + std::to_string(i), false, gen_phantom(derive_seed(601, std::uint64_t(i)), pc).views});

    PersonaTrainConfig dc;
    dc.T = 100;
    dc.beta_start = 1e-3;
    dc.beta_end = 0.2;
    dc.steps = kC6Steps;
    dc.seed = 6;
    const auto model = train_persona(train, dc);
    const double train_secs = cpu_seconds() - t0;

    double ssim_inp = 0, ssim_zero = 0;
    int count = 0;
    const BoxMask mask = central_mask(pc.dims, dc.mask_fractions);
    for (std::size_t i = 0; i < held.size(); ++i)
        for (View v : kViews) {
            const Volume& x = held[i].views[std::size_t(v)];
            const Volume rec = inpaint(model, x, mask, derive_seed(602, i * 3 + std::size_t(v)));
            ssim_inp += ssim3d(rec, x);
            ssim_zero += ssim3d(apply_mask_zero(x, mask), x);
            ++count;
        }
    ssim_inp /= count;
    ssim_zero /= count;
    const double secs = cpu_seconds() - t0;
    return {ssim_inp - ssim_zero >= kSsimGain && secs <= kC6Seconds,
            fmt("SSIM inpainted %.4f vs masked-zero %.4f (gain %.4f, need %.2f); training %.0f s, total %.0f s", ssim_inp,
                ssim_zero, ssim_inp - ssim_zero, kSsimGain, train_secs, secs)};
}

// Criteria 7, 8 and 10 share the full-pipeline run.
struct PipelineRun {
    PipelineConfig cfg;
    json eval;
    double secs = 0;
};

PipelineRun run_full_pipeline(const fs::path& dir)
{
    fs::remove_all(dir);
    PipelineRun run;
    run.cfg = load_config(std::nullopt, 0, {}, dir);
    const double t0 = cpu_seconds();
    cmd_gen(run.cfg);
    cmd_train_persona(run.cfg);
    cmd_reconstruct(run.cfg);
    cmd_extract(run.cfg);
    cmd_train(run.cfg);
    run.eval = cmd_eval(run.cfg);
    run.secs = cpu_seconds() - t0;
    return run;
}

/// Ablation sharing the generated data and personas of `base`.
json run_ablation(const PipelineRun& base, const fs::path& dir, const std::vector<std::string>& sets)
{
    std::vector<std::string> s = sets;
    for (auto [key, p] : {std::pair{"paths.data", base.cfg.paths.data}, std::pair{"paths.persona_model", base.cfg.paths.persona_model}})
        s.push_back(std::string(key) + "=\"" + p.string() + "\"");
    const auto cfg = load_config(std::nullopt, 0, s, dir);
    cmd_extract(cfg);
    cmd_train(cfg);
    const json rep = cmd_eval(cfg);
    const auto va = val_split(cfg, read_labels(cfg.paths.data));
    cmd_explain(cfg, va.front().id, Task::abn);
    return rep;
}

Outcome criterion7(const PipelineRun& run, const fs::path& work)
{
    bool ok = run.secs <= kC7Seconds;
    std::string detail;
    for (Task t : run.cfg.training.tasks) {
        const double auc = run.eval.at("tasks").at(std::string(task_name(t))).at("auc").at("mean").get<double>();
        ok = ok && auc >= kAucTarget;
        detail += fmt("%s AUC %.3f, ", std::string(task_name(t)).c_str(), auc);
    }
    detail += fmt("pipeline %.0f s (budget %.0f s)", run.secs, kC7Seconds);

    std::string abl;
    for (auto [name, sets] : {std::pair{"nofs", std::vector<std::string>{"usage=false"}},
                              std::pair{"nopersona", std::vector<std::string>{"persona=false", "mode=\"path_only\""}}}) {
        try {
            const json rep = run_ablation(run, work / name, sets);
            bool comparable = true;
            for (Task t : run.cfg.training.tasks)
                for (auto key : {"acc", "sen", "spe", "auc"})
                    comparable = comparable && rep.at("tasks").at(std::string(task_name(t))).contains(key);
            ok = ok && comparable;
            abl += fmt("; %s abn AUC %.3f", name, rep.at("tasks").at("abn").at("auc").at("mean").get<double>());
        } catch (const std::exception& e) {
            ok = false;
            abl += fmt("; %s failed: %s", name, e.what());
        }
    }
    return {ok, detail + abl};
}

Outcome criterion8(const PipelineRun& run)
{
    const auto& cfg = run.cfg;
    const auto model = load_model(cfg, Task::abn, 0);
    const auto lesions = read_lesions(cfg.paths.data);
    const auto ids = canonical_ids(cfg.grid_n, cfg.mode);
    double on_sum = 0, off_sum = 0;
    std::size_t positives = 0;
    for (const auto& r : val_split(cfg, read_labels(cfg.paths.data))) {
        if (!r.abn) continue;
        const auto& les = lesions.at(r.id);
        const auto u = usage_forward(model, to_view_tensors<double>(load_views(cfg.paths.data, r.id)));
        double on = 0, off = 0;
        std::size_t n_on = 0, n_off = 0;
        for (const auto& pu : per_patch_usage(ids, u)) {
            const bool hit = std::any_of(les.begin(), les.end(), [&](const LesionPlacement& l) { return l.view == pu.view && l.patch == pu.patch; });
            (hit ? on : off) += pu.mean_usage;
            ++(hit ? n_on : n_off);
        }
        if (n_on == 0 || n_off == 0) continue;
        on_sum += on / double(n_on);
        off_sum += off / double(n_off);
        ++positives;
    }
    const double on_mean = on_sum / double(positives), off_mean = off_sum / double(positives);
    return {positives >= kC8MinPositives && on_mean > off_mean,
            fmt("%zu positive validation subjects; mean usage lesion patches %.4f vs other patches %.4f", positives,
                on_mean, off_mean)};
}

Outcome criterion9()
{
    const double t0 = cpu_seconds();
    Rng rng = make_rng(109);
    std::size_t youden_bad = 0, auc_bad = 0, mono_bad = 0;
    for (int trial = 0; trial < 500; ++trial) {
        ScoredLabels sl;
        const auto n = std::size_t(uniform_int(rng, 2, 60));
        const bool coarse = trial % 2 == 0;
        for (std::size_t i = 0; i < n; ++i) {
            const double s = coarse ? std::floor(uniform(rng, 0, 8)) / 8.0 : uniform01(rng);
            sl.scores.push_back(s);
            sl.labels.push_back(uniform01(rng) < 0.2 + 0.6 * s);
        }
        sl.labels[0] = true;
        sl.labels[1] = false;
        youden_bad += youden_threshold(sl) != oracle::youden_scan(sl.scores, sl.labels);
        auc_bad += std::abs(roc_auc(sl) - oracle::auc_ranks(sl.scores, sl.labels)) > 1e-12;
        double sen = 2, spe = -1;
        for (int k = 0; k <= 50; ++k) {
            const auto c = confusion_at(sl, k / 50.0);
            mono_bad += c.sensitivity > sen || c.specificity < spe;
            sen = c.sensitivity;
            spe = c.specificity;
        }
    }
    const double secs = cpu_seconds() - t0;
    return {youden_bad == 0 && auc_bad == 0 && mono_bad == 0 && secs < kC9Seconds,
            fmt("500 instances: Youden mismatches %zu, AUC mismatches %zu, monotonicity violations %zu, %.2f s", youden_bad,
                auc_bad, mono_bad, secs)};
}

std::map<std::string, std::string> tree_bytes(const fs::path& root)
{
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(root))
        if (e.is_regular_file()) out[fs::relative(e.path(), root).generic_string()] = read_file_bytes(e.path());
    return out;
}

Outcome criterion10(const PipelineRun& run, const fs::path& work)
{
    // every command twice on a reduced configuration
    const std::vector<std::string> small{"dataset.subjects=40", "dataset.train_count=30", "diffusion.steps=20",
                                         "training.epochs=4"};
    std::size_t files = 0, differing = 0;
    {
        const fs::path a = work / "det_a", b = work / "det_b";
        for (const auto& d : {a, b}) {
            fs::remove_all(d);
            const auto cfg = load_config(std::nullopt, 10, small, d);
            cmd_gen(cfg);
            cmd_train_persona(cfg);
            cmd_reconstruct(cfg);
            cmd_extract(cfg);
            cmd_train(cfg);
            cmd_eval(cfg);
            cmd_explain(cfg, "s0035", Task::acl);
        }
        const auto ta = tree_bytes(a), tb = tree_bytes(b);
        files = ta.size();
        differing = ta.size() == tb.size() ? 0 : 1;
        for (const auto& [k, v] : ta) differing += !tb.count(k) || tb.at(k) != v;
    }

    // lossless formats on the full run's artefacts
    std::size_t rvol_bad = 0, rvol_checked = 0;
    for (const auto& r : read_labels(run.cfg.paths.data))
        for (View v : kViews) {
            const auto bytes = read_file_bytes(view_path(run.cfg.paths.data, r.id, v));
            rvol_bad += encode_rvol(decode_rvol(bytes)) != bytes;
            ++rvol_checked;
        }
    std::size_t model_bad = 0, pred_bad = 0;
    const auto feats = load_features(run.cfg);
    const auto va = val_split(run.cfg, read_labels(run.cfg.paths.data));
    for (Task t : run.cfg.training.tasks) {
        const auto text = read_file_bytes(model_path(run.cfg, t, 0));
        const json j = json::parse(text);
        auto m = fingerprint_model_from_json(j);
        auto again = fingerprint_model_to_json(m);
        again["pipeline_config"] = j.at("pipeline_config");
        model_bad += again.dump() + "\n" != text;
        for (std::size_t i = 0; i < 5; ++i) {
            const auto views = load_views(run.cfg.paths.data, va[i].id);
            const auto p1 = predict(m, views, feats.at(va[i].id));
            const auto p2 = predict(fingerprint_model_from_json(json::parse(again.dump())), views, feats.at(va[i].id));
            pred_bad += std::memcmp(&p1.probability, &p2.probability, sizeof(double)) != 0;
        }
    }
    return {differing == 0 && files > 0 && rvol_bad == 0 && model_bad == 0 && pred_bad == 0,
            fmt("rerun: %zu files, %zu differ; RVOL round-trip failures %zu/%zu; model JSON failures %zu, prediction "
                "mismatches %zu",
                files, differing, rvol_bad, rvol_checked, model_bad, pred_bad)};
}

} // namespace

int main(int argc, char** argv)
{
    fs::path work = fs::temp_directory_path() / "rfp_acceptance";
    std::set<int> only;
    for (int i = 1; i < argc; ++i) {
        const std::string a = argv[i];
        if (a == "--only" && i + 1 < argc) {
            std::istringstream in(argv[++i]);
            for (std::string tok; std::getline(in, tok, ',');) only.insert(std::stoi(tok));
        } else {
            work = a;
        }
    }
    fs::create_directories(work);
    auto wanted = [&](int c) { return only.empty() || only.count(c); };

    bool all_ok = true;
    auto report = [&](int c, const std::function<Outcome()>& f) {
        if (!wanted(c)) return;
        Outcome o;
        try {
            o = f();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        all_ok = all_ok && o.pass;
        std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << c << ": " << o.detail << std::endl;
    };

    report(1, criterion1);
    report(2, criterion2);
    report(3, criterion3);
    report(4, criterion4);
    report(5, criterion5);
    report(6, criterion6);

    if (!(wanted(7) || wanted(8) || wanted(10))) report(9, criterion9);
    if (wanted(7) || wanted(8) || wanted(10)) {
        std::optional<PipelineRun> run;
        std::string failure;
        try {
            run = run_full_pipeline(work / "full");
        } catch (const std::exception& e) {
            failure = std::string("pipeline failed: ") + e.what();
        }
        auto guarded = [&](auto f) { return [&, f]() { return run ? f() : Outcome{false, failure}; }; };
        report(7, guarded([&] { return criterion7(*run, work); }));
        report(8, guarded([&] { return criterion8(*run); }));
        report(9, criterion9);
        report(10, guarded([&] { return criterion10(*run, work); }));
    }
    return all_ok ? 0 : 1;
}
