#pragma once

// Pipeline configuration: one JSON document, validated against the default
// document (unknown keys are rejected), with dot-path overrides.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "diffusion.hpp"
#include "errors.hpp"
#include "fingerprint.hpp"
#include "phantom.hpp"
#include "radiomics.hpp"

namespace rfp {

using nlohmann::json;

inline json default_config_json()
{
    return json::parse(R"({
  "seed": 0,
  "grid_n": 2,
  "mode": "path_persona",
  "persona": true,
  "usage": true,
  "usage_threshold": 0.4,
  "lambda_u": 0.0001,
  "lambda_beta": 0.001,
  "intercept": false,
  "dataset": {"subjects": 500, "train_count": 400},
  "phantom": {
    "dims": [16, 32, 32],
    "p_acl": 0.4,
    "p_men": 0.4,
    "noise_sigma": 0.02,
    "background": 0.1,
    "lesion_contrast": 0.5,
    "lesion_region": [0.5, 0.3, 0.5],
    "acl_patch": null,
    "men_patch": null
  },
  "diffusion": {
    "T": 20,
    "beta_start": 0.001,
    "beta_end": 0.5,
    "steps": 1500,
    "batch_size": 2,
    "lr": 0.002,
    "mask_fractions": [0.5, 0.3, 0.5],
    "loss_region": "mask",
    "sampler_variance": "beta",
    "train_subjects": null
  },
  "training": {
    "epochs": 30,
    "batch_size": 16,
    "lr_beta": 0.02,
    "lr_alpha": 0.02,
    "momentum": 0.9,
    "threshold_every": 10,
    "runs": 1,
    "tasks": ["abn", "acl", "men"]
  },
  "paths": {
    "data": null,
    "persona_model": null,
    "features": null,
    "models": null,
    "eval": null,
    "reports": null
  }
})");
}

namespace detail {

inline bool compatible(const json& def, const json& v)
{
    if (def.is_null()) return true;  // optional entries are type-checked on extraction
    if (def.is_boolean()) return v.is_boolean();
    if (def.is_number_integer()) return v.is_number_integer();
    if (def.is_number()) return v.is_number();
    if (def.is_string()) return v.is_string();
    if (def.is_array()) return v.is_array();
    if (def.is_object()) return v.is_object();
    return false;
}

inline void merge_checked(json& base, const json& over, const std::string& prefix)
{
    if (!over.is_object()) throw ValidationError("config: '" + (prefix.empty() ? "<root>" : prefix) + "' must be an object");
    for (const auto& [key, value] : over.items()) {
        const std::string path = prefix.empty() ? key : prefix + "." + key;
        if (!base.contains(key)) throw ValidationError("config: unknown key '" + path + "'");
        json& slot = base[key];
        if (!compatible(slot, value)) throw ValidationError("config: wrong type for '" + path + "'");
        if (slot.is_object() && !slot.empty()) merge_checked(slot, value, path);
        else slot = value;
    }
}

} // namespace detail

/// Applies one `key.path=value` override. The value is parsed as JSON when
/// possible and taken as a plain string otherwise.
inline void apply_override(json& cfg, const std::string& assignment)
{
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ValidationError("--set expects key=value, got '" + assignment + "'");
    const std::string key = assignment.substr(0, eq), raw = assignment.substr(eq + 1);
    json value = json::parse(raw, nullptr, false);
    if (value.is_discarded()) value = raw;

    json patch = value;
    std::vector<std::string> parts;
    for (std::size_t pos = 0;;) {
        const auto dot = key.find('.', pos);
        parts.push_back(key.substr(pos, dot - pos));
        if (dot == std::string::npos) break;
        pos = dot + 1;
    }
    for (auto it = parts.rbegin(); it != parts.rend(); ++it) patch = json{{*it, patch}};
    detail::merge_checked(cfg, patch, "");
}

struct PathsConfig {
    std::filesystem::path data, persona_model, features, models, eval, reports;
};

struct TrainingSettings {
    int epochs = 30;
    int batch_size = 16;
    double lr_beta = 0.02;
    double lr_alpha = 0.02;
    double momentum = 0.9;
    int threshold_every = 10;
    int runs = 1;
    std::vector<Task> tasks{Task::abn, Task::acl, Task::men};
};

struct PipelineConfig {
    std::uint64_t seed = 0;
    int grid_n = 2;
    FeatureMode mode = FeatureMode::path_persona;
    bool persona = true;
    bool usage = true;
    double usage_threshold = 0.4;
    double lambda_u = 1e-4;
    double lambda_beta = 1e-3;
    bool intercept = false;
    int subjects = 500;
    int train_count = 400;
    PhantomConfig phantom;
    PersonaTrainConfig diffusion;
    std::optional<std::vector<std::string>> persona_subjects;
    TrainingSettings training;
    PathsConfig paths;
    json snapshot;  // the fully resolved document

    FingerprintConfig fingerprint(Task task, int run) const
    {
        FingerprintConfig f;
        f.task = task;
        f.mode = mode;
        f.grid_n = grid_n;
        f.use_usage = usage;
        f.usage_threshold = usage_threshold;
        f.lambda_u = lambda_u;
        f.lambda_beta = lambda_beta;
        f.intercept = intercept;
        f.epochs = training.epochs;
        f.batch_size = training.batch_size;
        f.lr_beta = training.lr_beta;
        f.lr_alpha = training.lr_alpha;
        f.momentum = training.momentum;
        f.threshold_every = training.threshold_every;
        f.seed = derive_seed(seed, 1000 + std::uint64_t(task) * 100 + std::uint64_t(run));
        return f;
    }
};

namespace detail {

inline PatchIndex patch_from_json(const json& j)
{
    const auto a = j.get<std::array<int, 3>>();
    return PatchIndex{a[0], a[1], a[2]};
}

inline std::filesystem::path path_or(const json& j, const std::filesystem::path& fallback)
{
    return j.is_null() ? fallback : std::filesystem::path(j.get<std::string>());
}

} // namespace detail

/// Builds a validated config from a resolved document; paths left null are
/// placed under `out`.
inline PipelineConfig config_from_json(const json& doc, const std::filesystem::path& out)
{
    PipelineConfig c;
    try {
        c.snapshot = doc;
        c.seed = doc.at("seed").get<std::uint64_t>();
        c.grid_n = doc.at("grid_n");
        c.mode = parse_mode(doc.at("mode").get<std::string>());
        c.persona = doc.at("persona");
        c.usage = doc.at("usage");
        c.usage_threshold = doc.at("usage_threshold");
        c.lambda_u = doc.at("lambda_u");
        c.lambda_beta = doc.at("lambda_beta");
        c.intercept = doc.at("intercept");
        c.subjects = doc.at("dataset").at("subjects");
        c.train_count = doc.at("dataset").at("train_count");

        const auto& ph = doc.at("phantom");
        const auto dims = ph.at("dims").get<std::array<std::size_t, 3>>();
        c.phantom.dims = Dims{dims[0], dims[1], dims[2]};
        c.phantom.grid_n = c.grid_n;
        c.phantom.p_acl = ph.at("p_acl");
        c.phantom.p_men = ph.at("p_men");
        c.phantom.noise_sigma = ph.at("noise_sigma");
        c.phantom.background = ph.at("background");
        c.phantom.lesion_contrast = ph.at("lesion_contrast");
        c.phantom.lesion_region = ph.at("lesion_region").get<std::array<double, 3>>();
        if (!ph.at("acl_patch").is_null()) c.phantom.acl_patch = detail::patch_from_json(ph.at("acl_patch"));
        if (!ph.at("men_patch").is_null()) c.phantom.men_patch = detail::patch_from_json(ph.at("men_patch"));

        const auto& df = doc.at("diffusion");
        c.diffusion.T = df.at("T");
        c.diffusion.beta_start = df.at("beta_start");
        c.diffusion.beta_end = df.at("beta_end");
        c.diffusion.steps = df.at("steps");
        c.diffusion.batch_size = df.at("batch_size");
        c.diffusion.lr = df.at("lr");
        c.diffusion.mask_fractions = df.at("mask_fractions").get<std::array<double, 3>>();
        const auto region = df.at("loss_region").get<std::string>();
        require(region == "mask" || region == "full", "diffusion.loss_region must be 'mask' or 'full'");
        c.diffusion.loss_region = region == "mask" ? LossRegion::mask : LossRegion::full;
        const auto var = df.at("sampler_variance").get<std::string>();
        require(var == "beta" || var == "posterior", "diffusion.sampler_variance must be 'beta' or 'posterior'");
        c.diffusion.sampler_variance = var == "beta" ? SamplerVariance::beta : SamplerVariance::posterior;
        c.diffusion.seed = derive_seed(c.seed, 500);
        if (!df.at("train_subjects").is_null())
            c.persona_subjects = df.at("train_subjects").get<std::vector<std::string>>();

        const auto& tr = doc.at("training");
        c.training.epochs = tr.at("epochs");
        c.training.batch_size = tr.at("batch_size");
        c.training.lr_beta = tr.at("lr_beta");
        c.training.lr_alpha = tr.at("lr_alpha");
        c.training.momentum = tr.at("momentum");
        c.training.threshold_every = tr.at("threshold_every");
        c.training.runs = tr.at("runs");
        c.training.tasks.clear();
        for (const auto& t : tr.at("tasks")) c.training.tasks.push_back(parse_task(t.get<std::string>()));

        const auto& p = doc.at("paths");
        c.paths.data = detail::path_or(p.at("data"), out / "data");
        c.paths.persona_model = detail::path_or(p.at("persona_model"), out / "persona_model.json");
        c.paths.features = detail::path_or(p.at("features"), out / "features.csv");
        c.paths.models = detail::path_or(p.at("models"), out / "models");
        c.paths.eval = detail::path_or(p.at("eval"), out / "eval.json");
        c.paths.reports = detail::path_or(p.at("reports"), out / "reports");
    } catch (const json::exception& e) {
        throw ValidationError(std::string("config: ") + e.what());
    }

    require(c.grid_n >= 1 && c.grid_n <= 3, "config: grid_n must be 1, 2 or 3");
    require(c.persona || c.mode == FeatureMode::path_only,
            "config: mode '" + std::string(mode_name(c.mode)) + "' needs persona features (set persona=true or mode=path_only)");
    require(c.usage_threshold >= 0.0 && c.usage_threshold <= 1.0, "config: usage_threshold must lie in [0,1]");
    require(c.lambda_u >= 0.0 && c.lambda_beta >= 0.0, "config: lambdas must be >= 0");
    require(c.subjects >= 1, "config: dataset.subjects must be >= 1");
    require(c.train_count >= 2 && c.train_count < c.subjects, "config: dataset.train_count must lie in [2, subjects)");
    require(c.diffusion.T >= 2 && c.diffusion.steps >= 0 && c.diffusion.batch_size >= 1 && c.diffusion.lr > 0.0,
            "config: invalid diffusion settings");
    require(c.training.epochs >= 0 && c.training.batch_size >= 1 && c.training.runs >= 1 &&
                c.training.threshold_every >= 1,
            "config: invalid training settings");
    require(!c.training.tasks.empty(), "config: training.tasks must not be empty");
    c.phantom.validate();
    return c;
}

inline json read_json_file(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    json j = json::parse(in, nullptr, false);
    if (j.is_discarded()) throw FormatError("malformed JSON in " + path.string());
    return j;
}

/// Defaults, then the optional config file, then the seed flag, then each
/// `--set` override in order.
inline PipelineConfig load_config(const std::optional<std::filesystem::path>& file, std::optional<std::uint64_t> seed,
                                  const std::vector<std::string>& overrides, const std::filesystem::path& out)
{
    json doc = default_config_json();
    if (file) {
        json user = read_json_file(*file);
        detail::merge_checked(doc, user, "");
    }
    if (seed) doc["seed"] = *seed;
    for (const auto& o : overrides) apply_override(doc, o);
    return config_from_json(doc, out);
}

} // namespace rfp
