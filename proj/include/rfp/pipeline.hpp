#pragma once

// Pipeline stages behind the command-line tool. Every stage reads and writes
// files only, so each one can be re-run on its own.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "config.hpp"
#include "diffusion.hpp"
#include "errors.hpp"
#include "fingerprint.hpp"
#include "metrics.hpp"
#include "phantom.hpp"
#include "radiomics.hpp"
#include "volume.hpp"

namespace rfp {

namespace fs = std::filesystem;

inline void write_text_file(const fs::path& path, const std::string& text)
{
    std::error_code ec;
    if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create directory " + path.parent_path().string());
    write_file_bytes(path, text);
}

inline void write_json_file(const fs::path& path, const json& j) { write_text_file(path, j.dump(2) + "\n"); }

inline std::string subject_id(int i)
{
    char buf[16];
    std::snprintf(buf, sizeof buf, "s%04d", i);
    return buf;
}

inline std::uint64_t subject_seed(std::uint64_t seed, int i) { return derive_seed(derive_seed(seed, 1), std::uint64_t(i)); }

// ---------------------------------------------------------------------------
// Dataset on disk

struct SubjectRecord {
    std::string id;
    bool abn = false;
    bool acl = false;
    bool men = false;

    bool label(Task t) const { return t == Task::abn ? abn : (t == Task::acl ? acl : men); }
};

inline constexpr std::string_view kLabelsHeader = "subject_id,abn,acl,men";

inline fs::path view_path(const fs::path& root, const std::string& id, View v)
{
    return root / id / (std::string(view_name(v)) + ".rvol");
}

inline fs::path persona_path(const fs::path& root, const std::string& id, View v)
{
    return root / id / (std::string(view_name(v)) + ".persona.rvol");
}

inline std::vector<SubjectRecord> read_labels(const fs::path& root)
{
    std::istringstream in(read_file_bytes(root / "labels.csv"));
    std::string line;
    if (!std::getline(in, line) || line != kLabelsHeader) throw FormatError("labels.csv: bad header");
    std::vector<SubjectRecord> out;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ss(line);
        for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
        auto flag = [&](const std::string& s) {
            if (s != "0" && s != "1") throw FormatError("labels.csv: line " + std::to_string(lineno) + " needs 0/1 values");
            return s == "1";
        };
        if (f.size() != 4 || f[0].empty()) throw FormatError("labels.csv: line " + std::to_string(lineno) + " needs 4 fields");
        out.push_back({f[0], flag(f[1]), flag(f[2]), flag(f[3])});
    }
    return out;
}

inline std::array<Volume, 3> load_views(const fs::path& root, const std::string& id)
{
    return {read_volume(view_path(root, id, View::sagittal)), read_volume(view_path(root, id, View::coronal)),
            read_volume(view_path(root, id, View::axial))};
}

inline std::array<Volume, 3> load_personas(const fs::path& root, const std::string& id)
{
    for (View v : kViews)
        if (!fs::exists(persona_path(root, id, v)))
            throw IoError("missing persona " + persona_path(root, id, v).string() + " (run reconstruct first)");
    return {read_volume(persona_path(root, id, View::sagittal)), read_volume(persona_path(root, id, View::coronal)),
            read_volume(persona_path(root, id, View::axial))};
}

inline json lesion_json(const LesionPlacement& l)
{
    return {{"view", view_name(l.view)}, {"patch", {l.patch.ix, l.patch.iy, l.patch.iz}}, {"kind", lesion_name(l.kind)}};
}

/// Lesion placements per subject, from the manifest written by `gen`.
inline std::map<std::string, std::vector<LesionPlacement>> read_lesions(const fs::path& root)
{
    const json m = read_json_file(root / "manifest.json");
    std::map<std::string, std::vector<LesionPlacement>> out;
    try {
        for (const auto& s : m.at("subjects")) {
            auto& v = out[s.at("id").get<std::string>()];
            for (const auto& l : s.at("lesions")) {
                const auto p = l.at("patch").get<std::array<int, 3>>();
                v.push_back({parse_view(l.at("view").get<std::string>()), PatchIndex{p[0], p[1], p[2]},
                             l.at("kind") == "acl" ? LesionKind::acl : LesionKind::men});
            }
        }
    } catch (const json::exception& e) {
        throw FormatError(std::string("manifest: ") + e.what());
    }
    return out;
}

// ---------------------------------------------------------------------------
// gen

inline void cmd_gen(const PipelineConfig& cfg)
{
    const fs::path& root = cfg.paths.data;
    std::string labels = std::string(kLabelsHeader) + "\n";
    json subjects = json::array();
    for (int i = 0; i < cfg.subjects; ++i) {
        const std::string id = subject_id(i);
        const auto seed = subject_seed(cfg.seed, i);
        const auto s = gen_phantom(seed, cfg.phantom);
        std::error_code ec;
        fs::create_directories(root / id, ec);
        if (ec) throw IoError("cannot create directory " + (root / id).string());
        for (View v : kViews) write_volume(s.views[std::size_t(v)], view_path(root, id, v));
        labels += id + "," + (s.abn ? "1" : "0") + "," + (s.acl ? "1" : "0") + "," + (s.men ? "1" : "0") + "\n";
        json lesions = json::array();
        for (const auto& l : s.lesions) lesions.push_back(lesion_json(l));
        subjects.push_back({{"id", id}, {"seed", seed}, {"abn", s.abn}, {"acl", s.acl}, {"men", s.men}, {"lesions", lesions}});
    }
    write_text_file(root / "labels.csv", labels);
    write_json_file(root / "manifest.json", {{"seed", cfg.seed}, {"config", cfg.snapshot}, {"subjects", subjects}});
}

// ---------------------------------------------------------------------------
// train-persona, reconstruct

/// Training split = the first train_count subjects in label-file order.
inline std::vector<SubjectRecord> train_split(const PipelineConfig& cfg, const std::vector<SubjectRecord>& all)
{
    if (all.size() != std::size_t(cfg.subjects))
        throw ValidationError("dataset has " + std::to_string(all.size()) + " subjects, config expects " +
                              std::to_string(cfg.subjects));
    return {all.begin(), all.begin() + cfg.train_count};
}

inline std::vector<SubjectRecord> val_split(const PipelineConfig& cfg, const std::vector<SubjectRecord>& all)
{
    train_split(cfg, all);
    return {all.begin() + cfg.train_count, all.end()};
}

inline void cmd_train_persona(const PipelineConfig& cfg)
{
    const auto all = read_labels(cfg.paths.data);
    std::vector<SubjectRecord> chosen;
    if (cfg.persona_subjects) {
        std::map<std::string, SubjectRecord> by_id;
        for (const auto& s : all) by_id[s.id] = s;
        for (const auto& id : *cfg.persona_subjects) {
            const auto it = by_id.find(id);
            if (it == by_id.end()) throw ValidationError("persona training subject '" + id + "' not in dataset");
            if (it->second.abn)
                throw ValidationError("persona training requires healthy subjects; '" + id + "' is labelled abnormal");
            chosen.push_back(it->second);
        }
    } else {
        for (const auto& s : train_split(cfg, all))
            if (!s.abn) chosen.push_back(s);
    }
    require(!chosen.empty(), "persona training: no healthy subjects available");

    std::vector<HealthySubject> healthy;
    for (const auto& s : chosen) healthy.push_back({s.id, s.abn, load_views(cfg.paths.data, s.id)});
    auto model = train_persona(healthy, cfg.diffusion);
    json j = diffusion_model_to_json(model);
    j["config"] = cfg.snapshot;
    write_text_file(cfg.paths.persona_model, j.dump() + "\n");
}

inline void cmd_reconstruct(const PipelineConfig& cfg)
{
    if (!fs::exists(cfg.paths.persona_model))
        throw IoError("missing persona model " + cfg.paths.persona_model.string() + " (run train-persona first)");
    const auto model = diffusion_model_from_json(read_json_file(cfg.paths.persona_model));
    const auto all = read_labels(cfg.paths.data);
    json files = json::array();
    for (std::size_t i = 0; i < all.size(); ++i) {
        const auto views = load_views(cfg.paths.data, all[i].id);
        for (View v : kViews) {
            const auto& vol = views[std::size_t(v)];
            const BoxMask mask = central_mask(vol.dims(), model.config.mask_fractions);
            const auto seed = derive_seed(derive_seed(cfg.seed, 2), i * 3 + std::size_t(v));
            write_volume(inpaint(model, vol, mask, seed), persona_path(cfg.paths.data, all[i].id, v));
            files.push_back(fs::relative(persona_path(cfg.paths.data, all[i].id, v), cfg.paths.data).generic_string());
        }
    }
    write_json_file(cfg.paths.data / "reconstruct.json", {{"config", cfg.snapshot}, {"files", files}});
}

// ---------------------------------------------------------------------------
// extract

inline FeatureVector subject_features(const PipelineConfig& cfg, const std::string& id)
{
    const auto views = load_views(cfg.paths.data, id);
    if (cfg.mode == FeatureMode::path_only) return assemble_features(views, nullptr, cfg.grid_n, cfg.mode);
    const auto personas = load_personas(cfg.paths.data, id);
    return assemble_features(views, &personas, cfg.grid_n, cfg.mode);
}

inline fs::path meta_path(const fs::path& csv) { return fs::path(csv.string() + ".meta.json"); }

inline void cmd_extract(const PipelineConfig& cfg)
{
    const auto all = read_labels(cfg.paths.data);
    std::ostringstream os;
    os << kFeaturesCsvHeader << '\n';
    for (const auto& s : all) write_features_csv_rows(os, s.id, subject_features(cfg, s.id));
    write_text_file(cfg.paths.features, os.str());
    write_json_file(meta_path(cfg.paths.features),
                    {{"config", cfg.snapshot},
                     {"grid_n", cfg.grid_n},
                     {"mode", mode_name(cfg.mode)},
                     {"subjects", all.size()},
                     {"features_per_subject", feature_dimension(cfg.grid_n, cfg.mode)},
                     {"rows", all.size() * feature_dimension(cfg.grid_n, cfg.mode)}});
}

inline std::map<std::string, FeatureVector> load_features(const PipelineConfig& cfg)
{
    std::istringstream in(read_file_bytes(cfg.paths.features));
    std::map<std::string, FeatureVector> out;
    for (auto& [id, fv] : read_features_csv(in, cfg.grid_n, cfg.mode)) out[id] = std::move(fv);
    return out;
}

// ---------------------------------------------------------------------------
// train, eval, explain

inline fs::path model_path(const PipelineConfig& cfg, Task t, int run)
{
    return cfg.paths.models / (std::string(task_name(t)) + "_run" + std::to_string(run) + ".json");
}

inline std::vector<LabeledSubject> labeled_subjects(const PipelineConfig& cfg, const std::vector<SubjectRecord>& recs,
                                                    const std::map<std::string, FeatureVector>& feats, Task task)
{
    std::vector<LabeledSubject> out;
    for (const auto& r : recs) {
        const auto it = feats.find(r.id);
        if (it == feats.end()) throw ValidationError("no features for subject " + r.id + " (run extract first)");
        out.push_back({r.id, cfg.usage ? load_views(cfg.paths.data, r.id) : std::array<Volume, 3>{}, it->second,
                       r.label(task)});
    }
    return out;
}

inline void cmd_train(const PipelineConfig& cfg)
{
    const auto all = read_labels(cfg.paths.data);
    const auto feats = load_features(cfg);
    const auto tr = train_split(cfg, all), va = val_split(cfg, all);
    for (Task task : cfg.training.tasks) {
        const auto train = labeled_subjects(cfg, tr, feats, task);
        const auto val = labeled_subjects(cfg, va, feats, task);
        for (int run = 0; run < cfg.training.runs; ++run) {
            auto model = train_fingerprint(train, val, cfg.fingerprint(task, run));
            json j = fingerprint_model_to_json(model);
            j["pipeline_config"] = cfg.snapshot;
            write_text_file(model_path(cfg, task, run), j.dump() + "\n");
        }
    }
}

inline FingerprintModel load_model(const PipelineConfig& cfg, Task t, int run)
{
    const auto path = model_path(cfg, t, run);
    if (!fs::exists(path)) throw IoError("missing model " + path.string() + " (run train first)");
    return fingerprint_model_from_json(read_json_file(path));
}

/// Validation scores of one saved model.
inline ScoredLabels score_split(const PipelineConfig& cfg, const FingerprintModel& m,
                                const std::vector<SubjectRecord>& recs, const std::map<std::string, FeatureVector>& feats)
{
    ScoredLabels sl;
    for (const auto& r : recs) {
        const auto it = feats.find(r.id);
        if (it == feats.end()) throw ValidationError("no features for subject " + r.id);
        const auto views = m.config.use_usage ? load_views(cfg.paths.data, r.id) : std::array<Volume, 3>{};
        const auto vt = m.config.use_usage ? to_view_tensors<double>(views) : ViewTensors<double>{};
        sl.scores.push_back(predict_standardized(m, vt, standardize(it->second, m.stats).values).probability);
        sl.labels.push_back(r.label(m.config.task));
    }
    return sl;
}

inline json cmd_eval(const PipelineConfig& cfg)
{
    const auto all = read_labels(cfg.paths.data);
    const auto feats = load_features(cfg);
    const auto va = val_split(cfg, all);
    std::map<std::string, std::vector<RunMetrics>> per_task;
    json runs = json::object();
    for (Task task : cfg.training.tasks) {
        const std::string name(task_name(task));
        runs[name] = json::array();
        for (int run = 0; run < cfg.training.runs; ++run) {
            const auto m = load_model(cfg, task, run);
            const auto sl = score_split(cfg, m, va, feats);
            const auto c = confusion_at(sl, m.decision_threshold);
            const bool both = sl.positives() > 0 && sl.negatives() > 0;
            RunMetrics rm{c.accuracy, c.sensitivity, c.specificity, both ? roc_auc(sl) : 0.5};
            per_task[name].push_back(rm);
            runs[name].push_back({{"run", run},
                                  {"decision_threshold", m.decision_threshold},
                                  {"acc", rm.accuracy},
                                  {"sen", rm.sensitivity},
                                  {"spe", rm.specificity},
                                  {"auc", rm.auc},
                                  {"sen_vacuous", c.sensitivity_vacuous},
                                  {"spe_vacuous", c.specificity_vacuous}});
        }
    }
    const json report{{"tasks", eval_report_to_json(aggregate_runs(per_task))},
                      {"runs", runs},
                      {"validation_subjects", va.size()},
                      {"config", cfg.snapshot}};
    write_json_file(cfg.paths.eval, report);
    return report;
}

inline InterpretabilityReport cmd_explain(const PipelineConfig& cfg, const std::string& subject, Task task, int run = 0)
{
    const auto all = read_labels(cfg.paths.data);
    if (std::none_of(all.begin(), all.end(), [&](const auto& r) { return r.id == subject; }))
        throw ValidationError("subject '" + subject + "' not in dataset");
    const auto m = load_model(cfg, task, run);
    const auto rep = explain(m, load_views(cfg.paths.data, subject), subject_features(cfg, subject));
    std::ostringstream os;
    write_report_csv(os, rep);
    const fs::path stem = cfg.paths.reports / (subject + "_" + std::string(task_name(task)));
    write_text_file(fs::path(stem.string() + ".csv"), os.str());
    json summary = report_summary_json(rep);
    summary["subject_id"] = subject;
    summary["task"] = task_name(task);
    summary["decision_threshold"] = m.decision_threshold;
    summary["usage_threshold"] = m.config.usage_threshold;
    summary["config"] = cfg.snapshot;
    write_json_file(fs::path(stem.string() + ".json"), summary);
    return rep;
}

} // namespace rfp
