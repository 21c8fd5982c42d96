#pragma once

// Binary classification metrics and Youden threshold selection.

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "errors.hpp"

namespace rfp {

struct ScoredLabels {
    std::vector<double> scores;
    std::vector<bool> labels;

    void validate() const
    {
        require(!scores.empty(), "scored labels: empty input");
        require(scores.size() == labels.size(), "scored labels: length mismatch");
        for (double s : scores) require(std::isfinite(s) && s >= 0.0 && s <= 1.0, "scored labels: score outside [0,1]");
    }

    std::size_t positives() const { return std::size_t(std::count(labels.begin(), labels.end(), true)); }
    std::size_t negatives() const { return labels.size() - positives(); }
};

struct Confusion {
    double accuracy = 0.0;
    double sensitivity = 0.0;
    double specificity = 0.0;
    bool sensitivity_vacuous = false;  // no positives present
    bool specificity_vacuous = false;  // no negatives present
};

/// Positive iff score >= t. A rate whose class is absent is reported as 1.
inline Confusion confusion_at(const ScoredLabels& sl, double t)
{
    sl.validate();
    std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
    for (std::size_t i = 0; i < sl.scores.size(); ++i) {
        const bool pred = sl.scores[i] >= t;
        if (sl.labels[i]) (pred ? tp : fn)++;
        else (pred ? fp : tn)++;
    }
    Confusion c;
    c.accuracy = double(tp + tn) / double(sl.scores.size());
    c.sensitivity_vacuous = tp + fn == 0;
    c.specificity_vacuous = tn + fp == 0;
    c.sensitivity = c.sensitivity_vacuous ? 1.0 : double(tp) / double(tp + fn);
    c.specificity = c.specificity_vacuous ? 1.0 : double(tn) / double(tn + fp);
    return c;
}

/// Mann-Whitney AUC: P(pos > neg) + P(tie) / 2 over all positive/negative pairs.
inline double roc_auc(const ScoredLabels& sl)
{
    sl.validate();
    std::vector<double> pos, neg;
    for (std::size_t i = 0; i < sl.scores.size(); ++i) (sl.labels[i] ? pos : neg).push_back(sl.scores[i]);
    if (pos.empty() || neg.empty()) throw ValidationError("roc_auc: both classes must be present");
    double wins = 0.0;
    for (double p : pos)
        for (double n : neg) wins += p > n ? 1.0 : (p == n ? 0.5 : 0.0);
    return wins / (double(pos.size()) * double(neg.size()));
}

/// Candidate cut points: 0, midpoints between adjacent distinct scores, 1.
inline std::vector<double> threshold_candidates(const std::vector<double>& scores)
{
    std::vector<double> s = scores;
    std::sort(s.begin(), s.end());
    s.erase(std::unique(s.begin(), s.end()), s.end());
    std::vector<double> c{0.0};
    for (std::size_t i = 0; i + 1 < s.size(); ++i) c.push_back(0.5 * (s[i] + s[i + 1]));
    c.push_back(1.0);
    c.erase(std::unique(c.begin(), c.end()), c.end());
    return c;
}

/// Threshold maximising Sen + Spe - 1; the smallest candidate wins ties.
inline double youden_threshold(const ScoredLabels& sl)
{
    sl.validate();
    if (sl.positives() == 0 || sl.negatives() == 0)
        throw ValidationError("youden_threshold: both classes must be present");
    // J = tp/P + tn/N - 1 is ordered like tp*N + tn*P, which is exact in integers.
    const auto P = static_cast<long long>(sl.positives()), N = static_cast<long long>(sl.negatives());
    double best_t = 0.0;
    long long best = -1;
    for (double t : threshold_candidates(sl.scores)) {
        long long tp = 0, tn = 0;
        for (std::size_t i = 0; i < sl.scores.size(); ++i) {
            const bool pred = sl.scores[i] >= t;
            if (sl.labels[i] && pred) ++tp;
            if (!sl.labels[i] && !pred) ++tn;
        }
        const long long j = tp * N + tn * P;
        if (j > best) {
            best = j;
            best_t = t;
        }
    }
    return best_t;
}

struct RunMetrics {
    double accuracy = 0.0;
    double sensitivity = 0.0;
    double specificity = 0.0;
    double auc = 0.0;
};

struct MeanStd {
    double mean = 0.0;
    double std = 0.0;
};

struct EvalReport {
    std::map<std::string, std::array<MeanStd, 4>> tasks;  // acc, sen, spe, auc
    std::map<std::string, std::size_t> runs;
};

inline MeanStd mean_std(const std::vector<double>& xs)
{
    require(!xs.empty(), "mean_std: no values");
    double m = 0.0;
    for (double x : xs) m += x;
    m /= double(xs.size());
    double v = 0.0;
    for (double x : xs) v += (x - m) * (x - m);
    return {m, std::sqrt(v / double(xs.size()))};
}

/// Population mean/std of every metric across runs, per task.
inline EvalReport aggregate_runs(const std::map<std::string, std::vector<RunMetrics>>& per_task)
{
    EvalReport rep;
    for (const auto& [task, runs] : per_task) {
        require(!runs.empty(), "aggregate_runs: task " + task + " has no runs");
        std::array<std::vector<double>, 4> cols;
        for (const auto& r : runs) {
            cols[0].push_back(r.accuracy);
            cols[1].push_back(r.sensitivity);
            cols[2].push_back(r.specificity);
            cols[3].push_back(r.auc);
        }
        rep.tasks[task] = {mean_std(cols[0]), mean_std(cols[1]), mean_std(cols[2]), mean_std(cols[3])};
        rep.runs[task] = runs.size();
    }
    return rep;
}

inline nlohmann::json eval_report_to_json(const EvalReport& rep)
{
    nlohmann::json tasks = nlohmann::json::object();
    static constexpr std::array<const char*, 4> names{"acc", "sen", "spe", "auc"};
    for (const auto& [task, ms] : rep.tasks) {
        nlohmann::json block = nlohmann::json::object();
        for (std::size_t k = 0; k < 4; ++k) block[names[k]] = {{"mean", ms[k].mean}, {"std", ms[k].std}};
        block["runs"] = rep.runs.at(task);
        tasks[task] = std::move(block);
    }
    return tasks;
}

} // namespace rfp
