#pragma once

// Candidate radiomic features: 19 first-order statistics and 16 shape
// descriptors per subpatch, plus the subpatch's grid coordinates.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <istream>
#include <map>
#include <numbers>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Eigenvalues>

#include "errors.hpp"
#include "view.hpp"
#include "volume.hpp"

namespace rfp {

inline constexpr std::size_t kFirstOrderCount = 19;
inline constexpr std::size_t kShapeCount = 16;
inline constexpr std::size_t kSpatialCount = 3;
inline constexpr std::size_t kFeaturesPerPatch = kFirstOrderCount + kShapeCount + kSpatialCount;  // 38

inline constexpr std::array<std::string_view, kFeaturesPerPatch> kFeatureCatalogue{
    // first order
    "Energy", "TotalEnergy", "Entropy", "Minimum", "Percentile10", "Percentile90", "Maximum", "Mean", "Median",
    "InterquartileRange", "Range", "MeanAbsoluteDeviation", "RobustMeanAbsoluteDeviation", "RootMeanSquared",
    "StandardDeviation", "Skewness", "Kurtosis", "Variance", "Uniformity",
    // shape
    "VoxelVolume", "SurfaceArea", "SurfaceVolumeRatio", "Sphericity", "Compactness1", "Compactness2",
    "SphericalDisproportion", "MajorAxisLength", "MinorAxisLength", "LeastAxisLength", "Elongation", "Flatness",
    "Maximum3DDiameter", "BBoxZ", "BBoxY", "BBoxX",
    // grid position
    "SpatialX", "SpatialY", "SpatialZ"};

inline std::size_t catalogue_index(std::string_view name)
{
    for (std::size_t i = 0; i < kFeatureCatalogue.size(); ++i)
        if (kFeatureCatalogue[i] == name) return i;
    throw ValidationError("unknown feature name '" + std::string(name) + "'");
}

inline bool is_spatial_feature(std::size_t catalogue_idx) { return catalogue_idx >= kFirstOrderCount + kShapeCount; }

using FirstOrderFeatures = std::array<double, kFirstOrderCount>;
using ShapeFeatures = std::array<double, kShapeCount>;
using PatchFeatures = std::array<double, kFeaturesPerPatch>;

inline constexpr int kHistogramBins = 32;
inline constexpr int kOtsuBins = 64;
inline constexpr double kVoxelVolume = 1.0;

namespace detail {

// Linear interpolation between order statistics at position q * (n - 1).
inline double sorted_percentile(const std::vector<double>& sorted, double q)
{
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return sorted[lo] + (sorted[hi] - sorted[lo]) * frac;
}

inline int bin_of(double x, double lo, double range, int bins)
{
    const int b = static_cast<int>(std::floor((x - lo) / range * bins));
    return std::clamp(b, 0, bins - 1);
}

} // namespace detail

inline FirstOrderFeatures first_order_features(const Volume& patch)
{
    require(!patch.empty(), "first_order_features: empty patch");
    std::vector<double> x(patch.voxels().begin(), patch.voxels().end());
    const auto n = static_cast<double>(x.size());

    double sum = 0.0, sum_sq = 0.0;
    for (double v : x) {
        sum += v;
        sum_sq += v * v;
    }
    const double mean = sum / n;
    double m2 = 0.0, m3 = 0.0, m4 = 0.0, mad = 0.0;
    for (double v : x) {
        const double d = v - mean;
        m2 += d * d;
        m3 += d * d * d;
        m4 += d * d * d * d;
        mad += std::abs(d);
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    mad /= n;

    std::vector<double> sorted = x;
    std::sort(sorted.begin(), sorted.end());
    const double minimum = sorted.front(), maximum = sorted.back();
    const double p10 = detail::sorted_percentile(sorted, 0.10), p90 = detail::sorted_percentile(sorted, 0.90);
    const double p25 = detail::sorted_percentile(sorted, 0.25), p75 = detail::sorted_percentile(sorted, 0.75);
    const double median = detail::sorted_percentile(sorted, 0.50);

    // robust MAD over the 10th-90th percentile band
    double band_sum = 0.0;
    std::size_t band_n = 0;
    for (double v : x)
        if (v >= p10 && v <= p90) {
            band_sum += v;
            ++band_n;
        }
    const double band_mean = band_sum / static_cast<double>(band_n);
    double rmad = 0.0;
    for (double v : x)
        if (v >= p10 && v <= p90) rmad += std::abs(v - band_mean);
    rmad /= static_cast<double>(band_n);

    const double range = maximum - minimum;
    double entropy = 0.0, uniformity = 1.0, skewness = 0.0, kurtosis = 0.0;
    if (range > 0.0) {
        std::array<std::size_t, kHistogramBins> hist{};
        for (double v : x) ++hist[static_cast<std::size_t>(detail::bin_of(v, minimum, range, kHistogramBins))];
        uniformity = 0.0;
        for (std::size_t c : hist) {
            if (c == 0) continue;
            const double p = static_cast<double>(c) / n;
            entropy -= p * std::log2(p);
            uniformity += p * p;
        }
        if (m2 > 0.0) {
            skewness = m3 / std::pow(m2, 1.5);
            kurtosis = m4 / (m2 * m2);
        }
    }

    return {sum_sq,
            sum_sq * kVoxelVolume,
            entropy,
            minimum,
            p10,
            p90,
            maximum,
            mean,
            median,
            p75 - p25,
            range,
            mad,
            rmad,
            std::sqrt(sum_sq / n),
            std::sqrt(m2),
            skewness,
            kurtosis,
            m2,
            uniformity};
}

/// Binary foreground, same layout as the patch voxels.
struct VoxelMask {
    Dims dims;
    std::vector<std::uint8_t> on;

    std::size_t count() const { return static_cast<std::size_t>(std::count(on.begin(), on.end(), 1)); }
    bool at(std::size_t z, std::size_t y, std::size_t x) const
    {
        return on[(z * dims.height + y) * dims.width + x] != 0;
    }
};

/// Otsu split of a 64-bin histogram over the patch range. Voxels whose bin is
/// at or above the optimal split bin are foreground; ties pick the lowest
/// split. A constant patch is entirely foreground.
inline VoxelMask foreground_mask(const Volume& patch)
{
    require(!patch.empty(), "foreground_mask: empty patch");
    VoxelMask m{patch.dims(), std::vector<std::uint8_t>(patch.size(), 1)};
    const auto vox = patch.voxels();
    const auto [mn_it, mx_it] = std::minmax_element(vox.begin(), vox.end());
    const double lo = *mn_it, range = double(*mx_it) - lo;
    if (range <= 0.0) return m;

    std::vector<int> bins(vox.size());
    std::array<double, kOtsuBins> hist{};
    for (std::size_t i = 0; i < vox.size(); ++i) {
        bins[i] = detail::bin_of(vox[i], lo, range, kOtsuBins);
        hist[static_cast<std::size_t>(bins[i])] += 1.0;
    }
    const double total = static_cast<double>(vox.size());
    double total_moment = 0.0;
    for (int b = 0; b < kOtsuBins; ++b) total_moment += b * hist[static_cast<std::size_t>(b)];

    int best_k = -1;
    double best = -1.0, w0 = 0.0, moment0 = 0.0;
    for (int k = 1; k < kOtsuBins; ++k) {
        w0 += hist[static_cast<std::size_t>(k - 1)];
        moment0 += (k - 1) * hist[static_cast<std::size_t>(k - 1)];
        const double w1 = total - w0;
        if (w0 == 0.0 || w1 == 0.0) continue;
        const double mu0 = moment0 / w0, mu1 = (total_moment - moment0) / w1;
        const double between = w0 * w1 * (mu0 - mu1) * (mu0 - mu1);
        if (between > best) {
            best = between;
            best_k = k;
        }
    }
    if (best_k < 0) return m;
    for (std::size_t i = 0; i < vox.size(); ++i) m.on[i] = bins[i] >= best_k ? 1 : 0;
    return m;
}

inline std::size_t exposed_faces(const VoxelMask& m)
{
    const Dims& d = m.dims;
    std::size_t faces = 0;
    auto bg = [&](long z, long y, long x) {
        if (z < 0 || y < 0 || x < 0 || z >= long(d.depth) || y >= long(d.height) || x >= long(d.width)) return true;
        return !m.at(std::size_t(z), std::size_t(y), std::size_t(x));
    };
    for (long z = 0; z < long(d.depth); ++z)
        for (long y = 0; y < long(d.height); ++y)
            for (long x = 0; x < long(d.width); ++x) {
                if (!m.at(std::size_t(z), std::size_t(y), std::size_t(x))) continue;
                faces += bg(z - 1, y, x) + bg(z + 1, y, x) + bg(z, y - 1, x) + bg(z, y + 1, x) + bg(z, y, x - 1) +
                         bg(z, y, x + 1);
            }
    return faces;
}

/// Largest centre-to-centre distance between foreground voxels. Only the
/// first and last voxel of each x-row can be hull vertices, so the search
/// runs over those.
inline double max_diameter(const VoxelMask& m)
{
    const Dims& d = m.dims;
    std::vector<std::array<double, 3>> cand;
    for (std::size_t z = 0; z < d.depth; ++z)
        for (std::size_t y = 0; y < d.height; ++y) {
            long first = -1, last = -1;
            for (std::size_t x = 0; x < d.width; ++x)
                if (m.at(z, y, x)) {
                    if (first < 0) first = long(x);
                    last = long(x);
                }
            if (first < 0) continue;
            cand.push_back({double(z), double(y), double(first)});
            if (last != first) cand.push_back({double(z), double(y), double(last)});
        }
    double best = 0.0;
    for (std::size_t i = 0; i < cand.size(); ++i)
        for (std::size_t j = i + 1; j < cand.size(); ++j) {
            const double dz = cand[i][0] - cand[j][0], dy = cand[i][1] - cand[j][1], dx = cand[i][2] - cand[j][2];
            best = std::max(best, dz * dz + dy * dy + dx * dx);
        }
    return std::sqrt(best);
}

inline ShapeFeatures shape_features_of_mask(const VoxelMask& m)
{
    const Dims& d = m.dims;
    double v = 0.0;
    Eigen::Vector3d sum = Eigen::Vector3d::Zero();
    std::array<std::size_t, 3> lo{d.depth, d.height, d.width}, hi{0, 0, 0};
    for (std::size_t z = 0; z < d.depth; ++z)
        for (std::size_t y = 0; y < d.height; ++y)
            for (std::size_t x = 0; x < d.width; ++x) {
                if (!m.at(z, y, x)) continue;
                v += 1.0;
                sum += Eigen::Vector3d(double(z), double(y), double(x));
                lo = {std::min(lo[0], z), std::min(lo[1], y), std::min(lo[2], x)};
                hi = {std::max(hi[0], z), std::max(hi[1], y), std::max(hi[2], x)};
            }
    require(v > 0.0, "shape features need a non-empty foreground");

    const Eigen::Vector3d centroid = sum / v;
    Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
    for (std::size_t z = 0; z < d.depth; ++z)
        for (std::size_t y = 0; y < d.height; ++y)
            for (std::size_t x = 0; x < d.width; ++x) {
                if (!m.at(z, y, x)) continue;
                const Eigen::Vector3d p = Eigen::Vector3d(double(z), double(y), double(x)) - centroid;
                cov += p * p.transpose();
            }
    cov /= v;
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(cov, Eigen::EigenvaluesOnly);
    // ascending order from Eigen
    const double l1 = std::max(0.0, eig.eigenvalues()(2)), l2 = std::max(0.0, eig.eigenvalues()(1)),
                 l3 = std::max(0.0, eig.eigenvalues()(0));

    const double a = static_cast<double>(exposed_faces(m));
    const double pi = std::numbers::pi;
    const double sphericity = std::cbrt(36.0 * pi * v * v) / a;
    const double elongation = l1 > 0.0 ? std::sqrt(l2 / l1) : 1.0;
    const double flatness = l1 > 0.0 ? std::sqrt(l3 / l1) : 1.0;

    return {v,
            a,
            a / v,
            sphericity,
            v / (std::sqrt(pi) * std::pow(a, 1.5)),
            36.0 * pi * v * v / (a * a * a),
            1.0 / sphericity,
            4.0 * std::sqrt(l1),
            4.0 * std::sqrt(l2),
            4.0 * std::sqrt(l3),
            elongation,
            flatness,
            max_diameter(m),
            double(hi[0] - lo[0] + 1),
            double(hi[1] - lo[1] + 1),
            double(hi[2] - lo[2] + 1)};
}

inline ShapeFeatures shape_features(const Volume& patch) { return shape_features_of_mask(foreground_mask(patch)); }

inline PatchFeatures patch_feature_vector(const Volume& patch, PatchIndex index)
{
    require(index.ix >= 0 && index.iy >= 0 && index.iz >= 0, "patch index must be non-negative");
    const auto fo = first_order_features(patch);
    const auto sh = shape_features(patch);
    PatchFeatures out{};
    std::copy(fo.begin(), fo.end(), out.begin());
    std::copy(sh.begin(), sh.end(), out.begin() + kFirstOrderCount);
    out[kFirstOrderCount + kShapeCount + 0] = index.ix;
    out[kFirstOrderCount + kShapeCount + 1] = index.iy;
    out[kFirstOrderCount + kShapeCount + 2] = index.iz;
    return out;
}

// ---------------------------------------------------------------------------
// Patient-level vectors

enum class Source : std::uint8_t { path = 0, persona = 1, residual = 2 };

inline std::string_view source_name(Source s)
{
    switch (s) {
    case Source::path: return "path";
    case Source::persona: return "persona";
    case Source::residual: return "residual";
    }
    return "?";
}

inline Source parse_source(std::string_view s)
{
    for (Source src : {Source::path, Source::persona, Source::residual})
        if (source_name(src) == s) return src;
    throw ValidationError("unknown feature source '" + std::string(s) + "'");
}

enum class FeatureMode { path_persona, residual, path_only };

inline std::string_view mode_name(FeatureMode m)
{
    switch (m) {
    case FeatureMode::path_persona: return "path_persona";
    case FeatureMode::residual: return "residual";
    case FeatureMode::path_only: return "path_only";
    }
    return "?";
}

inline FeatureMode parse_mode(std::string_view s)
{
    for (auto m : {FeatureMode::path_persona, FeatureMode::residual, FeatureMode::path_only})
        if (mode_name(m) == s) return m;
    throw ValidationError("unknown feature mode '" + std::string(s) + "'");
}

inline std::vector<Source> mode_sources(FeatureMode m)
{
    switch (m) {
    case FeatureMode::path_persona: return {Source::path, Source::persona};
    case FeatureMode::residual: return {Source::residual};
    case FeatureMode::path_only: return {Source::path};
    }
    return {};
}

inline std::size_t feature_dimension(int grid_n, FeatureMode mode)
{
    const auto n = static_cast<std::size_t>(grid_n);
    return kViews.size() * n * n * n * mode_sources(mode).size() * kFeaturesPerPatch;
}

struct FeatureId {
    View view = View::sagittal;
    PatchIndex patch;
    Source source = Source::path;
    std::uint8_t feature = 0;  // catalogue index

    std::string_view name() const { return kFeatureCatalogue[feature]; }
    bool operator==(const FeatureId&) const = default;
};

struct FeatureVector {
    std::vector<FeatureId> ids;
    std::vector<double> values;
    int grid_n = 1;
    FeatureMode mode = FeatureMode::path_only;

    std::size_t size() const { return values.size(); }
};

/// Canonical id sequence: view, then patch (iz, iy, ix), then source, then
/// catalogue order.
inline std::vector<FeatureId> canonical_ids(int grid_n, FeatureMode mode)
{
    std::vector<FeatureId> ids;
    ids.reserve(feature_dimension(grid_n, mode));
    const auto sources = mode_sources(mode);
    const auto cells = static_cast<std::size_t>(grid_n * grid_n * grid_n);
    for (View v : kViews)
        for (std::size_t c = 0; c < cells; ++c)
            for (Source s : sources)
                for (std::size_t f = 0; f < kFeaturesPerPatch; ++f)
                    ids.push_back({v, grid_index(c, grid_n), s, static_cast<std::uint8_t>(f)});
    return ids;
}

inline FeatureVector assemble_features(const std::array<Volume, 3>& views,
                                       const std::array<Volume, 3>* personas, int grid_n, FeatureMode mode)
{
    require(grid_n >= 1, "grid_n must be >= 1");
    const Dims dims = views[0].dims();
    for (const auto& v : views)
        if (!(v.dims() == dims)) throw ValidationError("assemble_features: views differ in dims");
    if (mode != FeatureMode::path_only) {
        if (personas == nullptr)
            throw ValidationError(std::string("assemble_features: mode ") + std::string(mode_name(mode)) +
                                  " requires persona volumes");
        for (const auto& p : *personas)
            if (!(p.dims() == dims)) throw ValidationError("assemble_features: persona dims differ from views");
    }

    FeatureVector fv;
    fv.grid_n = grid_n;
    fv.mode = mode;
    fv.ids = canonical_ids(grid_n, mode);
    fv.values.reserve(fv.ids.size());

    const auto sources = mode_sources(mode);
    for (View view : kViews) {
        const auto vi = static_cast<std::size_t>(view);
        std::vector<std::vector<Subpatch>> per_source;
        for (Source s : sources) {
            switch (s) {
            case Source::path: per_source.push_back(partition_grid(views[vi], grid_n)); break;
            case Source::persona: per_source.push_back(partition_grid((*personas)[vi], grid_n)); break;
            case Source::residual:
                per_source.push_back(partition_grid(residual(views[vi], (*personas)[vi]), grid_n));
                break;
            }
        }
        for (std::size_t c = 0; c < per_source[0].size(); ++c)
            for (const auto& patches : per_source) {
                const auto f = patch_feature_vector(patches[c].data, patches[c].index);
                fv.values.insert(fv.values.end(), f.begin(), f.end());
            }
    }
    for (double v : fv.values)
        if (!std::isfinite(v)) throw ValidationError("assemble_features: non-finite feature value");
    return fv;
}

// ---------------------------------------------------------------------------
// z-scoring with training-split statistics

struct StandardizerStats {
    std::vector<double> mean;
    std::vector<double> std;
    double epsilon = 1e-8;
};

inline StandardizerStats fit_standardizer(const std::vector<FeatureVector>& train, double epsilon = 1e-8)
{
    require(train.size() >= 2, "fit_standardizer: need at least two training vectors");
    require(epsilon > 0.0, "fit_standardizer: epsilon must be positive");
    const auto& ids = train.front().ids;
    for (const auto& fv : train)
        if (fv.ids != ids || fv.values.size() != ids.size())
            throw ValidationError("fit_standardizer: feature layout mismatch");

    const std::size_t n = ids.size();
    const auto count = static_cast<double>(train.size());
    StandardizerStats st{std::vector<double>(n, 0.0), std::vector<double>(n, 1.0), epsilon};
    for (std::size_t j = 0; j < n; ++j) {
        if (is_spatial_feature(ids[j].feature)) continue;  // passes through unscaled
        double s = 0.0;
        for (const auto& fv : train) s += fv.values[j];
        const double m = s / count;
        double ss = 0.0;
        for (const auto& fv : train) ss += (fv.values[j] - m) * (fv.values[j] - m);
        st.mean[j] = m;
        st.std[j] = std::max(std::sqrt(ss / count), epsilon);
    }
    return st;
}

inline FeatureVector standardize(const FeatureVector& fv, const StandardizerStats& st)
{
    if (fv.values.size() != st.mean.size()) throw ValidationError("standardize: feature layout mismatch");
    FeatureVector out = fv;
    for (std::size_t j = 0; j < out.values.size(); ++j) out.values[j] = (fv.values[j] - st.mean[j]) / st.std[j];
    return out;
}

// ---------------------------------------------------------------------------
// Features CSV

inline constexpr std::string_view kFeaturesCsvHeader =
    "subject_id,view,patch_ix,patch_iy,patch_iz,source,feature_name,value";

inline std::string format_g17(double v)
{
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline void write_features_csv_rows(std::ostream& os, const std::string& subject_id, const FeatureVector& fv)
{
    for (std::size_t i = 0; i < fv.ids.size(); ++i) {
        const auto& id = fv.ids[i];
        os << subject_id << ',' << view_name(id.view) << ',' << id.patch.ix << ',' << id.patch.iy << ','
           << id.patch.iz << ',' << source_name(id.source) << ',' << id.name() << ',' << format_g17(fv.values[i])
           << '\n';
    }
}

/// Parses a features CSV back into per-subject vectors, in file order.
inline std::vector<std::pair<std::string, FeatureVector>> read_features_csv(std::istream& is, int grid_n,
                                                                            FeatureMode mode)
{
    std::string line;
    if (!std::getline(is, line) || line != kFeaturesCsvHeader) throw FormatError("features CSV: bad header");
    const auto expected = canonical_ids(grid_n, mode);
    std::vector<std::pair<std::string, FeatureVector>> out;
    std::size_t lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::array<std::string, 8> f;
        std::size_t k = 0, start = 0;
        for (std::size_t i = 0; i <= line.size() && k < f.size(); ++i)
            if (i == line.size() || line[i] == ',') {
                f[k++] = line.substr(start, i - start);
                start = i + 1;
            }
        if (k != 8 || start <= line.size()) throw FormatError("features CSV: line " + std::to_string(lineno) + " needs 8 fields");
        if (out.empty() || out.back().first != f[0] || out.back().second.values.size() == expected.size()) {
            if (!out.empty() && out.back().second.values.size() != expected.size())
                throw FormatError("features CSV: subject " + out.back().first + " has an incomplete vector");
            FeatureVector fv;
            fv.grid_n = grid_n;
            fv.mode = mode;
            fv.ids = expected;
            out.emplace_back(f[0], std::move(fv));
        }
        auto& fv = out.back().second;
        const std::size_t pos = fv.values.size();
        if (pos >= expected.size()) throw FormatError("features CSV: too many rows for subject " + f[0]);
        FeatureId id;
        try {
            id = FeatureId{parse_view(f[1]), PatchIndex{std::stoi(f[2]), std::stoi(f[3]), std::stoi(f[4])},
                           parse_source(f[5]), static_cast<std::uint8_t>(catalogue_index(f[6]))};
            fv.values.push_back(std::stod(f[7]));
        } catch (const std::exception& e) {
            throw FormatError("features CSV: line " + std::to_string(lineno) + ": " + e.what());
        }
        if (!(id == expected[pos]))
            throw FormatError("features CSV: line " + std::to_string(lineno) + " out of canonical order");
    }
    if (!out.empty() && out.back().second.values.size() != expected.size())
        throw FormatError("features CSV: subject " + out.back().first + " has an incomplete vector");
    return out;
}

} // namespace rfp
