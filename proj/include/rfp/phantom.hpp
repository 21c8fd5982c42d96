#pragma once

// Synthetic knee-like phantoms with planted, labelled lesions.
//
// Healthy tissue: soft-edged ellipsoid plus a bright band on a low-frequency
// background, with weak Gaussian texture. Two lesion kinds:
//   acl  - heterogeneous high-entropy blob inside one sagittal-view patch
//   men  - thin bright plane inside one coronal-view patch
// Lesions sit in the part of their patch that overlaps the central box, so
// persona inpainting over that box covers them.

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "errors.hpp"
#include "random.hpp"
#include "view.hpp"
#include "volume.hpp"

namespace rfp {

enum class LesionKind { acl, men };

inline std::string_view lesion_name(LesionKind k) { return k == LesionKind::acl ? "acl" : "men"; }

struct LesionPlacement {
    View view = View::sagittal;
    PatchIndex patch;
    LesionKind kind = LesionKind::acl;
    bool operator==(const LesionPlacement&) const = default;
};

struct PhantomConfig {
    Dims dims{16, 32, 32};
    int grid_n = 2;
    double p_acl = 0.4;
    double p_men = 0.4;
    double noise_sigma = 0.02;
    double background = 0.1;
    double lesion_contrast = 0.5;
    std::array<double, 3> lesion_region{0.5, 0.3, 0.5};
    std::optional<PatchIndex> acl_patch;
    std::optional<PatchIndex> men_patch;

    // Posterior, medial patch of the sagittal view.
    PatchIndex acl_patch_or_default() const
    {
        return acl_patch.value_or(PatchIndex{grid_n - 1, grid_n / 2, grid_n / 2});
    }
    // Lateral patch of the coronal view.
    PatchIndex men_patch_or_default() const { return men_patch.value_or(PatchIndex{0, grid_n / 2, grid_n / 2}); }

    void validate() const
    {
        require(dims.depth >= 1 && dims.height >= 1 && dims.width >= 1, "phantom dims must be >= 1");
        require(grid_n >= 1, "phantom grid_n must be >= 1");
        const auto n = static_cast<std::size_t>(grid_n);
        require(n <= dims.depth && n <= dims.height && n <= dims.width, "phantom grid_n exceeds dims");
        require(p_acl >= 0.0 && p_acl <= 1.0, "p_acl must lie in [0,1]");
        require(p_men >= 0.0 && p_men <= 1.0, "p_men must lie in [0,1]");
        require(noise_sigma >= 0.0, "noise_sigma must be >= 0");
        for (double f : lesion_region) require(f > 0.0 && f <= 1.0, "lesion_region fractions must lie in (0,1]");
        auto in_grid = [&](const PatchIndex& p) {
            return p.ix >= 0 && p.iy >= 0 && p.iz >= 0 && p.ix < grid_n && p.iy < grid_n && p.iz < grid_n;
        };
        require(in_grid(acl_patch_or_default()), "acl_patch outside grid");
        require(in_grid(men_patch_or_default()), "men_patch outside grid");
    }
};

struct SyntheticSubject {
    std::array<Volume, 3> views;
    bool abn = false;
    bool acl = false;
    bool men = false;
    std::vector<LesionPlacement> lesions;
    std::uint64_t seed = 0;
};

namespace detail {

inline double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline Volume healthy_view(const PhantomConfig& cfg, View view, Rng& rng)
{
    const Dims& d = cfg.dims;
    const double D = double(d.depth), H = double(d.height), W = double(d.width);

    // per-view anatomy proportions
    static constexpr std::array<std::array<double, 3>, 3> radii{{{0.34, 0.28, 0.36}, {0.30, 0.32, 0.30}, {0.36, 0.30, 0.28}}};
    const auto& r = radii[static_cast<int>(view)];
    const double cz = D * uniform(rng, 0.44, 0.56), cy = H * uniform(rng, 0.42, 0.50), cx = W * uniform(rng, 0.44, 0.56);
    const double rz = D * r[0] * uniform(rng, 0.9, 1.1), ry = H * r[1] * uniform(rng, 0.9, 1.1),
                 rx = W * r[2] * uniform(rng, 0.9, 1.1);
    const double tissue = uniform(rng, 0.45, 0.6);
    const double band_y = H * uniform(rng, 0.55, 0.65), band_half = std::max(1.0, H * 0.04);
    const double band_amp = uniform(rng, 0.12, 0.18);

    struct Mode {
        double fz, fy, fx, phase, amp;
    };
    std::array<Mode, 3> modes{};
    for (auto& m : modes)
        m = {uniform(rng, 0.0, 1.0), uniform(rng, 0.0, 1.0), uniform(rng, 0.0, 1.0), uniform(rng, 0.0, 6.283185307179586),
             uniform(rng, 0.02, 0.05)};

    Volume v(d);
    constexpr double two_pi = 6.283185307179586;
    for (std::size_t z = 0; z < d.depth; ++z)
        for (std::size_t y = 0; y < d.height; ++y)
            for (std::size_t x = 0; x < d.width; ++x) {
                const double pz = double(z) + 0.5, py = double(y) + 0.5, px = double(x) + 0.5;
                const double q = std::sqrt(std::pow((pz - cz) / rz, 2) + std::pow((py - cy) / ry, 2) +
                                           std::pow((px - cx) / rx, 2));
                double val = cfg.background + tissue * logistic((1.0 - q) * 8.0);
                val += band_amp * logistic((band_half - std::abs(py - band_y)) * 1.5) * logistic((1.2 - q) * 8.0);
                for (const auto& m : modes)
                    val += m.amp * std::cos(two_pi * (m.fz * pz / D + m.fy * py / H + m.fx * px / W) + m.phase);
                val += cfg.noise_sigma * std_normal(rng);
                v.at(z, y, x) = static_cast<float>(val);
            }
    return v;
}

// Part of `patch` that overlaps the central lesion region; falls back to the
// whole patch when they do not intersect.
inline BoxMask lesion_window(const PhantomConfig& cfg, const BoxMask& patch)
{
    const BoxMask region = central_mask(cfg.dims, cfg.lesion_region);
    auto lo = [](std::size_t a, std::size_t b) { return std::max(a, b); };
    const std::size_t z0 = lo(patch.origin.z, region.origin.z), y0 = lo(patch.origin.y, region.origin.y),
                      x0 = lo(patch.origin.x, region.origin.x);
    const std::size_t z1 = std::min(patch.origin.z + patch.extent.depth, region.origin.z + region.extent.depth);
    const std::size_t y1 = std::min(patch.origin.y + patch.extent.height, region.origin.y + region.extent.height);
    const std::size_t x1 = std::min(patch.origin.x + patch.extent.width, region.origin.x + region.extent.width);
    if (z0 >= z1 || y0 >= y1 || x0 >= x1) return patch;
    return BoxMask{{z0, y0, x0}, {z1 - z0, y1 - y0, x1 - x0}};
}

inline void plant_acl(const PhantomConfig& cfg, Volume& v, const BoxMask& patch, Rng& rng)
{
    const BoxMask win = lesion_window(cfg, patch);
    auto centre = [&](std::size_t o, std::size_t e) { return double(o) + uniform(rng, 0.3, 0.7) * double(e); };
    const double cz = centre(win.origin.z, win.extent.depth), cy = centre(win.origin.y, win.extent.height),
                 cx = centre(win.origin.x, win.extent.width);
    const double rz = std::max(1.5, patch.extent.depth / 4.0), ry = std::max(1.5, patch.extent.height / 4.0),
                 rx = std::max(1.5, patch.extent.width / 4.0);
    for (std::size_t z = patch.origin.z; z < patch.origin.z + patch.extent.depth; ++z)
        for (std::size_t y = patch.origin.y; y < patch.origin.y + patch.extent.height; ++y)
            for (std::size_t x = patch.origin.x; x < patch.origin.x + patch.extent.width; ++x) {
                const double q = std::pow((z + 0.5 - cz) / rz, 2) + std::pow((y + 0.5 - cy) / ry, 2) +
                                 std::pow((x + 0.5 - cx) / rx, 2);
                if (q <= 1.0) v.at(z, y, x) = static_cast<float>(0.25 + uniform(rng, 0.0, 0.75));
            }
}

inline void plant_men(const PhantomConfig& cfg, Volume& v, const BoxMask& patch, Rng& rng)
{
    const BoxMask win = lesion_window(cfg, patch);
    const std::size_t y = win.origin.y + static_cast<std::size_t>(uniform(rng, 0.25, 0.75) * double(win.extent.height));
    const std::size_t dz = std::max<std::size_t>(1, patch.extent.depth / 2), dx = std::max<std::size_t>(1, patch.extent.width / 2);
    auto start = [&](std::size_t o, std::size_t e, std::size_t span) {
        const std::size_t slack = e - std::min(e, span);
        return o + static_cast<std::size_t>(uniform(rng, 0.0, 1.0) * double(slack + 1)) % (slack + 1);
    };
    const std::size_t z0 = start(patch.origin.z, patch.extent.depth, dz);
    const std::size_t x0 = start(patch.origin.x, patch.extent.width, dx);
    for (std::size_t z = z0; z < std::min(z0 + dz, patch.origin.z + patch.extent.depth); ++z)
        for (std::size_t x = x0; x < std::min(x0 + dx, patch.origin.x + patch.extent.width); ++x)
            v.at(z, y, x) += static_cast<float>(cfg.lesion_contrast);
}

} // namespace detail

/// Pure function of (seed, config).
inline SyntheticSubject gen_phantom(std::uint64_t seed, const PhantomConfig& cfg)
{
    cfg.validate();
    SyntheticSubject s;
    s.seed = seed;

    Rng label_rng = make_rng(derive_seed(seed, 0));
    s.acl = uniform01(label_rng) < cfg.p_acl;
    s.men = uniform01(label_rng) < cfg.p_men;
    s.abn = s.acl || s.men;

    for (View view : kViews) {
        Rng rng = make_rng(derive_seed(seed, 1 + static_cast<std::uint64_t>(view)));
        s.views[static_cast<int>(view)] = detail::healthy_view(cfg, view, rng);
    }

    const auto boxes = grid_boxes(cfg.dims, cfg.grid_n);
    auto box_of = [&](const PatchIndex& p) {
        return boxes[static_cast<std::size_t>((p.iz * cfg.grid_n + p.iy) * cfg.grid_n + p.ix)];
    };
    Rng lesion_rng = make_rng(derive_seed(seed, 7));
    if (s.acl) {
        const PatchIndex p = cfg.acl_patch_or_default();
        detail::plant_acl(cfg, s.views[static_cast<int>(View::sagittal)], box_of(p), lesion_rng);
        s.lesions.push_back({View::sagittal, p, LesionKind::acl});
    }
    if (s.men) {
        const PatchIndex p = cfg.men_patch_or_default();
        detail::plant_men(cfg, s.views[static_cast<int>(View::coronal)], box_of(p), lesion_rng);
        s.lesions.push_back({View::coronal, p, LesionKind::men});
    }
    return s;
}

} // namespace rfp
