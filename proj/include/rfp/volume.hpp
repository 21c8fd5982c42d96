#pragma once

// Dense 3D scalar volumes, the RVOL container, resampling, grid tiling and
// box masks.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "errors.hpp"

namespace rfp {

struct Dims {
    std::size_t depth = 1;
    std::size_t height = 1;
    std::size_t width = 1;

    std::size_t count() const { return depth * height * width; }
    bool operator==(const Dims&) const = default;
};

inline std::string to_string(const Dims& d)
{
    return std::to_string(d.depth) + "x" + std::to_string(d.height) + "x" + std::to_string(d.width);
}

/// Row-major z,y,x grid of float intensities.
class Volume {
public:
    Volume() = default;

    explicit Volume(Dims dims, float fill = 0.0f) : dims_(dims), voxels_(dims.count(), fill)
    {
        require(dims.depth >= 1 && dims.height >= 1 && dims.width >= 1, "volume dims must be >= 1");
    }

    Volume(Dims dims, std::vector<float> voxels) : dims_(dims), voxels_(std::move(voxels))
    {
        require(dims.depth >= 1 && dims.height >= 1 && dims.width >= 1, "volume dims must be >= 1");
        require(voxels_.size() == dims.count(), "voxel count does not match dims");
    }

    const Dims& dims() const { return dims_; }
    std::size_t size() const { return voxels_.size(); }
    bool empty() const { return voxels_.empty(); }

    std::size_t index(std::size_t z, std::size_t y, std::size_t x) const
    {
        return (z * dims_.height + y) * dims_.width + x;
    }

    float& at(std::size_t z, std::size_t y, std::size_t x) { return voxels_[index(z, y, x)]; }
    float at(std::size_t z, std::size_t y, std::size_t x) const { return voxels_[index(z, y, x)]; }

    std::span<float> voxels() { return voxels_; }
    std::span<const float> voxels() const { return voxels_; }

    bool operator==(const Volume&) const = default;

private:
    Dims dims_{};
    std::vector<float> voxels_;
};

struct Index3 {
    std::size_t z = 0;
    std::size_t y = 0;
    std::size_t x = 0;
    bool operator==(const Index3&) const = default;
};

/// Axis-aligned box in voxel units.
struct BoxMask {
    Index3 origin;
    Dims extent;

    bool fits(const Dims& d) const
    {
        return extent.depth >= 1 && extent.height >= 1 && extent.width >= 1 &&
               origin.z + extent.depth <= d.depth && origin.y + extent.height <= d.height &&
               origin.x + extent.width <= d.width;
    }

    bool contains(std::size_t z, std::size_t y, std::size_t x) const
    {
        return z >= origin.z && z < origin.z + extent.depth && y >= origin.y &&
               y < origin.y + extent.height && x >= origin.x && x < origin.x + extent.width;
    }

    bool operator==(const BoxMask&) const = default;
};

/// Grid cell coordinate. ix runs along width, iy along height, iz along depth.
struct PatchIndex {
    int ix = 0;
    int iy = 0;
    int iz = 0;
    bool operator==(const PatchIndex&) const = default;
    auto operator<=>(const PatchIndex& o) const
    {
        if (auto c = iz <=> o.iz; c != 0) return c;
        if (auto c = iy <=> o.iy; c != 0) return c;
        return ix <=> o.ix;
    }
};

struct Subpatch {
    PatchIndex index;
    BoxMask box;
    Volume data;
};

inline Volume crop(const Volume& v, const BoxMask& box)
{
    require(box.fits(v.dims()), "crop box outside volume");
    Volume out(box.extent);
    for (std::size_t z = 0; z < box.extent.depth; ++z)
        for (std::size_t y = 0; y < box.extent.height; ++y) {
            const float* src = &v.voxels()[v.index(box.origin.z + z, box.origin.y + y, box.origin.x)];
            std::copy(src, src + box.extent.width, &out.voxels()[out.index(z, y, 0)]);
        }
    return out;
}

// ---------------------------------------------------------------------------
// RVOL: "RVL1", u32 depth/height/width (LE), then float32 LE voxels, x fastest.

namespace detail {

inline void put_u32(std::string& buf, std::uint32_t v)
{
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline std::uint32_t get_u32(const unsigned char* p)
{
    return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) |
           (std::uint32_t(p[3]) << 24);
}

} // namespace detail

inline constexpr std::size_t kRvolHeaderBytes = 16;

inline std::string encode_rvol(const Volume& v)
{
    const auto& d = v.dims();
    std::string buf;
    buf.reserve(kRvolHeaderBytes + 4 * v.size());
    buf.append("RVL1");
    detail::put_u32(buf, static_cast<std::uint32_t>(d.depth));
    detail::put_u32(buf, static_cast<std::uint32_t>(d.height));
    detail::put_u32(buf, static_cast<std::uint32_t>(d.width));
    for (float f : v.voxels()) detail::put_u32(buf, std::bit_cast<std::uint32_t>(f));
    return buf;
}

inline Volume decode_rvol(std::string_view bytes)
{
    if (bytes.size() < 4 || bytes.substr(0, 4) != "RVL1") throw FormatError("RVOL: bad magic");
    if (bytes.size() < kRvolHeaderBytes) throw FormatError("RVOL: truncated header (dims)");
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    const std::uint64_t depth = detail::get_u32(p + 4);
    const std::uint64_t height = detail::get_u32(p + 8);
    const std::uint64_t width = detail::get_u32(p + 12);
    if (depth == 0) throw FormatError("RVOL: depth is zero");
    if (height == 0) throw FormatError("RVOL: height is zero");
    if (width == 0) throw FormatError("RVOL: width is zero");
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() / 4;
    if (depth * height > limit / width) throw FormatError("RVOL: dims product overflows");
    const std::uint64_t n = depth * height * width;
    if (bytes.size() - kRvolHeaderBytes < n * 4) throw FormatError("RVOL: truncated payload");
    if (bytes.size() - kRvolHeaderBytes > n * 4) throw FormatError("RVOL: trailing bytes after payload");
    std::vector<float> vox(n);
    for (std::uint64_t i = 0; i < n; ++i) {
        vox[i] = std::bit_cast<float>(detail::get_u32(p + kRvolHeaderBytes + 4 * i));
        if (!std::isfinite(vox[i])) throw FormatError("RVOL: non-finite voxel value");
    }
    return Volume(Dims{depth, height, width}, std::move(vox));
}

inline std::string read_file_bytes(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return bytes;
}

inline void write_file_bytes(const std::filesystem::path& path, std::string_view bytes)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for " + path.string());
}

inline Volume read_volume(const std::filesystem::path& path)
{
    return decode_rvol(read_file_bytes(path));
}

inline void write_volume(const Volume& v, const std::filesystem::path& path)
{
    write_file_bytes(path, encode_rvol(v));
}

// ---------------------------------------------------------------------------

/// Trilinear resize. Output voxel centres map proportionally onto input
/// centres (src = (dst + 0.5) * in / out - 0.5), clamped at the borders.
inline Volume resample_trilinear(const Volume& v, Dims target)
{
    require(target.depth >= 1 && target.height >= 1 && target.width >= 1, "resample target dims must be >= 1");
    const Dims& in = v.dims();

    struct Tap {
        std::size_t lo, hi;
        double frac;
    };
    auto taps = [](std::size_t n_in, std::size_t n_out) {
        std::vector<Tap> t(n_out);
        const double scale = static_cast<double>(n_in) / static_cast<double>(n_out);
        for (std::size_t o = 0; o < n_out; ++o) {
            double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
            src = std::clamp(src, 0.0, static_cast<double>(n_in - 1));
            auto lo = static_cast<std::size_t>(std::floor(src));
            std::size_t hi = std::min(lo + 1, n_in - 1);
            t[o] = {lo, hi, src - static_cast<double>(lo)};
        }
        return t;
    };
    const auto tz = taps(in.depth, target.depth);
    const auto ty = taps(in.height, target.height);
    const auto tx = taps(in.width, target.width);

    Volume out(target);
    for (std::size_t z = 0; z < target.depth; ++z)
        for (std::size_t y = 0; y < target.height; ++y)
            for (std::size_t x = 0; x < target.width; ++x) {
                auto lerp = [](double a, double b, double f) { return f == 0.0 ? a : a + (b - a) * f; };
                auto row = [&](std::size_t zz, std::size_t yy) {
                    return lerp(v.at(zz, yy, tx[x].lo), v.at(zz, yy, tx[x].hi), tx[x].frac);
                };
                auto plane = [&](std::size_t zz) { return lerp(row(zz, ty[y].lo), row(zz, ty[y].hi), ty[y].frac); };
                out.at(z, y, x) = static_cast<float>(lerp(plane(tz[z].lo), plane(tz[z].hi), tz[z].frac));
            }
    return out;
}

/// Splits each axis into n nearly equal runs; the first (dim % n) runs get
/// one extra voxel. Result is ordered with iz slowest and ix fastest.
inline std::vector<BoxMask> grid_boxes(const Dims& dims, int n)
{
    require(n >= 1, "grid size must be >= 1");
    const auto un = static_cast<std::size_t>(n);
    if (un > dims.depth || un > dims.height || un > dims.width)
        throw ValidationError("invalid grid: n=" + std::to_string(n) + " exceeds volume dims " + to_string(dims));

    auto runs = [un](std::size_t dim) {
        std::vector<std::pair<std::size_t, std::size_t>> r(un);
        const std::size_t base = dim / un, rem = dim % un;
        for (std::size_t i = 0; i < un; ++i) r[i] = {i * base + std::min(i, rem), base + (i < rem ? 1 : 0)};
        return r;
    };
    const auto rz = runs(dims.depth), ry = runs(dims.height), rx = runs(dims.width);

    std::vector<BoxMask> boxes;
    boxes.reserve(un * un * un);
    for (std::size_t iz = 0; iz < un; ++iz)
        for (std::size_t iy = 0; iy < un; ++iy)
            for (std::size_t ix = 0; ix < un; ++ix)
                boxes.push_back(BoxMask{{rz[iz].first, ry[iy].first, rx[ix].first},
                                        {rz[iz].second, ry[iy].second, rx[ix].second}});
    return boxes;
}

inline PatchIndex grid_index(std::size_t linear, int n)
{
    const int l = static_cast<int>(linear);
    return PatchIndex{l % n, (l / n) % n, l / (n * n)};
}

inline std::vector<Subpatch> partition_grid(const Volume& v, int n)
{
    auto boxes = grid_boxes(v.dims(), n);
    std::vector<Subpatch> out;
    out.reserve(boxes.size());
    for (std::size_t i = 0; i < boxes.size(); ++i) out.push_back({grid_index(i, n), boxes[i], crop(v, boxes[i])});
    return out;
}

/// Centred box covering the given fraction of each axis (round half up, at
/// least one voxel).
inline BoxMask central_mask(const Dims& dims, std::array<double, 3> fractions)
{
    for (double f : fractions) require(f > 0.0 && f <= 1.0, "mask fractions must lie in (0, 1]");
    auto ext = [](std::size_t dim, double f) {
        auto e = static_cast<std::size_t>(std::floor(f * static_cast<double>(dim) + 0.5));
        return std::clamp<std::size_t>(e, 1, dim);
    };
    Dims e{ext(dims.depth, fractions[0]), ext(dims.height, fractions[1]), ext(dims.width, fractions[2])};
    return BoxMask{{(dims.depth - e.depth) / 2, (dims.height - e.height) / 2, (dims.width - e.width) / 2}, e};
}

inline Volume apply_mask_zero(const Volume& v, const BoxMask& m)
{
    if (!m.fits(v.dims())) throw ValidationError("mask out of bounds for volume " + to_string(v.dims()));
    Volume out = v;
    for (std::size_t z = m.origin.z; z < m.origin.z + m.extent.depth; ++z)
        for (std::size_t y = m.origin.y; y < m.origin.y + m.extent.height; ++y) {
            float* row = &out.voxels()[out.index(z, y, m.origin.x)];
            std::fill(row, row + m.extent.width, 0.0f);
        }
    return out;
}

/// Elementwise difference v - persona.
inline Volume residual(const Volume& v, const Volume& persona)
{
    if (!(v.dims() == persona.dims()))
        throw ValidationError("residual: dim mismatch " + to_string(v.dims()) + " vs " + to_string(persona.dims()));
    Volume out(v.dims());
    auto a = v.voxels();
    auto b = persona.voxels();
    auto o = out.voxels();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = a[i] - b[i];
    return out;
}

} // namespace rfp
