#include <gtest/gtest.h>

#include <numbers>

#include "oracles.hpp"
#include "rfp/radiomics.hpp"
#include "rfp/random.hpp"

using namespace rfp;

namespace {

Volume from_values(Dims d, const std::vector<float>& v) { return Volume(d, v); }

Volume random_patch(Rng& rng, Dims d)
{
    Volume v(d);
    for (auto& x : v.voxels()) x = float(uniform(rng, -3.0, 5.0));
    return v;
}

oracle::Mask to_oracle(const VoxelMask& m)
{
    oracle::Mask o(m.dims.depth, std::vector<std::vector<bool>>(m.dims.height, std::vector<bool>(m.dims.width)));
    for (std::size_t z = 0; z < m.dims.depth; ++z)
        for (std::size_t y = 0; y < m.dims.height; ++y)
            for (std::size_t x = 0; x < m.dims.width; ++x) o[z][y][x] = m.at(z, y, x);
    return o;
}

VoxelMask random_mask(Rng& rng, Dims d, double p)
{
    VoxelMask m{d, std::vector<std::uint8_t>(d.count(), 0)};
    for (auto& b : m.on) b = uniform01(rng) < p ? 1 : 0;
    if (m.count() == 0) m.on[0] = 1;
    return m;
}

std::size_t fi(std::string_view name) { return catalogue_index(name); }

} // namespace

TEST(Catalogue, ThirtyEightNames)
{
    EXPECT_EQ(kFeatureCatalogue.size(), 38u);
    EXPECT_EQ(kFeatureCatalogue[0], "Energy");
    EXPECT_EQ(kFeatureCatalogue[18], "Uniformity");
    EXPECT_EQ(kFeatureCatalogue[19], "VoxelVolume");
    EXPECT_EQ(kFeatureCatalogue[35], "SpatialX");
    EXPECT_THROW(catalogue_index("GLCM"), ValidationError);
}

TEST(FirstOrder, ConstantPatch)
{
    const auto f = first_order_features(Volume(Dims{2, 2, 2}, 5.0f));
    EXPECT_EQ(f[fi("Mean")], 5.0);
    EXPECT_EQ(f[fi("Variance")], 0.0);
    EXPECT_EQ(f[fi("Entropy")], 0.0);
    EXPECT_EQ(f[fi("Uniformity")], 1.0);
    EXPECT_EQ(f[fi("Energy")], 200.0);
    EXPECT_EQ(f[fi("TotalEnergy")], 200.0);
    EXPECT_EQ(f[fi("Skewness")], 0.0);
    EXPECT_EQ(f[fi("Kurtosis")], 0.0);
}

TEST(FirstOrder, FourValues)
{
    const auto f = first_order_features(from_values(Dims{1, 1, 4}, {3, 1, 4, 2}));
    EXPECT_DOUBLE_EQ(f[fi("Median")], 2.5);
    EXPECT_DOUBLE_EQ(f[fi("InterquartileRange")], 1.5);
    EXPECT_DOUBLE_EQ(f[fi("Range")], 3.0);
}

TEST(FirstOrder, TwoValued)
{
    const auto f = first_order_features(from_values(Dims{1, 2, 2}, {0, 1, 0, 1}));
    EXPECT_DOUBLE_EQ(f[fi("Uniformity")], 0.5);
    EXPECT_DOUBLE_EQ(f[fi("Entropy")], 1.0);
}

TEST(FirstOrder, MatchesBruteForceOracle)
{
    Rng rng = make_rng(17);
    for (int trial = 0; trial < 100; ++trial) {
        const Dims d{std::size_t(1 + trial % 6), std::size_t(2 + trial % 5), std::size_t(2 + (trial / 6) % 5)};
        const Volume p = random_patch(rng, d);
        const auto got = first_order_features(p);
        const auto want = oracle::first_order(std::vector<double>(p.voxels().begin(), p.voxels().end()));
        for (std::size_t k = 0; k < 19; ++k)
            EXPECT_LT(oracle::rel_err(got[k], want[k]), 1e-9) << kFeatureCatalogue[k] << " trial " << trial;
    }
}

TEST(FirstOrder, TranslationBehaviour)
{
    Rng rng = make_rng(3);
    // dyadic values so that +b is exact in float
    Volume p(Dims{3, 3, 3});
    for (auto& x : p.voxels()) x = float(std::floor(uniform(rng, 0, 64)) / 8.0);
    Volume q = p;
    for (auto& x : q.voxels()) x += 2.0f;
    const auto a = first_order_features(p), b = first_order_features(q);
    for (auto name : {"Mean", "Median", "Minimum", "Maximum", "Percentile10", "Percentile90"})
        EXPECT_NEAR(b[fi(name)], a[fi(name)] + 2.0, 1e-12) << name;
    for (auto name : {"Variance", "InterquartileRange", "Entropy", "Uniformity"})
        EXPECT_NEAR(b[fi(name)], a[fi(name)], 1e-12) << name;
}

TEST(FirstOrder, PermutationInvariant)
{
    Rng rng = make_rng(4);
    Volume p = random_patch(rng, Dims{3, 4, 5});
    const auto a = first_order_features(p);
    std::shuffle(p.voxels().begin(), p.voxels().end(), rng);
    const auto b = first_order_features(p);
    for (std::size_t k = 0; k < 19; ++k) EXPECT_LT(oracle::rel_err(a[k], b[k], 1e-12), 1e-12) << kFeatureCatalogue[k];
}

TEST(Otsu, ConstantAndBimodal)
{
    EXPECT_EQ(foreground_mask(Volume(Dims{2, 3, 4}, 7.0f)).count(), 24u);

    Volume v(Dims{2, 4, 4});
    for (std::size_t z = 0; z < 2; ++z)
        for (std::size_t y = 0; y < 4; ++y)
            for (std::size_t x = 0; x < 4; ++x) v.at(z, y, x) = x < 2 ? 0.0f : 10.0f;
    const auto m = foreground_mask(v);
    for (std::size_t z = 0; z < 2; ++z)
        for (std::size_t y = 0; y < 4; ++y)
            for (std::size_t x = 0; x < 4; ++x) EXPECT_EQ(m.at(z, y, x), x >= 2);
}

TEST(Otsu, MatchesExhaustiveSearch)
{
    Rng rng = make_rng(21);
    for (int trial = 0; trial < 30; ++trial) {
        const Volume p = random_patch(rng, Dims{4, 4, 4});
        const auto vox = p.voxels();
        const auto [mn, mx] = std::minmax_element(vox.begin(), vox.end());
        std::vector<int> bin(vox.size());
        for (std::size_t i = 0; i < vox.size(); ++i)
            bin[i] = std::min(63, int(std::floor((double(vox[i]) - *mn) / (double(*mx) - *mn) * 64)));
        // exhaustive: the split k maximising between-class variance of bin labels, lowest on ties
        int best_k = -1;
        double best = -1;
        for (int k = 1; k < 64; ++k) {
            double n0 = 0, n1 = 0, s0 = 0, s1 = 0;
            for (int b : bin) (b < k ? (n0 += 1, s0 += b) : (n1 += 1, s1 += b));
            if (n0 == 0 || n1 == 0) continue;
            const double d = s0 / n0 - s1 / n1, between = n0 * n1 * d * d;
            if (between > best * (1 + 1e-12)) {
                best = between;
                best_k = k;
            }
        }
        const auto m = foreground_mask(p);
        for (std::size_t i = 0; i < vox.size(); ++i) EXPECT_EQ(m.on[i] != 0, bin[i] >= best_k);
    }
}

TEST(Otsu, AffineInvariant)
{
    Rng rng = make_rng(5);
    Volume p(Dims{4, 4, 4});
    for (auto& x : p.voxels()) x = float(std::floor(uniform(rng, 0, 16)));
    Volume q = p;
    for (auto& x : q.voxels()) x = 4.0f * x + 3.0f;
    EXPECT_EQ(foreground_mask(p).on, foreground_mask(q).on);
}

TEST(Shape, FullCube)
{
    const auto s = shape_features(Volume(Dims{4, 4, 4}, 1.0f));
    EXPECT_EQ(s[fi("VoxelVolume") - 19], 64.0);
    EXPECT_EQ(s[fi("SurfaceArea") - 19], 96.0);
    EXPECT_NEAR(s[fi("Sphericity") - 19], std::cbrt(36 * std::numbers::pi * 64 * 64) / 96, 1e-12);
    EXPECT_NEAR(s[fi("Elongation") - 19], 1.0, 1e-9);
    EXPECT_NEAR(s[fi("Flatness") - 19], 1.0, 1e-9);
    EXPECT_NEAR(s[fi("Maximum3DDiameter") - 19], std::sqrt(27.0), 1e-12);
    EXPECT_EQ(s[fi("BBoxZ") - 19], 4.0);
}

TEST(Shape, SingleVoxel)
{
    VoxelMask m{Dims{3, 3, 3}, std::vector<std::uint8_t>(27, 0)};
    m.on[13] = 1;
    const auto s = shape_features_of_mask(m);
    EXPECT_EQ(s[fi("VoxelVolume") - 19], 1.0);
    EXPECT_EQ(s[fi("SurfaceArea") - 19], 6.0);
    EXPECT_EQ(s[fi("MajorAxisLength") - 19], 0.0);
    EXPECT_EQ(s[fi("Elongation") - 19], 1.0);
    EXPECT_EQ(s[fi("Flatness") - 19], 1.0);
    EXPECT_EQ(s[fi("BBoxZ") - 19], 1.0);
    EXPECT_EQ(s[fi("BBoxY") - 19], 1.0);
    EXPECT_EQ(s[fi("BBoxX") - 19], 1.0);
}

TEST(Shape, FaceCountAndDiameterOracles)
{
    Rng rng = make_rng(8);
    for (int trial = 0; trial < 200; ++trial) {
        const Dims d{std::size_t(1 + trial % 6), std::size_t(1 + (trial / 6) % 6), std::size_t(1 + (trial / 36) % 6)};
        const auto m = random_mask(rng, d, uniform(rng, 0.1, 0.9));
        const auto o = to_oracle(m);
        EXPECT_EQ(exposed_faces(m), oracle::exposed_faces(o));
        EXPECT_NEAR(max_diameter(m), oracle::max_diameter(o), 1e-12);
    }
}

TEST(Shape, DerivedQuantities)
{
    Rng rng = make_rng(12);
    const auto m = random_mask(rng, Dims{5, 5, 5}, 0.5);
    const auto s = shape_features_of_mask(m);
    const double V = s[0], A = s[1], pi = std::numbers::pi;
    EXPECT_NEAR(s[2], A / V, 1e-12);
    EXPECT_NEAR(s[4], V / (std::sqrt(pi) * std::pow(A, 1.5)), 1e-12);
    EXPECT_NEAR(s[5], 36 * pi * V * V / (A * A * A), 1e-12);
    EXPECT_NEAR(s[6] * s[3], 1.0, 1e-12);
    EXPECT_GE(s[7], s[8]);
    EXPECT_GE(s[8], s[9]);
}

TEST(PatchVector, LengthSpatialTail)
{
    Rng rng = make_rng(2);
    const auto f = patch_feature_vector(random_patch(rng, Dims{3, 3, 3}), PatchIndex{1, 0, 2});
    EXPECT_EQ(f.size(), 38u);
    EXPECT_EQ(f[35], 1.0);
    EXPECT_EQ(f[36], 0.0);
    EXPECT_EQ(f[37], 2.0);
}

namespace {

std::array<Volume, 3> random_views(std::uint64_t seed, Dims d)
{
    Rng rng = make_rng(seed);
    return {random_patch(rng, d), random_patch(rng, d), random_patch(rng, d)};
}

} // namespace

TEST(Assemble, Dimensionality)
{
    const auto views = random_views(1, Dims{6, 6, 6});
    const auto personas = random_views(2, Dims{6, 6, 6});
    for (int n : {1, 2, 3}) {
        EXPECT_EQ(assemble_features(views, &personas, n, FeatureMode::path_persona).size(),
                  std::size_t(3 * n * n * n * 2 * 38));
        EXPECT_EQ(assemble_features(views, &personas, n, FeatureMode::residual).size(), std::size_t(3 * n * n * n * 38));
        EXPECT_EQ(assemble_features(views, nullptr, n, FeatureMode::path_only).size(), std::size_t(3 * n * n * n * 38));
    }
    EXPECT_EQ(feature_dimension(2, FeatureMode::path_persona), 1824u);
    EXPECT_EQ(feature_dimension(1, FeatureMode::path_only), 114u);
}

TEST(Assemble, ResidualOfIdenticalPersona)
{
    const auto views = random_views(3, Dims{4, 4, 4});
    const auto fv = assemble_features(views, &views, 2, FeatureMode::residual);
    for (std::size_t i = 0; i < fv.size(); ++i) {
        const auto name = fv.ids[i].name();
        if (name == "Entropy" || name == "Variance") EXPECT_EQ(fv.values[i], 0.0);
        if (name == "Uniformity") EXPECT_EQ(fv.values[i], 1.0);
    }
}

TEST(Assemble, CanonicalOrderAndErrors)
{
    const auto views = random_views(4, Dims{4, 4, 4});
    const auto a = assemble_features(views, &views, 2, FeatureMode::path_persona);
    const auto b = assemble_features(views, &views, 2, FeatureMode::path_persona);
    EXPECT_EQ(a.ids, b.ids);
    EXPECT_EQ(a.values, b.values);
    EXPECT_EQ(a.ids[0].source, Source::path);
    EXPECT_EQ(a.ids[38].source, Source::persona);
    EXPECT_EQ(a.ids[76].patch, (PatchIndex{1, 0, 0}));
    EXPECT_EQ(a.ids[8 * 76].view, View::coronal);
    // path block of the first patch equals the patch vector of that crop
    const auto first = patch_feature_vector(partition_grid(views[0], 2)[0].data, PatchIndex{0, 0, 0});
    for (std::size_t k = 0; k < 38; ++k) EXPECT_EQ(a.values[k], first[k]);

    EXPECT_THROW(assemble_features(views, nullptr, 2, FeatureMode::residual), ValidationError);
    auto bad = views;
    bad[1] = Volume(Dims{4, 4, 5});
    EXPECT_THROW(assemble_features(bad, nullptr, 1, FeatureMode::path_only), ValidationError);
}

TEST(Standardizer, TrainingSetMoments)
{
    std::vector<FeatureVector> train;
    for (std::uint64_t s = 0; s < 6; ++s) train.push_back(assemble_features(random_views(10 + s, Dims{4, 4, 4}), nullptr, 1, FeatureMode::path_only));
    const auto st = fit_standardizer(train);
    const std::size_t n = train[0].size();
    for (std::size_t j = 0; j < n; ++j) {
        double m = 0, v = 0;
        std::vector<double> z;
        for (const auto& fv : train) z.push_back(standardize(fv, st).values[j]);
        for (double x : z) m += x;
        m /= double(z.size());
        for (double x : z) v += (x - m) * (x - m);
        v /= double(z.size());
        if (is_spatial_feature(train[0].ids[j].feature)) {
            EXPECT_EQ(st.mean[j], 0.0);
            EXPECT_EQ(st.std[j], 1.0);
            continue;
        }
        if (st.std[j] > 1e-6) {
            EXPECT_NEAR(m, 0.0, 1e-9);
            EXPECT_NEAR(v, 1.0, 1e-9);
        }
    }
}

TEST(Standardizer, ConstantFeatureAndAffinity)
{
    FeatureVector a, b;
    a.ids = b.ids = canonical_ids(1, FeatureMode::path_only);
    a.values.assign(a.ids.size(), 2.0);
    b.values.assign(b.ids.size(), 2.0);
    b.values[0] = 4.0;
    const auto st = fit_standardizer({a, b});
    EXPECT_EQ(st.std[1], st.epsilon);
    EXPECT_EQ(standardize(a, st).values[1], 0.0);

    FeatureVector c = a;
    for (auto& v : c.values) v *= 3.0;
    const auto za = standardize(a, st).values, zc = standardize(c, st).values;
    const auto z0 = standardize(FeatureVector{a.ids, std::vector<double>(a.size(), 0.0), 1, FeatureMode::path_only}, st).values;
    for (std::size_t j = 0; j < za.size(); ++j) EXPECT_NEAR(zc[j] - z0[j], 3.0 * (za[j] - z0[j]), 1e-9);

    EXPECT_THROW(fit_standardizer({a}), ValidationError);
}

TEST(FeaturesCsv, RoundTripIsExact)
{
    const auto views = random_views(5, Dims{4, 4, 4});
    const auto fv = assemble_features(views, &views, 1, FeatureMode::path_persona);
    std::stringstream ss;
    ss << kFeaturesCsvHeader << '\n';
    write_features_csv_rows(ss, "s0", fv);
    write_features_csv_rows(ss, "s1", fv);
    const auto back = read_features_csv(ss, 1, FeatureMode::path_persona);
    ASSERT_EQ(back.size(), 2u);
    EXPECT_EQ(back[1].first, "s1");
    EXPECT_EQ(back[0].second.values, fv.values);

    std::stringstream bad("subject_id,view\n");
    EXPECT_THROW(read_features_csv(bad, 1, FeatureMode::path_only), FormatError);
}
