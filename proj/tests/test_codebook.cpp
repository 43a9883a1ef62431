#include <gtest/gtest.h>

#include "oigs/codebook.hpp"
#include "oigs/instance_train.hpp"
#include "oigs/synth.hpp"
#include "oracles.hpp"

using namespace oigs;

namespace {

// Well separated blobs in `dim` dimensions, `per` points each, returned with their true labels.
Eigen::MatrixXd blobs(oracle::Rng& rng, int k, int per, int dim, std::vector<std::uint32_t>* truth) {
    Eigen::MatrixXd pts(k * per, dim);
    std::normal_distribution<double> n;
    for (int c = 0; c < k; ++c) {
        Eigen::RowVectorXd center(dim);
        for (int d = 0; d < dim; ++d) center(d) = 10.0 * n(rng);
        center(c % dim) += 40.0 * (c + 1);
        for (int i = 0; i < per; ++i) {
            for (int d = 0; d < dim; ++d) pts(c * per + i, d) = center(d) + 0.1 * n(rng);
            if (truth) truth->push_back(std::uint32_t(c));
        }
    }
    return pts;
}

const SynthOutput& trained_two_objects() {
    static const SynthOutput out = [] {
        SynthConfig sc;
        sc.n_objects = 2;
        sc.seed = 0;
        auto syn = generate(sc);
        TrainConfig tc;
        syn.scene = train(syn.scene, syn.views, syn.rasters, tc).scene;
        return syn;
    }();
    return out;
}

} // namespace

TEST(KMeans, RecoversSeparatedBlobs) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        oracle::Rng rng(seed);
        std::vector<std::uint32_t> truth;
        const auto pts = blobs(rng, 4, 25, 6, &truth);
        const auto r = kmeans(pts, 4, seed);
        EXPECT_DOUBLE_EQ(oracle::adjusted_rand(r.assignment, truth), 1.0);
    }
}

TEST(KMeans, TraceIsMonotoneAndAssignmentsNearest) {
    oracle::Rng rng(12);
    for (int trial = 0; trial < 10; ++trial) {
        Eigen::MatrixXd pts(60, 3);
        for (Eigen::Index i = 0; i < pts.size(); ++i) pts(i) = oracle::uniform(rng, -1, 1);
        const auto r = kmeans(pts, 5, std::uint64_t(trial));
        for (std::size_t i = 1; i < r.trace.size(); ++i) EXPECT_LE(r.trace[i], r.trace[i - 1] + 1e-12);
        for (Eigen::Index i = 0; i < pts.rows(); ++i) {
            const double own = (pts.row(i) - r.centers.row(r.assignment[i])).squaredNorm();
            for (Eigen::Index c = 0; c < r.centers.rows(); ++c)
                EXPECT_LE(own, (pts.row(i) - r.centers.row(c)).squaredNorm());
        }
    }
}

TEST(KMeans, EdgeCases) {
    Eigen::MatrixXd pts(4, 2);
    pts << 0, 0, 1, 0, 0, 1, 1, 1;
    const auto all = kmeans(pts, 4, 1);
    EXPECT_EQ(all.trace.back(), 0.0);
    const auto one = kmeans(pts, 1, 1);
    EXPECT_NEAR(one.centers(0, 0), 0.5, 1e-15);
    EXPECT_NEAR(one.centers(0, 1), 0.5, 1e-15);

    const Eigen::MatrixXd same = Eigen::MatrixXd::Ones(5, 2);
    const auto dup = kmeans(same, 3, 0);
    for (auto a : dup.assignment) EXPECT_EQ(a, 0u);
}

TEST(KMeans, Errors) {
    Eigen::MatrixXd pts = Eigen::MatrixXd::Zero(3, 2);
    EXPECT_THROW(kmeans(pts, 4, 0), Error);
    EXPECT_THROW(kmeans(pts, 0, 0), Error);
    EXPECT_THROW(kmeans(Eigen::MatrixXd(0, 2), 1, 0), Error);
    pts(1, 1) = std::numeric_limits<double>::quiet_NaN();
    try {
        kmeans(pts, 1, 0);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), "non_finite");
    }
}

TEST(KMeans, Deterministic) {
    oracle::Rng rng(3);
    const auto pts = blobs(rng, 3, 20, 4, nullptr);
    const auto a = kmeans(pts, 3, 77), b = kmeans(pts, 3, 77);
    EXPECT_EQ(a.assignment, b.assignment);
    EXPECT_EQ(a.trace, b.trace);
}

TEST(Percentile, Interpolates) {
    EXPECT_DOUBLE_EQ(percentile({1, 2, 3, 4, 5}, 0.5), 3.0);
    EXPECT_DOUBLE_EQ(percentile({0, 10}, 0.99), 9.9);
    EXPECT_DOUBLE_EQ(feature_scale(Eigen::MatrixXd::Zero(3, 6), false), 1.0);
}

TEST(Codebook, PositionWeightSplitsIdenticalFeatures) {
    std::vector<Gaussian> gs;
    for (int i = 0; i < 10; ++i) {
        Gaussian g;
        g.position = {i < 5 ? 0.0f : 5.0f, 0.0f, 0.0f};
        g.scale = {0.1f, 0.1f, 0.1f};
        g.opacity = 0.5f;
        g.instance_feature = Feature6f{1, 0, 0, 0, 0, 0};
        gs.push_back(g);
    }
    const auto scene = make_scene(gs);
    const auto apart = build_codebook(scene, 2, 1, 1.0, 0);
    for (int i = 1; i < 5; ++i) EXPECT_EQ(apart.coarse_index[i], apart.coarse_index[0]);
    for (int i = 5; i < 10; ++i) EXPECT_NE(apart.coarse_index[i], apart.coarse_index[0]);
    const auto together = build_codebook(scene, 2, 1, 0.0, 0);
    for (int i = 1; i < 10; ++i) EXPECT_EQ(together.coarse_index[i], together.coarse_index[0]);
}

TEST(Codebook, ShapesAndSmallCells) {
    oracle::Rng rng(5);
    const auto scene = oracle::random_scene(rng, 12);
    const auto cb = build_codebook(scene, 40, 3, 1.0, 0);
    EXPECT_EQ(cb.k1, 12);
    EXPECT_EQ(check_codebook(cb, scene.size()), "");
    // One gaussian per cell: each fine center is that gaussian's feature.
    const Eigen::MatrixXd f = feature_matrix(scene);
    const auto targets = cb.center_payloads();
    EXPECT_LT((targets - f.cast<float>().cast<double>()).cwiseAbs().maxCoeff(), 1e-6);
    EXPECT_THROW(build_codebook(oracle::random_scene(rng, 3, false), 2, 2, 1.0, 0), Error);
}

TEST(Codebook, InstancesArePureOnTrainedSynth) {
    const auto& syn = trained_two_objects();
    const auto cb = build_codebook(syn.scene, 8, 4, 1.0, 0);
    for (const auto& members : cb.members()) {
        if (members.empty()) continue;
        std::vector<std::size_t> count(2, 0);
        for (auto g : members) ++count[*syn.scene.gaussians[g].gt_label];
        EXPECT_GE(double(std::max(count[0], count[1])) / double(members.size()), 0.95);
    }
}

TEST(Codebook, FileRoundTrip) {
    oracle::Rng rng(6);
    const auto scene = oracle::random_scene(rng, 30);
    const auto cb = build_codebook(scene, 4, 3, 0.5, 2);
    const auto bytes = encode_codebook(cb);
    EXPECT_EQ(decode_codebook(bytes, "m"), cb);
    auto bad = bytes;
    bad[0] ^= 1;
    EXPECT_THROW(decode_codebook(bad, "m"), Error);
    auto cut = bytes;
    cut.pop_back();
    EXPECT_THROW(decode_codebook(cut, "m"), Error);
}

TEST(LossLp, SinglePixelExample) {
    BlendRecord rec{1, 1, {0, 1}, {{0, 0.5}}};
    Eigen::MatrixXd f = Eigen::MatrixXd::Zero(1, 6), t = f;
    f(0, 0) = 2.0;
    f(0, 1) = -4.0;
    Eigen::MatrixXd g;
    const std::vector<BlendRecord> recs{rec};
    EXPECT_DOUBLE_EQ(loss_lp(recs, f, t, &g), 3.0);
    EXPECT_DOUBLE_EQ(g(0, 0), 0.5);
    EXPECT_DOUBLE_EQ(g(0, 1), -0.5);
    EXPECT_EQ(g(0, 2), 0.0);
    EXPECT_EQ(loss_lp(recs, t, t), 0.0);
}

TEST(Refine, LossDecreasesAndCentersStayFixed) {
    const auto& syn = trained_two_objects();
    const auto cb = build_codebook(syn.scene, 8, 4, 1.0, 0);
    const auto r = refine_lp(syn.scene, cb, syn.views, RefineConfig{});
    ASSERT_EQ(r.trace.size(), 201u);
    EXPECT_LT(r.trace.back(), r.trace.front());
    EXPECT_TRUE(r.codebook.fine_centers.isApprox(cb.fine_centers, 0.0));
    EXPECT_EQ(r.codebook.coarse_index, cb.coarse_index);
    EXPECT_EQ(check_codebook(r.codebook, r.scene.size()), "");
}

TEST(Refine, RefreshKeepsCoarseCell) {
    oracle::Rng rng(9);
    const auto scene = oracle::random_scene(rng, 40);
    auto cb = build_codebook(scene, 3, 4, 1.0, 1);
    const auto coarse = cb.coarse_index;
    Eigen::MatrixXd f = feature_matrix(scene);
    f += oracle::random_payloads(rng, scene.size(), 6);
    refresh_assignment(cb, f);
    EXPECT_EQ(cb.coarse_index, coarse);
    EXPECT_EQ(check_codebook(cb, scene.size()), "");
}
