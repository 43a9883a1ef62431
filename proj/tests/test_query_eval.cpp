#include <gtest/gtest.h>

#include "oigs/query_eval.hpp"
#include "oracles.hpp"

using namespace oigs;

namespace {

// Codebook with one gaussian per instance.
Codebook identity_codebook(std::size_t n) {
    Codebook cb;
    cb.k1 = int(n);
    cb.k2 = 1;
    cb.coarse_centers = Eigen::MatrixXf::Zero(Eigen::Index(n), 9);
    cb.fine_centers = Eigen::MatrixXf::Zero(Eigen::Index(n), 6);
    for (std::size_t i = 0; i < n; ++i) {
        cb.coarse_index.push_back(std::uint16_t(i));
        cb.fine_index.push_back(0);
    }
    return cb;
}

MaskEmbeddingSet text_rows(const Eigen::MatrixXf& rows) { return {0, EmbeddingKind::text, rows}; }

} // namespace

TEST(Classify, IdentityEmbeddingsLabelThemselves) {
    SemanticTable t;
    t.rows = Eigen::MatrixXf::Identity(4, 4);
    t.flagged.assign(4, false);
    const auto r = classify_gaussians(t, identity_codebook(4), text_rows(Eigen::MatrixXf::Identity(4, 4)));
    EXPECT_EQ(r.gaussian_label, (std::vector<int>{0, 1, 2, 3}));
    for (double s : r.instance_similarity) EXPECT_DOUBLE_EQ(s, 1.0);
}

TEST(Classify, ScalingInvariant) {
    oracle::Rng rng(1);
    SemanticTable t;
    t.rows = Eigen::MatrixXf::Random(6, 5);
    t.flagged.assign(6, false);
    const Eigen::MatrixXf text = Eigen::MatrixXf::Random(3, 5);
    const auto a = classify_gaussians(t, identity_codebook(6), text_rows(text));
    SemanticTable scaled = t;
    scaled.rows *= 7.5f;
    const auto b = classify_gaussians(scaled, identity_codebook(6), text_rows(text * 0.25f));
    EXPECT_EQ(a.gaussian_label, b.gaussian_label);
}

TEST(Classify, FlaggedInstancesAreUnassigned) {
    SemanticTable t;
    t.rows = Eigen::MatrixXf::Identity(2, 2);
    t.rows.row(1).setZero();
    t.flagged = {false, true};
    const auto r = classify_gaussians(t, identity_codebook(2), text_rows(Eigen::MatrixXf::Identity(2, 2)));
    EXPECT_EQ(r.gaussian_label[1], kUnassigned);
}

TEST(Classify, Errors) {
    SemanticTable t;
    t.rows = Eigen::MatrixXf::Identity(2, 2);
    t.flagged.assign(2, false);
    EXPECT_THROW(classify_gaussians(t, identity_codebook(2), text_rows(Eigen::MatrixXf::Identity(2, 3))), Error);
    EXPECT_THROW(classify_gaussians(t, identity_codebook(3), text_rows(Eigen::MatrixXf::Identity(2, 2))), Error);
    EXPECT_THROW(classify_gaussians(t, identity_codebook(2), text_rows(Eigen::MatrixXf::Zero(2, 2))), Error);
}

TEST(PointMetrics, PerfectPrediction) {
    const std::vector<int> pred{0, 1, 2, 3, 0, 1};
    const std::vector<std::uint32_t> gt{0, 1, 2, 3, 0, 1};
    const auto r = eval_pointcloud(pred, gt, 4);
    EXPECT_DOUBLE_EQ(r.miou, 1.0);
    EXPECT_DOUBLE_EQ(r.macc, 1.0);
}

TEST(PointMetrics, ConstantPrediction) {
    // Two balanced classes, everything predicted as class 0.
    const std::vector<int> pred(8, 0);
    const std::vector<std::uint32_t> gt{0, 0, 0, 0, 1, 1, 1, 1};
    const auto r = eval_pointcloud(pred, gt, 2);
    EXPECT_DOUBLE_EQ(r.miou, 0.25);
    EXPECT_DOUBLE_EQ(r.macc, 0.5);
    EXPECT_DOUBLE_EQ(eval_pointcloud(pred, gt, 2, AccuracyMode::overall).macc, 0.5);
}

TEST(PointMetrics, AbsentClassesAreIgnored) {
    const std::vector<int> pred{0, 0, 1};
    const std::vector<std::uint32_t> gt{0, 0, 1};
    EXPECT_DOUBLE_EQ(eval_pointcloud(pred, gt, 5).miou, 1.0);
}

TEST(PointMetrics, UnassignedCountsAsMiss) {
    const std::vector<int> pred{kUnassigned, 0};
    const std::vector<std::uint32_t> gt{0, 0};
    const auto r = eval_pointcloud(pred, gt, 1);
    EXPECT_DOUBLE_EQ(r.miou, 0.5);
    EXPECT_EQ(r.false_positive[0], 0u);
}

TEST(PointMetrics, LabelPermutationSymmetry) {
    oracle::Rng rng(3);
    for (int t = 0; t < 30; ++t) {
        std::vector<int> pred(50);
        std::vector<std::uint32_t> gt(50);
        for (int i = 0; i < 50; ++i) {
            gt[i] = std::uint32_t(rng() % 4);
            pred[i] = int(rng() % 4);
        }
        const std::vector<int> perm{2, 0, 3, 1};
        std::vector<int> ppred(50);
        std::vector<std::uint32_t> pgt(50);
        for (int i = 0; i < 50; ++i) {
            ppred[i] = perm[pred[i]];
            pgt[i] = std::uint32_t(perm[gt[i]]);
        }
        const auto a = eval_pointcloud(pred, gt, 4), b = eval_pointcloud(ppred, pgt, 4);
        EXPECT_NEAR(a.miou, b.miou, 1e-12);
        EXPECT_NEAR(a.macc, b.macc, 1e-12);
        EXPECT_GE(a.miou, 0.0);
        EXPECT_LE(a.miou, 1.0);
    }
}

TEST(PointMetrics, Errors) {
    const std::vector<int> pred{0};
    const std::vector<std::uint32_t> gt{0, 1};
    EXPECT_THROW(eval_pointcloud(pred, gt, 2), Error);
    EXPECT_THROW(eval_pointcloud(pred, std::vector<std::uint32_t>{5}, 2), Error);
    EXPECT_EQ(parse_accuracy_mode("overall"), AccuracyMode::overall);
    EXPECT_THROW(parse_accuracy_mode("x"), Error);
}

TEST(Selection, BothEmptyIsOne) {
    const std::vector<std::uint8_t> z(9, 0), a{1, 0, 0, 0, 0, 0, 0, 0, 0};
    EXPECT_DOUBLE_EQ(selection_iou(z, z), 1.0);
    EXPECT_DOUBLE_EQ(selection_iou(a, z), 0.0);
    EXPECT_DOUBLE_EQ(selection_iou(a, a), 1.0);
}

TEST(Selection, RendersLabeledGaussians) {
    Gaussian g;
    g.position = {0, 0, 2};
    g.scale = {0.3f, 0.3f, 0.3f};
    g.opacity = 0.95f;
    const auto scene = make_scene({g});
    const auto view = oracle::front_camera(0, 16, 16);
    QueryResult q;
    q.gaussian_label = {1};
    const std::vector<std::uint8_t> empty(256, 0);
    const auto none = select_and_render(0, q, scene, view, empty);
    EXPECT_DOUBLE_EQ(none.iou, 1.0);
    const auto one = select_and_render(1, q, scene, view, empty);
    EXPECT_DOUBLE_EQ(one.iou, 0.0);
    const auto self = select_and_render(1, q, scene, view, one.mask);
    EXPECT_DOUBLE_EQ(self.iou, 1.0);
}

TEST(Selection, Summary) {
    const auto r = summarize_2d({{0, 0, 0.2}, {1, 0, 0.3}, {2, 0, 0.7}, {3, 0, 1.0}});
    EXPECT_DOUBLE_EQ(r.miou, 0.55);
    EXPECT_DOUBLE_EQ(r.acc_25, 0.75);
    EXPECT_DOUBLE_EQ(r.acc_50, 0.5);
}
