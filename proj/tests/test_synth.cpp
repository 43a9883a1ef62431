#include <cmath>

#include <gtest/gtest.h>

#include "oigs/scene_io.hpp"
#include "oigs/synth.hpp"

using namespace oigs;

namespace {

SynthConfig small(std::uint64_t seed) {
    SynthConfig c;
    c.seed = seed;
    c.n_objects = 3;
    c.gaussians_per_object = 16;
    c.n_views = 4;
    c.image_size = 32;
    c.embed_dim = 8;
    return c;
}

} // namespace

TEST(Synth, OutputsAreConsistent) {
    const auto out = generate(small(1));
    EXPECT_TRUE(validate_scene(out.scene).empty());
    ASSERT_EQ(out.views.size(), 4u);
    ASSERT_EQ(out.rasters.size(), 4u);
    for (std::size_t v = 0; v < out.views.size(); ++v) {
        EXPECT_EQ(check_camera(out.views[v]), "");
        EXPECT_EQ(check_raster(out.rasters[v], &out.views[v]), "");
        EXPECT_EQ(check_embeddings_against_raster(out.local[v], out.rasters[v]), "");
        EXPECT_EQ(check_embeddings_against_raster(out.context[v], out.rasters[v]), "");
    }
    for (const auto& g : out.scene.gaussians) {
        ASSERT_TRUE(g.gt_label.has_value());
        EXPECT_LT(*g.gt_label, 3u);
    }
    EXPECT_EQ(out.text.count(), 3);
}

TEST(Synth, MaskTruthMatchesRaster) {
    const auto out = generate(small(2));
    for (const auto& m : out.truth.masks) {
        const auto& r = out.rasters[m.view_id];
        std::size_t n = 0;
        for (auto l : r.labels) n += l == m.mask_id ? 1 : 0;
        EXPECT_EQ(n, m.pixels);
    }
}

TEST(Synth, SingleObjectNoiselessEmbeddingsAreExact) {
    auto c = small(3);
    c.n_objects = 1;
    c.embed_noise_sigma = 0.0;
    const auto out = generate(c);
    for (std::size_t v = 0; v < out.local.size(); ++v) {
        for (Eigen::Index m = 0; m < out.local[v].count(); ++m) {
            EXPECT_EQ(out.local[v].rows.row(m), out.text.rows.row(0));
            EXPECT_EQ(out.context[v].rows.row(m), out.text.rows.row(0));
        }
    }
}

TEST(Synth, NoiselessEmbeddingsHaveUnitCosineWithOwnClass) {
    auto c = small(4);
    c.embed_noise_sigma = 0.0;
    const auto out = generate(c);
    for (const auto& m : out.truth.masks) {
        const Eigen::VectorXf e = out.local[m.view_id].rows.row(m.mask_id - 1).transpose();
        const Eigen::VectorXf t = out.text.rows.row(m.object_id).transpose();
        EXPECT_FLOAT_EQ(e.dot(t) / (e.norm() * t.norm()), 1.0f);
    }
}

TEST(Synth, CorruptionCountIsFloorOfFraction) {
    auto c = small(5);
    c.corrupt_view_fraction = 0.3;
    const auto out = generate(c);
    const auto pairs = out.truth.masks.size();
    EXPECT_EQ(out.truth.corrupted_count(), std::size_t(std::floor(0.3 * double(pairs))));
    for (const auto& m : out.truth.masks) {
        if (m.corrupted) {
            EXPECT_NE(m.embedded_object, m.object_id);
        } else {
            EXPECT_EQ(m.embedded_object, m.object_id);
        }
    }
}

TEST(Synth, Deterministic) {
    const auto a = generate(small(6));
    const auto b = generate(small(6));
    EXPECT_EQ(encode_scene(a.scene), encode_scene(b.scene));
    EXPECT_EQ(a.rasters, b.rasters);
    EXPECT_EQ(encode_gt_manifest(a.truth), encode_gt_manifest(b.truth));
    for (std::size_t v = 0; v < a.local.size(); ++v) EXPECT_EQ(a.local[v], b.local[v]);
    const auto c = generate(small(7));
    EXPECT_NE(encode_scene(a.scene), encode_scene(c.scene));
}

TEST(Synth, ManifestRoundTrip) {
    auto c = small(8);
    c.corrupt_view_fraction = 0.5;
    const auto out = generate(c);
    const auto text = encode_gt_manifest(out.truth);
    const auto back = parse_gt_manifest(text);
    EXPECT_EQ(encode_gt_manifest(back), text);
    EXPECT_EQ(back.labels, out.truth.labels);
}

TEST(Synth, InvalidConfig) {
    auto c = small(0);
    c.embed_dim = 2;
    EXPECT_THROW(generate(c), Error);
    c = small(0);
    c.n_objects = 1;
    c.corrupt_view_fraction = 0.2;
    EXPECT_THROW(generate(c), Error);
}
