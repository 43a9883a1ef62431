#include <map>

#include <gtest/gtest.h>

#include "oigs/association.hpp"
#include "oigs/instance_train.hpp"
#include "oigs/synth.hpp"
#include "oracles.hpp"

using namespace oigs;

TEST(Iou, Examples) {
    const std::vector<std::uint8_t> a{1, 1, 0, 0}, b{0, 1, 1, 0}, z{0, 0, 0, 0};
    EXPECT_DOUBLE_EQ(iou(a, a), 1.0);
    EXPECT_DOUBLE_EQ(iou(a, b), 1.0 / 3.0);
    EXPECT_DOUBLE_EQ(iou(a, std::vector<std::uint8_t>{0, 0, 1, 1}), 0.0);
    EXPECT_DOUBLE_EQ(iou(z, z), 0.0);
    EXPECT_THROW(iou(a, std::vector<std::uint8_t>{1}), Error);
}

TEST(Iou, SymmetricAndBounded) {
    oracle::Rng rng(1);
    for (int t = 0; t < 100; ++t) {
        std::vector<std::uint8_t> a(20), b(20);
        for (int i = 0; i < 20; ++i) {
            a[i] = std::uint8_t(rng() % 2);
            b[i] = std::uint8_t(rng() % 2);
        }
        EXPECT_EQ(iou(a, b), iou(b, a));
        EXPECT_GE(iou(a, b), 0.0);
        EXPECT_LE(iou(a, b), 1.0);
    }
}

TEST(Associate, PicksBestOverlappingMask) {
    // One opaque blob in the middle of a 16x16 view. Mask 2 covers it, mask 1 only a corner.
    Gaussian g;
    g.position = {0, 0, 2};
    g.scale = {0.3f, 0.3f, 0.3f};
    g.opacity = 0.95f;
    g.instance_feature = Feature6f{1, 0, 0, 0, 0, 0};
    const auto scene = make_scene({g});
    const auto view = oracle::front_camera(0, 16, 16);
    const auto sil = binarize_alpha(render_instance_map(scene, view, std::vector<std::uint32_t>{0}), 0.5);
    InstanceMaskRaster r{0, 16, 16, std::vector<std::uint32_t>(256, 0)};
    for (std::size_t p = 0; p < 256; ++p) r.labels[p] = sil[p] ? 2 : 0;
    for (int y = 0; y < 3; ++y)
        for (int x = 0; x < 3; ++x) r.labels[std::size_t(y) * 16 + x] = 1;

    const auto cb = build_codebook(scene, 1, 1, 1.0, 0);
    const auto table = associate(scene, cb, {view}, {r});
    ASSERT_EQ(table.entries.size(), 1u);
    EXPECT_EQ(table.entries[0].mask_id, 2u);
    EXPECT_DOUBLE_EQ(table.entries[0].iou, 1.0);
    EXPECT_TRUE(table.unassociated.empty());

    InstanceMaskRaster far{0, 16, 16, std::vector<std::uint32_t>(256, 0)};
    far.labels[0] = 1;
    const auto none = associate(scene, cb, {view}, {far});
    EXPECT_TRUE(none.entries.empty());
    EXPECT_EQ(none.unassociated, std::vector<std::uint32_t>{0});
}

TEST(Associate, CleanSynthBindsToOwnObject) {
    SynthConfig sc;
    sc.n_objects = 3;
    sc.seed = 2;
    auto syn = generate(sc);
    syn.scene = train(syn.scene, syn.views, syn.rasters, TrainConfig{}).scene;
    const auto cb = build_codebook(syn.scene, 8, 4, 1.0, 0);
    const auto table = associate(syn.scene, cb, syn.views, syn.rasters);
    ASSERT_FALSE(table.entries.empty());
    const auto members = cb.members();
    for (const auto& e : table.entries) {
        std::map<std::uint32_t, int> votes;
        for (auto g : members[e.instance_id]) ++votes[*syn.scene.gaussians[g].gt_label];
        const auto majority = std::max_element(votes.begin(), votes.end(), [](auto& a, auto& b) {
                                  return a.second < b.second;
                              })->first;
        const auto* truth = syn.truth.find(e.view_id, e.mask_id);
        ASSERT_NE(truth, nullptr);
        EXPECT_EQ(truth->object_id, majority) << "instance " << e.instance_id << " view " << e.view_id;
        EXPECT_GT(e.score, 0.0);
        EXPECT_GE(e.iou, 0.05);
    }
    for (std::size_t i = 1; i < table.entries.size(); ++i) {
        const auto& a = table.entries[i - 1];
        const auto& b = table.entries[i];
        EXPECT_TRUE(a.instance_id < b.instance_id || (a.instance_id == b.instance_id && a.view_id < b.view_id));
    }
}

TEST(Associate, TableRoundTrip) {
    AssociationTable t;
    t.entries.push_back({3, 1, 2, 0.75, 0.5, 0.375});
    t.entries.push_back({4, 0, 1, 0.25, 1.0, 0.25});
    t.unassociated = {7, 9};
    const auto back = parse_associations(encode_associations(t), "m");
    EXPECT_EQ(back.entries, t.entries);
    EXPECT_EQ(back.unassociated, t.unassociated);
    EXPECT_THROW(parse_associations("h\n1 2\n", "m"), Error);
}

TEST(Associate, DomainNames) {
    for (auto d : {AveragingDomain::union_, AveragingDomain::intersection, AveragingDomain::image})
        EXPECT_EQ(parse_averaging_domain(to_string(d)), d);
    EXPECT_THROW(parse_averaging_domain("nope"), Error);
}
