#include <cstring>
#include <filesystem>
#include <random>

#include <gtest/gtest.h>

#include "oigs/scene_io.hpp"
#include "oracles.hpp"

using namespace oigs;

namespace {

GaussianScene one_gaussian() {
    Gaussian g;
    g.opacity = 0.5f;
    g.scale = {0.1f, 0.1f, 0.1f};
    return make_scene({g});
}

std::filesystem::path temp_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("oigs_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

template <class F>
std::string error_code(F&& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.code();
    }
    return "";
}

} // namespace

TEST(ValidateScene, ValidSceneHasNoViolations) { EXPECT_TRUE(validate_scene(one_gaussian()).empty()); }

TEST(ValidateScene, ZeroQuaternion) {
    auto s = one_gaussian();
    s.gaussians[0].rotation = {0, 0, 0, 0};
    const auto v = validate_scene(s);
    ASSERT_EQ(v.size(), 1u);
    EXPECT_EQ(v[0].invariant, "quaternion norm");
    EXPECT_EQ(v[0].index, 0u);
}

TEST(ValidateScene, NegativeScale) {
    auto s = one_gaussian();
    s.gaussians[0].scale = {1, -1, 1};
    const auto v = validate_scene(s);
    ASSERT_EQ(v.size(), 1u);
    EXPECT_EQ(v[0].invariant, "scale positivity");
}

TEST(ValidateScene, OpacityBoundsAndMixedOptionals) {
    auto s = one_gaussian();
    s.gaussians.push_back(s.gaussians[0]);
    s.gaussians[1].opacity = 1.0f;
    s.gaussians[1].gt_label = 3;
    const auto v = validate_scene(s);
    ASSERT_EQ(v.size(), 2u);
    EXPECT_EQ(v[0].invariant, "opacity range");
    EXPECT_EQ(v[1].invariant, "optional field consistency");
    EXPECT_EQ(v[1].index, 1u);
}

TEST(ValidateScene, EmptySceneAndBbox) {
    EXPECT_EQ(validate_scene(GaussianScene{}).size(), 1u);
    auto s = one_gaussian();
    s.bbox.max = {-1, -1, -1};
    EXPECT_EQ(validate_scene(s).front().invariant, "bbox containment");
}

TEST(ValidateScene, Pure) {
    oracle::Rng rng(3);
    auto s = oracle::random_scene(rng, 20);
    s.gaussians[4].opacity = 0.0f;
    EXPECT_EQ(validate_scene(s), validate_scene(s));
}

TEST(Camera, Checks) {
    CameraView v = oracle::front_camera(0, 8, 10);
    EXPECT_EQ(check_camera(v), "");
    v.world_to_camera[0] = 2.0;
    EXPECT_NE(check_camera(v), "");
    v = oracle::front_camera(0, 8, 10);
    v.world_to_camera[15] = 2.0;
    EXPECT_NE(check_camera(v), "");
}

TEST(SceneFile, RoundTripIsBitIdentical) {
    oracle::Rng rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        auto s = oracle::random_scene(rng, 1 + int(rng() % 30), trial % 2 == 0);
        if (trial % 3 == 0)
            for (auto& g : s.gaussians) g.gt_label = std::uint32_t(rng() % 7);
        const auto bytes = encode_scene(s);
        EXPECT_EQ(decode_scene(bytes, "mem"), s);
        EXPECT_EQ(encode_scene(decode_scene(bytes, "mem")), bytes);
    }
}

TEST(SceneFile, ThreeGaussiansThroughDisk) {
    oracle::Rng rng(1);
    const auto s = oracle::random_scene(rng, 3);
    const auto dir = temp_dir("scene");
    write_scene(s, dir / "s.oigs");
    EXPECT_EQ(read_scene(dir / "s.oigs"), s);
}

TEST(SceneFile, Errors) {
    auto bytes = encode_scene(one_gaussian());
    auto bad = bytes;
    bad[0] = 'X';
    EXPECT_EQ(error_code([&] { decode_scene(bad, "m"); }), "bad_magic");
    bad = bytes;
    bad[4] = 2;
    EXPECT_EQ(error_code([&] { decode_scene(bad, "m"); }), "bad_version");

    oracle::Rng rng(2);
    auto ten = encode_scene(oracle::random_scene(rng, 10));
    ten.resize(ten.size() - 10);
    EXPECT_EQ(error_code([&] { decode_scene(ten, "m"); }), "truncated");

    bytes.push_back(0);
    EXPECT_EQ(error_code([&] { decode_scene(bytes, "m"); }), "trailing_data");

    auto s = one_gaussian();
    s.gaussians[0].opacity = 2.0f;
    EXPECT_EQ(error_code([&] { encode_scene(s); }), "invalid_scene");
}

TEST(SceneFile, InvalidRecordNamesIndex) {
    oracle::Rng rng(5);
    auto bytes = encode_scene(oracle::random_scene(rng, 4, false));
    // Opacity of record 2 sits after the 20-byte header and 2 full 56-byte records, at float offset 10.
    const float two = 2.0f;
    std::memcpy(bytes.data() + 20 + 2 * 56 + 10 * 4, &two, 4);
    try {
        decode_scene(bytes, "m");
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), "invalid_scene");
        EXPECT_NE(std::string(e.what()).find("gaussian 2"), std::string::npos);
    }
}

TEST(SceneFile, FuzzedBytesNeverCrash) {
    oracle::Rng rng(9);
    const auto good = encode_scene(oracle::random_scene(rng, 5));
    for (int trial = 0; trial < 500; ++trial) {
        auto b = good;
        const int flips = 1 + int(rng() % 4);
        for (int f = 0; f < flips; ++f) b[rng() % b.size()] ^= std::uint8_t(1u << (rng() % 8));
        if (trial % 5 == 0) b.resize(rng() % b.size());
        try {
            const auto s = decode_scene(b, "fuzz");
            EXPECT_TRUE(validate_scene(s).empty());
        } catch (const Error&) {
        }
    }
}

TEST(Cameras, IdentityLine) {
    const auto views = parse_cameras("# comment\n3 8 6 10 10 3.5 2.5 1 0 0 0 0 1 0 0 0 0 1 0 0 0 0 1\n", "t");
    ASSERT_EQ(views.size(), 1u);
    EXPECT_EQ(views[0].view_id, 3u);
    EXPECT_EQ(views[0].width, 8);
    EXPECT_EQ(views[0].height, 6);
    EXPECT_EQ(views[0].world_to_camera, (std::array<double, 16>{1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1}));
}

TEST(Cameras, Errors) {
    EXPECT_EQ(error_code([] { parse_cameras("0 8 8 10 10 4 4 2 0 0 0 0 1 0 0 0 0 1 0 0 0 0 1\n", "t"); }),
              "invalid_camera");
    EXPECT_EQ(error_code([] {
                  parse_cameras("0 8 8 10 10 4 4 1 0 0 0 0 1 0 0 0 0 1 0 0 0 0 1\n"
                                "0 8 8 10 10 4 4 1 0 0 0 0 1 0 0 0 0 1 0 0 0 0 1\n",
                                "t");
              }),
              "duplicate_id");
    EXPECT_EQ(error_code([] { parse_cameras("0 8 8 10\n", "t"); }), "parse");
}

TEST(Cameras, RoundTripExact) {
    std::vector<CameraView> views;
    for (int i = 0; i < 5; ++i)
        views.push_back(oracle::orbit_camera(ViewId(i), 16, 17.3, Eigen::Vector3d(std::cos(i), std::sin(i), 0.7)));
    EXPECT_EQ(parse_cameras(encode_cameras(views), "t"), views);
}

TEST(MaskRaster, SmallRoundTrip) {
    InstanceMaskRaster r{4, 2, 2, {0, 1, 1, 2}};
    const auto dir = temp_dir("mask");
    write_mask_raster(r, dir / mask_filename(4));
    EXPECT_EQ(read_mask_raster(dir / "mask_4.pgm"), r);
}

TEST(MaskRaster, LargeLabelsRoundTrip) {
    oracle::Rng rng(4);
    InstanceMaskRaster r{1, 7, 5, {}};
    for (int i = 0; i < 35; ++i) r.labels.push_back(std::uint32_t(rng() % 65536));
    EXPECT_EQ(decode_mask_raster(encode_mask_raster(r), 1, "m"), r);
}

TEST(MaskRaster, Errors) {
    const std::string eight = "P5\n2 2\n255\n\x01\x02\x03\x04";
    EXPECT_EQ(error_code([&] { decode_mask_raster({eight.begin(), eight.end()}, 0, "m"); }), "format");
    auto bytes = encode_mask_raster(InstanceMaskRaster{0, 2, 2, {0, 1, 1, 2}});
    bytes.pop_back();
    EXPECT_EQ(error_code([&] { decode_mask_raster(bytes, 0, "m"); }), "dimension_mismatch");
}

TEST(MaskRaster, AllZeroIsValid) {
    InstanceMaskRaster r{0, 3, 3, std::vector<std::uint32_t>(9, 0)};
    const auto back = decode_mask_raster(encode_mask_raster(r), 0, "m");
    EXPECT_EQ(back.mask_count(), 0u);
}

TEST(Embeddings, RoundTripAndKinds) {
    MaskEmbeddingSet e{2, EmbeddingKind::context, Eigen::MatrixXf::Random(2, 4)};
    EXPECT_EQ(decode_embeddings(encode_embeddings(e), "m"), e);
    MaskEmbeddingSet t{0, EmbeddingKind::text, Eigen::MatrixXf::Random(5, 3)};
    const auto back = decode_embeddings(encode_embeddings(t), "m");
    EXPECT_EQ(back.kind, EmbeddingKind::text);
    EXPECT_EQ(back.count(), 5);
}

TEST(Embeddings, NanRejectedWithPosition) {
    MaskEmbeddingSet e{0, EmbeddingKind::local, Eigen::MatrixXf::Zero(3, 4)};
    auto bytes = encode_embeddings(e);
    const float nan = std::numeric_limits<float>::quiet_NaN();
    std::memcpy(bytes.data() + 21 + (1 * 4 + 2) * 4, &nan, 4);
    try {
        decode_embeddings(bytes, "m");
        FAIL();
    } catch (const Error& err) {
        const std::string what = err.what();
        EXPECT_NE(what.find("row 1"), std::string::npos) << what;
        EXPECT_NE(what.find("col 2"), std::string::npos) << what;
    }
}

TEST(Embeddings, CrossCheckAgainstRaster) {
    InstanceMaskRaster r{0, 2, 2, {0, 1, 1, 2}};
    MaskEmbeddingSet ok{0, EmbeddingKind::local, Eigen::MatrixXf::Ones(2, 3)};
    MaskEmbeddingSet bad{0, EmbeddingKind::local, Eigen::MatrixXf::Ones(3, 3)};
    EXPECT_EQ(check_embeddings_against_raster(ok, r), "");
    EXPECT_NE(check_embeddings_against_raster(bad, r), "");
}
