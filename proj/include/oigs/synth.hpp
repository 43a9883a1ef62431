#pragma once

// Synthetic scenes with known ground truth: compact domes of surface Gaussians on a ring,
// cameras on a cone looking down at them, masks from splatted ownership and
// class-vector embeddings with optional noise and whole-embedding swaps.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Geometry>

#include "oigs/core.hpp"
#include "oigs/random.hpp"
#include "oigs/rasterizer.hpp"
#include "oigs/scene_io.hpp"

namespace oigs {

struct SynthConfig {
    int n_objects = 6;
    int gaussians_per_object = 48;
    int n_views = 8;
    int image_size = 64;
    int embed_dim = 16;
    double embed_noise_sigma = 0.1;
    double corrupt_view_fraction = 0.0;
    std::uint64_t seed = 0;
};

inline std::string check_config(const SynthConfig& c) {
    if (c.n_objects < 1 || c.gaussians_per_object < 1 || c.n_views < 1 || c.image_size < 1 || c.embed_dim < 1)
        return "all counts must be >= 1";
    if (!(c.embed_noise_sigma >= 0.0)) return "embed_noise_sigma must be >= 0";
    if (!(c.corrupt_view_fraction >= 0.0 && c.corrupt_view_fraction <= 1.0))
        return "corrupt_view_fraction must lie in [0,1]";
    if (c.embed_dim < c.n_objects) return "embed_dim must be >= n_objects for orthogonal class vectors";
    if (c.n_objects == 1 && c.corrupt_view_fraction > 0.0) return "corruption needs at least two objects";
    return {};
}

/// Ground truth for one (view, mask) pair.
struct MaskTruth {
    ViewId view_id = 0;
    std::uint32_t mask_id = 0;
    std::uint32_t object_id = 0;
    std::size_t pixels = 0;
    bool corrupted = false;
    std::uint32_t embedded_object = 0; // class whose vector the stored embedding carries
};

struct GroundTruth {
    std::vector<std::string> labels; // index = object id = class id = text row
    std::vector<MaskTruth> masks;

    const MaskTruth* find(ViewId view, std::uint32_t mask) const {
        for (const auto& m : masks)
            if (m.view_id == view && m.mask_id == mask) return &m;
        return nullptr;
    }
    /// Mask id showing `object` in `view`, 0 when not visible.
    std::uint32_t mask_of(ViewId view, std::uint32_t object) const {
        for (const auto& m : masks)
            if (m.view_id == view && m.object_id == object) return m.mask_id;
        return 0;
    }
    std::size_t corrupted_count() const {
        return static_cast<std::size_t>(std::count_if(masks.begin(), masks.end(), [](const MaskTruth& m) {
            return m.corrupted;
        }));
    }
};

struct SynthOutput {
    GaussianScene scene;
    std::vector<CameraView> views;
    std::vector<InstanceMaskRaster> rasters;
    std::vector<MaskEmbeddingSet> local;
    std::vector<MaskEmbeddingSet> context;
    MaskEmbeddingSet text;
    GroundTruth truth;
};

namespace synth_detail {

enum Stream : std::uint64_t { kLayout = 1, kGaussian = 2, kCamera = 3, kShuffle = 4, kEmbed = 5, kCorrupt = 6 };

inline constexpr double kRingRadius = 0.9;
inline constexpr double kDomeRadius = 0.22;
inline constexpr double kCameraDistance = 3.0;
inline constexpr double kElevation = 60.0 * std::numbers::pi / 180.0;

inline CameraView look_at(ViewId id, int size, const Eigen::Vector3d& eye, const Eigen::Vector3d& target) {
    const Eigen::Vector3d forward = (target - eye).normalized();
    const Eigen::Vector3d up(0, 0, 1);
    const Eigen::Vector3d right = forward.cross(up).normalized();
    const Eigen::Vector3d down = forward.cross(right);
    Eigen::Matrix3d r;
    r.row(0) = right;
    r.row(1) = down;
    r.row(2) = forward;
    const Eigen::Vector3d t = -r * eye;
    CameraView v;
    v.view_id = id;
    v.width = v.height = size;
    v.fx = v.fy = 1.1 * size;
    v.cx = v.cy = 0.5 * (size - 1);
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) v.world_to_camera[i * 4 + j] = r(i, j);
        v.world_to_camera[i * 4 + 3] = t(i);
    }
    return v;
}

inline Eigen::VectorXf class_vector(int object, int dim) {
    Eigen::VectorXf v = Eigen::VectorXf::Zero(dim);
    v(object) = 1.0f;
    return v;
}

} // namespace synth_detail

inline std::vector<CameraView> synth_cameras(const SynthConfig& config) {
    using namespace synth_detail;
    std::vector<CameraView> views;
    for (int v = 0; v < config.n_views; ++v) {
        CounterRng rng(config.seed, kCamera, static_cast<std::uint64_t>(v));
        const double azimuth = 2.0 * std::numbers::pi * (v + 0.25 * rng.uniform()) / config.n_views;
        const Eigen::Vector3d eye(kCameraDistance * std::cos(kElevation) * std::cos(azimuth),
                                  kCameraDistance * std::cos(kElevation) * std::sin(azimuth),
                                  kCameraDistance * std::sin(kElevation));
        views.push_back(look_at(static_cast<ViewId>(v), config.image_size, eye, Eigen::Vector3d::Zero()));
    }
    return views;
}

inline GaussianScene synth_scene(const SynthConfig& config) {
    using namespace synth_detail;
    std::vector<Gaussian> gaussians;
    gaussians.reserve(static_cast<std::size_t>(config.n_objects) * config.gaussians_per_object);
    for (int k = 0; k < config.n_objects; ++k) {
        CounterRng layout(config.seed, kLayout, static_cast<std::uint64_t>(k));
        Eigen::Vector3d center = Eigen::Vector3d::Zero();
        if (config.n_objects > 1) {
            const double angle = 2.0 * std::numbers::pi * (k + 0.1 * layout.uniform(-1.0, 1.0)) / config.n_objects;
            center = {kRingRadius * std::cos(angle), kRingRadius * std::sin(angle), 0.05 * layout.uniform(-1, 1)};
        }
        for (int i = 0; i < config.gaussians_per_object; ++i) {
            CounterRng rng(config.seed, kGaussian, static_cast<std::uint64_t>(k), static_cast<std::uint64_t>(i));
            Gaussian g;
            // Surface splats on an upper hemisphere (a dome resting on the ground plane).
            Eigen::Vector3d dir(rng.normal(), rng.normal(), rng.normal());
            dir.normalize();
            dir.z() = std::abs(dir.z());
            const double radius = kDomeRadius * rng.uniform(0.9, 1.0);
            for (int a = 0; a < 3; ++a) g.position[a] = static_cast<float>(center(a) + radius * dir(a));
            for (int a = 0; a < 3; ++a) g.scale[a] = static_cast<float>(rng.uniform(0.045, 0.075));
            Eigen::Quaterniond q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
            q.normalize();
            g.rotation = {static_cast<float>(q.w()), static_cast<float>(q.x()), static_cast<float>(q.y()),
                          static_cast<float>(q.z())};
            // Renormalize in float so the stored quaternion passes the 1e-6 norm check.
            const double n = std::sqrt(double(g.rotation[0]) * g.rotation[0] + double(g.rotation[1]) * g.rotation[1] +
                                       double(g.rotation[2]) * g.rotation[2] + double(g.rotation[3]) * g.rotation[3]);
            for (float& c : g.rotation) c = static_cast<float>(c / n);
            g.opacity = static_cast<float>(rng.uniform(0.6, 0.95));
            for (float& c : g.color) c = static_cast<float>(rng.uniform());
            g.gt_label = static_cast<std::uint32_t>(k);
            gaussians.push_back(g);
        }
    }
    return make_scene(std::move(gaussians));
}

/// Per-pixel owner object (+1) of the splatted ground truth, 0 where coverage < 0.5.
inline std::vector<std::uint32_t> ownership_image(const GaussianScene& scene, const CameraView& view, int n_objects) {
    Eigen::MatrixXd onehot = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(scene.size()), n_objects);
    for (std::size_t i = 0; i < scene.size(); ++i) onehot(Eigen::Index(i), *scene.gaussians[i].gt_label) = 1.0;
    const auto splats = project(scene, view);
    const FeatureMap map = render(blend_weights(splats, view.width, view.height), onehot);
    std::vector<std::uint32_t> owner(map.pixel_count(), 0);
    for (std::size_t p = 0; p < owner.size(); ++p) {
        if (map.alpha[p] < 0.5) continue;
        const auto px = map.pixel(p);
        int best = 0;
        for (int c = 1; c < n_objects; ++c)
            if (px[c] > px[best]) best = c;
        owner[p] = static_cast<std::uint32_t>(best + 1);
    }
    return owner;
}

inline SynthOutput generate(const SynthConfig& config) {
    using namespace synth_detail;
    if (const auto problem = check_config(config); !problem.empty()) throw Error("invalid_config", problem);

    SynthOutput out;
    out.scene = synth_scene(config);
    out.views = synth_cameras(config);
    for (int k = 0; k < config.n_objects; ++k) out.truth.labels.push_back("object_" + std::to_string(k));

    std::vector<std::size_t> object_pixels(config.n_objects, 0);
    for (const auto& view : out.views) {
        const auto owner = ownership_image(out.scene, view, config.n_objects);
        std::vector<std::size_t> pixels(config.n_objects, 0);
        for (auto o : owner)
            if (o) ++pixels[o - 1];

        std::vector<std::uint32_t> visible;
        for (int k = 0; k < config.n_objects; ++k)
            if (pixels[k] > 0) visible.push_back(static_cast<std::uint32_t>(k));
        // Mask ids are a per-view shuffle of the visible objects.
        std::vector<std::uint64_t> keys(config.n_objects);
        for (int k = 0; k < config.n_objects; ++k) keys[k] = hash_key(config.seed, kShuffle, view.view_id, k);
        std::sort(visible.begin(), visible.end(), [&](std::uint32_t a, std::uint32_t b) { return keys[a] < keys[b]; });

        std::vector<std::uint32_t> mask_of_object(config.n_objects, 0);
        for (std::size_t m = 0; m < visible.size(); ++m) {
            mask_of_object[visible[m]] = static_cast<std::uint32_t>(m + 1);
            out.truth.masks.push_back({view.view_id, static_cast<std::uint32_t>(m + 1), visible[m], pixels[visible[m]],
                                       false, visible[m]});
            object_pixels[visible[m]] += pixels[visible[m]];
        }
        InstanceMaskRaster raster;
        raster.view_id = view.view_id;
        raster.width = view.width;
        raster.height = view.height;
        raster.labels.resize(owner.size());
        for (std::size_t p = 0; p < owner.size(); ++p) raster.labels[p] = owner[p] ? mask_of_object[owner[p] - 1] : 0;
        out.rasters.push_back(std::move(raster));
    }
    for (int k = 0; k < config.n_objects; ++k) {
        if (object_pixels[k] == 0)
            throw Error("degenerate_fixture", "object " + std::to_string(k) + " projects to zero pixels in all views");
    }

    // Corrupt exactly floor(fraction * pairs) (view, mask) pairs, chosen by hash rank.
    const std::size_t pairs = out.truth.masks.size();
    const auto n_corrupt = static_cast<std::size_t>(std::floor(config.corrupt_view_fraction * double(pairs)));
    std::vector<std::size_t> rank(pairs);
    for (std::size_t i = 0; i < pairs; ++i) rank[i] = i;
    std::sort(rank.begin(), rank.end(), [&](std::size_t a, std::size_t b) {
        const auto& ma = out.truth.masks[a];
        const auto& mb = out.truth.masks[b];
        const auto ka = hash_key(config.seed, kCorrupt, ma.view_id, ma.mask_id);
        const auto kb = hash_key(config.seed, kCorrupt, mb.view_id, mb.mask_id);
        return ka != kb ? ka < kb : a < b;
    });
    for (std::size_t c = 0; c < n_corrupt; ++c) {
        MaskTruth& m = out.truth.masks[rank[c]];
        CounterRng rng(config.seed, kCorrupt + 100, m.view_id, m.mask_id);
        m.corrupted = true;
        m.embedded_object =
            static_cast<std::uint32_t>((m.object_id + 1 + rng.below(std::uint64_t(config.n_objects - 1))) %
                                       std::uint64_t(config.n_objects));
    }

    for (const auto& view : out.views) {
        std::size_t count = 0;
        for (const auto& m : out.truth.masks)
            if (m.view_id == view.view_id) ++count;
        MaskEmbeddingSet local{view.view_id, EmbeddingKind::local, Eigen::MatrixXf(Eigen::Index(count), config.embed_dim)};
        MaskEmbeddingSet context{view.view_id, EmbeddingKind::context,
                                 Eigen::MatrixXf(Eigen::Index(count), config.embed_dim)};
        for (const auto& m : out.truth.masks) {
            if (m.view_id != view.view_id) continue;
            const Eigen::VectorXf base = class_vector(static_cast<int>(m.embedded_object), config.embed_dim);
            for (int kind = 0; kind < 2; ++kind) {
                CounterRng rng(config.seed, kEmbed, (std::uint64_t(m.view_id) << 32) | m.mask_id, std::uint64_t(kind));
                Eigen::VectorXf row = base;
                if (config.embed_noise_sigma > 0.0)
                    for (int c = 0; c < config.embed_dim; ++c)
                        row(c) += static_cast<float>(config.embed_noise_sigma * rng.normal());
                (kind == 0 ? local : context).rows.row(m.mask_id - 1) = row.transpose();
            }
        }
        out.local.push_back(std::move(local));
        out.context.push_back(std::move(context));
    }

    out.text.view_id = 0;
    out.text.kind = EmbeddingKind::text;
    out.text.rows = Eigen::MatrixXf::Zero(config.n_objects, config.embed_dim);
    for (int k = 0; k < config.n_objects; ++k) out.text.rows.row(k) = class_vector(k, config.embed_dim).transpose();
    return out;
}

// ---------------------------------------------------------------------------
// gt_manifest.tsv

inline std::string encode_gt_manifest(const GroundTruth& truth) {
    std::ostringstream os;
    os << "#objects\nobject_id\tlabel\tcorrupted_pairs\n";
    for (std::size_t k = 0; k < truth.labels.size(); ++k) {
        os << k << '\t' << truth.labels[k] << '\t';
        bool first = true;
        for (const auto& m : truth.masks) {
            if (m.object_id != k || !m.corrupted) continue;
            os << (first ? "" : ",") << m.view_id << ':' << m.mask_id;
            first = false;
        }
        if (first) os << '-';
        os << '\n';
    }
    os << "#masks\nview_id\tmask_id\tobject_id\tpixels\tcorrupted\tembedded_object\n";
    for (const auto& m : truth.masks)
        os << m.view_id << '\t' << m.mask_id << '\t' << m.object_id << '\t' << m.pixels << '\t' << (m.corrupted ? 1 : 0)
           << '\t' << m.embedded_object << '\n';
    return os.str();
}

inline GroundTruth parse_gt_manifest(const std::string& text) {
    GroundTruth truth;
    std::istringstream in(text);
    std::string line;
    int section = 0;
    bool header = false;
    while (std::getline(in, line)) {
        if (line == "#objects") {
            section = 1;
            header = true;
            continue;
        }
        if (line == "#masks") {
            section = 2;
            header = true;
            continue;
        }
        if (header) {
            header = false;
            continue;
        }
        if (line.empty()) continue;
        std::istringstream ls(line);
        if (section == 1) {
            std::size_t id;
            std::string label;
            ls >> id >> label;
            if (!ls) throw Error("parse", "malformed object line in gt manifest");
            if (truth.labels.size() <= id) truth.labels.resize(id + 1);
            truth.labels[id] = label;
        } else if (section == 2) {
            MaskTruth m;
            int corrupted = 0;
            ls >> m.view_id >> m.mask_id >> m.object_id >> m.pixels >> corrupted >> m.embedded_object;
            if (!ls) throw Error("parse", "malformed mask line in gt manifest");
            m.corrupted = corrupted != 0;
            truth.masks.push_back(m);
        } else {
            throw Error("parse", "gt manifest content before a section header");
        }
    }
    return truth;
}

} // namespace oigs
