#pragma once

// Shared domain types for the open-vocabulary instance Gaussian pipeline.

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

namespace oigs {

using Vec3f = std::array<float, 3>;
using Vec4f = std::array<float, 4>;
using Feature6f = std::array<float, 6>;
using ViewId = std::uint32_t;

inline constexpr int kInstanceFeatureDim = 6;

/// Error carrying a short machine-readable code next to the message.
class Error : public std::runtime_error {
public:
    Error(std::string code, const std::string& message)
        : std::runtime_error(message), code_(std::move(code)) {}

    const std::string& code() const noexcept { return code_; }

private:
    std::string code_;
};

struct Gaussian {
    Vec3f position{};
    Vec3f scale{1.0f, 1.0f, 1.0f};
    Vec4f rotation{1.0f, 0.0f, 0.0f, 0.0f}; // w, x, y, z
    float opacity = 0.5f;                   // post-activation, in (0,1)
    Vec3f color{};
    std::optional<Feature6f> instance_feature;
    std::optional<std::uint32_t> gt_label;

    bool operator==(const Gaussian&) const = default;
};

struct BoundingBox {
    Vec3f min{};
    Vec3f max{};

    bool operator==(const BoundingBox&) const = default;

    bool contains(const Vec3f& p) const {
        for (int a = 0; a < 3; ++a) {
            if (p[a] < min[a] || p[a] > max[a]) return false;
        }
        return true;
    }
};

struct GaussianScene {
    std::vector<Gaussian> gaussians;
    BoundingBox bbox;

    bool operator==(const GaussianScene&) const = default;

    std::size_t size() const { return gaussians.size(); }
    bool has_features() const {
        return !gaussians.empty() && gaussians.front().instance_feature.has_value();
    }
    bool has_gt_labels() const {
        return !gaussians.empty() && gaussians.front().gt_label.has_value();
    }
};

inline BoundingBox compute_bbox(const std::vector<Gaussian>& gaussians) {
    BoundingBox box;
    if (gaussians.empty()) return box;
    box.min = box.max = gaussians.front().position;
    for (const auto& g : gaussians) {
        for (int a = 0; a < 3; ++a) {
            box.min[a] = std::min(box.min[a], g.position[a]);
            box.max[a] = std::max(box.max[a], g.position[a]);
        }
    }
    return box;
}

inline GaussianScene make_scene(std::vector<Gaussian> gaussians) {
    GaussianScene scene;
    scene.bbox = compute_bbox(gaussians);
    scene.gaussians = std::move(gaussians);
    return scene;
}

/// Pinhole camera; world_to_camera is row-major 4x4.
struct CameraView {
    ViewId view_id = 0;
    int width = 0;
    int height = 0;
    double fx = 1.0, fy = 1.0, cx = 0.0, cy = 0.0;
    std::array<double, 16> world_to_camera{1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1};

    bool operator==(const CameraView&) const = default;

    Eigen::Matrix3d rotation() const {
        Eigen::Matrix3d r;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) r(i, j) = world_to_camera[i * 4 + j];
        return r;
    }
    Eigen::Vector3d translation() const {
        return {world_to_camera[3], world_to_camera[7], world_to_camera[11]};
    }
};

/// Per-view integer mask image, 0 is background.
struct InstanceMaskRaster {
    ViewId view_id = 0;
    int width = 0;
    int height = 0;
    std::vector<std::uint32_t> labels; // row-major, height*width

    bool operator==(const InstanceMaskRaster&) const = default;

    std::uint32_t at(int x, int y) const { return labels[static_cast<std::size_t>(y) * width + x]; }
    std::size_t pixel_count() const { return labels.size(); }

    std::uint32_t max_label() const {
        std::uint32_t m = 0;
        for (auto l : labels) m = std::max(m, l);
        return m;
    }

    /// Number of distinct nonzero labels.
    std::size_t mask_count() const {
        std::vector<bool> seen(max_label() + 1, false);
        std::size_t n = 0;
        for (auto l : labels) {
            if (l != 0 && !seen[l]) {
                seen[l] = true;
                ++n;
            }
        }
        return n;
    }

    std::vector<std::uint8_t> binary(std::uint32_t mask_id) const {
        std::vector<std::uint8_t> out(labels.size());
        for (std::size_t i = 0; i < labels.size(); ++i) out[i] = labels[i] == mask_id ? 1 : 0;
        return out;
    }
};

enum class EmbeddingKind : std::uint8_t { local = 0, context = 1, fused = 2, text = 3 };

inline const char* to_string(EmbeddingKind kind) {
    switch (kind) {
    case EmbeddingKind::local: return "local";
    case EmbeddingKind::context: return "context";
    case EmbeddingKind::fused: return "fused";
    case EmbeddingKind::text: return "text";
    }
    return "?";
}

/// One D-dim row per mask; row r belongs to mask id r+1.
struct MaskEmbeddingSet {
    ViewId view_id = 0;
    EmbeddingKind kind = EmbeddingKind::local;
    Eigen::MatrixXf rows; // N x D

    int dim() const { return static_cast<int>(rows.cols()); }
    int count() const { return static_cast<int>(rows.rows()); }

    bool operator==(const MaskEmbeddingSet& o) const {
        return view_id == o.view_id && kind == o.kind && rows.rows() == o.rows.rows() &&
               rows.cols() == o.rows.cols() && (rows.array() == o.rows.array()).all();
    }
};

struct Violation {
    std::size_t index = 0; // gaussian index
    std::string invariant;

    bool operator==(const Violation&) const = default;
};

namespace detail {
inline bool finite3(const Vec3f& v) {
    return std::isfinite(v[0]) && std::isfinite(v[1]) && std::isfinite(v[2]);
}
} // namespace detail

/// Checks every scene invariant; an empty result means the scene is well formed.
inline std::vector<Violation> validate_scene(const GaussianScene& scene) {
    std::vector<Violation> out;
    if (scene.gaussians.empty()) {
        out.push_back({0, "non-empty scene"});
        return out;
    }
    const bool features = scene.gaussians.front().instance_feature.has_value();
    const bool labels = scene.gaussians.front().gt_label.has_value();
    for (std::size_t i = 0; i < scene.gaussians.size(); ++i) {
        const Gaussian& g = scene.gaussians[i];
        if (!detail::finite3(g.position)) out.push_back({i, "position finite"});
        if (!(g.scale[0] > 0.0f && g.scale[1] > 0.0f && g.scale[2] > 0.0f) || !detail::finite3(g.scale))
            out.push_back({i, "scale positivity"});
        const double qn = std::sqrt(double(g.rotation[0]) * g.rotation[0] + double(g.rotation[1]) * g.rotation[1] +
                                    double(g.rotation[2]) * g.rotation[2] + double(g.rotation[3]) * g.rotation[3]);
        if (!(std::abs(qn - 1.0) <= 1e-6)) out.push_back({i, "quaternion norm"});
        if (!(g.opacity > 0.0f && g.opacity < 1.0f)) out.push_back({i, "opacity range"});
        if (g.instance_feature.has_value() != features || g.gt_label.has_value() != labels)
            out.push_back({i, "optional field consistency"});
        if (g.instance_feature) {
            for (float v : *g.instance_feature) {
                if (!std::isfinite(v)) {
                    out.push_back({i, "feature finite"});
                    break;
                }
            }
        }
        if (!scene.bbox.contains(g.position)) out.push_back({i, "bbox containment"});
    }
    return out;
}

inline std::string describe(const std::vector<Violation>& violations) {
    std::ostringstream os;
    for (std::size_t k = 0; k < violations.size(); ++k) {
        if (k) os << "; ";
        os << "gaussian " << violations[k].index << ": " << violations[k].invariant;
    }
    return os.str();
}

/// Camera invariants; returns an empty string when valid.
inline std::string check_camera(const CameraView& view) {
    if (view.width <= 0 || view.height <= 0) return "image size must be positive";
    if (!(view.fx > 0.0) || !(view.fy > 0.0)) return "focal lengths must be positive";
    const auto& m = view.world_to_camera;
    if (m[12] != 0.0 || m[13] != 0.0 || m[14] != 0.0 || m[15] != 1.0) return "bottom row must be (0,0,0,1)";
    const Eigen::Matrix3d r = view.rotation();
    if (!((r * r.transpose() - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() <= 1e-5))
        return "rotation block not orthonormal";
    return {};
}

inline std::string check_raster(const InstanceMaskRaster& raster, const CameraView* view = nullptr) {
    if (raster.width <= 0 || raster.height <= 0) return "raster size must be positive";
    if (raster.labels.size() != static_cast<std::size_t>(raster.width) * raster.height)
        return "label count does not match dimensions";
    if (raster.max_label() >= 65536u) return "label exceeds 65535";
    if (view && (view->width != raster.width || view->height != raster.height))
        return "raster dimensions differ from camera view";
    return {};
}

/// Feature matrix (N x 6, double) extracted from a scene that carries features.
inline Eigen::MatrixXd feature_matrix(const GaussianScene& scene) {
    Eigen::MatrixXd f(static_cast<Eigen::Index>(scene.size()), kInstanceFeatureDim);
    for (std::size_t i = 0; i < scene.size(); ++i) {
        const auto& g = scene.gaussians[i];
        if (!g.instance_feature) throw Error("missing_features", "scene has no instance features");
        for (int c = 0; c < kInstanceFeatureDim; ++c) f(Eigen::Index(i), c) = (*g.instance_feature)[c];
    }
    return f;
}

inline GaussianScene with_features(GaussianScene scene, const Eigen::MatrixXd& features) {
    if (features.rows() != static_cast<Eigen::Index>(scene.size()) || features.cols() != kInstanceFeatureDim)
        throw Error("shape_mismatch", "feature matrix shape does not match scene");
    for (std::size_t i = 0; i < scene.size(); ++i) {
        Feature6f f{};
        for (int c = 0; c < kInstanceFeatureDim; ++c) f[c] = static_cast<float>(features(Eigen::Index(i), c));
        scene.gaussians[i].instance_feature = f;
    }
    return scene;
}

} // namespace oigs
