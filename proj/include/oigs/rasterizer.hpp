#pragma once

// Software splatting: EWA projection of 3D Gaussians and front-to-back
// alpha blending of arbitrary per-Gaussian payloads.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "oigs/core.hpp"

namespace oigs {

struct RasterSettings {
    double near_plane = 0.01;
    double dilation = 0.3;         // added to cov2d diagonal, pixel^2
    double alpha_clamp = 0.99;
    double min_alpha = 1.0 / 255.0;
    double transmittance_stop = 1e-4;
    double footprint_sigma = 3.0;
};

struct RasterStats {
    std::size_t culled_near = 0;
    std::size_t degenerate = 0;
};

struct Splat2D {
    std::size_t gaussian_index = 0;
    Eigen::Vector2d mean2d = Eigen::Vector2d::Zero();
    Eigen::Matrix2d cov2d = Eigen::Matrix2d::Identity(); // dilated
    double depth = 0.0;
    double opacity = 0.0;
};

/// Dense H x W x C map plus accumulated opacity.
struct FeatureMap {
    int width = 0;
    int height = 0;
    int channels = 0;
    std::vector<double> data;  // (y * width + x) * channels + c
    std::vector<double> alpha; // y * width + x

    double at(int x, int y, int c) const {
        return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
    std::span<const double> pixel(std::size_t p) const {
        return {data.data() + p * channels, static_cast<std::size_t>(channels)};
    }
    std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }
};

struct BlendEntry {
    std::uint32_t gaussian_index = 0;
    double weight = 0.0;
};

/// Per-pixel depth-ordered blending weights in CSR form.
struct BlendRecord {
    int width = 0;
    int height = 0;
    std::vector<std::size_t> offsets; // pixel_count + 1
    std::vector<BlendEntry> entries;

    std::span<const BlendEntry> pixel(std::size_t p) const {
        return {entries.data() + offsets[p], offsets[p + 1] - offsets[p]};
    }
    std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }
};

struct BlendResult {
    FeatureMap map;
    BlendRecord record;
    RasterStats stats;
};

inline Eigen::Matrix3d quaternion_to_matrix(const Vec4f& q) {
    Eigen::Quaterniond quat(q[0], q[1], q[2], q[3]);
    quat.normalize();
    return quat.toRotationMatrix();
}

inline Eigen::Matrix3d covariance3d(const Gaussian& g) {
    const Eigen::Matrix3d r = quaternion_to_matrix(g.rotation);
    const Eigen::Vector3d s(g.scale[0], g.scale[1], g.scale[2]);
    const Eigen::Matrix3d m = r * s.asDiagonal();
    return m * m.transpose();
}

inline Eigen::Vector3d to_camera(const Vec3f& position, const CameraView& view) {
    const Eigen::Vector3d p(position[0], position[1], position[2]);
    return view.rotation() * p + view.translation();
}

/// Projects every Gaussian in front of the near plane into the view.
inline std::vector<Splat2D> project(const GaussianScene& scene, const CameraView& view,
                                    const RasterSettings& settings = {}, RasterStats* stats = nullptr) {
    std::vector<Splat2D> splats;
    splats.reserve(scene.size());
    const Eigen::Matrix3d w = view.rotation();
    const Eigen::Vector3d tr = view.translation();
    for (std::size_t i = 0; i < scene.size(); ++i) {
        const Gaussian& g = scene.gaussians[i];
        const Eigen::Vector3d t = w * Eigen::Vector3d(g.position[0], g.position[1], g.position[2]) + tr;
        if (!(t.z() > settings.near_plane)) {
            if (stats) ++stats->culled_near;
            continue;
        }
        const double iz = 1.0 / t.z();
        Eigen::Matrix<double, 2, 3> j;
        j << view.fx * iz, 0.0, -view.fx * t.x() * iz * iz, 0.0, view.fy * iz, -view.fy * t.y() * iz * iz;
        const Eigen::Matrix<double, 2, 3> jw = j * w;
        Splat2D s;
        s.gaussian_index = i;
        s.mean2d = {view.fx * t.x() * iz + view.cx, view.fy * t.y() * iz + view.cy};
        s.cov2d = jw * covariance3d(g) * jw.transpose();
        s.cov2d(0, 1) = s.cov2d(1, 0) = 0.5 * (s.cov2d(0, 1) + s.cov2d(1, 0));
        s.cov2d += settings.dilation * Eigen::Matrix2d::Identity();
        s.depth = t.z();
        s.opacity = g.opacity;
        splats.push_back(s);
    }
    return splats;
}

namespace detail {

struct PreparedSplat {
    std::uint32_t index;
    double mx, my;
    double a, b, c; // conic: q = a dx^2 + 2 b dx dy + c dy^2
    double opacity;
    double q_max;
    int x0, x1, y0, y1;
};

inline std::vector<PreparedSplat> prepare(std::span<const Splat2D> splats, int width, int height,
                                          const RasterSettings& settings, RasterStats& stats) {
    std::vector<std::size_t> order(splats.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t l, std::size_t r) {
        if (splats[l].depth != splats[r].depth) return splats[l].depth < splats[r].depth;
        return splats[l].gaussian_index < splats[r].gaussian_index;
    });

    std::vector<PreparedSplat> out;
    out.reserve(splats.size());
    for (std::size_t k : order) {
        const Splat2D& s = splats[k];
        const Eigen::Matrix2d& cov = s.cov2d;
        const Eigen::Matrix2d raw = cov - settings.dilation * Eigen::Matrix2d::Identity();
        const double det = cov.determinant();
        if (!std::isfinite(det) || !(raw.determinant() > 0.0) || !(det > 0.0) || !(cov(0, 0) > 0.0)) {
            ++stats.degenerate;
            continue;
        }
        PreparedSplat p;
        p.index = static_cast<std::uint32_t>(s.gaussian_index);
        p.mx = s.mean2d.x();
        p.my = s.mean2d.y();
        p.a = cov(1, 1) / det;
        p.b = -cov(0, 1) / det;
        p.c = cov(0, 0) / det;
        p.opacity = s.opacity;
        // The 3-sigma ellipse, widened to wherever the splat can still clear
        // the minimum alpha, so culling never drops a contribution.
        const double sig2 = settings.footprint_sigma * settings.footprint_sigma;
        const double peak = std::min(s.opacity, settings.alpha_clamp);
        const double reach = peak > settings.min_alpha ? 2.0 * std::log(peak / settings.min_alpha) : 0.0;
        p.q_max = std::max(sig2, reach);
        const double rx = std::sqrt(p.q_max * cov(0, 0));
        const double ry = std::sqrt(p.q_max * cov(1, 1));
        p.x0 = std::max(0, static_cast<int>(std::floor(p.mx - rx)));
        p.x1 = std::min(width - 1, static_cast<int>(std::ceil(p.mx + rx)));
        p.y0 = std::max(0, static_cast<int>(std::floor(p.my - ry)));
        p.y1 = std::min(height - 1, static_cast<int>(std::ceil(p.my + ry)));
        if (p.x0 > p.x1 || p.y0 > p.y1) continue;
        out.push_back(p);
    }
    return out;
}

} // namespace detail

/// Computes per-pixel blending weights w_i = alpha_i * prod_{j<i}(1 - alpha_j).
inline BlendRecord blend_weights(std::span<const Splat2D> splats, int width, int height,
                                 const RasterSettings& settings = {}, RasterStats* stats = nullptr) {
    RasterStats local;
    const auto prepared = detail::prepare(splats, width, height, settings, local);
    if (stats) {
        stats->degenerate += local.degenerate;
    }

    BlendRecord rec;
    rec.width = width;
    rec.height = height;
    rec.offsets.assign(static_cast<std::size_t>(width) * height + 1, 0);
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            const std::size_t p = static_cast<std::size_t>(y) * width + x;
            double t = 1.0;
            for (const auto& s : prepared) {
                if (x < s.x0 || x > s.x1 || y < s.y0 || y > s.y1) continue;
                const double dx = x - s.mx;
                const double dy = y - s.my;
                const double q = s.a * dx * dx + 2.0 * s.b * dx * dy + s.c * dy * dy;
                if (q > s.q_max) continue;
                const double alpha = std::min(settings.alpha_clamp, s.opacity * std::exp(-0.5 * q));
                if (alpha < settings.min_alpha) continue;
                const double next_t = t * (1.0 - alpha);
                if (next_t < settings.transmittance_stop) break;
                rec.entries.push_back({s.index, alpha * t});
                t = next_t;
            }
            rec.offsets[p + 1] = rec.entries.size();
        }
    }
    return rec;
}

/// Blends payload rows (indexed by gaussian index) through a weight record.
inline FeatureMap render(const BlendRecord& rec, const Eigen::MatrixXd& payloads) {
    FeatureMap map;
    map.width = rec.width;
    map.height = rec.height;
    map.channels = static_cast<int>(payloads.cols());
    map.data.assign(rec.pixel_count() * map.channels, 0.0);
    map.alpha.assign(rec.pixel_count(), 0.0);
    for (std::size_t p = 0; p < rec.pixel_count(); ++p) {
        double* out = map.data.data() + p * map.channels;
        double acc = 0.0;
        for (const auto& e : rec.pixel(p)) {
            acc += e.weight;
            for (int c = 0; c < map.channels; ++c) out[c] += e.weight * payloads(e.gaussian_index, c);
        }
        map.alpha[p] = acc;
    }
    return map;
}

inline BlendResult blend(std::span<const Splat2D> splats, const Eigen::MatrixXd& payloads, int width, int height,
                         const RasterSettings& settings = {}) {
    for (const auto& s : splats) {
        if (static_cast<Eigen::Index>(s.gaussian_index) >= payloads.rows())
            throw Error("shape_mismatch", "payload matrix has fewer rows than splat indices require");
    }
    BlendResult out;
    out.record = blend_weights(splats, width, height, settings, &out.stats);
    out.map = render(out.record, payloads);
    return out;
}

inline Eigen::MatrixXd feature_payloads(const GaussianScene& scene) {
    return scene.has_features() ? feature_matrix(scene) : Eigen::MatrixXd(Eigen::Index(scene.size()), 0);
}

/// Renders only the selected gaussians, payload = their instance features.
inline FeatureMap render_instance_map(std::span<const Splat2D> splats, const Eigen::MatrixXd& payloads,
                                      std::span<const std::uint32_t> indices, int width, int height,
                                      const RasterSettings& settings = {}) {
    if (indices.empty()) throw Error("empty_selection", "instance selection is empty");
    std::vector<bool> keep(static_cast<std::size_t>(payloads.rows()), false);
    for (auto i : indices) {
        if (i >= keep.size()) throw Error("index_range", "selected gaussian index out of range");
        keep[i] = true;
    }
    std::vector<Splat2D> subset;
    for (const auto& s : splats)
        if (keep[s.gaussian_index]) subset.push_back(s);
    return render(blend_weights(subset, width, height, settings), payloads);
}

inline FeatureMap render_instance_map(const GaussianScene& scene, const CameraView& view,
                                      std::span<const std::uint32_t> indices, const RasterSettings& settings = {}) {
    const auto splats = project(scene, view, settings);
    return render_instance_map(splats, feature_payloads(scene), indices, view.width, view.height, settings);
}

inline std::vector<std::uint8_t> binarize_alpha(const FeatureMap& map, double threshold) {
    std::vector<std::uint8_t> out(map.alpha.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = map.alpha[i] >= threshold ? 1 : 0;
    return out;
}

} // namespace oigs
