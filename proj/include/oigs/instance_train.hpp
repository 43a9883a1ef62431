#pragma once

// Contrastive training of per-Gaussian instance features from 2D masks:
// an intra-mask smoothing term pulls rendered features toward their mask
// mean, an inter-mask term pushes mask means apart.

#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "oigs/core.hpp"
#include "oigs/random.hpp"
#include "oigs/rasterizer.hpp"

namespace oigs {

struct TrainConfig {
    int iterations = 500;
    double learning_rate = 0.01;
    double lambda_s = 1.0;
    double lambda_c = 1.0;
    int batch_views = 1;
    std::uint64_t seed = 0;
    double init_sigma = 0.01;
};

inline std::string check_config(const TrainConfig& c) {
    if (c.iterations < 1) return "iterations must be >= 1";
    if (!(c.learning_rate >= 0.0)) return "learning_rate must be >= 0";
    if (!(c.lambda_s >= 0.0) || !(c.lambda_c >= 0.0)) return "loss weights must be >= 0";
    if (c.batch_views < 1) return "batch_views must be >= 1";
    if (!(c.init_sigma >= 0.0)) return "init_sigma must be >= 0";
    return {};
}

inline constexpr std::size_t kMinMaskPixels = 4;
inline constexpr double kContrastDistanceFloor = 1e-8;

struct MaskStat {
    std::uint32_t mask_id = 0;
    std::size_t pixels = 0;
    Eigen::VectorXd mean;
};

struct MaskStats {
    std::vector<MaskStat> masks; // retained masks, ascending id
    std::size_t skipped = 0;     // masks below the minimum pixel support
};

struct SmoothLoss {
    double value = 0.0;
    MaskStats stats;
};

struct ContrastLoss {
    double value = 0.0;
    bool degenerate = false;
};

/// Sum over masks of squared distances between rendered features and the mask mean.
inline SmoothLoss loss_smooth(const FeatureMap& map, const InstanceMaskRaster& raster,
                              std::size_t min_pixels = kMinMaskPixels) {
    if (map.width != raster.width || map.height != raster.height)
        throw Error("shape_mismatch", "feature map and raster dimensions differ");
    const std::uint32_t max_label = raster.max_label();
    if (max_label == 0) throw Error("no_masks", "raster has no masks");

    const int ch = map.channels;
    std::vector<std::size_t> count(max_label + 1, 0);
    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(ch, max_label + 1);
    for (std::size_t p = 0; p < raster.labels.size(); ++p) {
        const auto l = raster.labels[p];
        if (l == 0) continue;
        ++count[l];
        const auto px = map.pixel(p);
        for (int c = 0; c < ch; ++c) sums(c, l) += px[c];
    }

    SmoothLoss out;
    std::vector<int> slot(max_label + 1, -1);
    for (std::uint32_t l = 1; l <= max_label; ++l) {
        if (count[l] == 0) continue;
        if (count[l] < min_pixels) {
            ++out.stats.skipped;
            continue;
        }
        slot[l] = static_cast<int>(out.stats.masks.size());
        out.stats.masks.push_back({l, count[l], sums.col(l) / static_cast<double>(count[l])});
    }
    for (std::size_t p = 0; p < raster.labels.size(); ++p) {
        const auto l = raster.labels[p];
        if (l == 0 || slot[l] < 0) continue;
        const auto& mean = out.stats.masks[slot[l]].mean;
        const auto px = map.pixel(p);
        for (int c = 0; c < ch; ++c) {
            const double d = px[c] - mean(c);
            out.value += d * d;
        }
    }
    return out;
}

/// 1/(m(m+1)) * sum over ordered pairs i != j of 1/|mean_i - mean_j|^2.
inline ContrastLoss loss_contrast(const MaskStats& stats) {
    const std::size_t m = stats.masks.size();
    if (m < 2) return {0.0, true};
    double acc = 0.0;
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < m; ++j)
            if (i != j)
                acc += 1.0 / std::max((stats.masks[i].mean - stats.masks[j].mean).squaredNorm(),
                                      kContrastDistanceFloor);
    return {acc / (double(m) * double(m + 1)), false};
}

/// Gradient of the inter-mask loss with respect to each retained mask mean.
inline Eigen::MatrixXd contrast_mean_gradient(const MaskStats& stats) {
    const std::size_t m = stats.masks.size();
    const Eigen::Index ch = m ? stats.masks.front().mean.size() : 0;
    Eigen::MatrixXd g = Eigen::MatrixXd::Zero(ch, Eigen::Index(m));
    if (m < 2) return g;
    const double scale = 1.0 / (double(m) * double(m + 1));
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
            if (i == j) continue;
            const Eigen::VectorXd diff = stats.masks[i].mean - stats.masks[j].mean;
            const double d2 = diff.squaredNorm();
            if (d2 <= kContrastDistanceFloor) continue;
            // Both ordered pairs (i,j) and (j,i) contribute -2 diff / d^4.
            g.col(Eigen::Index(i)) += scale * (-4.0 / (d2 * d2)) * diff;
        }
    }
    return g;
}

/// Precomputed blend weights and masks for one training view.
struct TrainingView {
    ViewId view_id = 0;
    BlendRecord record;
    InstanceMaskRaster raster;
};

inline std::vector<TrainingView> prepare_training_views(const GaussianScene& scene,
                                                        const std::vector<CameraView>& views,
                                                        const std::vector<InstanceMaskRaster>& rasters,
                                                        const RasterSettings& settings = {}) {
    std::vector<TrainingView> out;
    for (const auto& view : views) {
        const InstanceMaskRaster* raster = nullptr;
        for (const auto& r : rasters)
            if (r.view_id == view.view_id) raster = &r;
        if (!raster) throw Error("missing_raster", "no mask raster for view " + std::to_string(view.view_id));
        if (const auto problem = check_raster(*raster, &view); !problem.empty())
            throw Error("invalid_raster", "view " + std::to_string(view.view_id) + ": " + problem);
        const auto splats = project(scene, view, settings);
        out.push_back({view.view_id, blend_weights(splats, view.width, view.height, settings), *raster});
    }
    return out;
}

struct FeatureGradient {
    double loss = 0.0; // lambda_s * L_s + lambda_c * L_c
    double smooth = 0.0;
    double contrast = 0.0;
    Eigen::MatrixXd grad; // N x 6
};

/// Routes per-pixel loss derivatives back to gaussians through the blend weights.
inline Eigen::MatrixXd backproject(const BlendRecord& rec, const Eigen::MatrixXd& pixel_grad, Eigen::Index n) {
    Eigen::MatrixXd grad = Eigen::MatrixXd::Zero(n, pixel_grad.rows());
    for (std::size_t p = 0; p < rec.pixel_count(); ++p) {
        const auto entries = rec.pixel(p);
        if (entries.empty()) continue;
        const auto col = pixel_grad.col(Eigen::Index(p));
        if (col.isZero(0.0)) continue;
        for (const auto& e : entries) grad.row(e.gaussian_index) += e.weight * col.transpose();
    }
    return grad;
}

inline FeatureGradient grad_features(std::span<const TrainingView> views, std::span<const std::size_t> batch,
                                     const Eigen::MatrixXd& features, const TrainConfig& config) {
    FeatureGradient out;
    out.grad = Eigen::MatrixXd::Zero(features.rows(), features.cols());
    const Eigen::Index ch = features.cols();
    for (std::size_t b : batch) {
        const TrainingView& tv = views[b];
        const FeatureMap map = render(tv.record, features);
        const SmoothLoss smooth = loss_smooth(map, tv.raster);
        const ContrastLoss contrast = loss_contrast(smooth.stats);
        out.smooth += smooth.value;
        out.contrast += contrast.value;

        const Eigen::MatrixXd mean_grad = contrast_mean_gradient(smooth.stats);
        std::vector<int> slot(tv.raster.max_label() + 1, -1);
        for (std::size_t i = 0; i < smooth.stats.masks.size(); ++i) slot[smooth.stats.masks[i].mask_id] = int(i);

        Eigen::MatrixXd pixel_grad = Eigen::MatrixXd::Zero(ch, Eigen::Index(map.pixel_count()));
        for (std::size_t p = 0; p < map.pixel_count(); ++p) {
            const auto l = tv.raster.labels[p];
            if (l == 0 || slot[l] < 0) continue;
            const MaskStat& ms = smooth.stats.masks[slot[l]];
            const auto px = map.pixel(p);
            for (Eigen::Index c = 0; c < ch; ++c) {
                // d/dM_p of the smoothing term is 2 (M_p - mean): the mean's own
                // dependence on M_p cancels because residuals sum to zero.
                pixel_grad(c, Eigen::Index(p)) = config.lambda_s * 2.0 * (px[c] - ms.mean(c)) +
                                                 config.lambda_c * mean_grad(c, slot[l]) / double(ms.pixels);
            }
        }
        out.grad += backproject(tv.record, pixel_grad, features.rows());
    }
    out.loss = config.lambda_s * out.smooth + config.lambda_c * out.contrast;
    return out;
}

/// Loss and analytic gradient over every supplied view.
inline FeatureGradient grad_features(const GaussianScene& scene, const std::vector<CameraView>& views,
                                     const std::vector<InstanceMaskRaster>& rasters, const TrainConfig& config) {
    if (!scene.has_features()) throw Error("missing_features", "scene has no instance features");
    const auto prepared = prepare_training_views(scene, views, rasters);
    std::vector<std::size_t> all(prepared.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    return grad_features(prepared, all, feature_matrix(scene), config);
}

struct LossRecord {
    int iteration = 0;
    double smooth = 0.0;
    double contrast = 0.0;
    double total = 0.0;
};

struct TrainResult {
    GaussianScene scene;
    std::vector<LossRecord> trace;
    std::size_t increasing_windows = 0; // 50-iteration windows whose loss went up
};

inline Eigen::MatrixXd initial_features(std::size_t n, double sigma, std::uint64_t seed) {
    Eigen::MatrixXd f(Eigen::Index(n), kInstanceFeatureDim);
    for (std::size_t i = 0; i < n; ++i) {
        CounterRng rng(seed, 0x1f3a, i);
        for (int c = 0; c < kInstanceFeatureDim; ++c) f(Eigen::Index(i), c) = sigma * rng.normal();
    }
    return f;
}

inline std::vector<std::size_t> sample_batch(std::size_t n_views, int batch, std::uint64_t seed, int iteration) {
    std::vector<std::size_t> idx(n_views);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    const std::size_t k = std::min<std::size_t>(n_views, static_cast<std::size_t>(batch));
    CounterRng rng(seed, 0x5b7c, static_cast<std::uint64_t>(iteration));
    for (std::size_t i = 0; i < k; ++i) std::swap(idx[i], idx[i + rng.below(n_views - i)]);
    idx.resize(k);
    return idx;
}

inline TrainResult train(const GaussianScene& scene, const std::vector<CameraView>& views,
                         const std::vector<InstanceMaskRaster>& rasters, const TrainConfig& config) {
    if (const auto problem = check_config(config); !problem.empty()) throw Error("invalid_config", problem);
    auto prepared = prepare_training_views(scene, views, rasters);
    std::erase_if(prepared, [](const TrainingView& v) { return v.raster.max_label() == 0; });
    if (prepared.empty()) throw Error("no_masks", "no view carries a mask");

    Eigen::MatrixXd features = initial_features(scene.size(), config.init_sigma, config.seed);
    TrainResult out;
    out.trace.reserve(static_cast<std::size_t>(config.iterations));
    for (int it = 0; it < config.iterations; ++it) {
        const auto batch = sample_batch(prepared.size(), config.batch_views, config.seed, it);
        const FeatureGradient g = grad_features(prepared, batch, features, config);
        if (!std::isfinite(g.loss) || !g.grad.allFinite()) {
            std::ostringstream os;
            os << "non-finite loss at iteration " << it;
            throw Error("nan_loss", os.str());
        }
        out.trace.push_back({it, g.smooth, g.contrast, g.loss});
        features -= config.learning_rate * g.grad;
    }
    for (std::size_t w = 50; w < out.trace.size(); w += 50)
        if (out.trace[w].total > out.trace[w - 50].total) ++out.increasing_windows;
    out.scene = with_features(scene, features);
    return out;
}

inline std::string encode_loss_trace(const std::vector<LossRecord>& trace) {
    std::ostringstream os;
    os.precision(9);
    os << "iter\tL_s\tL_c\ttotal\n";
    for (const auto& r : trace) os << r.iteration << '\t' << r.smooth << '\t' << r.contrast << '\t' << r.total << '\n';
    return os.str();
}

} // namespace oigs
