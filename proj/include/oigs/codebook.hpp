#pragma once

// Two-level k-means codebook over instance features: a coarse stage on
// features plus normalized position, then a feature-only fine stage inside
// every coarse cell. Also hosts the L1 refinement toward the fine centers.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "oigs/core.hpp"
#include "oigs/random.hpp"
#include "oigs/rasterizer.hpp"
#include "oigs/scene_io.hpp"

namespace oigs {

struct KMeansResult {
    Eigen::MatrixXd centers; // k x D
    std::vector<std::uint32_t> assignment;
    std::vector<double> trace; // objective after every assignment step
    int iterations = 0;
};

inline constexpr int kKMeansMaxIterations = 100;

namespace detail {

/// Nearest center, ties to the lowest index.
inline std::uint32_t nearest(const Eigen::MatrixXd& centers, const Eigen::RowVectorXd& x, double* dist2 = nullptr) {
    std::uint32_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (Eigen::Index c = 0; c < centers.rows(); ++c) {
        const double d = (centers.row(c) - x).squaredNorm();
        if (d < best_d) {
            best_d = d;
            best = static_cast<std::uint32_t>(c);
        }
    }
    if (dist2) *dist2 = best_d;
    return best;
}

inline Eigen::MatrixXd kmeanspp(const Eigen::MatrixXd& points, int k, std::uint64_t seed) {
    const Eigen::Index n = points.rows();
    CounterRng rng(seed, 0x6b6d);
    Eigen::MatrixXd centers(k, points.cols());
    std::vector<bool> chosen(static_cast<std::size_t>(n), false);
    Eigen::Index first = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(n)));
    centers.row(0) = points.row(first);
    chosen[first] = true;
    Eigen::VectorXd d2 = (points.rowwise() - centers.row(0)).rowwise().squaredNorm();
    for (int c = 1; c < k; ++c) {
        const double total = d2.sum();
        Eigen::Index pick = -1;
        if (total > 0.0) {
            const double target = rng.uniform() * total;
            double acc = 0.0;
            for (Eigen::Index i = 0; i < n; ++i) {
                acc += d2(i);
                if (d2(i) > 0.0 && acc > target) {
                    pick = i;
                    break;
                }
            }
            if (pick < 0)
                for (Eigen::Index i = n - 1; i >= 0 && pick < 0; --i)
                    if (d2(i) > 0.0) pick = i;
        } else {
            // Every point coincides with a center already; take the next unused one.
            for (Eigen::Index i = 0; i < n && pick < 0; ++i)
                if (!chosen[i]) pick = i;
        }
        chosen[pick] = true;
        centers.row(c) = points.row(pick);
        d2 = d2.cwiseMin((points.rowwise() - centers.row(c)).rowwise().squaredNorm());
    }
    return centers;
}

} // namespace detail

/// k-means++ seeding followed by Lloyd iterations.
inline KMeansResult kmeans(const Eigen::MatrixXd& points, int k, std::uint64_t seed,
                           int max_iterations = kKMeansMaxIterations) {
    const Eigen::Index n = points.rows();
    if (n < 1) throw Error("invalid_argument", "kmeans needs at least one point");
    if (k < 1) throw Error("invalid_argument", "kmeans needs k >= 1");
    if (k > n) throw Error("invalid_argument", "kmeans needs k <= number of points");
    if (!points.allFinite()) throw Error("non_finite", "kmeans input contains non-finite values");

    KMeansResult out;
    out.centers = detail::kmeanspp(points, k, seed);
    out.assignment.assign(static_cast<std::size_t>(n), 0);
    std::vector<double> dist(static_cast<std::size_t>(n), 0.0);
    for (int it = 0; it < max_iterations; ++it) {
        bool changed = it == 0;
        double objective = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            const auto a = detail::nearest(out.centers, points.row(i), &dist[i]);
            if (a != out.assignment[i]) changed = true;
            out.assignment[i] = a;
            objective += dist[i];
        }
        out.trace.push_back(objective);
        out.iterations = it + 1;
        if (!changed || it + 1 == max_iterations) break;

        Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(k, points.cols());
        std::vector<std::size_t> counts(static_cast<std::size_t>(k), 0);
        for (Eigen::Index i = 0; i < n; ++i) {
            sums.row(out.assignment[i]) += points.row(i);
            ++counts[out.assignment[i]];
        }
        std::vector<bool> taken(static_cast<std::size_t>(n), false);
        for (int c = 0; c < k; ++c) {
            if (counts[c] > 0) {
                out.centers.row(c) = sums.row(c) / double(counts[c]);
                continue;
            }
            // Empty cluster: move it onto the point farthest from its center.
            Eigen::Index far = -1;
            for (Eigen::Index i = 0; i < n; ++i)
                if (!taken[i] && (far < 0 || dist[i] > dist[far])) far = i;
            taken[far] = true;
            out.centers.row(c) = points.row(far);
        }
    }
    return out;
}

struct Codebook {
    int k1 = 0;
    int k2 = 0;
    float position_weight = 1.0f;
    Eigen::MatrixXf coarse_centers; // k1 x 9
    Eigen::MatrixXf fine_centers;   // (k1*k2) x 6
    std::vector<std::uint16_t> coarse_index;
    std::vector<std::uint16_t> fine_index;

    bool operator==(const Codebook& o) const {
        return k1 == o.k1 && k2 == o.k2 && position_weight == o.position_weight &&
               coarse_centers.rows() == o.coarse_centers.rows() && fine_centers.rows() == o.fine_centers.rows() &&
               (coarse_centers.array() == o.coarse_centers.array()).all() &&
               (fine_centers.array() == o.fine_centers.array()).all() && coarse_index == o.coarse_index &&
               fine_index == o.fine_index;
    }

    std::size_t size() const { return coarse_index.size(); }
    std::size_t instance_count() const { return static_cast<std::size_t>(k1) * k2; }
    std::uint32_t instance_of(std::size_t gaussian) const {
        return static_cast<std::uint32_t>(coarse_index[gaussian]) * k2 + fine_index[gaussian];
    }

    /// Gaussian indices grouped by instance id.
    std::vector<std::vector<std::uint32_t>> members() const {
        std::vector<std::vector<std::uint32_t>> out(instance_count());
        for (std::size_t i = 0; i < size(); ++i) out[instance_of(i)].push_back(static_cast<std::uint32_t>(i));
        return out;
    }

    /// Per-gaussian target feature (its fine center), N x 6.
    Eigen::MatrixXd center_payloads() const {
        Eigen::MatrixXd out(static_cast<Eigen::Index>(size()), kInstanceFeatureDim);
        for (std::size_t i = 0; i < size(); ++i)
            out.row(Eigen::Index(i)) = fine_centers.row(instance_of(i)).cast<double>();
        return out;
    }
};

inline std::string check_codebook(const Codebook& cb, std::size_t n_gaussians) {
    if (cb.k1 < 1 || cb.k2 < 1) return "k1 and k2 must be >= 1";
    if (cb.k1 > 65536 || cb.k2 > 65536) return "k1 and k2 must fit in 16 bits";
    if (cb.coarse_centers.rows() != cb.k1 || cb.coarse_centers.cols() != kInstanceFeatureDim + 3)
        return "coarse center matrix has the wrong shape";
    if (cb.fine_centers.rows() != Eigen::Index(cb.instance_count()) || cb.fine_centers.cols() != kInstanceFeatureDim)
        return "fine center matrix has the wrong shape";
    if (cb.coarse_index.size() != cb.fine_index.size()) return "index arrays differ in length";
    if (cb.coarse_index.size() != n_gaussians) return "codebook covers a different gaussian count";
    for (std::size_t i = 0; i < cb.size(); ++i)
        if (cb.coarse_index[i] >= cb.k1 || cb.fine_index[i] >= cb.k2)
            return "index out of range at gaussian " + std::to_string(i);
    if (!cb.coarse_centers.allFinite() || !cb.fine_centers.allFinite()) return "non-finite center";
    return {};
}

/// Positions mapped so the scene bbox becomes the unit cube (flat axes map to 0).
inline Eigen::MatrixXd normalized_positions(const GaussianScene& scene) {
    Eigen::MatrixXd x(static_cast<Eigen::Index>(scene.size()), 3);
    for (std::size_t i = 0; i < scene.size(); ++i) {
        for (int a = 0; a < 3; ++a) {
            const double lo = scene.bbox.min[a];
            const double extent = double(scene.bbox.max[a]) - lo;
            x(Eigen::Index(i), a) = extent > 0.0 ? (scene.gaussians[i].position[a] - lo) / extent : 0.0;
        }
    }
    return x;
}

inline double percentile(std::vector<double> values, double q) {
    if (values.empty()) return 0.0;
    std::sort(values.begin(), values.end());
    const double pos = q * double(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (pos - double(lo)) * (values[hi] - values[lo]);
}

/// 99th percentile of per-row norms; 1 when every row is zero.
inline double feature_scale(const Eigen::MatrixXd& features, bool l1) {
    std::vector<double> norms(static_cast<std::size_t>(features.rows()));
    for (Eigen::Index i = 0; i < features.rows(); ++i)
        norms[i] = l1 ? features.row(i).lpNorm<1>() : features.row(i).norm();
    const double s = percentile(std::move(norms), 0.99);
    return s > 0.0 ? s : 1.0;
}

struct CodebookConfig {
    int k1 = 64;
    int k2 = 10;
    double position_weight = 1.0;
    std::uint64_t seed = 0;
};

inline Codebook build_codebook(const GaussianScene& scene, const CodebookConfig& config) {
    if (!scene.has_features()) throw Error("missing_features", "scene has no instance features");
    if (config.k1 < 1 || config.k2 < 1) throw Error("invalid_config", "k1 and k2 must be >= 1");
    if (config.k1 > 65536 || config.k2 > 65536) throw Error("invalid_config", "k1 and k2 must fit in 16 bits");
    if (!(config.position_weight >= 0.0)) throw Error("invalid_config", "position_weight must be >= 0");
    const Eigen::MatrixXd f = feature_matrix(scene);
    const Eigen::Index n = f.rows();

    Codebook cb;
    cb.k1 = static_cast<int>(std::min<Eigen::Index>(config.k1, n));
    cb.k2 = config.k2;
    cb.position_weight = static_cast<float>(config.position_weight);

    // Features are put on a unit scale so the position term stays comparable.
    Eigen::MatrixXd coarse_points(n, kInstanceFeatureDim + 3);
    coarse_points.leftCols(kInstanceFeatureDim) = f / feature_scale(f, false);
    coarse_points.rightCols(3) = config.position_weight * normalized_positions(scene);
    const KMeansResult coarse = kmeans(coarse_points, cb.k1, hash_key(config.seed, 0xc0a5));
    cb.coarse_centers = coarse.centers.cast<float>();

    cb.fine_centers = Eigen::MatrixXf::Zero(Eigen::Index(cb.instance_count()), kInstanceFeatureDim);
    cb.coarse_index.resize(static_cast<std::size_t>(n));
    cb.fine_index.resize(static_cast<std::size_t>(n));
    std::vector<std::vector<Eigen::Index>> cells(static_cast<std::size_t>(cb.k1));
    for (Eigen::Index i = 0; i < n; ++i) {
        cells[coarse.assignment[i]].push_back(i);
        cb.coarse_index[i] = static_cast<std::uint16_t>(coarse.assignment[i]);
    }
    for (int c = 0; c < cb.k1; ++c) {
        const auto& cell = cells[c];
        if (cell.empty()) continue;
        const Eigen::Index base = Eigen::Index(c) * cb.k2;
        if (cell.size() <= static_cast<std::size_t>(cb.k2)) {
            for (std::size_t j = 0; j < cell.size(); ++j) {
                cb.fine_centers.row(base + Eigen::Index(j)) = f.row(cell[j]).cast<float>();
                cb.fine_index[cell[j]] = static_cast<std::uint16_t>(j);
            }
            continue;
        }
        Eigen::MatrixXd pts(Eigen::Index(cell.size()), kInstanceFeatureDim);
        for (std::size_t j = 0; j < cell.size(); ++j) pts.row(Eigen::Index(j)) = f.row(cell[j]);
        const KMeansResult fine = kmeans(pts, cb.k2, hash_key(config.seed, 0xf1e, std::uint64_t(c)));
        cb.fine_centers.block(base, 0, cb.k2, kInstanceFeatureDim) = fine.centers.cast<float>();
        for (std::size_t j = 0; j < cell.size(); ++j)
            cb.fine_index[cell[j]] = static_cast<std::uint16_t>(fine.assignment[j]);
    }
    return cb;
}

inline Codebook build_codebook(const GaussianScene& scene, int k1, int k2, double position_weight,
                               std::uint64_t seed) {
    return build_codebook(scene, CodebookConfig{k1, k2, position_weight, seed});
}

/// Moves every gaussian to the nearest occupied fine center of its own coarse cell.
inline std::size_t refresh_assignment(Codebook& cb, const Eigen::MatrixXd& features) {
    std::vector<std::vector<bool>> occupied(static_cast<std::size_t>(cb.k1), std::vector<bool>(cb.k2, false));
    for (std::size_t i = 0; i < cb.size(); ++i) occupied[cb.coarse_index[i]][cb.fine_index[i]] = true;
    std::size_t moved = 0;
    for (std::size_t i = 0; i < cb.size(); ++i) {
        const int c = cb.coarse_index[i];
        int best = cb.fine_index[i];
        double best_d = std::numeric_limits<double>::infinity();
        for (int j = 0; j < cb.k2; ++j) {
            if (!occupied[c][j]) continue;
            const double d =
                (cb.fine_centers.row(Eigen::Index(c) * cb.k2 + j).cast<double>() - features.row(Eigen::Index(i)))
                    .squaredNorm();
            if (d < best_d) {
                best_d = d;
                best = j;
            }
        }
        if (best != cb.fine_index[i]) ++moved;
        cb.fine_index[i] = static_cast<std::uint16_t>(best);
    }
    return moved;
}

struct RefineConfig {
    int iterations = 200;
    double learning_rate = 0.01;
    int reassign_every = 50;
};

struct RefineResult {
    GaussianScene scene;
    Codebook codebook;
    std::vector<double> trace; // L_p before each step
};

/// L_p summed over views, and its subgradient with respect to per-gaussian features.
inline double loss_lp(std::span<const BlendRecord> records, const Eigen::MatrixXd& features,
                      const Eigen::MatrixXd& targets, Eigen::MatrixXd* grad = nullptr) {
    double loss = 0.0;
    if (grad) *grad = Eigen::MatrixXd::Zero(features.rows(), features.cols());
    for (const auto& rec : records) {
        for (std::size_t p = 0; p < rec.pixel_count(); ++p) {
            const auto entries = rec.pixel(p);
            if (entries.empty()) continue;
            Eigen::RowVectorXd r = Eigen::RowVectorXd::Zero(features.cols());
            for (const auto& e : entries) r += e.weight * (features.row(e.gaussian_index) - targets.row(e.gaussian_index));
            loss += r.lpNorm<1>();
            if (!grad) continue;
            // Subgradient of |r| is taken as 0 at r = 0.
            const Eigen::RowVectorXd s = r.unaryExpr([](double v) { return double((v > 0.0) - (v < 0.0)); });
            for (const auto& e : entries) grad->row(e.gaussian_index) += e.weight * s;
        }
    }
    return loss;
}

inline RefineResult refine_lp(const GaussianScene& scene, const Codebook& codebook,
                              const std::vector<CameraView>& views, const RefineConfig& config) {
    if (config.iterations < 0) throw Error("invalid_config", "iterations must be >= 0");
    if (!(config.learning_rate >= 0.0)) throw Error("invalid_config", "learning_rate must be >= 0");
    if (config.reassign_every < 1) throw Error("invalid_config", "reassign_every must be >= 1");
    if (const auto problem = check_codebook(codebook, scene.size()); !problem.empty())
        throw Error("invalid_codebook", problem);

    std::vector<BlendRecord> records;
    for (const auto& view : views) records.push_back(blend_weights(project(scene, view), view.width, view.height));

    RefineResult out;
    out.codebook = codebook;
    Eigen::MatrixXd features = feature_matrix(scene);
    Eigen::MatrixXd targets = out.codebook.center_payloads();
    Eigen::MatrixXd grad;
    for (int it = 0; it < config.iterations; ++it) {
        if (it > 0 && it % config.reassign_every == 0) {
            refresh_assignment(out.codebook, features);
            targets = out.codebook.center_payloads();
        }
        const double loss = loss_lp(records, features, targets, &grad);
        if (!std::isfinite(loss)) {
            std::ostringstream os;
            os << "non-finite loss at iteration " << it;
            throw Error("nan_loss", os.str());
        }
        out.trace.push_back(loss);
        features -= config.learning_rate * grad;
    }
    out.trace.push_back(loss_lp(records, features, targets));
    out.scene = with_features(scene, features);
    return out;
}

// ---------------------------------------------------------------------------
// Codebook (.oigk)

inline std::vector<std::uint8_t> encode_codebook(const Codebook& cb) {
    if (const auto problem = check_codebook(cb, cb.size()); !problem.empty()) throw Error("invalid_codebook", problem);
    BinaryWriter w;
    w.put_magic("OIGK");
    w.put<std::uint32_t>(static_cast<std::uint32_t>(cb.k1));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(cb.k2));
    w.put<float>(cb.position_weight);
    for (Eigen::Index r = 0; r < cb.coarse_centers.rows(); ++r)
        for (Eigen::Index c = 0; c < cb.coarse_centers.cols(); ++c) w.put<float>(cb.coarse_centers(r, c));
    for (Eigen::Index r = 0; r < cb.fine_centers.rows(); ++r)
        for (Eigen::Index c = 0; c < cb.fine_centers.cols(); ++c) w.put<float>(cb.fine_centers(r, c));
    w.put<std::uint64_t>(cb.size());
    for (std::size_t i = 0; i < cb.size(); ++i) {
        w.put<std::uint16_t>(cb.coarse_index[i]);
        w.put<std::uint16_t>(cb.fine_index[i]);
    }
    return w.bytes();
}

inline Codebook decode_codebook(std::vector<std::uint8_t> bytes, const std::string& source) {
    BinaryReader r(std::move(bytes), source);
    r.expect_magic("OIGK");
    Codebook cb;
    const auto k1 = r.get<std::uint32_t>();
    const auto k2 = r.get<std::uint32_t>();
    if (k1 < 1 || k2 < 1 || k1 > 65536 || k2 > 65536)
        throw Error("invalid_codebook", source + ": k1/k2 out of range");
    cb.k1 = static_cast<int>(k1);
    cb.k2 = static_cast<int>(k2);
    cb.position_weight = r.get<float>();
    r.require((std::size_t(k1) * 9 + std::size_t(k1) * k2 * 6) * sizeof(float));
    cb.coarse_centers.resize(cb.k1, kInstanceFeatureDim + 3);
    for (Eigen::Index i = 0; i < cb.coarse_centers.rows(); ++i)
        for (Eigen::Index c = 0; c < cb.coarse_centers.cols(); ++c) cb.coarse_centers(i, c) = r.get<float>();
    cb.fine_centers.resize(Eigen::Index(cb.instance_count()), kInstanceFeatureDim);
    for (Eigen::Index i = 0; i < cb.fine_centers.rows(); ++i)
        for (Eigen::Index c = 0; c < cb.fine_centers.cols(); ++c) cb.fine_centers(i, c) = r.get<float>();
    const auto n = r.get<std::uint64_t>();
    if (n > r.remaining() / 4) throw Error("truncated", source + ": index table shorter than declared count");
    cb.coarse_index.resize(n);
    cb.fine_index.resize(n);
    for (std::uint64_t i = 0; i < n; ++i) {
        cb.coarse_index[i] = r.get<std::uint16_t>();
        cb.fine_index[i] = r.get<std::uint16_t>();
    }
    r.expect_end();
    if (const auto problem = check_codebook(cb, cb.size()); !problem.empty())
        throw Error("invalid_codebook", source + ": " + problem);
    return cb;
}

inline void write_codebook(const Codebook& cb, const std::filesystem::path& path) {
    write_file_bytes(path, encode_codebook(cb));
}

inline Codebook read_codebook(const std::filesystem::path& path) {
    return decode_codebook(read_file_bytes(path), path.string());
}

} // namespace oigs
