#pragma once

// Per-mask fusion of local and context embeddings, and per-instance
// aggregation of multi-view embeddings weighted by agreement with their mean.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "oigs/association.hpp"
#include "oigs/core.hpp"
#include "oigs/scene_io.hpp"

namespace oigs {

enum class AggregationMode { attention, mean };

inline const char* to_string(AggregationMode m) { return m == AggregationMode::attention ? "attention" : "mean"; }

inline AggregationMode parse_aggregation_mode(const std::string& s) {
    if (s == "attention") return AggregationMode::attention;
    if (s == "mean") return AggregationMode::mean;
    throw Error("invalid_config", "unknown aggregation mode '" + s + "'");
}

struct FusionConfig {
    double alpha = 0.4;
    double temperature = 1.0;
    AggregationMode mode = AggregationMode::attention;
};

inline std::string check_config(const FusionConfig& c) {
    if (!(c.alpha >= 0.0 && c.alpha <= 1.0)) return "alpha must be in [0,1]";
    if (!(c.temperature > 0.0)) return "temperature must be > 0";
    return {};
}

/// Row-wise alpha * context + (1 - alpha) * local.
inline MaskEmbeddingSet fuse_mask_embeddings(const MaskEmbeddingSet& local, const MaskEmbeddingSet& context,
                                             double alpha) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw Error("invalid_config", "alpha must be in [0,1]");
    if (local.view_id != context.view_id)
        throw Error("shape_mismatch", "local and context embeddings belong to different views");
    if (local.rows.rows() != context.rows.rows() || local.rows.cols() != context.rows.cols())
        throw Error("shape_mismatch", "local and context embeddings differ in shape");
    MaskEmbeddingSet out{local.view_id, EmbeddingKind::fused, {}};
    if (alpha == 0.0) {
        out.rows = local.rows;
    } else if (alpha == 1.0) {
        out.rows = context.rows;
    } else {
        const float a = static_cast<float>(alpha);
        const float b = static_cast<float>(1.0 - alpha);
        out.rows = a * context.rows + b * local.rows;
    }
    return out;
}

struct Aggregate {
    Eigen::VectorXd embedding;
    Eigen::VectorXd weights;
};

/// Softmax over cosine similarity to the mean row, then the weighted sum.
inline Aggregate attention_aggregate(const Eigen::MatrixXd& features, double temperature = 1.0) {
    if (features.rows() == 0) throw Error("empty_input", "attention needs at least one row");
    if (!(temperature > 0.0)) throw Error("invalid_config", "temperature must be > 0");
    for (Eigen::Index i = 0; i < features.rows(); ++i)
        if (!(features.row(i).norm() > 0.0))
            throw Error("zero_norm_row", "row " + std::to_string(i) + " has zero norm");
    const Eigen::RowVectorXd mean = features.colwise().mean();
    const double mean_norm = mean.norm();
    Eigen::VectorXd s(features.rows());
    for (Eigen::Index i = 0; i < features.rows(); ++i)
        s(i) = mean_norm > 0.0 ? features.row(i).dot(mean) / (features.row(i).norm() * mean_norm) : 0.0;
    Eigen::VectorXd w = ((s.array() - s.maxCoeff()) / temperature).exp();
    w /= w.sum();
    return {features.transpose() * w, w};
}

inline Aggregate mean_aggregate(const Eigen::MatrixXd& features) {
    if (features.rows() == 0) throw Error("empty_input", "mean needs at least one row");
    const Eigen::VectorXd w = Eigen::VectorXd::Constant(features.rows(), 1.0 / double(features.rows()));
    return {features.transpose() * w, w};
}

struct WeightRecord {
    std::uint32_t instance_id = 0;
    ViewId view_id = 0;
    std::uint32_t mask_id = 0;
    double weight = 0.0;
};

struct SemanticTable {
    Eigen::MatrixXf rows;     // n_instances x D
    std::vector<bool> flagged; // instance has no associated embedding
    std::vector<WeightRecord> weights;

    std::size_t size() const { return static_cast<std::size_t>(rows.rows()); }
    int dim() const { return static_cast<int>(rows.cols()); }
};

inline SemanticTable bind_instances(const AssociationTable& table, const std::vector<MaskEmbeddingSet>& fused,
                                    std::size_t n_instances, const FusionConfig& config = {}) {
    if (const auto problem = check_config(config); !problem.empty()) throw Error("invalid_config", problem);
    int dim = -1;
    for (const auto& set : fused) {
        if (dim >= 0 && set.dim() != dim) throw Error("shape_mismatch", "fused embeddings differ in dimension");
        dim = set.dim();
    }
    if (dim < 0) throw Error("empty_input", "no fused embeddings supplied");

    auto lookup = [&](ViewId view, std::uint32_t mask) -> Eigen::VectorXd {
        for (const auto& set : fused) {
            if (set.view_id != view) continue;
            if (mask == 0 || mask > static_cast<std::uint32_t>(set.count())) break;
            return set.rows.row(Eigen::Index(mask) - 1).transpose().cast<double>();
        }
        throw Error("dangling_reference",
                    "association references view " + std::to_string(view) + " mask " + std::to_string(mask) +
                        " with no embedding row");
    };

    SemanticTable out;
    out.rows = Eigen::MatrixXf::Zero(Eigen::Index(n_instances), dim);
    out.flagged.assign(n_instances, true);
    std::vector<std::vector<const AssociationEntry*>> per(n_instances);
    for (const auto& e : table.entries) {
        if (e.instance_id >= n_instances)
            throw Error("dangling_reference", "association references instance " + std::to_string(e.instance_id));
        per[e.instance_id].push_back(&e);
    }
    for (std::size_t inst = 0; inst < n_instances; ++inst) {
        const auto& list = per[inst];
        if (list.empty()) continue;
        Eigen::MatrixXd f(Eigen::Index(list.size()), dim);
        for (std::size_t k = 0; k < list.size(); ++k) f.row(Eigen::Index(k)) = lookup(list[k]->view_id, list[k]->mask_id);
        const Aggregate agg =
            config.mode == AggregationMode::attention ? attention_aggregate(f, config.temperature) : mean_aggregate(f);
        out.rows.row(Eigen::Index(inst)) = agg.embedding.transpose().cast<float>();
        out.flagged[inst] = false;
        for (std::size_t k = 0; k < list.size(); ++k)
            out.weights.push_back({static_cast<std::uint32_t>(inst), list[k]->view_id, list[k]->mask_id,
                                   agg.weights(Eigen::Index(k))});
    }
    return out;
}

// ---------------------------------------------------------------------------
// Semantic table (.oigf); flagged instances are stored as zero rows.

inline std::vector<std::uint8_t> encode_semantic_table(const SemanticTable& table) {
    if (!table.rows.allFinite()) throw Error("invalid_table", "semantic table has non-finite entries");
    BinaryWriter w;
    w.put_magic("OIGF");
    w.put<std::uint32_t>(static_cast<std::uint32_t>(table.rows.rows()));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(table.rows.cols()));
    for (Eigen::Index r = 0; r < table.rows.rows(); ++r)
        for (Eigen::Index c = 0; c < table.rows.cols(); ++c) w.put<float>(table.rows(r, c));
    return w.bytes();
}

inline SemanticTable decode_semantic_table(std::vector<std::uint8_t> bytes, const std::string& source) {
    BinaryReader r(std::move(bytes), source);
    r.expect_magic("OIGF");
    const auto n = r.get<std::uint32_t>();
    const auto dim = r.get<std::uint32_t>();
    if (dim != 0 && std::uint64_t(n) * dim > r.remaining() / sizeof(float))
        throw Error("truncated", source + ": fewer rows than declared");
    SemanticTable t;
    t.rows.resize(n, dim);
    for (Eigen::Index i = 0; i < t.rows.rows(); ++i) {
        for (Eigen::Index c = 0; c < t.rows.cols(); ++c) {
            const float v = r.get<float>();
            if (!std::isfinite(v))
                throw Error("non_finite",
                            source + ": non-finite value at row " + std::to_string(i) + " col " + std::to_string(c));
            t.rows(i, c) = v;
        }
    }
    r.expect_end();
    t.flagged.resize(n);
    for (Eigen::Index i = 0; i < t.rows.rows(); ++i) t.flagged[i] = t.rows.row(i).isZero(0.0f);
    return t;
}

inline void write_semantic_table(const SemanticTable& table, const std::filesystem::path& path) {
    write_file_bytes(path, encode_semantic_table(table));
}

inline SemanticTable read_semantic_table(const std::filesystem::path& path) {
    return decode_semantic_table(read_file_bytes(path), path.string());
}

inline std::string encode_weights(const SemanticTable& table) {
    std::ostringstream os;
    os << std::setprecision(9);
    os << "instance_id\tview_id\tmask_id\tweight\n";
    for (const auto& w : table.weights)
        os << w.instance_id << '\t' << w.view_id << '\t' << w.mask_id << '\t' << w.weight << '\n';
    return os.str();
}

} // namespace oigs
