#pragma once

// Text queries against per-instance embeddings, point-level segmentation
// metrics, and 2D metrics from rendering selected gaussians.

#include <cmath>
#include <cstdint>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "oigs/codebook.hpp"
#include "oigs/core.hpp"
#include "oigs/rasterizer.hpp"
#include "oigs/semantics.hpp"

namespace oigs {

inline constexpr int kUnassigned = -1;

struct QueryResult {
    std::vector<int> instance_label;         // kUnassigned for flagged instances
    std::vector<double> instance_similarity; // cosine to the chosen label
    std::vector<int> gaussian_label;
    Eigen::MatrixXd similarity; // n_instances x n_labels
};

inline QueryResult classify_gaussians(const SemanticTable& table, const Codebook& cb, const MaskEmbeddingSet& text) {
    if (text.count() == 0) throw Error("empty_input", "no text embeddings");
    if (text.dim() != table.dim())
        throw Error("shape_mismatch", "text embeddings have dimension " + std::to_string(text.dim()) +
                                          ", semantic table has " + std::to_string(table.dim()));
    if (table.size() != cb.instance_count())
        throw Error("shape_mismatch", "semantic table row count does not match codebook instances");
    const Eigen::MatrixXd t = text.rows.cast<double>();
    for (Eigen::Index k = 0; k < t.rows(); ++k)
        if (!(t.row(k).norm() > 0.0)) throw Error("zero_norm_row", "text row " + std::to_string(k) + " has zero norm");

    QueryResult out;
    out.instance_label.assign(table.size(), kUnassigned);
    out.instance_similarity.assign(table.size(), 0.0);
    out.similarity = Eigen::MatrixXd::Zero(Eigen::Index(table.size()), t.rows());
    for (std::size_t i = 0; i < table.size(); ++i) {
        if (table.flagged[i]) continue;
        const Eigen::RowVectorXd row = table.rows.row(Eigen::Index(i)).cast<double>();
        const double rn = row.norm();
        int best = 0;
        for (Eigen::Index k = 0; k < t.rows(); ++k) {
            const double s = rn > 0.0 ? row.dot(t.row(k)) / (rn * t.row(k).norm()) : 0.0;
            out.similarity(Eigen::Index(i), k) = s;
            if (s > out.similarity(Eigen::Index(i), best)) best = static_cast<int>(k);
        }
        out.instance_label[i] = best;
        out.instance_similarity[i] = out.similarity(Eigen::Index(i), best);
    }
    out.gaussian_label.resize(cb.size());
    for (std::size_t g = 0; g < cb.size(); ++g) out.gaussian_label[g] = out.instance_label[cb.instance_of(g)];
    return out;
}

enum class AccuracyMode { class_recall, overall };

inline const char* to_string(AccuracyMode m) { return m == AccuracyMode::class_recall ? "class_recall" : "overall"; }

inline AccuracyMode parse_accuracy_mode(const std::string& s) {
    if (s == "class_recall") return AccuracyMode::class_recall;
    if (s == "overall") return AccuracyMode::overall;
    throw Error("invalid_config", "unknown accuracy mode '" + s + "'");
}

struct MetricReport {
    std::vector<bool> present; // class occurs in ground truth
    std::vector<double> class_iou;
    std::vector<double> class_accuracy;
    std::vector<std::size_t> true_positive, false_positive, false_negative;
    double miou = 0.0;
    double macc = 0.0;
};

/// Point-level IoU and accuracy; unassigned predictions count against their gt class.
inline MetricReport eval_pointcloud(std::span<const int> predicted, std::span<const std::uint32_t> gt, int n_classes,
                                    AccuracyMode mode = AccuracyMode::class_recall) {
    if (predicted.size() != gt.size()) throw Error("shape_mismatch", "prediction and ground truth differ in length");
    if (n_classes < 1) throw Error("invalid_argument", "n_classes must be >= 1");
    MetricReport r;
    const auto nc = static_cast<std::size_t>(n_classes);
    r.present.assign(nc, false);
    r.class_iou.assign(nc, 0.0);
    r.class_accuracy.assign(nc, 0.0);
    r.true_positive.assign(nc, 0);
    r.false_positive.assign(nc, 0);
    r.false_negative.assign(nc, 0);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < gt.size(); ++i) {
        if (gt[i] >= nc) throw Error("invalid_argument", "gt label out of range at gaussian " + std::to_string(i));
        if (predicted[i] >= n_classes) throw Error("invalid_argument", "predicted label out of range");
        r.present[gt[i]] = true;
        if (predicted[i] == static_cast<int>(gt[i])) {
            ++r.true_positive[gt[i]];
            ++correct;
        } else {
            ++r.false_negative[gt[i]];
            if (predicted[i] >= 0) ++r.false_positive[static_cast<std::size_t>(predicted[i])];
        }
    }
    std::size_t present = 0;
    for (std::size_t c = 0; c < nc; ++c) {
        const std::size_t denom = r.true_positive[c] + r.false_positive[c] + r.false_negative[c];
        r.class_iou[c] = denom ? double(r.true_positive[c]) / double(denom) : 0.0;
        const std::size_t support = r.true_positive[c] + r.false_negative[c];
        r.class_accuracy[c] = support ? double(r.true_positive[c]) / double(support) : 0.0;
        if (!r.present[c]) continue;
        ++present;
        r.miou += r.class_iou[c];
        r.macc += r.class_accuracy[c];
    }
    if (present) {
        r.miou /= double(present);
        r.macc /= double(present);
    }
    if (mode == AccuracyMode::overall) r.macc = gt.empty() ? 0.0 : double(correct) / double(gt.size());
    return r;
}

struct Selection {
    std::vector<std::uint8_t> mask;
    double iou = 0.0;
};

/// IoU with both-empty defined as 1.
inline double selection_iou(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b) {
    if (a.size() != b.size()) throw Error("shape_mismatch", "iou operands differ in size");
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        inter += (a[i] && b[i]) ? 1 : 0;
        uni += (a[i] || b[i]) ? 1 : 0;
    }
    return uni ? double(inter) / double(uni) : 1.0;
}

/// Renders the gaussians labeled `label` and compares the silhouette with a gt mask.
inline Selection select_and_render(int label, const QueryResult& result, const GaussianScene& scene,
                                   const CameraView& view, std::span<const std::uint8_t> gt_mask,
                                   double threshold = 0.5) {
    if (result.gaussian_label.size() != scene.size())
        throw Error("shape_mismatch", "query result does not cover the scene");
    std::vector<std::uint32_t> picked;
    for (std::size_t i = 0; i < scene.size(); ++i)
        if (result.gaussian_label[i] == label) picked.push_back(static_cast<std::uint32_t>(i));
    Selection s;
    if (picked.empty()) {
        s.mask.assign(static_cast<std::size_t>(view.width) * view.height, 0);
    } else {
        const auto splats = project(scene, view);
        const Eigen::MatrixXd none(Eigen::Index(scene.size()), 0);
        s.mask = binarize_alpha(render_instance_map(splats, none, picked, view.width, view.height), threshold);
    }
    s.iou = selection_iou(s.mask, gt_mask);
    return s;
}

struct QueryScore {
    int label = 0;
    ViewId view_id = 0;
    double iou = 0.0;
};

struct Report2D {
    std::vector<QueryScore> queries;
    double miou = 0.0;
    double acc_25 = 0.0;
    double acc_50 = 0.0;
};

inline Report2D summarize_2d(std::vector<QueryScore> queries) {
    Report2D r;
    r.queries = std::move(queries);
    if (r.queries.empty()) return r;
    for (const auto& q : r.queries) {
        r.miou += q.iou;
        r.acc_25 += q.iou >= 0.25 ? 1.0 : 0.0;
        r.acc_50 += q.iou >= 0.5 ? 1.0 : 0.0;
    }
    const double n = double(r.queries.size());
    r.miou /= n;
    r.acc_25 /= n;
    r.acc_50 /= n;
    return r;
}

inline std::string encode_metrics_3d(const MetricReport& r, const std::vector<std::string>& labels) {
    std::ostringstream os;
    os << std::setprecision(9);
    os << "class\tlabel\tpresent\tiou\taccuracy\ttp\tfp\tfn\n";
    for (std::size_t c = 0; c < r.class_iou.size(); ++c)
        os << c << '\t' << (c < labels.size() ? labels[c] : std::to_string(c)) << '\t' << int(r.present[c]) << '\t'
           << r.class_iou[c] << '\t' << r.class_accuracy[c] << '\t' << r.true_positive[c] << '\t'
           << r.false_positive[c] << '\t' << r.false_negative[c] << '\n';
    os << "mean\t-\t-\t" << r.miou << '\t' << r.macc << "\t-\t-\t-\n";
    return os.str();
}

inline std::string encode_metrics_2d(const Report2D& r) {
    std::ostringstream os;
    os << std::setprecision(9);
    os << "label\tview_id\tiou\n";
    for (const auto& q : r.queries) os << q.label << '\t' << q.view_id << '\t' << q.iou << '\n';
    os << "# miou\t" << r.miou << "\n# acc@0.25\t" << r.acc_25 << "\n# acc@0.5\t" << r.acc_50 << '\n';
    return os.str();
}

} // namespace oigs
