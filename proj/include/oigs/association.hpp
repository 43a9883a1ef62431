#pragma once

// Binds every 3D instance to at most one mask per view. Candidates are scored
// by silhouette IoU times a feature agreement term.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "oigs/codebook.hpp"
#include "oigs/core.hpp"
#include "oigs/rasterizer.hpp"

namespace oigs {

enum class AveragingDomain { union_, intersection, image };

inline const char* to_string(AveragingDomain d) {
    switch (d) {
    case AveragingDomain::union_: return "union";
    case AveragingDomain::intersection: return "intersection";
    case AveragingDomain::image: return "image";
    }
    return "?";
}

inline AveragingDomain parse_averaging_domain(const std::string& s) {
    if (s == "union") return AveragingDomain::union_;
    if (s == "intersection") return AveragingDomain::intersection;
    if (s == "image") return AveragingDomain::image;
    throw Error("invalid_config", "unknown averaging domain '" + s + "'");
}

struct AssociationConfig {
    double binarize_threshold = 0.5;
    double iou_floor = 0.05;
    AveragingDomain averaging = AveragingDomain::union_;
};

struct AssociationEntry {
    std::uint32_t instance_id = 0;
    ViewId view_id = 0;
    std::uint32_t mask_id = 0;
    double iou = 0.0;
    double feature_term = 0.0;
    double score = 0.0;

    bool operator==(const AssociationEntry&) const = default;
};

struct AssociationTable {
    std::vector<AssociationEntry> entries; // sorted by (instance, view)
    std::vector<std::uint32_t> unassociated; // occupied instances with no entry

    const AssociationEntry* find(std::uint32_t instance, ViewId view) const {
        for (const auto& e : entries)
            if (e.instance_id == instance && e.view_id == view) return &e;
        return nullptr;
    }
};

/// |a and b| / |a or b|; 0 when both are empty.
inline double iou(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b) {
    if (a.size() != b.size()) throw Error("shape_mismatch", "iou operands differ in size");
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        inter += (a[i] && b[i]) ? 1 : 0;
        uni += (a[i] || b[i]) ? 1 : 0;
    }
    return uni ? double(inter) / double(uni) : 0.0;
}

/// Per-mask pseudo ground truth: the fine center carrying the most blend weight inside the mask.
inline Eigen::MatrixXd mask_pseudo_features(const BlendRecord& rec, const InstanceMaskRaster& raster,
                                            const Codebook& cb) {
    const std::uint32_t max_label = raster.max_label();
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(Eigen::Index(max_label) + 1, kInstanceFeatureDim);
    std::vector<std::vector<double>> mass(max_label + 1);
    for (std::size_t p = 0; p < raster.labels.size(); ++p) {
        const auto l = raster.labels[p];
        if (l == 0) continue;
        auto& m = mass[l];
        if (m.empty()) m.assign(cb.instance_count(), 0.0);
        for (const auto& e : rec.pixel(p)) m[cb.instance_of(e.gaussian_index)] += e.weight;
    }
    for (std::uint32_t l = 1; l <= max_label; ++l) {
        if (mass[l].empty()) continue;
        const auto best = std::max_element(mass[l].begin(), mass[l].end()) - mass[l].begin();
        if (mass[l][best] > 0.0) out.row(l) = cb.fine_centers.row(best).cast<double>();
    }
    return out;
}

inline AssociationTable associate(const GaussianScene& scene, const Codebook& cb, const std::vector<CameraView>& views,
                                  const std::vector<InstanceMaskRaster>& rasters, const AssociationConfig& config = {}) {
    if (!scene.has_features()) throw Error("missing_features", "scene has no instance features");
    if (const auto problem = check_codebook(cb, scene.size()); !problem.empty())
        throw Error("invalid_codebook", problem);
    if (!(config.binarize_threshold > 0.0 && config.binarize_threshold <= 1.0))
        throw Error("invalid_config", "binarize_threshold must be in (0,1]");
    if (!(config.iou_floor >= 0.0 && config.iou_floor <= 1.0))
        throw Error("invalid_config", "iou_floor must be in [0,1]");

    const Eigen::MatrixXd features = feature_matrix(scene);
    const double scale = feature_scale(features, true);
    const auto members = cb.members();

    AssociationTable table;
    std::vector<bool> bound(cb.instance_count(), false);
    for (const auto& view : views) {
        const InstanceMaskRaster* raster = nullptr;
        for (const auto& r : rasters)
            if (r.view_id == view.view_id) raster = &r;
        if (!raster) throw Error("missing_raster", "no mask raster for view " + std::to_string(view.view_id));
        if (const auto problem = check_raster(*raster, &view); !problem.empty())
            throw Error("invalid_raster", "view " + std::to_string(view.view_id) + ": " + problem);

        const auto splats = project(scene, view);
        const BlendRecord full = blend_weights(splats, view.width, view.height);
        const Eigen::MatrixXd pseudo = mask_pseudo_features(full, *raster, cb);
        const std::uint32_t max_label = raster->max_label();
        std::vector<std::vector<std::uint8_t>> binaries(max_label + 1);
        for (std::uint32_t l = 1; l <= max_label; ++l) binaries[l] = raster->binary(l);

        for (std::uint32_t inst = 0; inst < members.size(); ++inst) {
            if (members[inst].empty()) continue;
            const FeatureMap m = render_instance_map(splats, features, members[inst], view.width, view.height);
            const auto silhouette = binarize_alpha(m, config.binarize_threshold);

            AssociationEntry best;
            bool found = false;
            for (std::uint32_t l = 1; l <= max_label; ++l) {
                const double v = iou(silhouette, binaries[l]);
                if (v < config.iou_floor || v <= 0.0) continue;
                double l1 = 0.0;
                std::size_t count = 0;
                for (std::size_t p = 0; p < m.pixel_count(); ++p) {
                    const bool in_a = silhouette[p] != 0;
                    const bool in_b = binaries[l][p] != 0;
                    const bool use = config.averaging == AveragingDomain::image ||
                                     (config.averaging == AveragingDomain::union_ ? (in_a || in_b) : (in_a && in_b));
                    if (!use) continue;
                    const auto px = m.pixel(p);
                    for (int c = 0; c < kInstanceFeatureDim; ++c)
                        l1 += std::abs(px[c] - (in_b ? pseudo(l, c) : 0.0));
                    ++count;
                }
                const double mean_l1 = count ? l1 / double(count) : 0.0;
                const double term = 1.0 - std::clamp(mean_l1 / scale, 0.0, 1.0);
                const double score = v * term;
                if (!found || score > best.score) {
                    best = {inst, view.view_id, l, v, term, score};
                    found = true;
                }
            }
            if (found && best.score > 0.0) {
                table.entries.push_back(best);
                bound[inst] = true;
            }
        }
    }
    std::stable_sort(table.entries.begin(), table.entries.end(), [](const auto& a, const auto& b) {
        return a.instance_id != b.instance_id ? a.instance_id < b.instance_id : a.view_id < b.view_id;
    });
    for (std::uint32_t inst = 0; inst < members.size(); ++inst)
        if (!members[inst].empty() && !bound[inst]) table.unassociated.push_back(inst);
    return table;
}

inline std::string encode_associations(const AssociationTable& table) {
    std::ostringstream os;
    os << std::setprecision(9);
    os << "instance_id\tview_id\tmask_id\tiou\tfeature_term\tscore\n";
    for (const auto& e : table.entries)
        os << e.instance_id << '\t' << e.view_id << '\t' << e.mask_id << '\t' << e.iou << '\t' << e.feature_term
           << '\t' << e.score << '\n';
    for (auto inst : table.unassociated) os << "# unassociated\t" << inst << '\n';
    return os.str();
}

inline AssociationTable parse_associations(const std::string& text, const std::string& source) {
    AssociationTable table;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    bool header = false;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        if (line.rfind("# unassociated\t", 0) == 0) {
            table.unassociated.push_back(static_cast<std::uint32_t>(std::stoul(line.substr(15))));
            continue;
        }
        if (line[0] == '#') continue;
        if (!header) {
            header = true;
            continue;
        }
        std::istringstream ls(line);
        AssociationEntry e;
        if (!(ls >> e.instance_id >> e.view_id >> e.mask_id >> e.iou >> e.feature_term >> e.score))
            throw Error("parse", source + ":" + std::to_string(lineno) + ": malformed association row");
        table.entries.push_back(e);
    }
    return table;
}

} // namespace oigs
