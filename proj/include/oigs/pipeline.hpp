#pragma once

// Run-directory driver: every stage reads its upstream artifacts from one
// directory, writes its outputs there, and records content hashes in
// manifest.tsv so later stages can refuse stale or missing inputs.

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "oigs/association.hpp"
#include "oigs/codebook.hpp"
#include "oigs/core.hpp"
#include "oigs/instance_train.hpp"
#include "oigs/query_eval.hpp"
#include "oigs/scene_io.hpp"
#include "oigs/semantics.hpp"
#include "oigs/synth.hpp"

namespace oigs {

namespace fs = std::filesystem;

inline std::uint64_t fnv1a64(const std::vector<std::uint8_t>& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (auto b : bytes) {
        h ^= b;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << v;
    return os.str();
}

inline std::string hash_file(const fs::path& path) { return hex64(fnv1a64(read_file_bytes(path))); }

// ---------------------------------------------------------------------------
// Configuration

struct RunConfig {
    std::map<std::string, std::string> values;

    static const std::vector<std::pair<std::string, std::string>>& defaults() {
        static const std::vector<std::pair<std::string, std::string>> d = {
            {"seed", "0"},
            {"n_objects", "6"},
            {"gaussians_per_object", "48"},
            {"n_views", "8"},
            {"image_size", "64"},
            {"embed_dim", "16"},
            {"noise", "0.1"},
            {"corrupt", "0"},
            {"iterations", "500"},
            {"learning_rate", "0.01"},
            {"lambda_s", "1"},
            {"lambda_c", "1"},
            {"batch_views", "1"},
            {"init_sigma", "0.01"},
            {"debug_dump", "0"},
            {"k1", "8"},
            {"k2", "4"},
            {"position_weight", "1"},
            {"refine_iterations", "200"},
            {"refine_learning_rate", "0.01"},
            {"reassign_every", "50"},
            {"use_refined", "1"},
            {"binarize_threshold", "0.5"},
            {"iou_floor", "0.05"},
            {"averaging", "union"},
            {"alpha", "0.4"},
            {"temperature", "1"},
            {"aggregation", "attention"},
            {"accuracy_mode", "class_recall"},
            {"select_threshold", "0.5"},
        };
        return d;
    }

    RunConfig() {
        for (const auto& [k, v] : defaults()) values[k] = v;
    }

    void set(const std::string& key, const std::string& value) {
        if (!values.contains(key)) throw Error("invalid_config", "unknown key '" + key + "'");
        values[key] = value;
    }

    const std::string& str(const std::string& key) const {
        const auto it = values.find(key);
        if (it == values.end()) throw Error("invalid_config", "unknown key '" + key + "'");
        return it->second;
    }

    double num(const std::string& key) const {
        const std::string& s = str(key);
        std::size_t used = 0;
        double v = 0.0;
        try {
            v = std::stod(s, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used == 0 || used != s.size()) throw Error("invalid_config", "key '" + key + "' expects a number, got '" + s + "'");
        return v;
    }

    long long integer(const std::string& key) const {
        const std::string& s = str(key);
        std::size_t used = 0;
        long long v = 0;
        try {
            v = std::stoll(s, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used == 0 || used != s.size())
            throw Error("invalid_config", "key '" + key + "' expects an integer, got '" + s + "'");
        return v;
    }

    std::uint64_t seed() const {
        const std::string& s = str("seed");
        if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos)
            throw Error("invalid_config", "seed must be a non-negative integer");
        return std::stoull(s);
    }
};

/// `key = value` lines; '#' starts a comment.
inline void apply_config_text(RunConfig& config, const std::string& text, const std::string& source) {
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        const auto e = s.find_last_not_of(" \t\r");
        return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw Error("invalid_config", source + ":" + std::to_string(lineno) + ": expected key = value");
        config.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
}

inline void apply_config_file(RunConfig& config, const fs::path& path) {
    const auto bytes = read_file_bytes(path);
    apply_config_text(config, std::string(bytes.begin(), bytes.end()), path.string());
}

inline SynthConfig synth_config(const RunConfig& c) {
    SynthConfig s;
    s.n_objects = static_cast<int>(c.integer("n_objects"));
    s.gaussians_per_object = static_cast<int>(c.integer("gaussians_per_object"));
    s.n_views = static_cast<int>(c.integer("n_views"));
    s.image_size = static_cast<int>(c.integer("image_size"));
    s.embed_dim = static_cast<int>(c.integer("embed_dim"));
    s.embed_noise_sigma = c.num("noise");
    s.corrupt_view_fraction = c.num("corrupt");
    s.seed = c.seed();
    return s;
}

inline TrainConfig train_config(const RunConfig& c) {
    TrainConfig t;
    t.iterations = static_cast<int>(c.integer("iterations"));
    t.learning_rate = c.num("learning_rate");
    t.lambda_s = c.num("lambda_s");
    t.lambda_c = c.num("lambda_c");
    t.batch_views = static_cast<int>(c.integer("batch_views"));
    t.init_sigma = c.num("init_sigma");
    t.seed = c.seed();
    return t;
}

inline CodebookConfig codebook_config(const RunConfig& c) {
    return {static_cast<int>(c.integer("k1")), static_cast<int>(c.integer("k2")), c.num("position_weight"), c.seed()};
}

inline RefineConfig refine_config(const RunConfig& c) {
    return {static_cast<int>(c.integer("refine_iterations")), c.num("refine_learning_rate"),
            static_cast<int>(c.integer("reassign_every"))};
}

inline AssociationConfig association_config(const RunConfig& c) {
    return {c.num("binarize_threshold"), c.num("iou_floor"), parse_averaging_domain(c.str("averaging"))};
}

inline FusionConfig fusion_config(const RunConfig& c) {
    return {c.num("alpha"), c.num("temperature"), parse_aggregation_mode(c.str("aggregation"))};
}

// ---------------------------------------------------------------------------
// Manifest

struct ManifestRow {
    std::string stage;
    std::string role; // config | input | output
    std::string name;
    std::string value;

    bool operator==(const ManifestRow&) const = default;
};

inline const std::vector<std::string>& stage_names() {
    static const std::vector<std::string> names = {"synth", "train-features", "build-codebook", "refine",
                                                   "associate", "fuse", "aggregate", "query",
                                                   "eval-3d", "eval-2d"};
    return names;
}

inline std::size_t stage_rank(const std::string& stage) {
    const auto& names = stage_names();
    const auto it = std::find(names.begin(), names.end(), stage);
    if (it == names.end()) throw Error("unknown_stage", "unknown stage '" + stage + "'");
    return static_cast<std::size_t>(it - names.begin());
}

inline constexpr const char* kManifestName = "manifest.tsv";

inline std::vector<ManifestRow> read_manifest(const fs::path& dir) {
    std::vector<ManifestRow> rows;
    const fs::path path = dir / kManifestName;
    if (!fs::exists(path)) return rows;
    const auto bytes = read_file_bytes(path);
    std::istringstream in(std::string(bytes.begin(), bytes.end()));
    std::string line;
    bool header = true;
    while (std::getline(in, line)) {
        if (header) {
            header = false;
            continue;
        }
        if (line.empty()) continue;
        std::array<std::string, 5> f;
        std::istringstream ls(line);
        for (auto& field : f) std::getline(ls, field, '\t');
        rows.push_back({f[0], f[2], f[3], f[4]});
    }
    return rows;
}

inline void write_manifest(const fs::path& dir, std::vector<ManifestRow> rows) {
    std::stable_sort(rows.begin(), rows.end(),
                     [](const auto& a, const auto& b) { return stage_rank(a.stage) < stage_rank(b.stage); });
    std::ostringstream os;
    os << "stage\tseq\trole\tname\tvalue\n";
    for (const auto& r : rows)
        os << r.stage << '\t' << stage_rank(r.stage) + 1 << '\t' << r.role << '\t' << r.name << '\t' << r.value << '\n';
    const std::string s = os.str();
    write_file_bytes(dir / kManifestName, std::vector<std::uint8_t>(s.begin(), s.end()));
}

/// Tracks one stage's inputs and outputs inside a run directory.
class StageContext {
public:
    StageContext(fs::path dir, std::string stage, const RunConfig& config)
        : dir_(std::move(dir)), stage_(std::move(stage)), config_(config), manifest_(read_manifest(dir_)) {
        stage_rank(stage_);
    }

    const RunConfig& config() const { return config_; }
    const fs::path& dir() const { return dir_; }

    /// Declares an input produced by `producer`; it must exist and match the recorded hash.
    fs::path input(const std::string& name, const std::string& artifact, const std::string& producer) {
        const fs::path path = dir_ / name;
        const ManifestRow* recorded = nullptr;
        for (const auto& r : manifest_)
            if (r.stage == producer && r.role == "output" && r.name == name) recorded = &r;
        if (!fs::exists(path) || !recorded)
            throw Error("missing_upstream", "requires " + artifact + " (run " + producer + ")");
        const std::string h = hash_file(path);
        if (h != recorded->value)
            throw Error("stale_upstream", name + " changed since " + producer + " ran (rerun " + producer + ")");
        rows_.push_back({stage_, "input", name, h});
        return path;
    }

    bool has_stage(const std::string& stage) const {
        return std::any_of(manifest_.begin(), manifest_.end(), [&](const auto& r) { return r.stage == stage; });
    }

    void echo(const std::string& key) { rows_.push_back({stage_, "config", key, config_.str(key)}); }

    fs::path output(const std::string& name, const std::vector<std::uint8_t>& bytes) {
        const fs::path path = dir_ / name;
        write_file_bytes(path, bytes);
        rows_.push_back({stage_, "output", name, hex64(fnv1a64(bytes))});
        return path;
    }

    fs::path output_text(const std::string& name, const std::string& text) {
        return output(name, std::vector<std::uint8_t>(text.begin(), text.end()));
    }

    /// Replaces this stage's manifest rows.
    void commit() {
        std::erase_if(manifest_, [&](const ManifestRow& r) { return r.stage == stage_; });
        manifest_.insert(manifest_.end(), rows_.begin(), rows_.end());
        write_manifest(dir_, manifest_);
    }

private:
    fs::path dir_;
    std::string stage_;
    const RunConfig& config_;
    std::vector<ManifestRow> manifest_;
    std::vector<ManifestRow> rows_;
};

// ---------------------------------------------------------------------------
// Stage helpers

inline std::string embedding_name(const char* kind, ViewId view) {
    return std::string(kind) + "_" + std::to_string(view) + ".oige";
}

inline std::string text_of(const fs::path& path) {
    const auto bytes = read_file_bytes(path);
    return {bytes.begin(), bytes.end()};
}

struct SynthInputs {
    std::vector<CameraView> views;
    std::vector<InstanceMaskRaster> rasters;
};

inline SynthInputs load_views_and_masks(StageContext& ctx) {
    SynthInputs in;
    in.views = read_cameras(ctx.input("cameras.oigc", "cameras", "synth"));
    for (const auto& v : in.views)
        in.rasters.push_back(read_mask_raster(ctx.input(mask_filename(v.view_id).string(), "mask rasters", "synth")));
    return in;
}

/// Scene and codebook consumed by the stages after refinement.
inline std::pair<GaussianScene, Codebook> load_instances(StageContext& ctx) {
    const fs::path features = ctx.input("features.oigs", "trained features", "train-features");
    const fs::path codebook = ctx.input("codebook.oigk", "codebook", "build-codebook");
    ctx.echo("use_refined");
    if (ctx.config().integer("use_refined") != 0)
        return {read_scene(ctx.input("refined.oigs", "refined features", "refine")),
                read_codebook(ctx.input("codebook_refined.oigk", "refined codebook", "refine"))};
    return {read_scene(features), read_codebook(codebook)};
}

inline std::vector<int> parse_gaussian_labels(const std::string& text, const std::string& source) {
    std::vector<int> out;
    std::istringstream in(text);
    std::string line;
    bool header = true;
    while (std::getline(in, line)) {
        if (header) {
            header = false;
            continue;
        }
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::size_t index = 0;
        int label = 0;
        if (!(ls >> index >> label) || index != out.size())
            throw Error("parse", source + ": malformed gaussian label row " + std::to_string(out.size()));
        out.push_back(label);
    }
    return out;
}

struct StageReport {
    std::vector<std::string> lines; // human-readable summary
};

// ---------------------------------------------------------------------------
// Stages

inline StageReport stage_synth(StageContext& ctx) {
    for (const char* k : {"seed", "n_objects", "gaussians_per_object", "n_views", "image_size", "embed_dim", "noise",
                          "corrupt"})
        ctx.echo(k);
    const SynthOutput out = generate(synth_config(ctx.config()));
    ctx.output("scene.oigs", encode_scene(out.scene));
    ctx.output_text("cameras.oigc", encode_cameras(out.views));
    for (const auto& r : out.rasters) ctx.output(mask_filename(r.view_id).string(), encode_mask_raster(r));
    for (const auto& e : out.local) ctx.output(embedding_name("local", e.view_id), encode_embeddings(e));
    for (const auto& e : out.context) ctx.output(embedding_name("context", e.view_id), encode_embeddings(e));
    ctx.output("text.oige", encode_embeddings(out.text));
    ctx.output_text("gt_manifest.tsv", encode_gt_manifest(out.truth));
    return {{"gaussians " + std::to_string(out.scene.size()) + ", views " + std::to_string(out.views.size()) +
             ", masks " + std::to_string(out.truth.masks.size()) + ", corrupted " +
             std::to_string(out.truth.corrupted_count())}};
}

inline StageReport stage_train(StageContext& ctx) {
    for (const char* k : {"seed", "iterations", "learning_rate", "lambda_s", "lambda_c", "batch_views", "init_sigma"})
        ctx.echo(k);
    const GaussianScene scene = read_scene(ctx.input("scene.oigs", "scene", "synth"));
    const SynthInputs in = load_views_and_masks(ctx);
    const TrainResult result = train(scene, in.views, in.rasters, train_config(ctx.config()));
    ctx.output("features.oigs", encode_scene(result.scene));
    ctx.output_text("loss_trace.tsv", encode_loss_trace(result.trace));
    if (ctx.config().integer("debug_dump") != 0) {
        const Eigen::MatrixXd f = feature_matrix(result.scene);
        for (const auto& v : in.views) {
            const FeatureMap m = render(blend_weights(project(result.scene, v), v.width, v.height), f);
            write_channel_pgm(m.data, m.width, m.height, m.channels, 0,
                              ctx.dir() / "debug" / ("feature0_" + std::to_string(v.view_id) + ".pgm"));
        }
    }
    std::ostringstream os;
    os << "loss " << result.trace.front().total << " -> " << result.trace.back().total << ", increasing windows "
       << result.increasing_windows;
    return {{os.str()}};
}

inline StageReport stage_build_codebook(StageContext& ctx) {
    for (const char* k : {"seed", "k1", "k2", "position_weight"}) ctx.echo(k);
    const GaussianScene scene = read_scene(ctx.input("features.oigs", "trained features", "train-features"));
    const Codebook cb = build_codebook(scene, codebook_config(ctx.config()));
    ctx.output("codebook.oigk", encode_codebook(cb));
    const auto members = cb.members();
    const auto occupied = std::count_if(members.begin(), members.end(), [](const auto& m) { return !m.empty(); });
    return {{"instances " + std::to_string(occupied) + " of " + std::to_string(cb.instance_count())}};
}

inline StageReport stage_refine(StageContext& ctx) {
    for (const char* k : {"refine_iterations", "refine_learning_rate", "reassign_every"}) ctx.echo(k);
    const GaussianScene scene = read_scene(ctx.input("features.oigs", "trained features", "train-features"));
    const Codebook cb = read_codebook(ctx.input("codebook.oigk", "codebook", "build-codebook"));
    const auto views = read_cameras(ctx.input("cameras.oigc", "cameras", "synth"));
    const RefineResult result = refine_lp(scene, cb, views, refine_config(ctx.config()));
    ctx.output("refined.oigs", encode_scene(result.scene));
    ctx.output("codebook_refined.oigk", encode_codebook(result.codebook));
    std::ostringstream trace;
    trace << std::setprecision(9) << "iter\tL_p\n";
    for (std::size_t i = 0; i < result.trace.size(); ++i) trace << i << '\t' << result.trace[i] << '\n';
    ctx.output_text("refine_trace.tsv", trace.str());
    std::ostringstream os;
    os << "L_p " << result.trace.front() << " -> " << result.trace.back();
    return {{os.str()}};
}

inline StageReport stage_associate(StageContext& ctx) {
    for (const char* k : {"binarize_threshold", "iou_floor", "averaging"}) ctx.echo(k);
    const auto [scene, cb] = load_instances(ctx);
    const SynthInputs in = load_views_and_masks(ctx);
    const AssociationTable table = associate(scene, cb, in.views, in.rasters, association_config(ctx.config()));
    ctx.output_text("associations.tsv", encode_associations(table));
    return {{"associations " + std::to_string(table.entries.size()) + ", unassociated instances " +
             std::to_string(table.unassociated.size())}};
}

inline StageReport stage_fuse(StageContext& ctx) {
    ctx.echo("alpha");
    const auto views = read_cameras(ctx.input("cameras.oigc", "cameras", "synth"));
    const double alpha = ctx.config().num("alpha");
    for (const auto& v : views) {
        const auto local = read_embeddings(ctx.input(embedding_name("local", v.view_id), "local embeddings", "synth"));
        const auto context =
            read_embeddings(ctx.input(embedding_name("context", v.view_id), "context embeddings", "synth"));
        ctx.output(embedding_name("fused", v.view_id), encode_embeddings(fuse_mask_embeddings(local, context, alpha)));
    }
    return {{"fused views " + std::to_string(views.size())}};
}

inline StageReport stage_aggregate(StageContext& ctx) {
    for (const char* k : {"temperature", "aggregation"}) ctx.echo(k);
    const auto [scene, cb] = load_instances(ctx);
    const AssociationTable table =
        parse_associations(text_of(ctx.input("associations.tsv", "associations", "associate")), "associations.tsv");
    const auto views = read_cameras(ctx.input("cameras.oigc", "cameras", "synth"));
    std::vector<MaskEmbeddingSet> fused;
    for (const auto& v : views)
        fused.push_back(read_embeddings(ctx.input(embedding_name("fused", v.view_id), "fused embeddings", "fuse")));
    const SemanticTable st = bind_instances(table, fused, cb.instance_count(), fusion_config(ctx.config()));
    ctx.output("semantic.oigf", encode_semantic_table(st));
    ctx.output_text("attention_weights.tsv", encode_weights(st));
    const auto flagged = std::count(st.flagged.begin(), st.flagged.end(), true);
    return {{"instances " + std::to_string(st.size()) + ", without embedding " + std::to_string(flagged)}};
}

inline StageReport stage_query(StageContext& ctx) {
    const auto [scene, cb] = load_instances(ctx);
    const SemanticTable st = read_semantic_table(ctx.input("semantic.oigf", "semantic table", "aggregate"));
    const MaskEmbeddingSet text = read_embeddings(ctx.input("text.oige", "text embeddings", "synth"));
    const QueryResult q = classify_gaussians(st, cb, text);
    std::ostringstream inst;
    inst << std::setprecision(9) << "instance_id\tlabel\tsimilarity\n";
    for (std::size_t i = 0; i < q.instance_label.size(); ++i)
        inst << i << '\t' << q.instance_label[i] << '\t' << q.instance_similarity[i] << '\n';
    ctx.output_text("query.tsv", inst.str());
    std::ostringstream gl;
    gl << "gaussian\tlabel\n";
    for (std::size_t i = 0; i < q.gaussian_label.size(); ++i) gl << i << '\t' << q.gaussian_label[i] << '\n';
    ctx.output_text("gaussian_labels.tsv", gl.str());
    const auto unassigned = std::count(q.gaussian_label.begin(), q.gaussian_label.end(), kUnassigned);
    return {{"labeled gaussians " + std::to_string(q.gaussian_label.size() - unassigned) + ", unassigned " +
             std::to_string(unassigned)}};
}

inline StageReport stage_eval_3d(StageContext& ctx) {
    ctx.echo("accuracy_mode");
    const GaussianScene scene = read_scene(ctx.input("scene.oigs", "scene", "synth"));
    const GroundTruth truth = parse_gt_manifest(text_of(ctx.input("gt_manifest.tsv", "gt manifest", "synth")));
    const auto labels =
        parse_gaussian_labels(text_of(ctx.input("gaussian_labels.tsv", "query result", "query")), "gaussian_labels.tsv");
    if (!scene.has_gt_labels()) throw Error("missing_labels", "scene carries no gt labels");
    if (labels.size() != scene.size()) throw Error("shape_mismatch", "label count differs from scene size");
    std::vector<std::uint32_t> gt(scene.size());
    for (std::size_t i = 0; i < scene.size(); ++i) gt[i] = *scene.gaussians[i].gt_label;
    const MetricReport r = eval_pointcloud(labels, gt, static_cast<int>(truth.labels.size()),
                                           parse_accuracy_mode(ctx.config().str("accuracy_mode")));
    ctx.output_text("metrics_3d.tsv", encode_metrics_3d(r, truth.labels));
    std::ostringstream os;
    os << std::fixed << std::setprecision(4) << "mIoU " << r.miou << " mAcc " << r.macc;
    return {{os.str()}};
}

inline StageReport stage_eval_2d(StageContext& ctx) {
    ctx.echo("select_threshold");
    const GaussianScene scene = read_scene(ctx.input("scene.oigs", "scene", "synth"));
    const GroundTruth truth = parse_gt_manifest(text_of(ctx.input("gt_manifest.tsv", "gt manifest", "synth")));
    const SynthInputs in = load_views_and_masks(ctx);
    QueryResult q;
    q.gaussian_label =
        parse_gaussian_labels(text_of(ctx.input("gaussian_labels.tsv", "query result", "query")), "gaussian_labels.tsv");
    const double threshold = ctx.config().num("select_threshold");
    std::vector<QueryScore> scores;
    for (std::size_t v = 0; v < in.views.size(); ++v) {
        const auto& view = in.views[v];
        for (std::size_t k = 0; k < truth.labels.size(); ++k) {
            const std::uint32_t mask = truth.mask_of(view.view_id, static_cast<std::uint32_t>(k));
            const std::vector<std::uint8_t> gt =
                mask ? in.rasters[v].binary(mask) : std::vector<std::uint8_t>(in.rasters[v].labels.size(), 0);
            const Selection s = select_and_render(static_cast<int>(k), q, scene, view, gt, threshold);
            scores.push_back({static_cast<int>(k), view.view_id, s.iou});
            InstanceMaskRaster img{view.view_id, view.width, view.height,
                                   std::vector<std::uint32_t>(s.mask.begin(), s.mask.end())};
            ctx.output("selections/select_" + std::to_string(k) + "_" + std::to_string(view.view_id) + ".pgm",
                       encode_mask_raster(img));
        }
    }
    const Report2D r = summarize_2d(std::move(scores));
    ctx.output_text("metrics_2d.tsv", encode_metrics_2d(r));
    std::ostringstream os;
    os << std::fixed << std::setprecision(4) << "mIoU " << r.miou << " mAcc@0.25 " << r.acc_25 << " mAcc@0.5 "
       << r.acc_50;
    return {{os.str()}};
}

/// Runs one stage against `dir` and records it in the manifest.
inline StageReport run_stage(const std::string& stage, const fs::path& dir, const RunConfig& config) {
    StageContext ctx(dir, stage, config);
    StageReport report;
    if (stage == "synth") report = stage_synth(ctx);
    else if (stage == "train-features") report = stage_train(ctx);
    else if (stage == "build-codebook") report = stage_build_codebook(ctx);
    else if (stage == "refine") report = stage_refine(ctx);
    else if (stage == "associate") report = stage_associate(ctx);
    else if (stage == "fuse") report = stage_fuse(ctx);
    else if (stage == "aggregate") report = stage_aggregate(ctx);
    else if (stage == "query") report = stage_query(ctx);
    else if (stage == "eval-3d") report = stage_eval_3d(ctx);
    else if (stage == "eval-2d") report = stage_eval_2d(ctx);
    ctx.commit();
    return report;
}

} // namespace oigs
