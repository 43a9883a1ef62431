#pragma once

// Readers and writers for the on-disk interchange formats. Binary formats are
// little-endian; PGM mask pixels are big-endian as the PGM format requires.

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <regex>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "oigs/core.hpp"

namespace oigs {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

inline constexpr std::uint32_t kFormatVersion = 1;

struct FileHeader {
    std::string magic; // 4 ASCII bytes
    std::uint32_t version = kFormatVersion;
};

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("io", "cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("io", "cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("io", "write failed for " + path.string());
}

class BinaryWriter {
public:
    template <class T>
    void put(T value) {
        static_assert(std::is_trivially_copyable_v<T>);
        const auto* p = reinterpret_cast<const std::uint8_t*>(&value);
        bytes_.insert(bytes_.end(), p, p + sizeof(T));
    }
    void put_magic(std::string_view magic) {
        bytes_.insert(bytes_.end(), magic.begin(), magic.end());
        put<std::uint32_t>(kFormatVersion);
    }
    const std::vector<std::uint8_t>& bytes() const { return bytes_; }
    void save(const std::filesystem::path& path) const { write_file_bytes(path, bytes_); }

private:
    std::vector<std::uint8_t> bytes_;
};

/// Bounds-checked cursor over a byte buffer.
class BinaryReader {
public:
    BinaryReader(std::vector<std::uint8_t> bytes, std::string source)
        : bytes_(std::move(bytes)), source_(std::move(source)) {}

    template <class T>
    T get() {
        require(sizeof(T));
        T value;
        std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return value;
    }

    void require(std::size_t n) const {
        if (bytes_.size() - pos_ < n)
            throw Error("truncated", source_ + ": truncated payload at byte " + std::to_string(pos_));
    }

    void expect_magic(std::string_view magic) {
        require(4);
        if (std::memcmp(bytes_.data() + pos_, magic.data(), 4) != 0)
            throw Error("bad_magic", source_ + ": bad magic, expected " + std::string(magic));
        pos_ += 4;
        const auto version = get<std::uint32_t>();
        if (version != kFormatVersion)
            throw Error("bad_version", source_ + ": unsupported version " + std::to_string(version));
    }

    void expect_end() const {
        if (pos_ != bytes_.size())
            throw Error("trailing_data", source_ + ": " + std::to_string(bytes_.size() - pos_) + " trailing bytes");
    }

    std::size_t remaining() const { return bytes_.size() - pos_; }
    const std::string& source() const { return source_; }

private:
    std::vector<std::uint8_t> bytes_;
    std::size_t pos_ = 0;
    std::string source_;
};

// ---------------------------------------------------------------------------
// Scene (.oigs)

inline constexpr std::uint32_t kSceneFlagFeatures = 1u << 0;
inline constexpr std::uint32_t kSceneFlagLabels = 1u << 1;

inline std::vector<std::uint8_t> encode_scene(const GaussianScene& scene) {
    const auto violations = validate_scene(scene);
    if (!violations.empty()) throw Error("invalid_scene", "refusing to write invalid scene: " + describe(violations));
    BinaryWriter w;
    w.put_magic("OIGS");
    w.put<std::uint64_t>(scene.size());
    std::uint32_t flags = 0;
    if (scene.has_features()) flags |= kSceneFlagFeatures;
    if (scene.has_gt_labels()) flags |= kSceneFlagLabels;
    w.put<std::uint32_t>(flags);
    for (const auto& g : scene.gaussians) {
        for (float v : g.position) w.put(v);
        for (float v : g.scale) w.put(v);
        for (float v : g.rotation) w.put(v);
        w.put(g.opacity);
        for (float v : g.color) w.put(v);
        if (flags & kSceneFlagFeatures)
            for (float v : *g.instance_feature) w.put(v);
        if (flags & kSceneFlagLabels) w.put<std::uint32_t>(*g.gt_label);
    }
    return w.bytes();
}

inline void write_scene(const GaussianScene& scene, const std::filesystem::path& path) {
    write_file_bytes(path, encode_scene(scene));
}

inline GaussianScene decode_scene(std::vector<std::uint8_t> bytes, const std::string& source) {
    BinaryReader r(std::move(bytes), source);
    r.expect_magic("OIGS");
    const auto count = r.get<std::uint64_t>();
    const auto flags = r.get<std::uint32_t>();
    if (flags & ~(kSceneFlagFeatures | kSceneFlagLabels))
        throw Error("bad_flags", source + ": unknown scene flags");
    const std::size_t record = 14 * 4 + ((flags & kSceneFlagFeatures) ? 24 : 0) + ((flags & kSceneFlagLabels) ? 4 : 0);
    if (count > r.remaining() / record)
        throw Error("truncated", source + ": declares " + std::to_string(count) + " records but holds " +
                                     std::to_string(r.remaining() / record));
    std::vector<Gaussian> gaussians(count);
    for (auto& g : gaussians) {
        for (float& v : g.position) v = r.get<float>();
        for (float& v : g.scale) v = r.get<float>();
        for (float& v : g.rotation) v = r.get<float>();
        g.opacity = r.get<float>();
        for (float& v : g.color) v = r.get<float>();
        if (flags & kSceneFlagFeatures) {
            Feature6f f;
            for (float& v : f) v = r.get<float>();
            g.instance_feature = f;
        }
        if (flags & kSceneFlagLabels) g.gt_label = r.get<std::uint32_t>();
    }
    r.expect_end();
    GaussianScene scene = make_scene(std::move(gaussians));
    const auto violations = validate_scene(scene);
    if (!violations.empty()) throw Error("invalid_scene", source + ": " + describe(violations));
    return scene;
}

inline GaussianScene read_scene(const std::filesystem::path& path) {
    return decode_scene(read_file_bytes(path), path.string());
}

// ---------------------------------------------------------------------------
// Cameras (.oigc, text)

inline std::string encode_cameras(const std::vector<CameraView>& views) {
    std::ostringstream os;
    os << std::setprecision(17);
    for (const auto& v : views) {
        os << v.view_id << ' ' << v.width << ' ' << v.height << ' ' << v.fx << ' ' << v.fy << ' ' << v.cx << ' '
           << v.cy;
        for (double m : v.world_to_camera) os << ' ' << m;
        os << '\n';
    }
    return os.str();
}

inline void write_cameras(const std::vector<CameraView>& views, const std::filesystem::path& path) {
    const std::string text = encode_cameras(views);
    write_file_bytes(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

inline std::vector<CameraView> parse_cameras(const std::string& text, const std::string& source) {
    std::vector<CameraView> views;
    std::set<ViewId> ids;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos || line[first] == '#') continue;
        std::istringstream ls(line);
        CameraView v;
        long long id = -1;
        ls >> id >> v.width >> v.height >> v.fx >> v.fy >> v.cx >> v.cy;
        for (double& m : v.world_to_camera) ls >> m;
        std::string extra;
        if (!ls || (ls >> extra) || id < 0 || id > std::numeric_limits<ViewId>::max())
            throw Error("parse", source + ":" + std::to_string(line_no) + ": expected 23 numeric fields");
        v.view_id = static_cast<ViewId>(id);
        if (const auto problem = check_camera(v); !problem.empty())
            throw Error("invalid_camera", source + ":" + std::to_string(line_no) + ": " + problem);
        if (!ids.insert(v.view_id).second)
            throw Error("duplicate_id", source + ":" + std::to_string(line_no) + ": duplicate view_id " +
                                            std::to_string(v.view_id));
        views.push_back(v);
    }
    return views;
}

inline std::vector<CameraView> read_cameras(const std::filesystem::path& path) {
    const auto bytes = read_file_bytes(path);
    return parse_cameras(std::string(bytes.begin(), bytes.end()), path.string());
}

// ---------------------------------------------------------------------------
// Mask rasters (16-bit binary PGM)

inline std::filesystem::path mask_filename(ViewId view_id) {
    return "mask_" + std::to_string(view_id) + ".pgm";
}

inline std::vector<std::uint8_t> encode_mask_raster(const InstanceMaskRaster& raster) {
    if (const auto problem = check_raster(raster); !problem.empty()) throw Error("invalid_raster", problem);
    const std::string header =
        "P5\n" + std::to_string(raster.width) + " " + std::to_string(raster.height) + "\n65535\n";
    std::vector<std::uint8_t> bytes(header.begin(), header.end());
    bytes.reserve(bytes.size() + raster.labels.size() * 2);
    for (auto l : raster.labels) {
        bytes.push_back(static_cast<std::uint8_t>(l >> 8));
        bytes.push_back(static_cast<std::uint8_t>(l & 0xff));
    }
    return bytes;
}

inline void write_mask_raster(const InstanceMaskRaster& raster, const std::filesystem::path& path) {
    write_file_bytes(path, encode_mask_raster(raster));
}

inline InstanceMaskRaster decode_mask_raster(const std::vector<std::uint8_t>& bytes, ViewId view_id,
                                             const std::string& source) {
    std::size_t pos = 0;
    auto skip_space = [&] {
        while (pos < bytes.size()) {
            if (bytes[pos] == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
            } else if (std::isspace(bytes[pos])) {
                ++pos;
            } else {
                break;
            }
        }
    };
    auto read_int = [&]() -> long long {
        skip_space();
        long long v = 0;
        std::size_t digits = 0;
        while (pos < bytes.size() && std::isdigit(bytes[pos]) && digits < 12) {
            v = v * 10 + (bytes[pos++] - '0');
            ++digits;
        }
        if (digits == 0) throw Error("format", source + ": malformed PGM header");
        return v;
    };
    if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') throw Error("format", source + ": not a P5 PGM");
    pos = 2;
    const long long width = read_int();
    const long long height = read_int();
    const long long maxval = read_int();
    if (maxval != 65535)
        throw Error("format", source + ": expected maxval 65535, found " + std::to_string(maxval));
    if (width <= 0 || height <= 0 || width > (1 << 20) || height > (1 << 20))
        throw Error("format", source + ": invalid PGM dimensions");
    if (pos >= bytes.size() || !std::isspace(bytes[pos])) throw Error("format", source + ": malformed PGM header");
    ++pos;
    const std::size_t pixels = static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
    if (bytes.size() - pos != pixels * 2)
        throw Error("dimension_mismatch", source + ": pixel data size does not match declared " +
                                              std::to_string(width) + "x" + std::to_string(height));
    InstanceMaskRaster raster;
    raster.view_id = view_id;
    raster.width = static_cast<int>(width);
    raster.height = static_cast<int>(height);
    raster.labels.resize(pixels);
    for (std::size_t i = 0; i < pixels; ++i)
        raster.labels[i] = (std::uint32_t(bytes[pos + 2 * i]) << 8) | bytes[pos + 2 * i + 1];
    return raster;
}

/// Reads a mask raster; the view id comes from a `mask_<view_id>.pgm` filename, else 0.
inline InstanceMaskRaster read_mask_raster(const std::filesystem::path& path) {
    static const std::regex pattern(R"(mask_(\d+)\.pgm)");
    std::smatch match;
    const std::string name = path.filename().string();
    ViewId id = 0;
    if (std::regex_match(name, match, pattern)) id = static_cast<ViewId>(std::stoul(match[1].str()));
    return decode_mask_raster(read_file_bytes(path), id, path.string());
}

/// 16-bit debug dump of one feature-map channel, min-max normalized.
inline void write_channel_pgm(const std::vector<double>& data, int width, int height, int channels, int channel,
                              const std::filesystem::path& path) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    const std::size_t pixels = static_cast<std::size_t>(width) * height;
    for (std::size_t p = 0; p < pixels; ++p) {
        lo = std::min(lo, data[p * channels + channel]);
        hi = std::max(hi, data[p * channels + channel]);
    }
    InstanceMaskRaster img;
    img.width = width;
    img.height = height;
    img.labels.resize(pixels);
    for (std::size_t p = 0; p < pixels; ++p) {
        const double v = hi > lo ? (data[p * channels + channel] - lo) / (hi - lo) : 0.0;
        img.labels[p] = static_cast<std::uint32_t>(std::lround(v * 65535.0));
    }
    write_mask_raster(img, path);
}

// ---------------------------------------------------------------------------
// Mask embeddings (.oige)

inline std::vector<std::uint8_t> encode_embeddings(const MaskEmbeddingSet& set) {
    BinaryWriter w;
    w.put_magic("OIGE");
    w.put<std::uint32_t>(set.view_id);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(set.count()));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(set.dim()));
    w.put<std::uint8_t>(static_cast<std::uint8_t>(set.kind));
    for (int r = 0; r < set.count(); ++r)
        for (int c = 0; c < set.dim(); ++c) w.put<float>(set.rows(r, c));
    return w.bytes();
}

inline void write_embeddings(const MaskEmbeddingSet& set, const std::filesystem::path& path) {
    write_file_bytes(path, encode_embeddings(set));
}

inline MaskEmbeddingSet decode_embeddings(std::vector<std::uint8_t> bytes, const std::string& source) {
    BinaryReader r(std::move(bytes), source);
    r.expect_magic("OIGE");
    MaskEmbeddingSet set;
    set.view_id = r.get<std::uint32_t>();
    const auto n = r.get<std::uint32_t>();
    const auto dim = r.get<std::uint32_t>();
    const auto kind = r.get<std::uint8_t>();
    if (kind > static_cast<std::uint8_t>(EmbeddingKind::text))
        throw Error("bad_kind", source + ": unknown embedding kind " + std::to_string(kind));
    set.kind = static_cast<EmbeddingKind>(kind);
    if (dim == 0 && n > 0) throw Error("format", source + ": zero embedding dimension");
    if (dim != 0 && std::uint64_t(n) * dim > r.remaining() / 4)
        throw Error("truncated", source + ": declares " + std::to_string(n) + "x" + std::to_string(dim) +
                                     " floats beyond end of file");
    set.rows.resize(n, dim);
    for (std::uint32_t i = 0; i < n; ++i) {
        for (std::uint32_t c = 0; c < dim; ++c) {
            const float v = r.get<float>();
            if (!std::isfinite(v))
                throw Error("non_finite", source + ": non-finite entry at row " + std::to_string(i) + " col " +
                                              std::to_string(c));
            set.rows(i, c) = v;
        }
    }
    r.expect_end();
    return set;
}

inline MaskEmbeddingSet read_embeddings(const std::filesystem::path& path) {
    return decode_embeddings(read_file_bytes(path), path.string());
}

/// Cross-checks an embedding table against its raster; empty string when consistent.
inline std::string check_embeddings_against_raster(const MaskEmbeddingSet& set, const InstanceMaskRaster& raster) {
    if (set.kind == EmbeddingKind::text) return {};
    if (set.view_id != raster.view_id) return "embedding view_id differs from raster view_id";
    const std::size_t masks = raster.mask_count();
    if (static_cast<std::size_t>(set.count()) != masks)
        return "n_masks mismatch: embeddings have " + std::to_string(set.count()) + " rows, raster has " +
               std::to_string(masks) + " masks";
    if (raster.max_label() != masks) return "raster mask ids are not contiguous from 1";
    return {};
}

} // namespace oigs
