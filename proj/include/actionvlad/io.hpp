#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <zlib.h>

#include "actionvlad/classifier.hpp"
#include "actionvlad/codebook.hpp"
#include "actionvlad/error.hpp"
#include "actionvlad/feature_map.hpp"
#include "actionvlad/fusion.hpp"
#include "actionvlad/training.hpp"

namespace actionvlad {

namespace fs = std::filesystem;

using Bytes = std::vector<std::uint8_t>;

inline Bytes read_file_bytes(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    require(static_cast<bool>(in), ErrorKind::io_failure, "cannot open '" + path.string() + "' for reading");
    Bytes bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    require(!in.bad(), ErrorKind::io_failure, "read error on '" + path.string() + "'");
    return bytes;
}

inline void write_file_bytes(const fs::path& path, std::span<const std::uint8_t> bytes)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(out), ErrorKind::io_failure, "cannot open '" + path.string() + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    require(static_cast<bool>(out), ErrorKind::io_failure, "write error on '" + path.string() + "'");
}

inline std::string read_text_file(const fs::path& path)
{
    auto bytes = read_file_bytes(path);
    return std::string(bytes.begin(), bytes.end());
}

inline void write_text_file(const fs::path& path, std::string_view text)
{
    write_file_bytes(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

/// Little-endian encoder.
class ByteWriter {
public:
    void u8(std::uint8_t v) { bytes_.push_back(v); }
    void u32(std::uint32_t v) { put_le(v); }
    void u64(std::uint64_t v) { put_le(v); }
    void f32(float v) { put_le(std::bit_cast<std::uint32_t>(v)); }
    void f64(double v) { put_le(std::bit_cast<std::uint64_t>(v)); }
    void raw(std::string_view s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }
    void f64s(std::span<const double> values)
    {
        for (double v : values)
            f64(v);
    }

    const Bytes& bytes() const noexcept { return bytes_; }
    Bytes take() noexcept { return std::move(bytes_); }

private:
    template <typename U>
    void put_le(U v)
    {
        for (std::size_t b = 0; b < sizeof(U); ++b)
            bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * b)));
    }

    Bytes bytes_;
};

/// Bounds-checked little-endian decoder. Running past the end throws
/// size_mismatch.
class ByteReader {
public:
    explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    std::uint8_t u8() { return get_le<std::uint8_t>(); }
    std::uint32_t u32() { return get_le<std::uint32_t>(); }
    std::uint64_t u64() { return get_le<std::uint64_t>(); }
    float f32() { return std::bit_cast<float>(get_le<std::uint32_t>()); }
    double f64() { return std::bit_cast<double>(get_le<std::uint64_t>()); }

    std::vector<double> f64s(std::uint64_t count)
    {
        require(count <= remaining() / 8, ErrorKind::size_mismatch, "array length exceeds remaining data");
        std::vector<double> out(static_cast<std::size_t>(count));
        for (double& v : out)
            v = f64();
        return out;
    }

    std::size_t remaining() const noexcept { return bytes_.size() - pos_; }
    std::size_t position() const noexcept { return pos_; }

private:
    template <typename U>
    U get_le()
    {
        require(remaining() >= sizeof(U), ErrorKind::size_mismatch, "unexpected end of data");
        U v = 0;
        for (std::size_t b = 0; b < sizeof(U); ++b)
            v |= static_cast<U>(static_cast<U>(bytes_[pos_ + b]) << (8 * b));
        pos_ += sizeof(U);
        return v;
    }

    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

// --- feature files --------------------------------------------------------
//
// "AVF1" | u32 version | u32 T | u32 N | u32 D | T*N*D little-endian f32,
// ordered (t, i, j). No padding.

inline constexpr std::string_view feature_magic = "AVF1";
inline constexpr std::uint32_t feature_version = 1;
inline constexpr std::size_t feature_header_size = 20;

inline Bytes encode_feature_file(const FeatureMap<double>& f)
{
    auto narrow = [](std::size_t v) {
        require(v <= UINT32_MAX, ErrorKind::size_mismatch, "feature dimension does not fit in 32 bits");
        return static_cast<std::uint32_t>(v);
    };
    ByteWriter w;
    w.raw(feature_magic);
    w.u32(feature_version);
    w.u32(narrow(f.frames()));
    w.u32(narrow(f.locations()));
    w.u32(narrow(f.dim()));
    for (double v : f.data())
        w.f32(static_cast<float>(v));
    return w.take();
}

/// Header fields of a feature file and the payload length they imply.
struct FeatureHeader {
    std::uint32_t version = 0;
    std::uint32_t frames = 0;
    std::uint32_t locations = 0;
    std::uint32_t dim = 0;
    std::uint64_t payload_floats = 0;
};

inline FeatureHeader decode_feature_header(std::span<const std::uint8_t> bytes)
{
    require(bytes.size() >= feature_header_size, ErrorKind::size_mismatch, "feature file shorter than its header");
    require(std::memcmp(bytes.data(), feature_magic.data(), 4) == 0, ErrorKind::bad_magic,
            "feature file does not start with AVF1");
    ByteReader r(bytes.subspan(4));
    FeatureHeader h;
    h.version = r.u32();
    require(h.version == feature_version, ErrorKind::version_mismatch,
            "unsupported feature file version " + std::to_string(h.version));
    h.frames = r.u32();
    h.locations = r.u32();
    h.dim = r.u32();
    // each factor < 2^32, so the product of two fits; check the third
    const std::uint64_t plane = std::uint64_t{h.frames} * h.locations;
    require(h.dim == 0 || plane <= (UINT64_MAX / 4) / h.dim, ErrorKind::size_mismatch,
            "feature dimensions overflow");
    h.payload_floats = plane * h.dim;
    return h;
}

inline FeatureMap<double> decode_feature_file(std::span<const std::uint8_t> bytes)
{
    const auto h = decode_feature_header(bytes);
    const std::uint64_t expected = h.payload_floats * 4;
    require(bytes.size() - feature_header_size == expected, ErrorKind::size_mismatch,
            "feature payload has " + std::to_string(bytes.size() - feature_header_size) + " bytes, header implies " +
                std::to_string(expected));
    ByteReader r(bytes.subspan(feature_header_size));
    std::vector<double> data(static_cast<std::size_t>(h.payload_floats));
    for (double& v : data)
        v = r.f32();
    return FeatureMap<double>(h.frames, h.locations, h.dim, std::move(data));
}

inline void write_feature_file(const FeatureMap<double>& f, const fs::path& path)
{
    write_file_bytes(path, encode_feature_file(f));
}

inline FeatureMap<double> read_feature_file(const fs::path& path)
{
    try {
        return decode_feature_file(read_file_bytes(path));
    } catch (const Error& e) {
        throw Error(e.kind(), path.string() + ": " + e.what());
    }
}

// --- manifests ------------------------------------------------------------
//
// One video per line: path<TAB>label<TAB>split[<TAB>second_stream_path].
// A path field may list several crop files separated by ','. Relative paths
// are resolved against the manifest's directory. Blank lines and lines
// starting with '#' are ignored.

struct ManifestEntry {
    std::string id;
    std::vector<fs::path> stream_a;
    std::vector<fs::path> stream_b;
    std::size_t label = 0;
    Split split = Split::train;
    std::size_t line = 0;

    bool paired() const noexcept { return !stream_b.empty(); }
};

struct Manifest {
    std::vector<ManifestEntry> entries;
    std::size_t classes = 0;

    std::vector<ManifestEntry> split(Split s) const
    {
        std::vector<ManifestEntry> out;
        for (const auto& e : entries)
            if (e.split == s)
                out.push_back(e);
        return out;
    }
    bool paired() const noexcept
    {
        return !entries.empty() && std::ranges::all_of(entries, &ManifestEntry::paired);
    }
};

namespace detail {

inline std::vector<std::string> split_string(std::string_view text, char sep)
{
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = text.find(sep, start);
        out.emplace_back(text.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
        if (pos == std::string_view::npos)
            return out;
        start = pos + 1;
    }
}

} // namespace detail

inline Manifest parse_manifest(std::string_view text, const fs::path& base_dir, bool check_files = true)
{
    Manifest m;
    std::size_t line_no = 0;
    std::size_t max_label = 0;
    for (auto line : detail::split_string(text, '\n')) {
        ++line_no;
        if (!line.empty() && line.back() == '\r')
            line.pop_back();
        if (line.empty() || line.front() == '#')
            continue;
        auto where = [&] { return "manifest line " + std::to_string(line_no) + ": "; };
        auto fields = detail::split_string(line, '\t');
        require(fields.size() == 3 || fields.size() == 4, ErrorKind::parse_error,
                where() + "expected 3 or 4 tab-separated fields, got " + std::to_string(fields.size()));
        ManifestEntry e;
        e.line = line_no;
        auto paths = [&](const std::string& field) {
            std::vector<fs::path> out;
            for (const auto& p : detail::split_string(field, ',')) {
                require(!p.empty(), ErrorKind::parse_error, where() + "empty path");
                fs::path full = fs::path(p).is_absolute() ? fs::path(p) : base_dir / p;
                require(!check_files || fs::exists(full), ErrorKind::io_failure,
                        where() + "missing file '" + full.string() + "'");
                out.push_back(full);
            }
            return out;
        };
        e.stream_a = paths(fields[0]);
        if (fields.size() == 4)
            e.stream_b = paths(fields[3]);
        std::size_t consumed = 0;
        try {
            const long long label = std::stoll(fields[1], &consumed);
            require(label >= 0, ErrorKind::parse_error, where() + "negative label");
            e.label = static_cast<std::size_t>(label);
        } catch (const std::logic_error&) {
            fail(ErrorKind::parse_error, where() + "label '" + fields[1] + "' is not an integer");
        }
        require(consumed == fields[1].size(), ErrorKind::parse_error,
                where() + "label '" + fields[1] + "' is not an integer");
        auto split = parse_split(fields[2]);
        require(split.has_value(), ErrorKind::parse_error,
                where() + "split must be train, val or test, got '" + fields[2] + "'");
        e.split = *split;
        e.id = fs::path(detail::split_string(fields[0], ',').front()).stem().string();
        max_label = std::max(max_label, e.label);
        m.entries.push_back(std::move(e));
    }
    require(!m.entries.empty(), ErrorKind::parse_error, "manifest has no entries");
    std::vector<bool> seen(max_label + 1, false);
    for (const auto& e : m.entries)
        seen[e.label] = true;
    for (std::size_t c = 0; c <= max_label; ++c)
        require(seen[c], ErrorKind::label_error,
                "labels must be contiguous from 0; label " + std::to_string(c) + " never occurs");
    m.classes = max_label + 1;
    return m;
}

inline Manifest load_manifest(const fs::path& path)
{
    return parse_manifest(read_text_file(path), path.parent_path());
}

struct LoadOptions {
    Fusion fusion = Fusion::none;
    bool multicrop = false;
    bool second_stream = false;  ///< with Fusion::none, load stream B instead of A
};

/// Loads one stream of a video; all crops are pooled when multicrop is set,
/// otherwise only the first crop is read.
inline FeatureMap<double> load_stream(const std::vector<fs::path>& crops, bool multicrop)
{
    require(!crops.empty(), ErrorKind::invalid_argument, "video has no feature files for this stream");
    if (!multicrop)
        return read_feature_file(crops.front());
    std::vector<FeatureMap<double>> maps;
    for (const auto& p : crops)
        maps.push_back(read_feature_file(p));
    return multicrop_pool<double>(maps);
}

/// Both streams of a paired video; they must cover the same number of frames.
inline std::pair<FeatureMap<double>, FeatureMap<double>> load_pair(const ManifestEntry& e, bool multicrop)
{
    require(e.paired(), ErrorKind::invalid_argument,
            "manifest line " + std::to_string(e.line) + " has no second stream");
    auto a = load_stream(e.stream_a, multicrop);
    auto b = load_stream(e.stream_b, multicrop);
    require(a.frames() == b.frames(), ErrorKind::dimension_mismatch,
            "manifest line " + std::to_string(e.line) + ": streams have " + std::to_string(a.frames()) + " and " +
                std::to_string(b.frames()) + " frames");
    return {std::move(a), std::move(b)};
}

/// The feature map a single-codebook model sees for this video.
inline FeatureMap<double> load_video(const ManifestEntry& e, const LoadOptions& options)
{
    switch (options.fusion) {
    case Fusion::concat: {
        auto [a, b] = load_pair(e, options.multicrop);
        return concat_fuse(a, b);
    }
    case Fusion::early: {
        auto [a, b] = load_pair(e, options.multicrop);
        return early_fuse(a, b);
    }
    case Fusion::none:
    case Fusion::late: break;
    }
    if (options.second_stream)
        return load_stream(e.stream_b, options.multicrop);
    return load_stream(e.stream_a, options.multicrop);
}

inline std::vector<Sample> load_samples(const std::vector<ManifestEntry>& entries, const LoadOptions& options)
{
    std::vector<Sample> out;
    out.reserve(entries.size());
    for (const auto& e : entries)
        out.push_back({load_video(e, options), e.label});
    return out;
}

// --- checkpoints ----------------------------------------------------------
//
// "AVC1" | u32 version | body | u32 crc32(all preceding bytes)

inline constexpr std::string_view checkpoint_magic = "AVC1";
inline constexpr std::uint32_t checkpoint_version = 1;

struct Checkpoint {
    int stage = 0;  ///< 0 after codebook init, then the last completed training stage
    Fusion fusion = Fusion::none;
    std::size_t classes = 0;
    TrainConfig config;
    std::optional<Codebook<double>> codebook;
    std::optional<ClassifierModel<double>> classifier;
    std::optional<AdamState<double>> adam;

    bool operator==(const Checkpoint&) const = default;
};

inline std::uint32_t crc32_of(std::span<const std::uint8_t> bytes)
{
    uLong crc = ::crc32(0L, Z_NULL, 0);
    // zlib takes uInt lengths
    for (std::size_t pos = 0; pos < bytes.size();) {
        const auto chunk = static_cast<uInt>(std::min<std::size_t>(bytes.size() - pos, 1u << 30));
        crc = ::crc32(crc, bytes.data() + pos, chunk);
        pos += chunk;
    }
    return static_cast<std::uint32_t>(crc);
}

inline Bytes encode_checkpoint(const Checkpoint& ck)
{
    ByteWriter w;
    w.raw(checkpoint_magic);
    w.u32(checkpoint_version);
    w.u8(static_cast<std::uint8_t>(ck.stage));
    w.u8(static_cast<std::uint8_t>(ck.fusion));
    w.u64(ck.classes);

    const auto& c = ck.config;
    w.f64(c.alpha);
    w.u64(c.cells);
    w.f64(c.dropout);
    w.f64(c.clip_norm);
    w.f64(c.stage1_lr);
    w.f64(c.stage2_lr);
    w.f64(c.adam_epsilon);
    w.u64(c.batch_size);
    w.u64(c.accumulation_steps);
    w.u64(c.stage1_epochs);
    w.u64(c.stage2_epochs);
    w.u64(c.seed);
    w.u8(c.freeze_boundary);
    w.u8(c.tie_anchors);
    w.u8(static_cast<std::uint8_t>(c.pooling));
    w.u64(c.threads);

    w.u8(ck.codebook.has_value());
    if (ck.codebook) {
        w.u64(ck.codebook->cells());
        w.u64(ck.codebook->dim());
        w.f64(ck.codebook->alpha());
        w.f64s(ck.codebook->residual_anchors());
        w.f64s(ck.codebook->assign_anchors());
    }
    w.u8(ck.classifier.has_value());
    if (ck.classifier) {
        w.u64(ck.classifier->classes);
        w.u64(ck.classifier->input_dim);
        w.f64(ck.classifier->dropout_rate);
        w.f64s(ck.classifier->weights);
        w.f64s(ck.classifier->bias);
    }
    w.u8(ck.adam.has_value());
    if (ck.adam) {
        w.u64(ck.adam->step);
        w.u64(ck.adam->first_moment.size());
        for (std::size_t t = 0; t < ck.adam->first_moment.size(); ++t) {
            w.u64(ck.adam->first_moment[t].size());
            w.f64s(ck.adam->first_moment[t]);
            w.f64s(ck.adam->second_moment[t]);
        }
    }
    w.u32(crc32_of(w.bytes()));
    return w.take();
}

inline Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes)
{
    require(bytes.size() >= 12, ErrorKind::size_mismatch, "checkpoint is truncated");
    require(std::memcmp(bytes.data(), checkpoint_magic.data(), 4) == 0, ErrorKind::bad_magic,
            "checkpoint does not start with AVC1");
    const auto body = bytes.first(bytes.size() - 4);
    require(ByteReader(bytes.last(4)).u32() == crc32_of(body), ErrorKind::checksum_mismatch,
            "checkpoint checksum mismatch");
    ByteReader r(body.subspan(4));
    const auto version = r.u32();
    require(version == checkpoint_version, ErrorKind::version_mismatch,
            "unsupported checkpoint version " + std::to_string(version));

    auto flag = [&](const char* what) {
        const auto v = r.u8();
        require(v <= 1, ErrorKind::parse_error, std::string("invalid ") + what + " flag");
        return v == 1;
    };
    auto count = [&](std::uint64_t v) {
        require(v <= r.remaining(), ErrorKind::size_mismatch, "checkpoint size field exceeds data");
        return static_cast<std::size_t>(v);
    };

    Checkpoint ck;
    ck.stage = r.u8();
    require(ck.stage <= 2, ErrorKind::parse_error, "invalid stage in checkpoint");
    const auto fusion = r.u8();
    require(fusion <= static_cast<std::uint8_t>(Fusion::late), ErrorKind::parse_error, "invalid fusion mode");
    ck.fusion = static_cast<Fusion>(fusion);
    ck.classes = count(r.u64());

    auto& c = ck.config;
    c.alpha = r.f64();
    c.cells = count(r.u64());
    c.dropout = r.f64();
    c.clip_norm = r.f64();
    c.stage1_lr = r.f64();
    c.stage2_lr = r.f64();
    c.adam_epsilon = r.f64();
    c.batch_size = static_cast<std::size_t>(r.u64());
    c.accumulation_steps = static_cast<std::size_t>(r.u64());
    c.stage1_epochs = static_cast<std::size_t>(r.u64());
    c.stage2_epochs = static_cast<std::size_t>(r.u64());
    c.seed = r.u64();
    c.freeze_boundary = flag("freeze");
    c.tie_anchors = flag("tie");
    const auto pooling = r.u8();
    require(pooling <= static_cast<std::uint8_t>(Pooling::max), ErrorKind::parse_error, "invalid pooling mode");
    c.pooling = static_cast<Pooling>(pooling);
    c.threads = static_cast<std::size_t>(r.u64());

    if (flag("codebook")) {
        const auto cells = count(r.u64());
        const auto dim = count(r.u64());
        require(cells == 0 || dim <= r.remaining() / cells, ErrorKind::size_mismatch, "codebook shape exceeds data");
        const double alpha = r.f64();
        auto residual = r.f64s(cells * dim);
        auto assign = r.f64s(cells * dim);
        ck.codebook.emplace(cells, dim, alpha, std::move(residual), std::move(assign));
    }
    if (flag("classifier")) {
        ClassifierModel<double> m;
        m.classes = count(r.u64());
        m.input_dim = count(r.u64());
        require(m.classes >= 1 && m.input_dim <= r.remaining() / m.classes, ErrorKind::size_mismatch,
                "classifier shape exceeds data");
        m.dropout_rate = r.f64();
        m.weights = r.f64s(m.classes * m.input_dim);
        m.bias = r.f64s(m.classes);
        require(all_finite<double>(m.weights) && all_finite<double>(m.bias), ErrorKind::non_finite,
                "classifier parameters are not finite");
        ck.classifier = std::move(m);
    }
    if (flag("optimizer")) {
        AdamState<double> s;
        s.step = r.u64();
        const auto tensors = count(r.u64());
        for (std::size_t t = 0; t < tensors; ++t) {
            const auto len = count(r.u64());
            s.first_moment.push_back(r.f64s(len));
            s.second_moment.push_back(r.f64s(len));
        }
        ck.adam = std::move(s);
    }
    require(r.remaining() == 0, ErrorKind::size_mismatch, "trailing bytes after checkpoint body");
    return ck;
}

inline void save_checkpoint(const fs::path& path, const Checkpoint& ck)
{
    write_file_bytes(path, encode_checkpoint(ck));
}

inline Checkpoint load_checkpoint(const fs::path& path)
{
    try {
        return decode_checkpoint(read_file_bytes(path));
    } catch (const Error& e) {
        throw Error(e.kind(), path.string() + ": " + e.what());
    }
}

} // namespace actionvlad
