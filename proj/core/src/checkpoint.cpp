#include "fode/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "fode/sha256.hpp"

namespace fode {

namespace {

constexpr std::uint32_t kVersion = 1;
constexpr char kMagic[4] = {'F', 'O', 'D', 'E'};

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
    out.push_back((std::uint8_t)(v & 0xff));
    out.push_back((std::uint8_t)(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back((std::uint8_t)(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back((std::uint8_t)(v >> (8 * i)));
}

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    std::span<const std::uint8_t> take(std::size_t n, const char* what) {
        if (pos_ + n > bytes_.size()) {
            throw CodecError(CodecErrorKind::truncated,
                             std::string("checkpoint truncated while reading ") + what);
        }
        auto s = bytes_.subspan(pos_, n);
        pos_ += n;
        return s;
    }

    std::uint16_t u16(const char* what) {
        auto s = take(2, what);
        return (std::uint16_t)(s[0] | (s[1] << 8));
    }
    std::uint32_t u32(const char* what) {
        auto s = take(4, what);
        return (std::uint32_t)s[0] | ((std::uint32_t)s[1] << 8) | ((std::uint32_t)s[2] << 16) |
               ((std::uint32_t)s[3] << 24);
    }
    std::uint64_t u64(const char* what) {
        std::uint64_t v = 0;
        auto s = take(8, what);
        for (int i = 7; i >= 0; --i) v = (v << 8) | s[(std::size_t)i];
        return v;
    }
    std::size_t pos() const { return pos_; }
    std::size_t remaining() const { return bytes_.size() - pos_; }

private:
    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

std::uint8_t family_code(Family f) {
    switch (f) {
        case Family::resnet: return 0;
        case Family::odenet: return 1;
        case Family::dsodenet: return 2;
    }
    throw ConfigError("unknown family enum value");
}

Family family_from_code(std::uint8_t code) {
    switch (code) {
        case 0: return Family::resnet;
        case 1: return Family::odenet;
        case 2: return Family::dsodenet;
    }
    throw CodecError(CodecErrorKind::malformed, "unknown family code " + std::to_string(code));
}

} // namespace

std::vector<std::uint8_t> canonical_shape_encoding(const ModelConfig& c) {
    std::vector<std::uint8_t> out;
    out.push_back(family_code(c.family));
    put_u32(out, (std::uint32_t)c.in_channels);
    put_u32(out, (std::uint32_t)c.stem_channels);
    for (int s : c.stage_channels) put_u32(out, (std::uint32_t)s);
    put_u32(out, (std::uint32_t)c.kernel_size);
    put_u32(out, (std::uint32_t)c.num_classes);
    put_u32(out, (std::uint32_t)c.norm_groups);
    // Iteration count changes parameter shapes only for stacked blocks.
    put_u32(out, c.family == Family::resnet ? (std::uint32_t)c.iterations : 0u);
    return out;
}

ConfigDigest config_digest(const ModelConfig& config) {
    const auto enc = canonical_shape_encoding(config);
    return sha256(enc);
}

std::string digest_hex(const ConfigDigest& digest) {
    static const char* hex = "0123456789abcdef";
    std::string s;
    s.reserve(64);
    for (std::uint8_t b : digest) {
        s.push_back(hex[b >> 4]);
        s.push_back(hex[b & 0xf]);
    }
    return s;
}

std::vector<std::uint8_t> encode_config(const ModelConfig& c) {
    std::vector<std::uint8_t> out;
    out.push_back(family_code(c.family));
    put_u32(out, (std::uint32_t)c.in_channels);
    put_u32(out, (std::uint32_t)c.stem_channels);
    for (int s : c.stage_channels) put_u32(out, (std::uint32_t)s);
    put_u32(out, (std::uint32_t)c.iterations);
    put_u32(out, (std::uint32_t)c.kernel_size);
    put_u32(out, (std::uint32_t)c.num_classes);
    put_u32(out, (std::uint32_t)c.norm_groups);
    out.push_back(c.euler_mode == EulerMode::unit_step ? 0 : 1);
    return out;
}

ModelConfig decode_config(std::span<const std::uint8_t> bytes) {
    Reader r(bytes);
    ModelConfig c;
    c.family = family_from_code(r.take(1, "config family")[0]);
    c.in_channels = (int)r.u32("config in_channels");
    c.stem_channels = (int)r.u32("config stem_channels");
    for (auto& s : c.stage_channels) s = (int)r.u32("config stage_channels");
    c.iterations = (int)r.u32("config iterations");
    c.kernel_size = (int)r.u32("config kernel_size");
    c.num_classes = (int)r.u32("config num_classes");
    c.norm_groups = (int)r.u32("config norm_groups");
    c.euler_mode = r.take(1, "config euler_mode")[0] == 0 ? EulerMode::unit_step
                                                          : EulerMode::interval_step;
    if (r.remaining() != 0) {
        throw CodecError(CodecErrorKind::malformed, "config blob has trailing bytes");
    }
    return c;
}

long header_size(const ModelConfig& config) {
    long size = 4 + 4 + 32;                    // magic, version, digest
    size += 4 + (long)encode_config(config).size(); // config_len + blob
    size += 4;                                 // entry_count
    for_each_parameter(config, [&](const std::string& name, const Shape& shape, ParamKind) {
        size += 2 + (long)name.size() + 1 + 4 * (long)shape.size() + 8;
    });
    return size;
}

long serialized_size(const ModelConfig& config) {
    return header_size(config) + 4 * count_parameters(config).total;
}

std::vector<std::uint8_t> serialize_params(const ParameterSet& params, const ModelConfig& config) {
    std::vector<std::uint8_t> out;
    out.reserve((std::size_t)serialized_size(config));
    out.insert(out.end(), kMagic, kMagic + 4);
    put_u32(out, kVersion);
    const ConfigDigest digest = config_digest(config);
    out.insert(out.end(), digest.begin(), digest.end());
    const auto cfg = encode_config(config);
    put_u32(out, (std::uint32_t)cfg.size());
    out.insert(out.end(), cfg.begin(), cfg.end());

    put_u32(out, (std::uint32_t)params.size());
    std::uint64_t offset = 0;
    for (const auto& e : params) {
        if (e.name.size() > 0xffff) throw CodecError(CodecErrorKind::malformed, "parameter name too long");
        put_u16(out, (std::uint16_t)e.name.size());
        out.insert(out.end(), e.name.begin(), e.name.end());
        const Shape& shape = e.tensor.shape();
        out.push_back((std::uint8_t)shape.size());
        for (int ext : shape) put_u32(out, (std::uint32_t)ext);
        put_u64(out, offset);
        offset += 4ULL * (std::uint64_t)e.tensor.numel();
    }
    for (const auto& e : params) {
        for (float v : e.tensor.data()) {
            put_u32(out, std::bit_cast<std::uint32_t>(v));
        }
    }
    return out;
}

DecodedCheckpoint deserialize_params(std::span<const std::uint8_t> bytes) {
    Reader r(bytes);
    auto magic = r.take(4, "magic");
    if (std::memcmp(magic.data(), kMagic, 4) != 0) {
        throw CodecError(CodecErrorKind::bad_magic, "bad checkpoint magic");
    }
    const std::uint32_t version = r.u32("version");
    if (version != kVersion) {
        throw CodecError(CodecErrorKind::version_mismatch,
                         "unsupported checkpoint version " + std::to_string(version));
    }
    ConfigDigest stored_digest;
    auto dg = r.take(32, "digest");
    std::copy(dg.begin(), dg.end(), stored_digest.begin());

    const std::uint32_t cfg_len = r.u32("config length");
    const ModelConfig config = decode_config(r.take(cfg_len, "config blob"));
    const ConfigDigest expected = config_digest(config);
    if (stored_digest != expected) {
        throw CodecError(CodecErrorKind::digest_mismatch,
                         "checkpoint digest does not match its embedded config");
    }

    const std::uint32_t entry_count = r.u32("entry count");
    struct EntryMeta {
        std::string name;
        Shape shape;
        std::uint64_t offset;
        long numel;
    };
    std::vector<EntryMeta> metas;
    metas.reserve(entry_count);
    std::uint64_t expected_offset = 0;
    for (std::uint32_t i = 0; i < entry_count; ++i) {
        EntryMeta m;
        const std::uint16_t name_len = r.u16("entry name length");
        auto nm = r.take(name_len, "entry name");
        m.name.assign(nm.begin(), nm.end());
        const std::uint8_t rank = r.take(1, "entry rank")[0];
        for (int d = 0; d < rank; ++d) m.shape.push_back((int)r.u32("entry extent"));
        m.offset = r.u64("entry offset");
        if (m.offset != expected_offset) {
            throw CodecError(CodecErrorKind::malformed,
                             "entry '" + m.name + "' offset " + std::to_string(m.offset) +
                                 " is not contiguous (expected " + std::to_string(expected_offset) + ")");
        }
        m.numel = shape_numel(m.shape);
        expected_offset += 4ULL * (std::uint64_t)m.numel;
        metas.push_back(std::move(m));
    }

    if (r.remaining() != expected_offset) {
        throw CodecError(CodecErrorKind::truncated,
                         "payload size " + std::to_string(r.remaining()) + " does not match header (" +
                             std::to_string(expected_offset) + " bytes expected)");
    }

    DecodedCheckpoint out;
    out.config = config;
    out.digest = stored_digest;
    for (const auto& m : metas) {
        std::vector<float> data((std::size_t)m.numel);
        auto raw = r.take((std::size_t)m.numel * 4, "tensor payload");
        for (long j = 0; j < m.numel; ++j) {
            std::uint32_t bits = (std::uint32_t)raw[(std::size_t)(4 * j)] |
                                 ((std::uint32_t)raw[(std::size_t)(4 * j + 1)] << 8) |
                                 ((std::uint32_t)raw[(std::size_t)(4 * j + 2)] << 16) |
                                 ((std::uint32_t)raw[(std::size_t)(4 * j + 3)] << 24);
            data[(std::size_t)j] = std::bit_cast<float>(bits);
        }
        out.params.add(m.name, Tensor::from(m.shape, std::move(data), /*requires_grad=*/true));
    }
    return out;
}

void require_digest(const DecodedCheckpoint& ckpt, const ModelConfig& expected) {
    if (ckpt.digest != config_digest(expected)) {
        throw CodecError(CodecErrorKind::digest_mismatch,
                         "config digest mismatch: checkpoint " + digest_hex(ckpt.digest) +
                             " vs expected " + digest_hex(config_digest(expected)));
    }
}

void save_checkpoint(const std::filesystem::path& file, const ParameterSet& params,
                     const ModelConfig& config) {
    const auto bytes = serialize_params(params, config);
    std::ofstream out(file, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open checkpoint file for writing: " + file.string());
    out.write((const char*)bytes.data(), (std::streamsize)bytes.size());
    if (!out) throw Error("short write to checkpoint file: " + file.string());
}

DecodedCheckpoint load_checkpoint(const std::filesystem::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw Error("cannot open checkpoint file: " + file.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    return deserialize_params(bytes);
}

} // namespace fode
