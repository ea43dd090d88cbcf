#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "fode/model.hpp"
#include "fode/params.hpp"

namespace fode {

enum class CodecErrorKind {
    bad_magic,
    version_mismatch,
    digest_mismatch,
    truncated,
    malformed,
};

class CodecError : public Error {
public:
    CodecError(CodecErrorKind kind, const std::string& what) : Error(what), kind_(kind) {}
    CodecErrorKind kind() const { return kind_; }

private:
    CodecErrorKind kind_;
};

using ConfigDigest = std::array<std::uint8_t, 32>;

// Canonical shape-relevant encoding of a config. The iteration count is
// excluded for the ode families (parameter shapes do not depend on it, and
// clients trained at different C must interoperate) and included for resnet,
// where it changes the parameter list. euler_mode never affects shapes.
std::vector<std::uint8_t> canonical_shape_encoding(const ModelConfig& config);
ConfigDigest config_digest(const ModelConfig& config);
std::string digest_hex(const ConfigDigest& digest);

// Full config encoding embedded in checkpoints so files are self-describing.
std::vector<std::uint8_t> encode_config(const ModelConfig& config);
ModelConfig decode_config(std::span<const std::uint8_t> bytes);

// Checkpoint blob layout (all integers little-endian):
//   magic "FODE" | version u32 | digest 32B | config_len u32 | config blob |
//   entry_count u32 | per entry: name_len u16, name, rank u8, extents u32*,
//   offset u64 (into the payload region) | payload: raw IEEE-754 f32 LE.
// Offsets are strictly increasing and contiguous; total size is exactly
// header + 4 * total elements. Round-trips are bitwise.
std::vector<std::uint8_t> serialize_params(const ParameterSet& params, const ModelConfig& config);

struct DecodedCheckpoint {
    ParameterSet params;
    ModelConfig config;
    ConfigDigest digest;
};
DecodedCheckpoint deserialize_params(std::span<const std::uint8_t> bytes);

// Byte count serialize_params will produce for this config, without building
// tensors.
long serialized_size(const ModelConfig& config);
long header_size(const ModelConfig& config);

// Raises CodecError(digest_mismatch) when the checkpoint's digest does not
// match the expected config's digest.
void require_digest(const DecodedCheckpoint& ckpt, const ModelConfig& expected);

void save_checkpoint(const std::filesystem::path& file, const ParameterSet& params,
                     const ModelConfig& config);
DecodedCheckpoint load_checkpoint(const std::filesystem::path& file);

} // namespace fode
