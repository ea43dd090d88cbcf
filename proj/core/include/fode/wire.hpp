#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fode/error.hpp"

namespace fode {

// Length-prefixed frame: length u32 LE (byte count of everything after the
// length field) | type u8 | round u32 | client id u32 | payload.
enum class MsgType : std::uint8_t {
    hello = 1,         // payload: n_k u64 + config digest (32 bytes)
    global_params = 2, // payload: serialized parameter set
    local_params = 3,  // payload: serialized parameter set
    metrics = 4,       // payload: final local loss f32 bits LE
    bye = 5,           // payload: optional UTF-8 reason
};

class ProtocolError : public Error {
public:
    using Error::Error;
};

struct WireMessage {
    MsgType type = MsgType::bye;
    std::uint32_t round = 0;
    std::uint32_t client_id = 0;
    std::vector<std::uint8_t> payload;
};

// Fixed framing overhead per message: length + type + round + client id.
inline constexpr long kFrameOverheadBytes = 4 + 1 + 4 + 4;

std::vector<std::uint8_t> encode_frame(const WireMessage& msg);

// Decodes the body that follows the length prefix (type onwards). Unknown
// type -> ProtocolError.
WireMessage decode_frame_body(std::span<const std::uint8_t> body);

long frame_size(const WireMessage& msg);

} // namespace fode
