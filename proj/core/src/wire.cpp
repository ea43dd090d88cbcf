#include "fode/wire.hpp"

namespace fode {

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back((std::uint8_t)(v >> (8 * i)));
}

std::uint32_t get_u32(std::span<const std::uint8_t> s) {
    return (std::uint32_t)s[0] | ((std::uint32_t)s[1] << 8) | ((std::uint32_t)s[2] << 16) |
           ((std::uint32_t)s[3] << 24);
}

} // namespace

std::vector<std::uint8_t> encode_frame(const WireMessage& msg) {
    std::vector<std::uint8_t> out;
    out.reserve((std::size_t)frame_size(msg));
    const std::uint32_t body_len = (std::uint32_t)(1 + 4 + 4 + msg.payload.size());
    put_u32(out, body_len);
    out.push_back((std::uint8_t)msg.type);
    put_u32(out, msg.round);
    put_u32(out, msg.client_id);
    out.insert(out.end(), msg.payload.begin(), msg.payload.end());
    return out;
}

WireMessage decode_frame_body(std::span<const std::uint8_t> body) {
    if (body.size() < 9) {
        throw ProtocolError("frame body too short: " + std::to_string(body.size()) + " bytes");
    }
    WireMessage msg;
    const std::uint8_t type = body[0];
    if (type < 1 || type > 5) {
        throw ProtocolError("unknown message type " + std::to_string(type));
    }
    msg.type = (MsgType)type;
    msg.round = get_u32(body.subspan(1, 4));
    msg.client_id = get_u32(body.subspan(5, 4));
    msg.payload.assign(body.begin() + 9, body.end());
    return msg;
}

long frame_size(const WireMessage& msg) {
    return kFrameOverheadBytes + (long)msg.payload.size();
}

} // namespace fode
