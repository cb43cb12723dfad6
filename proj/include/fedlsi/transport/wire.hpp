#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace fedlsi::transport {

enum class PartId : std::uint8_t {
    encoder = 0x01,
    head = 0x02,
    generator = 0x03,
};

inline constexpr std::int32_t kServerId = -1;

// Flattened 32-bit little-endian model parameters in registration order
// (per dense layer weight row-major then bias; batch-norm gamma, beta,
// running_mean, running_var).
struct ParamBlob {
    PartId part = PartId::encoder;
    std::int32_t client_id = kServerId;
    std::uint32_t round = 0;
    std::vector<float> payload;

    std::uint64_t param_count() const { return payload.size(); }
};

// Narrows 64-bit model parameters onto the wire. Throws on non-finite values
// or an empty parameter list.
ParamBlob encode_params(PartId part, std::int32_t client_id, std::uint32_t round,
                        std::span<const double> params);
std::vector<double> decode_params(const ParamBlob& blob);

std::vector<std::uint8_t> serialize_blob(const ParamBlob& blob);
ParamBlob parse_blob(std::span<const std::uint8_t> bytes);

enum class FrameType : std::uint8_t {
    param_upload = 0x01,
    param_broadcast = 0x02,
    generator_delivery = 0x03,
    ack = 0x04,
};

// Wire layout, bit-exact:
//   magic "FLSI" | version 0x01 | type | payload length (8-byte LE)
//   | payload | CRC32 of payload (4-byte LE)
struct Frame {
    FrameType type = FrameType::ack;
    std::vector<std::uint8_t> payload;

    bool operator==(const Frame&) const = default;
};

inline constexpr std::uint8_t kWireVersion = 0x01;
inline constexpr std::size_t kFrameHeaderSize = 4 + 1 + 1 + 8;
inline constexpr std::size_t kFrameTrailerSize = 4;
// header + CRC + serialized blob header (part, client, round, count)
inline constexpr std::uint64_t kMessageOverheadBytes =
    kFrameHeaderSize + kFrameTrailerSize + (1 + 4 + 4 + 8);

class FrameError : public std::runtime_error {
public:
    enum class Kind { bad_magic, bad_version, bad_type, truncated, bad_crc, trailing };

    FrameError(Kind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
    Kind kind() const { return kind_; }

private:
    Kind kind_;
};

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> encode_frame(const Frame& frame);
// Whole-buffer decode; rejects bad magic/version/type, truncation, trailing
// bytes and CRC mismatches.
Frame decode_frame(std::span<const std::uint8_t> bytes);

Frame frame_from_blob(FrameType type, const ParamBlob& blob);
ParamBlob blob_from_frame(const Frame& frame);

}  // namespace fedlsi::transport
