#include "fedlsi/transport/wire.hpp"

#include <zlib.h>

#include <cmath>
#include <cstring>

namespace fedlsi::transport {

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) {
        out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
    }
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
        out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
    }
}

std::uint32_t get_u32(std::span<const std::uint8_t> in, std::size_t pos) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
        v |= static_cast<std::uint32_t>(in[pos + static_cast<std::size_t>(i)]) << (8 * i);
    }
    return v;
}

std::uint64_t get_u64(std::span<const std::uint8_t> in, std::size_t pos) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) {
        v |= static_cast<std::uint64_t>(in[pos + static_cast<std::size_t>(i)]) << (8 * i);
    }
    return v;
}

constexpr std::uint8_t kMagic[4] = {'F', 'L', 'S', 'I'};

bool valid_frame_type(std::uint8_t t) {
    return t >= 0x01 && t <= 0x04;
}

bool valid_part(std::uint8_t p) {
    return p >= 0x01 && p <= 0x03;
}

}  // namespace

ParamBlob encode_params(PartId part, std::int32_t client_id, std::uint32_t round,
                        std::span<const double> params) {
    if (params.empty()) {
        throw std::invalid_argument("encode_params: empty model");
    }
    ParamBlob blob;
    blob.part = part;
    blob.client_id = client_id;
    blob.round = round;
    blob.payload.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (!std::isfinite(params[i])) {
            throw std::invalid_argument("encode_params: non-finite parameter");
        }
        blob.payload[i] = static_cast<float>(params[i]);
    }
    return blob;
}

std::vector<double> decode_params(const ParamBlob& blob) {
    std::vector<double> out(blob.payload.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = static_cast<double>(blob.payload[i]);
    }
    return out;
}

std::vector<std::uint8_t> serialize_blob(const ParamBlob& blob) {
    std::vector<std::uint8_t> out;
    out.reserve(1 + 4 + 4 + 8 + 4 * blob.payload.size());
    out.push_back(static_cast<std::uint8_t>(blob.part));
    put_u32(out, static_cast<std::uint32_t>(blob.client_id));
    put_u32(out, blob.round);
    put_u64(out, blob.payload.size());
    for (float f : blob.payload) {
        std::uint32_t bits;
        std::memcpy(&bits, &f, sizeof(bits));
        put_u32(out, bits);
    }
    return out;
}

ParamBlob parse_blob(std::span<const std::uint8_t> bytes) {
    constexpr std::size_t kHeader = 1 + 4 + 4 + 8;
    if (bytes.size() < kHeader) {
        throw std::invalid_argument("param blob too short");
    }
    if (!valid_part(bytes[0])) {
        throw std::invalid_argument("param blob has unknown part id");
    }
    ParamBlob blob;
    blob.part = static_cast<PartId>(bytes[0]);
    blob.client_id = static_cast<std::int32_t>(get_u32(bytes, 1));
    blob.round = get_u32(bytes, 5);
    const std::uint64_t count = get_u64(bytes, 9);
    if (bytes.size() != kHeader + 4 * count) {
        throw std::invalid_argument("param blob length does not match declared count");
    }
    blob.payload.resize(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        const std::uint32_t bits = get_u32(bytes, kHeader + 4 * static_cast<std::size_t>(i));
        float f;
        std::memcpy(&f, &bits, sizeof(f));
        blob.payload[static_cast<std::size_t>(i)] = f;
    }
    return blob;
}

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
    return static_cast<std::uint32_t>(
        ::crc32(0L, bytes.empty() ? Z_NULL : bytes.data(),
                static_cast<uInt>(bytes.size())));
}

std::vector<std::uint8_t> encode_frame(const Frame& frame) {
    std::vector<std::uint8_t> out;
    out.reserve(kFrameHeaderSize + frame.payload.size() + kFrameTrailerSize);
    out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
    out.push_back(kWireVersion);
    out.push_back(static_cast<std::uint8_t>(frame.type));
    put_u64(out, frame.payload.size());
    out.insert(out.end(), frame.payload.begin(), frame.payload.end());
    put_u32(out, crc32_of(frame.payload));
    return out;
}

Frame decode_frame(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < kFrameHeaderSize) {
        throw FrameError(FrameError::Kind::truncated, "frame shorter than header");
    }
    if (std::memcmp(bytes.data(), kMagic, 4) != 0) {
        throw FrameError(FrameError::Kind::bad_magic, "bad frame magic");
    }
    if (bytes[4] != kWireVersion) {
        throw FrameError(FrameError::Kind::bad_version, "unsupported frame version");
    }
    if (!valid_frame_type(bytes[5])) {
        throw FrameError(FrameError::Kind::bad_type, "unknown frame type");
    }
    const std::uint64_t len = get_u64(bytes, 6);
    if (bytes.size() < kFrameHeaderSize + len + kFrameTrailerSize) {
        throw FrameError(FrameError::Kind::truncated, "frame payload truncated");
    }
    if (bytes.size() > kFrameHeaderSize + len + kFrameTrailerSize) {
        throw FrameError(FrameError::Kind::trailing, "trailing bytes after frame");
    }
    Frame frame;
    frame.type = static_cast<FrameType>(bytes[5]);
    frame.payload.assign(bytes.begin() + kFrameHeaderSize,
                         bytes.begin() + kFrameHeaderSize + static_cast<std::ptrdiff_t>(len));
    const std::uint32_t expected = get_u32(bytes, kFrameHeaderSize + static_cast<std::size_t>(len));
    if (crc32_of(frame.payload) != expected) {
        throw FrameError(FrameError::Kind::bad_crc, "frame CRC mismatch");
    }
    return frame;
}

Frame frame_from_blob(FrameType type, const ParamBlob& blob) {
    Frame frame;
    frame.type = type;
    frame.payload = serialize_blob(blob);
    return frame;
}

ParamBlob blob_from_frame(const Frame& frame) {
    return parse_blob(frame.payload);
}

}  // namespace fedlsi::transport
