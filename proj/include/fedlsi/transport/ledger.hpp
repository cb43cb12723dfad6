#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "fedlsi/transport/wire.hpp"

namespace fedlsi::transport {

enum class Direction { client_to_server, server_to_client };

struct TransferRecord {
    std::uint32_t round = 0;  // 0 = pre-round stage transfer
    Direction direction = Direction::client_to_server;
    std::int32_t client = 0;
    PartId part = PartId::encoder;
    std::uint64_t params = 0;
    std::uint64_t bytes = 0;
};

// Exact communication accounting: one record per message, byte cost is
// 4 * params plus the fixed per-message framing overhead.
class CommsLedger {
public:
    void record_transfer(std::uint32_t round, Direction direction, std::int32_t client,
                         const ParamBlob& blob);

    const std::vector<TransferRecord>& records() const { return records_; }

    std::uint64_t total_params(std::optional<Direction> direction = std::nullopt,
                               std::optional<std::int32_t> client = std::nullopt) const;
    std::uint64_t total_bytes(std::optional<Direction> direction = std::nullopt,
                              std::optional<std::int32_t> client = std::nullopt) const;
    // Parameters recorded for rounds in [1, round] plus stage transfers.
    std::uint64_t params_through_round(std::uint32_t round) const;

private:
    std::vector<TransferRecord> records_;
};

}  // namespace fedlsi::transport
