#include "fedlsi/transport/ledger.hpp"

namespace fedlsi::transport {

void CommsLedger::record_transfer(std::uint32_t round, Direction direction, std::int32_t client,
                                  const ParamBlob& blob) {
    TransferRecord rec;
    rec.round = round;
    rec.direction = direction;
    rec.client = client;
    rec.part = blob.part;
    rec.params = blob.param_count();
    rec.bytes = 4 * blob.param_count() + kMessageOverheadBytes;
    records_.push_back(rec);
}

std::uint64_t CommsLedger::total_params(std::optional<Direction> direction,
                                        std::optional<std::int32_t> client) const {
    std::uint64_t total = 0;
    for (const auto& r : records_) {
        if (direction && r.direction != *direction) {
            continue;
        }
        if (client && r.client != *client) {
            continue;
        }
        total += r.params;
    }
    return total;
}

std::uint64_t CommsLedger::total_bytes(std::optional<Direction> direction,
                                       std::optional<std::int32_t> client) const {
    std::uint64_t total = 0;
    for (const auto& r : records_) {
        if (direction && r.direction != *direction) {
            continue;
        }
        if (client && r.client != *client) {
            continue;
        }
        total += r.bytes;
    }
    return total;
}

std::uint64_t CommsLedger::params_through_round(std::uint32_t round) const {
    std::uint64_t total = 0;
    for (const auto& r : records_) {
        if (r.round <= round) {
            total += r.params;
        }
    }
    return total;
}

}  // namespace fedlsi::transport
