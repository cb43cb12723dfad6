#pragma once

#include <memory>
#include <optional>

#include "fedlsi/transport/wire.hpp"

namespace fedlsi::transport {

// Duplex frame endpoint. send() is safe from multiple producers; recv() has a
// single consumer and blocks until a frame arrives or the peer closes (close
// is signalled as nullopt, not an error). Delivery is exactly-once in order
// per channel.
class Endpoint {
public:
    virtual ~Endpoint() = default;
    virtual void send(const Frame& frame) = 0;
    virtual std::optional<Frame> recv() = 0;
    virtual void close() = 0;
};

struct Link {
    std::shared_ptr<Endpoint> client;
    std::shared_ptr<Endpoint> server;
};

enum class TransportKind { memory, socket };

// In-memory frame queue pair.
Link make_memory_link();
// AF_UNIX socketpair carrying the byte-level frame encoding; exists to
// exercise real framing at desk scale.
Link make_socket_link();

Link make_link(TransportKind kind);

}  // namespace fedlsi::transport
