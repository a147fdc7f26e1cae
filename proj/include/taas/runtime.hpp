#pragma once

// Sans-IO actor interface. Nodes, storage shards and clients are actors; the
// deterministic simulator and the live socket runtime both drive them.

#include <cstdint>

#include "taas/bytes.hpp"

namespace taas {

using Micros = std::int64_t;
using EndpointId = std::uint32_t;

inline constexpr EndpointId kStorageEndpointBase = 1000;
inline constexpr EndpointId kClientEndpointBase = 10000;

inline constexpr EndpointId taas_endpoint(std::uint32_t node) { return node; }
inline constexpr EndpointId storage_endpoint(std::uint32_t shard) { return kStorageEndpointBase + shard; }
inline constexpr EndpointId client_endpoint(std::uint32_t client) { return kClientEndpointBase + client; }
inline constexpr bool is_taas_endpoint(EndpointId e) { return e < kStorageEndpointBase; }

class Runtime {
  public:
    virtual ~Runtime() = default;

    virtual EndpointId self() const = 0;
    // Local clock in microseconds. Virtual in simulation.
    virtual Micros now() const = 0;
    // At-most-once, unordered delivery of one encoded message.
    virtual void send(EndpointId to, Bytes message) = 0;
    // Requests an on_timer callback no earlier than `at`.
    virtual void wake_at(Micros at) = 0;
    // Simulated CPU time for the current handler. No-op on real hardware.
    virtual void charge(Micros /*cost*/) {}
};

class Actor {
  public:
    virtual ~Actor() = default;
    virtual void on_start(Runtime& rt) = 0;
    virtual void on_message(Runtime& rt, EndpointId from, ByteView message) = 0;
    virtual void on_timer(Runtime& rt) = 0;
};

}  // namespace taas
