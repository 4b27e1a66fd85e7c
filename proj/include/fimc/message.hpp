#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <variant>
#include <vector>

#include "fimc/matrix.hpp"

namespace fimc {

enum class Direction : std::uint8_t { client_to_server = 0, server_to_client = 1 };

// H^m and silhouettes w^m.
struct ClientUpload {
    Matrix features;
    std::vector<double> weights;

    friend bool operator==(const ClientUpload&, const ClientUpload&) = default;
};

// Fused graph, the client's share of the global centers, and pseudo-labels.
// Centers and pseudo-labels are empty right after pretraining.
struct ServerBroadcast {
    Matrix fused_graph;
    Matrix centers;
    Matrix pseudo_labels;

    friend bool operator==(const ServerBroadcast&, const ServerBroadcast&) = default;
};

struct RoundMessage {
    std::uint32_t round = 0;
    std::uint16_t client = 0;
    std::variant<ClientUpload, ServerBroadcast> payload;

    Direction direction() const noexcept {
        return std::holds_alternative<ClientUpload>(payload) ? Direction::client_to_server
                                                             : Direction::server_to_client;
    }

    friend bool operator==(const RoundMessage&, const RoundMessage&) = default;
};

// Wire layout, little-endian:
//   "FIMC" | version u16 | round u32 | client u16 | kind u8 | direction u8 |
//   matrix count u8 | per matrix: rows u32, cols u32, rows*cols f64 | crc32 u32
inline constexpr std::uint16_t kMessageVersion = 1;

std::vector<std::uint8_t> encode(const RoundMessage& message);
// Throws ProtocolError on bad magic, version, kind, checksum, or length.
RoundMessage decode(std::span<const std::uint8_t> bytes);

}  // namespace fimc
