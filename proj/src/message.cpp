#include "fimc/message.hpp"

#include <bit>
#include <cstring>
#include <string>

#include <zlib.h>

#include "fimc/errors.hpp"

namespace fimc {

namespace {

constexpr std::uint8_t kMagic[4] = {'F', 'I', 'M', 'C'};
constexpr std::uint8_t kKindUpload = 1;
constexpr std::uint8_t kKindBroadcast = 2;

class Writer {
public:
    void bytes(const std::uint8_t* p, std::size_t n) { out_.insert(out_.end(), p, p + n); }

    template <typename T>
    void uint(T v) {
        for (std::size_t i = 0; i < sizeof(T); ++i) {
            out_.push_back(static_cast<std::uint8_t>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xFF));
        }
    }

    void f64(double v) { uint(std::bit_cast<std::uint64_t>(v)); }

    void matrix(const Matrix& m) {
        uint(static_cast<std::uint32_t>(m.rows()));
        uint(static_cast<std::uint32_t>(m.cols()));
        for (double v : m.data()) {
            f64(v);
        }
    }

    std::vector<std::uint8_t>& buffer() { return out_; }

private:
    std::vector<std::uint8_t> out_;
};

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

    template <typename T>
    T uint() {
        need(sizeof(T));
        std::uint64_t v = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i) {
            v |= static_cast<std::uint64_t>(in_[pos_ + i]) << (8 * i);
        }
        pos_ += sizeof(T);
        return static_cast<T>(v);
    }

    double f64() { return std::bit_cast<double>(uint<std::uint64_t>()); }

    Matrix matrix() {
        const auto rows = uint<std::uint32_t>();
        const auto cols = uint<std::uint32_t>();
        const std::uint64_t count = static_cast<std::uint64_t>(rows) * cols;
        need(count * 8);
        Matrix m(rows, cols);
        for (double& v : m.data()) {
            v = f64();
        }
        return m;
    }

    std::size_t position() const noexcept { return pos_; }

private:
    void need(std::uint64_t n) const {
        if (pos_ + n > in_.size()) {
            throw ProtocolError("RoundMessage: truncated payload at byte " + std::to_string(pos_));
        }
    }

    std::span<const std::uint8_t> in_;
    std::size_t pos_ = 0;
};

std::uint32_t checksum(const std::uint8_t* p, std::size_t n) {
    return static_cast<std::uint32_t>(crc32(0L, p, static_cast<uInt>(n)));
}

}  // namespace

std::vector<std::uint8_t> encode(const RoundMessage& message) {
    Writer w;
    w.bytes(kMagic, sizeof(kMagic));
    w.uint(kMessageVersion);
    w.uint(message.round);
    w.uint(message.client);
    if (const auto* up = std::get_if<ClientUpload>(&message.payload)) {
        w.uint(kKindUpload);
        w.uint(static_cast<std::uint8_t>(Direction::client_to_server));
        w.uint(std::uint8_t{2});
        w.matrix(up->features);
        w.matrix(Matrix(up->weights.size(), 1, up->weights));
    } else {
        const auto& down = std::get<ServerBroadcast>(message.payload);
        w.uint(kKindBroadcast);
        w.uint(static_cast<std::uint8_t>(Direction::server_to_client));
        w.uint(std::uint8_t{3});
        w.matrix(down.fused_graph);
        w.matrix(down.centers);
        w.matrix(down.pseudo_labels);
    }
    auto& buf = w.buffer();
    w.uint(checksum(buf.data(), buf.size()));
    return std::move(buf);
}

RoundMessage decode(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < sizeof(kMagic) + 4 || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
        throw ProtocolError("RoundMessage: bad magic");
    }
    const std::size_t body = bytes.size() - 4;
    Reader tail(bytes.subspan(body));
    if (tail.uint<std::uint32_t>() != checksum(bytes.data(), body)) {
        throw ProtocolError("RoundMessage: checksum mismatch");
    }
    Reader r(bytes.first(body));
    r.uint<std::uint32_t>();  // magic
    const auto version = r.uint<std::uint16_t>();
    if (version != kMessageVersion) {
        throw ProtocolError("RoundMessage: unsupported version " + std::to_string(version));
    }
    RoundMessage msg;
    msg.round = r.uint<std::uint32_t>();
    msg.client = r.uint<std::uint16_t>();
    const auto kind = r.uint<std::uint8_t>();
    const auto direction = r.uint<std::uint8_t>();
    const auto count = r.uint<std::uint8_t>();
    if (kind == kKindUpload) {
        if (direction != static_cast<std::uint8_t>(Direction::client_to_server) || count != 2) {
            throw ProtocolError("RoundMessage: malformed client upload header");
        }
        ClientUpload up;
        up.features = r.matrix();
        const Matrix w = r.matrix();
        if (w.cols() != 1 && !w.empty()) {
            throw ProtocolError("RoundMessage: silhouette block must be a column");
        }
        up.weights = w.data();
        msg.payload = std::move(up);
    } else if (kind == kKindBroadcast) {
        if (direction != static_cast<std::uint8_t>(Direction::server_to_client) || count != 3) {
            throw ProtocolError("RoundMessage: malformed server broadcast header");
        }
        ServerBroadcast down;
        down.fused_graph = r.matrix();
        down.centers = r.matrix();
        down.pseudo_labels = r.matrix();
        msg.payload = std::move(down);
    } else {
        throw ProtocolError("RoundMessage: unknown payload kind " + std::to_string(kind));
    }
    if (r.position() != body) {
        throw ProtocolError("RoundMessage: " + std::to_string(body - r.position()) +
                            " trailing bytes");
    }
    return msg;
}

}  // namespace fimc
