#pragma once

#include <array>
#include <chrono>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cprloop/core.hpp"
#include "cprloop/session_log.hpp"

namespace cprloop::wire {

/*
 * Packet layout, little-endian throughout:
 *
 *   off size
 *     0    4  magic "CPR1"
 *     4    1  version = 1
 *     5    1  flags: bit0 palm present, bit1 dorsum present
 *     6    4  seq (u32)
 *    10    8  timestamp_us (u64)
 *    18    1  rows = 13
 *    19    1  cols = 14
 *    20  364  palm counts, 182 x u16, row-major
 *   384  364  dorsum counts
 */
inline constexpr std::array<std::uint8_t, 4> kMagic{'C', 'P', 'R', '1'};
inline constexpr std::uint8_t kVersion = 1;
inline constexpr std::uint8_t kFlagPalm = 0x01;
inline constexpr std::uint8_t kFlagDorsum = 0x02;
inline constexpr std::size_t kHeaderBytes = 20;
inline constexpr std::size_t kSideBytes = 2 * kCellsPerSide;
inline constexpr std::size_t kPacketBytes = kHeaderBytes + 2 * kSideBytes;  // 748
inline constexpr std::uint16_t kDefaultPort = 47911;

using Bytes = std::vector<std::uint8_t>;

/// Throws InvalidSample for anything validate_sample rejects and for palm and
/// dorsum timestamps that differ (the packet carries one timestamp).
Bytes encode_packet(const DualSample& sample);

/// Strict decode. Throws Truncated, BadMagic, BadVersion, DimensionMismatch,
/// MissingSide, TrailingBytes, CountOutOfRange.
DualSample decode_packet(std::span<const std::uint8_t> bytes);

enum class Pace : std::uint8_t { Realtime, Fast };

struct SendStats {
    std::size_t sent = 0;
    std::size_t dropped = 0;
};

/// Socket failure during stream(); carries the counters reached so far.
class StreamError : public Error {
public:
    StreamError(const std::string& what, SendStats partial) : Error(Errc::SocketError, what), partial_(partial) {}
    const SendStats& partial() const { return partial_; }

private:
    SendStats partial_;
};

/// Connected UDP socket to host:port (numeric IPv4 or a resolvable name).
class UdpSender {
public:
    UdpSender(const std::string& host, std::uint16_t port);
    ~UdpSender();
    UdpSender(const UdpSender&) = delete;
    UdpSender& operator=(const UdpSender&) = delete;

    /// Throws SocketError.
    void send(const Bytes& packet);

private:
    int fd_ = -1;
};

/**
 * One packet per sample. Realtime pace sleeps to reproduce the source
 * inter-frame timestamps divided by speed; Fast sends back to back. Samples
 * that fail encoding are counted as dropped. Throws StreamError.
 */
SendStats stream(std::span<const DualSample> samples, const std::string& host, std::uint16_t port,
                 Pace pace = Pace::Fast, double speed = 1.0);

struct ReceiveStats {
    std::size_t received = 0;
    std::size_t malformed = 0;
    std::size_t out_of_order = 0;  // seq not greater than the previous one
    std::size_t seq_gaps = 0;      // sequence numbers skipped
};

/// UDP receiver bound to bind_addr:port (port 0 picks an ephemeral port).
/// Packets are delivered in arrival order; malformed datagrams are counted
/// and skipped.
class UdpReceiver {
public:
    explicit UdpReceiver(std::uint16_t port = kDefaultPort, const std::string& bind_addr = "0.0.0.0");
    ~UdpReceiver();
    UdpReceiver(const UdpReceiver&) = delete;
    UdpReceiver& operator=(const UdpReceiver&) = delete;

    std::uint16_t port() const { return port_; }
    /// nullopt on timeout.
    std::optional<DualSample> receive(std::chrono::milliseconds timeout);
    const ReceiveStats& stats() const { return stats_; }

private:
    int fd_ = -1;
    std::uint16_t port_ = 0;
    std::optional<std::uint32_t> last_seq_;
    ReceiveStats stats_;
};

/// Rebuilds the DualSample sequence from frame records, pairing each palm
/// frame with the dorsum frame nearest in time (within half a frame period).
/// Throws UnpairedFrame naming the orphan's timestamp.
std::vector<DualSample> samples_from_log(const SessionLog& log);

/// Paced iteration over a recorded session. speed = infinity yields
/// immediately.
class Replayer {
public:
    static constexpr double kFast = std::numeric_limits<double>::infinity();

    explicit Replayer(const SessionLog& log, double speed = kFast);
    explicit Replayer(std::vector<DualSample> samples, double speed = kFast);

    std::optional<DualSample> next();
    std::size_t size() const { return samples_.size(); }

private:
    std::vector<DualSample> samples_;
    double speed_;
    std::size_t pos_ = 0;
    std::chrono::steady_clock::time_point start_;
};

}  // namespace cprloop::wire
