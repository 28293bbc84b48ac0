#include "cprloop/wire.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstring>
#include <thread>

namespace cprloop::wire {

namespace {

void put_u16(std::uint8_t* p, std::uint16_t v) {
    p[0] = static_cast<std::uint8_t>(v);
    p[1] = static_cast<std::uint8_t>(v >> 8);
}
void put_u32(std::uint8_t* p, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) p[i] = static_cast<std::uint8_t>(v >> (8 * i));
}
void put_u64(std::uint8_t* p, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) p[i] = static_cast<std::uint8_t>(v >> (8 * i));
}
std::uint16_t get_u16(const std::uint8_t* p) { return static_cast<std::uint16_t>(p[0] | (p[1] << 8)); }
std::uint32_t get_u32(const std::uint8_t* p) {
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | p[i];
    return v;
}
std::uint64_t get_u64(const std::uint8_t* p) {
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
    return v;
}

std::string errno_text(const char* what) { return std::string(what) + ": " + std::strerror(errno); }

}  // namespace

Bytes encode_packet(const DualSample& s) {
    if (auto err = validate_sample(s))
        throw Error(Errc::InvalidSample, "cannot encode seq " + std::to_string(s.seq) + ": " +
                                             std::string(to_string(*err)));
    if (s.palm.timestamp_us != s.dorsum.timestamp_us)
        throw Error(Errc::InvalidSample, "palm and dorsum timestamps differ; the packet carries one timestamp");

    Bytes out(kPacketBytes, 0);
    std::copy(kMagic.begin(), kMagic.end(), out.begin());
    out[4] = kVersion;
    out[5] = kFlagPalm | kFlagDorsum;
    put_u32(&out[6], s.seq);
    put_u64(&out[10], s.timestamp_us());
    out[18] = static_cast<std::uint8_t>(kRows);
    out[19] = static_cast<std::uint8_t>(kCols);
    std::size_t off = kHeaderBytes;
    for (const auto* f : {&s.palm, &s.dorsum})
        for (auto c : f->counts.data) {
            put_u16(&out[off], c);
            off += 2;
        }
    return out;
}

DualSample decode_packet(std::span<const std::uint8_t> b) {
    if (b.size() < kHeaderBytes)
        throw Error(Errc::Truncated, "packet of " + std::to_string(b.size()) + " bytes is shorter than the header");
    if (!std::equal(kMagic.begin(), kMagic.end(), b.begin())) throw Error(Errc::BadMagic, "magic is not CPR1");
    if (b[4] != kVersion) throw Error(Errc::BadVersion, "unsupported version " + std::to_string(b[4]));
    if (b[18] != kRows || b[19] != kCols)
        throw Error(Errc::DimensionMismatch,
                    "dimensions " + std::to_string(b[18]) + "x" + std::to_string(b[19]) + ", expected 13x14");
    const std::uint8_t flags = b[5];
    if (flags != (kFlagPalm | kFlagDorsum))
        throw Error(Errc::MissingSide, "flags 0x" + std::to_string(flags) + " do not mark both sides present");
    if (b.size() < kPacketBytes)
        throw Error(Errc::Truncated, "packet of " + std::to_string(b.size()) + " bytes, expected " +
                                         std::to_string(kPacketBytes));
    if (b.size() > kPacketBytes)
        throw Error(Errc::TrailingBytes, std::to_string(b.size() - kPacketBytes) + " bytes after the payload");

    DualSample s;
    s.seq = get_u32(&b[6]);
    const std::uint64_t t = get_u64(&b[10]);
    s.palm.timestamp_us = s.dorsum.timestamp_us = t;
    std::size_t off = kHeaderBytes;
    for (auto* f : {&s.palm, &s.dorsum})
        for (auto& c : f->counts.data) {
            c = get_u16(&b[off]);
            if (c > kAdcMax)
                throw Error(Errc::CountOutOfRange, "count " + std::to_string(c) + " at byte " + std::to_string(off));
            off += 2;
        }
    return s;
}

// ---------------------------------------------------------------------------

UdpSender::UdpSender(const std::string& host, std::uint16_t port) {
    addrinfo hints{};
    hints.ai_family = AF_INET;
    hints.ai_socktype = SOCK_DGRAM;
    addrinfo* res = nullptr;
    int rc = getaddrinfo(host.c_str(), std::to_string(port).c_str(), &hints, &res);
    if (rc != 0) throw Error(Errc::SocketError, "resolve " + host + ": " + gai_strerror(rc));
    fd_ = ::socket(AF_INET, SOCK_DGRAM, 0);
    if (fd_ < 0) {
        freeaddrinfo(res);
        throw Error(Errc::SocketError, errno_text("socket"));
    }
    if (::connect(fd_, res->ai_addr, res->ai_addrlen) != 0) {
        std::string msg = errno_text("connect");
        freeaddrinfo(res);
        ::close(fd_);
        fd_ = -1;
        throw Error(Errc::SocketError, msg);
    }
    freeaddrinfo(res);
}

UdpSender::~UdpSender() {
    if (fd_ >= 0) ::close(fd_);
}

void UdpSender::send(const Bytes& packet) {
    ssize_t n = ::send(fd_, packet.data(), packet.size(), 0);
    if (n < 0) throw Error(Errc::SocketError, errno_text("send"));
    if (static_cast<std::size_t>(n) != packet.size()) throw Error(Errc::SocketError, "short datagram write");
}

SendStats stream(std::span<const DualSample> samples, const std::string& host, std::uint16_t port, Pace pace,
                 double speed) {
    if (!(speed > 0.0)) throw Error(Errc::InvalidArgument, "speed must be positive");
    SendStats st;
    std::optional<UdpSender> tx;
    try {
        tx.emplace(host, port);
    } catch (const Error& e) {
        throw StreamError(e.what(), st);
    }
    const auto start = std::chrono::steady_clock::now();
    const std::uint64_t t0 = samples.empty() ? 0 : samples.front().timestamp_us();
    for (const auto& s : samples) {
        Bytes pkt;
        try {
            pkt = encode_packet(s);
        } catch (const Error&) {
            ++st.dropped;
            continue;
        }
        if (pace == Pace::Realtime && std::isfinite(speed) && s.timestamp_us() >= t0) {
            auto offset = std::chrono::microseconds(
                static_cast<std::int64_t>(static_cast<double>(s.timestamp_us() - t0) / speed));
            std::this_thread::sleep_until(start + offset);
        }
        try {
            tx->send(pkt);
        } catch (const Error& e) {
            throw StreamError(e.what(), st);
        }
        ++st.sent;
    }
    return st;
}

UdpReceiver::UdpReceiver(std::uint16_t port, const std::string& bind_addr) {
    fd_ = ::socket(AF_INET, SOCK_DGRAM, 0);
    if (fd_ < 0) throw Error(Errc::SocketError, errno_text("socket"));
    int one = 1;
    ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    int rcvbuf = 4 << 20;
    ::setsockopt(fd_, SOL_SOCKET, SO_RCVBUF, &rcvbuf, sizeof rcvbuf);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(port);
    if (::inet_pton(AF_INET, bind_addr.c_str(), &addr.sin_addr) != 1) {
        ::close(fd_);
        throw Error(Errc::SocketError, "bad bind address " + bind_addr);
    }
    if (::bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) {
        std::string msg = errno_text("bind");
        ::close(fd_);
        throw Error(Errc::SocketError, msg);
    }
    socklen_t len = sizeof addr;
    ::getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);
}

UdpReceiver::~UdpReceiver() {
    if (fd_ >= 0) ::close(fd_);
}

std::optional<DualSample> UdpReceiver::receive(std::chrono::milliseconds timeout) {
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    std::array<std::uint8_t, 2048> buf;
    for (;;) {
        auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
        pollfd p{fd_, POLLIN, 0};
        int rc = ::poll(&p, 1, static_cast<int>(std::max<std::int64_t>(0, left.count())));
        if (rc < 0) {
            if (errno == EINTR) continue;
            throw Error(Errc::SocketError, errno_text("poll"));
        }
        if (rc == 0) return std::nullopt;
        ssize_t n = ::recv(fd_, buf.data(), buf.size(), 0);
        if (n < 0) {
            if (errno == EINTR || errno == EAGAIN) continue;
            throw Error(Errc::SocketError, errno_text("recv"));
        }
        try {
            DualSample s = decode_packet(std::span(buf.data(), static_cast<std::size_t>(n)));
            ++stats_.received;
            if (last_seq_) {
                if (s.seq <= *last_seq_)
                    ++stats_.out_of_order;
                else
                    stats_.seq_gaps += s.seq - *last_seq_ - 1;
            }
            if (!last_seq_ || s.seq > *last_seq_) last_seq_ = s.seq;
            return s;
        } catch (const Error&) {
            ++stats_.malformed;
        }
    }
}

// ---------------------------------------------------------------------------

std::vector<DualSample> samples_from_log(const SessionLog& log) {
    std::vector<const FrameRecord*> palm, dorsum;
    for (const auto& r : log.records)
        if (auto* f = std::get_if<FrameRecord>(&r)) (f->frame.side == Side::Palm ? palm : dorsum).push_back(f);
    if (palm.empty() && dorsum.empty()) throw Error(Errc::CorruptLog, "log contains no frame records");
    auto by_time = [](const FrameRecord* a, const FrameRecord* b) { return a->frame.timestamp_us < b->frame.timestamp_us; };
    std::stable_sort(palm.begin(), palm.end(), by_time);
    std::stable_sort(dorsum.begin(), dorsum.end(), by_time);

    constexpr std::uint64_t tol = kFramePeriodUs / 2;
    auto unpaired = [](const FrameRecord* f) {
        return Error(Errc::UnpairedFrame, std::string(to_string(f->frame.side)) + " frame at t_us=" +
                                              std::to_string(f->frame.timestamp_us) + " has no partner");
    };
    std::vector<DualSample> out;
    std::size_t i = 0, j = 0;
    while (i < palm.size() && j < dorsum.size()) {
        auto tp = palm[i]->frame.timestamp_us, td = dorsum[j]->frame.timestamp_us;
        if ((tp > td ? tp - td : td - tp) <= tol) {
            DualSample s;
            s.palm = palm[i]->frame;
            s.dorsum = dorsum[j]->frame;
            s.seq = palm[i]->seq;
            out.push_back(std::move(s));
            ++i;
            ++j;
        } else {
            throw unpaired(tp < td ? palm[i] : dorsum[j]);
        }
    }
    if (i < palm.size()) throw unpaired(palm[i]);
    if (j < dorsum.size()) throw unpaired(dorsum[j]);
    return out;
}

Replayer::Replayer(const SessionLog& log, double speed) : Replayer(samples_from_log(log), speed) {}

Replayer::Replayer(std::vector<DualSample> samples, double speed) : samples_(std::move(samples)), speed_(speed) {
    if (!(speed > 0.0)) throw Error(Errc::InvalidArgument, "replay speed must be positive");
}

std::optional<DualSample> Replayer::next() {
    if (pos_ >= samples_.size()) return std::nullopt;
    if (pos_ == 0) start_ = std::chrono::steady_clock::now();
    const DualSample& s = samples_[pos_];
    if (std::isfinite(speed_)) {
        const std::uint64_t t0 = samples_.front().timestamp_us();
        if (s.timestamp_us() > t0) {
            auto offset = std::chrono::microseconds(
                static_cast<std::int64_t>(static_cast<double>(s.timestamp_us() - t0) / speed_));
            std::this_thread::sleep_until(start_ + offset);
        }
    }
    return samples_[pos_++];
}

}  // namespace cprloop::wire
