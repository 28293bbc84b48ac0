#pragma once

#include <algorithm>
#include <chrono>
#include <condition_variable>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <mutex>
#include <optional>

#include "cprloop/error.hpp"

namespace cprloop {

enum class Overflow : std::uint8_t {
    DropOldest,  // producer never waits; the oldest queued item is discarded
    Block,       // producer waits for room
};

/// Multi-producer multi-consumer bounded queue. close() wakes everyone;
/// consumers drain what is left and then see nullopt.
template <typename T>
class BoundedChannel {
public:
    explicit BoundedChannel(std::size_t capacity, Overflow policy = Overflow::DropOldest)
        : capacity_(capacity), policy_(policy) {
        if (capacity == 0) throw Error(Errc::InvalidArgument, "channel capacity must be positive");
    }

    /// False when the channel is closed.
    bool push(T value) {
        std::unique_lock lk(m_);
        if (policy_ == Overflow::Block) {
            not_full_.wait(lk, [&] { return closed_ || q_.size() < capacity_; });
        } else if (!closed_ && q_.size() >= capacity_) {
            q_.pop_front();
            ++dropped_;
        }
        if (closed_) return false;
        q_.push_back(std::move(value));
        high_water_ = std::max(high_water_, q_.size());
        not_empty_.notify_one();
        return true;
    }

    std::optional<T> pop() {
        std::unique_lock lk(m_);
        not_empty_.wait(lk, [&] { return closed_ || !q_.empty(); });
        return take(lk);
    }

    template <typename Rep, typename Period>
    std::optional<T> pop_for(std::chrono::duration<Rep, Period> timeout) {
        std::unique_lock lk(m_);
        not_empty_.wait_for(lk, timeout, [&] { return closed_ || !q_.empty(); });
        return take(lk);
    }

    void close() {
        std::lock_guard lk(m_);
        closed_ = true;
        not_empty_.notify_all();
        not_full_.notify_all();
    }

    bool closed() const {
        std::lock_guard lk(m_);
        return closed_;
    }
    std::size_t size() const {
        std::lock_guard lk(m_);
        return q_.size();
    }
    std::size_t dropped() const {
        std::lock_guard lk(m_);
        return dropped_;
    }
    std::size_t high_water() const {
        std::lock_guard lk(m_);
        return high_water_;
    }
    std::size_t capacity() const { return capacity_; }
    Overflow policy() const { return policy_; }

private:
    std::optional<T> take(std::unique_lock<std::mutex>&) {
        if (q_.empty()) return std::nullopt;
        T v = std::move(q_.front());
        q_.pop_front();
        not_full_.notify_one();
        return v;
    }

    const std::size_t capacity_;
    const Overflow policy_;
    mutable std::mutex m_;
    std::condition_variable not_empty_, not_full_;
    std::deque<T> q_;
    bool closed_ = false;
    std::size_t dropped_ = 0;
    std::size_t high_water_ = 0;
};

}  // namespace cprloop
