#include "cprloop/haptics.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

namespace cprloop {

HapticPattern encode_feedback(RateClass rate, ForceClass force, PoseClass pose) {
    HapticPattern p;
    switch (rate) {
        case RateClass::TooSlow: p.pulse_count = 1; break;
        case RateClass::Correct: p.pulse_count = 2; break;
        case RateClass::TooFast: p.pulse_count = 3; break;
    }
    switch (force) {
        case ForceClass::TooWeak: p.pwm = kPwmHigh; break;
        case ForceClass::Correct: p.pwm = kPwmMid; break;
        case ForceClass::TooStrong: p.pwm = kPwmLow; break;
    }
    switch (pose) {
        case PoseClass::Correct: p.units = {ActuatorUnit::Center}; break;
        case PoseClass::LeftSkewed: p.units = {ActuatorUnit::Left}; break;
        case PoseClass::RightSkewed: p.units = {ActuatorUnit::Right}; break;
        case PoseClass::FingerRelease:
            p.units = {ActuatorUnit::Lower, ActuatorUnit::Center};
            p.alternating = true;
            break;
    }
    return p;
}

std::string format_table_row(const JointState& s, const HapticPattern& p) {
    std::string units;
    for (std::size_t i = 0; i < p.units.size(); ++i) {
        if (i) units += '+';
        units += to_string(p.units[i]);
    }
    std::ostringstream os;
    os << to_string(s.rate) << ',' << to_string(s.force) << ',' << to_string(s.pose) << " -> pulses=" << p.pulse_count
       << " pwm=" << p.pwm << " units=" << units << " alternating=" << (p.alternating ? 1 : 0);
    return os.str();
}

std::vector<ActuationEvent> schedule_pattern(const HapticPattern& pattern, std::uint64_t anchor_t_us,
                                             const PulseTiming& timing) {
    if (pattern.pulse_count < 1 || pattern.units.empty() || !(timing.pulse_ms > 0.0) || timing.gap_ms < 0.0)
        throw Error(Errc::InvalidArgument, "malformed haptic pattern or timing");
    std::vector<ActuationEvent> out;
    const double stride_us = (timing.pulse_ms + timing.gap_ms) * 1000.0;
    for (int i = 0; i < pattern.pulse_count; ++i) {
        auto start = anchor_t_us + static_cast<std::uint64_t>(i * stride_us + 0.5);
        if (pattern.alternating) {
            out.push_back({pattern.units[static_cast<std::size_t>(i) % pattern.units.size()], pattern.pwm, start,
                           timing.pulse_ms});
        } else {
            for (auto u : pattern.units) out.push_back({u, pattern.pwm, start, timing.pulse_ms});
        }
    }
    return out;
}

double pattern_span_ms(const HapticPattern& pattern, const PulseTiming& timing) {
    return pattern.pulse_count * timing.pulse_ms + (pattern.pulse_count - 1) * timing.gap_ms;
}

HapticScheduler::Result HapticScheduler::schedule(const HapticPattern& pattern, std::uint64_t anchor_t_us) {
    Result r;
    r.events = schedule_pattern(pattern, anchor_t_us, timing_);

    for (auto unit : pattern.units) {
        std::size_t cancelled = 0;
        for (auto it = timeline_.begin(); it != timeline_.end();) {
            if (it->unit != unit || it->end_us() <= anchor_t_us) {
                ++it;
                continue;
            }
            ++cancelled;
            if (it->start_us >= anchor_t_us) {
                it = timeline_.erase(it);
            } else {
                it->duration_ms = static_cast<double>(anchor_t_us - it->start_us) / 1000.0;
                ++it;
            }
        }
        if (cancelled) {
            r.overrun = true;
            preemptions_.push_back({anchor_t_us, unit, cancelled});
        }
    }
    timeline_.insert(timeline_.end(), r.events.begin(), r.events.end());
    std::stable_sort(timeline_.begin(), timeline_.end(),
                     [](const ActuationEvent& a, const ActuationEvent& b) { return a.start_us < b.start_us; });
    return r;
}

void bus_apply(const std::vector<ActuationEvent>& events, VirtualBus& bus) {
    for (std::size_t i = 1; i < events.size(); ++i)
        if (events[i].start_us < events[i - 1].start_us)
            throw Error(Errc::InvalidArgument, "bus_apply expects time-ordered events");
    for (const auto& e : events) {
        auto& log = bus.channels[static_cast<std::size_t>(e.unit)];
        const std::uint64_t on = e.start_us + VirtualBus::kCommandLatencyUs;
        const std::uint64_t off = e.end_us() + VirtualBus::kCommandLatencyUs;
        while (!log.empty() && log.back().t_us >= on) {
            log.pop_back();
            ++bus.overwritten;
        }
        log.push_back({on, e.pwm});
        log.push_back({off, 0});
        bus.commands += 2;
    }
}

bool bus_logs_consistent(const VirtualBus& bus) {
    for (const auto& log : bus.channels) {
        // Nonzero span i is [t_i, t_{i+1}); a trailing nonzero command never ends.
        std::vector<std::pair<std::uint64_t, std::uint64_t>> spans;
        for (std::size_t i = 0; i < log.size(); ++i) {
            if (i > 0 && log[i].t_us < log[i - 1].t_us) return false;
            if (log[i].pwm == 0) continue;
            if (i + 1 >= log.size()) return false;
            spans.emplace_back(log[i].t_us, log[i + 1].t_us);
        }
        for (std::size_t a = 0; a < spans.size(); ++a)
            for (std::size_t b = a + 1; b < spans.size(); ++b)
                if (spans[a].first < spans[b].second && spans[b].first < spans[a].second) return false;
    }
    return true;
}

std::string format_bus_timeline(const VirtualBus& bus) {
    std::ostringstream os;
    char buf[96];
    for (auto u : kAllUnits) {
        const auto& log = bus.channel(u);
        os << to_string(u) << " (" << log.size() << " commands)\n";
        for (const auto& c : log) {
            std::snprintf(buf, sizeof buf, "  %12.3f ms  pwm %3d\n", static_cast<double>(c.t_us) / 1000.0, c.pwm);
            os << buf;
        }
    }
    return os.str();
}

}  // namespace cprloop
