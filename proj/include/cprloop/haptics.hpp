#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "cprloop/core.hpp"

namespace cprloop {

// Intensity levels (PWM, 128 = full scale).
inline constexpr int kPwmLow = 50;
inline constexpr int kPwmMid = 73;
inline constexpr int kPwmHigh = 128;

/// Rate -> pulse count, force -> intensity (inverted:
/// too weak gets the strongest buzz), pose -> unit position.
struct HapticPattern {
    int pulse_count = 1;
    int pwm = kPwmMid;
    std::vector<ActuatorUnit> units;
    bool alternating = false;

    friend bool operator==(const HapticPattern&, const HapticPattern&) = default;
};

HapticPattern encode_feedback(RateClass rate, ForceClass force, PoseClass pose);

/// One line of the golden table, e.g.
/// "too_slow,too_weak,correct -> pulses=1 pwm=128 units=center alternating=0"
std::string format_table_row(const JointState& state, const HapticPattern& pattern);

struct PulseTiming {
    double pulse_ms = 80.0;
    double gap_ms = 60.0;
};

struct ActuationEvent {
    ActuatorUnit unit = ActuatorUnit::Center;
    int pwm = 0;
    std::uint64_t start_us = 0;
    double duration_ms = 0.0;

    std::uint64_t end_us() const { return start_us + static_cast<std::uint64_t>(duration_ms * 1000.0 + 0.5); }
    friend bool operator==(const ActuationEvent&, const ActuationEvent&) = default;
};

/// Pure layout: pulse i starts at anchor + i * (pulse + gap). Alternating
/// patterns send pulse i to units[i % 2]; otherwise every pulse drives all
/// listed units.
std::vector<ActuationEvent> schedule_pattern(const HapticPattern& pattern, std::uint64_t anchor_t_us,
                                             const PulseTiming& timing = {});

/// Total time from the first pulse start to the last pulse end, in ms.
double pattern_span_ms(const HapticPattern& pattern, const PulseTiming& timing = {});

struct Preemption {
    std::uint64_t t_us = 0;
    ActuatorUnit unit = ActuatorUnit::Center;
    std::size_t cancelled = 0;  // events dropped or truncated on that unit
};

/**
 * Stateful scheduler enforcing per-unit non-overlap. A pattern whose anchor
 * lands while an earlier pattern still occupies one of its units preempts
 * it: the earlier events on that unit are truncated at the anchor (or
 * dropped if not yet started) and the PatternOverrun is recorded.
 */
class HapticScheduler {
public:
    explicit HapticScheduler(PulseTiming timing = {}) : timing_(timing) {}

    struct Result {
        std::vector<ActuationEvent> events;
        bool overrun = false;
    };

    Result schedule(const HapticPattern& pattern, std::uint64_t anchor_t_us);

    /// Events as they will actually play, after preemption truncation.
    const std::vector<ActuationEvent>& timeline() const { return timeline_; }
    const std::vector<Preemption>& preemptions() const { return preemptions_; }
    const PulseTiming& timing() const { return timing_; }

private:
    PulseTiming timing_;
    std::vector<ActuationEvent> timeline_;
    std::vector<Preemption> preemptions_;
};

struct BusCommand {
    std::uint64_t t_us = 0;
    int pwm = 0;
    friend bool operator==(const BusCommand&, const BusCommand&) = default;
};

/// Four virtual actuator channels with a per-command serial latency.
struct VirtualBus {
    static constexpr std::uint64_t kCommandLatencyUs = 20;  // 2 Mbaud serial write

    std::array<std::vector<BusCommand>, 4> channels;
    std::size_t commands = 0;
    std::size_t overwritten = 0;  // commands discarded by a later preempting event

    const std::vector<BusCommand>& channel(ActuatorUnit u) const { return channels[static_cast<std::size_t>(u)]; }
};

/// Appends (start + latency, pwm) and (end + latency, 0) per event. An event
/// starting before commands already queued on its channel discards them.
void bus_apply(const std::vector<ActuationEvent>& events, VirtualBus& bus);

/// True when every channel log is time-ordered and its nonzero spans are
/// disjoint.
bool bus_logs_consistent(const VirtualBus& bus);

/// Human-readable per-channel timeline.
std::string format_bus_timeline(const VirtualBus& bus);

}  // namespace cprloop
