#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <tuple>

#include "cprloop/error.hpp"
#include "cprloop/grid.hpp"

namespace cprloop {

enum class Side : std::uint8_t { Palm, Dorsum };

/// One scan of a 13x14 resistive array. Counts are raw 13-bit ADC readings.
struct TactileFrame {
    Side side = Side::Palm;
    CountGrid counts{kRows, kCols};
    std::uint64_t timestamp_us = 0;

    friend bool operator==(const TactileFrame&, const TactileFrame&) = default;
};

/// Synchronized palm + dorsum scan, the unit of work of the pipeline.
struct DualSample {
    TactileFrame palm{Side::Palm};
    TactileFrame dorsum{Side::Dorsum};
    std::uint32_t seq = 0;

    std::uint64_t timestamp_us() const { return palm.timestamp_us; }

    friend bool operator==(const DualSample&, const DualSample&) = default;
};

enum class RateClass : std::uint8_t { TooSlow, Correct, TooFast };
enum class ForceClass : std::uint8_t { TooWeak, Correct, TooStrong };
enum class PoseClass : std::uint8_t { Correct, LeftSkewed, RightSkewed, FingerRelease };

inline constexpr std::array<RateClass, 3> kAllRates{RateClass::TooSlow, RateClass::Correct, RateClass::TooFast};
inline constexpr std::array<ForceClass, 3> kAllForces{ForceClass::TooWeak, ForceClass::Correct,
                                                      ForceClass::TooStrong};
inline constexpr std::array<PoseClass, 4> kAllPoses{PoseClass::Correct, PoseClass::LeftSkewed,
                                                    PoseClass::RightSkewed, PoseClass::FingerRelease};

enum class ActuatorUnit : std::uint8_t { Left, Center, Right, Lower };
inline constexpr std::array<ActuatorUnit, 4> kAllUnits{ActuatorUnit::Left, ActuatorUnit::Center, ActuatorUnit::Right,
                                                       ActuatorUnit::Lower};

struct JointState {
    RateClass rate;
    ForceClass force;
    PoseClass pose;
    friend auto operator<=>(const JointState&, const JointState&) = default;
};

/// All 36 (rate, force, pose) combinations, rate-major.
std::array<JointState, 36> all_joint_states();

std::string_view to_string(Side s);
std::string_view to_string(RateClass c);
std::string_view to_string(ForceClass c);
std::string_view to_string(PoseClass c);
std::string_view to_string(ActuatorUnit u);

// Parsers accept the snake_case names produced by to_string; they throw
// Error(InvalidArgument) on anything else.
Side parse_side(std::string_view s);
RateClass parse_rate(std::string_view s);
ForceClass parse_force(std::string_view s);
PoseClass parse_pose(std::string_view s);
ActuatorUnit parse_unit(std::string_view s);

struct ForceBand {
    double f1 = 0.0;  // N
    double f2 = 0.0;  // N
    double weight_kg = 0.0;
    friend bool operator==(const ForceBand&, const ForceBand&) = default;
};

struct SubjectProfile {
    std::string id;
    double weight_kg = 0.0;
    ForceBand force_band;
};

/**
 * Checks the TactileFrame invariants. When previous_timestamp_us is given the
 * frame's timestamp must be strictly greater. Returns nullopt when the frame
 * is valid, otherwise the first violated rule.
 */
std::optional<Errc> validate_frame(const TactileFrame& frame,
                                   std::optional<std::uint64_t> previous_timestamp_us = std::nullopt);

/// Throwing variant of validate_frame.
void check_frame(const TactileFrame& frame, std::optional<std::uint64_t> previous_timestamp_us = std::nullopt);

/// Frame checks on both sides, side tags, and the 70 ms synchronization bound.
/// previous_seq enforces strictly increasing sequence numbers.
std::optional<Errc> validate_sample(const DualSample& sample, std::optional<std::uint32_t> previous_seq = std::nullopt);

}  // namespace cprloop
