#include "cprloop/core.hpp"

#include <cstdlib>

namespace cprloop {

std::string_view to_string(Errc code) noexcept {
    switch (code) {
        case Errc::DimensionMismatch: return "DimensionMismatch";
        case Errc::CountOutOfRange: return "CountOutOfRange";
        case Errc::NonMonotoneTimestamp: return "NonMonotoneTimestamp";
        case Errc::UnsyncedSides: return "UnsyncedSides";
        case Errc::NonMonotoneSeq: return "NonMonotoneSeq";
        case Errc::InvalidArgument: return "InvalidArgument";
        case Errc::SideMismatch: return "SideMismatch";
        case Errc::EmptySeries: return "EmptySeries";
        case Errc::DegenerateData: return "DegenerateData";
        case Errc::SingularSystem: return "SingularSystem";
        case Errc::MissingClass: return "MissingClass";
        case Errc::NonFinite: return "NonFinite";
        case Errc::BadBundle: return "BadBundle";
        case Errc::NonPositiveInterval: return "NonPositiveInterval";
        case Errc::NonPositiveWeight: return "NonPositiveWeight";
        case Errc::TooFewPeaks: return "TooFewPeaks";
        case Errc::PatternOverrun: return "PatternOverrun";
        case Errc::DegenerateTrace: return "DegenerateTrace";
        case Errc::TooFewCycles: return "TooFewCycles";
        case Errc::ZeroNoise: return "ZeroNoise";
        case Errc::NonPositiveSignal: return "NonPositiveSignal";
        case Errc::InvalidSample: return "InvalidSample";
        case Errc::BadMagic: return "BadMagic";
        case Errc::BadVersion: return "BadVersion";
        case Errc::Truncated: return "Truncated";
        case Errc::TrailingBytes: return "TrailingBytes";
        case Errc::MissingSide: return "MissingSide";
        case Errc::SocketError: return "SocketError";
        case Errc::CorruptLog: return "CorruptLog";
        case Errc::UnpairedFrame: return "UnpairedFrame";
        case Errc::InsufficientQuiescence: return "InsufficientQuiescence";
        case Errc::InsufficientCompressions: return "InsufficientCompressions";
        case Errc::ModelMissing: return "ModelMissing";
        case Errc::Io: return "Io";
    }
    return "Unknown";
}

std::array<JointState, 36> all_joint_states() {
    std::array<JointState, 36> out{};
    std::size_t i = 0;
    for (auto r : kAllRates)
        for (auto f : kAllForces)
            for (auto p : kAllPoses) out[i++] = {r, f, p};
    return out;
}

std::string_view to_string(Side s) { return s == Side::Palm ? "palm" : "dorsum"; }

std::string_view to_string(RateClass c) {
    switch (c) {
        case RateClass::TooSlow: return "too_slow";
        case RateClass::Correct: return "correct";
        case RateClass::TooFast: return "too_fast";
    }
    return "?";
}

std::string_view to_string(ForceClass c) {
    switch (c) {
        case ForceClass::TooWeak: return "too_weak";
        case ForceClass::Correct: return "correct";
        case ForceClass::TooStrong: return "too_strong";
    }
    return "?";
}

std::string_view to_string(PoseClass c) {
    switch (c) {
        case PoseClass::Correct: return "correct";
        case PoseClass::LeftSkewed: return "left_skewed";
        case PoseClass::RightSkewed: return "right_skewed";
        case PoseClass::FingerRelease: return "finger_release";
    }
    return "?";
}

std::string_view to_string(ActuatorUnit u) {
    switch (u) {
        case ActuatorUnit::Left: return "left";
        case ActuatorUnit::Center: return "center";
        case ActuatorUnit::Right: return "right";
        case ActuatorUnit::Lower: return "lower";
    }
    return "?";
}

namespace {
template <typename E, std::size_t N>
E parse_enum(std::string_view s, const std::array<E, N>& all, const char* what) {
    for (auto e : all)
        if (to_string(e) == s) return e;
    throw Error(Errc::InvalidArgument, std::string("unknown ") + what + " '" + std::string(s) + "'");
}
}  // namespace

Side parse_side(std::string_view s) {
    return parse_enum(s, std::array<Side, 2>{Side::Palm, Side::Dorsum}, "side");
}
RateClass parse_rate(std::string_view s) { return parse_enum(s, kAllRates, "rate class"); }
ForceClass parse_force(std::string_view s) { return parse_enum(s, kAllForces, "force class"); }
PoseClass parse_pose(std::string_view s) { return parse_enum(s, kAllPoses, "pose class"); }
ActuatorUnit parse_unit(std::string_view s) { return parse_enum(s, kAllUnits, "actuator unit"); }

std::optional<Errc> validate_frame(const TactileFrame& frame, std::optional<std::uint64_t> previous_timestamp_us) {
    if (!frame.counts.has_shape(kRows, kCols)) return Errc::DimensionMismatch;
    for (auto c : frame.counts.data)
        if (c > kAdcMax) return Errc::CountOutOfRange;
    if (previous_timestamp_us && frame.timestamp_us <= *previous_timestamp_us) return Errc::NonMonotoneTimestamp;
    return std::nullopt;
}

void check_frame(const TactileFrame& frame, std::optional<std::uint64_t> previous_timestamp_us) {
    if (auto err = validate_frame(frame, previous_timestamp_us))
        throw Error(*err, std::string(to_string(frame.side)) + " frame at t=" + std::to_string(frame.timestamp_us));
}

std::optional<Errc> validate_sample(const DualSample& sample, std::optional<std::uint32_t> previous_seq) {
    if (sample.palm.side != Side::Palm || sample.dorsum.side != Side::Dorsum) return Errc::SideMismatch;
    if (auto e = validate_frame(sample.palm)) return e;
    if (auto e = validate_frame(sample.dorsum)) return e;
    auto a = static_cast<std::int64_t>(sample.palm.timestamp_us);
    auto b = static_cast<std::int64_t>(sample.dorsum.timestamp_us);
    if (std::llabs(a - b) > kFramePeriodUs) return Errc::UnsyncedSides;
    if (previous_seq && sample.seq <= *previous_seq) return Errc::NonMonotoneSeq;
    return std::nullopt;
}

}  // namespace cprloop
