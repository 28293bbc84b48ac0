#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace cprloop {

enum class Errc {
    // core
    DimensionMismatch,
    CountOutOfRange,
    NonMonotoneTimestamp,
    UnsyncedSides,
    NonMonotoneSeq,
    InvalidArgument,
    // preprocess
    SideMismatch,
    EmptySeries,
    DegenerateData,
    // models
    SingularSystem,
    MissingClass,
    NonFinite,
    BadBundle,
    // metrics
    NonPositiveInterval,
    NonPositiveWeight,
    TooFewPeaks,
    // haptics
    PatternOverrun,
    // characterize
    DegenerateTrace,
    TooFewCycles,
    ZeroNoise,
    NonPositiveSignal,
    // wire
    InvalidSample,
    BadMagic,
    BadVersion,
    Truncated,
    TrailingBytes,
    MissingSide,
    SocketError,
    CorruptLog,
    UnpairedFrame,
    // pipeline
    InsufficientQuiescence,
    InsufficientCompressions,
    ModelMissing,
    Io,
};

std::string_view to_string(Errc code) noexcept;

class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}
    explicit Error(Errc code) : std::runtime_error(std::string(to_string(code))), code_(code) {}

    Errc code() const noexcept { return code_; }

private:
    Errc code_;
};

}  // namespace cprloop
