#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cprloop/core.hpp"
#include "cprloop/preprocess.hpp"

namespace cprloop {

inline constexpr double kRateFastBelowMs = 500.0;
inline constexpr double kRateSlowAboveMs = 600.0;
inline constexpr double kBandGravity = 9.8;  // the force-band formula uses 9.8, not 9.81

/// Throws NonPositiveInterval.
RateClass classify_rate(double dt_ms);

enum class BandRule : std::uint8_t {
    Continuous,  // [0.5 w g, 0.6 w g]
    Stepwise,    // 500-600 N at >= 90 kg, minus 10% of that band per 10 kg below
};

/// Throws NonPositiveWeight.
ForceBand force_band(double weight_kg, BandRule rule = BandRule::Continuous);

SubjectProfile make_subject(std::string id, double weight_kg, BandRule rule = BandRule::Continuous);

/// Inclusive band: f1 <= F <= f2 is Correct.
ForceClass classify_force(double newton, const ForceBand& band);
/// Model output passes through unchanged.
constexpr ForceClass classify_force(ForceClass predicted, const ForceBand&) { return predicted; }

/// Differences between adjacent crest times, in ms. Throws TooFewPeaks.
std::vector<double> compute_intervals(const PeakSet& peaks);

struct CompressionVerdict {
    std::uint64_t peak_t_us = 0;
    double crest_us = 0.0;
    std::optional<RateClass> rate;    // nullopt for the first compression
    std::optional<ForceClass> force;  // nullopt when unscored
    std::optional<PoseClass> pose;
    double dt_ms = 0.0;
    std::vector<double> force_scores;
    std::vector<double> pose_scores;
};

struct SessionReport {
    std::array<std::size_t, 3> rate_hist{};
    std::array<std::size_t, 3> force_hist{};
    std::array<std::size_t, 4> pose_hist{};
    std::size_t verdicts = 0;
    std::size_t rate_undefined = 0;
    std::size_t unscored = 0;
    double rate_correct = 0.0;   // fraction over verdicts with a defined rate
    double force_correct = 0.0;  // fraction over scored verdicts
    double pose_correct = 0.0;
    double dt_mean_ms = 0.0;
    double dt_std_ms = 0.0;
    std::vector<CompressionVerdict> series;

    std::string to_json() const;
    std::string to_table() const;
};

SessionReport session_report(std::span<const CompressionVerdict> verdicts);

}  // namespace cprloop
