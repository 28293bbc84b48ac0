#pragma once

#include <cstdint>
#include <deque>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "cprloop/core.hpp"

namespace cprloop {

inline constexpr double kStandardGravity = 9.81;  // m/s^2, load-cell kgf conversion
inline constexpr std::uint64_t kBaselineWindowUs = 10'000'000;
inline constexpr double kPeakWindowS = 0.6;

// ---------------------------------------------------------------------------
// Offset correction

struct SideBaseline {
    Side side = Side::Palm;
    SignalGrid level{kRows, kCols};
};

/// Per-cell quiescent level for both sides plus the noise floor of the
/// aggregate signal measured over the same window.
struct Baseline {
    SideBaseline palm{Side::Palm};
    SideBaseline dorsum{Side::Dorsum, SignalGrid(kRows, kCols)};
    double aggregate_noise_std = 0.0;
    std::size_t frame_count = 0;
};

/// Per-cell mean over samples whose timestamp falls within window_us of the
/// first sample. Throws EmptySeries when no samples are given.
Baseline estimate_baseline(std::span<const DualSample> samples, std::uint64_t window_us = kBaselineWindowUs);

/// Prominence threshold derived from the baseline noise floor (5 sigma).
double default_prominence(const Baseline& baseline);

/// out = baseline - raw. Positive values grow with applied force; negative
/// values are kept.
SignalGrid offset_correct(const TactileFrame& frame, const SideBaseline& baseline);
SignalGrid offset_correct(const TactileFrame& frame, const Baseline& baseline);

/// Mean of all 364 corrected values of a palm/dorsum pair.
double aggregate_signal(const SignalGrid& palm, const SignalGrid& dorsum);

/// Concatenated palm|dorsum feature vector (364 entries, row-major per side).
Eigen::VectorXd feature_vector(const SignalGrid& palm, const SignalGrid& dorsum);

/// (v - min) / (max - min); constant grids map to all zeros.
SignalGrid normalize_frame(const SignalGrid& grid);

// ---------------------------------------------------------------------------
// Peak sampling

struct SeriesPoint {
    std::uint64_t t_us = 0;
    double value = 0.0;
};

struct Peak {
    std::size_t index = 0;  // position in the input series
    std::uint64_t t_us = 0; // timestamp of the maximal sample
    double value = 0.0;
    double valley = 0.0;    // minimum inside the same window
    double crest_us = 0.0;  // three-point parabolic refinement of t_us
    friend bool operator==(const Peak&, const Peak&) = default;
};

struct PeakSet {
    std::vector<Peak> peaks;
    double window_s = kPeakWindowS;
};

/**
 * A sample is a peak when it is the strict maximum of every sample within
 * +-window/2 of it and exceeds the window minimum by more than prominence.
 * Windows are truncated at the series ends. Throws EmptySeries.
 */
PeakSet detect_peaks(std::span<const SeriesPoint> series, double window_s = kPeakWindowS, double prominence = 0.0);

/// Streaming form of detect_peaks. A candidate is judged once a sample at
/// least window/2 later has arrived; finish() flushes the tail with a
/// truncated window. Output equals detect_peaks over the same series.
class OnlinePeakDetector {
public:
    explicit OnlinePeakDetector(double window_s = kPeakWindowS, double prominence = 0.0);

    std::vector<Peak> push(std::uint64_t t_us, double value);
    std::vector<Peak> finish();

    std::size_t samples_seen() const { return next_index_; }

private:
    std::vector<Peak> drain(bool final);

    std::int64_t half_us_;
    double prominence_;
    std::deque<SeriesPoint> buf_;
    std::size_t buf_start_ = 0;   // series index of buf_.front()
    std::size_t next_index_ = 0;  // series index of the next pushed sample
    std::size_t pending_ = 0;     // first series index not yet judged
};

// ---------------------------------------------------------------------------
// PCA

struct PcaProjection {
    Eigen::VectorXd mean;
    Eigen::MatrixXd components;  // k x d, orthonormal rows
    std::vector<double> explained_ratio;
    double total_variance = 0.0;

    int k() const { return static_cast<int>(components.rows()); }
    int d() const { return static_cast<int>(components.cols()); }
    double retained_ratio() const;
};

/// Covariance eigendecomposition; keeps the smallest k whose cumulative
/// explained variance reaches threshold. The largest-magnitude entry of each
/// component is made positive. Throws DegenerateData, InvalidArgument.
PcaProjection fit_pca(const Eigen::MatrixXd& samples, double threshold = 0.95);

/// Throws DimensionMismatch.
Eigen::VectorXd apply_pca(const PcaProjection& proj, const Eigen::VectorXd& x);

// ---------------------------------------------------------------------------
// Stream alignment

struct ForceSample {
    std::uint64_t t_us = 0;
    double newton = 0.0;
};

struct AlignedPair {
    std::uint64_t tactile_t_us = 0;
    std::uint64_t force_t_us = 0;
    double newton = 0.0;
};

struct AlignResult {
    std::vector<AlignedPair> pairs;
    std::size_t dropped = 0;
};

/// Nearest tactile timestamp per force sample; exact midpoints go to the
/// earlier timestamp; pairs further apart than max_gap_us are dropped.
AlignResult align_streams(std::span<const ForceSample> force, std::span<const std::uint64_t> tactile_t_us,
                          std::uint64_t max_gap_us = kFramePeriodUs);

constexpr double kgf_to_newton(double kgf) { return kgf * kStandardGravity; }

}  // namespace cprloop
