#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cprloop/channel.hpp"
#include "cprloop/core.hpp"
#include "cprloop/haptics.hpp"
#include "cprloop/metrics.hpp"
#include "cprloop/models.hpp"
#include "cprloop/preprocess.hpp"
#include "cprloop/session_log.hpp"

namespace cprloop {

// Model inputs computed from the offset-corrected peak frame.
/// Force: raw corrected palm|dorsum values (the model applies its own PCA).
Eigen::VectorXd force_features(const SignalGrid& palm, const SignalGrid& dorsum);
/// Pose: each side min-max normalized, so the footprint shape dominates
/// over the force magnitude.
Eigen::VectorXd pose_features(const SignalGrid& palm, const SignalGrid& dorsum);

// ---------------------------------------------------------------------------
// Calibration

inline constexpr double kQuiescentForceN = 2.0;  // ground truth above this breaks the quiet prefix
inline constexpr double kCrestDepth = 0.5;       // see calibrate()

struct CalibrationSample {
    std::uint64_t t_us = 0;
    double crest_us = 0.0;
    Eigen::VectorXd force_x;
    Eigen::VectorXd pose_x;
    std::optional<double> newton;  // ground-truth peak force
    std::optional<ForceClass> force;
    std::optional<PoseClass> pose;
};

struct CalibrationDataset {
    Baseline baseline;
    double prominence = 0.0;
    std::vector<CalibrationSample> samples;

    std::size_t force_count() const;
    std::size_t pose_count() const;
    std::size_t pose_count(PoseClass p) const;
    /// Rows of labelled samples and their class indices.
    std::pair<Eigen::MatrixXd, std::vector<int>> force_matrix() const;
    std::pair<Eigen::MatrixXd, std::vector<int>> pose_matrix() const;
};

struct CalibrateOptions {
    double peak_window_s = kPeakWindowS;
    std::uint64_t baseline_window_us = kBaselineWindowUs;
    std::size_t min_compressions = 20;
};

/**
 * Baseline from the first 10 s, then one sample per detected peak. A peak
 * gets a force label when the ground truth shows a compression crest within
 * the peak window (force falling to kCrestDepth of its maximum on both
 * sides; step plateaus and ramp tops do not qualify). The label is the
 * three-point parabolic crest force against the subject band. Pose labels
 * come from the pose record active at the peak. Throws
 * InsufficientQuiescence, InsufficientCompressions, UnpairedFrame.
 */
CalibrationDataset calibrate(const SessionLog& log, const SubjectProfile& subject, const CalibrateOptions& opt = {});

struct SubjectModels {
    std::shared_ptr<const TrainedModel> force;
    std::shared_ptr<const TrainedModel> pose;
};

/// Fits the force and pose classifiers on a calibration dataset.
SubjectModels train_subject_models(const CalibrationDataset& data, const SubjectProfile& subject, Method method,
                                   const TrainConfig& cfg = {});

/// <dir>/force.cprmodel.json and <dir>/pose.cprmodel.json
void save_models(const std::string& dir, const SubjectModels& models);
/// Throws ModelMissing when either bundle is absent.
SubjectModels load_models(const std::string& dir);

// ---------------------------------------------------------------------------
// Closed loop

struct PipelineConfig {
    SubjectProfile subject;
    std::string force_model_path;
    std::string pose_model_path;
    double peak_window_s = kPeakWindowS;
    std::optional<double> prominence;  // default: 5 sigma of the baseline aggregate noise
    std::uint64_t baseline_window_us = kBaselineWindowUs;
    std::size_t channel_capacity = 256;
    Overflow ingest_overflow = Overflow::DropOldest;
    double latency_budget_ms = 50.0;
    PulseTiming timing;
    std::uint64_t haptic_delay_us = kFramePeriodUs;  // earliest pattern start after the peak frame
};

/// Returns the next sample, or nullopt when the source is exhausted.
using FrameSource = std::function<std::optional<DualSample>()>;

FrameSource vector_source(std::vector<DualSample> samples);

struct StageStats {
    std::size_t n = 0;
    double mean_ms = 0.0;
    double std_ms = 0.0;
    double p99_ms = 0.0;
    double max_ms = 0.0;
};

StageStats stage_stats(std::vector<double> samples_ms);

struct LatencyReport {
    StageStats record;      // validation + logging
    StageStats preprocess;  // offset correction, aggregate, peak detector
    StageStats infer;       // features + both models, per detected peak
    StageStats encode;      // pattern encoding, scheduling, bus writes
    StageStats frame;       // record + preprocess + infer per frame
    StageStats end_to_end;  // ingest to last stage, per frame
    double budget_ms = 50.0;

    bool within_budget() const { return frame.p99_ms < budget_ms; }
    std::string to_table() const;
};

struct RunResult {
    std::vector<CompressionVerdict> verdicts;
    std::vector<ActuationEvent> haptic_events;  // as played, after preemption
    std::vector<Preemption> preemptions;
    VirtualBus bus;
    LatencyReport latency;
    SessionLog log;
    SessionReport report;
    std::optional<Baseline> baseline;
    double prominence = 0.0;
    std::size_t frames_in = 0;
    std::size_t frames_processed = 0;
    std::size_t frames_dropped = 0;  // ingest channel overflow
    std::size_t frames_invalid = 0;
    std::vector<std::string> errors;    // per-frame stage errors, loop continued
    std::vector<std::string> warnings;
};

/**
 * Three threads (ingest -> process -> feedback) joined by bounded channels.
 * The first baseline_window_us of the stream sets the baseline; every peak
 * after that yields one verdict and one haptic pattern. Throws ModelMissing.
 */
RunResult run_loop(FrameSource source, const PipelineConfig& cfg, const SubjectModels& models);

/// Loads models from cfg.force_model_path / cfg.pose_model_path.
RunResult run_loop(FrameSource source, const PipelineConfig& cfg);

}  // namespace cprloop
