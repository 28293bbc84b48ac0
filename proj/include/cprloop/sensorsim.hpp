#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "cprloop/core.hpp"
#include "cprloop/session_log.hpp"

namespace cprloop::sim {

inline constexpr double kPullupOhm = 4700.0;

/// Piezoresistive cell: R = R0 / (1 + k F (1 +- h/2)), + on the loading branch.
struct CellModel {
    double r0_ohm = 50'000.0;
    double k_per_n = 0.02;
    double hysteresis = 0.05;  // h in [0, 1)
    double crosstalk = 0.05;  // alpha in [0, 0.2], leaked to 4-neighbours
    double sigma_adc = 6.0;   // counts
};

double cell_resistance(const CellModel& model, double force_n, bool loading);

/// Noise-free reading before quantization, in fractional counts.
double cell_counts_exact(double resistance_ohm, double pullup_ohm = kPullupOhm);

/**
 * One ADC conversion of a cell behind a pull-up divider. Sensor to ground:
 * V = vref R / (R + pullup); counts = round(V / vref * 8191) + noise, clamped
 * to the 13-bit range. Pass rng = nullptr for a noise-free reading.
 */
int sample_cell(const CellModel& model, double force_n, bool loading, double vref = 3.3,
                double pullup_ohm = kPullupOhm, std::mt19937_64* rng = nullptr);

/// Frame interval distribution: mostly nominal +- near_ms, occasionally an
/// early frame anywhere in [min_ms, max_ms].
struct JitterConfig {
    double nominal_ms = 70.0;
    double near_ms = 2.0;
    double min_ms = 50.0;
    double max_ms = 72.0;
    double outlier_prob = 0.05;
};

class FrameClock {
public:
    FrameClock(JitterConfig cfg, std::uint64_t seed) : cfg_(cfg), rng_(seed) {}
    /// Next frame period in microseconds, always within [min_ms, max_ms].
    std::uint64_t next_period_us();

private:
    JitterConfig cfg_;
    std::mt19937_64 rng_;
};

struct SimConfig {
    CellModel cell;
    double r0_spread = 0.1;  // per-cell R0 varies uniformly by +-spread
    double vref = 3.3;
    double pullup_ohm = kPullupOhm;
    JitterConfig jitter;
    double force_rate_hz = 10.0;
    double loadcell_resolution_kgf = 0.01;
    std::uint64_t layout_seed = 7;  // fixes the per-cell R0 map
};

/// Per-cell unloaded resistance for both sides.
struct ArrayLayout {
    SignalGrid palm_r0{kRows, kCols};
    SignalGrid dorsum_r0{kRows, kCols};
};

ArrayLayout make_layout(const SimConfig& cfg);

/**
 * Scans one side: per-cell forces through the cell law, crosstalk of each
 * cell's count drop onto its 4-neighbours, noise, quantization.
 */
TactileFrame scan_frame(const SignalGrid& force_n, const SignalGrid& r0_ohm, bool loading, Side side,
                        std::uint64_t t_us, const SimConfig& cfg, std::mt19937_64* rng);

/// Footprint weight map (sums to 1) for a pose on one side.
SignalGrid pose_template(PoseClass pose, Side side);

/// Force-weighted mean column of a grid (its center of pressure).
double center_of_pressure_col(const SignalGrid& grid);

enum class ScriptKind : std::uint8_t { Rest, StepPress, Ramp, FreeCompressions, PoseSeries };

std::string_view to_string(ScriptKind k);
ScriptKind parse_script_kind(std::string_view s);

struct CompressionScript {
    ScriptKind kind = ScriptKind::FreeCompressions;
    double cpm = 110.0;
    double peak_force_n = 0.0;  // StepPress / Ramp ceiling; 0 picks 1.2 x f2
    PoseClass pose = PoseClass::Correct;
    int count = 20;
    double duration_s = 10.0;  // Rest
    double ramp_s = 5.0;       // Ramp: up and down each take ramp_s
    double step_n = 10.0;
    double hold_s = 3.0;
    double release_s = 1.0;
    // Free / PoseSeries peak forces ~ U[lo, hi] x band midpoint
    double force_lo = 0.7;
    double force_hi = 1.3;
};

/// A whole recording: segments played back to back.
struct SessionScript {
    std::vector<CompressionScript> segments;
};

/// Ground-truth crest of one scripted compression.
struct Crest {
    std::uint64_t t_us = 0;
    double force_n = 0.0;
    PoseClass pose = PoseClass::Correct;
};

/// Continuous scalar force program for a session script.
class Waveform {
public:
    Waveform(const SessionScript& script, const SubjectProfile& profile, std::uint64_t seed);

    double force_at(std::uint64_t t_us) const;
    bool loading_at(std::uint64_t t_us) const;
    PoseClass pose_at(std::uint64_t t_us) const;
    std::uint64_t duration_us() const { return duration_us_; }
    const std::vector<Crest>& crests() const { return crests_; }
    /// (start time, pose) of every PoseSeries segment; other segments carry no
    /// pose label.
    const std::vector<std::pair<std::uint64_t, PoseClass>>& pose_changes() const { return pose_changes_; }

private:
    struct Piece {
        enum class Shape { Flat, Linear, RaisedCosine } shape;
        std::uint64_t t0, t1;
        double a, b;  // Flat: a; Linear: a -> b; RaisedCosine: peak a
        PoseClass pose;
    };
    const Piece* piece_at(std::uint64_t t_us) const;

    std::vector<Piece> pieces_;
    std::vector<Crest> crests_;
    std::vector<std::pair<std::uint64_t, PoseClass>> pose_changes_;
    std::uint64_t duration_us_ = 0;
};

struct ScriptSample {
    std::uint64_t t_us = 0;
    SignalGrid palm_force{kRows, kCols};
    SignalGrid dorsum_force{kRows, kCols};
    double force_n = 0.0;
    PoseClass pose = PoseClass::Correct;
    bool loading = true;
};

/// Evaluates one script at the given instants: scalar force times the pose
/// template on each side.
std::vector<ScriptSample> generate_script(const CompressionScript& script, const SubjectProfile& profile,
                                          std::span<const std::uint64_t> times_us, std::uint64_t seed = 0);

struct SimulationResult {
    std::vector<DualSample> samples;
    SessionLog log;
    std::vector<Crest> crests;
};

/// Tactile stream at ~14.3 Hz plus 10 Hz load-cell ground truth, both
/// logged; deterministic per seed.
SimulationResult simulate_session(const SessionScript& script, const SubjectProfile& profile, std::uint64_t seed,
                                  const SimConfig& cfg = {});

// Canned protocols ----------------------------------------------------------

/// 10 s rest, step press, ramp, 20 free compressions, then
/// pose_count compressions for each of the four poses.
SessionScript calibration_protocol(int pose_count = 20, double cpm = 110.0);

/// 10 s rest, count compressions at cpm with the given pose and force range
/// (factors of the band midpoint), 2 s rest.
SessionScript training_session(int count, double cpm, PoseClass pose, double force_lo, double force_hi);

/**
 * Script definition JSON. Either a canned protocol:
 *   {"protocol":"calibration","pose_count":20,"cpm":110}
 *   {"protocol":"training","count":30,"cpm":110,"pose":"correct","force_lo":0.97,"force_hi":1.03}
 * or explicit segments, each with the CompressionScript field names:
 *   {"segments":[{"kind":"rest","duration_s":10},{"kind":"pose_series","pose":"left_skewed","count":20}]}
 * Throws InvalidArgument.
 */
SessionScript script_from_json(const std::string& text);
std::string script_to_json(const SessionScript& script);

// Characterization rig ------------------------------------------------------

struct PatchPress {
    int row0 = 4, col0 = 4, size = 5;  // pressed square on the palm array
    double peak_force_n = 600.0;       // total force over the patch
    int cycles = 300;
    int samples_per_half = 20;         // per loading / unloading branch
    double sensitivity_decay = 0.0;    // fractional k loss over the whole run
};

struct TraceRow {
    int cycle = 0;
    double force_n = 0.0;
    bool loading = true;
    SignalGrid response{kRows, kCols};  // offset-corrected palm frame
};

/// Quasi-static triangular load/unload cycles on a square patch, offset
/// corrected against the unloaded array.
std::vector<TraceRow> simulate_patch_press(const PatchPress& press, const SimConfig& cfg, std::uint64_t seed);

}  // namespace cprloop::sim
