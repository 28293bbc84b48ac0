#pragma once

#include <cstdint>
#include <iosfwd>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "cprloop/core.hpp"
#include "cprloop/sensorsim.hpp"
#include "cprloop/session_log.hpp"

namespace cprloop {

struct LoopPoint {
    double force_n = 0.0;
    double response = 0.0;
};

/// One quasi-static load/unload loop. Loading forces strictly increase,
/// unloading forces strictly decrease, and both branches span the same range.
struct LoopTrace {
    std::vector<LoopPoint> loading;
    std::vector<LoopPoint> unloading;
};

/**
 * 100 x (area enclosed between the branches) / (area under the loading
 * branch above the response floor). Both integrals are trapezoidal on the
 * union force grid with linear interpolation; crossings are split exactly.
 * The floor is the smallest response on either branch. Throws DegenerateTrace.
 */
double hysteresis_ratio(const LoopTrace& trace);

/// amplitude_i = peak_i - valley_i of each cycle.
std::vector<double> cycle_amplitudes(const std::vector<std::vector<double>>& cycles);

/// 100 x |mean(first 10) - mean(last 10)| / mean(first 10). Throws
/// TooFewCycles below 20 amplitudes, DegenerateTrace when the first mean is 0.
double cycle_drift(std::span<const double> amplitudes);

// ---------------------------------------------------------------------------
// Signal-to-noise

using MaskGrid = Grid<std::uint8_t>;

class PressMask {
public:
    explicit PressMask(MaskGrid pressed);
    static PressMask patch(int row0, int col0, int size, int rows = kRows, int cols = kCols);
    /// The `count` cells with the largest mean value.
    static PressMask top_cells(const SignalGrid& mean_response, int count);

    const MaskGrid& pressed() const { return pressed_; }
    /// Unpressed cells within one cell (8-neighbourhood) of a pressed cell.
    const MaskGrid& ring() const { return ring_; }
    const MaskGrid& unpressed() const { return unpressed_; }
    std::size_t pressed_count() const;

private:
    MaskGrid pressed_, ring_, unpressed_;
};

enum class SnrMode : std::uint8_t { Local, Global };

struct SnrResult {
    double db = 0.0;
    double signal = 0.0;
    double noise = 0.0;
    bool zero_noise = false;  // db is +inf
};

/// 20 log10(ratio). Throws NonPositiveSignal for ratio <= 0.
double snr_from_ratio(double ratio);

/**
 * Signal: median over frames of the mean corrected value on pressed cells.
 * Noise: median over frames of the mean |corrected| value on the ring
 * (Local) or on every unpressed cell (Global). One frame per cycle, taken at
 * the cycle's peak. Throws NonPositiveSignal, DegenerateTrace, DimensionMismatch.
 */
SnrResult snr_db(std::span<const SignalGrid> frames, const PressMask& mask, SnrMode mode);

inline constexpr double kPatchSideMm = 27.2;

struct ContactLoad {
    double pressure_n_per_mm2 = 0.0;
    double per_cell_n = 0.0;
};

/// Uniform contact: pressure = F / area, per-cell force = F / cells.
/// Throws InvalidArgument for non-positive inputs.
ContactLoad force_per_cell(double total_force_n, double patch_area_mm2 = kPatchSideMm * kPatchSideMm,
                           int cells = 25);

// ---------------------------------------------------------------------------
// Traces

using sim::TraceRow;

/// Pressed-cell mean response per row, split into per-cycle loops. Rows of a
/// cycle must be contiguous.
std::vector<LoopTrace> loops_from_rows(std::span<const TraceRow> rows, const PressMask& mask);

/// One frame per cycle: the loading-branch row with the largest force.
std::vector<SignalGrid> peak_frames(std::span<const TraceRow> rows);

/// CSV with header cycle,force_N,phase,c0..c181. The phase column
/// ("load"/"unload") is optional on input; without it a row is loading up to
/// and including the force maximum of its cycle.
void write_trace_csv(std::ostream& os, std::span<const TraceRow> rows);
void write_trace_csv(const std::string& path, std::span<const TraceRow> rows);
std::vector<TraceRow> read_trace_csv(std::istream& is);
std::vector<TraceRow> read_trace_csv(const std::string& path);

/**
 * Trace rows from a recorded session: palm frames offset-corrected against
 * the first 10 s, force from the nearest ground-truth record, cycles split
 * at the valleys between detected compressions.
 */
std::vector<TraceRow> rows_from_session(const SessionLog& log);

// ---------------------------------------------------------------------------
// Reports

struct LevelSnr {
    double force_n = 0.0;
    SnrResult local;
    SnrResult global;
};

struct CharacterizationReport {
    std::size_t cycles = 0;
    double hysteresis_pct = 0.0;  // mean over cycles
    double drift_pct = std::numeric_limits<double>::quiet_NaN();  // NaN below 20 cycles
    SnrResult snr_local;
    SnrResult snr_global;
    std::vector<LevelSnr> levels;

    std::string to_text() const;
    std::string to_json() const;
};

/// Levels are the distinct loading-branch forces, at most max_levels of them
/// spread evenly over the range.
CharacterizationReport characterize_rows(std::span<const TraceRow> rows, const PressMask& mask,
                                         std::size_t max_levels = 5);

struct HysteresisFit {
    double h = 0.0;
    double ratio_pct = 0.0;
};

/// Bisects the cell hysteresis parameter until a noise-free single-cycle
/// patch press gives target_pct.
HysteresisFit tune_hysteresis(double target_pct, const sim::PatchPress& press, const sim::SimConfig& cfg,
                              double tolerance_pct = 0.05);

}  // namespace cprloop
