#include "cprloop/sensorsim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include <json.hpp>

#include "cprloop/metrics.hpp"
#include "cprloop/preprocess.hpp"

namespace cprloop::sim {

double cell_resistance(const CellModel& model, double force_n, bool loading) {
    double branch = loading ? 1.0 + model.hysteresis / 2.0 : 1.0 - model.hysteresis / 2.0;
    return model.r0_ohm / (1.0 + model.k_per_n * std::max(force_n, 0.0) * branch);
}

double cell_counts_exact(double resistance_ohm, double pullup_ohm) {
    if (std::isinf(resistance_ohm)) return kAdcMax;
    return kAdcMax * resistance_ohm / (resistance_ohm + pullup_ohm);
}

namespace {
int quantize(double counts) { return static_cast<int>(std::clamp(std::round(counts), 0.0, double(kAdcMax))); }
}  // namespace

int sample_cell(const CellModel& model, double force_n, bool loading, double vref, double pullup_ohm,
                std::mt19937_64* rng) {
    double r = cell_resistance(model, force_n, loading);
    double v = vref * r / (r + pullup_ohm);
    double counts = std::round(v / vref * kAdcMax);
    if (rng && model.sigma_adc > 0.0) counts += std::normal_distribution<double>(0.0, model.sigma_adc)(*rng);
    return quantize(counts);
}

std::uint64_t FrameClock::next_period_us() {
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    double ms;
    if (u01(rng_) < cfg_.outlier_prob)
        ms = cfg_.min_ms + u01(rng_) * (cfg_.max_ms - cfg_.min_ms);
    else
        ms = cfg_.nominal_ms + (2.0 * u01(rng_) - 1.0) * cfg_.near_ms;
    ms = std::clamp(ms, cfg_.min_ms, cfg_.max_ms);
    return static_cast<std::uint64_t>(std::llround(ms * 1000.0));
}

ArrayLayout make_layout(const SimConfig& cfg) {
    ArrayLayout layout;
    std::mt19937_64 rng(cfg.layout_seed);
    std::uniform_real_distribution<double> u(-cfg.r0_spread, cfg.r0_spread);
    for (auto& v : layout.palm_r0.data) v = cfg.cell.r0_ohm * (1.0 + u(rng));
    for (auto& v : layout.dorsum_r0.data) v = cfg.cell.r0_ohm * (1.0 + u(rng));
    return layout;
}

TactileFrame scan_frame(const SignalGrid& force_n, const SignalGrid& r0_ohm, bool loading, Side side,
                        std::uint64_t t_us, const SimConfig& cfg, std::mt19937_64* rng) {
    if (!force_n.has_shape(kRows, kCols) || !r0_ohm.has_shape(kRows, kCols))
        throw Error(Errc::DimensionMismatch, "scan_frame expects 13x14 grids");
    SignalGrid unloaded(kRows, kCols), drop(kRows, kCols);
    for (std::size_t i = 0; i < unloaded.size(); ++i) {
        CellModel m = cfg.cell;
        m.r0_ohm = r0_ohm.data[i];
        unloaded.data[i] = cell_counts_exact(m.r0_ohm, cfg.pullup_ohm);
        drop.data[i] = unloaded.data[i] - cell_counts_exact(cell_resistance(m, force_n.data[i], loading), cfg.pullup_ohm);
    }
    TactileFrame f;
    f.side = side;
    f.timestamp_us = t_us;
    std::normal_distribution<double> noise(0.0, cfg.cell.sigma_adc > 0.0 ? cfg.cell.sigma_adc : 1.0);
    // Row-major scan order, matching the multiplexer sweep.
    for (int r = 0; r < kRows; ++r) {
        for (int c = 0; c < kCols; ++c) {
            double leak = 0.0;
            if (r > 0) leak += drop(r - 1, c);
            if (r + 1 < kRows) leak += drop(r + 1, c);
            if (c > 0) leak += drop(r, c - 1);
            if (c + 1 < kCols) leak += drop(r, c + 1);
            double v = unloaded(r, c) - drop(r, c) - cfg.cell.crosstalk * leak;
            if (rng && cfg.cell.sigma_adc > 0.0) v += noise(*rng);
            f.counts(r, c) = static_cast<std::uint16_t>(quantize(v));
        }
    }
    return f;
}

// ---------------------------------------------------------------------------
// Pose footprints

namespace {

void add_blob(SignalGrid& g, double r0, double c0, double sr, double sc, double weight) {
    SignalGrid b(kRows, kCols);
    double sum = 0.0;
    for (int r = 0; r < kRows; ++r)
        for (int c = 0; c < kCols; ++c) {
            double dr = (r - r0) / sr, dc = (c - c0) / sc;
            b(r, c) = std::exp(-0.5 * (dr * dr + dc * dc));
            sum += b(r, c);
        }
    for (std::size_t i = 0; i < g.size(); ++i) g.data[i] += weight * b.data[i] / sum;
}

void normalize_mass(SignalGrid& g) {
    double s = 0.0;
    for (double v : g.data) s += v;
    for (double& v : g.data) v /= s;
}

SignalGrid shift_cols(const SignalGrid& g, int by) {
    SignalGrid out(kRows, kCols);
    for (int r = 0; r < kRows; ++r)
        for (int c = 0; c < kCols; ++c) {
            int src = c - by;
            if (src >= 0 && src < kCols) out(r, c) = g(r, src);
        }
    normalize_mass(out);
    return out;
}

constexpr double kMidCol = (kCols - 1) / 2.0;

}  // namespace

SignalGrid pose_template(PoseClass pose, Side side) {
    SignalGrid g(kRows, kCols);
    if (side == Side::Palm) {
        add_blob(g, 8.5, kMidCol, 2.0, 2.2, 0.7);  // heel of the palm
        add_blob(g, 4.0, kMidCol, 1.8, 2.5, 0.3);
        if (pose == PoseClass::FingerRelease) add_blob(g, 1.0, kMidCol, 1.0, 3.0, 0.35);
    } else {
        add_blob(g, 6.0, kMidCol, 2.2, 2.5, 1.0);
        if (pose == PoseClass::FingerRelease) add_blob(g, 10.5, kMidCol, 1.2, 3.0, 0.5);
    }
    normalize_mass(g);
    if (pose == PoseClass::LeftSkewed) return shift_cols(g, -3);
    if (pose == PoseClass::RightSkewed) return shift_cols(g, 3);
    return g;
}

double center_of_pressure_col(const SignalGrid& grid) {
    double m = 0.0, mc = 0.0;
    for (int r = 0; r < grid.rows; ++r)
        for (int c = 0; c < grid.cols; ++c) {
            m += grid(r, c);
            mc += grid(r, c) * c;
        }
    return m > 0.0 ? mc / m : kMidCol;
}

// ---------------------------------------------------------------------------
// Scripts

std::string_view to_string(ScriptKind k) {
    switch (k) {
        case ScriptKind::Rest: return "rest";
        case ScriptKind::StepPress: return "step_press";
        case ScriptKind::Ramp: return "ramp";
        case ScriptKind::FreeCompressions: return "free_compressions";
        case ScriptKind::PoseSeries: return "pose_series";
    }
    return "?";
}

ScriptKind parse_script_kind(std::string_view s) {
    for (auto k : {ScriptKind::Rest, ScriptKind::StepPress, ScriptKind::Ramp, ScriptKind::FreeCompressions,
                   ScriptKind::PoseSeries})
        if (to_string(k) == s) return k;
    throw Error(Errc::InvalidArgument, "unknown script kind '" + std::string(s) + "'");
}

namespace {
std::uint64_t seconds_to_us(double s) { return static_cast<std::uint64_t>(std::llround(s * 1e6)); }

void check_script(const CompressionScript& s) {
    bool ok = true;
    switch (s.kind) {
        case ScriptKind::Rest: ok = s.duration_s > 0.0; break;
        case ScriptKind::StepPress: ok = s.step_n > 0.0 && s.hold_s > 0.0 && s.release_s >= 0.0; break;
        case ScriptKind::Ramp: ok = s.ramp_s > 0.0; break;
        case ScriptKind::FreeCompressions:
        case ScriptKind::PoseSeries:
            ok = s.cpm > 0.0 && s.count > 0 && s.force_lo > 0.0 && s.force_hi >= s.force_lo;
            break;
    }
    if (!ok || s.peak_force_n < 0.0)
        throw Error(Errc::InvalidArgument, "invalid " + std::string(to_string(s.kind)) + " script parameters");
}
}  // namespace

Waveform::Waveform(const SessionScript& script, const SubjectProfile& profile, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const double mid = 0.5 * (profile.force_band.f1 + profile.force_band.f2);
    std::uint64_t t = 0;
    for (const auto& s : script.segments) {
        check_script(s);
        const PoseClass pose = s.kind == ScriptKind::PoseSeries ? s.pose : PoseClass::Correct;
        if (s.kind == ScriptKind::PoseSeries) pose_changes_.emplace_back(t, pose);
        const double ceiling = s.peak_force_n > 0.0 ? s.peak_force_n : 1.2 * profile.force_band.f2;
        switch (s.kind) {
            case ScriptKind::Rest: {
                auto t1 = t + seconds_to_us(s.duration_s);
                pieces_.push_back({Piece::Shape::Flat, t, t1, 0.0, 0.0, pose});
                t = t1;
                break;
            }
            case ScriptKind::StepPress: {
                for (int i = 1; i * s.step_n <= ceiling + 1e-9; ++i) {
                    auto t1 = t + seconds_to_us(s.hold_s);
                    pieces_.push_back({Piece::Shape::Flat, t, t1, i * s.step_n, 0.0, pose});
                    auto t2 = t1 + seconds_to_us(s.release_s);
                    if (t2 > t1) pieces_.push_back({Piece::Shape::Flat, t1, t2, 0.0, 0.0, pose});
                    t = t2;
                }
                break;
            }
            case ScriptKind::Ramp: {
                auto t1 = t + seconds_to_us(s.ramp_s);
                auto t2 = t1 + seconds_to_us(s.ramp_s);
                pieces_.push_back({Piece::Shape::Linear, t, t1, 0.0, ceiling, pose});
                pieces_.push_back({Piece::Shape::Linear, t1, t2, ceiling, 0.0, pose});
                t = t2;
                break;
            }
            case ScriptKind::FreeCompressions:
            case ScriptKind::PoseSeries: {
                std::uniform_real_distribution<double> factor(s.force_lo, s.force_hi);
                const double period_us = 60e6 / s.cpm;
                for (int i = 0; i < s.count; ++i) {
                    auto t0 = t + static_cast<std::uint64_t>(std::llround(i * period_us));
                    auto t1 = t + static_cast<std::uint64_t>(std::llround((i + 1) * period_us));
                    double peak = factor(rng) * mid;
                    pieces_.push_back({Piece::Shape::RaisedCosine, t0, t1, peak, 0.0, pose});
                    crests_.push_back({t0 + (t1 - t0) / 2, peak, pose});
                }
                t += static_cast<std::uint64_t>(std::llround(s.count * period_us));
                break;
            }
        }
    }
    duration_us_ = t;
}

const Waveform::Piece* Waveform::piece_at(std::uint64_t t_us) const {
    auto it = std::upper_bound(pieces_.begin(), pieces_.end(), t_us,
                               [](std::uint64_t t, const Piece& p) { return t < p.t0; });
    if (it == pieces_.begin()) return nullptr;
    const Piece& p = *(it - 1);
    return t_us < p.t1 ? &p : nullptr;
}

double Waveform::force_at(std::uint64_t t_us) const {
    const Piece* p = piece_at(t_us);
    if (!p) return 0.0;
    double frac = static_cast<double>(t_us - p->t0) / static_cast<double>(p->t1 - p->t0);
    switch (p->shape) {
        case Piece::Shape::Flat: return p->a;
        case Piece::Shape::Linear: return p->a + (p->b - p->a) * frac;
        case Piece::Shape::RaisedCosine: return p->a * 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * frac));
    }
    return 0.0;
}

bool Waveform::loading_at(std::uint64_t t_us) const {
    const Piece* p = piece_at(t_us);
    if (!p) return false;
    switch (p->shape) {
        case Piece::Shape::Flat: return p->a > 0.0;
        case Piece::Shape::Linear: return p->b > p->a;
        case Piece::Shape::RaisedCosine: return 2 * (t_us - p->t0) < (p->t1 - p->t0);
    }
    return false;
}

PoseClass Waveform::pose_at(std::uint64_t t_us) const {
    const Piece* p = piece_at(t_us);
    if (p) return p->pose;
    return pieces_.empty() ? PoseClass::Correct : pieces_.back().pose;
}

namespace {
SignalGrid scaled(const SignalGrid& tmpl, double f) {
    SignalGrid out = tmpl;
    for (double& v : out.data) v *= f;
    return out;
}
}  // namespace

std::vector<ScriptSample> generate_script(const CompressionScript& script, const SubjectProfile& profile,
                                          std::span<const std::uint64_t> times_us, std::uint64_t seed) {
    Waveform w(SessionScript{{script}}, profile, seed);
    std::vector<ScriptSample> out;
    out.reserve(times_us.size());
    for (auto t : times_us) {
        ScriptSample s;
        s.t_us = t;
        s.force_n = w.force_at(t);
        s.pose = w.pose_at(t);
        s.loading = w.loading_at(t);
        s.palm_force = scaled(pose_template(s.pose, Side::Palm), s.force_n);
        s.dorsum_force = scaled(pose_template(s.pose, Side::Dorsum), s.force_n);
        out.push_back(std::move(s));
    }
    return out;
}

namespace {

std::string config_hash(const SessionScript& script, const SimConfig& cfg, const SubjectProfile& profile,
                        std::uint64_t seed) {
    std::ostringstream os;
    os.precision(17);
    os << profile.id << '|' << profile.weight_kg << '|' << seed << '|' << cfg.cell.r0_ohm << '|' << cfg.cell.k_per_n
       << '|' << cfg.cell.hysteresis << '|' << cfg.cell.crosstalk << '|' << cfg.cell.sigma_adc << '|'
       << cfg.r0_spread << '|' << cfg.layout_seed << '|' << cfg.jitter.nominal_ms << '|' << cfg.force_rate_hz;
    for (const auto& s : script.segments)
        os << '|' << to_string(s.kind) << ',' << s.cpm << ',' << s.peak_force_n << ',' << to_string(s.pose) << ','
           << s.count << ',' << s.duration_s << ',' << s.force_lo << ',' << s.force_hi;
    // FNV-1a, 64 bit
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char ch : os.str()) {
        h ^= ch;
        h *= 1099511628211ull;
    }
    std::ostringstream hex;
    hex << std::hex << h;
    return hex.str();
}

}  // namespace

SimulationResult simulate_session(const SessionScript& script, const SubjectProfile& profile, std::uint64_t seed,
                                  const SimConfig& cfg) {
    SimulationResult out;
    const ArrayLayout layout = make_layout(cfg);
    const Waveform wave(script, profile, seed);
    std::mt19937_64 noise(seed * 0x9E3779B97F4A7C15ull + 1);
    FrameClock clock(cfg.jitter, seed + 0x5bd1e995ull);

    out.log.meta = {profile.id, config_hash(script, cfg, profile, seed), "1970-01-01T00:00:00Z"};
    std::array<SignalGrid, 4> palm_t, dorsum_t;
    for (auto p : kAllPoses) {
        palm_t[static_cast<std::size_t>(p)] = pose_template(p, Side::Palm);
        dorsum_t[static_cast<std::size_t>(p)] = pose_template(p, Side::Dorsum);
    }

    std::uint32_t seq = 0;
    for (std::uint64_t t = 0; t < wave.duration_us(); t += clock.next_period_us()) {
        const double f = wave.force_at(t);
        const bool loading = wave.loading_at(t);
        const auto pose = static_cast<std::size_t>(wave.pose_at(t));
        DualSample s;
        s.seq = seq++;
        s.palm = scan_frame(scaled(palm_t[pose], f), layout.palm_r0, loading, Side::Palm, t, cfg, &noise);
        s.dorsum = scan_frame(scaled(dorsum_t[pose], f), layout.dorsum_r0, loading, Side::Dorsum, t, cfg, &noise);
        out.log.add_sample(s);
        out.samples.push_back(std::move(s));
    }

    // Load cell reports kgf at its own resolution; the log carries newtons.
    const double step_us = 1e6 / cfg.force_rate_hz;
    for (std::uint64_t i = 0;; ++i) {
        auto t = static_cast<std::uint64_t>(std::llround(i * step_us));
        if (t >= wave.duration_us()) break;
        double kgf = wave.force_at(t) / kStandardGravity;
        if (cfg.loadcell_resolution_kgf > 0.0)
            kgf = std::round(kgf / cfg.loadcell_resolution_kgf) * cfg.loadcell_resolution_kgf;
        out.log.records.emplace_back(ForceRecord{t, kgf_to_newton(kgf)});
    }
    for (const auto& [t, pose] : wave.pose_changes()) out.log.records.emplace_back(PoseRecord{t, pose});
    out.log.sort_by_time();
    out.crests = wave.crests();
    return out;
}

SessionScript calibration_protocol(int pose_count, double cpm) {
    SessionScript s;
    CompressionScript rest{.kind = ScriptKind::Rest, .duration_s = 10.0};
    s.segments.push_back(rest);
    s.segments.push_back({.kind = ScriptKind::StepPress});
    s.segments.push_back({.kind = ScriptKind::Rest, .duration_s = 1.0});
    s.segments.push_back({.kind = ScriptKind::Ramp});
    s.segments.push_back({.kind = ScriptKind::Rest, .duration_s = 1.0});
    s.segments.push_back({.kind = ScriptKind::FreeCompressions, .cpm = cpm, .count = 20});
    for (auto p : kAllPoses) {
        s.segments.push_back({.kind = ScriptKind::Rest, .duration_s = 1.0});
        s.segments.push_back({.kind = ScriptKind::PoseSeries, .cpm = cpm, .pose = p, .count = pose_count});
    }
    s.segments.push_back({.kind = ScriptKind::Rest, .duration_s = 2.0});
    return s;
}

SessionScript training_session(int count, double cpm, PoseClass pose, double force_lo, double force_hi) {
    SessionScript s;
    s.segments.push_back({.kind = ScriptKind::Rest, .duration_s = 10.0});
    s.segments.push_back({.kind = ScriptKind::PoseSeries,
                          .cpm = cpm,
                          .pose = pose,
                          .count = count,
                          .force_lo = force_lo,
                          .force_hi = force_hi});
    s.segments.push_back({.kind = ScriptKind::Rest, .duration_s = 2.0});
    return s;
}

std::vector<TraceRow> simulate_patch_press(const PatchPress& press, const SimConfig& cfg, std::uint64_t seed) {
    if (press.size < 1 || press.row0 < 0 || press.col0 < 0 || press.row0 + press.size > kRows ||
        press.col0 + press.size > kCols || press.cycles < 1 || press.samples_per_half < 2)
        throw Error(Errc::InvalidArgument, "patch press geometry out of range");
    const ArrayLayout layout = make_layout(cfg);
    std::mt19937_64 noise(seed);
    SignalGrid unloaded(kRows, kCols);
    for (std::size_t i = 0; i < unloaded.size(); ++i)
        unloaded.data[i] = cell_counts_exact(layout.palm_r0.data[i], cfg.pullup_ohm);

    const double cells = static_cast<double>(press.size * press.size);
    std::vector<TraceRow> rows;
    rows.reserve(static_cast<std::size_t>(press.cycles) * (2 * press.samples_per_half + 2));
    std::uint64_t t = 0;
    for (int cycle = 0; cycle < press.cycles; ++cycle) {
        SimConfig c = cfg;
        if (press.cycles > 1) c.cell.k_per_n *= 1.0 - press.sensitivity_decay * cycle / (press.cycles - 1);
        auto emit = [&](double total, bool loading) {
            SignalGrid force(kRows, kCols);
            for (int r = press.row0; r < press.row0 + press.size; ++r)
                for (int col = press.col0; col < press.col0 + press.size; ++col) force(r, col) = total / cells;
            TactileFrame f = scan_frame(force, layout.palm_r0, loading, Side::Palm, t, c, &noise);
            t += 1000;
            TraceRow row{cycle, total, loading, SignalGrid(kRows, kCols)};
            for (std::size_t i = 0; i < unloaded.size(); ++i) row.response.data[i] = unloaded.data[i] - f.counts.data[i];
            rows.push_back(std::move(row));
        };
        for (int j = 0; j <= press.samples_per_half; ++j)
            emit(press.peak_force_n * j / press.samples_per_half, true);
        for (int j = press.samples_per_half; j >= 0; --j)
            emit(press.peak_force_n * j / press.samples_per_half, false);
    }
    return rows;
}

namespace {

using nlohmann::json;

CompressionScript segment_from_json(const json& j) {
    if (!j.is_object()) throw Error(Errc::InvalidArgument, "script segment must be an object");
    CompressionScript c;
    c.kind = parse_script_kind(j.at("kind").get<std::string>());
    c.cpm = j.value("cpm", c.cpm);
    c.peak_force_n = j.value("peak_force_n", c.peak_force_n);
    if (j.contains("pose")) c.pose = parse_pose(j.at("pose").get<std::string>());
    c.count = j.value("count", c.count);
    c.duration_s = j.value("duration_s", c.duration_s);
    c.ramp_s = j.value("ramp_s", c.ramp_s);
    c.step_n = j.value("step_n", c.step_n);
    c.hold_s = j.value("hold_s", c.hold_s);
    c.release_s = j.value("release_s", c.release_s);
    c.force_lo = j.value("force_lo", c.force_lo);
    c.force_hi = j.value("force_hi", c.force_hi);
    if (!(c.cpm > 0) || c.count < 0 || c.duration_s < 0 || c.ramp_s < 0 || !(c.step_n > 0) || c.hold_s < 0 ||
        c.release_s < 0 || c.force_lo < 0 || c.force_hi < c.force_lo || c.peak_force_n < 0)
        throw Error(Errc::InvalidArgument, "script segment parameter out of range: " + j.dump());
    return c;
}

}  // namespace

SessionScript script_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw Error(Errc::InvalidArgument, std::string("script is not valid JSON: ") + e.what());
    }
    try {
        if (j.contains("protocol")) {
            const auto name = j.at("protocol").get<std::string>();
            const double cpm = j.value("cpm", 110.0);
            if (name == "calibration") return calibration_protocol(j.value("pose_count", 20), cpm);
            if (name == "training")
                return training_session(j.value("count", 30), cpm,
                                        parse_pose(j.value("pose", std::string("correct"))),
                                        j.value("force_lo", 0.97), j.value("force_hi", 1.03));
            throw Error(Errc::InvalidArgument, "unknown protocol '" + name + "'");
        }
        SessionScript s;
        for (const auto& seg : j.at("segments")) s.segments.push_back(segment_from_json(seg));
        return s;
    } catch (const json::exception& e) {
        throw Error(Errc::InvalidArgument, std::string("bad script: ") + e.what());
    }
}

std::string script_to_json(const SessionScript& script) {
    json segs = json::array();
    for (const auto& c : script.segments) {
        segs.push_back({{"kind", to_string(c.kind)},
                        {"cpm", c.cpm},
                        {"peak_force_n", c.peak_force_n},
                        {"pose", to_string(c.pose)},
                        {"count", c.count},
                        {"duration_s", c.duration_s},
                        {"ramp_s", c.ramp_s},
                        {"step_n", c.step_n},
                        {"hold_s", c.hold_s},
                        {"release_s", c.release_s},
                        {"force_lo", c.force_lo},
                        {"force_hi", c.force_hi}});
    }
    return json{{"segments", segs}}.dump(2);
}

}  // namespace cprloop::sim
