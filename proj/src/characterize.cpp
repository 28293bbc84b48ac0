#include "cprloop/characterize.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "cprloop/preprocess.hpp"

namespace cprloop {

namespace {

double interp(const std::vector<LoopPoint>& pts, double x) {
    auto it = std::lower_bound(pts.begin(), pts.end(), x,
                               [](const LoopPoint& p, double v) { return p.force_n < v; });
    if (it == pts.begin()) return pts.front().response;
    if (it == pts.end()) return pts.back().response;
    const LoopPoint& b = *it;
    const LoopPoint& a = *(it - 1);
    if (b.force_n == x) return b.response;
    return a.response + (b.response - a.response) * (x - a.force_n) / (b.force_n - a.force_n);
}

void check_branch(const std::vector<LoopPoint>& pts, bool increasing, const char* name) {
    if (pts.size() < 2) throw Error(Errc::DegenerateTrace, std::string(name) + " branch needs at least 2 points");
    for (std::size_t i = 0; i < pts.size(); ++i) {
        if (!std::isfinite(pts[i].force_n) || !std::isfinite(pts[i].response))
            throw Error(Errc::NonFinite, std::string(name) + " branch has a non-finite point");
        if (i == 0) continue;
        bool ok = increasing ? pts[i].force_n > pts[i - 1].force_n : pts[i].force_n < pts[i - 1].force_n;
        if (!ok)
            throw Error(Errc::DegenerateTrace, std::string(name) + " forces must be strictly " +
                                                   (increasing ? "increasing" : "decreasing"));
    }
}

double median(std::vector<double> v) {
    const std::size_t n = v.size();
    std::nth_element(v.begin(), v.begin() + n / 2, v.end());
    double hi = v[n / 2];
    if (n % 2) return hi;
    double lo = *std::max_element(v.begin(), v.begin() + n / 2);
    return 0.5 * (lo + hi);
}

}  // namespace

double hysteresis_ratio(const LoopTrace& trace) {
    if (trace.loading.size() + trace.unloading.size() < 3)
        throw Error(Errc::DegenerateTrace, "loop needs at least 3 points");
    check_branch(trace.loading, true, "loading");
    check_branch(trace.unloading, false, "unloading");
    std::vector<LoopPoint> up = trace.loading;
    std::vector<LoopPoint> down(trace.unloading.rbegin(), trace.unloading.rend());

    const double lo = up.front().force_n, hi = up.back().force_n;
    const double tol = 1e-9 * std::max({1.0, std::abs(lo), std::abs(hi)});
    if (std::abs(down.front().force_n - lo) > tol || std::abs(down.back().force_n - hi) > tol)
        throw Error(Errc::DegenerateTrace, "loading and unloading branches span different force ranges");

    std::vector<double> grid;
    for (const auto& p : up) grid.push_back(p.force_n);
    for (const auto& p : down)
        if (p.force_n > lo + tol && p.force_n < hi - tol) grid.push_back(p.force_n);
    std::sort(grid.begin(), grid.end());
    grid.erase(std::unique(grid.begin(), grid.end()), grid.end());

    double enclosed = 0.0;
    for (std::size_t i = 1; i < grid.size(); ++i) {
        double x0 = grid[i - 1], x1 = grid[i];
        double d0 = interp(up, x0) - interp(down, x0);
        double d1 = interp(up, x1) - interp(down, x1);
        if (d0 * d1 < 0.0) {
            double xc = x0 + (x1 - x0) * d0 / (d0 - d1);
            enclosed += 0.5 * std::abs(d0) * (xc - x0) + 0.5 * std::abs(d1) * (x1 - xc);
        } else {
            enclosed += 0.5 * (std::abs(d0) + std::abs(d1)) * (x1 - x0);
        }
    }

    double floor = up.front().response;
    for (const auto& p : up) floor = std::min(floor, p.response);
    for (const auto& p : down) floor = std::min(floor, p.response);
    double under = 0.0;
    for (std::size_t i = 1; i < up.size(); ++i)
        under += 0.5 * (up[i - 1].response + up[i].response - 2.0 * floor) * (up[i].force_n - up[i - 1].force_n);
    if (!(under > 0.0)) throw Error(Errc::DegenerateTrace, "loading curve has no area above its floor");
    return 100.0 * enclosed / under;
}

std::vector<double> cycle_amplitudes(const std::vector<std::vector<double>>& cycles) {
    std::vector<double> out;
    out.reserve(cycles.size());
    for (const auto& c : cycles) {
        if (c.empty()) throw Error(Errc::DegenerateTrace, "empty cycle");
        auto [mn, mx] = std::minmax_element(c.begin(), c.end());
        out.push_back(*mx - *mn);
    }
    return out;
}

double cycle_drift(std::span<const double> amplitudes) {
    if (amplitudes.size() < 20)
        throw Error(Errc::TooFewCycles, "drift needs 20 cycles, got " + std::to_string(amplitudes.size()));
    double first = std::accumulate(amplitudes.begin(), amplitudes.begin() + 10, 0.0) / 10.0;
    double last = std::accumulate(amplitudes.end() - 10, amplitudes.end(), 0.0) / 10.0;
    if (first == 0.0) throw Error(Errc::DegenerateTrace, "first cycles have zero amplitude");
    return 100.0 * std::abs(first - last) / first;
}

// ---------------------------------------------------------------------------

PressMask::PressMask(MaskGrid pressed) : pressed_(std::move(pressed)) {
    const int R = pressed_.rows, C = pressed_.cols;
    ring_ = MaskGrid(R, C);
    unpressed_ = MaskGrid(R, C);
    for (int r = 0; r < R; ++r)
        for (int c = 0; c < C; ++c) {
            if (pressed_(r, c)) continue;
            unpressed_(r, c) = 1;
            for (int dr = -1; dr <= 1; ++dr)
                for (int dc = -1; dc <= 1; ++dc) {
                    int rr = r + dr, cc = c + dc;
                    if (rr >= 0 && rr < R && cc >= 0 && cc < C && pressed_(rr, cc)) ring_(r, c) = 1;
                }
        }
}

PressMask PressMask::patch(int row0, int col0, int size, int rows, int cols) {
    if (size < 1 || row0 < 0 || col0 < 0 || row0 + size > rows || col0 + size > cols)
        throw Error(Errc::InvalidArgument, "patch does not fit the array");
    MaskGrid g(rows, cols);
    for (int r = row0; r < row0 + size; ++r)
        for (int c = col0; c < col0 + size; ++c) g(r, c) = 1;
    return PressMask(std::move(g));
}

PressMask PressMask::top_cells(const SignalGrid& mean_response, int count) {
    if (count < 1 || static_cast<std::size_t>(count) > mean_response.size())
        throw Error(Errc::InvalidArgument, "top_cells count out of range");
    std::vector<std::size_t> idx(mean_response.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t a, std::size_t b) { return mean_response.data[a] > mean_response.data[b]; });
    MaskGrid g(mean_response.rows, mean_response.cols);
    for (int i = 0; i < count; ++i) g.data[idx[static_cast<std::size_t>(i)]] = 1;
    return PressMask(std::move(g));
}

std::size_t PressMask::pressed_count() const {
    return static_cast<std::size_t>(std::count(pressed_.data.begin(), pressed_.data.end(), std::uint8_t{1}));
}

double snr_from_ratio(double ratio) {
    if (!(ratio > 0.0)) throw Error(Errc::NonPositiveSignal, "signal/noise ratio must be positive");
    return 20.0 * std::log10(ratio);
}

SnrResult snr_db(std::span<const SignalGrid> frames, const PressMask& mask, SnrMode mode) {
    if (frames.empty()) throw Error(Errc::DegenerateTrace, "no frames");
    const MaskGrid& pressed = mask.pressed();
    const MaskGrid& noise_cells = mode == SnrMode::Local ? mask.ring() : mask.unpressed();
    auto count = [](const MaskGrid& g) { return std::count(g.data.begin(), g.data.end(), std::uint8_t{1}); };
    if (count(pressed) == 0) throw Error(Errc::DegenerateTrace, "mask has no pressed cells");
    if (count(noise_cells) == 0) throw Error(Errc::DegenerateTrace, "mask has no cells in the noise region");

    std::vector<double> sig, noi;
    for (const auto& f : frames) {
        if (!f.has_shape(pressed.rows, pressed.cols)) throw Error(Errc::DimensionMismatch, "frame/mask shape differ");
        double s = 0.0, n = 0.0;
        std::size_t ns = 0, nn = 0;
        for (std::size_t i = 0; i < f.size(); ++i) {
            if (pressed.data[i]) {
                s += f.data[i];
                ++ns;
            } else if (noise_cells.data[i]) {
                n += std::abs(f.data[i]);
                ++nn;
            }
        }
        sig.push_back(s / static_cast<double>(ns));
        noi.push_back(n / static_cast<double>(nn));
    }
    SnrResult r;
    r.signal = median(std::move(sig));
    r.noise = median(std::move(noi));
    if (!(r.signal > 0.0)) throw Error(Errc::NonPositiveSignal, "median pressed-cell response is not positive");
    if (r.noise == 0.0) {
        r.zero_noise = true;
        r.db = std::numeric_limits<double>::infinity();
        return r;
    }
    r.db = snr_from_ratio(r.signal / r.noise);
    return r;
}

ContactLoad force_per_cell(double total_force_n, double patch_area_mm2, int cells) {
    if (!(total_force_n > 0.0) || !(patch_area_mm2 > 0.0) || cells < 1)
        throw Error(Errc::InvalidArgument, "force, area and cell count must be positive");
    return {total_force_n / patch_area_mm2, total_force_n / cells};
}

// ---------------------------------------------------------------------------

namespace {

double pressed_mean(const SignalGrid& g, const MaskGrid& m) {
    double s = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < g.size(); ++i)
        if (m.data[i]) {
            s += g.data[i];
            ++n;
        }
    return n ? s / static_cast<double>(n) : 0.0;
}

// Ascending by force, duplicates averaged.
std::vector<LoopPoint> sorted_branch(std::vector<LoopPoint> pts) {
    std::stable_sort(pts.begin(), pts.end(), [](const LoopPoint& a, const LoopPoint& b) { return a.force_n < b.force_n; });
    std::vector<LoopPoint> out;
    std::size_t i = 0;
    while (i < pts.size()) {
        std::size_t j = i;
        double s = 0.0;
        while (j < pts.size() && pts[j].force_n == pts[i].force_n) s += pts[j++].response;
        out.push_back({pts[i].force_n, s / static_cast<double>(j - i)});
        i = j;
    }
    return out;
}

std::vector<LoopPoint> clip_branch(const std::vector<LoopPoint>& pts, double lo, double hi) {
    std::vector<LoopPoint> out{{lo, interp(pts, lo)}};
    for (const auto& p : pts)
        if (p.force_n > lo && p.force_n < hi) out.push_back(p);
    out.push_back({hi, interp(pts, hi)});
    return out;
}

template <typename F>
void for_each_cycle(std::span<const TraceRow> rows, F&& fn) {
    std::size_t i = 0;
    while (i < rows.size()) {
        std::size_t j = i;
        while (j < rows.size() && rows[j].cycle == rows[i].cycle) ++j;
        fn(rows.subspan(i, j - i));
        i = j;
    }
}

}  // namespace

std::vector<LoopTrace> loops_from_rows(std::span<const TraceRow> rows, const PressMask& mask) {
    std::vector<LoopTrace> out;
    for_each_cycle(rows, [&](std::span<const TraceRow> cyc) {
        std::vector<LoopPoint> up, down;
        for (const auto& r : cyc) (r.loading ? up : down).push_back({r.force_n, pressed_mean(r.response, mask.pressed())});
        if (up.empty() || down.empty()) return;
        up = sorted_branch(std::move(up));
        down = sorted_branch(std::move(down));
        double lo = std::max(up.front().force_n, down.front().force_n);
        double hi = std::min(up.back().force_n, down.back().force_n);
        if (!(hi > lo)) return;
        LoopTrace t;
        t.loading = clip_branch(up, lo, hi);
        auto d = clip_branch(down, lo, hi);
        t.unloading.assign(d.rbegin(), d.rend());
        out.push_back(std::move(t));
    });
    if (out.empty()) throw Error(Errc::DegenerateTrace, "no cycle has both a loading and an unloading branch");
    return out;
}

std::vector<SignalGrid> peak_frames(std::span<const TraceRow> rows) {
    std::vector<SignalGrid> out;
    for_each_cycle(rows, [&](std::span<const TraceRow> cyc) {
        const TraceRow* best = nullptr;
        for (const auto& r : cyc)
            if (r.loading && (!best || r.force_n > best->force_n)) best = &r;
        if (best) out.push_back(best->response);
    });
    return out;
}

// ---------------------------------------------------------------------------
// CSV

void write_trace_csv(std::ostream& os, std::span<const TraceRow> rows) {
    os << "cycle,force_N,phase";
    for (int i = 0; i < kCellsPerSide; ++i) os << ",c" << i;
    os << '\n';
    char buf[32];
    for (const auto& r : rows) {
        os << r.cycle << ',';
        std::snprintf(buf, sizeof buf, "%.17g", r.force_n);
        os << buf << ',' << (r.loading ? "load" : "unload");
        for (double v : r.response.data) {
            std::snprintf(buf, sizeof buf, "%.17g", v);
            os << ',' << buf;
        }
        os << '\n';
    }
}

void write_trace_csv(const std::string& path, std::span<const TraceRow> rows) {
    std::ofstream os(path);
    if (!os) throw Error(Errc::Io, "cannot write " + path);
    write_trace_csv(os, rows);
    if (!os) throw Error(Errc::Io, "write failed: " + path);
}

namespace {

std::vector<std::string_view> split(std::string_view s) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= s.size(); ++i)
        if (i == s.size() || s[i] == ',') {
            auto f = s.substr(start, i - start);
            while (!f.empty() && (f.front() == ' ' || f.front() == '\t')) f.remove_prefix(1);
            while (!f.empty() && (f.back() == ' ' || f.back() == '\t' || f.back() == '\r')) f.remove_suffix(1);
            out.push_back(f);
            start = i + 1;
        }
    return out;
}

template <typename T>
T parse_num(std::string_view f, std::size_t line) {
    T v{};
    auto [p, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
    if (ec != std::errc() || p != f.data() + f.size())
        throw Error(Errc::InvalidArgument, "line " + std::to_string(line) + ": bad number '" + std::string(f) + "'");
    return v;
}

}  // namespace

std::vector<TraceRow> read_trace_csv(std::istream& is) {
    std::string line;
    if (!std::getline(is, line)) throw Error(Errc::InvalidArgument, "empty trace file");
    auto header = split(line);
    if (header.size() < 2 || header[0] != "cycle" || header[1] != "force_N")
        throw Error(Errc::InvalidArgument, "line 1: header must start with cycle,force_N");
    const bool has_phase = header.size() > 2 && header[2] == "phase";
    const std::size_t first_cell = has_phase ? 3 : 2;
    if (header.size() - first_cell != static_cast<std::size_t>(kCellsPerSide))
        throw Error(Errc::DimensionMismatch, "line 1: expected " + std::to_string(kCellsPerSide) + " cell columns, got " +
                                                 std::to_string(header.size() - first_cell));

    std::vector<TraceRow> rows;
    std::size_t lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty() || line == "\r") continue;
        auto f = split(line);
        if (f.size() != header.size())
            throw Error(Errc::DimensionMismatch, "line " + std::to_string(lineno) + ": expected " +
                                                     std::to_string(header.size()) + " fields");
        TraceRow r;
        r.cycle = parse_num<int>(f[0], lineno);
        r.force_n = parse_num<double>(f[1], lineno);
        if (has_phase) {
            if (f[2] == "load") r.loading = true;
            else if (f[2] == "unload") r.loading = false;
            else throw Error(Errc::InvalidArgument, "line " + std::to_string(lineno) + ": phase must be load or unload");
        }
        for (int i = 0; i < kCellsPerSide; ++i)
            r.response.data[static_cast<std::size_t>(i)] = parse_num<double>(f[first_cell + i], lineno);
        rows.push_back(std::move(r));
    }
    if (!has_phase) {
        std::size_t i = 0;
        while (i < rows.size()) {
            std::size_t j = i;
            while (j < rows.size() && rows[j].cycle == rows[i].cycle) ++j;
            std::size_t peak = i;
            for (std::size_t k = i; k < j; ++k)
                if (rows[k].force_n > rows[peak].force_n) peak = k;
            for (std::size_t k = i; k < j; ++k) rows[k].loading = k <= peak;
            i = j;
        }
    }
    return rows;
}

std::vector<TraceRow> read_trace_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw Error(Errc::Io, "cannot open " + path);
    return read_trace_csv(is);
}

std::vector<TraceRow> rows_from_session(const SessionLog& log) {
    std::vector<TactileFrame> palm;
    std::vector<ForceSample> force;
    for (const auto& rec : log.records) {
        if (auto* f = std::get_if<FrameRecord>(&rec); f && f->frame.side == Side::Palm) palm.push_back(f->frame);
        if (auto* f = std::get_if<ForceRecord>(&rec)) force.push_back({f->t_us, f->newton});
    }
    if (palm.empty()) throw Error(Errc::EmptySeries, "session has no palm frames");
    if (force.empty()) throw Error(Errc::EmptySeries, "session has no force records");
    std::sort(force.begin(), force.end(), [](const ForceSample& a, const ForceSample& b) { return a.t_us < b.t_us; });

    const std::uint64_t t0 = palm.front().timestamp_us;
    SideBaseline base{Side::Palm, SignalGrid(kRows, kCols)};
    std::size_t nbase = 0;
    for (const auto& f : palm) {
        if (f.timestamp_us - t0 >= kBaselineWindowUs) break;
        for (std::size_t i = 0; i < base.level.size(); ++i) base.level.data[i] += f.counts.data[i];
        ++nbase;
    }
    if (palm.back().timestamp_us - t0 < kBaselineWindowUs)
        throw Error(Errc::InsufficientQuiescence, "session shorter than the 10 s baseline window");
    for (double& v : base.level.data) v /= static_cast<double>(nbase);

    std::vector<SignalGrid> corrected;
    std::vector<SeriesPoint> series;
    double s = 0.0, ss = 0.0;
    for (std::size_t k = 0; k < palm.size(); ++k) {
        corrected.push_back(offset_correct(palm[k], base));
        double m = std::accumulate(corrected.back().data.begin(), corrected.back().data.end(), 0.0) / kCellsPerSide;
        series.push_back({palm[k].timestamp_us, m});
        if (k < nbase) {
            s += m;
            ss += m * m;
        }
    }
    double sd = nbase > 1 ? std::sqrt(std::max(0.0, (ss - s * s / nbase) / (nbase - 1))) : 0.0;
    auto peaks = detect_peaks(std::span(series).subspan(nbase), kPeakWindowS, std::max(5.0 * sd, 1e-9)).peaks;
    if (peaks.empty()) throw Error(Errc::TooFewPeaks, "no compressions found after the baseline window");

    auto force_at = [&](std::uint64_t t) {
        auto it = std::lower_bound(force.begin(), force.end(), t,
                                   [](const ForceSample& f, std::uint64_t v) { return f.t_us < v; });
        if (it == force.end()) return force.back().newton;
        if (it == force.begin()) return it->newton;
        auto prev = it - 1;
        return (t - prev->t_us) <= (it->t_us - t) ? prev->newton : it->newton;
    };
    auto argmin = [&](std::size_t a, std::size_t b) {
        std::size_t best = a;
        for (std::size_t k = a; k < b; ++k)
            if (series[k].value < series[best].value) best = k;
        return best;
    };

    std::vector<TraceRow> rows;
    for (std::size_t p = 0; p < peaks.size(); ++p) {
        std::size_t pk = nbase + peaks[p].index;
        std::size_t from = p == 0 ? argmin(nbase, pk + 1) : argmin(nbase + peaks[p - 1].index, pk + 1);
        std::size_t to = p + 1 < peaks.size() ? argmin(pk, nbase + peaks[p + 1].index + 1) : argmin(pk, series.size());
        for (std::size_t k = from; k <= to; ++k)
            rows.push_back({static_cast<int>(p), force_at(series[k].t_us), k <= pk, corrected[k]});
    }
    return rows;
}

// ---------------------------------------------------------------------------

CharacterizationReport characterize_rows(std::span<const TraceRow> rows, const PressMask& mask,
                                         std::size_t max_levels) {
    CharacterizationReport rep;
    auto loops = loops_from_rows(rows, mask);
    double h = 0.0;
    for (const auto& l : loops) h += hysteresis_ratio(l);
    rep.hysteresis_pct = h / static_cast<double>(loops.size());

    std::vector<std::vector<double>> cycles;
    for_each_cycle(rows, [&](std::span<const TraceRow> cyc) {
        std::vector<double> v;
        for (const auto& r : cyc) v.push_back(pressed_mean(r.response, mask.pressed()));
        cycles.push_back(std::move(v));
    });
    rep.cycles = cycles.size();
    if (cycles.size() >= 20) rep.drift_pct = cycle_drift(cycle_amplitudes(cycles));

    auto peaks = peak_frames(rows);
    rep.snr_local = snr_db(peaks, mask, SnrMode::Local);
    rep.snr_global = snr_db(peaks, mask, SnrMode::Global);

    double fmax = 0.0;
    for (const auto& r : rows)
        if (r.loading) fmax = std::max(fmax, r.force_n);
    if (fmax > 0.0 && max_levels > 0) {
        const double width = fmax / static_cast<double>(max_levels);
        std::vector<std::vector<const TraceRow*>> bins(max_levels);
        for (const auto& r : rows) {
            if (!r.loading || !(r.force_n > 0.0)) continue;
            auto b = std::min(max_levels - 1, static_cast<std::size_t>(std::ceil(r.force_n / width)) - 1);
            bins[b].push_back(&r);
        }
        for (const auto& bin : bins) {
            if (bin.empty()) continue;
            std::vector<SignalGrid> frames;
            double fsum = 0.0;
            for (const auto* r : bin) {
                frames.push_back(r->response);
                fsum += r->force_n;
            }
            try {
                rep.levels.push_back({fsum / static_cast<double>(bin.size()), snr_db(frames, mask, SnrMode::Local),
                                      snr_db(frames, mask, SnrMode::Global)});
            } catch (const Error& e) {
                if (e.code() != Errc::NonPositiveSignal) throw;
            }
        }
    }
    return rep;
}

namespace {
std::string fmt_db(const SnrResult& r) {
    char buf[32];
    if (r.zero_noise) return "inf (zero noise)";
    std::snprintf(buf, sizeof buf, "%.2f dB", r.db);
    return buf;
}
nlohmann::ordered_json snr_json(const SnrResult& r) {
    nlohmann::ordered_json j;
    j["db"] = r.zero_noise ? nlohmann::ordered_json("inf") : nlohmann::ordered_json(r.db);
    j["signal"] = r.signal;
    j["noise"] = r.noise;
    j["zero_noise"] = r.zero_noise;
    return j;
}
}  // namespace

std::string CharacterizationReport::to_text() const {
    std::ostringstream os;
    char buf[160];
    std::snprintf(buf, sizeof buf, "cycles          %zu\n", cycles);
    os << buf;
    std::snprintf(buf, sizeof buf, "hysteresis      %.2f %%\n", hysteresis_pct);
    os << buf;
    if (std::isnan(drift_pct))
        os << "drift           n/a (fewer than 20 cycles)\n";
    else {
        std::snprintf(buf, sizeof buf, "drift           %.2f %%\n", drift_pct);
        os << buf;
    }
    os << "snr local       " << fmt_db(snr_local) << '\n';
    os << "snr global      " << fmt_db(snr_global) << '\n';
    if (!levels.empty()) {
        std::snprintf(buf, sizeof buf, "\n%10s %18s %18s\n", "force_N", "snr_local", "snr_global");
        os << buf;
        for (const auto& l : levels) {
            std::snprintf(buf, sizeof buf, "%10.1f %18s %18s\n", l.force_n, fmt_db(l.local).c_str(),
                          fmt_db(l.global).c_str());
            os << buf;
        }
    }
    return os.str();
}

std::string CharacterizationReport::to_json() const {
    nlohmann::ordered_json j;
    j["cycles"] = cycles;
    j["hysteresis_pct"] = hysteresis_pct;
    j["drift_pct"] = std::isnan(drift_pct) ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(drift_pct);
    j["snr_local"] = snr_json(snr_local);
    j["snr_global"] = snr_json(snr_global);
    auto lv = nlohmann::ordered_json::array();
    for (const auto& l : levels)
        lv.push_back({{"force_n", l.force_n}, {"local", snr_json(l.local)}, {"global", snr_json(l.global)}});
    j["levels"] = std::move(lv);
    return j.dump(2);
}

HysteresisFit tune_hysteresis(double target_pct, const sim::PatchPress& press, const sim::SimConfig& cfg,
                              double tolerance_pct) {
    sim::PatchPress one = press;
    one.cycles = 1;
    one.sensitivity_decay = 0.0;
    const PressMask mask = PressMask::patch(press.row0, press.col0, press.size);
    auto ratio_at = [&](double h) {
        sim::SimConfig c = cfg;
        c.cell.hysteresis = h;
        c.cell.sigma_adc = 0.0;
        auto rows = sim::simulate_patch_press(one, c, 0);
        return hysteresis_ratio(loops_from_rows(rows, mask).front());
    };
    double lo = 0.0, hi = 0.999;
    double rlo = ratio_at(lo), rhi = ratio_at(hi);
    if (target_pct < rlo || target_pct > rhi)
        throw Error(Errc::InvalidArgument, "target hysteresis outside the reachable range");
    HysteresisFit best{lo, rlo};
    for (int it = 0; it < 60; ++it) {
        double mid = 0.5 * (lo + hi);
        double r = ratio_at(mid);
        best = {mid, r};
        if (std::abs(r - target_pct) <= tolerance_pct) break;
        (r < target_pct ? lo : hi) = mid;
    }
    return best;
}

}  // namespace cprloop
