#include "cprloop/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <numeric>
#include <sstream>
#include <thread>

#include "cprloop/wire.hpp"

namespace cprloop {

using Clock = std::chrono::steady_clock;

namespace {

double ms_between(Clock::time_point a, Clock::time_point b) {
    return std::chrono::duration<double, std::milli>(b - a).count();
}

std::string utc_now() {
    std::time_t t = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::string fnv_hex(const std::string& s) {
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    std::ostringstream os;
    os << std::hex << h;
    return os.str();
}

}  // namespace

Eigen::VectorXd force_features(const SignalGrid& palm, const SignalGrid& dorsum) { return feature_vector(palm, dorsum); }

Eigen::VectorXd pose_features(const SignalGrid& palm, const SignalGrid& dorsum) {
    return feature_vector(normalize_frame(palm), normalize_frame(dorsum));
}

// ---------------------------------------------------------------------------
// Calibration

std::size_t CalibrationDataset::force_count() const {
    return static_cast<std::size_t>(
        std::count_if(samples.begin(), samples.end(), [](const CalibrationSample& s) { return s.force.has_value(); }));
}

std::size_t CalibrationDataset::pose_count() const {
    return static_cast<std::size_t>(
        std::count_if(samples.begin(), samples.end(), [](const CalibrationSample& s) { return s.pose.has_value(); }));
}

std::size_t CalibrationDataset::pose_count(PoseClass p) const {
    return static_cast<std::size_t>(
        std::count_if(samples.begin(), samples.end(), [&](const CalibrationSample& s) { return s.pose == p; }));
}

namespace {
template <typename Label, typename Get>
std::pair<Eigen::MatrixXd, std::vector<int>> labelled(const std::vector<CalibrationSample>& samples, Label label,
                                                      Get get) {
    std::vector<const CalibrationSample*> use;
    for (const auto& s : samples)
        if ((s.*label).has_value()) use.push_back(&s);
    Eigen::MatrixXd X(static_cast<Eigen::Index>(use.size()), kFeatureDim);
    std::vector<int> y;
    for (std::size_t i = 0; i < use.size(); ++i) {
        X.row(static_cast<Eigen::Index>(i)) = get(*use[i]).transpose();
        y.push_back(static_cast<int>(*(use[i]->*label)));
    }
    return {std::move(X), std::move(y)};
}
}  // namespace

std::pair<Eigen::MatrixXd, std::vector<int>> CalibrationDataset::force_matrix() const {
    return labelled(samples, &CalibrationSample::force, [](const CalibrationSample& s) { return s.force_x; });
}

std::pair<Eigen::MatrixXd, std::vector<int>> CalibrationDataset::pose_matrix() const {
    return labelled(samples, &CalibrationSample::pose, [](const CalibrationSample& s) { return s.pose_x; });
}

namespace {

// Peak of the ground-truth force around t: the largest record within the
// half window, refined by a parabola through it and its two neighbours.
// Only crests count: on both sides the force must fall to at most
// kCrestDepth of the peak inside the window, which rules out plateaus and
// slow ramps.
std::optional<double> ground_truth_crest(const std::vector<ForceRecord>& gt, std::uint64_t t, std::uint64_t half_us) {
    auto lo = std::lower_bound(gt.begin(), gt.end(), t >= half_us ? t - half_us : 0,
                               [](const ForceRecord& f, std::uint64_t v) { return f.t_us < v; });
    auto hi = std::upper_bound(gt.begin(), gt.end(), t + half_us,
                               [](std::uint64_t v, const ForceRecord& f) { return v < f.t_us; });
    if (lo == hi) return std::nullopt;
    auto best = std::max_element(lo, hi, [](const ForceRecord& a, const ForceRecord& b) { return a.newton < b.newton; });
    if (best == lo || best + 1 == hi || !(best->newton > 0.0)) return std::nullopt;
    auto lower = [](const ForceRecord& a, const ForceRecord& b) { return a.newton < b.newton; };
    double left = std::min_element(lo, best, lower)->newton;
    double right = std::min_element(best + 1, hi, lower)->newton;
    if (left > kCrestDepth * best->newton || right > kCrestDepth * best->newton) return std::nullopt;
    double ym = (best - 1)->newton, y0 = best->newton, yp = (best + 1)->newton;
    double curv = ym - 2.0 * y0 + yp;
    if (!(curv < 0.0)) return y0;
    return y0 - (ym - yp) * (ym - yp) / (8.0 * curv);
}

std::optional<PoseClass> active_pose(const std::vector<PoseRecord>& poses, std::uint64_t t) {
    auto it = std::upper_bound(poses.begin(), poses.end(), t,
                               [](std::uint64_t v, const PoseRecord& p) { return v < p.t_us; });
    if (it == poses.begin()) return std::nullopt;
    return (it - 1)->label;
}

}  // namespace

CalibrationDataset calibrate(const SessionLog& log, const SubjectProfile& subject, const CalibrateOptions& opt) {
    std::vector<DualSample> samples = wire::samples_from_log(log);
    std::vector<ForceRecord> gt;
    std::vector<PoseRecord> poses;
    for (const auto& r : log.records) {
        if (auto* f = std::get_if<ForceRecord>(&r)) gt.push_back(*f);
        if (auto* p = std::get_if<PoseRecord>(&r)) poses.push_back(*p);
    }
    auto by_t = [](const auto& a, const auto& b) { return a.t_us < b.t_us; };
    std::stable_sort(gt.begin(), gt.end(), by_t);
    std::stable_sort(poses.begin(), poses.end(), by_t);

    const std::uint64_t t0 = samples.front().timestamp_us();
    const double span_s = static_cast<double>(samples.back().timestamp_us() - t0) / 1e6;
    if (samples.back().timestamp_us() - t0 < opt.baseline_window_us) {
        char buf[128];
        std::snprintf(buf, sizeof buf, "stream spans %.2f s, the quiet prefix needs %.2f s", span_s,
                      static_cast<double>(opt.baseline_window_us) / 1e6);
        throw Error(Errc::InsufficientQuiescence, buf);
    }
    for (const auto& f : gt)
        if (f.t_us >= t0 && f.t_us - t0 < opt.baseline_window_us && f.newton > kQuiescentForceN) {
            char buf[128];
            std::snprintf(buf, sizeof buf, "ground truth reads %.1f N at %.2f s, inside the quiet prefix", f.newton,
                          static_cast<double>(f.t_us - t0) / 1e6);
            throw Error(Errc::InsufficientQuiescence, buf);
        }

    CalibrationDataset ds;
    ds.baseline = estimate_baseline(samples, opt.baseline_window_us);
    ds.prominence = std::max(default_prominence(ds.baseline), 1e-9);

    std::size_t first = 0;
    while (first < samples.size() && samples[first].timestamp_us() - t0 < opt.baseline_window_us) ++first;
    std::vector<SeriesPoint> series;
    std::vector<std::pair<SignalGrid, SignalGrid>> corrected;
    for (std::size_t i = first; i < samples.size(); ++i) {
        auto p = offset_correct(samples[i].palm, ds.baseline);
        auto d = offset_correct(samples[i].dorsum, ds.baseline);
        series.push_back({samples[i].timestamp_us(), aggregate_signal(p, d)});
        corrected.emplace_back(std::move(p), std::move(d));
    }
    std::vector<Peak> peaks;
    if (!series.empty()) peaks = detect_peaks(series, opt.peak_window_s, ds.prominence).peaks;
    if (peaks.size() < opt.min_compressions)
        throw Error(Errc::InsufficientCompressions, "found " + std::to_string(peaks.size()) +
                                                        " compressions, need " + std::to_string(opt.min_compressions));

    const auto half_us = static_cast<std::uint64_t>(std::llround(opt.peak_window_s * 1e6 / 2.0));
    for (const auto& pk : peaks) {
        const auto& [palm, dorsum] = corrected[pk.index];
        CalibrationSample s;
        s.t_us = pk.t_us;
        s.crest_us = pk.crest_us;
        s.force_x = force_features(palm, dorsum);
        s.pose_x = pose_features(palm, dorsum);
        s.newton = ground_truth_crest(gt, pk.t_us, half_us);
        if (s.newton) s.force = classify_force(*s.newton, subject.force_band);
        s.pose = active_pose(poses, pk.t_us);
        ds.samples.push_back(std::move(s));
    }
    return ds;
}

SubjectModels train_subject_models(const CalibrationDataset& data, const SubjectProfile& subject, Method method,
                                   const TrainConfig& cfg) {
    auto [Xf, yf] = data.force_matrix();
    auto [Xp, yp] = data.pose_matrix();
    SubjectModels m;
    m.force = std::make_shared<TrainedModel>(fit(method, Task::Force, Xf, yf, cfg, {}, subject.id));
    m.pose = std::make_shared<TrainedModel>(fit(method, Task::Pose, Xp, yp, cfg, {}, subject.id));
    return m;
}

void save_models(const std::string& dir, const SubjectModels& models) {
    if (!models.force || !models.pose) throw Error(Errc::ModelMissing, "both models are required");
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw Error(Errc::Io, "cannot create " + dir + ": " + ec.message());
    save_bundle((std::filesystem::path(dir) / "force.cprmodel.json").string(), *models.force);
    save_bundle((std::filesystem::path(dir) / "pose.cprmodel.json").string(), *models.pose);
}

namespace {
std::shared_ptr<const TrainedModel> load_one(const std::string& path, Task task) {
    if (path.empty() || !std::filesystem::exists(path)) throw Error(Errc::ModelMissing, "no model bundle at '" + path + "'");
    auto m = std::make_shared<TrainedModel>(load_bundle(path));
    if (m->task != task)
        throw Error(Errc::BadBundle, path + " holds a " + std::string(to_string(m->task)) + " model");
    return m;
}
}  // namespace

SubjectModels load_models(const std::string& dir) {
    return {load_one((std::filesystem::path(dir) / "force.cprmodel.json").string(), Task::Force),
            load_one((std::filesystem::path(dir) / "pose.cprmodel.json").string(), Task::Pose)};
}

// ---------------------------------------------------------------------------
// Closed loop

FrameSource vector_source(std::vector<DualSample> samples) {
    auto data = std::make_shared<std::vector<DualSample>>(std::move(samples));
    auto pos = std::make_shared<std::size_t>(0);
    return [data, pos]() -> std::optional<DualSample> {
        if (*pos >= data->size()) return std::nullopt;
        return (*data)[(*pos)++];
    };
}

StageStats stage_stats(std::vector<double> v) {
    StageStats s;
    s.n = v.size();
    if (v.empty()) return s;
    double sum = std::accumulate(v.begin(), v.end(), 0.0);
    s.mean_ms = sum / static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - s.mean_ms) * (x - s.mean_ms);
    s.std_ms = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
    std::sort(v.begin(), v.end());
    // nearest-rank percentile
    auto rank = static_cast<std::size_t>(std::ceil(0.99 * static_cast<double>(v.size())));
    s.p99_ms = v[std::max<std::size_t>(rank, 1) - 1];
    s.max_ms = v.back();
    return s;
}

std::string LatencyReport::to_table() const {
    std::ostringstream os;
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-12s %24s %10s %10s %8s\n", "stage", "mean +- std (ms)", "p99 (ms)", "max (ms)",
                  "n");
    os << buf;
    auto row = [&](const char* name, const StageStats& s) {
        char ms[48];
        std::snprintf(ms, sizeof ms, "%.3f +- %.3f", s.mean_ms, s.std_ms);
        std::snprintf(buf, sizeof buf, "%-12s %24s %10.3f %10.3f %8zu\n", name, ms, s.p99_ms, s.max_ms, s.n);
        os << buf;
    };
    row("record", record);
    row("preprocess", preprocess);
    row("infer", infer);
    row("encode", encode);
    row("frame", frame);
    row("end-to-end", end_to_end);
    std::snprintf(buf, sizeof buf, "budget %.1f ms: frame p99 %.3f ms -> %s\n", budget_ms, frame.p99_ms,
                  within_budget() ? "ok" : "EXCEEDED");
    os << buf;
    return os.str();
}

namespace {

struct Ingested {
    DualSample sample;
    Clock::time_point t_in;
};

struct VerdictMsg {
    CompressionVerdict verdict;
    std::uint64_t confirm_t_us = 0;
    Clock::time_point t_in;
    bool has_t_in = false;  // false for peaks flushed at end of stream
};

struct Corrected {
    std::size_t index;
    SignalGrid palm, dorsum;
};

}  // namespace

RunResult run_loop(FrameSource source, const PipelineConfig& cfg, const SubjectModels& models) {
    if (!models.force) throw Error(Errc::ModelMissing, "force model not loaded");
    if (!models.pose) throw Error(Errc::ModelMissing, "pose model not loaded");
    if (!(cfg.latency_budget_ms > 0.0)) throw Error(Errc::InvalidArgument, "latency budget must be positive");

    RunResult res;
    res.latency.budget_ms = cfg.latency_budget_ms;
    for (const auto* m : {models.force.get(), models.pose.get()})
        if (!m->trained_on.empty() && m->trained_on != cfg.subject.id)
            res.warnings.push_back(std::string(to_string(m->task)) + " model was trained on '" + m->trained_on +
                                   "', running for '" + cfg.subject.id + "'");

    BoundedChannel<Ingested> frames(cfg.channel_capacity, cfg.ingest_overflow);
    BoundedChannel<VerdictMsg> verdicts(cfg.channel_capacity, Overflow::Block);

    std::size_t frames_in = 0;
    std::string ingest_error;
    std::thread ingest([&] {
        try {
            while (auto s = source()) {
                ++frames_in;
                if (!frames.push({std::move(*s), Clock::now()})) break;
            }
        } catch (const std::exception& e) {
            ingest_error = std::string("source: ") + e.what();
        }
        frames.close();
    });

    // Feedback stage: owns the scheduler and the bus.
    HapticScheduler scheduler(cfg.timing);
    std::vector<double> encode_ms, e2e_feedback;
    std::string feedback_error;
    std::thread feedback([&] {
        try {
            while (auto msg = verdicts.pop()) {
                auto t0 = Clock::now();
                const auto& v = msg->verdict;
                auto pattern = encode_feedback(v.rate.value_or(RateClass::Correct),
                                               v.force.value_or(ForceClass::Correct),
                                               v.pose.value_or(PoseClass::Correct));
                std::uint64_t anchor = std::max(v.peak_t_us + cfg.haptic_delay_us, msg->confirm_t_us);
                auto r = scheduler.schedule(pattern, anchor);
                bus_apply(r.events, res.bus);
                auto t1 = Clock::now();
                encode_ms.push_back(ms_between(t0, t1));
                if (msg->has_t_in) e2e_feedback.push_back(ms_between(msg->t_in, t1));
            }
        } catch (const std::exception& e) {
            feedback_error = std::string("feedback: ") + e.what();
            verdicts.close();
        }
    });

    // Process stage, on this thread: owns baseline, detector and models.
    std::vector<double> record_ms, pre_ms, infer_ms, frame_ms, e2e_process;
    std::vector<LogRecord> frame_log, pred_log;
    std::vector<DualSample> base_buf;
    std::optional<std::uint64_t> first_t, prev_t;
    std::optional<std::uint32_t> prev_seq;
    std::optional<OnlinePeakDetector> detector;
    std::deque<Corrected> ring;
    std::size_t series_index = 0;
    std::optional<double> prev_crest;

    auto infer_peak = [&](const Peak& pk) {
        CompressionVerdict v;
        v.peak_t_us = pk.t_us;
        v.crest_us = pk.crest_us;
        if (prev_crest) {
            v.dt_ms = (pk.crest_us - *prev_crest) / 1000.0;
            v.rate = classify_rate(v.dt_ms);
        }
        prev_crest = pk.crest_us;
        auto it = std::find_if(ring.begin(), ring.end(), [&](const Corrected& c) { return c.index == pk.index; });
        if (it == ring.end()) {
            res.errors.push_back("peak at t_us=" + std::to_string(pk.t_us) + ": frame no longer buffered");
        } else {
            try {
                auto p = predict(*models.force, force_features(it->palm, it->dorsum));
                v.force = static_cast<ForceClass>(p.label);
                v.force_scores = std::move(p.scores);
            } catch (const std::exception& e) {
                res.errors.push_back("force model at t_us=" + std::to_string(pk.t_us) + ": " + e.what());
            }
            try {
                auto p = predict(*models.pose, pose_features(it->palm, it->dorsum));
                v.pose = static_cast<PoseClass>(p.label);
                v.pose_scores = std::move(p.scores);
            } catch (const std::exception& e) {
                res.errors.push_back("pose model at t_us=" + std::to_string(pk.t_us) + ": " + e.what());
            }
        }
        pred_log.emplace_back(PredRecord{pk.t_us, static_cast<std::uint64_t>(std::llround(pk.crest_us)), v.rate,
                                         v.force, v.pose, v.dt_ms});
        res.verdicts.push_back(v);
        return v;
    };

    try {
        while (auto msg = frames.pop()) {
            const DualSample& s = msg->sample;
            const std::uint64_t t = s.timestamp_us();
            auto t_rec0 = Clock::now();
            auto bad = validate_sample(s, prev_seq);
            if (!bad && prev_t && t <= *prev_t) bad = Errc::NonMonotoneTimestamp;
            if (bad) {
                ++res.frames_invalid;
                res.errors.push_back("frame seq " + std::to_string(s.seq) + " rejected: " + std::string(to_string(*bad)));
                continue;
            }
            prev_seq = s.seq;
            prev_t = t;
            frame_log.emplace_back(FrameRecord{s.palm, s.seq});
            frame_log.emplace_back(FrameRecord{s.dorsum, s.seq});
            ++res.frames_processed;
            auto t_rec1 = Clock::now();
            record_ms.push_back(ms_between(t_rec0, t_rec1));

            if (!first_t) first_t = t;
            if (!detector) {
                if (t - *first_t < cfg.baseline_window_us) {
                    base_buf.push_back(s);
                    frame_ms.push_back(record_ms.back());
                    e2e_process.push_back(ms_between(msg->t_in, Clock::now()));
                    continue;
                }
                res.baseline = estimate_baseline(base_buf, cfg.baseline_window_us);
                res.prominence = cfg.prominence.value_or(std::max(default_prominence(*res.baseline), 1e-9));
                detector.emplace(cfg.peak_window_s, res.prominence);
                base_buf.clear();
            }

            auto t_pre0 = Clock::now();
            Corrected c{series_index++, offset_correct(s.palm, *res.baseline), offset_correct(s.dorsum, *res.baseline)};
            double agg = aggregate_signal(c.palm, c.dorsum);
            ring.push_back(std::move(c));
            while (ring.size() > 128) ring.pop_front();
            auto peaks = detector->push(t, agg);
            auto t_pre1 = Clock::now();
            pre_ms.push_back(ms_between(t_pre0, t_pre1));

            double infer_this = 0.0;
            for (const auto& pk : peaks) {
                auto t_inf0 = Clock::now();
                VerdictMsg vm{infer_peak(pk), t, msg->t_in, true};
                double dt = ms_between(t_inf0, Clock::now());
                infer_this += dt;
                infer_ms.push_back(dt);
                verdicts.push(std::move(vm));
            }
            frame_ms.push_back(record_ms.back() + pre_ms.back() + infer_this);
            if (peaks.empty()) e2e_process.push_back(ms_between(msg->t_in, Clock::now()));
        }
        if (detector) {
            for (const auto& pk : detector->finish()) {
                auto t_inf0 = Clock::now();
                VerdictMsg vm{infer_peak(pk), prev_t.value_or(pk.t_us), {}, false};
                infer_ms.push_back(ms_between(t_inf0, Clock::now()));
                verdicts.push(std::move(vm));
            }
        } else if (!base_buf.empty()) {
            res.warnings.push_back("stream ended inside the baseline window; no compressions scored");
        }
    } catch (const std::exception& e) {
        res.errors.push_back(std::string("process: ") + e.what());
        frames.close();
    }
    verdicts.close();
    ingest.join();
    feedback.join();
    if (!ingest_error.empty()) res.errors.push_back(ingest_error);
    if (!feedback_error.empty()) res.errors.push_back(feedback_error);

    res.frames_in = frames_in;
    res.frames_dropped = frames.dropped();
    res.haptic_events = scheduler.timeline();
    res.preemptions = scheduler.preemptions();

    res.report = session_report(res.verdicts);

    res.latency.record = stage_stats(record_ms);
    res.latency.preprocess = stage_stats(pre_ms);
    res.latency.infer = stage_stats(infer_ms);
    res.latency.encode = stage_stats(encode_ms);
    res.latency.frame = stage_stats(frame_ms);
    e2e_process.insert(e2e_process.end(), e2e_feedback.begin(), e2e_feedback.end());
    res.latency.end_to_end = stage_stats(std::move(e2e_process));

    std::ostringstream cfgtext;
    cfgtext << cfg.subject.id << '|' << cfg.peak_window_s << '|' << res.prominence << '|' << cfg.baseline_window_us
            << '|' << models.force->trained_on << '|' << models.pose->trained_on;
    res.log.meta = {cfg.subject.id, fnv_hex(cfgtext.str()), utc_now()};
    res.log.records = std::move(frame_log);
    res.log.records.insert(res.log.records.end(), pred_log.begin(), pred_log.end());
    for (const auto& e : res.haptic_events)
        res.log.records.emplace_back(HapticRecord{e.start_us, e.unit, e.pwm, e.duration_ms});
    res.log.sort_by_time();
    return res;
}

RunResult run_loop(FrameSource source, const PipelineConfig& cfg) {
    SubjectModels m{load_one(cfg.force_model_path, Task::Force), load_one(cfg.pose_model_path, Task::Pose)};
    return run_loop(std::move(source), cfg, m);
}

}  // namespace cprloop
