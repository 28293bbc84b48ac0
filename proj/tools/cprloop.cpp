#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <limits>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "cprloop/characterize.hpp"
#include "cprloop/haptics.hpp"
#include "cprloop/metrics.hpp"
#include "cprloop/pipeline.hpp"
#include "cprloop/sensorsim.hpp"
#include "cprloop/session_log.hpp"
#include "cprloop/wire.hpp"

using namespace cprloop;
using nlohmann::json;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kRuntime = 3 };

struct Settings {
    sim::SimConfig sim;
    TrainConfig train;
    PipelineConfig pipeline;
    BandRule band_rule = BandRule::Continuous;
    std::uint64_t seed = 1;
};

std::string slurp(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw Error(Errc::Io, "cannot open " + path);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

template <typename T>
void take(const json& j, const char* key, T& dst) {
    if (j.contains(key)) dst = j.at(key).get<T>();
}

// {"sim":{...}, "train":{...}, "pipeline":{...}, "band_rule":"continuous"}
void apply_config(const std::string& path, Settings& s) {
    json j;
    try {
        j = json::parse(slurp(path));
        if (j.contains("sim")) {
            const auto& v = j["sim"];
            take(v, "r0_ohm", s.sim.cell.r0_ohm);
            take(v, "k_per_n", s.sim.cell.k_per_n);
            take(v, "hysteresis", s.sim.cell.hysteresis);
            take(v, "crosstalk", s.sim.cell.crosstalk);
            take(v, "sigma_adc", s.sim.cell.sigma_adc);
            take(v, "r0_spread", s.sim.r0_spread);
            take(v, "vref", s.sim.vref);
            take(v, "pullup_ohm", s.sim.pullup_ohm);
            take(v, "layout_seed", s.sim.layout_seed);
            take(v, "force_rate_hz", s.sim.force_rate_hz);
        }
        if (j.contains("train")) {
            const auto& v = j["train"];
            take(v, "lda_shrinkage", s.train.lda_shrinkage);
            take(v, "ridge_lambda", s.train.ridge_lambda);
            take(v, "learning_rate", s.train.logistic.learning_rate);
            take(v, "max_iterations", s.train.logistic.max_iterations);
            take(v, "tolerance", s.train.logistic.tolerance);
            take(v, "force_pca", s.train.force_pca);
            take(v, "pose_pca", s.train.pose_pca);
            take(v, "pca_threshold", s.train.pca_threshold);
        }
        if (j.contains("pipeline")) {
            const auto& v = j["pipeline"];
            take(v, "peak_window_s", s.pipeline.peak_window_s);
            if (v.contains("prominence")) s.pipeline.prominence = v["prominence"].get<double>();
            take(v, "channel_capacity", s.pipeline.channel_capacity);
            take(v, "latency_budget_ms", s.pipeline.latency_budget_ms);
            take(v, "pulse_ms", s.pipeline.timing.pulse_ms);
            take(v, "gap_ms", s.pipeline.timing.gap_ms);
            take(v, "haptic_delay_us", s.pipeline.haptic_delay_us);
        }
        if (j.contains("band_rule"))
            s.band_rule = j["band_rule"].get<std::string>() == "stepwise" ? BandRule::Stepwise : BandRule::Continuous;
    } catch (const json::exception& e) {
        throw Error(Errc::InvalidArgument, "config " + path + ": " + e.what());
    }
}

bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream os(path);
    if (!os) throw Error(Errc::Io, "cannot write " + path);
    os << text << '\n';
}

std::pair<std::string, std::uint16_t> split_host_port(const std::string& s) {
    auto colon = s.rfind(':');
    if (colon == std::string::npos) return {s, wire::kDefaultPort};
    return {s.substr(0, colon), static_cast<std::uint16_t>(std::stoul(s.substr(colon + 1)))};
}

std::vector<CompressionVerdict> verdicts_from_log(const SessionLog& log) {
    std::vector<CompressionVerdict> out;
    for (const auto& r : log.records) {
        if (const auto* p = std::get_if<PredRecord>(&r)) {
            CompressionVerdict v;
            v.peak_t_us = p->t_us;
            v.crest_us = static_cast<double>(p->crest_us);
            v.rate = p->rate;
            v.force = p->force;
            v.pose = p->pose;
            v.dt_ms = p->dt_ms;
            out.push_back(v);
        }
    }
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"cprloop: tactile CPR feedback loop, simulator and sensor characterization"};
    app.require_subcommand(1);
    Settings st;
    std::string config_path;
    std::uint64_t seed = 1;
    app.add_option("--config", config_path, "JSON config with sim/train/pipeline sections")->check(CLI::ExistingFile);
    app.add_option("--seed", seed, "random seed");

    std::string subject_id = "subject";
    double weight_kg = 70.0;
    auto add_subject = [&](CLI::App* c) {
        c->add_option("--subject", subject_id, "subject id");
        c->add_option("--weight-kg", weight_kg, "body weight")->check(CLI::PositiveNumber);
    };

    // simulate
    auto* sim_cmd = app.add_subcommand("simulate", "generate a session from a script");
    std::string script_path, out_path, stream_to;
    std::string protocol;
    bool realtime = false;
    double speed = 1.0;
    sim_cmd->add_option("--script", script_path, "script JSON")->check(CLI::ExistingFile);
    sim_cmd->add_option("--protocol", protocol, "canned script instead of --script")
        ->check(CLI::IsMember({"calibration", "training", "left_skewed"}));
    sim_cmd->add_option("--out", out_path, "session log (.jsonl)")->required();
    sim_cmd->add_option("--stream", stream_to, "also send packets to host:port");
    sim_cmd->add_flag("--realtime", realtime, "pace the UDP stream at the frame timestamps");
    sim_cmd->add_option("--speed", speed, "realtime speed multiplier")->check(CLI::PositiveNumber);
    add_subject(sim_cmd);

    // calibrate / train
    auto* cal_cmd = app.add_subcommand("calibrate", "build a calibration dataset and fit subject models");
    auto* train_cmd = app.add_subcommand("train", "fit subject models with a chosen method");
    std::string in_path, models_dir, method_name = "lda";
    for (auto* c : {cal_cmd, train_cmd}) {
        c->add_option("--in", in_path, "calibration session log")->required()->check(CLI::ExistingFile);
        c->add_option("--out", models_dir, "model directory")->required();
        add_subject(c);
    }
    cal_cmd->add_option("--method", method_name)->check(CLI::IsMember({"lda", "logistic", "ridge"}));
    train_cmd->add_option("--method", method_name)->required()->check(CLI::IsMember({"lda", "logistic", "ridge"}));

    // run
    auto* run_cmd = app.add_subcommand("run", "closed loop over UDP or a recorded session");
    int listen_port = -1;
    std::string replay_path, report_path, log_out;
    double idle_s = 2.0, wait_s = 30.0;
    std::size_t max_frames = 0;
    auto* listen_opt = run_cmd->add_option("--listen", listen_port, "UDP port")->check(CLI::Range(0, 65535));
    auto* replay_opt = run_cmd->add_option("--replay", replay_path, "session log to replay")->check(CLI::ExistingFile);
    listen_opt->excludes(replay_opt);
    run_cmd->add_option("--models", models_dir, "model directory")->required()->check(CLI::ExistingDirectory);
    run_cmd->add_option("--report", report_path, "write the session report JSON here");
    run_cmd->add_option("--log", log_out, "write the loop's session log here");
    run_cmd->add_option("--speed", speed, "replay speed multiplier (inf = as fast as possible)");
    run_cmd->add_option("--idle-s", idle_s, "listen: stop after this long without packets");
    run_cmd->add_option("--wait-s", wait_s, "listen: wait this long for the first packet");
    run_cmd->add_option("--max-frames", max_frames, "listen: stop after this many frames");
    add_subject(run_cmd);

    // characterize
    auto* ch_cmd = app.add_subcommand("characterize", "hysteresis, drift and SNR of a trace");
    std::string json_out;
    bool simulate_press = false;
    sim::PatchPress press;
    double tune_target = -1.0;
    ch_cmd->add_option("--in", in_path, "trace CSV or session log (.jsonl)")->check(CLI::ExistingFile);
    ch_cmd->add_flag("--simulate", simulate_press, "use a simulated patch press instead of --in");
    ch_cmd->add_option("--cycles", press.cycles, "simulated cycles")->check(CLI::PositiveNumber);
    ch_cmd->add_option("--peak-force", press.peak_force_n, "simulated peak force (N)")->check(CLI::PositiveNumber);
    ch_cmd->add_option("--decay", press.sensitivity_decay, "simulated sensitivity loss over the run");
    ch_cmd->add_option("--tune-hysteresis", tune_target, "fit the cell hysteresis to this loop-area ratio (%)");
    ch_cmd->add_option("--csv-out", out_path, "write the simulated trace as CSV");
    ch_cmd->add_option("--json", json_out, "write the report JSON here");

    // haptic-test
    auto* hap_cmd = app.add_subcommand("haptic-test", "play all 36 verdict states on the virtual bus");
    bool table_only = false;
    hap_cmd->add_flag("--table", table_only, "print only the encoding table");

    // report
    auto* rep_cmd = app.add_subcommand("report", "summarize a session log");
    rep_cmd->add_option("--in", in_path, "session log")->required()->check(CLI::ExistingFile);
    rep_cmd->add_option("--json", json_out, "write the report JSON here");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kOk : kUsage;
    }

    try {
        if (!config_path.empty()) apply_config(config_path, st);
        st.seed = seed;
        const SubjectProfile subject = make_subject(subject_id, weight_kg, st.band_rule);

        if (*sim_cmd) {
            sim::SessionScript script;
            if (!script_path.empty()) {
                script = sim::script_from_json(slurp(script_path));
            } else if (protocol == "calibration") {
                script = sim::calibration_protocol();
            } else if (protocol == "training") {
                script = sim::training_session(30, 110.0, PoseClass::Correct, 0.97, 1.03);
            } else if (protocol == "left_skewed") {
                script = sim::training_session(30, 110.0, PoseClass::LeftSkewed, 0.97, 1.03);
            } else {
                std::cerr << "simulate: one of --script or --protocol is required\n";
                return kUsage;
            }
            auto res = sim::simulate_session(script, subject, st.seed, st.sim);
            write_session_log(out_path, res.log);
            std::printf("%zu samples, %zu compressions, %.1f s -> %s\n", res.samples.size(), res.crests.size(),
                        res.samples.empty() ? 0.0 : res.samples.back().timestamp_us() / 1e6, out_path.c_str());
            if (!stream_to.empty()) {
                auto [host, port] = split_host_port(stream_to);
                auto stats = wire::stream(res.samples, host, port, realtime ? wire::Pace::Realtime : wire::Pace::Fast,
                                          speed);
                std::printf("streamed %zu packets to %s:%u (%zu dropped)\n", stats.sent, host.c_str(), port,
                            stats.dropped);
            }
            return kOk;
        }

        if (*cal_cmd || *train_cmd) {
            const auto log = read_session_log(in_path);
            const auto ds = calibrate(log, subject);
            std::printf("baseline: %zu frames, noise sd %.3f counts, prominence %.3f\n", ds.baseline.frame_count,
                        ds.baseline.aggregate_noise_std, ds.prominence);
            std::printf("peaks: %zu, force-labelled %zu, pose-labelled %zu", ds.samples.size(), ds.force_count(),
                        ds.pose_count());
            for (auto p : kAllPoses) std::printf(" %s=%zu", std::string(to_string(p)).c_str(), ds.pose_count(p));
            std::printf("\n");
            const auto models = train_subject_models(ds, subject, parse_method(method_name), st.train);
            auto [Xf, yf] = ds.force_matrix();
            auto [Xp, yp] = ds.pose_matrix();
            const auto ef = evaluate(*models.force, Xf, yf);
            const auto ep = evaluate(*models.pose, Xp, yp);
            std::printf("%-6s %-10s %6s %8s %10s\n", "task", "method", "k", "params", "train acc");
            std::printf("%-6s %-10s %6d %8zu %10.3f\n", "force", method_name.c_str(), models.force->feature_dim(),
                        models.force->param_count(), ef.accuracy);
            std::printf("%-6s %-10s %6d %8zu %10.3f\n", "pose", method_name.c_str(), models.pose->feature_dim(),
                        models.pose->param_count(), ep.accuracy);
            save_models(models_dir, models);
            std::printf("models -> %s\n", models_dir.c_str());
            return kOk;
        }

        if (*run_cmd) {
            if (listen_port < 0 && replay_path.empty()) {
                std::cerr << "run: one of --listen or --replay is required\n";
                return kUsage;
            }
            PipelineConfig pc = st.pipeline;
            pc.subject = subject;
            pc.force_model_path = models_dir + "/force.cprmodel.json";
            pc.pose_model_path = models_dir + "/pose.cprmodel.json";
            RunResult res;
            if (!replay_path.empty()) {
                const auto log = read_session_log(replay_path);
                auto replayer = std::make_shared<wire::Replayer>(
                    log, std::isfinite(speed) && run_cmd->count("--speed") ? speed : wire::Replayer::kFast);
                pc.ingest_overflow = run_cmd->count("--speed") ? Overflow::DropOldest : Overflow::Block;
                res = run_loop([replayer] { return replayer->next(); }, pc);
            } else {
                auto rx = std::make_shared<wire::UdpReceiver>(static_cast<std::uint16_t>(listen_port));
                std::printf("listening on udp port %u\n", rx->port());
                std::fflush(stdout);
                auto count = std::make_shared<std::size_t>(0);
                res = run_loop(
                    [=]() -> std::optional<DualSample> {
                        if (max_frames && *count >= max_frames) return std::nullopt;
                        const double limit = *count == 0 ? wait_s : idle_s;
                        auto s = rx->receive(std::chrono::milliseconds(static_cast<long>(limit * 1000)));
                        if (s) ++*count;
                        return s;
                    },
                    pc);
                const auto& rs = rx->stats();
                std::printf("udp: received %zu, malformed %zu, out of order %zu, seq gaps %zu\n", rs.received,
                            rs.malformed, rs.out_of_order, rs.seq_gaps);
            }
            for (const auto& w : res.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
            std::printf("frames: in %zu, processed %zu, dropped %zu, invalid %zu, stage errors %zu\n", res.frames_in,
                        res.frames_processed, res.frames_dropped, res.frames_invalid, res.errors.size());
            std::printf("haptic: %zu events, %zu preemptions\n\n", res.haptic_events.size(), res.preemptions.size());
            std::printf("%s\n%s", res.report.to_table().c_str(), res.latency.to_table().c_str());
            if (!report_path.empty()) write_text(report_path, res.report.to_json());
            if (!log_out.empty()) write_session_log(log_out, res.log);
            return res.latency.within_budget() ? kOk : kRuntime;
        }

        if (*ch_cmd) {
            if (tune_target >= 0.0) {
                auto fit = tune_hysteresis(tune_target, press, st.sim);
                std::printf("h = %.5f gives loop-area ratio %.3f %%\n", fit.h, fit.ratio_pct);
                st.sim.cell.hysteresis = fit.h;
                if (!simulate_press && in_path.empty()) return kOk;
            }
            std::vector<TraceRow> rows;
            if (simulate_press) {
                rows = sim::simulate_patch_press(press, st.sim, st.seed);
                if (!out_path.empty()) write_trace_csv(out_path, rows);
            } else if (in_path.empty()) {
                std::cerr << "characterize: --in or --simulate is required\n";
                return kUsage;
            } else if (ends_with(in_path, ".jsonl") || ends_with(in_path, ".json")) {
                rows = rows_from_session(read_session_log(in_path));
            } else {
                rows = read_trace_csv(in_path);
            }
            CharacterizationReport rep;
            if (simulate_press) {
                rep = characterize_rows(rows, PressMask::patch(press.row0, press.col0, press.size));
            } else {
                // Recorded traces carry no contact map: take the 25 cells with the largest peak response.
                SignalGrid mean(kRows, kCols);
                for (const auto& f : peak_frames(rows))
                    for (std::size_t i = 0; i < mean.size(); ++i) mean.data[i] += f.data[i];
                rep = characterize_rows(rows, PressMask::top_cells(mean, 25));
            }
            std::printf("%s", rep.to_text().c_str());
            if (!json_out.empty()) write_text(json_out, rep.to_json());
            return kOk;
        }

        if (*hap_cmd) {
            HapticScheduler sched(st.pipeline.timing);
            std::uint64_t anchor = 0;
            for (const auto& s : all_joint_states()) {
                const auto pattern = encode_feedback(s.rate, s.force, s.pose);
                std::printf("%s\n", format_table_row(s, pattern).c_str());
                sched.schedule(pattern, anchor);
                anchor += 500'000;
            }
            if (table_only) return kOk;
            VirtualBus bus;
            bus_apply(sched.timeline(), bus);
            std::printf("\n%s", format_bus_timeline(bus).c_str());
            std::printf("%zu commands, consistent=%s, preemptions=%zu\n", bus.commands,
                        bus_logs_consistent(bus) ? "yes" : "no", sched.preemptions().size());
            return bus_logs_consistent(bus) ? kOk : kRuntime;
        }

        if (*rep_cmd) {
            const auto log = read_session_log(in_path);
            std::size_t frames = 0, forces = 0, haptics = 0;
            double fmax = 0.0;
            std::uint64_t t_end = 0;
            for (const auto& r : log.records) {
                t_end = std::max(t_end, record_time(r));
                if (std::holds_alternative<FrameRecord>(r)) ++frames;
                if (const auto* f = std::get_if<ForceRecord>(&r)) {
                    ++forces;
                    fmax = std::max(fmax, f->newton);
                }
                if (std::holds_alternative<HapticRecord>(r)) ++haptics;
            }
            std::printf("subject %s, %.1f s, %zu frame records, %zu force records (max %.1f N), %zu haptic\n",
                        log.meta.subject.c_str(), t_end / 1e6, frames, forces, fmax, haptics);
            const auto verdicts = verdicts_from_log(log);
            const auto rep = session_report(verdicts);
            std::printf("%s", rep.to_table().c_str());
            if (!json_out.empty()) write_text(json_out, rep.to_json());
            return kOk;
        }
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return e.code() == Errc::SocketError || e.code() == Errc::Io ? kRuntime : kData;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kRuntime;
    }
    return kUsage;
}
