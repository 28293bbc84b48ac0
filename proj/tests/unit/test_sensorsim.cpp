#include <doctest.h>

#include <cmath>
#include <sstream>

#include "cprloop/metrics.hpp"
#include "cprloop/models.hpp"
#include "cprloop/pipeline.hpp"
#include "cprloop/sensorsim.hpp"

using namespace cprloop;
using namespace cprloop::sim;

namespace {

CellModel quiet_cell(double h = 0.0) {
    CellModel m;
    m.hysteresis = h;
    m.sigma_adc = 0.0;
    m.crosstalk = 0.0;
    return m;
}

SimConfig quiet_config() {
    SimConfig c;
    c.cell = quiet_cell(0.05);
    c.r0_spread = 0.0;
    return c;
}

}  // namespace

TEST_SUITE("sensorsim") {
    TEST_CASE("sample_cell divider examples") {
        auto m = quiet_cell();
        double f_mid = (m.r0_ohm / kPullupOhm - 1.0) / m.k_per_n;
        CHECK(cell_resistance(m, f_mid, true) == doctest::Approx(kPullupOhm));
        CHECK(sample_cell(m, f_mid, true) == 4096);

        auto open = quiet_cell();
        open.r0_ohm = 1e15;
        CHECK(sample_cell(open, 0.0, true) == 8191);
        CHECK(cell_counts_exact(INFINITY) == 8191.0);
        CHECK(sample_cell(m, 1e12, true) == 0);
        CHECK(cell_counts_exact(0.0) == 0.0);

        std::mt19937_64 rng(1);
        auto noisy = quiet_cell();
        noisy.sigma_adc = 50;
        for (int i = 0; i < 200; ++i) {
            int c = sample_cell(noisy, 0.0, true, 3.3, kPullupOhm, &rng);
            CHECK(c >= 0);
            CHECK(c <= 8191);
        }
    }

    TEST_CASE("pressing lowers counts on both branches") {
        std::mt19937_64 rng(2);
        std::uniform_real_distribution<double> u(0, 600);
        for (double h : {0.0, 0.05, 0.3}) {
            auto m = quiet_cell(h);
            for (bool loading : {true, false}) {
                for (int i = 0; i < 1000; ++i) {
                    double a = u(rng), b = u(rng);
                    if (a == b) continue;
                    if (a > b) std::swap(a, b);
                    double ca = cell_counts_exact(cell_resistance(m, a, loading));
                    double cb = cell_counts_exact(cell_resistance(m, b, loading));
                    CHECK(cb < ca);
                    CHECK(sample_cell(m, b, loading) <= sample_cell(m, a, loading));
                }
            }
        }
    }

    TEST_CASE("hysteresis separates the branches only when h > 0") {
        for (double f : {10.0, 100.0, 400.0}) {
            CHECK(cell_resistance(quiet_cell(0.0), f, true) == cell_resistance(quiet_cell(0.0), f, false));
            CHECK(cell_resistance(quiet_cell(0.1), f, true) < cell_resistance(quiet_cell(0.1), f, false));
        }
    }

    TEST_CASE("frame clock stays within the quoted bounds") {
        FrameClock clock({}, 42);
        std::uint64_t total = 0;
        for (int i = 0; i < 142; ++i) {
            auto p = clock.next_period_us();
            CHECK(p >= 50'000);
            CHECK(p <= 72'000);
            total += p;
        }
        // 143 frames span 142 periods.
        CHECK(total >= 142 * 50'000ull);
        CHECK(total <= 142 * 72'000ull);
        CHECK(std::fabs(total / 142.0 - 70'000.0) < 3'000.0);
    }

    TEST_CASE("scan_frame baseline and crosstalk") {
        SimConfig cfg = quiet_config();
        SignalGrid r0(kRows, kCols, cfg.cell.r0_ohm);
        auto base = scan_frame(SignalGrid(kRows, kCols), r0, true, Side::Palm, 0, cfg, nullptr);
        for (auto c : base.counts.data) CHECK(c == base.counts.data[0]);

        cfg.cell.crosstalk = 0.1;
        cfg.cell.hysteresis = 0.0;
        SignalGrid force(kRows, kCols);
        force(6, 7) = 200.0;
        auto f = scan_frame(force, r0, true, Side::Palm, 70'000, cfg, nullptr);
        double unloaded = cell_counts_exact(cfg.cell.r0_ohm);
        double drop = unloaded - cell_counts_exact(cell_resistance(cfg.cell, 200.0, true));
        CHECK(std::fabs((base.counts(6, 7) - f.counts(6, 7)) - drop) <= 1.0);
        for (auto [r, c] : {std::pair{5, 7}, {7, 7}, {6, 6}, {6, 8}})
            CHECK(std::fabs((base.counts(r, c) - f.counts(r, c)) - 0.1 * drop) <= 1.0);
        CHECK(f.counts(5, 6) == base.counts(5, 6));
        CHECK(f.timestamp_us == 70'000);
    }

    TEST_CASE("pose templates") {
        for (auto p : kAllPoses)
            for (auto side : {Side::Palm, Side::Dorsum}) {
                auto t = pose_template(p, side);
                double sum = 0;
                for (double v : t.data) {
                    CHECK(v >= 0.0);
                    CHECK(v <= 1.0);
                    sum += v;
                }
                CHECK(sum == doctest::Approx(1.0));
            }
        double c = center_of_pressure_col(pose_template(PoseClass::Correct, Side::Palm));
        CHECK(center_of_pressure_col(pose_template(PoseClass::LeftSkewed, Side::Palm)) <= c - 2.0);
        CHECK(center_of_pressure_col(pose_template(PoseClass::RightSkewed, Side::Palm)) >= c + 2.0);
    }

    TEST_CASE("step press plateaus") {
        auto subject = make_subject("s", 70);
        CompressionScript step{.kind = ScriptKind::StepPress, .peak_force_n = 30.0};
        std::vector<std::uint64_t> times;
        for (double s : {1.5, 3.5, 5.5, 7.5, 9.5, 11.5}) times.push_back(static_cast<std::uint64_t>(s * 1e6));
        auto out = generate_script(step, subject, times);
        std::vector<double> want{10, 0, 20, 0, 30, 0};
        REQUIRE(out.size() == 6);
        for (std::size_t i = 0; i < 6; ++i) CHECK(out[i].force_n == doctest::Approx(want[i]));
        double sum = 0;
        for (double v : out[4].palm_force.data) sum += v;
        for (double v : out[4].dorsum_force.data) sum += v;
        CHECK(sum == doctest::Approx(2 * 30.0));
    }

    TEST_CASE("free compressions crest spacing") {
        SessionScript s;
        s.segments.push_back({.kind = ScriptKind::FreeCompressions, .cpm = 110, .count = 30});
        auto subject = make_subject("s", 80);
        Waveform w(s, subject, 3);
        REQUIRE(w.crests().size() == 30);
        double mid = 0.5 * (subject.force_band.f1 + subject.force_band.f2);
        for (std::size_t k = 1; k < 30; ++k)
            CHECK(w.crests()[k].t_us - w.crests()[k - 1].t_us == doctest::Approx(60e6 / 110).epsilon(1e-5));
        for (const auto& c : w.crests()) {
            CHECK(c.force_n >= 0.7 * mid - 1e-9);
            CHECK(c.force_n <= 1.3 * mid + 1e-9);
            CHECK(w.force_at(c.t_us) == doctest::Approx(c.force_n));
        }
    }

    TEST_CASE("left-skewed series sits left of the correct series") {
        auto subject = make_subject("s", 80);
        std::vector<std::uint64_t> times;
        for (std::uint64_t t = 50'000; t < 10'000'000; t += 70'000) times.push_back(t);
        CompressionScript base{.kind = ScriptKind::PoseSeries, .pose = PoseClass::Correct, .count = 15};
        CompressionScript left = base;
        left.pose = PoseClass::LeftSkewed;
        auto a = generate_script(base, subject, times, 1);
        auto b = generate_script(left, subject, times, 1);
        int compared = 0;
        for (std::size_t i = 0; i < times.size(); ++i) {
            if (a[i].force_n < 1.0 || b[i].force_n < 1.0) continue;
            CHECK(center_of_pressure_col(b[i].palm_force) <= center_of_pressure_col(a[i].palm_force) - 2.0);
            CHECK(b[i].pose == PoseClass::LeftSkewed);
            ++compared;
        }
        CHECK(compared > 50);
    }

    TEST_CASE("simulate_session determinism and rest frames") {
        auto subject = make_subject("s", 80);
        SessionScript rest;
        rest.segments.push_back({.kind = ScriptKind::Rest, .duration_s = 3.0});
        SimConfig quiet = quiet_config();
        auto r = simulate_session(rest, subject, 1, quiet);
        REQUIRE(!r.samples.empty());
        for (const auto& s : r.samples) {
            CHECK(s.palm.counts == r.samples[0].palm.counts);
            CHECK(s.dorsum.counts == r.samples[0].dorsum.counts);
        }

        auto script = training_session(10, 110, PoseClass::RightSkewed, 0.9, 1.1);
        auto a = simulate_session(script, subject, 99);
        auto b = simulate_session(script, subject, 99);
        std::stringstream sa, sb;
        write_session_log(sa, a.log);
        write_session_log(sb, b.log);
        CHECK(sa.str() == sb.str());
        auto c = simulate_session(script, subject, 100);
        std::stringstream sc;
        write_session_log(sc, c.log);
        CHECK(sc.str() != sa.str());

        std::size_t forces = 0;
        for (const auto& rec : a.log.records) forces += std::holds_alternative<ForceRecord>(rec);
        double dur = a.samples.back().timestamp_us() / 1e6;
        CHECK(std::fabs(forces - dur * 10.0) <= 2.0);
        for (std::size_t i = 1; i < a.samples.size(); ++i) {
            auto dt = a.samples[i].timestamp_us() - a.samples[i - 1].timestamp_us();
            CHECK(dt >= 50'000);
            CHECK(dt <= 72'000);
        }
    }

    TEST_CASE("script JSON") {
        auto s = script_from_json(R"({"segments":[{"kind":"rest","duration_s":4},
            {"kind":"pose_series","pose":"left_skewed","count":7,"cpm":100}]})");
        REQUIRE(s.segments.size() == 2);
        CHECK(s.segments[1].pose == PoseClass::LeftSkewed);
        CHECK(s.segments[1].count == 7);
        auto back = script_from_json(script_to_json(s));
        CHECK(back.segments[1].cpm == 100.0);
        CHECK(script_from_json(R"({"protocol":"calibration"})").segments.size() ==
              calibration_protocol().segments.size());
        CHECK_THROWS_AS(script_from_json(R"({"segments":[{"kind":"jump"}]})"), Error);
        CHECK_THROWS_AS(script_from_json("not json"), Error);
    }

    TEST_CASE("pose classes are linearly separable without noise") {
        auto subject = make_subject("s", 80);
        SimConfig cfg;
        cfg.cell.sigma_adc = 0.0;
        auto cal = simulate_session(calibration_protocol(), subject, 5, cfg);
        auto ds = calibrate(cal.log, subject);
        auto [X, y] = ds.pose_matrix();
        CHECK(X.rows() == 80);
        auto m = fit(Method::LDA, Task::Pose, X, y);
        CHECK(evaluate(m, X, y).accuracy == 1.0);
    }
}
