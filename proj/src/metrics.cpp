#include "cprloop/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include <json.hpp>

namespace cprloop {

RateClass classify_rate(double dt_ms) {
    if (!(dt_ms > 0.0)) throw Error(Errc::NonPositiveInterval, "interval " + std::to_string(dt_ms) + " ms");
    if (dt_ms < kRateFastBelowMs) return RateClass::TooFast;
    if (dt_ms > kRateSlowAboveMs) return RateClass::TooSlow;
    return RateClass::Correct;
}

ForceBand force_band(double weight_kg, BandRule rule) {
    if (!(weight_kg > 0.0) || !std::isfinite(weight_kg))
        throw Error(Errc::NonPositiveWeight, "weight " + std::to_string(weight_kg) + " kg");
    if (rule == BandRule::Continuous) {
        // g in exact tenths, so round weights give round bounds.
        const double g10 = std::round(kBandGravity * 10.0);
        return {weight_kg * (5.0 * g10) / 100.0, weight_kg * (6.0 * g10) / 100.0, weight_kg};
    }

    // Non-compounding: each full 10 kg below 90 removes 10% of the 90 kg band.
    double steps = weight_kg >= 90.0 ? 0.0 : std::floor((90.0 - weight_kg) / 10.0);
    double factor = std::max(0.1, 1.0 - 0.1 * steps);
    return {500.0 * factor, 600.0 * factor, weight_kg};
}

SubjectProfile make_subject(std::string id, double weight_kg, BandRule rule) {
    return {std::move(id), weight_kg, force_band(weight_kg, rule)};
}

ForceClass classify_force(double newton, const ForceBand& band) {
    if (newton < band.f1) return ForceClass::TooWeak;
    if (newton > band.f2) return ForceClass::TooStrong;
    return ForceClass::Correct;
}

std::vector<double> compute_intervals(const PeakSet& peaks) {
    if (peaks.peaks.size() < 2) throw Error(Errc::TooFewPeaks, "need at least two peaks");
    std::vector<double> out;
    out.reserve(peaks.peaks.size() - 1);
    for (std::size_t i = 1; i < peaks.peaks.size(); ++i)
        out.push_back((peaks.peaks[i].crest_us - peaks.peaks[i - 1].crest_us) / 1000.0);
    return out;
}

SessionReport session_report(std::span<const CompressionVerdict> verdicts) {
    SessionReport r;
    r.verdicts = verdicts.size();
    r.series.assign(verdicts.begin(), verdicts.end());
    std::size_t rated = 0, scored_force = 0, scored_pose = 0;
    double sum = 0.0, sumsq = 0.0;
    for (const auto& v : verdicts) {
        if (v.rate) {
            ++r.rate_hist[static_cast<std::size_t>(*v.rate)];
            ++rated;
            sum += v.dt_ms;
            sumsq += v.dt_ms * v.dt_ms;
        } else {
            ++r.rate_undefined;
        }
        if (v.force) {
            ++r.force_hist[static_cast<std::size_t>(*v.force)];
            ++scored_force;
        }
        if (v.pose) {
            ++r.pose_hist[static_cast<std::size_t>(*v.pose)];
            ++scored_pose;
        }
        if (!v.force || !v.pose) ++r.unscored;
    }
    auto frac = [](std::size_t num, std::size_t den) { return den ? static_cast<double>(num) / den : 0.0; };
    r.rate_correct = frac(r.rate_hist[static_cast<std::size_t>(RateClass::Correct)], rated);
    r.force_correct = frac(r.force_hist[static_cast<std::size_t>(ForceClass::Correct)], scored_force);
    r.pose_correct = frac(r.pose_hist[static_cast<std::size_t>(PoseClass::Correct)], scored_pose);
    if (rated > 0) {
        double n = static_cast<double>(rated);
        r.dt_mean_ms = sum / n;
        r.dt_std_ms = rated > 1 ? std::sqrt(std::max(0.0, (sumsq - sum * sum / n) / (n - 1))) : 0.0;
    }
    return r;
}

std::string SessionReport::to_json() const {
    nlohmann::ordered_json j;
    j["verdicts"] = verdicts;
    j["rate_undefined"] = rate_undefined;
    j["unscored"] = unscored;
    nlohmann::ordered_json h;
    for (auto c : kAllRates) h["rate"][std::string(to_string(c))] = rate_hist[static_cast<std::size_t>(c)];
    for (auto c : kAllForces) h["force"][std::string(to_string(c))] = force_hist[static_cast<std::size_t>(c)];
    for (auto c : kAllPoses) h["pose"][std::string(to_string(c))] = pose_hist[static_cast<std::size_t>(c)];
    j["histograms"] = h;
    j["fraction_correct"] = {{"rate", rate_correct}, {"force", force_correct}, {"pose", pose_correct}};
    j["interval_ms"] = {{"mean", dt_mean_ms}, {"std", dt_std_ms}};
    auto series_json = nlohmann::ordered_json::array();
    for (const auto& v : series) {
        nlohmann::ordered_json e;
        e["t_us"] = v.peak_t_us;
        e["dt_ms"] = v.dt_ms;
        e["rate"] = v.rate ? std::string(to_string(*v.rate)) : std::string("first");
        e["force"] = v.force ? std::string(to_string(*v.force)) : std::string("unscored");
        e["pose"] = v.pose ? std::string(to_string(*v.pose)) : std::string("unscored");
        series_json.push_back(std::move(e));
    }
    j["series"] = std::move(series_json);
    return j.dump(2);
}

std::string SessionReport::to_table() const {
    std::ostringstream os;
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-10s %-16s %8s %9s\n", "dimension", "class", "count", "fraction");
    os << buf;
    auto row = [&](const char* dim, std::string_view cls, std::size_t count, std::size_t total) {
        std::snprintf(buf, sizeof buf, "%-10s %-16.*s %8zu %9.3f\n", dim, static_cast<int>(cls.size()), cls.data(),
                      count, total ? static_cast<double>(count) / total : 0.0);
        os << buf;
    };
    std::size_t rated = verdicts - rate_undefined;
    std::size_t force_total = 0, pose_total = 0;
    for (auto v : force_hist) force_total += v;
    for (auto v : pose_hist) pose_total += v;
    for (auto c : kAllRates) row("rate", to_string(c), rate_hist[static_cast<std::size_t>(c)], rated);
    for (auto c : kAllForces) row("force", to_string(c), force_hist[static_cast<std::size_t>(c)], force_total);
    for (auto c : kAllPoses) row("pose", to_string(c), pose_hist[static_cast<std::size_t>(c)], pose_total);
    std::snprintf(buf, sizeof buf, "verdicts %zu (first %zu, unscored %zu); interval %.1f +- %.1f ms\n", verdicts,
                  rate_undefined, unscored, dt_mean_ms, dt_std_ms);
    os << buf;
    return os.str();
}

}  // namespace cprloop
