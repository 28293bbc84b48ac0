#include "cprloop/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace cprloop {

// ---------------------------------------------------------------------------
// Offset correction

Baseline estimate_baseline(std::span<const DualSample> samples, std::uint64_t window_us) {
    if (samples.empty()) throw Error(Errc::EmptySeries, "no samples for baseline");
    const std::uint64_t t0 = samples.front().timestamp_us();
    Baseline b;
    std::size_t n = 0;
    for (const auto& s : samples) {
        if (s.timestamp_us() - t0 >= window_us) break;
        check_frame(s.palm);
        check_frame(s.dorsum);
        for (std::size_t i = 0; i < b.palm.level.size(); ++i) {
            b.palm.level.data[i] += s.palm.counts.data[i];
            b.dorsum.level.data[i] += s.dorsum.counts.data[i];
        }
        ++n;
    }
    for (auto& v : b.palm.level.data) v /= static_cast<double>(n);
    for (auto& v : b.dorsum.level.data) v /= static_cast<double>(n);
    b.frame_count = n;

    if (n > 1) {
        double mean = 0.0, m2 = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double a = aggregate_signal(offset_correct(samples[i].palm, b.palm),
                                        offset_correct(samples[i].dorsum, b.dorsum));
            double delta = a - mean;
            mean += delta / static_cast<double>(i + 1);
            m2 += delta * (a - mean);
        }
        b.aggregate_noise_std = std::sqrt(m2 / static_cast<double>(n - 1));
    }
    return b;
}

double default_prominence(const Baseline& baseline) { return 5.0 * baseline.aggregate_noise_std; }

SignalGrid offset_correct(const TactileFrame& frame, const SideBaseline& baseline) {
    if (frame.side != baseline.side)
        throw Error(Errc::SideMismatch, std::string(to_string(frame.side)) + " frame vs " +
                                            std::string(to_string(baseline.side)) + " baseline");
    if (!frame.counts.has_shape(kRows, kCols) || !baseline.level.has_shape(kRows, kCols))
        throw Error(Errc::DimensionMismatch, "offset_correct expects 13x14 grids");
    SignalGrid out(kRows, kCols);
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = baseline.level.data[i] - frame.counts.data[i];
    return out;
}

SignalGrid offset_correct(const TactileFrame& frame, const Baseline& baseline) {
    return offset_correct(frame, frame.side == Side::Palm ? baseline.palm : baseline.dorsum);
}

double aggregate_signal(const SignalGrid& palm, const SignalGrid& dorsum) {
    if (!palm.has_shape(kRows, kCols) || !dorsum.has_shape(kRows, kCols))
        throw Error(Errc::DimensionMismatch, "aggregate_signal expects 13x14 grids");
    double sum = 0.0;
    for (double v : palm.data) sum += v;
    for (double v : dorsum.data) sum += v;
    return sum / kFeatureDim;
}

Eigen::VectorXd feature_vector(const SignalGrid& palm, const SignalGrid& dorsum) {
    if (!palm.has_shape(kRows, kCols) || !dorsum.has_shape(kRows, kCols))
        throw Error(Errc::DimensionMismatch, "feature_vector expects 13x14 grids");
    Eigen::VectorXd x(kFeatureDim);
    for (int i = 0; i < kCellsPerSide; ++i) {
        x[i] = palm.data[i];
        x[kCellsPerSide + i] = dorsum.data[i];
    }
    return x;
}

SignalGrid normalize_frame(const SignalGrid& grid) {
    SignalGrid out(grid.rows, grid.cols, 0.0);
    if (grid.data.empty()) return out;
    auto [lo, hi] = std::minmax_element(grid.data.begin(), grid.data.end());
    double span = *hi - *lo;
    if (span <= 0.0) return out;
    for (std::size_t i = 0; i < grid.size(); ++i) out.data[i] = (grid.data[i] - *lo) / span;
    return out;
}

// ---------------------------------------------------------------------------
// Peak sampling

namespace {

double refine_crest(const SeriesPoint& l, const SeriesPoint& m, const SeriesPoint& r) {
    double a = static_cast<double>(l.t_us) - static_cast<double>(m.t_us);
    double b = static_cast<double>(r.t_us) - static_cast<double>(m.t_us);
    if (a >= 0.0 || b <= 0.0) return static_cast<double>(m.t_us);
    double sl = (l.value - m.value) / a;
    double sr = (r.value - m.value) / b;
    double q = (sr - sl) / (b - a);
    if (!(q < 0.0)) return static_cast<double>(m.t_us);
    double p = sl - q * a;
    double x = std::clamp(-p / (2.0 * q), a, b);
    return static_cast<double>(m.t_us) + x;
}

// Judges sample i using whatever of [lo, hi) lies inside its window.
template <typename Get>
std::optional<Peak> judge(Get&& at, std::size_t lo, std::size_t hi, std::size_t i, std::int64_t half_us,
                          double prominence) {
    const SeriesPoint c = at(i);
    const auto tc = static_cast<std::int64_t>(c.t_us);
    double valley = c.value;
    std::size_t first = i, last = i;
    for (std::size_t j = i; j-- > lo;) {
        const SeriesPoint p = at(j);
        if (tc - static_cast<std::int64_t>(p.t_us) > half_us) break;
        if (p.value >= c.value) return std::nullopt;
        valley = std::min(valley, p.value);
        first = j;
    }
    for (std::size_t j = i + 1; j < hi; ++j) {
        const SeriesPoint p = at(j);
        if (static_cast<std::int64_t>(p.t_us) - tc > half_us) break;
        if (p.value >= c.value) return std::nullopt;
        valley = std::min(valley, p.value);
        last = j;
    }
    if (!(c.value - valley > prominence)) return std::nullopt;
    Peak pk{i, c.t_us, c.value, valley, static_cast<double>(c.t_us)};
    if (first < i && last > i) pk.crest_us = refine_crest(at(i - 1), c, at(i + 1));
    return pk;
}

}  // namespace

PeakSet detect_peaks(std::span<const SeriesPoint> series, double window_s, double prominence) {
    if (series.empty()) throw Error(Errc::EmptySeries, "detect_peaks on empty series");
    if (!(window_s > 0.0) || !(prominence >= 0.0))
        throw Error(Errc::InvalidArgument, "window must be positive and prominence non-negative");
    for (std::size_t i = 1; i < series.size(); ++i)
        if (series[i].t_us < series[i - 1].t_us) throw Error(Errc::InvalidArgument, "series not time-ordered");

    const auto half = static_cast<std::int64_t>(std::llround(window_s * 1e6 / 2.0));
    PeakSet out;
    out.window_s = window_s;
    auto at = [&](std::size_t j) { return series[j]; };
    for (std::size_t i = 0; i < series.size(); ++i)
        if (auto pk = judge(at, 0, series.size(), i, half, prominence)) out.peaks.push_back(*pk);
    return out;
}

OnlinePeakDetector::OnlinePeakDetector(double window_s, double prominence)
    : half_us_(std::llround(window_s * 1e6 / 2.0)), prominence_(prominence) {
    if (!(window_s > 0.0) || !(prominence >= 0.0))
        throw Error(Errc::InvalidArgument, "window must be positive and prominence non-negative");
}

std::vector<Peak> OnlinePeakDetector::push(std::uint64_t t_us, double value) {
    if (!buf_.empty() && t_us < buf_.back().t_us) throw Error(Errc::InvalidArgument, "series not time-ordered");
    buf_.push_back({t_us, value});
    ++next_index_;
    return drain(false);
}

std::vector<Peak> OnlinePeakDetector::finish() { return drain(true); }

std::vector<Peak> OnlinePeakDetector::drain(bool final) {
    std::vector<Peak> out;
    auto at = [&](std::size_t j) { return buf_[j - buf_start_]; };
    while (pending_ < next_index_) {
        auto tc = static_cast<std::int64_t>(at(pending_).t_us);
        if (!final && static_cast<std::int64_t>(buf_.back().t_us) - tc < half_us_) break;
        if (auto pk = judge(at, buf_start_, next_index_, pending_, half_us_, prominence_)) out.push_back(*pk);
        ++pending_;
    }
    // Keep everything the next candidate's left window may still need.
    if (!buf_.empty()) {
        auto horizon = pending_ < next_index_ ? static_cast<std::int64_t>(at(pending_).t_us)
                                              : static_cast<std::int64_t>(buf_.back().t_us);
        while (buf_.size() > 1 && buf_start_ < pending_ &&
               horizon - static_cast<std::int64_t>(buf_.front().t_us) > half_us_) {
            buf_.pop_front();
            ++buf_start_;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// PCA

double PcaProjection::retained_ratio() const {
    double s = 0.0;
    for (double r : explained_ratio) s += r;
    return s;
}

PcaProjection fit_pca(const Eigen::MatrixXd& samples, double threshold) {
    const auto n = samples.rows();
    const auto d = samples.cols();
    if (n < 2 || d < 1) throw Error(Errc::InvalidArgument, "fit_pca needs at least 2 samples");
    if (!(threshold > 0.0 && threshold <= 1.0)) throw Error(Errc::InvalidArgument, "threshold must be in (0, 1]");
    if (!samples.allFinite()) throw Error(Errc::NonFinite, "fit_pca input contains non-finite values");

    PcaProjection p;
    p.mean = samples.colwise().mean().transpose();
    Eigen::MatrixXd centered = samples.rowwise() - p.mean.transpose();
    Eigen::MatrixXd cov = (centered.transpose() * centered) / static_cast<double>(n - 1);
    p.total_variance = cov.trace();
    if (!(p.total_variance > 0.0)) throw Error(Errc::DegenerateData, "zero total variance");

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
    if (es.info() != Eigen::Success) throw Error(Errc::DegenerateData, "eigendecomposition failed");
    const Eigen::VectorXd& evals = es.eigenvalues();  // ascending
    const Eigen::MatrixXd& evecs = es.eigenvectors();

    std::vector<Eigen::Index> order;
    double cum = 0.0;
    for (Eigen::Index j = d - 1; j >= 0; --j) {
        double ratio = std::max(evals[j], 0.0) / p.total_variance;
        order.push_back(j);
        p.explained_ratio.push_back(ratio);
        cum += ratio;
        if (cum >= threshold - 1e-12) break;
    }

    p.components.resize(static_cast<Eigen::Index>(order.size()), d);
    for (std::size_t r = 0; r < order.size(); ++r) {
        Eigen::VectorXd v = evecs.col(order[r]);
        Eigen::Index arg = 0;
        v.cwiseAbs().maxCoeff(&arg);
        if (v[arg] < 0.0) v = -v;
        p.components.row(static_cast<Eigen::Index>(r)) = v.transpose();
    }
    return p;
}

Eigen::VectorXd apply_pca(const PcaProjection& proj, const Eigen::VectorXd& x) {
    if (x.size() != proj.d())
        throw Error(Errc::DimensionMismatch,
                    "apply_pca: got " + std::to_string(x.size()) + ", expected " + std::to_string(proj.d()));
    return proj.components * (x - proj.mean);
}

// ---------------------------------------------------------------------------
// Stream alignment

AlignResult align_streams(std::span<const ForceSample> force, std::span<const std::uint64_t> tactile_t_us,
                          std::uint64_t max_gap_us) {
    AlignResult out;
    if (tactile_t_us.empty()) {
        out.dropped = force.size();
        return out;
    }
    for (const auto& f : force) {
        auto it = std::lower_bound(tactile_t_us.begin(), tactile_t_us.end(), f.t_us);
        std::uint64_t best;
        if (it == tactile_t_us.begin()) {
            best = *it;
        } else if (it == tactile_t_us.end()) {
            best = *(it - 1);
        } else {
            std::uint64_t after = *it, before = *(it - 1);
            best = (f.t_us - before) <= (after - f.t_us) ? before : after;
        }
        std::uint64_t gap = best > f.t_us ? best - f.t_us : f.t_us - best;
        if (gap > max_gap_us) {
            ++out.dropped;
            continue;
        }
        out.pairs.push_back({best, f.t_us, f.newton});
    }
    return out;
}

}  // namespace cprloop
