#include "cprloop/session_log.hpp"

#include <algorithm>
#include <fstream>
#include <istream>
#include <ostream>

#include <json.hpp>

namespace cprloop {

using ojson = nlohmann::ordered_json;

std::uint64_t record_time(const LogRecord& r) {
    return std::visit(
        [](const auto& rec) -> std::uint64_t {
            using T = std::decay_t<decltype(rec)>;
            if constexpr (std::is_same_v<T, FrameRecord>)
                return rec.frame.timestamp_us;
            else
                return rec.t_us;
        },
        r);
}

void SessionLog::add_sample(const DualSample& s) {
    records.emplace_back(FrameRecord{s.palm, s.seq});
    records.emplace_back(FrameRecord{s.dorsum, s.seq});
}

void SessionLog::sort_by_time() {
    std::stable_sort(records.begin(), records.end(),
                     [](const LogRecord& a, const LogRecord& b) { return record_time(a) < record_time(b); });
}

std::string to_json_line(const MetaRecord& m) {
    ojson j;
    j["k"] = "meta";
    j["subject"] = m.subject;
    j["config_hash"] = m.config_hash;
    j["start"] = m.start;
    return j.dump();
}

namespace {

ojson encode(const FrameRecord& r) {
    ojson j;
    j["k"] = "frame";
    j["side"] = std::string(to_string(r.frame.side));
    j["t_us"] = r.frame.timestamp_us;
    j["seq"] = r.seq;
    ojson rows = ojson::array();
    for (int i = 0; i < r.frame.counts.rows; ++i) {
        ojson row = ojson::array();
        for (int c = 0; c < r.frame.counts.cols; ++c) row.push_back(r.frame.counts(i, c));
        rows.push_back(std::move(row));
    }
    j["counts"] = std::move(rows);
    return j;
}

ojson encode(const ForceRecord& r) {
    ojson j;
    j["k"] = "force";
    j["t_us"] = r.t_us;
    j["newton"] = r.newton;
    return j;
}

ojson encode(const PoseRecord& r) {
    ojson j;
    j["k"] = "pose";
    j["t_us"] = r.t_us;
    j["label"] = std::string(to_string(r.label));
    return j;
}

ojson encode(const PredRecord& r) {
    ojson j;
    j["k"] = "pred";
    j["t_us"] = r.t_us;
    j["crest_us"] = r.crest_us;
    j["rate"] = r.rate ? std::string(to_string(*r.rate)) : std::string("first");
    j["force"] = r.force ? std::string(to_string(*r.force)) : std::string("unscored");
    j["pose"] = r.pose ? std::string(to_string(*r.pose)) : std::string("unscored");
    j["dt_ms"] = r.dt_ms;
    return j;
}

ojson encode(const HapticRecord& r) {
    ojson j;
    j["k"] = "haptic";
    j["t_us"] = r.t_us;
    j["unit"] = std::string(to_string(r.unit));
    j["pwm"] = r.pwm;
    j["dur_ms"] = r.dur_ms;
    return j;
}

FrameRecord decode_frame(const ojson& j) {
    FrameRecord r;
    r.frame.side = parse_side(j.at("side").get<std::string>());
    r.frame.timestamp_us = j.at("t_us").get<std::uint64_t>();
    r.seq = j.value("seq", std::uint32_t{0});
    const auto& rows = j.at("counts");
    if (!rows.is_array() || rows.empty() || !rows[0].is_array())
        throw Error(Errc::CorruptLog, "frame counts must be a 2-D array");
    int nr = static_cast<int>(rows.size());
    int nc = static_cast<int>(rows[0].size());
    if (nr != kRows || nc != kCols)
        throw Error(Errc::CorruptLog, "frame counts are " + std::to_string(nr) + "x" + std::to_string(nc) + ", expected " +
                                          std::to_string(kRows) + "x" + std::to_string(kCols));
    r.frame.counts = CountGrid(nr, nc);
    for (int i = 0; i < nr; ++i) {
        if (static_cast<int>(rows[i].size()) != nc) throw Error(Errc::CorruptLog, "ragged frame counts");
        for (int c = 0; c < nc; ++c) {
            auto v = rows[i][c].get<std::int64_t>();
            if (v < 0 || v > 65535) throw Error(Errc::CorruptLog, "frame count out of u16 range");
            r.frame.counts(i, c) = static_cast<std::uint16_t>(v);
        }
    }
    return r;
}

}  // namespace

std::string to_json_line(const LogRecord& r) {
    return std::visit([](const auto& rec) { return encode(rec).dump(); }, r);
}

LogRecord parse_record_line(const std::string& line) {
    ojson j;
    try {
        j = ojson::parse(line);
    } catch (const nlohmann::json::exception& e) {
        throw Error(Errc::CorruptLog, e.what());
    }
    try {
        auto k = j.at("k").get<std::string>();
        if (k == "frame") return decode_frame(j);
        if (k == "force") return ForceRecord{j.at("t_us").get<std::uint64_t>(), j.at("newton").get<double>()};
        if (k == "pose")
            return PoseRecord{j.at("t_us").get<std::uint64_t>(), parse_pose(j.at("label").get<std::string>())};
        if (k == "pred") {
            PredRecord p;
            p.t_us = j.at("t_us").get<std::uint64_t>();
            p.crest_us = j.value("crest_us", p.t_us);
            auto rate = j.at("rate").get<std::string>();
            if (rate != "first") p.rate = parse_rate(rate);
            auto force = j.at("force").get<std::string>();
            if (force != "unscored") p.force = parse_force(force);
            auto pose = j.at("pose").get<std::string>();
            if (pose != "unscored") p.pose = parse_pose(pose);
            p.dt_ms = j.value("dt_ms", 0.0);
            return p;
        }
        if (k == "haptic")
            return HapticRecord{j.at("t_us").get<std::uint64_t>(), parse_unit(j.at("unit").get<std::string>()),
                                j.at("pwm").get<int>(), j.at("dur_ms").get<double>()};
        throw Error(Errc::CorruptLog, "unknown record kind '" + k + "'");
    } catch (const nlohmann::json::exception& e) {
        throw Error(Errc::CorruptLog, e.what());
    } catch (const Error& e) {
        if (e.code() == Errc::CorruptLog) throw;
        throw Error(Errc::CorruptLog, e.what());
    }
}

void write_session_log(std::ostream& os, const SessionLog& log) {
    os << to_json_line(log.meta) << '\n';
    for (const auto& r : log.records) os << to_json_line(r) << '\n';
}

void write_session_log(const std::string& path, const SessionLog& log) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error(Errc::Io, "cannot open " + path + " for writing");
    write_session_log(os, log);
}

SessionLog read_session_log(std::istream& is) {
    SessionLog log;
    std::string line;
    std::size_t lineno = 0;
    bool have_meta = false;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            if (!have_meta) {
                auto j = ojson::parse(line);
                if (j.at("k").get<std::string>() != "meta") throw Error(Errc::CorruptLog, "first record must be meta");
                log.meta.subject = j.value("subject", "");
                log.meta.config_hash = j.value("config_hash", "");
                log.meta.start = j.value("start", "");
                have_meta = true;
                continue;
            }
            log.records.push_back(parse_record_line(line));
        } catch (const nlohmann::json::exception& e) {
            throw Error(Errc::CorruptLog, "line " + std::to_string(lineno) + ": " + e.what());
        } catch (const Error& e) {
            throw Error(Errc::CorruptLog, "line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    if (!have_meta) throw Error(Errc::CorruptLog, "missing meta record");
    return log;
}

SessionLog read_session_log(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error(Errc::Io, "cannot open " + path);
    return read_session_log(is);
}

}  // namespace cprloop
