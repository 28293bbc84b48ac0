#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "cprloop/core.hpp"

namespace cprloop {

/*
 * SessionLog: JSON Lines, one record per line, UTF-8. The first line is the
 * meta record. Record shapes:
 *
 *   {"k":"meta","subject":"s01","config_hash":"...","start":"2026-01-01T00:00:00Z"}
 *   {"k":"frame","side":"palm","t_us":70000,"seq":1,"counts":[[...14...], ...13 rows]}
 *   {"k":"force","t_us":100000,"newton":412.3}
 *   {"k":"pose","t_us":0,"label":"left_skewed"}
 *   {"k":"pred","t_us":...,"crest_us":...,"rate":"correct"|"first","force":...,"pose":...,"dt_ms":...}
 *   {"k":"haptic","t_us":...,"unit":"center","pwm":73,"dur_ms":80}
 *
 * "pred" force/pose are "unscored" when the model stage failed for that peak.
 */

struct MetaRecord {
    std::string subject;
    std::string config_hash;
    std::string start;
    friend bool operator==(const MetaRecord&, const MetaRecord&) = default;
};

struct FrameRecord {
    TactileFrame frame;
    std::uint32_t seq = 0;
    friend bool operator==(const FrameRecord&, const FrameRecord&) = default;
};

struct ForceRecord {
    std::uint64_t t_us = 0;
    double newton = 0.0;
    friend bool operator==(const ForceRecord&, const ForceRecord&) = default;
};

struct PoseRecord {
    std::uint64_t t_us = 0;
    PoseClass label = PoseClass::Correct;
    friend bool operator==(const PoseRecord&, const PoseRecord&) = default;
};

struct PredRecord {
    std::uint64_t t_us = 0;      // peak frame timestamp
    std::uint64_t crest_us = 0;  // interpolated crest time
    std::optional<RateClass> rate;    // nullopt: first compression
    std::optional<ForceClass> force;  // nullopt: unscored
    std::optional<PoseClass> pose;    // nullopt: unscored
    double dt_ms = 0.0;
    friend bool operator==(const PredRecord&, const PredRecord&) = default;
};

struct HapticRecord {
    std::uint64_t t_us = 0;
    ActuatorUnit unit = ActuatorUnit::Center;
    int pwm = 0;
    double dur_ms = 0.0;
    friend bool operator==(const HapticRecord&, const HapticRecord&) = default;
};

using LogRecord = std::variant<FrameRecord, ForceRecord, PoseRecord, PredRecord, HapticRecord>;

std::uint64_t record_time(const LogRecord& r);

struct SessionLog {
    MetaRecord meta;
    std::vector<LogRecord> records;

    void add_sample(const DualSample& s);
    /// Stable sort by record time; ties keep insertion order.
    void sort_by_time();

    friend bool operator==(const SessionLog&, const SessionLog&) = default;
};

std::string to_json_line(const MetaRecord& m);
std::string to_json_line(const LogRecord& r);
/// Parses one non-meta line. Throws Error(CorruptLog).
LogRecord parse_record_line(const std::string& line);

void write_session_log(std::ostream& os, const SessionLog& log);
void write_session_log(const std::string& path, const SessionLog& log);
/// Throws Error(CorruptLog) naming the offending line number.
SessionLog read_session_log(std::istream& is);
SessionLog read_session_log(const std::string& path);

}  // namespace cprloop
