#pragma once

// MOT-Challenge text files: `frame,id,x,y,w,h,conf,-1,-1,-1`, 1-based frames.
// Lines starting with '#' are provenance comments and are skipped on load.

#include <charconv>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "siammot/core.hpp"

namespace siammot {

struct TrackPoint {
    BBox box;
    double conf = 1.0;

    friend bool operator==(const TrackPoint&, const TrackPoint&) = default;
};

using Trajectory = std::map<int, TrackPoint>;  // frame -> point
using TrackSet = std::map<int, Trajectory>;    // id -> trajectory
using DetectionSet = std::map<int, std::vector<Detection>>;  // frame -> detections

class MotParseError : public std::runtime_error {
public:
    MotParseError(const std::string& source, int line, const std::string& what)
        : std::runtime_error(source + ":" + std::to_string(line) + ": " + what), line_(line) {}
    int line() const { return line_; }

private:
    int line_;
};

/// Shortest decimal text that parses back to the same double.
inline std::string format_number(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

namespace detail {

struct MotRow {
    int frame = 0;
    int id = 0;
    BBox box;
    double conf = 1.0;
};

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

template <class T>
bool parse_field(std::string_view s, T& out) {
    s = trim(s);
    if (!s.empty() && s.front() == '+') s.remove_prefix(1);
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc() && ptr == s.data() + s.size();
}

inline bool parse_int_field(std::string_view s, int& out) {
    if (parse_field(s, out)) return true;
    // Some tools write integral columns as "3.0".
    double d = 0.0;
    if (!parse_field(s, d) || d != static_cast<double>(static_cast<long long>(d))) return false;
    out = static_cast<int>(d);
    return true;
}

template <class Fn>
void read_mot_rows(std::istream& in, const std::string& source, Fn&& on_row) {
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string_view sv = trim(line);
        if (sv.empty() || sv.front() == '#') continue;
        std::vector<std::string_view> fields;
        std::size_t start = 0;
        while (true) {
            const std::size_t comma = sv.find(',', start);
            fields.push_back(sv.substr(start, comma == std::string_view::npos ? sv.npos : comma - start));
            if (comma == std::string_view::npos) break;
            start = comma + 1;
        }
        if (fields.size() < 6) throw MotParseError(source, lineno, "expected at least 6 comma-separated fields");
        MotRow row;
        if (!parse_int_field(fields[0], row.frame)) throw MotParseError(source, lineno, "bad frame field");
        if (!parse_int_field(fields[1], row.id)) throw MotParseError(source, lineno, "bad id field");
        double* dst[4] = {&row.box.x, &row.box.y, &row.box.w, &row.box.h};
        const char* names[4] = {"x", "y", "w", "h"};
        for (int k = 0; k < 4; ++k)
            if (!parse_field(fields[2 + k], *dst[k]) || !std::isfinite(*dst[k]))
                throw MotParseError(source, lineno, std::string("bad ") + names[k] + " field");
        if (fields.size() >= 7 && !parse_field(fields[6], row.conf))
            throw MotParseError(source, lineno, "bad confidence field");
        if (row.frame < 1) throw MotParseError(source, lineno, "frame index must be >= 1");
        if (!(row.box.w > 0.0)) throw MotParseError(source, lineno, "width must be > 0");
        if (!(row.box.h > 0.0)) throw MotParseError(source, lineno, "height must be > 0");
        on_row(row, lineno);
    }
}

inline void write_row(std::ostream& out, int frame, int id, const BBox& b, double conf) {
    out << frame << ',' << id << ',' << format_number(b.x) << ',' << format_number(b.y) << ','
        << format_number(b.w) << ',' << format_number(b.h) << ',' << format_number(conf)
        << ",-1,-1,-1\n";
}

inline void write_header(std::ostream& out, const std::string& header) {
    if (header.empty()) return;
    std::istringstream lines(header);
    std::string l;
    while (std::getline(lines, l)) out << "# " << l << '\n';
}

}  // namespace detail

inline TrackSet read_mot_tracks(std::istream& in, const std::string& source = "<stream>") {
    TrackSet tracks;
    detail::read_mot_rows(in, source, [&](const detail::MotRow& row, int lineno) {
        auto [it, inserted] = tracks[row.id].emplace(row.frame, TrackPoint{row.box, row.conf});
        if (!inserted)
            throw MotParseError(source, lineno, "duplicate (frame, id) = (" + std::to_string(row.frame) +
                                                    ", " + std::to_string(row.id) + ")");
    });
    return tracks;
}

inline TrackSet load_mot_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    return read_mot_tracks(in, path);
}

/// Rows ordered by frame, then id.
inline void write_mot_tracks(std::ostream& out, const TrackSet& tracks, const std::string& header = {}) {
    detail::write_header(out, header);
    std::map<int, std::vector<std::pair<int, const TrackPoint*>>> by_frame;
    for (const auto& [id, traj] : tracks)
        for (const auto& [frame, pt] : traj) by_frame[frame].emplace_back(id, &pt);
    for (const auto& [frame, rows] : by_frame)
        for (const auto& [id, pt] : rows) detail::write_row(out, frame, id, pt->box, pt->conf);
}

inline void save_mot_file(const TrackSet& tracks, const std::string& path, const std::string& header = {}) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    write_mot_tracks(out, tracks, header);
}

inline DetectionSet load_det_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    DetectionSet dets;
    detail::read_mot_rows(in, path, [&](const detail::MotRow& row, int) {
        dets[row.frame].push_back(Detection{row.box, row.conf});
    });
    return dets;
}

inline void save_det_file(const DetectionSet& dets, const std::string& path, const std::string& header = {}) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    detail::write_header(out, header);
    for (const auto& [frame, list] : dets)
        for (const Detection& d : list) detail::write_row(out, frame, -1, d.box, d.confidence);
}

}  // namespace siammot
