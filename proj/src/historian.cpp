#include "hytwin/historian.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "hytwin/error.hpp"
#include "hytwin/random.hpp"

namespace hytwin {

namespace {

void check_times(std::span<const double> times) {
    for (std::size_t i = 0; i < times.size(); ++i) {
        if (!std::isfinite(times[i])) {
            throw Error("FRAME_INVALID", "non-finite timestamp at row " + std::to_string(i));
        }
        if (i > 0 && !(times[i] > times[i - 1])) {
            throw Error("FRAME_INVALID", "timestamps not strictly increasing at row " + std::to_string(i));
        }
    }
}

void check_grid(const GridSpec& grid) {
    if (!(grid.dt > 0.0) || !std::isfinite(grid.dt) || !std::isfinite(grid.t0) || grid.n < 1) {
        throw Error("GRID_INVALID", "grid needs dt > 0 and n >= 1");
    }
}

// Linear interpolation of column `col` at time t; t must lie inside the span.
double interpolate(const TimeSeriesFrame& frame, std::size_t col, double t) {
    auto times = frame.times();
    auto it = std::upper_bound(times.begin(), times.end(), t);
    auto hi = static_cast<std::size_t>(it - times.begin());
    if (hi == 0) {
        return frame.at(0, col);
    }
    const std::size_t lo = hi - 1;
    if (times[lo] == t || hi == times.size()) {
        return frame.at(lo, col);
    }
    const double t0 = times[lo];
    const double t1 = times[hi];
    const double v0 = frame.at(lo, col);
    const double v1 = frame.at(hi, col);
    return v0 + (v1 - v0) * ((t - t0) / (t1 - t0));
}

TimeSeriesFrame interpolate_at(const TimeSeriesFrame& frame, const std::vector<double>& instants) {
    std::vector<double> values;
    values.reserve(instants.size() * frame.cols());
    for (double t : instants) {
        for (std::size_t c = 0; c < frame.cols(); ++c) {
            values.push_back(interpolate(frame, c, t));
        }
    }
    return TimeSeriesFrame(frame.tags(), instants, std::move(values));
}

}  // namespace

bool valid_tag(std::string_view tag) {
    if (tag.empty()) {
        return false;
    }
    return std::all_of(tag.begin(), tag.end(), [](char ch) {
        return (ch >= 'A' && ch <= 'Z') || (ch >= 'a' && ch <= 'z') || (ch >= '0' && ch <= '9') || ch == '.' ||
               ch == '_';
    });
}

TimeSeriesFrame::TimeSeriesFrame(std::vector<std::string> tags, std::vector<double> times, std::vector<double> values)
    : tags_(std::move(tags)), times_(std::move(times)), values_(std::move(values)) {
    std::set<std::string_view> seen;
    for (const auto& tag : tags_) {
        if (!seen.insert(tag).second) {
            throw Error("FRAME_INVALID", "duplicate tag " + tag);
        }
    }
    if (values_.size() != times_.size() * tags_.size()) {
        throw Error("FRAME_INVALID", "value matrix is not rows x cols");
    }
    check_times(times_);
}

std::optional<std::size_t> TimeSeriesFrame::find(std::string_view tag) const {
    auto it = std::find(tags_.begin(), tags_.end(), tag);
    if (it == tags_.end()) {
        return std::nullopt;
    }
    return static_cast<std::size_t>(it - tags_.begin());
}

std::size_t TimeSeriesFrame::index_of(std::string_view tag) const {
    if (auto idx = find(tag)) {
        return *idx;
    }
    throw Error("UNKNOWN_TAG", std::string(tag));
}

std::vector<double> TimeSeriesFrame::column(std::string_view tag) const {
    const std::size_t c = index_of(tag);
    std::vector<double> out(rows());
    for (std::size_t r = 0; r < rows(); ++r) {
        out[r] = at(r, c);
    }
    return out;
}

TimeSeriesFrame TimeSeriesFrame::select(const std::vector<std::string>& tags) const {
    std::vector<std::size_t> cols;
    cols.reserve(tags.size());
    for (const auto& tag : tags) {
        cols.push_back(index_of(tag));
    }
    std::vector<double> values;
    values.reserve(rows() * cols.size());
    for (std::size_t r = 0; r < rows(); ++r) {
        for (std::size_t c : cols) {
            values.push_back(at(r, c));
        }
    }
    return TimeSeriesFrame(tags, times_, std::move(values));
}

TimeSeriesFrame TimeSeriesFrame::slice(std::size_t first, std::size_t count) const {
    if (first + count > rows()) {
        throw Error("FRAME_INVALID", "slice beyond end of frame");
    }
    std::vector<double> times(times_.begin() + static_cast<std::ptrdiff_t>(first),
                              times_.begin() + static_cast<std::ptrdiff_t>(first + count));
    std::vector<double> values(values_.begin() + static_cast<std::ptrdiff_t>(first * cols()),
                               values_.begin() + static_cast<std::ptrdiff_t>((first + count) * cols()));
    return TimeSeriesFrame(tags_, std::move(times), std::move(values));
}

TimeSeriesFrame TimeSeriesFrame::with_column(std::string_view tag, std::span<const double> values) const {
    const std::size_t c = index_of(tag);
    if (values.size() != rows()) {
        throw Error("FRAME_INVALID", "replacement column has wrong length");
    }
    auto copy = values_;
    for (std::size_t r = 0; r < rows(); ++r) {
        copy[r * cols() + c] = values[r];
    }
    return TimeSeriesFrame(tags_, times_, std::move(copy));
}

FrameBuilder::FrameBuilder(std::vector<std::string> tags) : tags_(std::move(tags)) {}

void FrameBuilder::reserve(std::size_t rows) {
    times_.reserve(rows);
    values_.reserve(rows * tags_.size());
}

void FrameBuilder::append(double time, std::span<const double> row) {
    if (row.size() != tags_.size()) {
        throw Error("FRAME_INVALID", "row width does not match tag count");
    }
    if (!times_.empty() && !(time > times_.back())) {
        throw Error("FRAME_INVALID", "timestamps not strictly increasing");
    }
    times_.push_back(time);
    values_.insert(values_.end(), row.begin(), row.end());
}

TimeSeriesFrame FrameBuilder::build() && {
    return TimeSeriesFrame(std::move(tags_), std::move(times_), std::move(values_));
}

std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

std::string to_csv(const TimeSeriesFrame& frame) {
    std::string out = "time";
    for (const auto& tag : frame.tags()) {
        out += ',';
        out += tag;
    }
    out += '\n';
    char buf[64];
    for (std::size_t r = 0; r < frame.rows(); ++r) {
        auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), frame.times()[r]);
        out.append(buf, p);
        for (double v : frame.row(r)) {
            out += ',';
            auto [q, ec2] = std::to_chars(buf, buf + sizeof(buf), v);
            out.append(buf, q);
        }
        out += '\n';
    }
    return out;
}

namespace {

std::vector<std::string_view> split_fields(std::string_view line) {
    std::vector<std::string_view> fields;
    std::size_t start = 0;
    while (true) {
        auto comma = line.find(',', start);
        if (comma == std::string_view::npos) {
            fields.push_back(line.substr(start));
            return fields;
        }
        fields.push_back(line.substr(start, comma - start));
        start = comma + 1;
    }
}

[[noreturn]] void malformed(std::size_t line, const std::string& what) {
    throw Error("CSV_MALFORMED", "line " + std::to_string(line) + ": " + what);
}

}  // namespace

TimeSeriesFrame from_csv(std::string_view text) {
    std::vector<std::string_view> lines;
    std::size_t start = 0;
    while (start < text.size()) {
        auto nl = text.find('\n', start);
        if (nl == std::string_view::npos) {
            lines.push_back(text.substr(start));
            break;
        }
        lines.push_back(text.substr(start, nl - start));
        start = nl + 1;
    }
    if (lines.empty()) {
        malformed(1, "missing header");
    }

    auto header = split_fields(lines[0]);
    if (header.empty() || header[0] != "time") {
        malformed(1, "header must start with 'time'");
    }
    std::vector<std::string> tags;
    std::set<std::string_view> seen;
    for (std::size_t i = 1; i < header.size(); ++i) {
        if (!valid_tag(header[i])) {
            malformed(1, "invalid tag '" + std::string(header[i]) + "'");
        }
        if (!seen.insert(header[i]).second) {
            malformed(1, "duplicate tag '" + std::string(header[i]) + "'");
        }
        tags.emplace_back(header[i]);
    }

    std::vector<double> times;
    std::vector<double> values;
    times.reserve(lines.size() - 1);
    values.reserve((lines.size() - 1) * tags.size());
    for (std::size_t li = 1; li < lines.size(); ++li) {
        const std::size_t line_no = li + 1;
        auto fields = split_fields(lines[li]);
        if (fields.size() != tags.size() + 1) {
            malformed(line_no, "expected " + std::to_string(tags.size() + 1) + " fields, got " +
                                   std::to_string(fields.size()));
        }
        for (std::size_t f = 0; f < fields.size(); ++f) {
            double v = 0.0;
            auto field = fields[f];
            auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
            if (field.empty() || ec != std::errc() || ptr != field.data() + field.size() || !std::isfinite(v)) {
                malformed(line_no, "non-numeric cell '" + std::string(field) + "'");
            }
            if (f == 0) {
                if (!times.empty() && !(v > times.back())) {
                    malformed(line_no, "time not strictly increasing");
                }
                times.push_back(v);
            } else {
                values.push_back(v);
            }
        }
    }
    return TimeSeriesFrame(std::move(tags), std::move(times), std::move(values));
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error("FILE_NOT_FOUND", path);
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_file(const std::string& path, std::string_view text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw Error("FILE_WRITE", path);
    }
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) {
        throw Error("FILE_WRITE", path);
    }
}

TimeSeriesFrame read_csv_file(const std::string& path) { return from_csv(read_text_file(path)); }

void write_csv_file(const std::string& path, const TimeSeriesFrame& frame) { write_text_file(path, to_csv(frame)); }

std::optional<double> fixed_step(const TimeSeriesFrame& frame) {
    auto times = frame.times();
    if (times.size() < 2) {
        return std::nullopt;
    }
    const double dt = (times.back() - times.front()) / static_cast<double>(times.size() - 1);
    for (std::size_t i = 1; i < times.size(); ++i) {
        if (std::abs((times[i] - times[i - 1]) - dt) > 1e-9 * dt) {
            return std::nullopt;
        }
    }
    return dt;
}

GridSpec grid_within(const TimeSeriesFrame& frame, double dt) {
    if (frame.empty() || !(dt > 0.0)) {
        throw Error("GRID_INVALID", "cannot build a grid over an empty frame or with dt <= 0");
    }
    const double t0 = frame.times().front();
    const double span = frame.times().back() - t0;
    auto n = static_cast<std::size_t>(std::floor(span / dt)) + 1;
    while (n > 1 && t0 + static_cast<double>(n - 1) * dt > frame.times().back()) {
        --n;
    }
    return GridSpec{t0, dt, n};
}

TimeSeriesFrame jitter_timestamps(const TimeSeriesFrame& frame, double lo, double hi, std::uint64_t seed) {
    if (!(lo > 0.0) || !(lo <= hi) || !std::isfinite(hi)) {
        throw Error("JITTER_BOUNDS", "need 0 < lo <= hi");
    }
    auto dt = fixed_step(frame);
    if (!dt) {
        throw Error("NOT_FIXED_GRID", "jitter needs a uniformly sampled frame");
    }
    if (*dt < hi * (1.0 - 1e-12)) {
        throw Error("JITTER_BOUNDS", "upper gap exceeds the frame's sample spacing");
    }
    SplitMix64 rng(seed);
    const double end = frame.times().back();
    std::vector<double> instants{frame.times().front()};
    while (true) {
        const double next = instants.back() + rng.uniform(lo, hi);
        if (next > end) {
            break;
        }
        instants.push_back(next);
    }
    return interpolate_at(frame, instants);
}

TimeSeriesFrame resample_fixed_grid(const TimeSeriesFrame& frame, const GridSpec& grid) {
    check_grid(grid);
    if (frame.empty() || grid.t0 < frame.times().front() || grid.last() > frame.times().back()) {
        throw Error("GRID_OUT_OF_RANGE", "grid [" + format_double(grid.t0) + ", " + format_double(grid.last()) +
                                             "] not inside frame span");
    }
    std::vector<double> instants(grid.n);
    for (std::size_t k = 0; k < grid.n; ++k) {
        instants[k] = grid.time(k);
    }
    return interpolate_at(frame, instants);
}

TimeSeriesFrame align_to_frame(std::span<const TimeSeriesFrame> frames, const GridSpec& grid) {
    check_grid(grid);
    std::vector<std::string> tags;
    std::set<std::string> seen;
    for (const auto& f : frames) {
        for (const auto& tag : f.tags()) {
            if (!seen.insert(tag).second) {
                throw Error("TAG_COLLISION", tag);
            }
            tags.push_back(tag);
        }
    }
    std::vector<TimeSeriesFrame> resampled;
    resampled.reserve(frames.size());
    for (const auto& f : frames) {
        resampled.push_back(resample_fixed_grid(f, grid));
    }
    std::vector<double> times(grid.n);
    std::vector<double> values;
    values.reserve(grid.n * tags.size());
    for (std::size_t k = 0; k < grid.n; ++k) {
        times[k] = grid.time(k);
        for (const auto& f : resampled) {
            auto row = f.row(k);
            values.insert(values.end(), row.begin(), row.end());
        }
    }
    return TimeSeriesFrame(std::move(tags), std::move(times), std::move(values));
}

}  // namespace hytwin
