#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace hytwin {

/// Uniform sampling grid t0 + k*dt, k = 0..n-1.
struct GridSpec {
    double t0 = 0.0;
    double dt = 1.0;
    std::size_t n = 1;

    [[nodiscard]] double time(std::size_t k) const { return t0 + static_cast<double>(k) * dt; }
    [[nodiscard]] double last() const { return time(n - 1); }
};

/// Tagged, time-stamped multi-signal record. Values are stored row-major
/// (one row per timestamp, one column per tag). Immutable once built; use
/// FrameBuilder to record samples incrementally.
class TimeSeriesFrame {
public:
    TimeSeriesFrame() = default;

    /// Throws FRAME_INVALID unless times are strictly increasing, the value
    /// matrix is rectangular and tags are unique.
    TimeSeriesFrame(std::vector<std::string> tags, std::vector<double> times, std::vector<double> values);

    [[nodiscard]] const std::vector<std::string>& tags() const noexcept { return tags_; }
    [[nodiscard]] std::span<const double> times() const noexcept { return times_; }
    [[nodiscard]] std::span<const double> values() const noexcept { return values_; }
    [[nodiscard]] std::size_t rows() const noexcept { return times_.size(); }
    [[nodiscard]] std::size_t cols() const noexcept { return tags_.size(); }
    [[nodiscard]] bool empty() const noexcept { return times_.empty(); }

    [[nodiscard]] double at(std::size_t row, std::size_t col) const { return values_[row * tags_.size() + col]; }
    [[nodiscard]] std::span<const double> row(std::size_t r) const {
        return std::span<const double>(values_).subspan(r * tags_.size(), tags_.size());
    }

    [[nodiscard]] std::optional<std::size_t> find(std::string_view tag) const;
    /// Column index of tag; throws UNKNOWN_TAG.
    [[nodiscard]] std::size_t index_of(std::string_view tag) const;
    [[nodiscard]] std::vector<double> column(std::string_view tag) const;

    /// New frame holding only the given tags, in the given order.
    [[nodiscard]] TimeSeriesFrame select(const std::vector<std::string>& tags) const;
    /// New frame holding rows [first, first + count).
    [[nodiscard]] TimeSeriesFrame slice(std::size_t first, std::size_t count) const;
    /// Copy of this frame with one column replaced.
    [[nodiscard]] TimeSeriesFrame with_column(std::string_view tag, std::span<const double> values) const;

    friend bool operator==(const TimeSeriesFrame&, const TimeSeriesFrame&) = default;

private:
    std::vector<std::string> tags_;
    std::vector<double> times_;
    std::vector<double> values_;
};

/// Incremental recorder producing a TimeSeriesFrame.
class FrameBuilder {
public:
    explicit FrameBuilder(std::vector<std::string> tags);

    void reserve(std::size_t rows);
    /// Throws FRAME_INVALID on a non-increasing time or wrong row width.
    void append(double time, std::span<const double> row);
    [[nodiscard]] std::size_t rows() const noexcept { return times_.size(); }
    [[nodiscard]] TimeSeriesFrame build() &&;

private:
    std::vector<std::string> tags_;
    std::vector<double> times_;
    std::vector<double> values_;
};

/// True if tag matches [A-Za-z0-9._]+.
[[nodiscard]] bool valid_tag(std::string_view tag);

// --- CSV exchange -----------------------------------------------------------
//
// Wide format: header "time,<tag1>,<tag2>,...", one LF-terminated row per
// sample, shortest round-trip decimals, no quoting.

[[nodiscard]] std::string to_csv(const TimeSeriesFrame& frame);
/// Throws CSV_MALFORMED with the 1-based line number.
[[nodiscard]] TimeSeriesFrame from_csv(std::string_view text);

/// Throws FILE_NOT_FOUND / FILE_WRITE.
[[nodiscard]] TimeSeriesFrame read_csv_file(const std::string& path);
void write_csv_file(const std::string& path, const TimeSeriesFrame& frame);

[[nodiscard]] std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, std::string_view text);

/// Shortest decimal that parses back to the same double.
[[nodiscard]] std::string format_double(double v);

// --- Sampling ---------------------------------------------------------------

/// Grid spacing if consecutive gaps are all equal to within 1e-9 relative;
/// nullopt otherwise (or for frames with fewer than two rows).
[[nodiscard]] std::optional<double> fixed_step(const TimeSeriesFrame& frame);

/// Largest grid with spacing dt starting at the first timestamp that still
/// fits inside the frame's time span.
[[nodiscard]] GridSpec grid_within(const TimeSeriesFrame& frame, double dt);

/// Resamples a uniformly sampled frame at instants whose consecutive gaps are
/// drawn i.i.d. uniform in [lo, hi] from SplitMix64(seed), starting at the
/// first timestamp and stopping at the last one. Values are linearly
/// interpolated. Throws JITTER_BOUNDS or NOT_FIXED_GRID.
[[nodiscard]] TimeSeriesFrame jitter_timestamps(const TimeSeriesFrame& frame, double lo, double hi,
                                                std::uint64_t seed);

/// Per-tag linear interpolation onto the grid; samples at coincident
/// timestamps are copied exactly. Throws GRID_OUT_OF_RANGE.
[[nodiscard]] TimeSeriesFrame resample_fixed_grid(const TimeSeriesFrame& frame, const GridSpec& grid);

/// Resamples every frame onto the grid and joins the columns in order.
/// Throws TAG_COLLISION or GRID_OUT_OF_RANGE.
[[nodiscard]] TimeSeriesFrame align_to_frame(std::span<const TimeSeriesFrame> frames, const GridSpec& grid);

}  // namespace hytwin
