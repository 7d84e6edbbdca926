#include <cmath>

#include "hytwin/error.hpp"
#include "hytwin/hybrid.hpp"

namespace hytwin::hybrid {

namespace {

/// First time at or after `from` where the series reaches `level` in the
/// direction of `sign`, linearly interpolated between samples.
std::optional<double> first_crossing(std::span<const double> times, std::span<const double> values, double from,
                                     double level, double sign) {
    std::size_t k = 0;
    while (k < times.size() && times[k] < from) {
        ++k;
    }
    for (; k < times.size(); ++k) {
        if (sign * (values[k] - level) >= 0.0) {
            if (k == 0 || times[k - 1] < from || sign * (values[k - 1] - level) >= 0.0) {
                return times[k];
            }
            const double a = values[k - 1];
            const double b = values[k];
            return times[k - 1] + (level - a) / (b - a) * (times[k] - times[k - 1]);
        }
    }
    return std::nullopt;
}

}  // namespace

std::optional<StepEvent> step_event_from_schedule(const plant::Schedule& schedule) {
    for (std::size_t i = 1; i < schedule.size(); ++i) {
        if (schedule[i].value != schedule[i - 1].value) {
            return StepEvent{schedule[i].start, schedule[i - 1].value, schedule[i].value};
        }
    }
    return std::nullopt;
}

double rise_time(std::span<const double> times, std::span<const double> values, const std::optional<StepEvent>& event) {
    if (!event || event->y1 == event->y0) {
        throw Error("NO_STEP_EVENT", "rise time needs a step event with y1 != y0");
    }
    if (times.size() != values.size()) {
        throw Error("SHAPE_MISMATCH", "times and values differ in length");
    }
    const double span = event->y1 - event->y0;
    const double sign = span > 0.0 ? 1.0 : -1.0;
    const auto t10 = first_crossing(times, values, event->time, event->y0 + 0.1 * span, sign);
    const auto t90 = t10 ? first_crossing(times, values, *t10, event->y0 + 0.9 * span, sign) : std::nullopt;
    if (!t10 || !t90) {
        throw Error("NEVER_CROSSES", std::string("series never reaches ") + (t10 ? "90%" : "10%") + " of the step");
    }
    return *t90 - *t10;
}

double oscillation_index(std::span<const double> values, std::size_t window) {
    if (window < 1 || window % 2 == 0) {
        throw Error("CONFIG_INVALID", "moving-average window must be odd");
    }
    if (values.size() < window) {
        return 0.0;
    }
    const std::size_t half = window / 2;
    std::vector<double> residual;
    residual.reserve(values.size() - 2 * half);
    for (std::size_t i = half; i + half < values.size(); ++i) {
        double sum = 0.0;
        for (std::size_t j = i - half; j <= i + half; ++j) {
            sum += values[j];
        }
        residual.push_back(values[i] - sum / static_cast<double>(window));
    }
    double mean = 0.0;
    for (double r : residual) {
        mean += r;
    }
    mean /= static_cast<double>(residual.size());
    double var = 0.0;
    for (double r : residual) {
        var += (r - mean) * (r - mean);
    }
    return std::sqrt(var / static_cast<double>(residual.size()));
}

Metrics compute_metrics(std::span<const double> times, std::span<const double> reference,
                        std::span<const double> candidate, const std::optional<StepEvent>& event) {
    if (reference.size() != candidate.size() || times.size() != reference.size() || reference.empty()) {
        throw Error("SHAPE_MISMATCH", "metrics need equal-length, non-empty series");
    }
    Metrics m;
    double sq = 0.0;
    double abs = 0.0;
    for (std::size_t k = 0; k < reference.size(); ++k) {
        const double e = candidate[k] - reference[k];
        sq += e * e;
        abs += std::abs(e);
    }
    const auto n = static_cast<double>(reference.size());
    m.rmse = std::sqrt(sq / n);
    m.mae = abs / n;
    if (event) {
        m.rise_time_ref = rise_time(times, reference, event);
        m.rise_time_cand = rise_time(times, candidate, event);
    }
    m.oscillation_index = oscillation_index(candidate);
    return m;
}

RunComparison compare_frames(const TimeSeriesFrame& reference, const TimeSeriesFrame& candidate,
                             const std::string& label, const std::optional<StepEvent>& event) {
    if (reference.rows() != candidate.rows() ||
        !std::equal(reference.times().begin(), reference.times().end(), candidate.times().begin())) {
        throw Error("GRID_MISMATCH", "reference and candidate are not on the same grid");
    }
    RunComparison out;
    out.label = label;
    out.reference = reference.select({label});
    out.candidate = candidate.select({label});
    out.metrics = compute_metrics(reference.times(), out.reference.values(), out.candidate.values(), event);
    return out;
}

Ranking compare_runs(const RunComparison& a, const RunComparison& b) {
    if (a.label != b.label || !(a.reference == b.reference)) {
        throw Error("REFERENCE_MISMATCH", "runs were compared against different references");
    }
    Ranking r;
    r.delta_rmse = b.metrics.rmse - a.metrics.rmse;
    r.delta_mae = b.metrics.mae - a.metrics.mae;
    r.delta_oscillation = b.metrics.oscillation_index - a.metrics.oscillation_index;
    if (a.metrics.rise_time_cand && b.metrics.rise_time_cand) {
        r.delta_rise_time = *b.metrics.rise_time_cand - *a.metrics.rise_time_cand;
    }
    if (std::abs(r.delta_rmse) < rmse_tie_tolerance) {
        r.preferred = Preference::Tie;
    } else {
        r.preferred = r.delta_rmse > 0.0 ? Preference::First : Preference::Second;
    }
    return r;
}

}  // namespace hytwin::hybrid
