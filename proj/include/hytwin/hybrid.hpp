#pragma once

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hytwin/historian.hpp"
#include "hytwin/plant.hpp"
#include "hytwin/seq2seq.hpp"

namespace hytwin::hybrid {

using surrogate::Matrix;
using surrogate::Seq2SeqDims;
using surrogate::Seq2SeqModel;

// --- Predictors -----------------------------------------------------------------

/// Source of label predictions over one decoder horizon. Inputs are raw
/// (unnormalized) encoder and decoder rows; outputs are in label units.
class Predictor {
public:
    virtual ~Predictor() = default;
    [[nodiscard]] virtual std::vector<double> predict(const Matrix& enc_raw, const Matrix& dec_raw,
                                                      std::span<const double> dec_times) = 0;
};

/// In-process surrogate.
class LocalPredictor final : public Predictor {
public:
    explicit LocalPredictor(Seq2SeqModel model);
    [[nodiscard]] std::vector<double> predict(const Matrix& enc_raw, const Matrix& dec_raw,
                                              std::span<const double> dec_times) override;
    [[nodiscard]] const Seq2SeqModel& model() const noexcept { return model_; }

private:
    Seq2SeqModel model_;
};

/// Oracle that ignores its inputs and returns a recorded label at the
/// decoder timestamps (the last recorded value past the end).
class EchoPredictor final : public Predictor {
public:
    EchoPredictor(const TimeSeriesFrame& recorded, const std::string& label);
    [[nodiscard]] std::vector<double> predict(const Matrix& enc_raw, const Matrix& dec_raw,
                                              std::span<const double> dec_times) override;

private:
    std::vector<double> times_;
    std::vector<double> values_;
};

// --- Binding ----------------------------------------------------------------------

/// Surrogate terminals on a plant: feature tags in model order, the label
/// state variable, and the predictor behind them.
struct TerminalBinding {
    std::vector<std::string> features;
    std::string label;
    Seq2SeqDims dims;
    std::shared_ptr<Predictor> predictor;
};

/// Throws UNKNOWN_TAG, DIM_MISMATCH or LABEL_NOT_WRITABLE.
[[nodiscard]] TerminalBinding bind_surrogate(const plant::Plant& plant, const Seq2SeqDims& dims,
                                             std::vector<std::string> features, std::string label,
                                             std::shared_ptr<Predictor> predictor);
/// Binds an in-process model using its own feature and label tags.
[[nodiscard]] TerminalBinding bind_surrogate(const plant::Plant& plant, const Seq2SeqModel& model);

// --- Metrics ----------------------------------------------------------------------

/// Step of a reference value from y0 to y1 at time t.
struct StepEvent {
    double time = 0.0;
    double y0 = 0.0;
    double y1 = 0.0;
};

/// First change of a piecewise-constant schedule, if any.
[[nodiscard]] std::optional<StepEvent> step_event_from_schedule(const plant::Schedule& schedule);

struct Metrics {
    double rmse = 0.0;
    double mae = 0.0;
    std::optional<double> rise_time_ref;
    std::optional<double> rise_time_cand;
    double oscillation_index = 0.0;
};

inline constexpr std::size_t oscillation_window = 21;

/// Time from the 10% to the 90% crossing of the event's step, each found as
/// the first linearly interpolated crossing at or after the event time.
/// Throws NO_STEP_EVENT or NEVER_CROSSES.
[[nodiscard]] double rise_time(std::span<const double> times, std::span<const double> values,
                               const std::optional<StepEvent>& event);

/// Standard deviation of the series minus its centered moving average over
/// `window` samples, evaluated where the window fits.
[[nodiscard]] double oscillation_index(std::span<const double> values, std::size_t window = oscillation_window);

/// Throws SHAPE_MISMATCH for unequal lengths, plus rise_time's errors when
/// `event` is set.
[[nodiscard]] Metrics compute_metrics(std::span<const double> times, std::span<const double> reference,
                                      std::span<const double> candidate, const std::optional<StepEvent>& event);

struct RunComparison {
    std::string label;
    TimeSeriesFrame reference;  // time + label
    TimeSeriesFrame candidate;  // time + label
    Metrics metrics;
};

/// Compares the label column of two frames on the same grid. Throws
/// GRID_MISMATCH.
[[nodiscard]] RunComparison compare_frames(const TimeSeriesFrame& reference, const TimeSeriesFrame& candidate,
                                           const std::string& label, const std::optional<StepEvent>& event);

enum class Preference { First, Second, Tie };

struct Ranking {
    Preference preferred = Preference::Tie;
    double delta_rmse = 0.0;  // second minus first
    double delta_mae = 0.0;
    double delta_oscillation = 0.0;
    std::optional<double> delta_rise_time;
};

inline constexpr double rmse_tie_tolerance = 1e-12;

/// Throws REFERENCE_MISMATCH unless both comparisons share a reference.
[[nodiscard]] Ranking compare_runs(const RunComparison& a, const RunComparison& b);

// --- Runs -------------------------------------------------------------------------

/// x + alpha*(prediction - x). Throws GAIN_RANGE unless alpha in [0, 1].
[[nodiscard]] double nudge_state(double x, double prediction, double alpha);

enum class Mode { OpenLoop, Replace, Track };

[[nodiscard]] const char* mode_name(Mode mode);
/// "open_loop", "replace" or "track"; throws CONFIG_INVALID.
[[nodiscard]] Mode parse_mode(std::string_view text);

struct HybridConfig {
    Mode mode = Mode::Track;
    std::optional<double> alpha;
    /// Steps between predictions; the horizon's later values are applied in
    /// between. 1 <= cadence <= dec_len.
    std::size_t cadence = 1;
    plant::ScenarioSchedule scenario;
    std::optional<StepEvent> step_event;
};

struct HybridResult {
    TimeSeriesFrame reference;  // pure physics
    TimeSeriesFrame hybrid;
    RunComparison comparison;   // hybrid label vs reference label
    std::size_t predictions = 0;
};

/// Rolling open-loop predictions of the label from recorded features.
/// Throws FRAME_TOO_SHORT or NOT_FIXED_GRID.
[[nodiscard]] RunComparison run_open_loop(const TerminalBinding& binding, const TimeSeriesFrame& recorded,
                                          const std::optional<StepEvent>& event = std::nullopt);

/// Pure physics reference plus a coupled run. Corrections start once
/// enc_len physics steps have filled the encoder window. Throws
/// TRACK_WITHOUT_GAIN, GAIN_RANGE, CONFIG_INVALID, or errors from the
/// plant and the predictor.
[[nodiscard]] HybridResult run_hybrid(const plant::Plant& plant, const TerminalBinding& binding,
                                      const HybridConfig& config, const plant::PlantState& initial);

}  // namespace hytwin::hybrid
