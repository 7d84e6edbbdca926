#include "hytwin/hybrid.hpp"

#include <algorithm>
#include <cmath>

#include "hytwin/error.hpp"

namespace hytwin::hybrid {

LocalPredictor::LocalPredictor(Seq2SeqModel model) : model_(std::move(model)) { model_.validate(); }

std::vector<double> LocalPredictor::predict(const Matrix& enc_raw, const Matrix& dec_raw, std::span<const double>) {
    const auto y = surrogate::predict_raw(model_, enc_raw, dec_raw);
    return {y.data(), y.data() + y.size()};
}

EchoPredictor::EchoPredictor(const TimeSeriesFrame& recorded, const std::string& label)
    : times_(recorded.times().begin(), recorded.times().end()), values_(recorded.column(label)) {
    if (times_.empty()) {
        throw Error("FRAME_TOO_SHORT", "echo oracle needs at least one sample");
    }
}

std::vector<double> EchoPredictor::predict(const Matrix&, const Matrix&, std::span<const double> dec_times) {
    std::vector<double> out;
    out.reserve(dec_times.size());
    for (double t : dec_times) {
        const auto it = std::lower_bound(times_.begin(), times_.end(), t - 1e-9 * std::max(1.0, std::abs(t)));
        out.push_back(it == times_.end() ? values_.back() : values_[static_cast<std::size_t>(it - times_.begin())]);
    }
    return out;
}

TerminalBinding bind_surrogate(const plant::Plant& plant, const Seq2SeqDims& dims, std::vector<std::string> features,
                               std::string label, std::shared_ptr<Predictor> predictor) {
    for (const auto& tag : features) {
        if (!plant.has_tag(tag)) {
            throw Error("UNKNOWN_TAG", tag);
        }
    }
    if (!plant.has_tag(label)) {
        throw Error("UNKNOWN_TAG", label);
    }
    if (!plant.writable_state(label)) {
        throw Error("LABEL_NOT_WRITABLE", label + " is not a state variable");
    }
    const auto F = static_cast<surrogate::Index>(features.size());
    if (F < 1 || dims.dec_features != F || dims.enc_features != F + (dims.label_feedback ? 1 : 0) ||
        dims.enc_len < 1 || dims.dec_len < 1) {
        throw Error("DIM_MISMATCH", std::to_string(features.size()) + " feature terminals for a model with " +
                                        std::to_string(dims.dec_features) + " decoder features");
    }
    if (!predictor) {
        throw Error("DIM_MISMATCH", "binding needs a predictor");
    }
    return {std::move(features), std::move(label), dims, std::move(predictor)};
}

TerminalBinding bind_surrogate(const plant::Plant& plant, const Seq2SeqModel& model) {
    return bind_surrogate(plant, model.dims, model.feature_tags(), model.label_tag(),
                          std::make_shared<LocalPredictor>(model));
}

double nudge_state(double x, double prediction, double alpha) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) {
        throw Error("GAIN_RANGE", "alpha must lie in [0, 1]");
    }
    return x + alpha * (prediction - x);
}

const char* mode_name(Mode mode) {
    switch (mode) {
        case Mode::OpenLoop: return "open_loop";
        case Mode::Replace: return "replace";
        case Mode::Track: return "track";
    }
    return "?";
}

Mode parse_mode(std::string_view text) {
    if (text == "open_loop" || text == "openloop") {
        return Mode::OpenLoop;
    }
    if (text == "replace") {
        return Mode::Replace;
    }
    if (text == "track") {
        return Mode::Track;
    }
    throw Error("CONFIG_INVALID", "unknown mode '" + std::string(text) + "'");
}

RunComparison run_open_loop(const TerminalBinding& binding, const TimeSeriesFrame& recorded,
                            const std::optional<StepEvent>& event) {
    const auto need = static_cast<std::size_t>(binding.dims.enc_len + binding.dims.dec_len);
    if (recorded.rows() < need) {
        throw Error("FRAME_TOO_SHORT", std::to_string(recorded.rows()) + " rows, need " + std::to_string(need));
    }
    auto& predictor = *binding.predictor;
    const auto y = surrogate::rolling_predictions(
        binding.dims, binding.features, binding.label, recorded,
        [&](const Matrix& enc, const Matrix& dec, std::span<const double> times) {
            return predictor.predict(enc, dec, times);
        });
    const auto reference = recorded.select({binding.label});
    const auto candidate = reference.with_column(binding.label, y);
    return compare_frames(reference, candidate, binding.label, event);
}

HybridResult run_hybrid(const plant::Plant& plant, const TerminalBinding& binding, const HybridConfig& config,
                        const plant::PlantState& initial) {
    const auto& dims = binding.dims;
    if (config.cadence < 1 || config.cadence > static_cast<std::size_t>(dims.dec_len)) {
        throw Error("CONFIG_INVALID", "cadence must lie in [1, " + std::to_string(dims.dec_len) + "]");
    }
    if (config.mode == Mode::Track && !config.alpha) {
        throw Error("TRACK_WITHOUT_GAIN", "track mode needs alpha");
    }
    if (config.alpha) {
        (void)nudge_state(0.0, 0.0, *config.alpha);
    }
    const auto& scenario = config.scenario;
    HybridResult result;
    result.reference = plant::run_scenario(plant, scenario, initial);

    if (config.mode == Mode::OpenLoop) {
        result.comparison = run_open_loop(binding, result.reference, config.step_event);
        const auto predicted = result.comparison.candidate.column(binding.label);
        result.hybrid = result.reference.with_column(binding.label, predicted);
        result.predictions = predicted.size();
        return result;
    }

    std::vector<plant::Signal> feature_signals;
    for (const auto& tag : binding.features) {
        feature_signals.push_back(plant.signal(tag));
    }
    const auto label_signal = plant.signal(binding.label);
    const auto F = static_cast<surrogate::Index>(feature_signals.size());
    const auto enc_len = static_cast<std::size_t>(dims.enc_len);
    const auto dec_len = static_cast<std::size_t>(dims.dec_len);

    const std::size_t steps = scenario.step_count();
    FrameBuilder frame(plant.tags());
    frame.reserve(steps + 1);
    std::vector<double> row(plant.tags().size());
    std::vector<double> features_hist;  // row-major, F per row
    std::vector<double> label_hist;
    features_hist.reserve((steps + 1) * feature_signals.size());
    label_hist.reserve(steps + 1);

    auto remember = [&](const plant::PlantState& s) {
        for (auto sig : feature_signals) {
            features_hist.push_back(plant.read(s, sig));
        }
        label_hist.push_back(plant.read(s, label_signal));
    };

    plant::PlantState state = initial;
    plant.record(state, row);
    frame.append(state.time, row);
    remember(state);

    Matrix enc(dims.enc_len, dims.enc_features);
    Matrix dec(dims.dec_len, dims.dec_features);
    std::vector<double> dec_times(dec_len);
    std::vector<double> horizon;
    for (std::size_t k = 1; k <= steps; ++k) {
        const double t = static_cast<double>(k - 1) * scenario.dt;
        plant.apply_overrides(scenario, t, state);
        const auto setpoints = plant.setpoints_at(scenario, t);
        state = plant.step(state, setpoints, scenario.dt);
        state.time = initial.time + static_cast<double>(k) * scenario.dt;

        if (k > enc_len) {
            const std::size_t phase = (k - enc_len - 1) % config.cadence;
            if (phase == 0) {
                for (std::size_t r = 0; r < enc_len; ++r) {
                    const std::size_t src = k - enc_len + r;
                    for (surrogate::Index j = 0; j < F; ++j) {
                        enc(static_cast<surrogate::Index>(r), j) = features_hist[src * feature_signals.size() + static_cast<std::size_t>(j)];
                    }
                    if (dims.label_feedback) {
                        enc(static_cast<surrogate::Index>(r), F) = label_hist[src];
                    }
                }
                for (surrogate::Index j = 0; j < F; ++j) {
                    dec.col(j).setConstant(plant.read(state, feature_signals[static_cast<std::size_t>(j)]));
                }
                for (std::size_t r = 0; r < dec_len; ++r) {
                    dec_times[r] = state.time + static_cast<double>(r) * scenario.dt;
                }
                horizon = binding.predictor->predict(enc, dec, dec_times);
                if (horizon.size() != dec_len) {
                    throw Error("SHAPE_MISMATCH", "predictor returned " + std::to_string(horizon.size()) + " values");
                }
            }
            const double x = plant.read(state, label_signal);
            const double y = horizon[phase];
            plant.write(state, label_signal, config.mode == Mode::Replace ? y : nudge_state(x, y, *config.alpha));
            ++result.predictions;
        }
        plant.record(state, row);
        frame.append(state.time, row);
        remember(state);
    }
    result.hybrid = std::move(frame).build();
    result.comparison = compare_frames(result.reference, result.hybrid, binding.label, config.step_event);
    return result;
}

}  // namespace hytwin::hybrid
