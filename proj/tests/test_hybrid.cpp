#include <doctest.h>

#include <cmath>
#include <numbers>

#include "hytwin/error.hpp"
#include "hytwin/hybrid.hpp"
#include "hytwin/training.hpp"

using namespace hytwin;
using namespace hytwin::hybrid;
using surrogate::Seq2SeqModel;

namespace {

struct Fixture {
    plant::Plant plant{plant::build_default_plant()};
    plant::ScenarioSchedule scenario = plant::default_scenario();
    TimeSeriesFrame recorded = plant::run_scenario(plant, scenario, plant.initial_state(scenario));
};

Fixture& fixture() {
    static Fixture f;
    return f;
}

/// All-zero model over the default features; without label feedback it
/// predicts the label mean.
Seq2SeqModel zero_model(const TimeSeriesFrame& frame, bool feedback) {
    auto spec = surrogate::default_window_spec();
    spec.label_feedback = feedback;
    const auto fn = surrogate::fit_normalizer(frame, spec.features);
    const auto ln = surrogate::fit_normalizer(frame, {spec.label});
    surrogate::Seq2SeqDims d;
    d.dec_features = static_cast<surrogate::Index>(spec.features.size());
    d.enc_features = d.dec_features + (feedback ? 1 : 0);
    d.hidden = 4;
    d.enc_len = spec.enc_len;
    d.dec_len = spec.dec_len;
    d.label_feedback = feedback;
    return surrogate::make_model(d, fn, ln);
}

HybridConfig config_for(Mode mode, std::optional<double> alpha) {
    HybridConfig c;
    c.mode = mode;
    c.alpha = alpha;
    c.scenario = fixture().scenario;
    return c;
}

}  // namespace

TEST_CASE("binding checks tags, writability and dims") {
    auto& fx = fixture();
    const auto model = zero_model(fx.recorded, true);
    const auto b = bind_surrogate(fx.plant, model);
    CHECK(b.features == surrogate::default_window_spec().features);
    CHECK(b.label == "T100.T");

    auto features = model.feature_tags();
    features[0] = "T100.X";
    auto predictor = std::make_shared<LocalPredictor>(model);
    CHECK_THROWS_WITH_AS((void)bind_surrogate(fx.plant, model.dims, features, "T100.T", predictor),
                         doctest::Contains("UNKNOWN_TAG"), Error);
    CHECK_THROWS_WITH_AS((void)bind_surrogate(fx.plant, model.dims, model.feature_tags(), "E100.Q", predictor),
                         doctest::Contains("LABEL_NOT_WRITABLE"), Error);
    features = model.feature_tags();
    features.pop_back();
    CHECK_THROWS_WITH_AS((void)bind_surrogate(fx.plant, model.dims, features, "T100.T", predictor),
                         doctest::Contains("DIM_MISMATCH"), Error);
}

TEST_CASE("open loop with an echo oracle is exact") {
    auto& fx = fixture();
    const auto model = zero_model(fx.recorded, true);
    const auto b = bind_surrogate(fx.plant, model.dims, model.feature_tags(), "T100.T",
                                  std::make_shared<EchoPredictor>(fx.recorded, "T100.T"));
    const auto cmp = run_open_loop(b, fx.recorded);
    CHECK(cmp.metrics.rmse == 0.0);
    CHECK(cmp.metrics.mae == 0.0);
}

TEST_CASE("zero model error equals the label's standard deviation") {
    auto& fx = fixture();
    const auto model = zero_model(fx.recorded, false);
    const auto cmp = run_open_loop(bind_surrogate(fx.plant, model), fx.recorded);
    CHECK(cmp.metrics.rmse == doctest::Approx(model.label_norm.stddev[0]).epsilon(1e-10));
}

TEST_CASE("open loop needs a full window") {
    auto& fx = fixture();
    const auto model = zero_model(fx.recorded, true);
    CHECK_THROWS_WITH_AS((void)run_open_loop(bind_surrogate(fx.plant, model), fx.recorded.slice(0, 39)),
                         doctest::Contains("FRAME_TOO_SHORT"), Error);
}

TEST_CASE("trained surrogate rises with the plant after the set point step") {
    auto& fx = fixture();
    auto spec = surrogate::default_window_spec();
    spec.stride = 7;
    const auto data = surrogate::make_windows(fx.recorded, spec, surrogate::fit_normalizer(fx.recorded, spec.features),
                                              surrogate::fit_normalizer(fx.recorded, {spec.label}));
    surrogate::TrainConfig cfg;
    cfg.epochs = 8;
    const auto model = surrogate::train(data, 8, cfg).model;
    const auto cmp = run_open_loop(bind_surrogate(fx.plant, model), fx.recorded);
    const auto ref = cmp.reference.column("T100.T");
    const auto cand = cmp.candidate.column("T100.T");
    CHECK(ref[1500] > ref[1000] + 5.0);
    CHECK(cand[1500] > cand[1000] + 5.0);
}

TEST_CASE("track with zero gain is bit-identical to physics") {
    auto& fx = fixture();
    const auto model = zero_model(fx.recorded, false);
    const auto r = run_hybrid(fx.plant, bind_surrogate(fx.plant, model), config_for(Mode::Track, 0.0),
                              fx.plant.initial_state(fx.scenario));
    CHECK(r.hybrid == r.reference);
    CHECK(r.reference == fx.recorded);
    CHECK(r.comparison.metrics.rmse == 0.0);
    CHECK(r.predictions == fx.recorded.rows() - 1 - 30);
}

TEST_CASE("replace with an echo oracle reproduces the reference") {
    auto& fx = fixture();
    const auto model = zero_model(fx.recorded, true);
    for (std::size_t cadence : {1, 4, 10}) {
        auto cfg = config_for(Mode::Replace, std::nullopt);
        cfg.cadence = cadence;
        const auto b = bind_surrogate(fx.plant, model.dims, model.feature_tags(), "T100.T",
                                      std::make_shared<EchoPredictor>(fx.recorded, "T100.T"));
        const auto r = run_hybrid(fx.plant, b, cfg, fx.plant.initial_state(fx.scenario));
        const auto ref = r.reference.column("T100.T");
        const auto hyb = r.hybrid.column("T100.T");
        double worst = 0.0;
        for (std::size_t k = 0; k < ref.size(); ++k) {
            worst = std::max(worst, std::abs(ref[k] - hyb[k]));
        }
        CHECK_MESSAGE(worst <= 1e-12, "cadence " << cadence);
    }
}

TEST_CASE("tracking pulls the label toward the surrogate") {
    auto& fx = fixture();
    const auto model = zero_model(fx.recorded, false);
    auto cfg = config_for(Mode::Track, 0.3);
    cfg.scenario.duration = 200.0;
    const auto r = run_hybrid(fx.plant, bind_surrogate(fx.plant, model), cfg, fx.plant.initial_state(cfg.scenario));
    // The zero model predicts the recorded mean, far above the early tank temperature.
    CHECK(r.hybrid.column("T100.T")[60] > r.reference.column("T100.T")[60] + 1.0);
    CHECK(r.hybrid.column("T100.T")[30] == r.reference.column("T100.T")[30]);
}

TEST_CASE("run configuration errors") {
    auto& fx = fixture();
    const auto b = bind_surrogate(fx.plant, zero_model(fx.recorded, false));
    const auto s0 = fx.plant.initial_state(fx.scenario);
    CHECK_THROWS_WITH_AS((void)run_hybrid(fx.plant, b, config_for(Mode::Track, std::nullopt), s0),
                         doctest::Contains("TRACK_WITHOUT_GAIN"), Error);
    CHECK_THROWS_WITH_AS((void)run_hybrid(fx.plant, b, config_for(Mode::Track, 1.5), s0),
                         doctest::Contains("GAIN_RANGE"), Error);
    auto cfg = config_for(Mode::Replace, std::nullopt);
    cfg.cadence = 11;
    CHECK_THROWS_WITH_AS((void)run_hybrid(fx.plant, b, cfg, s0), doctest::Contains("CONFIG_INVALID"), Error);
    CHECK(parse_mode("open_loop") == Mode::OpenLoop);
    CHECK(std::string(mode_name(Mode::Track)) == "track");
    CHECK_THROWS_WITH_AS((void)parse_mode("nudge"), doctest::Contains("CONFIG_INVALID"), Error);
}

TEST_CASE("nudge law") {
    CHECK(nudge_state(20.0, 22.0, 1.0) == 22.0);
    CHECK(nudge_state(20.0, 22.0, 0.0) == 20.0);
    CHECK(nudge_state(20.0, 22.0, 0.5) == 21.0);
    for (double a : {0.1, 0.3, 0.9}) {
        const double x = 13.7;
        const double y = -4.2;
        CHECK(std::abs(nudge_state(x, y, a) - y) == doctest::Approx((1 - a) * std::abs(x - y)).epsilon(1e-14));
    }
    CHECK_THROWS_WITH_AS((void)nudge_state(0, 0, -0.1), doctest::Contains("GAIN_RANGE"), Error);
}

TEST_CASE("metrics of identical series") {
    const std::vector<double> t = {0, 1, 2, 3};
    const std::vector<double> y = {5, 5, 5, 5};
    const auto m = compute_metrics(t, y, y, std::nullopt);
    CHECK(m.rmse == 0.0);
    CHECK(m.mae == 0.0);
    CHECK(m.oscillation_index == 0.0);
    CHECK(oscillation_index(std::vector<double>(50, 3.0)) == 0.0);
}

TEST_CASE("metrics are symmetric") {
    const std::vector<double> t = {0, 1, 2, 3, 4};
    const std::vector<double> a = {1, 2, 4, 3, 0};
    const std::vector<double> b = {0, 2, 5, 1, 1};
    const auto ab = compute_metrics(t, a, b, std::nullopt);
    const auto ba = compute_metrics(t, b, a, std::nullopt);
    CHECK(ab.rmse == ba.rmse);
    CHECK(ab.mae == ba.mae);
    CHECK(ab.rmse > 0.0);
    const std::vector<double> shorter = {1, 2};
    CHECK_THROWS_WITH_AS((void)compute_metrics(t, a, shorter, std::nullopt), doctest::Contains("SHAPE_MISMATCH"),
                         Error);
}

TEST_CASE("first-order rise time is tau ln 9") {
    const double tau = 10.0;
    std::vector<double> t, y;
    for (int k = 0; k <= 200; ++k) {
        t.push_back(k);
        y.push_back(k < 20 ? 0.0 : 1.0 - std::exp(-(k - 20) / tau));
    }
    const StepEvent e{20.0, 0.0, 1.0};
    CHECK(std::abs(rise_time(t, y, e) - tau * std::log(9.0)) <= 1.0);
    CHECK_THROWS_WITH_AS((void)rise_time(t, y, std::nullopt), doctest::Contains("NO_STEP_EVENT"), Error);
    CHECK_THROWS_WITH_AS((void)rise_time(t, y, StepEvent{20.0, 0.0, 2.0}), doctest::Contains("NEVER_CROSSES"), Error);
}

TEST_CASE("oscillation index of a sinusoid") {
    // 21 samples span one period, so the centered average removes the sinusoid exactly.
    const double dt = 2.0 * std::numbers::pi / 21.0;
    std::vector<double> t, ref, cand;
    for (int k = 0; k < 600; ++k) {
        t.push_back(k * dt);
        ref.push_back(0.5 * k * dt);
        cand.push_back(ref.back() + std::sin(k * dt));
    }
    const auto m = compute_metrics(t, ref, cand, std::nullopt);
    CHECK(std::abs(m.oscillation_index - 1.0 / std::sqrt(2.0)) <= 0.05 / std::sqrt(2.0));
}

TEST_CASE("step events from schedules") {
    const auto e = step_event_from_schedule(plant::parse_schedule("0:40,1000:50"));
    REQUIRE(e);
    CHECK(e->time == 1000.0);
    CHECK(e->y0 == 40.0);
    CHECK(e->y1 == 50.0);
    CHECK(!step_event_from_schedule(plant::parse_schedule("0:40")));
}

TEST_CASE("run ranking") {
    const TimeSeriesFrame ref({"y"}, {0, 1, 2, 3}, {0, 0, 0, 0});
    const TimeSeriesFrame a({"y"}, {0, 1, 2, 3}, {0.5, -0.5, 0.5, -0.5});
    const TimeSeriesFrame b({"y"}, {0, 1, 2, 3}, {0.7, -0.7, 0.7, -0.7});
    const auto ca = compare_frames(ref, a, "y", std::nullopt);
    const auto cb = compare_frames(ref, b, "y", std::nullopt);
    CHECK(ca.metrics.rmse == doctest::Approx(0.5));
    CHECK(compare_runs(ca, cb).preferred == Preference::First);
    CHECK(compare_runs(cb, ca).preferred == Preference::Second);
    CHECK(compare_runs(ca, ca).preferred == Preference::Tie);

    const TimeSeriesFrame other({"y"}, {0, 1, 2, 3}, {1, 1, 1, 1});
    CHECK_THROWS_WITH_AS((void)compare_runs(ca, compare_frames(other, b, "y", std::nullopt)),
                         doctest::Contains("REFERENCE_MISMATCH"), Error);
    const TimeSeriesFrame shifted({"y"}, {0, 1, 2, 4}, {0, 0, 0, 0});
    CHECK_THROWS_WITH_AS((void)compare_frames(ref, shifted, "y", std::nullopt), doctest::Contains("GRID_MISMATCH"),
                         Error);
}
