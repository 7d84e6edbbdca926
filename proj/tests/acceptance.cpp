#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "hytwin/cosim.hpp"
#include "hytwin/error.hpp"
#include "hytwin/historian.hpp"
#include "hytwin/hybrid.hpp"
#include "hytwin/model_codec.hpp"
#include "hytwin/pipeline.hpp"
#include "hytwin/plant.hpp"
#include "hytwin/random.hpp"
#include "hytwin/training.hpp"

using namespace hytwin;
using surrogate::Index;
using surrogate::Matrix;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* format, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, format, args...);
    return buf;
}

// --- Shared experiment setup ------------------------------------------------------

pipeline::ScenarioOptions held_out_options(double ua_scale = 1.0) {
    pipeline::ScenarioOptions o;
    o.temperature_setpoint = "0:40,1400:48";
    o.valve = "0:0.25,600:0.23,2200:0.26";
    o.supply = "0:15,900:16,2500:14.5";
    o.ua_scale = ua_scale;
    return o;
}

const hybrid::StepEvent held_out_step{1400.0, 40.0, 48.0};

TimeSeriesFrame collect(const pipeline::ScenarioOptions& options) {
    const plant::Plant plant(pipeline::make_topology(options));
    const auto scenario = pipeline::make_scenario(options);
    return plant::run_scenario(plant, scenario, plant.initial_state(scenario, options.initial_temperature));
}

surrogate::TrainResult fit(const TimeSeriesFrame& frame, std::size_t stride, std::size_t epochs) {
    auto spec = surrogate::default_window_spec();
    spec.stride = stride;
    const auto data = surrogate::make_windows(frame, spec, surrogate::fit_normalizer(frame, spec.features),
                                              surrogate::fit_normalizer(frame, {spec.label}));
    surrogate::TrainConfig cfg;
    cfg.epochs = epochs;
    return surrogate::train(data, 32, cfg);
}

hybrid::RunComparison open_loop(const surrogate::Seq2SeqModel& model, const TimeSeriesFrame& recorded) {
    const plant::Plant plant(plant::build_default_plant());
    return hybrid::run_open_loop(hybrid::bind_surrogate(plant, model), recorded, held_out_step);
}

const TimeSeriesFrame& held_out_truth() {
    static const auto frame = collect(held_out_options());
    return frame;
}

struct OpenLoopTask {
    hybrid::Metrics clean;
    double train_seconds = 0.0;
};

const OpenLoopTask& clean_task() {
    static const OpenLoopTask task = [] {
        const auto t0 = std::chrono::steady_clock::now();
        const auto model = fit(collect(pipeline::ScenarioOptions{}), 1, 50).model;
        const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        return OpenLoopTask{open_loop(model, held_out_truth()).metrics, seconds};
    }();
    return task;
}

/// Surrogate fitted to data from the plant with UA raised by half.
const surrogate::Seq2SeqModel& mismatch_model() {
    static const auto model = [] {
        pipeline::ScenarioOptions o;
        o.ua_scale = 1.5;
        return fit(collect(o), 2, 40).model;
    }();
    return model;
}

hybrid::HybridConfig track_config(double alpha) {
    hybrid::HybridConfig hc;
    hc.mode = hybrid::Mode::Track;
    hc.alpha = alpha;
    hc.scenario = pipeline::make_scenario(held_out_options());
    return hc;
}

// --- Criteria -------------------------------------------------------------------------

Outcome conservation() {
    auto topology = plant::build_default_plant();
    std::get<plant::TankParams>(topology.find("T100")->params).ua = 0.0;
    const plant::Plant plant(std::move(topology));
    const auto sc = plant::default_scenario();
    auto s = plant.initial_state(sc);
    const double cp = plant::Physics::heat_capacity;
    const double m0 = s.tank_mass;
    const double e0 = m0 * cp * s.tank_temperature;
    double dm = 0.0;
    double de = 0.0;
    for (std::size_t k = 0; k < sc.step_count(); ++k) {
        const double t = static_cast<double>(k) * sc.dt;
        plant.apply_overrides(sc, t, s);
        const auto next = plant.step(s, plant.setpoints_at(sc, t), sc.dt);
        dm += (next.pump_flow - next.valve_flow) * sc.dt;
        de += (next.heater_power + next.pump_flow * cp * next.supply_temperature -
               next.valve_flow * cp * s.tank_temperature) *
              sc.dt;
        s = next;
    }
    const double mass_rel = std::abs((s.tank_mass - m0) - dm) / std::max(std::abs(dm), m0);
    const double energy_rel =
        std::abs((s.tank_mass * cp * s.tank_temperature - e0) - de) / std::max(std::abs(de), e0);
    return {sc.step_count() == 3000 && mass_rel <= 1e-9 && energy_rel <= 1e-6,
            fmt("%zu steps, mass rel %.2e (<= 1e-9), energy rel %.2e (<= 1e-6)", sc.step_count(), mass_rel,
                energy_rel)};
}

Outcome gradient_oracle() {
    SplitMix64 rng(20240);
    double worst = 0.0;
    std::size_t checked = 0;
    for (int trial = 0; trial < 25; ++trial) {
        surrogate::Seq2SeqDims d;
        d.label_feedback = trial % 2 == 0;
        d.dec_features = 1 + static_cast<Index>(rng.below(3));
        d.enc_features = d.dec_features + (d.label_feedback ? 1 : 0);
        d.hidden = 1 + static_cast<Index>(rng.below(4));
        d.enc_len = 1 + static_cast<Index>(rng.below(5));
        d.dec_len = 1 + static_cast<Index>(rng.below(3));
        d.step_scale = d.label_feedback ? rng.uniform(0.1, 1.0) : 1.0;
        auto p = surrogate::initialize_params(d, rng.next());
        p.for_each([&](const char*, double* x, Index n) {
            for (Index i = 0; i < n; ++i) x[i] += rng.uniform(-0.5, 0.5);
        });
        surrogate::Window w{Matrix(d.enc_len, d.enc_features), Matrix(d.dec_len, d.dec_features),
                            surrogate::Vector(d.dec_len)};
        for (Index i = 0; i < w.enc.size(); ++i) w.enc.data()[i] = rng.uniform(-2, 2);
        for (Index i = 0; i < w.dec.size(); ++i) w.dec.data()[i] = rng.uniform(-2, 2);
        for (Index i = 0; i < w.label.size(); ++i) w.label[i] = rng.uniform(-2, 2);

        const auto g = surrogate::bptt_gradients(d, p, w);
        std::vector<double*> params;
        std::vector<const double*> grads;
        p.for_each([&](const char*, double* x, Index n) {
            for (Index i = 0; i < n; ++i) params.push_back(x + i);
        });
        g.for_each([&](const char*, const double* x, Index n) {
            for (Index i = 0; i < n; ++i) grads.push_back(x + i);
        });
        auto loss = [&] {
            surrogate::ForwardCache cache;
            surrogate::seq2seq_forward(d, p, w.enc, w.dec, cache);
            return surrogate::mse_loss(cache.predictions, w.label);
        };
        for (std::size_t i = 0; i < params.size(); ++i) {
            const double saved = *params[i];
            *params[i] = saved + 1e-5;
            const double up = loss();
            *params[i] = saved - 1e-5;
            const double down = loss();
            *params[i] = saved;
            const double numeric = (up - down) / 2e-5;
            const double scale = std::max({std::abs(numeric), std::abs(*grads[i]), 1e-6});
            worst = std::max(worst, std::abs(numeric - *grads[i]) / scale);
            ++checked;
        }
    }
    return {worst <= 1e-4, fmt("25 models, %zu parameters, worst relative error %.2e (<= 1e-4)", checked, worst)};
}

Outcome overfit_oracle() {
    const auto frame = collect(pipeline::ScenarioOptions{});
    auto spec = surrogate::default_window_spec();
    const auto features = surrogate::fit_normalizer(frame, spec.features);
    const auto label = surrogate::fit_normalizer(frame, {spec.label});
    // 64 windows need enc_len + dec_len + 63 rows; take them from the end of
    // the 40 degC hold.
    const std::size_t rows = static_cast<std::size_t>(spec.enc_len + spec.dec_len) + 63;
    const std::size_t first = 1000 - rows;
    surrogate::TrainConfig cfg;
    cfg.epochs = 200;
    // Default model, then the same windows without label feedback.
    std::string detail;
    bool pass = true;
    for (const bool feedback : {true, false}) {
        spec.label_feedback = feedback;
        const auto data = surrogate::make_windows(frame.slice(first, rows), spec, features, label);
        const auto dims = data.dims(32);
        const double initial = surrogate::dataset_loss(dims, surrogate::initialize_params(dims, cfg.seed), data);
        const auto r = surrogate::train(data, 32, cfg);
        const double final_loss = surrogate::dataset_loss(r.model.dims, r.model.params, data);
        pass = pass && data.windows.size() == 64 && final_loss < 1e-3;
        detail += fmt("%s%s: %zu windows, normalized MSE %.2e -> %.2e", detail.empty() ? "" : "; ",
                      feedback ? "label feedback" : "no feedback", data.windows.size(), initial, final_loss);
    }
    return {pass, fmt("t = %zu..%zu s, 200 epochs, bound 1e-3; ", first, first + rows - 1) + detail};
}

Outcome fig5_open_loop() {
    const auto& task = clean_task();
    const auto& m = task.clean;
    const double step = held_out_step.y1 - held_out_step.y0;
    const bool mae_ok = m.mae < 0.05 * step;
    const bool rise_ok =
        m.rise_time_ref && m.rise_time_cand && std::abs(*m.rise_time_cand - *m.rise_time_ref) <= 0.2 * *m.rise_time_ref;
    return {mae_ok && rise_ok,
            fmt("MAE %.4g K (< %.2g), rise %.1f s vs reference %.1f s (within 20%%), training %.1f s", m.mae,
                0.05 * step, m.rise_time_cand.value_or(NAN), m.rise_time_ref.value_or(NAN), task.train_seconds)};
}

Outcome fig6_tracking() {
    const auto& model = mismatch_model();
    const plant::Plant nominal(pipeline::make_topology(held_out_options()));
    const auto truth = collect(held_out_options(1.5));
    const auto binding = hybrid::bind_surrogate(nominal, model);
    const auto hc = track_config(0.3);
    const auto tracked = hybrid::run_hybrid(nominal, binding, hc, nominal.initial_state(hc.scenario));
    const auto zero = hybrid::run_hybrid(nominal, binding, track_config(0.0), nominal.initial_state(hc.scenario));

    const auto label = model.label_tag();
    const double physics = hybrid::compare_frames(truth, tracked.reference, label, std::nullopt).metrics.rmse;
    const double track = hybrid::compare_frames(truth, tracked.hybrid, label, std::nullopt).metrics.rmse;
    const bool identical = zero.hybrid == zero.reference && to_csv(zero.hybrid) == to_csv(zero.reference);
    return {track < physics && identical,
            fmt("RMSE vs UA x1.5 truth: physics %.4g K, track alpha=0.3 %.4g K; alpha=0 %s", physics, track,
                identical ? "bit-identical to physics" : "differs from physics")};
}

Outcome sampling_rate() {
    double worst = 0.0;
    std::size_t n = 0;
    SplitMix64 rng(77);
    for (int trial = 0; trial < 10; ++trial) {
        const double a = rng.uniform(-5, 5);
        const double b = rng.uniform(-50, 50);
        FrameBuilder fb({"x", "y"});
        for (int k = 0; k <= 3000; ++k) {
            const double t = k;
            const double row[] = {a * t + b, -0.01 * a * t + 20.0};
            fb.append(t, row);
        }
        const auto f = std::move(fb).build();
        const auto j = jitter_timestamps(f, 0.5, 1.0, rng.next());
        const auto r = resample_fixed_grid(j, grid_within(j, 1.0));
        for (std::size_t k = 0; k < r.rows(); ++k) {
            if (r.times()[k] != f.times()[k]) {
                return {false, fmt("grid point %zu at %.17g", k, r.times()[k])};
            }
            for (std::size_t c = 0; c < 2; ++c) {
                // Error relative to the sample's magnitude.
                worst = std::max(worst, std::abs(r.at(k, c) - f.at(k, c)) / std::max(1.0, std::abs(f.at(k, c))));
            }
        }
        n += r.rows();
    }

    const auto clean = collect(pipeline::ScenarioOptions{});
    const auto jittered = jitter_timestamps(clean, 0.5, 1.0, 42);
    const auto resampled = resample_fixed_grid(jittered, grid_within(jittered, 1.0));
    const auto model = fit(resampled, 1, 50).model;
    const double mae = open_loop(model, held_out_truth()).metrics.mae;
    const double clean_mae = clean_task().clean.mae;
    return {worst <= 1e-12 && mae <= 2.0 * clean_mae,
            fmt("affine recovery worst relative error %.2e over %zu samples (<= 1e-12); MAE resampled-jitter %.4g K vs clean %.4g K "
                "(ratio %.2f <= 2)",
                worst, n, mae, clean_mae, mae / clean_mae)};
}

Outcome protocol_transparency() {
    const auto& model = mismatch_model();
    const plant::Plant plant(pipeline::make_topology(held_out_options()));
    const auto hc = track_config(0.3);
    const auto initial = plant.initial_state(hc.scenario);
    const auto local = hybrid::run_hybrid(plant, hybrid::bind_surrogate(plant, model), hc, initial);

    cosim::ModelServer server(model, 0);
    std::size_t answered = 0;
    std::thread host([&] { answered = server.serve_one(); });
    std::optional<hybrid::HybridResult> remote;
    std::string failure;
    try {
        remote = hybrid::run_hybrid(plant, cosim::bind_remote(plant, model, "127.0.0.1", server.port()), hc, initial);
    } catch (const Error& e) {
        failure = e.what();
    }
    host.join();
    if (!remote) {
        return {false, "remote run failed: " + failure};
    }
    const auto a = to_csv(local.hybrid);
    const auto b = to_csv(remote->hybrid);
    return {a == b && local.predictions == answered,
            fmt("%zu predictions served over loopback, hybrid CSVs %s (%zu bytes)", answered,
                a == b ? "byte-identical" : "differ", a.size())};
}

// --- Round trips ----------------------------------------------------------------------

double random_value(SplitMix64& rng) {
    switch (rng.below(6)) {
        case 0:
            return 0.0;
        case 1:
            return static_cast<double>(static_cast<std::int64_t>(rng.below(2000001)) - 1000000);
        case 2:
            return rng.uniform(-1, 1) * std::pow(10.0, rng.uniform(-300, 300));
        case 3:
            return rng.uniform(-100, 100);
        default: {
            // Arbitrary finite bit patterns.
            double x;
            do {
                const std::uint64_t bits = rng.next();
                std::memcpy(&x, &bits, sizeof x);
            } while (!std::isfinite(x));
            return x;
        }
    }
}

std::string random_tag(SplitMix64& rng) {
    static const std::string alphabet = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789._";
    std::string tag;
    const auto len = 1 + rng.below(12);
    for (std::size_t i = 0; i < len; ++i) tag.push_back(alphabet[rng.below(alphabet.size())]);
    return tag;
}

std::vector<std::string> distinct_tags(SplitMix64& rng, std::size_t n) {
    std::set<std::string> seen{"time"};
    std::vector<std::string> tags;
    while (tags.size() < n) {
        auto tag = random_tag(rng);
        if (seen.insert(tag).second) tags.push_back(std::move(tag));
    }
    return tags;
}

TimeSeriesFrame random_frame(SplitMix64& rng) {
    const auto cols = 1 + rng.below(6);
    const auto rows = 1 + rng.below(40);
    FrameBuilder b(distinct_tags(rng, cols));
    double t = rng.uniform(-1e4, 1e4);
    std::vector<double> row(cols);
    for (std::size_t k = 0; k < rows; ++k) {
        for (auto& v : row) v = random_value(rng);
        b.append(t, row);
        t += rng.below(3) == 0 ? 1.0 : rng.uniform(1e-3, 10.0);
    }
    return std::move(b).build();
}

surrogate::NormStats random_norm(SplitMix64& rng, std::vector<std::string> tags) {
    surrogate::NormStats s;
    for (auto& tag : tags) {
        s.tags.push_back(std::move(tag));
        s.mean.push_back(rng.uniform(-1e3, 1e3));
        s.stddev.push_back(std::pow(10.0, rng.uniform(-6, 4)));
    }
    return s;
}

surrogate::Seq2SeqModel random_model(SplitMix64& rng) {
    surrogate::Seq2SeqDims d;
    d.label_feedback = rng.below(2) == 0;
    d.dec_features = 1 + static_cast<Index>(rng.below(5));
    d.enc_features = d.dec_features + (d.label_feedback ? 1 : 0);
    d.hidden = 1 + static_cast<Index>(rng.below(6));
    d.enc_len = 1 + static_cast<Index>(rng.below(40));
    d.dec_len = 1 + static_cast<Index>(rng.below(12));
    d.step_scale = d.label_feedback ? std::pow(10.0, rng.uniform(-4, 1)) : 1.0;
    auto tags = distinct_tags(rng, static_cast<std::size_t>(d.dec_features) + 1);
    auto label = tags.back();
    tags.pop_back();
    auto m = surrogate::make_model(d, random_norm(rng, tags), random_norm(rng, {label}));
    m.params.for_each([&](const char*, double* x, Index n) {
        for (Index i = 0; i < n; ++i) x[i] = rng.below(4) == 0 ? random_value(rng) : rng.uniform(-2, 2);
    });
    return m;
}

Matrix random_matrix(SplitMix64& rng, Index rows, Index cols) {
    Matrix m(rows, cols);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = random_value(rng);
    return m;
}

cosim::Message random_message(SplitMix64& rng) {
    const auto rows = [&] { return 1 + static_cast<Index>(rng.below(30)); };
    const auto seq = [&] { return static_cast<std::int64_t>(rng.next() >> 2); };
    switch (rng.below(6)) {
        case 0: {
            cosim::Hello h;
            h.features = distinct_tags(rng, 1 + rng.below(6));
            h.label = random_tag(rng);
            h.enc_len = rows();
            h.dec_len = rows();
            h.label_feedback = rng.below(2) == 0;
            return h;
        }
        case 1:
            return cosim::HelloAck{};
        case 2: {
            const auto f = 1 + static_cast<Index>(rng.below(6));
            return cosim::Predict{seq(), random_matrix(rng, rows(), f + 1), random_matrix(rng, rows(), f)};
        }
        case 3: {
            std::vector<double> y(1 + rng.below(20));
            for (auto& v : y) v = random_value(rng);
            return cosim::Prediction{seq(), y};
        }
        case 4: {
            std::string detail;
            const auto len = rng.below(40);
            for (std::size_t i = 0; i < len; ++i) detail.push_back(static_cast<char>(32 + rng.below(95)));
            return cosim::ErrorMsg{random_tag(rng), detail + " \"quoted\"\ttab \\ \xc3\xa9"};
        }
        default:
            return cosim::Shutdown{};
    }
}

Outcome round_trips() {
    constexpr int cases = 1000;
    SplitMix64 rng(8);
    int csv_ok = 0;
    int model_ok = 0;
    int msg_ok = 0;
    for (int k = 0; k < cases; ++k) {
        const auto f = random_frame(rng);
        const auto text = to_csv(f);
        csv_ok += from_csv(text) == f && to_csv(from_csv(text)) == text;

        const auto m = random_model(rng);
        const auto doc = surrogate::save_model(m);
        const auto back = surrogate::load_model(doc);
        model_ok += back == m && surrogate::save_model(back) == doc;

        const auto msg = random_message(rng);
        const auto line = cosim::encode(msg);
        msg_ok += cosim::decode(line) == msg && line.find('\n') == line.size() - 1;
    }
    return {csv_ok == cases && model_ok == cases && msg_ok == cases,
            fmt("CSV %d/%d, model %d/%d, message %d/%d identities", csv_ok, cases, model_ok, cases, msg_ok, cases)};
}

struct Criterion {
    int id;
    const char* name;
    double budget_seconds;  // 0: no runtime bound
    std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
    const std::vector<Criterion> criteria = {
        {1, "conservation", 1.0, conservation},
        {2, "gradient oracle", 30.0, gradient_oracle},
        {3, "overfit oracle", 120.0, overfit_oracle},
        {4, "open-loop prediction", 180.0, fig5_open_loop},
        {5, "tracking under model mismatch", 60.0, fig6_tracking},
        {6, "sampling rate", 0.0, sampling_rate},
        {7, "protocol transparency", 0.0, protocol_transparency},
        {8, "codec round trips", 0.0, round_trips},
    };
    std::set<int> selected;
    for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

    int failures = 0;
    for (const auto& c : criteria) {
        if (!selected.empty() && !selected.count(c.id)) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("threw ") + e.what()};
        }
        const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const bool in_time = c.budget_seconds <= 0.0 || seconds < c.budget_seconds;
        const bool pass = o.pass && in_time;
        failures += !pass;
        std::string budget = c.budget_seconds > 0.0 ? fmt(" (< %.0f s)", c.budget_seconds) : "";
        std::printf("%s criterion %d %s: %s; %.2f s%s%s\n", pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(),
                    seconds, budget.c_str(), in_time ? "" : " over budget");
        std::fflush(stdout);
    }
    return failures == 0 ? 0 : 1;
}
