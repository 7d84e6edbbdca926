#include "hytwin/pipeline.hpp"

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <json.hpp>
#include <sstream>

#include "hytwin/cosim.hpp"
#include "hytwin/error.hpp"
#include "hytwin/model_codec.hpp"
#include "hytwin/svg.hpp"

namespace hytwin::pipeline {

namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;

std::string output_path(const PipelineConfig& c, const std::string& name, bool primary = true) {
    const fs::path path = primary && !c.output.empty() ? fs::path(c.output) : fs::path(c.out_dir) / name;
    if (path.has_parent_path()) {
        std::error_code ec;
        fs::create_directories(path.parent_path(), ec);
        if (ec) {
            throw Error("FILE_WRITE", "cannot create directory " + path.parent_path().string() + ": " + ec.message());
        }
    }
    return path.string();
}

void require(const std::string& value, const char* flag) {
    if (value.empty()) {
        throw Error("CONFIG_INVALID", std::string("missing --") + flag);
    }
}

double parse_number(std::string_view text, const std::string& what) {
    double v = 0.0;
    const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc{} || end != text.data() + text.size()) {
        throw Error("CONFIG_INVALID", what + ": '" + std::string(text) + "' is not a number");
    }
    return v;
}

json metrics_json(const hybrid::Metrics& m) {
    json j = {{"rmse", m.rmse}, {"mae", m.mae}, {"oscillation_index", m.oscillation_index}};
    j["rise_time_ref"] = m.rise_time_ref ? json(*m.rise_time_ref) : json(nullptr);
    j["rise_time_cand"] = m.rise_time_cand ? json(*m.rise_time_cand) : json(nullptr);
    return j;
}

std::optional<hybrid::StepEvent> step_event(const PipelineConfig& c) {
    if (!c.step.empty()) {
        if (c.step == "none") {
            return std::nullopt;
        }
        return parse_step_event(c.step);
    }
    return hybrid::step_event_from_schedule(plant::parse_schedule(c.scenario.temperature_setpoint));
}

/// Comparison with rise times when both series cross the step, without
/// them otherwise.
hybrid::RunComparison compare(const TimeSeriesFrame& reference, const TimeSeriesFrame& candidate,
                              const std::string& label, const std::optional<hybrid::StepEvent>& event,
                              std::ostream& log) {
    try {
        return hybrid::compare_frames(reference, candidate, label, event);
    } catch (const Error& e) {
        if (e.code() != "NEVER_CROSSES" || !event) {
            throw;
        }
        log << "note: rise time unavailable (" << e.detail() << ")\n";
        return hybrid::compare_frames(reference, candidate, label, std::nullopt);
    }
}

std::pair<std::string, std::string> named_path(const std::string& spec) {
    if (const auto eq = spec.find('='); eq != std::string::npos) {
        return {spec.substr(0, eq), spec.substr(eq + 1)};
    }
    return {fs::path(spec).stem().string(), spec};
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

void write_loss_csv(const std::string& path, const std::vector<double>& loss) {
    std::vector<double> epochs(loss.size());
    for (std::size_t i = 0; i < loss.size(); ++i) {
        epochs[i] = static_cast<double>(i + 1);
    }
    write_csv_file(path, TimeSeriesFrame({"loss"}, std::move(epochs), loss));
}

surrogate::TrainConfig train_config(const PipelineConfig& c, std::ostream& log) {
    surrogate::TrainConfig t;
    t.epochs = c.epochs;
    t.batch_size = c.batch_size;
    t.seed = c.seed;
    t.optimizer = {c.lr, c.rho, c.eps};
    t.clip_norm = c.clip_norm > 0.0 ? std::optional<double>(c.clip_norm) : std::nullopt;
    t.lr_decay = c.lr_decay;
    const std::size_t every = std::max<std::size_t>(1, c.epochs / 10);
    t.on_epoch = [&log, every, total = c.epochs](std::size_t epoch, double loss) {
        if (epoch % every == 0 || epoch == 1 || epoch == total) {
            log << "epoch " << epoch << "/" << total << " loss " << fmt(loss) << "\n";
        }
    };
    return t;
}

hybrid::TerminalBinding make_binding(const PipelineConfig& c, const plant::Plant& plant,
                                     const surrogate::Seq2SeqModel& model) {
    if (c.remote.empty()) {
        return hybrid::bind_surrogate(plant, model);
    }
    const auto colon = c.remote.rfind(':');
    if (colon == std::string::npos) {
        throw Error("CONFIG_INVALID", "--remote must be host:port");
    }
    const double port = parse_number(std::string_view(c.remote).substr(colon + 1), "--remote port");
    if (port < 1 || port > 65535 || port != std::floor(port)) {
        throw Error("CONFIG_INVALID", "--remote port out of range");
    }
    return cosim::bind_remote(plant, model, c.remote.substr(0, colon), static_cast<std::uint16_t>(port));
}

void run_collect(const PipelineConfig& c, std::ostream& log) {
    const plant::Plant plant(make_topology(c.scenario));
    const auto scenario = make_scenario(c.scenario);
    const auto frame = plant::run_scenario(plant, scenario, plant.initial_state(scenario, c.scenario.initial_temperature));
    const auto path = output_path(c, "scenario.csv");
    write_csv_file(path, frame);
    log << "wrote " << path << " (" << frame.rows() << " rows, " << frame.cols() << " tags)\n";
}

void run_jitter(const PipelineConfig& c, std::ostream& log) {
    require(c.input, "input");
    const auto frame = jitter_timestamps(read_csv_file(c.input), c.jitter_lo, c.jitter_hi, c.seed);
    const auto path = output_path(c, "jittered.csv");
    write_csv_file(path, frame);
    log << "wrote " << path << " (" << frame.rows() << " rows)\n";
}

void run_resample(const PipelineConfig& c, std::ostream& log) {
    require(c.input, "input");
    const auto input = read_csv_file(c.input);
    const auto frame = resample_fixed_grid(input, grid_within(input, c.grid_dt));
    const auto path = output_path(c, "resampled.csv");
    write_csv_file(path, frame);
    log << "wrote " << path << " (" << frame.rows() << " rows)\n";
}

void run_train(const PipelineConfig& c, std::ostream& log) {
    require(c.input, "input");
    const auto frame = read_csv_file(c.input);
    auto spec = surrogate::default_window_spec();
    if (!c.features.empty()) {
        spec.features = c.features;
    }
    spec.label = c.label;
    spec.enc_len = c.enc_len;
    spec.dec_len = c.dec_len;
    spec.stride = c.stride;
    spec.label_feedback = c.label_feedback;
    const auto dataset = surrogate::make_windows(frame, spec, surrogate::fit_normalizer(frame, spec.features),
                                                 surrogate::fit_normalizer(frame, {spec.label}));
    log << "training on " << dataset.windows.size() << " windows\n";
    const auto result = surrogate::train(dataset, c.hidden, train_config(c, log));
    const auto model_path = output_path(c, "model.json");
    surrogate::save_model_file(model_path, result.model);
    const auto loss_path = output_path(c, "loss.csv", false);
    write_loss_csv(loss_path, result.report.epoch_loss);
    log << "wrote " << model_path << " and " << loss_path << "\n";
}

void run_openloop(const PipelineConfig& c, std::ostream& log) {
    require(c.input, "input");
    require(c.model, "model");
    const plant::Plant plant(make_topology(c.scenario));
    const auto model = surrogate::load_model_file(c.model);
    const auto recorded = read_csv_file(c.input);
    const auto binding = make_binding(c, plant, model);
    auto cmp = hybrid::run_open_loop(binding, recorded, std::nullopt);
    cmp = compare(cmp.reference, cmp.candidate, binding.label, step_event(c), log);

    const auto truth = cmp.reference.column(binding.label);
    const auto pred = cmp.candidate.column(binding.label);
    std::vector<double> values;
    values.reserve(2 * truth.size());
    for (std::size_t k = 0; k < truth.size(); ++k) {
        values.push_back(truth[k]);
        values.push_back(pred[k]);
    }
    const TimeSeriesFrame out({binding.label, binding.label + ".pred"},
                              std::vector<double>(recorded.times().begin(), recorded.times().end()), std::move(values));
    const auto csv_path = output_path(c, "openloop.csv");
    write_csv_file(csv_path, out);
    const auto metrics_path = output_path(c, "openloop_metrics.json", false);
    json j = metrics_json(cmp.metrics);
    j["label"] = binding.label;
    write_text_file(metrics_path, j.dump(2) + "\n");
    log << "open-loop rmse " << fmt(cmp.metrics.rmse) << " mae " << fmt(cmp.metrics.mae) << "\n";
    log << "wrote " << csv_path << " and " << metrics_path << "\n";
}

void run_hybrid_stage(const PipelineConfig& c, std::ostream& log) {
    require(c.model, "model");
    const plant::Plant plant(make_topology(c.scenario));
    const auto model = surrogate::load_model_file(c.model);
    const auto binding = make_binding(c, plant, model);

    hybrid::HybridConfig hc;
    hc.mode = c.mode;
    hc.alpha = c.alpha;
    if (hc.mode == hybrid::Mode::Track && !hc.alpha) {
        throw Error("TRACK_WITHOUT_GAIN", "track mode needs --alpha");
    }
    hc.cadence = c.cadence;
    hc.scenario = make_scenario(c.scenario);
    const auto result = hybrid::run_hybrid(plant, binding, hc, plant.initial_state(hc.scenario, c.scenario.initial_temperature));
    const auto cmp = compare(result.reference, result.hybrid, binding.label, step_event(c), log);

    const auto ref_path = output_path(c, "reference.csv", false);
    const auto hyb_path = output_path(c, "hybrid.csv");
    const auto metrics_path = output_path(c, "hybrid_metrics.json", false);
    write_csv_file(ref_path, result.reference);
    write_csv_file(hyb_path, result.hybrid);
    json j = metrics_json(cmp.metrics);
    j["label"] = binding.label;
    j["mode"] = hybrid::mode_name(c.mode);
    j["alpha"] = c.alpha ? json(*c.alpha) : json(nullptr);
    j["cadence"] = c.cadence;
    j["predictions"] = result.predictions;
    write_text_file(metrics_path, j.dump(2) + "\n");
    log << hybrid::mode_name(c.mode) << " run: " << result.predictions << " predictions, rmse vs physics "
        << fmt(cmp.metrics.rmse) << "\n";
    log << "wrote " << ref_path << ", " << hyb_path << " and " << metrics_path << "\n";
}

void run_evaluate(const PipelineConfig& c, std::ostream& log) {
    require(c.reference, "reference");
    if (c.candidates.empty()) {
        throw Error("CONFIG_INVALID", "missing --candidate");
    }
    const auto reference = read_csv_file(c.reference);
    const auto event = c.step.empty() ? std::nullopt : step_event(c);
    std::vector<std::pair<std::string, hybrid::RunComparison>> runs;
    for (const auto& spec : c.candidates) {
        auto [name, path] = named_path(spec);
        runs.emplace_back(name, compare(reference, read_csv_file(path), c.label, event, log));
    }

    auto opt = [](const std::optional<double>& v) { return v ? fmt(*v) : std::string("-"); };
    std::ostringstream table;
    char line[256];
    std::snprintf(line, sizeof line, "%-20s %12s %12s %12s %12s %12s\n", "run", "rmse", "mae", "rise_ref", "rise_cand",
                  "oscillation");
    table << "reference: " << c.reference << " (" << c.label << ")\n" << line;
    json j = {{"reference", c.reference}, {"label", c.label}, {"runs", json::array()}};
    for (const auto& [name, cmp] : runs) {
        const auto& m = cmp.metrics;
        std::snprintf(line, sizeof line, "%-20s %12s %12s %12s %12s %12s\n", name.c_str(), fmt(m.rmse).c_str(),
                      fmt(m.mae).c_str(), opt(m.rise_time_ref).c_str(), opt(m.rise_time_cand).c_str(),
                      fmt(m.oscillation_index).c_str());
        table << line;
        json r = metrics_json(m);
        r["name"] = name;
        j["runs"].push_back(r);
    }
    j["rankings"] = json::array();
    for (std::size_t i = 1; i < runs.size(); ++i) {
        const auto rank = hybrid::compare_runs(runs[0].second, runs[i].second);
        const std::string verdict = rank.preferred == hybrid::Preference::Tie     ? "tie"
                                    : rank.preferred == hybrid::Preference::First ? runs[0].first
                                                                                  : runs[i].first;
        table << runs[0].first << " vs " << runs[i].first << ": "
              << (verdict == "tie" ? std::string("tie") : verdict + " preferred") << " (delta rmse "
              << fmt(rank.delta_rmse) << ")\n";
        j["rankings"].push_back({{"first", runs[0].first},
                                 {"second", runs[i].first},
                                 {"preferred", verdict},
                                 {"delta_rmse", rank.delta_rmse},
                                 {"delta_mae", rank.delta_mae},
                                 {"delta_oscillation", rank.delta_oscillation}});
    }
    const auto txt_path = output_path(c, "evaluation.txt");
    const auto json_path = output_path(c, "evaluation.json", false);
    write_text_file(txt_path, table.str());
    write_text_file(json_path, j.dump(2) + "\n");
    log << table.str() << "wrote " << txt_path << " and " << json_path << "\n";
}

void run_serve(const PipelineConfig& c, std::ostream& log) {
    require(c.model, "model");
    const std::uint16_t port = c.port ? *c.port : cosim::port_from_env();
    cosim::ModelServer server(surrogate::load_model_file(c.model), port);
    log << "serving " << c.model << " on 127.0.0.1:" << server.port() << std::endl;
    for (std::size_t s = 0; s < c.sessions; ++s) {
        const auto answered = server.serve_one();
        log << "session " << s + 1 << " closed after " << answered << " predictions" << std::endl;
    }
}

void run_plot(const PipelineConfig& c, std::ostream& log) {
    if (c.inputs.empty()) {
        throw Error("CONFIG_INVALID", "missing --input");
    }
    const std::vector<std::string> tags = c.tags.empty() ? std::vector<std::string>{c.label} : c.tags;
    std::vector<PlotSeries> series;
    for (const auto& spec : c.inputs) {
        const auto [name, path] = named_path(spec);
        const auto frame = read_csv_file(path);
        for (const auto& tag : tags) {
            if (!frame.find(tag)) {
                continue;
            }
            series.push_back({name + ":" + tag, {frame.times().begin(), frame.times().end()}, frame.column(tag)});
        }
    }
    PlotOptions options;
    options.title = c.title;
    options.y_label = tags.size() == 1 ? tags.front() : "";
    const auto path = output_path(c, "plot.svg");
    write_text_file(path, emit_plot_svg(series, options));
    log << "wrote " << path << " (" << series.size() << " series)\n";
}

}  // namespace

const std::vector<std::string>& stage_names() {
    static const std::vector<std::string> names = {"collect",  "jitter",   "resample", "train", "openloop",
                                                   "hybrid",   "evaluate", "serve",    "plot"};
    return names;
}

Stage parse_stage(std::string_view name) {
    const auto& names = stage_names();
    for (std::size_t i = 0; i < names.size(); ++i) {
        if (names[i] == name) {
            return static_cast<Stage>(i);
        }
    }
    throw Error("CONFIG_INVALID", "unknown stage '" + std::string(name) + "'");
}

plant::ScenarioSchedule make_scenario(const ScenarioOptions& o) {
    plant::ScenarioSchedule s;
    s.duration = o.duration;
    s.dt = o.dt;
    s.setpoints["temperature"] = plant::parse_schedule(o.temperature_setpoint);
    s.setpoints["level"] = plant::parse_schedule(o.level_setpoint);
    if (!o.valve.empty()) {
        s.overrides["V106.u"] = plant::parse_schedule(o.valve);
    }
    if (!o.supply.empty()) {
        s.overrides["SRC.Tin"] = plant::parse_schedule(o.supply);
    }
    return s;
}

plant::PlantTopology make_topology(const ScenarioOptions& o) {
    auto topology = plant::build_default_plant();
    if (o.ua_scale != 1.0) {
        for (auto& component : topology.components) {
            if (auto* tank = std::get_if<plant::TankParams>(&component.params)) {
                tank->ua *= o.ua_scale;
            }
        }
    }
    return topology;
}

hybrid::StepEvent parse_step_event(std::string_view text) {
    std::vector<double> parts;
    std::size_t start = 0;
    while (true) {
        const auto colon = text.find(':', start);
        parts.push_back(parse_number(text.substr(start, colon - start), "step event"));
        if (colon == std::string_view::npos) {
            break;
        }
        start = colon + 1;
    }
    if (parts.size() != 3) {
        throw Error("CONFIG_INVALID", "step event must be t:y0:y1");
    }
    return {parts[0], parts[1], parts[2]};
}

void run_stage(const PipelineConfig& config, std::ostream& log) {
    switch (config.stage) {
        case Stage::Collect: return run_collect(config, log);
        case Stage::Jitter: return run_jitter(config, log);
        case Stage::Resample: return run_resample(config, log);
        case Stage::Train: return run_train(config, log);
        case Stage::OpenLoop: return run_openloop(config, log);
        case Stage::Hybrid: return run_hybrid_stage(config, log);
        case Stage::Evaluate: return run_evaluate(config, log);
        case Stage::Serve: return run_serve(config, log);
        case Stage::Plot: return run_plot(config, log);
    }
}

}  // namespace hytwin::pipeline
