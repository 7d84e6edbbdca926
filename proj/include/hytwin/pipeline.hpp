#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "hytwin/hybrid.hpp"
#include "hytwin/plant.hpp"
#include "hytwin/training.hpp"

namespace hytwin::pipeline {

enum class Stage { Collect, Jitter, Resample, Train, OpenLoop, Hybrid, Evaluate, Serve, Plot };

[[nodiscard]] const std::vector<std::string>& stage_names();
/// Throws CONFIG_INVALID.
[[nodiscard]] Stage parse_stage(std::string_view name);

struct ScenarioOptions {
    double duration = 3000.0;
    double dt = 1.0;
    std::string temperature_setpoint = "0:40,1000:50";
    std::string level_setpoint = "0:0.25";
    std::string valve = "0:0.25,1500:0.22,2300:0.27";  // empty: no override
    std::string supply = "0:15,1800:17,2600:14";       // empty: no override
    double ua_scale = 1.0;
    double initial_temperature = 20.0;
};

struct PipelineConfig {
    Stage stage = Stage::Collect;
    std::string out_dir = ".";
    std::uint64_t seed = 42;
    std::string output;  // overrides the stage's default file name

    ScenarioOptions scenario;

    // jitter / resample
    std::string input;
    double jitter_lo = 0.5;
    double jitter_hi = 1.0;
    double grid_dt = 1.0;

    // train
    std::vector<std::string> features;  // empty: default feature set
    std::string label = "T100.T";
    surrogate::Index hidden = 32;
    surrogate::Index enc_len = 30;
    surrogate::Index dec_len = 10;
    std::size_t stride = 1;
    bool label_feedback = true;
    std::size_t epochs = 50;
    std::size_t batch_size = 32;
    double lr = 1e-3;
    double rho = 0.9;
    double eps = 1e-7;
    double clip_norm = 5.0;  // <= 0 disables clipping
    double lr_decay = 1.0;

    // openloop / hybrid / serve
    std::string model;
    hybrid::Mode mode = hybrid::Mode::Track;
    std::optional<double> alpha;
    std::size_t cadence = 1;
    std::string remote;  // host:port of a cosim server
    std::optional<std::uint16_t> port;
    std::size_t sessions = 1;
    std::string step;  // "t:y0:y1"; empty derives it from the temperature set point

    // evaluate / plot
    std::string reference;
    std::vector<std::string> candidates;  // name=path or path
    std::vector<std::string> inputs;      // plot inputs
    std::vector<std::string> tags;        // plot columns
    std::string title;
};

[[nodiscard]] plant::ScenarioSchedule make_scenario(const ScenarioOptions& options);
[[nodiscard]] plant::PlantTopology make_topology(const ScenarioOptions& options);

/// Parses "t:y0:y1". Throws CONFIG_INVALID.
[[nodiscard]] hybrid::StepEvent parse_step_event(std::string_view text);

/// Runs one stage, writing its artifacts under out_dir and progress lines to
/// `log`. Throws hytwin::Error.
void run_stage(const PipelineConfig& config, std::ostream& log);

}  // namespace hytwin::pipeline
