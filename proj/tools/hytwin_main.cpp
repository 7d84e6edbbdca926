#include <CLI11.hpp>
#include <fstream>
#include <iostream>

#include "hytwin/error.hpp"
#include "hytwin/historian.hpp"
#include "hytwin/pipeline.hpp"

namespace {

using hytwin::pipeline::PipelineConfig;
using hytwin::pipeline::Stage;

/// Expands `--config FILE` into `--key=value` arguments placed right after
/// the subcommand, so flags given on the command line still win.
std::vector<std::string> expand_config(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    std::string config_path;
    for (std::size_t i = 0; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) {
            config_path = args[i + 1];
            args.erase(args.begin() + static_cast<std::ptrdiff_t>(i), args.begin() + static_cast<std::ptrdiff_t>(i) + 2);
            break;
        }
        if (args[i].rfind("--config=", 0) == 0) {
            config_path = args[i].substr(9);
            args.erase(args.begin() + static_cast<std::ptrdiff_t>(i));
            break;
        }
    }
    if (config_path.empty()) {
        return args;
    }
    const std::string text = hytwin::read_text_file(config_path);
    std::vector<std::string> injected;
    std::size_t line_no = 0;
    std::size_t start = 0;
    while (start <= text.size()) {
        auto end = text.find('\n', start);
        if (end == std::string::npos) {
            end = text.size();
        }
        std::string line = text.substr(start, end - start);
        start = end + 1;
        ++line_no;
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos || line[first] == '#') {
            continue;
        }
        line = line.substr(first, line.find_last_not_of(" \t\r") + 1 - first);
        const auto eq = line.find('=');
        if (eq == std::string::npos || eq == 0) {
            throw hytwin::Error("CONFIG_INVALID",
                                config_path + ":" + std::to_string(line_no) + ": expected key=value");
        }
        auto key = line.substr(0, eq);
        key.erase(key.find_last_not_of(" \t") + 1);
        auto value = line.substr(eq + 1);
        value.erase(0, value.find_first_not_of(" \t"));
        injected.push_back("--" + key + "=" + value);
    }
    const auto& stages = hytwin::pipeline::stage_names();
    auto pos = std::find_if(args.begin(), args.end(),
                            [&](const std::string& a) { return std::find(stages.begin(), stages.end(), a) != stages.end(); });
    if (pos == args.end()) {
        throw hytwin::Error("CONFIG_INVALID", "--config needs a subcommand");
    }
    args.insert(pos + 1, injected.begin(), injected.end());
    return args;
}

void add_scenario_options(CLI::App& app, PipelineConfig& c) {
    auto& s = c.scenario;
    app.add_option("--duration", s.duration, "scenario length [s]")->capture_default_str();
    app.add_option("--dt", s.dt, "fixed step [s]")->capture_default_str();
    app.add_option("--temp-sp", s.temperature_setpoint, "temperature set point schedule t:value,...")
        ->capture_default_str();
    app.add_option("--level-sp", s.level_setpoint, "level set point schedule")->capture_default_str();
    app.add_option("--valve", s.valve, "V106.u override schedule (empty: none)")->capture_default_str();
    app.add_option("--supply", s.supply, "SRC.Tin override schedule (empty: none)")->capture_default_str();
    app.add_option("--ua-scale", s.ua_scale, "multiplier on the tank heat-loss coefficient")->capture_default_str();
    app.add_option("--t-init", s.initial_temperature, "initial tank temperature [degC]")->capture_default_str();
}

void add_surrogate_options(CLI::App& app, PipelineConfig& c) {
    app.add_option("--features", c.features, "feature tags (comma separated)")
        ->delimiter(',')
        ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
    app.add_option("--label", c.label, "label tag")->capture_default_str();
    app.add_option("--hidden", c.hidden, "LSTM hidden size")->capture_default_str();
    app.add_option("--enc-len", c.enc_len, "encoder length")->capture_default_str();
    app.add_option("--dec-len", c.dec_len, "decoder length")->capture_default_str();
    app.add_option("--stride", c.stride, "window stride")->capture_default_str();
    app.add_option("--label-feedback", c.label_feedback, "feed the measured label to the encoder")
        ->capture_default_str();
    app.add_option("--epochs", c.epochs)->capture_default_str();
    app.add_option("--batch", c.batch_size, "mini-batch size")->capture_default_str();
    app.add_option("--lr", c.lr, "RMSprop step size")->capture_default_str();
    app.add_option("--rho", c.rho, "RMSprop decay")->capture_default_str();
    app.add_option("--eps", c.eps, "RMSprop epsilon")->capture_default_str();
    app.add_option("--clip", c.clip_norm, "global gradient-norm clip (0 disables)")->capture_default_str();
    app.add_option("--lr-decay", c.lr_decay, "learning-rate multiplier per epoch")->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
    PipelineConfig config;
    CLI::App app{"Hybrid digital twin pipeline: collect, train, hybridize and evaluate.", "hytwin"};
    app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    app.require_subcommand(1);
    app.fallthrough();
    std::string config_file;
    app.set_config();
    app.add_option("--config", config_file, "key=value file; command-line flags override it");
    app.add_option("--seed", config.seed, "seed for jitter, initialization and shuffling")->capture_default_str();
    app.add_option("--out", config.out_dir, "output directory")->capture_default_str();

    std::string mode = "track";

    auto* collect = app.add_subcommand("collect", "run the physics plant and record every tag");
    add_scenario_options(*collect, config);

    auto* jitter = app.add_subcommand("jitter", "resample a recording at irregular instants");
    jitter->add_option("--input", config.input, "fixed-grid CSV")->required();
    jitter->add_option("--lo", config.jitter_lo, "smallest gap [s]")->capture_default_str();
    jitter->add_option("--hi", config.jitter_hi, "largest gap [s]")->capture_default_str();

    auto* resample = app.add_subcommand("resample", "interpolate a recording onto a fixed grid");
    resample->add_option("--input", config.input, "CSV")->required();
    resample->add_option("--grid-dt", config.grid_dt, "grid step [s]")->capture_default_str();

    auto* train = app.add_subcommand("train", "fit the sequence-to-sequence surrogate");
    train->add_option("--input", config.input, "fixed-grid training CSV")->required();
    add_surrogate_options(*train, config);

    auto* openloop = app.add_subcommand("openloop", "rolling surrogate prediction over a recording");
    openloop->add_option("--input", config.input, "recorded CSV")->required();
    openloop->add_option("--model", config.model, "model file")->required();
    openloop->add_option("--remote", config.remote, "host:port of a model server");
    openloop->add_option("--temp-sp", config.scenario.temperature_setpoint, "schedule the step event is taken from")
        ->capture_default_str();
    openloop->add_option("--step", config.step, "step event t:y0:y1 for rise times, or none");

    auto* hybrid = app.add_subcommand("hybrid", "couple the surrogate to the physics plant");
    add_scenario_options(*hybrid, config);
    hybrid->add_option("--model", config.model, "model file")->required();
    hybrid->add_option("--mode", mode, "open_loop, replace or track")->capture_default_str();
    hybrid->add_option("--alpha", config.alpha, "tracking gain in [0, 1]");
    hybrid->add_option("--cadence", config.cadence, "steps between predictions")->capture_default_str();
    hybrid->add_option("--remote", config.remote, "host:port of a model server");
    hybrid->add_option("--step", config.step, "step event t:y0:y1 for rise times, or none");

    auto* evaluate = app.add_subcommand("evaluate", "compare runs against a reference recording");
    evaluate->add_option("--reference", config.reference, "reference CSV")->required();
    evaluate->add_option("--candidate", config.candidates, "candidate CSV, optionally name=path")
        ->required()
        ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
    evaluate->add_option("--label", config.label, "compared tag")->capture_default_str();
    evaluate->add_option("--step", config.step, "step event t:y0:y1 for rise times");

    auto* serve = app.add_subcommand("serve", "host a model over the co-simulation protocol");
    serve->add_option("--model", config.model, "model file")->required();
    serve->add_option("--port", config.port, "TCP port (default: HYTWIN_PORT or 7878; 0 picks one)");
    serve->add_option("--sessions", config.sessions, "sessions to serve before exiting")->capture_default_str();

    auto* plot = app.add_subcommand("plot", "SVG line chart of recorded tags");
    plot->add_option("--input", config.inputs, "CSV, optionally name=path")
        ->required()
        ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
    plot->add_option("--tag", config.tags, "tags to draw (default: the label)")
        ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
    plot->add_option("--label", config.label, "default tag")->capture_default_str();
    plot->add_option("--title", config.title);

    for (auto* sub : app.get_subcommands({})) {
        sub->add_option("--output", config.output, "override the primary output path");
    }

    try {
        auto args = expand_config(argc, argv);
        std::reverse(args.begin(), args.end());
        app.parse(args);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const hytwin::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }

    try {
        config.stage = hytwin::pipeline::parse_stage(app.get_subcommands().front()->get_name());
        config.mode = hytwin::hybrid::parse_mode(mode);
        hytwin::pipeline::run_stage(config, std::cout);
    } catch (const hytwin::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: INTERNAL: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
