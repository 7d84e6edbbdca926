#include "hytwin/plant.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <set>

#include "hytwin/error.hpp"

namespace hytwin::plant {

namespace {

bool positive(double v) { return std::isfinite(v) && v > 0.0; }

bool is_command(Signal s) {
    return s == Signal::HeaterCommand || s == Signal::PumpCommand || s == Signal::ValveCommand;
}

// Tag -> signal map implied by the component ids. Only components whose kind
// occurs exactly once are addressable.
std::map<std::string, Signal, std::less<>> implied_signals(const PlantTopology& topology) {
    std::map<ComponentKind, int> counts;
    for (const auto& c : topology.components) {
        ++counts[c.kind()];
    }
    std::map<std::string, Signal, std::less<>> out;
    for (const auto& c : topology.components) {
        if (counts[c.kind()] != 1) {
            continue;
        }
        switch (c.kind()) {
            case ComponentKind::Source:
                out[c.id + ".Tin"] = Signal::SupplyTemperature;
                break;
            case ComponentKind::Pump:
                out[c.id + ".u"] = Signal::PumpCommand;
                out[c.id + ".mdot"] = Signal::PumpFlow;
                break;
            case ComponentKind::Tank:
                out[c.id + ".T"] = Signal::TankTemperature;
                out[c.id + ".level"] = Signal::TankLevel;
                break;
            case ComponentKind::Heater:
                out[c.id + ".u"] = Signal::HeaterCommand;
                out[c.id + ".Q"] = Signal::HeaterPower;
                break;
            case ComponentKind::Valve:
                out[c.id + ".u"] = Signal::ValveCommand;
                out[c.id + ".mdot"] = Signal::ValveFlow;
                break;
            case ComponentKind::Sink:
                break;
        }
    }
    return out;
}

void check_params(const ComponentSpec& c, std::vector<Violation>& out) {
    auto bad = [&](const char* field) {
        out.push_back({"NONPOSITIVE_PARAM", c.id + "." + field + " must be strictly positive"});
    };
    auto negative = [&](const char* field) {
        out.push_back({"NONPOSITIVE_PARAM", c.id + "." + field + " must be non-negative"});
    };
    std::visit(
        [&](const auto& p) {
            using P = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<P, SourceParams>) {
                if (!positive(p.supply_temperature)) bad("supply_temperature");
            } else if constexpr (std::is_same_v<P, PumpParams>) {
                if (!positive(p.max_flow)) bad("max_flow");
            } else if constexpr (std::is_same_v<P, TankParams>) {
                if (!positive(p.area)) bad("area");
                if (!positive(p.max_level)) bad("max_level");
                if (!(p.ua >= 0.0) || !std::isfinite(p.ua)) negative("ua");  // 0: adiabatic tank
            } else if constexpr (std::is_same_v<P, HeaterParams>) {
                if (!positive(p.max_power)) bad("max_power");
                if (!positive(p.time_constant)) bad("time_constant");
            } else if constexpr (std::is_same_v<P, ValveParams>) {
                if (!positive(p.max_flow)) bad("max_flow");
            }
        },
        c.params);
}

}  // namespace

ComponentSpec* PlantTopology::find(std::string_view id) {
    auto it = std::find_if(components.begin(), components.end(), [&](const auto& c) { return c.id == id; });
    return it == components.end() ? nullptr : &*it;
}

const ComponentSpec* PlantTopology::find(std::string_view id) const {
    auto it = std::find_if(components.begin(), components.end(), [&](const auto& c) { return c.id == id; });
    return it == components.end() ? nullptr : &*it;
}

PlantTopology build_default_plant() {
    PlantTopology t;
    t.components = {
        {"SRC", SourceParams{15.0}},
        {"P100", PumpParams{0.20}},
        {"T100", TankParams{0.2, 0.5, 8.0}},
        {"E100", HeaterParams{9000.0, 5.0, "T100"}},
        {"V106", ValveParams{0.20}},
        {"SNK", SinkParams{}},
    };
    t.connections = {{"SRC", "P100"}, {"P100", "T100"}, {"T100", "V106"}, {"V106", "SNK"}};
    t.loops = {
        {"temperature", "T100.T", "E100.u", 0.1, 0.005, 0.0, 1.0},
        {"level", "T100.level", "P100.u", 2.0, 0.05, 0.0, 1.0},
    };
    t.tags = {"T100.T", "T100.level", "E100.u", "E100.Q", "P100.u", "P100.mdot", "V106.u", "V106.mdot", "SRC.Tin"};
    return t;
}

std::vector<Violation> validate_topology(const PlantTopology& topology) {
    std::vector<Violation> out;

    std::set<std::string> ids;
    for (const auto& c : topology.components) {
        if (!ids.insert(c.id).second) {
            out.push_back({"DUPLICATE_COMPONENT", c.id});
        }
        check_params(c, out);
    }

    int heaters = 0;
    for (const auto& c : topology.components) {
        if (const auto* h = std::get_if<HeaterParams>(&c.params)) {
            ++heaters;
            const auto* host = topology.find(h->tank);
            if (host == nullptr || host->kind() != ComponentKind::Tank) {
                out.push_back({"HEATER_HOST", c.id + " is not placed in an existing tank"});
            }
        }
    }
    if (heaters != 1) {
        out.push_back({"HEATER_COUNT", "expected exactly one heater, found " + std::to_string(heaters)});
    }

    bool dangling = false;
    for (const auto& conn : topology.connections) {
        for (const auto& end : {conn.from, conn.to}) {
            if (!ids.contains(end)) {
                out.push_back({"DANGLING_CONNECTION", conn.from + " -> " + conn.to + " references " + end});
                dangling = true;
            }
        }
    }

    // Cycle detection over the connection graph (DFS colouring).
    std::map<std::string, std::vector<std::string>> adjacency;
    for (const auto& conn : topology.connections) {
        adjacency[conn.from].push_back(conn.to);
    }
    std::map<std::string, int> colour;
    bool cyclic = false;
    std::function<void(const std::string&)> visit = [&](const std::string& node) {
        colour[node] = 1;
        for (const auto& next : adjacency[node]) {
            if (colour[next] == 1) {
                cyclic = true;
            } else if (colour[next] == 0) {
                visit(next);
            }
        }
        colour[node] = 2;
    };
    for (const auto& [node, _] : adjacency) {
        if (colour[node] == 0) {
            visit(node);
        }
    }
    if (cyclic) {
        out.push_back({"CYCLIC_FLOW", "connections contain a cycle"});
    }

    // The simulator handles the single path Source -> Pump -> Tank -> Valve -> Sink.
    if (!dangling && !cyclic) {
        const std::vector<ComponentKind> expected = {ComponentKind::Source, ComponentKind::Pump, ComponentKind::Tank,
                                                     ComponentKind::Valve, ComponentKind::Sink};
        bool ok = topology.connections.size() == expected.size() - 1;
        std::string node;
        for (const auto& c : topology.components) {
            if (c.kind() == ComponentKind::Source) {
                node = c.id;
            }
        }
        for (std::size_t i = 0; ok && i < expected.size(); ++i) {
            const auto* c = topology.find(node);
            if (c == nullptr || c->kind() != expected[i]) {
                ok = false;
                break;
            }
            if (i + 1 < expected.size()) {
                const auto& next = adjacency[node];
                if (next.size() != 1) {
                    ok = false;
                    break;
                }
                node = next.front();
            }
        }
        if (!ok) {
            out.push_back({"PATH_SHAPE", "flow path must be Source -> Pump -> Tank -> Valve -> Sink"});
        }
    }

    const auto signals = implied_signals(topology);
    std::set<std::string> tags;
    for (const auto& tag : topology.tags) {
        if (!tags.insert(tag).second) {
            out.push_back({"DUPLICATE_TAG", tag});
        }
        if (!valid_tag(tag)) {
            out.push_back({"INVALID_TAG", tag});
        } else if (!signals.contains(tag)) {
            out.push_back({"UNKNOWN_TAG", tag + " does not name a component signal"});
        }
    }

    std::set<std::string> actuated;
    for (const auto& loop : topology.loops) {
        auto m = signals.find(loop.measured);
        if (m == signals.end()) {
            out.push_back({"UNKNOWN_TAG", loop.name + " measures " + loop.measured});
        }
        auto a = signals.find(loop.actuated);
        if (a == signals.end()) {
            out.push_back({"UNKNOWN_TAG", loop.name + " actuates " + loop.actuated});
        } else if (!is_command(a->second)) {
            out.push_back({"LOOP_ACTUATOR", loop.name + " must actuate a command tag, not " + loop.actuated});
        } else if (!actuated.insert(loop.actuated).second) {
            out.push_back({"LOOP_ACTUATOR", loop.actuated + " is driven by more than one loop"});
        }
        if (!(loop.hi > loop.lo)) {
            out.push_back({"LOOP_CLAMP", loop.name + " needs hi > lo"});
        }
        if (!(loop.kp >= 0.0) || !(loop.ki >= 0.0)) {
            out.push_back({"LOOP_GAIN", loop.name + " needs Kp, Ki >= 0"});
        }
    }
    return out;
}

PiOutput pi_update(const PiLoopSpec& loop, double integral, double setpoint, double measurement, double dt) {
    const double error = setpoint - measurement;
    const double candidate = integral + error * dt;
    const double raw = loop.kp * error + loop.ki * candidate;
    if (raw < loop.lo) {
        return {loop.lo, integral};
    }
    if (raw > loop.hi) {
        return {loop.hi, integral};
    }
    return {raw, candidate};
}

double value_at(const Schedule& schedule, double t) {
    if (schedule.empty()) {
        throw Error("SCENARIO_INVALID", "empty schedule");
    }
    auto it = std::upper_bound(schedule.begin(), schedule.end(), t,
                               [](double time, const Segment& s) { return time < s.start; });
    if (it == schedule.begin()) {
        return schedule.front().value;
    }
    return std::prev(it)->value;
}

Schedule parse_schedule(std::string_view text) {
    Schedule out;
    std::size_t start = 0;
    while (start <= text.size()) {
        auto comma = text.find(',', start);
        auto item = text.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start);
        auto colon = item.find(':');
        try {
            if (colon == std::string_view::npos) {
                if (!out.empty()) {
                    throw std::invalid_argument("");
                }
                out.push_back({0.0, std::stod(std::string(item))});
            } else {
                out.push_back({std::stod(std::string(item.substr(0, colon))),
                               std::stod(std::string(item.substr(colon + 1)))});
            }
        } catch (const std::exception&) {
            throw Error("SCENARIO_INVALID", "cannot parse schedule item '" + std::string(item) + "'");
        }
        if (comma == std::string_view::npos) {
            break;
        }
        start = comma + 1;
    }
    return out;
}

std::size_t ScenarioSchedule::step_count() const {
    if (duration <= 0.0) {
        return 0;
    }
    return static_cast<std::size_t>(std::ceil(duration / dt - 1e-9));
}

ScenarioSchedule default_scenario() {
    ScenarioSchedule s;
    s.duration = 3000.0;
    s.dt = 1.0;
    s.setpoints["temperature"] = {{0.0, 40.0}, {1000.0, 50.0}};
    s.setpoints["level"] = {{0.0, 0.25}};
    s.overrides["V106.u"] = {{0.0, 0.25}, {1500.0, 0.22}, {2300.0, 0.27}};
    s.overrides["SRC.Tin"] = {{0.0, 15.0}, {1800.0, 17.0}, {2600.0, 14.0}};
    return s;
}

Plant::Plant(PlantTopology topology) : topology_(std::move(topology)) {
    auto violations = validate_topology(topology_);
    if (!violations.empty()) {
        std::string detail;
        for (const auto& v : violations) {
            detail += (detail.empty() ? "" : "; ") + v.code + " (" + v.detail + ")";
        }
        throw Error("TOPOLOGY_INVALID", detail);
    }
    for (const auto& c : topology_.components) {
        std::visit(
            [&](const auto& p) {
                using P = std::decay_t<decltype(p)>;
                if constexpr (std::is_same_v<P, SourceParams>) source_ = p;
                if constexpr (std::is_same_v<P, PumpParams>) pump_ = p;
                if constexpr (std::is_same_v<P, TankParams>) tank_ = p;
                if constexpr (std::is_same_v<P, HeaterParams>) heater_ = p;
                if constexpr (std::is_same_v<P, ValveParams>) valve_ = p;
            },
            c.params);
    }
    signals_ = implied_signals(topology_);
    for (const auto& loop : topology_.loops) {
        loop_measured_.push_back(signal(loop.measured));
        loop_actuated_.push_back(signal(loop.actuated));
    }
    for (const auto& tag : topology_.tags) {
        recorded_.push_back(signal(tag));
    }
}

Signal Plant::signal(std::string_view tag) const {
    auto it = signals_.find(tag);
    if (it == signals_.end()) {
        throw Error("UNKNOWN_TAG", std::string(tag));
    }
    return it->second;
}

bool Plant::has_tag(std::string_view tag) const { return signals_.find(tag) != signals_.end(); }

bool Plant::writable_state(std::string_view tag) const {
    auto it = signals_.find(tag);
    return it != signals_.end() && it->second == Signal::TankTemperature;
}

double Plant::tank_capacity() const { return Physics::density * tank_.area * tank_.max_level; }

double Plant::read(const PlantState& s, Signal signal) const {
    switch (signal) {
        case Signal::TankTemperature: return s.tank_temperature;
        case Signal::TankLevel: return s.tank_mass / (Physics::density * tank_.area);
        case Signal::HeaterCommand: return s.heater_command;
        case Signal::HeaterPower: return s.heater_power;
        case Signal::PumpCommand: return s.pump_command;
        case Signal::PumpFlow: return s.pump_flow;
        case Signal::ValveCommand: return s.valve_command;
        case Signal::ValveFlow: return s.valve_flow;
        case Signal::SupplyTemperature: return s.supply_temperature;
    }
    return 0.0;
}

void Plant::write(PlantState& s, Signal signal, double value) const {
    switch (signal) {
        case Signal::TankTemperature: s.tank_temperature = value; return;
        case Signal::TankLevel: s.tank_mass = value * Physics::density * tank_.area; return;
        case Signal::HeaterCommand: s.heater_command = value; return;
        case Signal::PumpCommand: s.pump_command = value; return;
        case Signal::ValveCommand: s.valve_command = value; return;
        case Signal::SupplyTemperature: s.supply_temperature = value; return;
        default: throw Error("READ_ONLY_TAG", "derived signal cannot be written");
    }
}

Flows Plant::derive_flows(const PlantState& state, double dt) const {
    Flows f;
    f.pump = std::max(0.0, state.pump_command * pump_.max_flow);
    const double available = f.pump + std::max(0.0, state.tank_mass) / dt;
    f.valve = std::clamp(state.valve_command * valve_.max_flow, 0.0, available);
    return f;
}

PlantState Plant::step(const PlantState& state, std::span<const double> setpoints, double dt) const {
    if (!(dt > 0.0)) {
        throw Error("STEP_INVALID", "dt must be positive");
    }
    if (setpoints.size() != topology_.loops.size()) {
        throw Error("STEP_INVALID", "one setpoint per control loop required");
    }
    if (state.integrals.size() != topology_.loops.size()) {
        throw Error("STEP_INVALID", "state carries the wrong number of loop integrals");
    }
    PlantState next = state;

    for (std::size_t l = 0; l < topology_.loops.size(); ++l) {
        const auto out =
            pi_update(topology_.loops[l], state.integrals[l], setpoints[l], read(state, loop_measured_[l]), dt);
        write(next, loop_actuated_[l], out.command);
        next.integrals[l] = out.integral;
    }
    for (double* u : {&next.heater_command, &next.pump_command, &next.valve_command}) {
        if (*u < 0.0 || *u > 1.0) {
            *u = std::clamp(*u, 0.0, 1.0);
            ++next.clamp_events;
        }
    }

    next.heater_power =
        state.heater_power + (dt / heater_.time_constant) * (next.heater_command * heater_.max_power - state.heater_power);
    if (next.heater_power < 0.0 || next.heater_power > heater_.max_power) {
        next.heater_power = std::clamp(next.heater_power, 0.0, heater_.max_power);
        ++next.clamp_events;
    }

    const Flows flows = derive_flows(next, dt);
    next.pump_flow = flows.pump;
    next.valve_flow = flows.valve;

    // Conservative Euler update of mass and enthalpy (M*T, in kg*K).
    const double mass = state.tank_mass + dt * (flows.pump - flows.valve);
    const double enthalpy =
        state.tank_mass * state.tank_temperature +
        dt * (flows.pump * next.supply_temperature - flows.valve * state.tank_temperature +
              (next.heater_power - tank_.ua * (state.tank_temperature - Physics::ambient)) / Physics::heat_capacity);
    if (!(mass > Physics::min_mass)) {
        throw Error("STEP_DEGENERATE", "tank mass would drop to " + format_double(mass) + " kg at t=" +
                                           format_double(state.time + dt));
    }
    next.tank_temperature = enthalpy / mass;
    next.tank_mass = mass;
    if (mass > tank_capacity()) {
        next.tank_mass = tank_capacity();
        ++next.clamp_events;
    }
    next.time = state.time + dt;
    return next;
}

PlantState Plant::initial_state(const ScenarioSchedule& scenario, double temperature) const {
    PlantState s;
    s.integrals.assign(topology_.loops.size(), 0.0);
    s.supply_temperature = source_.supply_temperature;
    s.tank_temperature = temperature;
    s.tank_mass = 0.5 * tank_capacity();
    apply_overrides(scenario, 0.0, s);

    // Start level loops at their setpoint with the integral balancing the valve.
    for (std::size_t l = 0; l < topology_.loops.size(); ++l) {
        const auto& loop = topology_.loops[l];
        if (loop_measured_[l] != Signal::TankLevel) {
            continue;
        }
        if (auto it = scenario.setpoints.find(loop.name); it != scenario.setpoints.end()) {
            write(s, Signal::TankLevel, value_at(it->second, 0.0));
        }
        if (loop_actuated_[l] == Signal::PumpCommand && loop.ki > 0.0) {
            const double balance = std::clamp(s.valve_command * valve_.max_flow / pump_.max_flow, 0.0, 1.0);
            s.integrals[l] = balance / loop.ki;
            s.pump_command = balance;
        }
    }
    const Flows flows = derive_flows(s, scenario.dt > 0.0 ? scenario.dt : 1.0);
    s.pump_flow = flows.pump;
    s.valve_flow = flows.valve;
    return s;
}

void Plant::record(const PlantState& state, std::span<double> row) const {
    for (std::size_t i = 0; i < recorded_.size(); ++i) {
        row[i] = read(state, recorded_[i]);
    }
}

void Plant::apply_overrides(const ScenarioSchedule& scenario, double t, PlantState& state) const {
    for (const auto& [tag, schedule] : scenario.overrides) {
        write(state, signal(tag), value_at(schedule, t));
    }
}

std::vector<double> Plant::setpoints_at(const ScenarioSchedule& scenario, double t) const {
    std::vector<double> out;
    out.reserve(topology_.loops.size());
    for (const auto& loop : topology_.loops) {
        auto it = scenario.setpoints.find(loop.name);
        if (it == scenario.setpoints.end()) {
            throw Error("SCENARIO_INVALID", "no setpoint schedule for loop " + loop.name);
        }
        out.push_back(value_at(it->second, t));
    }
    return out;
}

void Plant::validate_scenario(const ScenarioSchedule& scenario) const {
    auto fail = [](const std::string& what) { throw Error("SCENARIO_INVALID", what); };
    if (!(scenario.dt > 0.0) || !std::isfinite(scenario.dt)) fail("dt must be positive");
    if (!(scenario.duration >= 0.0) || !std::isfinite(scenario.duration)) fail("duration must be >= 0");
    auto check = [&](const std::string& name, const Schedule& schedule) {
        if (schedule.empty() || schedule.front().start != 0.0) {
            fail(name + ": first segment must start at t=0");
        }
        for (std::size_t i = 0; i < schedule.size(); ++i) {
            if (!std::isfinite(schedule[i].value) || !std::isfinite(schedule[i].start)) {
                fail(name + ": non-finite segment");
            }
            if (i > 0 && !(schedule[i].start > schedule[i - 1].start)) {
                fail(name + ": segments overlap");
            }
        }
    };
    for (const auto& loop : topology_.loops) {
        auto it = scenario.setpoints.find(loop.name);
        if (it == scenario.setpoints.end()) fail("no setpoint schedule for loop " + loop.name);
    }
    for (const auto& [name, schedule] : scenario.setpoints) {
        if (std::none_of(topology_.loops.begin(), topology_.loops.end(), [&](const auto& l) { return l.name == name; })) {
            fail("setpoint for unknown loop " + name);
        }
        check(name, schedule);
    }
    for (const auto& [tag, schedule] : scenario.overrides) {
        if (!has_tag(tag)) fail("override for unknown tag " + tag);
        const Signal s = signal(tag);
        if (s != Signal::SupplyTemperature && !is_command(s)) fail(tag + " cannot be overridden");
        if (std::find(loop_actuated_.begin(), loop_actuated_.end(), s) != loop_actuated_.end()) {
            fail(tag + " is driven by a control loop");
        }
        check(tag, schedule);
        if (is_command(s)) {
            for (const auto& seg : schedule) {
                if (seg.value < 0.0 || seg.value > 1.0) fail(tag + ": command outside [0,1]");
            }
        }
    }
}

TimeSeriesFrame run_scenario(const Plant& plant, const ScenarioSchedule& scenario, const PlantState& initial) {
    plant.validate_scenario(scenario);
    const std::size_t steps = scenario.step_count();
    FrameBuilder frame(plant.tags());
    frame.reserve(steps + 1);
    std::vector<double> row(plant.tags().size());

    plant.record(initial, row);
    frame.append(initial.time, row);

    PlantState state = initial;
    for (std::size_t k = 1; k <= steps; ++k) {
        const double t = static_cast<double>(k - 1) * scenario.dt;
        plant.apply_overrides(scenario, t, state);
        const auto setpoints = plant.setpoints_at(scenario, t);
        state = plant.step(state, setpoints, scenario.dt);
        state.time = initial.time + static_cast<double>(k) * scenario.dt;
        plant.record(state, row);
        frame.append(state.time, row);
    }
    return std::move(frame).build();
}

}  // namespace hytwin::plant
