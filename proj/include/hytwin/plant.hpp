#pragma once

#include <map>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "hytwin/historian.hpp"

namespace hytwin::plant {

/// Fluid and environment constants shared by every plant.
struct Physics {
    static constexpr double density = 997.0;        // kg/m^3
    static constexpr double heat_capacity = 4186.0;  // J/(kg K)
    static constexpr double ambient = 20.0;          // degC
    static constexpr double min_mass = 1e-6;         // kg, below this a tank's temperature is undefined
};

// --- Topology ---------------------------------------------------------------

enum class ComponentKind { Source, Pump, Tank, Heater, Valve, Sink };

struct SourceParams {
    double supply_temperature = 15.0;  // degC
};
struct PumpParams {
    double max_flow = 0.2;  // kg/s
};
struct TankParams {
    double area = 0.2;       // m^2
    double max_level = 0.5;  // m
    double ua = 8.0;         // W/K, loss to ambient
};
struct HeaterParams {
    double max_power = 9000.0;    // W
    double time_constant = 5.0;   // s
    std::string tank;             // id of the tank the element sits in
};
struct ValveParams {
    double max_flow = 0.2;  // kg/s at full opening
};
struct SinkParams {};

using ComponentParams = std::variant<SourceParams, PumpParams, TankParams, HeaterParams, ValveParams, SinkParams>;

struct ComponentSpec {
    std::string id;
    ComponentParams params;

    [[nodiscard]] ComponentKind kind() const { return static_cast<ComponentKind>(params.index()); }
};

struct Connection {
    std::string from;
    std::string to;
};

/// PI loop: measured tag -> actuated tag. Gains are in actuator units per
/// unit of error (Kp) and per unit error-second (Ki).
struct PiLoopSpec {
    std::string name;
    std::string measured;
    std::string actuated;
    double kp = 0.0;
    double ki = 0.0;
    double lo = 0.0;
    double hi = 1.0;
};

struct PlantTopology {
    std::vector<ComponentSpec> components;
    std::vector<Connection> connections;
    std::vector<PiLoopSpec> loops;
    std::vector<std::string> tags;

    [[nodiscard]] ComponentSpec* find(std::string_view id);
    [[nodiscard]] const ComponentSpec* find(std::string_view id) const;
};

struct Violation {
    std::string code;
    std::string detail;
};

/// Reference water plant: SRC -> P100 -> T100 (heater E100) -> V106 -> SNK,
/// with a temperature loop (E100 <- T100.T) and a level loop
/// (P100 <- T100.level).
[[nodiscard]] PlantTopology build_default_plant();

/// Every invariant violation of the topology; empty iff valid. Codes:
/// DANGLING_CONNECTION, DUPLICATE_COMPONENT, DUPLICATE_TAG, INVALID_TAG,
/// NONPOSITIVE_PARAM, HEATER_COUNT, HEATER_HOST, CYCLIC_FLOW, PATH_SHAPE,
/// UNKNOWN_TAG, LOOP_CLAMP, LOOP_GAIN.
[[nodiscard]] std::vector<Violation> validate_topology(const PlantTopology& topology);

// --- Control ----------------------------------------------------------------

struct PiOutput {
    double command;
    double integral;
};

/// Clamped PI law with conditional-integration anti-windup: the integral
/// only advances when the unclamped output stays inside [lo, hi].
[[nodiscard]] PiOutput pi_update(const PiLoopSpec& loop, double integral, double setpoint, double measurement,
                                 double dt);

// --- State ------------------------------------------------------------------

/// Evolving physical state of the single-path plant.
struct PlantState {
    double time = 0.0;
    double tank_mass = 0.0;         // kg
    double tank_temperature = 20.0;  // degC
    double heater_power = 0.0;      // W
    double heater_command = 0.0;    // [0, 1]
    double pump_command = 0.0;      // [0, 1]
    double valve_command = 0.0;     // [0, 1]
    double supply_temperature = 15.0;  // degC, boundary condition
    double pump_flow = 0.0;         // kg/s over the last step
    double valve_flow = 0.0;        // kg/s over the last step
    std::vector<double> integrals;  // one per control loop
    std::size_t clamp_events = 0;   // invariant re-establishments so far

    friend bool operator==(const PlantState&, const PlantState&) = default;
};

struct Flows {
    double pump = 0.0;   // P100.mdot
    double valve = 0.0;  // V106.mdot
};

// --- Scenario ---------------------------------------------------------------

/// Piecewise-constant value: segment i holds `value` from `start` until the
/// next segment's start.
struct Segment {
    double start = 0.0;
    double value = 0.0;
};
using Schedule = std::vector<Segment>;

[[nodiscard]] double value_at(const Schedule& schedule, double t);

/// Parses "0:40,1000:50" into a schedule. Throws SCENARIO_INVALID.
[[nodiscard]] Schedule parse_schedule(std::string_view text);

struct ScenarioSchedule {
    double duration = 0.0;
    double dt = 1.0;
    std::map<std::string, Schedule> setpoints;  // by loop name
    std::map<std::string, Schedule> overrides;  // by tag: open-loop actuators or SRC.Tin

    [[nodiscard]] std::size_t step_count() const;
};

/// Default data-collection scenario: temperature set point 40 -> 50 degC at
/// t = 1000 s over 3000 s, level at 0.25 m, with mild valve and supply
/// temperature moves so every surrogate feature is excited.
[[nodiscard]] ScenarioSchedule default_scenario();

// --- Simulator --------------------------------------------------------------

/// Signals addressable by tag.
enum class Signal {
    TankTemperature,
    TankLevel,
    HeaterCommand,
    HeaterPower,
    PumpCommand,
    PumpFlow,
    ValveCommand,
    ValveFlow,
    SupplyTemperature,
};

/// Validated, resolved form of a PlantTopology. Stateless: all operations are
/// pure functions of their arguments, so one Plant can serve many runs.
class Plant {
public:
    /// Throws TOPOLOGY_INVALID listing the violations.
    explicit Plant(PlantTopology topology);

    [[nodiscard]] const PlantTopology& topology() const noexcept { return topology_; }
    [[nodiscard]] const std::vector<std::string>& tags() const noexcept { return topology_.tags; }
    [[nodiscard]] std::size_t loop_count() const noexcept { return topology_.loops.size(); }

    /// Resolves a tag; throws UNKNOWN_TAG.
    [[nodiscard]] Signal signal(std::string_view tag) const;
    [[nodiscard]] bool has_tag(std::string_view tag) const;
    /// Tags naming a state variable that may be overwritten from outside.
    [[nodiscard]] bool writable_state(std::string_view tag) const;

    [[nodiscard]] double read(const PlantState& state, Signal signal) const;
    [[nodiscard]] double read(const PlantState& state, std::string_view tag) const { return read(state, signal(tag)); }
    /// Writes a state variable or boundary/actuator value; throws
    /// READ_ONLY_TAG for derived signals.
    void write(PlantState& state, Signal signal, double value) const;

    [[nodiscard]] double tank_capacity() const;  // kg at max level

    /// Actuator flow laws, with the valve limited so the tank cannot go
    /// negative within dt.
    [[nodiscard]] Flows derive_flows(const PlantState& state, double dt) const;

    /// One explicit Euler step: PI loops, heater lag, flows, mass balance and
    /// well-mixed energy balance. Setpoints are indexed like topology().loops.
    /// Throws STEP_DEGENERATE if the tank would empty.
    [[nodiscard]] PlantState step(const PlantState& state, std::span<const double> setpoints, double dt) const;

    /// Initial state with the tank at `level` and `temperature`, the level
    /// loop integral preset to balance the scenario's initial valve flow.
    [[nodiscard]] PlantState initial_state(const ScenarioSchedule& scenario, double temperature = 20.0) const;

    /// Values of every registered tag, in tags() order.
    void record(const PlantState& state, std::span<double> row) const;

    /// Applies scenario overrides that are active at scenario time t.
    void apply_overrides(const ScenarioSchedule& scenario, double t, PlantState& state) const;
    /// Loop setpoints at scenario time t, in loop order.
    [[nodiscard]] std::vector<double> setpoints_at(const ScenarioSchedule& scenario, double t) const;

    /// Throws SCENARIO_INVALID.
    void validate_scenario(const ScenarioSchedule& scenario) const;

private:
    PlantTopology topology_;
    SourceParams source_;
    PumpParams pump_;
    TankParams tank_;
    HeaterParams heater_;
    ValveParams valve_;
    std::map<std::string, Signal, std::less<>> signals_;
    std::vector<Signal> loop_measured_;
    std::vector<Signal> loop_actuated_;
    std::vector<Signal> recorded_;
};

/// Runs ceil(duration/dt) fixed steps from `initial`, recording every tag at
/// every step (plus the initial row). Timestamps are initial.time + k*dt.
[[nodiscard]] TimeSeriesFrame run_scenario(const Plant& plant, const ScenarioSchedule& scenario,
                                           const PlantState& initial);

}  // namespace hytwin::plant
