#include <stdexcept>
#include <string>

#include "flexcoop/net_model.hpp"

namespace flexcoop {

namespace {

// Baran-Wu 12.66 kV 33-bus radial feeder, canonical branch and load data
// (line impedances in ohms, loads in kW/kVAr converted to MW/MVAr here).
// Four flexible units sit at the feeder extremities; D (bus 18) and C
// (bus 33) are at the ends of the two long, low-voltage feeders, A (bus 22)
// and B (bus 25) on the short laterals near the substation.
const char* const kIeee33Json = R"json({
  "name": "ieee33",
  "notes": [
    "IEEE 33-bus radial distribution test feeder, data after Baran & Wu (1989).",
    "Loads total 3.715 MW / 2.300 MVAr; base-case minimum voltage ~0.913 p.u. at bus 18.",
    "Flexible units A-D at buses 22/25/33/18 with +/-0.5 MW and +/-0.5 MVAr ranges."
  ],
  "network": {
    "base_mva": 10.0,
    "base_kv": 12.66,
    "v_min": 0.9,
    "v_max": 1.1,
    "reference_bus": 1
  },
  "buses": [
    {"id": 1,  "p_load_mw": 0.000, "q_load_mvar": 0.000},
    {"id": 2,  "p_load_mw": 0.100, "q_load_mvar": 0.060},
    {"id": 3,  "p_load_mw": 0.090, "q_load_mvar": 0.040},
    {"id": 4,  "p_load_mw": 0.120, "q_load_mvar": 0.080},
    {"id": 5,  "p_load_mw": 0.060, "q_load_mvar": 0.030},
    {"id": 6,  "p_load_mw": 0.060, "q_load_mvar": 0.020},
    {"id": 7,  "p_load_mw": 0.200, "q_load_mvar": 0.100},
    {"id": 8,  "p_load_mw": 0.200, "q_load_mvar": 0.100},
    {"id": 9,  "p_load_mw": 0.060, "q_load_mvar": 0.020},
    {"id": 10, "p_load_mw": 0.060, "q_load_mvar": 0.020},
    {"id": 11, "p_load_mw": 0.045, "q_load_mvar": 0.030},
    {"id": 12, "p_load_mw": 0.060, "q_load_mvar": 0.035},
    {"id": 13, "p_load_mw": 0.060, "q_load_mvar": 0.035},
    {"id": 14, "p_load_mw": 0.120, "q_load_mvar": 0.080},
    {"id": 15, "p_load_mw": 0.060, "q_load_mvar": 0.010},
    {"id": 16, "p_load_mw": 0.060, "q_load_mvar": 0.020},
    {"id": 17, "p_load_mw": 0.060, "q_load_mvar": 0.020},
    {"id": 18, "p_load_mw": 0.090, "q_load_mvar": 0.040},
    {"id": 19, "p_load_mw": 0.090, "q_load_mvar": 0.040},
    {"id": 20, "p_load_mw": 0.090, "q_load_mvar": 0.040},
    {"id": 21, "p_load_mw": 0.090, "q_load_mvar": 0.040},
    {"id": 22, "p_load_mw": 0.090, "q_load_mvar": 0.040},
    {"id": 23, "p_load_mw": 0.090, "q_load_mvar": 0.050},
    {"id": 24, "p_load_mw": 0.420, "q_load_mvar": 0.200},
    {"id": 25, "p_load_mw": 0.420, "q_load_mvar": 0.200},
    {"id": 26, "p_load_mw": 0.060, "q_load_mvar": 0.025},
    {"id": 27, "p_load_mw": 0.060, "q_load_mvar": 0.025},
    {"id": 28, "p_load_mw": 0.060, "q_load_mvar": 0.020},
    {"id": 29, "p_load_mw": 0.120, "q_load_mvar": 0.070},
    {"id": 30, "p_load_mw": 0.200, "q_load_mvar": 0.600},
    {"id": 31, "p_load_mw": 0.150, "q_load_mvar": 0.070},
    {"id": 32, "p_load_mw": 0.210, "q_load_mvar": 0.100},
    {"id": 33, "p_load_mw": 0.060, "q_load_mvar": 0.040}
  ],
  "branches": [
    {"from": 1,  "to": 2,  "r_ohm": 0.0922, "x_ohm": 0.0470},
    {"from": 2,  "to": 3,  "r_ohm": 0.4930, "x_ohm": 0.2511},
    {"from": 3,  "to": 4,  "r_ohm": 0.3660, "x_ohm": 0.1864},
    {"from": 4,  "to": 5,  "r_ohm": 0.3811, "x_ohm": 0.1941},
    {"from": 5,  "to": 6,  "r_ohm": 0.8190, "x_ohm": 0.7070},
    {"from": 6,  "to": 7,  "r_ohm": 0.1872, "x_ohm": 0.6188},
    {"from": 7,  "to": 8,  "r_ohm": 0.7114, "x_ohm": 0.2351},
    {"from": 8,  "to": 9,  "r_ohm": 1.0300, "x_ohm": 0.7400},
    {"from": 9,  "to": 10, "r_ohm": 1.0440, "x_ohm": 0.7400},
    {"from": 10, "to": 11, "r_ohm": 0.1966, "x_ohm": 0.0650},
    {"from": 11, "to": 12, "r_ohm": 0.3744, "x_ohm": 0.1238},
    {"from": 12, "to": 13, "r_ohm": 1.4680, "x_ohm": 1.1550},
    {"from": 13, "to": 14, "r_ohm": 0.5416, "x_ohm": 0.7129},
    {"from": 14, "to": 15, "r_ohm": 0.5910, "x_ohm": 0.5260},
    {"from": 15, "to": 16, "r_ohm": 0.7463, "x_ohm": 0.5450},
    {"from": 16, "to": 17, "r_ohm": 1.2890, "x_ohm": 1.7210},
    {"from": 17, "to": 18, "r_ohm": 0.7320, "x_ohm": 0.5740},
    {"from": 2,  "to": 19, "r_ohm": 0.1640, "x_ohm": 0.1565},
    {"from": 19, "to": 20, "r_ohm": 1.5042, "x_ohm": 1.3554},
    {"from": 20, "to": 21, "r_ohm": 0.4095, "x_ohm": 0.4784},
    {"from": 21, "to": 22, "r_ohm": 0.7089, "x_ohm": 0.9373},
    {"from": 3,  "to": 23, "r_ohm": 0.4512, "x_ohm": 0.3083},
    {"from": 23, "to": 24, "r_ohm": 0.8980, "x_ohm": 0.7091},
    {"from": 24, "to": 25, "r_ohm": 0.8960, "x_ohm": 0.7011},
    {"from": 6,  "to": 26, "r_ohm": 0.2030, "x_ohm": 0.1034},
    {"from": 26, "to": 27, "r_ohm": 0.2842, "x_ohm": 0.1447},
    {"from": 27, "to": 28, "r_ohm": 1.0590, "x_ohm": 0.9337},
    {"from": 28, "to": 29, "r_ohm": 0.8042, "x_ohm": 0.7006},
    {"from": 29, "to": 30, "r_ohm": 0.5075, "x_ohm": 0.2585},
    {"from": 30, "to": 31, "r_ohm": 0.9744, "x_ohm": 0.9630},
    {"from": 31, "to": 32, "r_ohm": 0.3105, "x_ohm": 0.3619},
    {"from": 32, "to": 33, "r_ohm": 0.3410, "x_ohm": 0.5302}
  ],
  "units": [
    {"id": "A", "bus": 22, "p_min_mw": -0.5, "p_max_mw": 0.5,
     "q_min_mvar": -0.5, "q_max_mvar": 0.5, "p0_mw": 0.0, "q0_mvar": 0.0,
     "cost_p": 375.0, "cost_q": 187.5},
    {"id": "B", "bus": 25, "p_min_mw": -0.5, "p_max_mw": 0.5,
     "q_min_mvar": -0.5, "q_max_mvar": 0.5, "p0_mw": 0.0, "q0_mvar": 0.0,
     "cost_p": 350.0, "cost_q": 175.0},
    {"id": "C", "bus": 33, "p_min_mw": -0.5, "p_max_mw": 0.5,
     "q_min_mvar": -0.5, "q_max_mvar": 0.5, "p0_mw": 0.0, "q0_mvar": 0.0,
     "cost_p": 325.0, "cost_q": 162.5},
    {"id": "D", "bus": 18, "p_min_mw": -0.5, "p_max_mw": 0.5,
     "q_min_mvar": -0.5, "q_max_mvar": 0.5, "p0_mw": 0.0, "q0_mvar": 0.0,
     "cost_p": 300.0, "cost_q": 150.0}
  ],
  "tariff": {"price_p": 400.0, "price_q": 200.0}
})json";

// Two identical units on one weak feeder. The branch resistance (0.08 p.u.
// on the 1 MVA / 11 kV base, x = 0) is sized so either unit alone can reach
// its +/-0.5 MW limit but simultaneous full injection violates v_max and
// simultaneous full consumption violates v_min. With x = 0 the interface
// reactive power is exactly constant, so the feasible region is a segment in
// the P-Q plane and exhaustive setpoint searches stay meaningful.
const char* const kMotivating3Json = R"json({
  "name": "motivating3",
  "notes": [
    "Three-bus feeder: substation (1) - 2 - 3, both branches 9.68 ohm resistive.",
    "Units U1 (bus 2) and U2 (bus 3) have identical active-power ranges; U2 is cheaper.",
    "One unit at full output is feasible; both together hit the voltage band."
  ],
  "network": {
    "base_mva": 1.0,
    "base_kv": 11.0,
    "v_min": 0.9,
    "v_max": 1.1,
    "reference_bus": 1
  },
  "buses": [
    {"id": 1, "p_load_mw": 0.00, "q_load_mvar": 0.00},
    {"id": 2, "p_load_mw": 0.02, "q_load_mvar": 0.01},
    {"id": 3, "p_load_mw": 0.05, "q_load_mvar": 0.02}
  ],
  "branches": [
    {"from": 1, "to": 2, "r_ohm": 9.68, "x_ohm": 0.0},
    {"from": 2, "to": 3, "r_ohm": 9.68, "x_ohm": 0.0}
  ],
  "units": [
    {"id": "U1", "bus": 2, "p_min_mw": -0.5, "p_max_mw": 0.5,
     "q_min_mvar": 0.0, "q_max_mvar": 0.0, "p0_mw": 0.0, "q0_mvar": 0.0,
     "cost_p": 100.0, "cost_q": 50.0},
    {"id": "U2", "bus": 3, "p_min_mw": -0.5, "p_max_mw": 0.5,
     "q_min_mvar": 0.0, "q_max_mvar": 0.0, "p0_mw": 0.0, "q0_mvar": 0.0,
     "cost_p": 80.0, "cost_q": 40.0}
  ],
  "tariff": {"price_p": 120.0, "price_q": 60.0}
})json";

}  // namespace

bool is_builtin_case(const std::string& name) {
  return name == "ieee33" || name == "motivating3";
}

std::string builtin_case_document(const std::string& name) {
  if (name == "ieee33") return kIeee33Json;
  if (name == "motivating3") return kMotivating3Json;
  throw std::invalid_argument("unknown builtin case: " + name);
}

CaseData builtin_case(const std::string& name) {
  return load_case(builtin_case_document(name));
}

}  // namespace flexcoop
