#include "opamp/circuit.hpp"

#include <cmath>
#include <stdexcept>

namespace opamp::circuit {

AmplifierGains make_gains(double differential, double common_mode) {
    if (!(common_mode >= 0.0) || !(differential >= 0.0))
        throw std::invalid_argument("gains must be nonnegative");
    const double cmrr = common_mode == 0.0
                            ? std::numeric_limits<double>::infinity()
                            : differential / common_mode;
    return {differential, common_mode, cmrr};
}

AmplifierGains gains_from_resistors(const ResistorNetwork& r) {
    if (!(r.r1 > 0.0) || !(r.r2 > 0.0) || !(r.r3 > 0.0) || !(r.r4 > 0.0))
        throw std::invalid_argument("resistances must be strictly positive");
    const double c_plus = (r.r4 / (r.r3 + r.r4)) * ((r.r1 + r.r2) / r.r1);
    const double c_minus = r.r2 / r.r1;
    const double differential = 0.5 * (c_plus + c_minus);
    const double common_mode = c_plus - c_minus;
    const double cmrr = common_mode == 0.0
                            ? std::numeric_limits<double>::infinity()
                            : differential / common_mode;
    return {differential, common_mode, cmrr};
}

double opamp_output(double v_plus, double v_minus, const AmplifierGains& g) {
    return g.differential * (v_plus - v_minus) +
           0.5 * g.common_mode * (v_plus + v_minus);
}

double diff_output(double v_plus, double v_minus, double differential_gain) {
    return differential_gain * (v_plus - v_minus);
}

double resistor_form_output(double v_plus, double v_minus, const ResistorNetwork& r) {
    const double c_plus = (r.r4 / (r.r3 + r.r4)) * ((r.r1 + r.r2) / r.r1);
    const double c_minus = r.r2 / r.r1;
    return v_plus * c_plus - v_minus * c_minus;
}

}  // namespace opamp::circuit
