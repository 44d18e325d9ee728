#pragma once

// Scalar op-amp gain algebra. Independent of the tensor code; used as an
// oracle for the differential / common-mode combination applied to
// attention matrices.

#include <limits>

namespace opamp::circuit {

struct ResistorNetwork {
    double r1, r2, r3, r4;  // ohms, all strictly positive
};

struct AmplifierGains {
    double differential;  // A_d
    double common_mode;   // A_c
    double cmrr;          // K = A_d / A_c, +inf when A_c == 0
};

AmplifierGains make_gains(double differential, double common_mode);

// Derive (A_d, A_c) from the resistor network by equating coefficients of
// the two input voltages:
//   c+ = (R4/(R3+R4)) * ((R1+R2)/R1),  c- = R2/R1
//   A_d = (c+ + c-)/2,  A_c = c+ - c-
AmplifierGains gains_from_resistors(const ResistorNetwork& r);

// Full op-amp output: A_d (v+ - v-) + (A_c/2)(v+ + v-).
double opamp_output(double v_plus, double v_minus, const AmplifierGains& g);

// Ideal differential amplifier: A_d (v+ - v-).
double diff_output(double v_plus, double v_minus, double differential_gain);

// Direct resistor-form evaluation, used to cross-check the gain form.
double resistor_form_output(double v_plus, double v_minus, const ResistorNetwork& r);

}  // namespace opamp::circuit
