#include <doctest.h>

#include <random>

#include "opamp/circuit.hpp"
#include "opamp/tensor.hpp"  // uniform01

using namespace opamp::circuit;

TEST_CASE("matched network has zero common-mode gain and infinite CMRR") {
    auto g = gains_from_resistors({1000, 10000, 1000, 10000});
    CHECK(g.differential == doctest::Approx(10.0));
    CHECK(std::abs(g.common_mode) <= 1e-12);
    if (g.common_mode == 0.0) CHECK(std::isinf(g.cmrr));

    std::mt19937_64 rng(4);
    for (int i = 0; i < 50; ++i) {
        const double r1 = 1.0 + opamp::uniform01(rng) * 9999.0;
        const double r3 = 1.0 + opamp::uniform01(rng) * 9999.0;
        const double ratio = 0.1 + opamp::uniform01(rng) * 20.0;
        auto m = gains_from_resistors({r1, r1 * ratio, r3, r3 * ratio});
        CHECK(std::abs(m.common_mode) <= 1e-12);
    }
}

TEST_CASE("worked example R=(1,2,1,3)") {
    auto g = gains_from_resistors({1, 2, 1, 3});
    // c+ = (3/4)*(3/1) = 2.25, c- = 2; solved from the two coefficient equations
    CHECK(g.differential == doctest::Approx(2.125));
    CHECK(g.common_mode == doctest::Approx(0.25));
    CHECK(g.cmrr == doctest::Approx(8.5));
}

TEST_CASE("nonpositive resistance is rejected") {
    CHECK_THROWS_AS(gains_from_resistors({1, -2, 1, 3}), std::invalid_argument);
    CHECK_THROWS_AS(gains_from_resistors({0, 2, 1, 3}), std::invalid_argument);
}

TEST_CASE("opamp output special cases") {
    AmplifierGains g{3.0, 0.5, 6.0};
    // pure common mode
    CHECK(opamp_output(2.0, 2.0, g) == doctest::Approx(0.5 * 2.0));
    // A_c = 0 reduces to the ideal differential amplifier
    AmplifierGains ideal{3.0, 0.0, std::numeric_limits<double>::infinity()};
    CHECK(opamp_output(5.0, 1.5, ideal) == diff_output(5.0, 1.5, 3.0));
}

TEST_CASE("diff output basics and equivalence with zero common mode") {
    CHECK(diff_output(4.0, 4.0, 7.5) == 0.0);
    CHECK(diff_output(2.0, 1.0, 1.0) == doctest::Approx(1.0));
    std::mt19937_64 rng(10);
    for (int i = 0; i < 100; ++i) {
        const double vp = opamp::uniform01(rng) * 20 - 10;
        const double vm = opamp::uniform01(rng) * 20 - 10;
        const double ad = opamp::uniform01(rng) * 5;
        AmplifierGains g{ad, 0.0, std::numeric_limits<double>::infinity()};
        CHECK(diff_output(vp, vm, ad) == opamp_output(vp, vm, g));
    }
}

TEST_CASE("gain form agrees with resistor form over random networks") {
    std::mt19937_64 rng(21);
    for (int i = 0; i < 1000; ++i) {
        ResistorNetwork r{1.0 + opamp::uniform01(rng) * 1e4, 1.0 + opamp::uniform01(rng) * 1e4,
                          1.0 + opamp::uniform01(rng) * 1e4, 1.0 + opamp::uniform01(rng) * 1e4};
        const double vp = opamp::uniform01(rng) * 10 - 5;
        const double vm = opamp::uniform01(rng) * 10 - 5;
        const double direct = resistor_form_output(vp, vm, r);
        const double via_gains = opamp_output(vp, vm, gains_from_resistors(r));
        CHECK(std::abs(direct - via_gains) <= 1e-9 * std::max(1.0, std::abs(direct)));
    }
}

TEST_CASE("opamp output is linear in its inputs") {
    std::mt19937_64 rng(31);
    auto g = gains_from_resistors({2, 3, 5, 7});
    for (int i = 0; i < 50; ++i) {
        const double a = opamp::uniform01(rng) * 4 - 2, b = opamp::uniform01(rng) * 4 - 2;
        const double c = opamp::uniform01(rng) * 4 - 2, d = opamp::uniform01(rng) * 4 - 2;
        const double lhs = opamp_output(a + c, b + d, g);
        const double rhs = opamp_output(a, b, g) + opamp_output(c, d, g);
        CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
    }
}
