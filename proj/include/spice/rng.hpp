#pragma once

#include <array>
#include <cstdint>

namespace spice {

// Counter-based random streams (Philox4x32-10). Every consumer of
// randomness opens its own stream addressed by (entity, iteration,
// chain, purpose) under one master seed, so draws are a pure function
// of that address and never depend on thread scheduling or update
// order. Streams are cheap to construct; no state is shared.

enum class StreamPurpose : std::uint8_t {
    Init = 1,
    Unit = 2,
    RegB = 3,
    RegR = 4,
    RegS = 5,
    SimLatent = 6,
    SimAssign = 7,
    SimResponse = 8,
    SimFeature = 9,
    SimWeight = 10,
    Ppc = 11,
    Test = 12,
};

class RngStream {
public:
    RngStream(std::uint64_t seed, std::uint32_t entity, std::uint32_t iteration,
              std::uint32_t chain, StreamPurpose purpose);

    // uint32 words straight from the generator
    std::uint32_t next_u32();

    // uniform on the open interval (0,1); consumes two words
    double uniform();

    // uniform on (lo, hi)
    double uniform(double lo, double hi);

    // standard normal via the inverse-CDF method (one uniform per draw)
    double normal();

    double normal(double mean, double sd);

    // integer in [0, n), n > 0
    std::uint64_t uniform_index(std::uint64_t n);

    // Gamma(shape, 1), shape > 0 (Marsaglia-Tsang)
    double gamma(double shape);

    // Beta(a, b)
    double beta(double a, double b);

private:
    void refill();

    std::array<std::uint32_t, 2> key_;
    std::array<std::uint32_t, 4> ctr_;
    std::array<std::uint32_t, 4> buf_;
    int pos_;
};

// Quantile of the standard normal distribution (Wichura's AS 241,
// double-precision branch). p must lie strictly in (0,1).
double inverse_normal_cdf(double p);

// Standard normal CDF.
double normal_cdf(double x);

}  // namespace spice
