#pragma once

#include <string>
#include <vector>

#include "spice/types.hpp"

namespace spice {

// Menu of unidimensional response models. Items in one block share a
// family; the item latent vector holds that family's parameters on an
// unconstrained scale (see to_unconstrained/to_natural).
enum class FamilyTag {
    Rasch1PL,
    TwoPL,
    ThreePL,
    FourPL,
    Gpcm,
    ContinuousGaussian,
    BoundedContinuous,
};

struct ItemFamily {
    FamilyTag tag = FamilyTag::TwoPL;
    int categories = 2;  // GPCM only: number of score levels m >= 2

    int param_count() const;
    bool discrete() const;
    // natural-scale parameter names, e.g. {"d","a","c"} for the 3PL
    std::vector<std::string> param_names() const;
    std::string name() const;

    static ItemFamily rasch() { return {FamilyTag::Rasch1PL, 2}; }
    static ItemFamily two_pl() { return {FamilyTag::TwoPL, 2}; }
    static ItemFamily three_pl() { return {FamilyTag::ThreePL, 2}; }
    static ItemFamily four_pl() { return {FamilyTag::FourPL, 2}; }
    static ItemFamily gpcm(int m) { return {FamilyTag::Gpcm, m}; }
    static ItemFamily gaussian() { return {FamilyTag::ContinuousGaussian, 0}; }
    static ItemFamily bounded() { return {FamilyTag::BoundedContinuous, 0}; }

    // parse "2pl", "gpcm" (+ categories), "gaussian", ... ; throws ValidationError
    static ItemFamily from_name(const std::string& name, int categories = 0);
};

// Full log density log p(value | theta, psi) with psi on the natural
// scale. Constants are kept; the MH kernels difference them away on
// their own. Throws std::domain_error for an invalid category or a
// non-positive scale parameter.
double log_likelihood(const ItemFamily& family, const Vector& psi_natural, double theta,
                      double value);

// Checks that a value is admissible for the family (integral category in
// range for discrete families, (0,1) for bounded-continuous).
bool value_admissible(const ItemFamily& family, double value);

// Bijection between the family's natural parameter space and R^K:
// log for strictly positive parameters, logit for (0,1)-bounded ones
// (the 4PL upper asymptote via logit((u-c)/(1-c)) so c < u survives),
// identity otherwise. Boundary values throw std::domain_error.
Vector to_unconstrained(const ItemFamily& family, const Vector& psi_natural);
Vector to_natural(const ItemFamily& family, const Vector& psi_unconstrained);

class RngStream;

// Draws one response from the family's distribution.
double sample_response(const ItemFamily& family, const Vector& psi_natural, double theta,
                       RngStream& rng);

}  // namespace spice
