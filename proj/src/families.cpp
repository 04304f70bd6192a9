#include "spice/families.hpp"

#include <cmath>
#include <stdexcept>

#include "spice/errors.hpp"
#include "spice/rng.hpp"

namespace spice {

namespace {

constexpr double kLogTwoPi = 1.8378770664093454836;

double log_sigmoid(double t) {
    // log(1/(1+exp(-t))) without overflow on either tail
    return (t < 0.0) ? t - std::log1p(std::exp(t)) : -std::log1p(std::exp(-t));
}

double sigmoid(double t) {
    return (t < 0.0) ? std::exp(t) / (1.0 + std::exp(t)) : 1.0 / (1.0 + std::exp(-t));
}

double logit(double p) {
    if (!(p > 0.0 && p < 1.0)) throw std::domain_error("logit: argument outside (0,1)");
    return std::log(p / (1.0 - p));
}

void check_scale(double v, const char* name) {
    if (!(v > 0.0)) {
        throw std::domain_error(std::string("non-positive scale parameter ") + name);
    }
}

int check_category(const ItemFamily& family, double value) {
    const int m = family.discrete() ? family.categories : 0;
    const double r = std::nearbyint(value);
    if (!(std::fabs(value - r) < 1e-9) || r < 0.0 || r >= static_cast<double>(m)) {
        throw std::domain_error("invalid category " + std::to_string(value) + " for family " +
                                family.name());
    }
    return static_cast<int>(r);
}

// log P(y=1) and log P(y=0) for the 4-parameter logistic with
// asymptotes c < u; 1PL/2PL/3PL are the obvious specializations.
double log_bernoulli_4pl(double t, double c, double u, int y) {
    if (!(c >= 0.0 && c < u && u <= 1.0)) {
        throw std::domain_error("asymptotes must satisfy 0 <= c < u <= 1");
    }
    if (y == 1) {
        if (c == 0.0) return std::log(u) + log_sigmoid(t);
        return std::log(c + (u - c) * sigmoid(t));
    }
    if (u == 1.0) return std::log1p(-c) + log_sigmoid(-t);
    return std::log((1.0 - u) + (u - c) * sigmoid(-t));
}

}  // namespace

int ItemFamily::param_count() const {
    switch (tag) {
        case FamilyTag::Rasch1PL: return 1;
        case FamilyTag::TwoPL: return 2;
        case FamilyTag::ThreePL: return 3;
        case FamilyTag::FourPL: return 4;
        case FamilyTag::Gpcm: return categories;
        case FamilyTag::ContinuousGaussian: return 3;
        case FamilyTag::BoundedContinuous: return 3;
    }
    return 0;
}

bool ItemFamily::discrete() const {
    switch (tag) {
        case FamilyTag::ContinuousGaussian:
        case FamilyTag::BoundedContinuous: return false;
        default: return true;
    }
}

std::vector<std::string> ItemFamily::param_names() const {
    switch (tag) {
        case FamilyTag::Rasch1PL: return {"d"};
        case FamilyTag::TwoPL: return {"d", "a"};
        case FamilyTag::ThreePL: return {"d", "a", "c"};
        case FamilyTag::FourPL: return {"d", "a", "c", "u"};
        case FamilyTag::Gpcm: {
            std::vector<std::string> names = {"a"};
            for (int k = 1; k < categories; ++k) names.push_back("b" + std::to_string(k));
            return names;
        }
        case FamilyTag::ContinuousGaussian: return {"d", "a", "sigma_e"};
        case FamilyTag::BoundedContinuous: return {"d", "a", "precision"};
    }
    return {};
}

std::string ItemFamily::name() const {
    switch (tag) {
        case FamilyTag::Rasch1PL: return "1pl";
        case FamilyTag::TwoPL: return "2pl";
        case FamilyTag::ThreePL: return "3pl";
        case FamilyTag::FourPL: return "4pl";
        case FamilyTag::Gpcm: return "gpcm" + std::to_string(categories);
        case FamilyTag::ContinuousGaussian: return "gaussian";
        case FamilyTag::BoundedContinuous: return "bounded";
    }
    return "?";
}

ItemFamily ItemFamily::from_name(const std::string& name, int categories) {
    if (name == "1pl" || name == "rasch") return rasch();
    if (name == "2pl") return two_pl();
    if (name == "3pl") return three_pl();
    if (name == "4pl") return four_pl();
    if (name == "gaussian") return gaussian();
    if (name == "bounded") return bounded();
    if (name == "gpcm") {
        if (categories < 2) {
            throw ValidationError("family gpcm requires categories >= 2 (got " +
                                  std::to_string(categories) + ")");
        }
        return gpcm(categories);
    }
    // accept "gpcm3", "gpcm4", ...
    if (name.rfind("gpcm", 0) == 0 && name.size() > 4) {
        const int m = std::stoi(name.substr(4));
        if (m < 2) throw ValidationError("family " + name + " needs >= 2 categories");
        return gpcm(m);
    }
    throw ValidationError("unknown item family '" + name + "'");
}

double log_likelihood(const ItemFamily& family, const Vector& psi_natural, double theta,
                      double value) {
    if (psi_natural.size() != family.param_count()) {
        throw std::domain_error("psi has " + std::to_string(psi_natural.size()) +
                                " parameters; family " + family.name() + " expects " +
                                std::to_string(family.param_count()));
    }
    switch (family.tag) {
        case FamilyTag::Rasch1PL: {
            const int y = check_category(family, value);
            return log_bernoulli_4pl(theta + psi_natural[0], 0.0, 1.0, y);
        }
        case FamilyTag::TwoPL: {
            const int y = check_category(family, value);
            check_scale(psi_natural[1], "a");
            return log_bernoulli_4pl(psi_natural[1] * theta + psi_natural[0], 0.0, 1.0, y);
        }
        case FamilyTag::ThreePL: {
            const int y = check_category(family, value);
            check_scale(psi_natural[1], "a");
            return log_bernoulli_4pl(psi_natural[1] * theta + psi_natural[0], psi_natural[2],
                                     1.0, y);
        }
        case FamilyTag::FourPL: {
            const int y = check_category(family, value);
            check_scale(psi_natural[1], "a");
            return log_bernoulli_4pl(psi_natural[1] * theta + psi_natural[0], psi_natural[2],
                                     psi_natural[3], y);
        }
        case FamilyTag::Gpcm: {
            const int y = check_category(family, value);
            const double a = psi_natural[0];
            check_scale(a, "a");
            const int m = family.categories;
            // cumulative scores a*sum_{v<=k}(theta - b_v); empty sum for k=0
            double cum = 0.0, target = 0.0, maxc = 0.0;
            Eigen::VectorXd cums(m);
            cums[0] = 0.0;
            for (int k = 1; k < m; ++k) {
                cum += a * (theta - static_cast<double>(psi_natural[k]));
                cums[k] = cum;
                if (cum > maxc) maxc = cum;
            }
            target = cums[y];
            double norm = 0.0;
            for (int k = 0; k < m; ++k) norm += std::exp(cums[k] - maxc);
            return target - maxc - std::log(norm);
        }
        case FamilyTag::ContinuousGaussian: {
            if (!std::isfinite(value)) throw std::domain_error("non-finite continuous response");
            const double sigma = psi_natural[2];
            check_scale(psi_natural[1], "a");
            check_scale(sigma, "sigma_e");
            const double z = (value - (psi_natural[1] * theta + psi_natural[0])) / sigma;
            return -0.5 * (kLogTwoPi + z * z) - std::log(sigma);
        }
        case FamilyTag::BoundedContinuous: {
            if (!(value > 0.0 && value < 1.0)) {
                throw std::domain_error("bounded-continuous response outside (0,1)");
            }
            const double prec = psi_natural[2];
            check_scale(psi_natural[1], "a");
            check_scale(prec, "precision");
            const double z = logit(value);
            const double resid = z - (psi_natural[1] * theta + psi_natural[0]);
            // normal density of logit(y) plus the logit Jacobian
            return 0.5 * (std::log(prec) - kLogTwoPi) - 0.5 * prec * resid * resid -
                   std::log(value) - std::log1p(-value);
        }
    }
    throw std::domain_error("unknown family");
}

bool value_admissible(const ItemFamily& family, double value) {
    if (!std::isfinite(value)) return false;
    switch (family.tag) {
        case FamilyTag::ContinuousGaussian: return true;
        case FamilyTag::BoundedContinuous: return value > 0.0 && value < 1.0;
        default: {
            const double r = std::nearbyint(value);
            return std::fabs(value - r) < 1e-9 && r >= 0.0 &&
                   r < static_cast<double>(family.categories);
        }
    }
}

Vector to_unconstrained(const ItemFamily& family, const Vector& psi_natural) {
    if (psi_natural.size() != family.param_count()) {
        throw std::domain_error("parameter count mismatch for family " + family.name());
    }
    Vector y = psi_natural;
    auto log_at = [&](int idx, const char* name) {
        if (!(psi_natural[idx] > 0.0)) {
            throw std::domain_error(std::string(name) + " must be strictly positive");
        }
        y[idx] = std::log(static_cast<double>(psi_natural[idx]));
    };
    switch (family.tag) {
        case FamilyTag::Rasch1PL: break;
        case FamilyTag::TwoPL: log_at(1, "a"); break;
        case FamilyTag::ThreePL:
            log_at(1, "a");
            y[2] = static_cast<real>(logit(psi_natural[2]));
            break;
        case FamilyTag::FourPL: {
            log_at(1, "a");
            const double c = psi_natural[2], u = psi_natural[3];
            y[2] = static_cast<real>(logit(c));
            if (!(u > c && u < 1.0)) {
                throw std::domain_error("4PL requires c < u < 1 off the boundary");
            }
            y[3] = static_cast<real>(logit((u - c) / (1.0 - c)));
            break;
        }
        case FamilyTag::Gpcm: log_at(0, "a"); break;
        case FamilyTag::ContinuousGaussian:
            log_at(1, "a");
            log_at(2, "sigma_e");
            break;
        case FamilyTag::BoundedContinuous:
            log_at(1, "a");
            log_at(2, "precision");
            break;
    }
    return y;
}

Vector to_natural(const ItemFamily& family, const Vector& psi_unconstrained) {
    if (psi_unconstrained.size() != family.param_count()) {
        throw std::domain_error("parameter count mismatch for family " + family.name());
    }
    Vector x = psi_unconstrained;
    auto exp_at = [&](int idx) { x[idx] = std::exp(static_cast<double>(psi_unconstrained[idx])); };
    auto invlogit_at = [&](int idx) {
        x[idx] = static_cast<real>(sigmoid(psi_unconstrained[idx]));
    };
    switch (family.tag) {
        case FamilyTag::Rasch1PL: break;
        case FamilyTag::TwoPL: exp_at(1); break;
        case FamilyTag::ThreePL:
            exp_at(1);
            invlogit_at(2);
            break;
        case FamilyTag::FourPL: {
            exp_at(1);
            invlogit_at(2);
            const double c = x[2];
            x[3] = static_cast<real>(c + (1.0 - c) * sigmoid(psi_unconstrained[3]));
            break;
        }
        case FamilyTag::Gpcm: exp_at(0); break;
        case FamilyTag::ContinuousGaussian:
            exp_at(1);
            exp_at(2);
            break;
        case FamilyTag::BoundedContinuous:
            exp_at(1);
            exp_at(2);
            break;
    }
    return x;
}

double sample_response(const ItemFamily& family, const Vector& psi_natural, double theta,
                       RngStream& rng) {
    switch (family.tag) {
        case FamilyTag::Rasch1PL:
        case FamilyTag::TwoPL:
        case FamilyTag::ThreePL:
        case FamilyTag::FourPL: {
            const double p1 = std::exp(log_likelihood(family, psi_natural, theta, 1.0));
            return rng.uniform() < p1 ? 1.0 : 0.0;
        }
        case FamilyTag::Gpcm: {
            const int m = family.categories;
            Eigen::VectorXd probs(m);
            for (int k = 0; k < m; ++k) {
                probs[k] = std::exp(log_likelihood(family, psi_natural, theta, k));
            }
            double u = rng.uniform() * probs.sum();
            for (int k = 0; k < m - 1; ++k) {
                u -= probs[k];
                if (u < 0.0) return k;
            }
            return m - 1;
        }
        case FamilyTag::ContinuousGaussian: {
            check_scale(psi_natural[2], "sigma_e");
            return rng.normal(psi_natural[1] * theta + psi_natural[0], psi_natural[2]);
        }
        case FamilyTag::BoundedContinuous: {
            check_scale(psi_natural[2], "precision");
            const double z = rng.normal(psi_natural[1] * theta + psi_natural[0],
                                        1.0 / std::sqrt(static_cast<double>(psi_natural[2])));
            return sigmoid(z);
        }
    }
    throw std::domain_error("unknown family");
}

}  // namespace spice
