#pragma once

#include <vector>

#include "spice/types.hpp"

namespace spice {

class RngStream;

// Per-block latent regression state under the separation strategy
// Gamma = S R S. The correlation matrix is carried as its Cholesky
// factor L (rows of unit Euclidean length, l_11 = 1, l_kk > 0).
struct RegressionParams {
    Matrix B;          // p x K
    Vector S;          // K standard deviations
    Matrix L;          // K x K lower-triangular Cholesky factor of R
    BoolVector fixed_B;  // length p*K, vec order (columns stacked)
    BoolVector fixed_S;  // length K
    bool fixed_R = false;

    static RegressionParams make(int p, int K);

    int dim() const { return static_cast<int>(S.size()); }
    Matrix correlation() const { return L * L.transpose(); }
    Matrix covariance() const {
        return S.asDiagonal() * correlation() * S.asDiagonal();
    }
    // verifies the L invariants (unit rows, positive diagonal)
    void check() const;
};

struct PriorSpec {
    Vector b0;       // length p*K
    Matrix Omega0;   // p*K x p*K precision, PSD
    Vector S_lower;  // length K
    Vector S_upper;  // length K
    real eta = 1;    // LKJ shape

    static PriorSpec vague(int p, int K);
    void check() const;
};

// Stacked features and person weights for one block. For item blocks
// all weights are 1.
struct BlockDesign {
    Matrix X0;   // U x p
    Vector W;    // U nonnegative weights
    real U_eff = 0;  // sum of weights

    static BlockDesign make(const Matrix& X0, const Vector& W);
    // X0' W X0 and X0' W, reused across updates
    Matrix XtWX() const;
};

// --- Conjugate coefficient draw ------------------------------------

// Draws vec(B) from its multivariate-normal full conditional given the
// current unit matrix (U x K), covariance factors S and L, and the
// normal prior (b0, Omega0). Entries flagged in fixed_B keep their
// current value; the remaining coordinates are drawn from the exact
// conditional (Schur complement). Throws NumericalError when the
// posterior precision is singular.
Matrix sample_B(const Matrix& units, const BlockDesign& design, const Vector& S, const Matrix& L,
                const Matrix& B_current, const BoolVector& fixed_B, const PriorSpec& prior,
                RngStream& rng);

// --- Cholesky <-> unconstrained transform ---------------------------

// Free parameters of L in row order (l_21; l_31, l_32; ...) mapped
// through z_ij = l_ij / sqrt(1 - sum_{j'<j} l_ij'^2), y_ij = atanh(z_ij).
Vector chol_to_unconstrained(const Matrix& L);
Matrix unconstrained_to_chol(const Vector& y, int K);

// log |d l / d y| for the two-step map: sum of -2 log cosh(y_ij) and
// 0.5 log(1 - sum_{j'<j} l_ij'^2); y and L must be consistent.
double log_jacobian_unconstrained_to_chol(const Vector& y, const Matrix& L);

// --- Full conditionals ----------------------------------------------

// Log full conditional of L given the residual cross-product E'WE:
//   sum_{k>=2} (K - k + 2 eta - 2 - U_eff) log l_kk
//   - U_eff sum_k log s_kk - 1/2 tr[(E'WE)(S^-1 L^-T L^-1 S^-1)].
// Also serves as the S target: terms constant in the updated block
// cancel in the Metropolis ratio.
double log_full_conditional_L(const Matrix& L, const Vector& S, const Matrix& EtWE, real U_eff,
                              real eta);

// E = units - X0 B; returns E' W E (K x K, symmetric PSD).
Matrix residual_crossprod(const Matrix& units, const BlockDesign& design, const Matrix& B);

// --- Metropolis updates ----------------------------------------------

// Logit-normal random-walk proposal restricted to (a,b). Returns the
// candidate and log q(y0|y1)/q(y1|y0) = log[(y1-a)(b-y1)] - log[(y0-a)(b-y0)].
struct BoundedProposal {
    double value;
    double log_q_ratio;
};
BoundedProposal bounded_proposal(double y0, double a, double b, double sigma, RngStream& rng);

// One MH sweep over the K(K-1)/2 unconstrained coordinates of R, row
// order, Gaussian random walk with per-coordinate sds. Returns accept
// flags (empty when fixed_R or K == 1).
std::vector<bool> update_R(RegressionParams& params, const Matrix& EtWE, real U_eff,
                           const PriorSpec& prior, const std::vector<double>& proposal_sds,
                           RngStream& rng);

// One MH sweep over the diagonal of S via the bounded proposal on
// (S_lower[k], S_upper[k]). Fixed entries are skipped (flag false).
std::vector<bool> update_S(RegressionParams& params, const Matrix& EtWE, real U_eff,
                           const PriorSpec& prior, const std::vector<double>& proposal_sds,
                           RngStream& rng);

// log N(x; mean, Gamma) with Gamma = (S L)(S L)', via triangular solves.
double mvn_logpdf(const Vector& x, const Vector& mean, const Vector& S, const Matrix& L);

}  // namespace spice
