#include "spice/regression.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "spice/errors.hpp"
#include "spice/rng.hpp"

namespace spice {

namespace {

constexpr double kLogTwoPi = 1.8378770664093454836;

double log_cosh(double y) {
    const double a = std::fabs(y);
    return a + std::log1p(std::exp(-2.0 * a)) - std::log(2.0);
}

double logit(double p) { return std::log(p / (1.0 - p)); }

double inv_logit(double x) {
    return (x < 0.0) ? std::exp(x) / (1.0 + std::exp(x)) : 1.0 / (1.0 + std::exp(-x));
}

// Gamma^{-1} = S^{-1} L^{-T} L^{-1} S^{-1} via triangular solve
Matrix gamma_inverse(const Vector& S, const Matrix& L) {
    const int K = static_cast<int>(S.size());
    Matrix rhs = Matrix::Zero(K, K);
    for (int k = 0; k < K; ++k) rhs(k, k) = real(1) / S[k];
    Matrix A = L.template triangularView<Eigen::Lower>().solve(rhs);  // L^{-1} S^{-1}
    return A.transpose() * A;
}

double condition_estimate(const Matrix& M) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(M);
    const auto& ev = es.eigenvalues();
    const double lo = ev.minCoeff(), hi = ev.maxCoeff();
    return (lo > 0.0) ? hi / lo : std::numeric_limits<double>::infinity();
}

}  // namespace

RegressionParams RegressionParams::make(int p, int K) {
    RegressionParams r;
    r.B = Matrix::Zero(p, K);
    r.S = Vector::Ones(K);
    r.L = Matrix::Identity(K, K);
    r.fixed_B = BoolVector::Constant(p * K, false);
    r.fixed_S = BoolVector::Constant(K, false);
    return r;
}

void RegressionParams::check() const {
    constexpr double kRowTol = std::is_same_v<real, double> ? 1e-8 : 1e-4;
    const int K = dim();
    if (L.rows() != K || L.cols() != K) throw std::domain_error("L dimension mismatch");
    for (int i = 0; i < K; ++i) {
        double norm2 = 0.0;
        for (int j = 0; j <= i; ++j) norm2 += static_cast<double>(L(i, j)) * L(i, j);
        if (std::fabs(norm2 - 1.0) > kRowTol) {
            throw std::domain_error("row " + std::to_string(i + 1) + " of L has norm " +
                                    std::to_string(std::sqrt(norm2)) + ", expected 1");
        }
        if (!(L(i, i) > 0)) throw std::domain_error("L diagonal must be positive");
        for (int j = i + 1; j < K; ++j) {
            if (L(i, j) != 0) throw std::domain_error("L must be lower triangular");
        }
    }
    if (std::fabs(static_cast<double>(L(0, 0)) - 1.0) >
        (std::is_same_v<real, double> ? 1e-12 : 1e-6)) {
        throw std::domain_error("l_11 must equal 1");
    }
}

PriorSpec PriorSpec::vague(int p, int K) {
    PriorSpec s;
    s.b0 = Vector::Zero(p * K);
    s.Omega0 = Matrix::Zero(p * K, p * K);
    s.S_lower = Vector::Constant(K, real(0.01));
    s.S_upper = Vector::Constant(K, real(10));
    s.eta = 1;
    return s;
}

void PriorSpec::check() const {
    if (!(eta > 0)) throw ValidationError("prior: eta must be positive");
    if (S_lower.size() != S_upper.size()) throw ValidationError("prior: S bound length mismatch");
    for (int k = 0; k < S_lower.size(); ++k) {
        if (!(S_lower[k] < S_upper[k])) {
            throw ValidationError("prior: S_lower must be < S_upper elementwise");
        }
        if (!(S_lower[k] > 0)) throw ValidationError("prior: S_lower must be positive");
    }
    if (Omega0.rows() != Omega0.cols() || Omega0.rows() != b0.size()) {
        throw ValidationError("prior: Omega0/b0 dimension mismatch");
    }
    if (!Omega0.isApprox(Omega0.transpose(), real(1e-8))) {
        throw ValidationError("prior: Omega0 must be symmetric");
    }
}

BlockDesign BlockDesign::make(const Matrix& X0, const Vector& W) {
    if (W.size() != X0.rows()) throw ValidationError("design: weight length != unit count");
    BlockDesign d;
    d.X0 = X0;
    d.W = W;
    d.U_eff = W.sum();
    if (!(d.U_eff > 0)) throw ValidationError("design: effective unit count must be positive");
    return d;
}

Matrix BlockDesign::XtWX() const {
    return X0.transpose() * W.asDiagonal() * X0;
}

Matrix sample_B(const Matrix& units, const BlockDesign& design, const Vector& S, const Matrix& L,
                const Matrix& B_current, const BoolVector& fixed_B, const PriorSpec& prior,
                RngStream& rng) {
    const int p = static_cast<int>(design.X0.cols());
    const int K = static_cast<int>(S.size());
    const int pk = p * K;

    const Matrix Ginv = gamma_inverse(S, L);
    const Matrix A = design.XtWX();

    // P = Gamma^{-1} (x) X0'WX0 + Omega0, assembled blockwise
    Matrix P = prior.Omega0;
    if (P.size() == 0) P = Matrix::Zero(pk, pk);
    for (int c = 0; c < K; ++c) {
        for (int c2 = 0; c2 < K; ++c2) {
            P.block(c * p, c2 * p, p, p) += Ginv(c, c2) * A;
        }
    }

    // (Gamma^{-1} (x) X0'WX0) vec(Bhat) = vec(X0'W units Gamma^{-1}),
    // using the normal equation X0'WX0 Bhat = X0'W units directly
    const Matrix XtWU = design.X0.transpose() * design.W.asDiagonal() * units;
    const Matrix rhsM = XtWU * Ginv;
    Vector rhs = Eigen::Map<const Vector>(rhsM.data(), pk);
    if (prior.Omega0.size() != 0) rhs += prior.Omega0 * prior.b0;

    std::vector<int> free_idx;
    free_idx.reserve(pk);
    for (int m = 0; m < pk; ++m) {
        if (!fixed_B[m]) free_idx.push_back(m);
    }
    Matrix B_new = B_current;
    if (free_idx.empty()) return B_new;

    const int nf = static_cast<int>(free_idx.size());
    Matrix Pff(nf, nf);
    Vector r_f(nf);
    for (int i = 0; i < nf; ++i) {
        r_f[i] = rhs[free_idx[i]];
        for (int j = 0; j < nf; ++j) Pff(i, j) = P(free_idx[i], free_idx[j]);
    }
    // condition on the fixed coordinates: r_f -= P_fx b_x
    const Vector b_cur = Eigen::Map<const Vector>(B_current.data(), pk);
    for (int i = 0; i < nf; ++i) {
        for (int m = 0; m < pk; ++m) {
            if (fixed_B[m]) r_f[i] -= P(free_idx[i], m) * b_cur[m];
        }
    }

    Eigen::LLT<Matrix> llt(Pff);
    if (llt.info() != Eigen::Success) {
        throw NumericalError(
            "sample_B: posterior precision is not positive definite (condition estimate " +
            std::to_string(condition_estimate(Pff)) + ")");
    }
    const Vector mean = llt.solve(r_f);
    Vector z(nf);
    for (int i = 0; i < nf; ++i) z[i] = static_cast<real>(rng.normal());
    // covariance P_ff^{-1}: solve U x = z with U the upper Cholesky factor
    const Vector draw =
        mean + llt.matrixU().solve(z);

    Vector b_out = b_cur;
    for (int i = 0; i < nf; ++i) b_out[free_idx[i]] = draw[i];
    B_new = Eigen::Map<const Matrix>(b_out.data(), p, K);
    return B_new;
}

Vector chol_to_unconstrained(const Matrix& L) {
    const int K = static_cast<int>(L.rows());
    {
        // reuse the invariant checks
        RegressionParams tmp;
        tmp.S = Vector::Ones(K);
        tmp.L = L;
        tmp.check();
    }
    Vector y(K * (K - 1) / 2);
    int m = 0;
    for (int i = 1; i < K; ++i) {
        // multiplicative remainder mirrors the forward recursion and
        // avoids cancellation when the row mass concentrates early
        double rem = 1.0;
        for (int j = 0; j < i; ++j) {
            const double z = L(i, j) / std::sqrt(rem);
            y[m++] = static_cast<real>(std::atanh(z));
            rem *= (1.0 - z * z);
        }
    }
    return y;
}

Matrix unconstrained_to_chol(const Vector& y, int K) {
    if (y.size() != K * (K - 1) / 2) {
        throw std::domain_error("unconstrained vector has wrong length for K=" +
                                std::to_string(K));
    }
    Matrix L = Matrix::Zero(K, K);
    L(0, 0) = 1;
    int m = 0;
    for (int i = 1; i < K; ++i) {
        double rem = 1.0;
        for (int j = 0; j < i; ++j) {
            const double z = std::tanh(static_cast<double>(y[m++]));
            L(i, j) = static_cast<real>(z * std::sqrt(rem));
            rem *= (1.0 - z * z);
        }
        L(i, i) = static_cast<real>(std::sqrt(rem));
    }
    return L;
}

double log_jacobian_unconstrained_to_chol(const Vector& y, const Matrix& L) {
    const int K = static_cast<int>(L.rows());
    double logj = 0.0;
    int m = 0;
    for (int i = 1; i < K; ++i) {
        double rem = 1.0;
        for (int j = 0; j < i; ++j) {
            logj += -2.0 * log_cosh(y[m]) + 0.5 * std::log(rem);
            const double z = std::tanh(static_cast<double>(y[m]));
            rem *= (1.0 - z * z);
            ++m;
        }
    }
    return logj;
}

double log_full_conditional_L(const Matrix& L, const Vector& S, const Matrix& EtWE, real U_eff,
                              real eta) {
    const int K = static_cast<int>(S.size());
    double val = 0.0;
    for (int k = 1; k < K; ++k) {
        if (!(L(k, k) > 0)) throw NumericalError("log_full_conditional_L: singular L");
        val += (K - (k + 1) + 2.0 * eta - 2.0 - U_eff) * std::log(static_cast<double>(L(k, k)));
    }
    for (int k = 0; k < K; ++k) val -= U_eff * std::log(static_cast<double>(S[k]));
    const Matrix Ginv = gamma_inverse(S, L);
    val -= 0.5 * (EtWE.cwiseProduct(Ginv)).sum();
    return val;
}

Matrix residual_crossprod(const Matrix& units, const BlockDesign& design, const Matrix& B) {
    const Matrix E = units - design.X0 * B;
    return E.transpose() * design.W.asDiagonal() * E;
}

BoundedProposal bounded_proposal(double y0, double a, double b, double sigma, RngStream& rng) {
    if (!(a < y0 && y0 < b)) {
        throw std::domain_error("bounded_proposal: current value outside (" + std::to_string(a) +
                                "," + std::to_string(b) + ")");
    }
    const double x0 = logit((y0 - a) / (b - a));
    const double x1 = x0 + sigma * rng.normal();
    // clamp so the candidate stays interior even when inv_logit rounds
    double p1 = inv_logit(x1);
    p1 = std::min(std::max(p1, 1e-300), 1.0 - 1e-16);
    const double y1 = a + (b - a) * p1;
    const double log_q_ratio = std::log((y1 - a) * (b - y1)) - std::log((y0 - a) * (b - y0));
    return {y1, log_q_ratio};
}

std::vector<bool> update_R(RegressionParams& params, const Matrix& EtWE, real U_eff,
                           const PriorSpec& prior, const std::vector<double>& proposal_sds,
                           RngStream& rng) {
    const int K = params.dim();
    if (params.fixed_R || K < 2) return {};
    const int nc = K * (K - 1) / 2;
    if (static_cast<int>(proposal_sds.size()) != nc) {
        throw std::invalid_argument("update_R: need one proposal sd per free coordinate");
    }
    std::vector<bool> accepted(nc, false);
    Vector y = chol_to_unconstrained(params.L);
    for (int m = 0; m < nc; ++m) {
        const double cur = log_full_conditional_L(params.L, params.S, EtWE, U_eff, prior.eta) +
                           log_jacobian_unconstrained_to_chol(y, params.L);
        Vector y1 = y;
        y1[m] += static_cast<real>(proposal_sds[m] * rng.normal());
        const Matrix L1 = unconstrained_to_chol(y1, K);
        const double prop = log_full_conditional_L(L1, params.S, EtWE, U_eff, prior.eta) +
                            log_jacobian_unconstrained_to_chol(y1, L1);
        const double log_u = std::log(rng.uniform());
        if (log_u < prop - cur) {
            y = y1;
            params.L = L1;
            accepted[m] = true;
        }
    }
    return accepted;
}

std::vector<bool> update_S(RegressionParams& params, const Matrix& EtWE, real U_eff,
                           const PriorSpec& prior, const std::vector<double>& proposal_sds,
                           RngStream& rng) {
    const int K = params.dim();
    if (static_cast<int>(proposal_sds.size()) != K) {
        throw std::invalid_argument("update_S: need one proposal sd per diagonal element");
    }
    std::vector<bool> accepted(K, false);
    for (int k = 0; k < K; ++k) {
        if (params.fixed_S[k]) continue;
        const double lo = prior.S_lower[k], hi = prior.S_upper[k];
        const double cur =
            log_full_conditional_L(params.L, params.S, EtWE, U_eff, prior.eta);
        const BoundedProposal prop = bounded_proposal(params.S[k], lo, hi, proposal_sds[k], rng);
        Vector S1 = params.S;
        S1[k] = static_cast<real>(prop.value);
        const double cand = log_full_conditional_L(params.L, S1, EtWE, U_eff, prior.eta);
        const double log_u = std::log(rng.uniform());
        if (log_u < cand - cur + prop.log_q_ratio) {
            params.S = S1;
            accepted[k] = true;
        }
    }
    return accepted;
}

double mvn_logpdf(const Vector& x, const Vector& mean, const Vector& S, const Matrix& L) {
    const int K = static_cast<int>(S.size());
    Vector v = x - mean;
    for (int k = 0; k < K; ++k) v[k] /= S[k];
    const Vector w = L.template triangularView<Eigen::Lower>().solve(v);
    double logdet = 0.0;
    for (int k = 0; k < K; ++k) {
        logdet += std::log(static_cast<double>(S[k])) + std::log(static_cast<double>(L(k, k)));
    }
    return -0.5 * (K * kLogTwoPi + w.squaredNorm()) - logdet;
}

}  // namespace spice
