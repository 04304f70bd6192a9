#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "spice/data.hpp"
#include "spice/types.hpp"

namespace spice {

// --- Running moments --------------------------------------------------

// Welford accumulator; mergeable across chains.
struct Moments {
    std::int64_t count = 0;
    double mean = 0.0;
    double m2 = 0.0;

    void add(double x) {
        ++count;
        const double d = x - mean;
        mean += d / static_cast<double>(count);
        m2 += d * (x - mean);
    }
    double variance() const { return count > 1 ? m2 / static_cast<double>(count - 1) : 0.0; }
    double sd() const { return std::sqrt(variance()); }
    static Moments merged(const Moments& a, const Moments& b);
};

// --- Convergence -------------------------------------------------------

// Classic potential scale reduction factor over chains x samples draws.
// Optionally splits each chain in half first. Returns NaN when the
// within-chain variance is zero (parameter flagged, not a crash);
// throws std::invalid_argument for < 2 chains or < 2 samples.
double gelman_rubin(const Matrix& draws, bool split = false);

// Same statistic from per-chain running moments (uses every Phase-4
// iteration, not only the stored ones). Chains must have equal counts.
double gelman_rubin_from_moments(const std::vector<Moments>& chains);

// --- Predictive fit ----------------------------------------------------

struct WaicResult {
    double elpd = 0.0;
    double p_waic = 0.0;
    double waic = 0.0;
};

// WAIC from a draws x N pointwise log-likelihood matrix. lppd uses
// log-sum-exp; the penalty is the pointwise sample variance.
// Throws std::invalid_argument with fewer than 2 draws.
WaicResult waic(const Matrix& pointwise_loglik);

// Streaming per-observation accumulator equivalent to the matrix form:
// keeps a stable log-sum-exp and Welford moments per observation.
class WaicAccumulator {
public:
    explicit WaicAccumulator(int n_obs = 0) { reset(n_obs); }
    void reset(int n_obs);
    void add_draw(const Vector& loglik);
    int n_obs() const { return static_cast<int>(lse_max_.size()); }
    std::int64_t draw_count() const { return draws_; }
    WaicResult result() const;
    void merge(const WaicAccumulator& other);

    // raw per-observation state, for persistence
    struct ObsState {
        double lse_max, lse_sum, mean, m2;
        std::int64_t count;
    };
    ObsState obs_state(int n) const;
    void load_obs_state(int n, const ObsState& s);
    void set_draw_count(std::int64_t d) { draws_ = d; }

private:
    std::vector<double> lse_max_, lse_sum_, mean_, m2_;
    std::int64_t draws_ = 0;
};

// --- Posterior predictive checks ---------------------------------------

// A named family of scalar test statistics of a dataset: given the
// response values (aligned with data.responses), emit name -> value.
// Statistics may be absent on degenerate inputs (those draws are
// skipped and counted).
using Statistic =
    std::function<std::map<std::string, double>(const std::vector<real>& values)>;

struct PppResult {
    std::map<std::string, double> ppp;       // name -> p-value
    std::map<std::string, int> skipped;      // name -> replicate draws skipped
};

// Draw-by-draw replicate supplier: fills `values` with one simulated
// response set for retained draw d.
using ReplicateSimulator = std::function<void(int draw, std::vector<real>& values)>;

// ppp = fraction of usable draws with stat(rep) >= stat(obs).
PppResult posterior_predictive_check(int n_draws, const ReplicateSimulator& simulate,
                                     const std::vector<real>& observed,
                                     const std::vector<Statistic>& statistics);

// Built-in IRT fit statistics over a linkage:
//   item_mean[j]          mean observed score per item
//   item_mean_low[j]      mean score per item among the evaluated
//                         dataset's bottom-quartile scorers
//   person_score_q{10,25,50,75,90}  quantiles of person raw scores
//   odds_ratio[j1,j2]     pairwise odds ratios for sampled binary item
//                         pairs sharing >= 10 persons
std::vector<Statistic> builtin_ppc_statistics(const Dataset& data, const LinkageIndex& linkage,
                                              std::uint64_t seed, int max_odds_ratio_pairs = 20);

struct FitReport {
    double elpd = 0.0;
    double p_waic = 0.0;
    double waic = 0.0;
    std::map<std::string, double> ppp;
    std::map<std::string, int> ppp_skipped;
};

}  // namespace spice
