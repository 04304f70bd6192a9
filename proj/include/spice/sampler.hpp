#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "spice/data.hpp"
#include "spice/diagnostics.hpp"
#include "spice/regression.hpp"
#include "spice/rng.hpp"
#include "spice/types.hpp"

namespace spice {

struct SamplerConfig {
    int M1 = 200, M2 = 500, M3 = 500, M4 = 2000;  // iterations per phase
    double a0 = 0.2;        // acceptance lower bound
    double a1 = 0.5;        // acceptance upper bound
    double a_star = 0.35;   // target acceptance for the Phase-4 interpolation
    int thin = 1;
    int n_chains = 1;
    std::uint64_t seed = 0;
    double init_proposal_sd = 2.5;
    int worker_count = 1;
    bool debug_store_all = false;  // test hook: keep an unthinned Phase-4 trace

    void check() const;
};

// Globally rescales person weights so they sum to the number of persons
// with positive weight; zeros stay zero. Throws ValidationError when all
// weights are zero.
Vector normalize_weights(const Vector& w);

// Phase 2 -> 3 rule: acceptance below a0 shrinks the sd by 5, above a1
// grows it by 5, otherwise unchanged.
double adapt_factor5(double acc_rate, double a0, double a1, double sd);

// Phase 3 -> 4 rule: log-linear interpolation in (logit acceptance,
// log sd) space through the Phase-2 and Phase-3 operating points,
// clamped to [min(sd2,sd3)/5, max(sd2,sd3)*5].
double adapt_interpolate(double sd2, double acc2, double sd3, double acc3, double a_star);

// --- Model assembly ---------------------------------------------------

// Runtime settings for one block on top of its BlockSpec.
struct BlockConfig {
    PriorSpec prior;          // sized at build when left empty
    bool fix_B = false;
    Matrix B_value;
    bool fix_S = false;
    Vector S_value;
    bool fix_R = false;
    Matrix R_value;           // correlation matrix
    int person_dim = 0;       // item blocks: theta coordinate the family loads on
};

struct BlockModel {
    BlockSpec spec;
    Side side = Side::Person;
    BlockDesign design;
    PriorSpec prior;
    RegressionParams init;
    int person_dim = 0;
    std::vector<int> units;   // dense unit indices in roster order
};

// One scalar output parameter (a free coordinate of the posterior).
struct ParamEntry {
    enum class Kind { RegB, RegS, RegR, Person, Item };
    Kind kind;
    std::string name;
    int block_pos = -1;   // position in Model::blocks
    int unit = -1;        // dense person/item index
    int i = 0, j = 0;     // B: (row, col); R: (i, j); units: (row, coord)
    int mh_slot = -1;     // proposal-sd slot; -1 for conjugate B entries
};

struct ParamTable {
    std::vector<ParamEntry> entries;
    int mh_count = 0;
};

struct Model {
    Dataset data;
    LinkageIndex linkage;
    std::vector<BlockModel> blocks;       // sorted by block_id, persons and items mixed
    std::vector<int> person_block_of, person_row;  // dense person index -> block pos/row
    std::vector<int> item_block_of, item_row;
    Vector person_weight;                 // normalized
    int person_K = 1;
    std::vector<int> item_offset;         // flat layout of item latents
    int item_flat = 0;
    ParamTable params;
};

// Validates, normalizes weights, builds linkage/designs/param table.
Model build_model(Dataset data, const std::map<int, BlockConfig>& config);

// --- Chain state -------------------------------------------------------

struct ChainState {
    Matrix person_lat;             // persons x K
    std::vector<real> item_lat;    // flat unconstrained item latents
    std::vector<RegressionParams> reg;  // aligned with Model::blocks
    std::vector<double> sds;       // per MH slot
    std::vector<std::int64_t> accepts, attempts;  // per MH slot, current phase
    int phase = 1;
    std::int64_t iteration = 0;    // global, across phases

    void reset_counters();
};

struct PosteriorSamples {
    std::vector<std::string> param_names;
    Matrix draws;                       // stored draws x parameters (thinned Phase 4)
    std::vector<Moments> moments;       // per parameter, every Phase-4 iteration
    WaicAccumulator loglik;             // per observation, every Phase-4 iteration
    std::vector<std::int64_t> accepts4, attempts4;  // per MH slot
    std::vector<double> final_sds;      // per MH slot
    Matrix debug_trace;                 // only with debug_store_all
};

struct ProgressEvent {
    int chain = 0;       // 1-based
    int phase = 0;
    int iteration = 0;   // within phase, 1-based
    int phase_total = 0;
    double accept_person = 0, accept_item = 0, accept_regression = 0;  // phase-to-date
};
using ProgressFn = std::function<void(const ProgressEvent&)>;

// --- Driver -------------------------------------------------------------

class GibbsSampler {
public:
    GibbsSampler(const Model& model, SamplerConfig config);

    std::vector<PosteriorSamples> run(const ProgressFn& progress = {}) const;

    // single-chain building blocks, used by run() and exposed for tests
    ChainState initial_state(int chain) const;
    void gibbs_iteration(ChainState& state, int chain) const;

    // MH update of one unit against the current state; returns accept flags
    // per latent coordinate. Proposal sds are read from state.sds.
    std::vector<bool> update_unit(ChainState& state, Side side, int unit_index,
                                  RngStream& rng) const;

    // log target of a unit's latent given the rest of the state
    double unit_log_target(const ChainState& state, Side side, int unit_index,
                           const Vector& latent) const;

    // natural-scale values of all free parameters, table order
    Vector snapshot_values(const ChainState& state) const;

    // log p(Y_n | theta, psi) for every observation at the current state
    Vector pointwise_loglik(const ChainState& state) const;

    const Model& model() const { return model_; }
    const SamplerConfig& config() const { return config_; }

private:
    void refresh_caches(const ChainState& state) const;
    void update_units_pass(ChainState& state, Side side, int chain) const;
    void regression_pass(ChainState& state, int chain) const;
    double unit_log_target_cached(const ChainState& state, Side side, int unit_index,
                                  const Vector& latent, const Matrix& prior_mean) const;

    const Model& model_;
    SamplerConfig config_;

    // per-iteration caches (rebuilt inside gibbs_iteration)
    mutable std::vector<real> item_nat_;       // natural item parameters, flat
    mutable std::vector<Matrix> prior_mean_;   // X0 * B per block
    std::vector<int> mh_slot_person_;          // dense person -> first slot (or -1)
    std::vector<int> mh_slot_item_;
    std::vector<int> block_r_slot0_;           // first R slot per block (or -1)
    std::vector<std::vector<int>> block_s_slots_;  // S slot per (block, k), -1 if fixed
};

}  // namespace spice
