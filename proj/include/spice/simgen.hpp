#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "spice/data.hpp"
#include "spice/types.hpp"

namespace spice {

// One block of the generative model (the latent regression plus, for
// item blocks, the response family).
struct SimBlock {
    int id = 1;
    Side side = Side::Person;
    int count = 0;
    ItemFamily family;          // item blocks
    int dim = 1;                // person blocks (items derive from family)
    int n_features = 0;         // generated standard-normal features
    bool intercept = true;
    std::string features_path;  // optional file (unit_id,<cols>) instead
    Matrix true_B;              // p x K; empty = zeros
    Vector true_S;              // K; empty = ones
    Matrix true_R;              // K x K; empty = identity
    bool lkj_R = false;         // draw R from LKJ(eta) instead
    double lkj_eta = 1.0;
    int person_dim = 0;         // item blocks
};

struct SimSpec {
    std::vector<SimBlock> blocks;
    int responses_per_person = 10;
    bool zipf = false;          // long-tail item exposure instead of uniform
    double zipf_exponent = 1.0;
    double weight_lo = 1.0, weight_hi = 1.0;  // person weights ~ U(lo,hi); 1,1 = unweighted
    std::uint64_t seed = 0;

    void check() const;
};

struct TruthRow {
    std::string name;     // draw-file naming (block2.B[1,1], item3.a, ...)
    std::string unit_id;  // original label for unit parameters, empty otherwise
    std::string param;    // "a", "dim1", "B[1,1]", ...
    double value = 0;
};

struct SimResult {
    Dataset data;                 // persons carry raw (unnormalized) weights
    std::vector<TruthRow> truth;
};

// Draws unit latents through the latent regression, assigns each person
// `responses_per_person` distinct items, and samples responses from the
// family likelihoods. Bit-reproducible for a fixed seed.
SimResult generate(const SimSpec& spec);

// Correlation matrix from the LKJ(eta) distribution (C-vine construction).
Matrix sample_lkj(int K, double eta, class RngStream& rng);

// responses.csv, per-block feature files, truth.csv
void write_sim_outputs(const std::string& dir, const SimResult& result);

SimSpec load_sim_spec(const std::string& config_path);

}  // namespace spice
