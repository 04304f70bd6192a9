#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "spice/data.hpp"
#include "spice/sampler.hpp"
#include "spice/types.hpp"

namespace spice {

// --- delimited text ----------------------------------------------------

// RFC-4180-style CSV: quoted fields, embedded commas/quotes/newlines,
// tolerant of trailing \r. Throws ValidationError on unterminated quotes.
std::vector<std::vector<std::string>> read_csv(const std::string& path);
std::string csv_escape(const std::string& field);

// --- response / feature ingestion ---------------------------------------

struct ParsedResponses {
    std::vector<ResponseRecord> records;
    std::vector<std::string> person_ids;  // dense index -> original label
    std::vector<std::string> item_ids;
    Vector person_weight;  // normalized; ones when the file has no weights
};

// Columns person_id,item_id,response[,weight]; ids re-indexed densely in
// order of first appearance. Weights default to 1 and are normalized so
// they sum to the number of positive-weight persons.
ParsedResponses parse_responses(const std::string& path, bool allow_duplicates = false);

// One row per unit (columns unit_id,<feature...>). Returns the design
// matrix in `unit_ids` order, optionally with a leading intercept
// column. Rank-deficient designs and row/unit mismatches are errors.
Matrix parse_features(const std::string& path, const std::vector<std::string>& unit_ids,
                      bool intercept, std::vector<std::string>* column_names = nullptr);

// --- calibration config ---------------------------------------------------

struct LoadedCalibration {
    Dataset data;
    std::map<int, BlockConfig> blocks;
    SamplerConfig sampler;
    std::string output_dir = "out";
    std::string config_path;
    std::string responses_path;
    std::vector<std::pair<std::string, std::string>> echo;  // manifest lines
    std::vector<std::string> warnings;
};

// Reads the declarative config (key-value with nested [block.N] tables),
// loads responses/features/anchors, and assembles the dataset plus
// per-block settings. Throws ValidationError with file/key context.
LoadedCalibration load_calibration(const std::string& config_path);

// --- outputs ---------------------------------------------------------------

struct SummaryRow {
    std::string name;
    double mean = 0, sd = 0, acceptance = 0, rhat = 0;
};

std::vector<SummaryRow> make_summary(const ParamTable& params,
                                     const std::vector<PosteriorSamples>& chains);

// ELPD/WAIC from the merged per-observation accumulators plus posterior
// predictive p-values simulated from the pooled stored draws.
FitReport compute_fit_report(const GibbsSampler& sampler,
                             const std::vector<PosteriorSamples>& chains);

// Fails fast (before sampling) when the directory cannot be created or
// written.
void preflight_output_dir(const std::string& dir);

// Writes draws/moments/loglik per chain plus summary.csv, fit.txt,
// fixed.csv, id maps, and manifest.txt. Deterministic byte-for-byte for
// fixed inputs and seed (the manifest's timing line excepted).
void write_run_outputs(const std::string& dir, const GibbsSampler& sampler,
                       const std::vector<PosteriorSamples>& chains,
                       const std::vector<SummaryRow>& summary, const FitReport& fit,
                       const std::vector<std::pair<std::string, std::string>>& manifest_echo,
                       double timing_seconds);

// --- diagnose support --------------------------------------------------------

std::map<std::string, std::string> read_manifest(const std::string& dir);

// Rebuilds a chain's PosteriorSamples from its persisted files. Names
// must match the model's parameter table exactly.
PosteriorSamples read_chain(const std::string& dir, int chain_number, const ParamTable& params,
                            int n_obs);

void write_summary_csv(const std::string& path, const std::vector<SummaryRow>& rows);
void write_fit_txt(const std::string& path, const FitReport& fit);

}  // namespace spice
