#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "geoprobe/eval.hpp"
#include "geoprobe/features.hpp"
#include "geoprobe/geo.hpp"
#include "geoprobe/model.hpp"
#include "geoprobe/sampling.hpp"
#include "geoprobe/synth.hpp"
#include "json.hpp"

namespace geoprobe::runner {

struct ExperimentConfig {
    // Exactly one corpus source: an ingestable directory or an in-memory
    // synthetic corpus.
    std::filesystem::path corpus_dir;
    std::optional<synth::SynthConfig> synth;

    std::vector<sampling::SamplePlan> schemes;  // templates; n and seed set per cell
    std::vector<features::FeaturizerSpec> featurizers;
    std::vector<std::size_t> sizes;             // ascending
    std::vector<std::uint64_t> seeds;
    double test_fraction = 0.2;
    double buffer_m = 100.0;
    model::RidgeConfig ridge;
    std::size_t reference_n = 0;                // 0 = no dashed reference line
    std::filesystem::path out_dir = "out";
    std::filesystem::path cache_dir;            // empty disables the feature cache
    int workers = 1;
    bool verbose = false;

    void validate() const;
};

ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const ExperimentConfig& cfg);

struct CellRow {
    std::string scheme;
    int k_clusters = 0;       // 0 unless the scheme is cluster
    std::string featurizer;
    std::size_t n_requested = 0;
    std::size_t n_train_effective = 0;
    std::uint64_t seed = 0;
    double lambda = 0.0;
    eval::EvalReport report;  // metrics valid only when ok()
    std::string status = "ok";
    std::string reason;

    bool ok() const { return status == "ok"; }
    bool operator==(const CellRow&) const = default;
};

struct CurveResult {
    std::vector<CellRow> rows;  // grid order: scheme, featurizer, size, seed
    std::size_t reference_n = 0;
    // Median-over-seeds UAR MAP at reference_n, one entry per featurizer
    // (the dashed line of each panel).
    std::map<std::string, double> reference_map;
    // Diagnostics, not serialized.
    std::map<std::string, features::FeaturizeStats> featurize_stats;
};

// One buffered spatial split per seed, one featurization per featurizer,
// then every (scheme, featurizer, size, seed) cell: sample from the train
// side, fit, evaluate on the seed's fixed test set. Infeasible cells become
// rows with a reason; other errors carry the cell coordinates.
CurveResult run_learning_curve(const ExperimentConfig& cfg);

// The learning curve collapsed to a single sample size (per-class bar data).
CurveResult run_class_breakdown(const ExperimentConfig& cfg, std::size_t fixed_n);

// Writes results.csv / results.json / curves.svg into out_dir. format is
// "all" or one of "csv", "json", "svg".
void emit_report(const CurveResult& result, const std::filesystem::path& out_dir,
                 const std::string& format = "all");

std::string results_csv(const CurveResult& result);
nlohmann::json result_to_json(const CurveResult& result);
CurveResult result_from_json(const nlohmann::json& j);
CurveResult load_result_json(const std::filesystem::path& path);

}  // namespace geoprobe::runner
