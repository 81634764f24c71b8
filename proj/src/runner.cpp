#include "geoprobe/runner.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>

#include "geoprobe/errors.hpp"
#include "geoprobe/json_util.hpp"
#include "geoprobe/parallel.hpp"
#include "geoprobe/rng.hpp"

namespace geoprobe::runner {

namespace {

struct LoadedCorpus {
    geo::TileGrid grid;
    geo::ClassThresholds thresholds;
    std::vector<geo::LabeledTile> labeled;  // id-sorted, labels assigned
    std::vector<geo::ImageTile> tiles;      // aligned with labeled
};

std::size_t labeled_index(const std::vector<geo::LabeledTile>& labeled, const geo::TileId& id) {
    const auto it = std::lower_bound(
        labeled.begin(), labeled.end(), id,
        [](const geo::LabeledTile& t, const geo::TileId& key) { return t.id < key; });
    if (it == labeled.end() || !(it->id == id))
        throw DataError("no labeled tile with id " + id.str());
    return static_cast<std::size_t>(it - labeled.begin());
}

LoadedCorpus load_corpus(const ExperimentConfig& cfg) {
    LoadedCorpus out;
    std::vector<geo::HomeRecord> homes;
    std::vector<geo::ImageTile> synth_tiles;
    if (cfg.synth) {
        auto corpus = synth::gen_corpus(*cfg.synth, cfg.workers);
        out.grid = corpus.grid;
        homes = std::move(corpus.homes);
        synth_tiles = std::move(corpus.tiles);
    } else {
        out.grid = geo::load_manifest(cfg.corpus_dir);
        homes = geo::load_homes(cfg.corpus_dir / "homes.csv");
    }

    out.thresholds = geo::compute_thresholds(homes);
    auto agg = geo::aggregate_labels(homes, out.grid);
    geo::label_tiles(agg.tiles, out.thresholds);
    out.labeled = std::move(agg.tiles);

    out.tiles.resize(out.labeled.size());
    if (cfg.synth) {
        for (std::size_t i = 0; i < out.labeled.size(); ++i) {
            const auto& id = out.labeled[i].id;
            out.tiles[i] = std::move(
                synth_tiles[static_cast<std::size_t>(id.row) * out.grid.cols + id.col]);
        }
    } else {
        parallel_for(0, out.labeled.size(), cfg.workers, [&](std::size_t i) {
            out.tiles[i] = geo::load_tile_image(cfg.corpus_dir, out.grid, out.labeled[i].id);
        });
    }
    return out;
}

struct SeedContext {
    bool ok = false;
    std::string reason;
    geo::SplitResult split;
    std::vector<geo::LabeledTile> train_pop;
    std::vector<int> y_test;
};

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t m = v.size() / 2;
    return v.size() % 2 == 1 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

// Unique display names: each featurizer's name, suffixed on collision.
std::vector<std::string> featurizer_names(const std::vector<features::FeaturizerSpec>& specs) {
    std::vector<std::string> names;
    names.reserve(specs.size());
    for (const auto& spec : specs) {
        std::string name = spec.name();
        int suffix = 2;
        while (std::find(names.begin(), names.end(), name) != names.end())
            name = spec.name() + "#" + std::to_string(suffix++);
        names.push_back(name);
    }
    return names;
}

std::string cell_prefix(const CellRow& row) {
    return "cell scheme=" + row.scheme + " featurizer=" + row.featurizer +
           " n=" + std::to_string(row.n_requested) + " seed=" + std::to_string(row.seed) + ": ";
}

// Sample, fit, and score one cell against the seed's fixed test set.
void run_cell(CellRow& row, const sampling::SamplePlan& tmpl, const ExperimentConfig& cfg,
              const LoadedCorpus& corpus, const features::FeatureMatrix& fm,
              const SeedContext& ctx) {
    row.report.scheme = row.scheme;
    row.report.featurizer = row.featurizer;
    row.report.n_requested = row.n_requested;
    row.report.seed = row.seed;

    if (!ctx.ok) {
        row.status = "infeasible";
        row.reason = ctx.reason;
        return;
    }

    sampling::SamplePlan plan = tmpl;
    plan.n = row.n_requested;
    plan.seed = row.seed;

    try {
        const auto sample = sampling::draw(ctx.train_pop, plan);

        const Eigen::MatrixXd X_train = features::rows_as_matrix(fm, sample.tile_ids);
        std::vector<int> y_train(sample.tile_ids.size());
        for (std::size_t i = 0; i < sample.tile_ids.size(); ++i)
            y_train[i] = corpus.labeled[labeled_index(corpus.labeled, sample.tile_ids[i])].label;

        model::RidgeConfig ridge = cfg.ridge;
        ridge.selection_seed = rng::stream_key(row.seed, "ridge.val");
        model::ModelWeights weights = model::train_ridge_ova(X_train, y_train, ridge);
        weights.featurizer_tag = fm.featurizer_tag;

        const Eigen::MatrixXd X_test = features::rows_as_matrix(fm, ctx.split.test_ids);
        const Eigen::MatrixXd scores = model::predict_scores(X_test, weights);
        eval::EvalReport report = eval::mean_average_precision(scores, ctx.y_test);

        report.scheme = row.scheme;
        report.featurizer = row.featurizer;
        report.n_requested = row.n_requested;
        report.seed = row.seed;
        report.n_train_effective = sample.tile_ids.size();

        row.report = report;
        row.lambda = weights.trained_lambda;
        row.n_train_effective = sample.tile_ids.size();
        row.status = "ok";
    } catch (const InfeasibleError& e) {
        row.status = "infeasible";
        row.reason = e.what();
    }
}

}  // namespace

void ExperimentConfig::validate() const {
    if (corpus_dir.empty() == !synth.has_value())
        throw ConfigError("experiment: set exactly one of corpus_dir and synth");
    if (synth) synth->validate();
    if (schemes.empty()) throw ConfigError("experiment: no sampling schemes");
    if (featurizers.empty()) throw ConfigError("experiment: no featurizers");
    if (sizes.empty()) throw ConfigError("experiment: no sample sizes");
    for (std::size_t i = 0; i < sizes.size(); ++i) {
        if (sizes[i] < 1) throw ConfigError("experiment: sizes must be >= 1");
        if (i > 0 && sizes[i] <= sizes[i - 1])
            throw ConfigError("experiment: sizes must be strictly ascending");
    }
    if (seeds.empty()) throw ConfigError("experiment: no seeds");
    if (!(test_fraction > 0.0 && test_fraction < 1.0))
        throw ConfigError("experiment: test_fraction must be in (0, 1)");
    if (!(buffer_m >= 0.0)) throw ConfigError("experiment: buffer_m must be >= 0");
    if (workers < 1) throw ConfigError("experiment: workers must be >= 1");
    ridge.validate();
    for (const auto& spec : featurizers) spec.validate();
    for (const auto& tmpl : schemes) {
        sampling::SamplePlan plan = tmpl;
        plan.n = sizes.front();
        plan.validate();
    }
}

CurveResult run_learning_curve(const ExperimentConfig& cfg) {
    cfg.validate();
    const LoadedCorpus corpus = load_corpus(cfg);
    if (cfg.verbose)
        std::cerr << "corpus: " << corpus.labeled.size() << " labeled tiles\n";

    CurveResult result;
    result.reference_n = cfg.reference_n;

    const auto names = featurizer_names(cfg.featurizers);
    std::vector<features::FeatureMatrix> mats;
    mats.reserve(cfg.featurizers.size());
    for (std::size_t f = 0; f < cfg.featurizers.size(); ++f) {
        features::FeaturizeStats stats;
        mats.push_back(features::featurize_corpus(corpus.tiles, cfg.featurizers[f],
                                                  {cfg.workers, cfg.cache_dir}, &stats));
        result.featurize_stats[names[f]] = stats;
        if (cfg.verbose)
            std::cerr << "featurized " << names[f] << ": d=" << mats.back().d
                      << (stats.cache_hit ? " (cache hit)" : "") << "\n";
    }

    std::vector<SeedContext> seed_ctx(cfg.seeds.size());
    for (std::size_t s = 0; s < cfg.seeds.size(); ++s) {
        auto& ctx = seed_ctx[s];
        try {
            ctx.split =
                geo::spatial_split(corpus.labeled, cfg.test_fraction, cfg.buffer_m, cfg.seeds[s]);
            ctx.train_pop.reserve(ctx.split.train_ids.size());
            for (const auto& id : ctx.split.train_ids)
                ctx.train_pop.push_back(corpus.labeled[labeled_index(corpus.labeled, id)]);
            ctx.y_test.reserve(ctx.split.test_ids.size());
            for (const auto& id : ctx.split.test_ids)
                ctx.y_test.push_back(corpus.labeled[labeled_index(corpus.labeled, id)].label);
            // MAP needs every class in the test set; a split that misses one
            // cannot score any cell of this seed.
            for (int cls = 0; cls < model::kNumClasses; ++cls) {
                if (std::find(ctx.y_test.begin(), ctx.y_test.end(), cls) == ctx.y_test.end()) {
                    ctx.ok = false;
                    ctx.reason = "test split lacks class " + std::to_string(cls);
                    break;
                }
            }
            if (!ctx.reason.empty()) continue;
            ctx.ok = true;
        } catch (const InfeasibleError& e) {
            ctx.ok = false;
            ctx.reason = e.what();
        }
    }

    const std::size_t n_seeds = cfg.seeds.size();
    const std::size_t n_sizes = cfg.sizes.size();
    const std::size_t n_feat = cfg.featurizers.size();
    const std::size_t total = cfg.schemes.size() * n_feat * n_sizes * n_seeds;
    result.rows.resize(total);

    parallel_for(0, total, cfg.workers, [&](std::size_t idx) {
        const std::size_t s = idx % n_seeds;
        const std::size_t z = (idx / n_seeds) % n_sizes;
        const std::size_t f = (idx / (n_seeds * n_sizes)) % n_feat;
        const std::size_t sc = idx / (n_seeds * n_sizes * n_feat);
        const auto& tmpl = cfg.schemes[sc];

        CellRow& row = result.rows[idx];
        row.scheme = sampling::scheme_name(tmpl.scheme);
        row.k_clusters = tmpl.scheme == sampling::Scheme::Cluster ? tmpl.k_clusters : 0;
        row.featurizer = names[f];
        row.n_requested = cfg.sizes[z];
        row.seed = cfg.seeds[s];

        try {
            run_cell(row, tmpl, cfg, corpus, mats[f], seed_ctx[s]);
        } catch (const ConfigError& e) {
            throw ConfigError(cell_prefix(row) + e.what());
        } catch (const DataError& e) {
            throw DataError(cell_prefix(row) + e.what());
        }
    });

    if (cfg.reference_n > 0) {
        // Reuse grid rows when the reference cell was already swept.
        std::ptrdiff_t uar_scheme = -1;
        for (std::size_t sc = 0; sc < cfg.schemes.size(); ++sc)
            if (cfg.schemes[sc].scheme == sampling::Scheme::UAR) {
                uar_scheme = static_cast<std::ptrdiff_t>(sc);
                break;
            }
        const auto size_it = std::find(cfg.sizes.begin(), cfg.sizes.end(), cfg.reference_n);

        for (std::size_t f = 0; f < n_feat; ++f) {
            std::vector<double> maps;
            if (uar_scheme >= 0 && size_it != cfg.sizes.end()) {
                const std::size_t z = static_cast<std::size_t>(size_it - cfg.sizes.begin());
                for (std::size_t s = 0; s < n_seeds; ++s) {
                    const std::size_t idx =
                        ((static_cast<std::size_t>(uar_scheme) * n_feat + f) * n_sizes + z) *
                            n_seeds +
                        s;
                    if (result.rows[idx].ok()) maps.push_back(result.rows[idx].report.map);
                }
            } else {
                sampling::SamplePlan tmpl;  // defaults to UAR
                for (std::size_t s = 0; s < n_seeds; ++s) {
                    CellRow row;
                    row.scheme = sampling::scheme_name(tmpl.scheme);
                    row.featurizer = names[f];
                    row.n_requested = cfg.reference_n;
                    row.seed = cfg.seeds[s];
                    try {
                        run_cell(row, tmpl, cfg, corpus, mats[f], seed_ctx[s]);
                    } catch (const ConfigError& e) {
                        throw ConfigError("reference " + cell_prefix(row) + e.what());
                    } catch (const DataError& e) {
                        throw DataError("reference " + cell_prefix(row) + e.what());
                    }
                    if (row.ok()) maps.push_back(row.report.map);
                }
            }
            if (!maps.empty()) result.reference_map[names[f]] = median(maps);
        }
    }
    return result;
}

CurveResult run_class_breakdown(const ExperimentConfig& cfg, std::size_t fixed_n) {
    if (fixed_n < 1) throw ConfigError("class breakdown: fixed_n must be >= 1");
    ExperimentConfig single = cfg;
    single.sizes = {fixed_n};
    single.reference_n = 0;
    return run_learning_curve(single);
}

ExperimentConfig config_from_json(const nlohmann::json& j) {
    ExperimentConfig cfg;
    try {
        if (j.contains("corpus_dir")) cfg.corpus_dir = j.at("corpus_dir").get<std::string>();
        if (j.contains("synth")) cfg.synth = synth::synth_config_from_json(j.at("synth"));
        for (const auto& p : j.at("schemes")) cfg.schemes.push_back(sampling::plan_from_json(p));
        for (const auto& f : j.at("featurizers"))
            cfg.featurizers.push_back(features::spec_from_json(f));
        cfg.sizes = j.at("sizes").get<std::vector<std::size_t>>();
        cfg.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
        cfg.test_fraction = j.value("test_fraction", cfg.test_fraction);
        cfg.buffer_m = j.value("buffer_m", cfg.buffer_m);
        if (j.contains("ridge")) cfg.ridge = model::ridge_config_from_json(j.at("ridge"));
        cfg.reference_n = j.value("reference_n", cfg.reference_n);
        if (j.contains("out_dir")) cfg.out_dir = j.at("out_dir").get<std::string>();
        if (j.contains("cache_dir")) cfg.cache_dir = j.at("cache_dir").get<std::string>();
        cfg.workers = j.value("workers", cfg.workers);
        cfg.verbose = j.value("verbose", cfg.verbose);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad experiment config: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

nlohmann::json config_to_json(const ExperimentConfig& cfg) {
    nlohmann::json j;
    if (!cfg.corpus_dir.empty()) j["corpus_dir"] = cfg.corpus_dir.string();
    if (cfg.synth) j["synth"] = synth::synth_config_to_json(*cfg.synth);
    j["schemes"] = nlohmann::json::array();
    for (const auto& p : cfg.schemes) j["schemes"].push_back(sampling::plan_to_json(p));
    j["featurizers"] = nlohmann::json::array();
    for (const auto& f : cfg.featurizers) j["featurizers"].push_back(features::spec_to_json(f));
    j["sizes"] = cfg.sizes;
    j["seeds"] = cfg.seeds;
    j["test_fraction"] = cfg.test_fraction;
    j["buffer_m"] = cfg.buffer_m;
    j["ridge"] = model::ridge_config_to_json(cfg.ridge);
    j["reference_n"] = cfg.reference_n;
    j["out_dir"] = cfg.out_dir.string();
    if (!cfg.cache_dir.empty()) j["cache_dir"] = cfg.cache_dir.string();
    j["workers"] = cfg.workers;
    return j;
}

}  // namespace geoprobe::runner
