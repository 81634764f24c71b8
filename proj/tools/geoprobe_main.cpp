#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "geoprobe/errors.hpp"
#include "geoprobe/eval.hpp"
#include "geoprobe/features.hpp"
#include "geoprobe/geo.hpp"
#include "geoprobe/json_util.hpp"
#include "geoprobe/model.hpp"
#include "geoprobe/parallel.hpp"
#include "geoprobe/rng.hpp"
#include "geoprobe/runner.hpp"
#include "geoprobe/sampling.hpp"
#include "geoprobe/synth.hpp"

namespace {

using namespace geoprobe;

std::map<geo::TileId, int> label_lookup(const geo::LabeledCorpus& corpus) {
    std::map<geo::TileId, int> labels;
    for (const auto& t : corpus.tiles) labels[t.id] = t.label;
    return labels;
}

std::vector<int> labels_for(const std::map<geo::TileId, int>& lookup,
                            const std::vector<geo::TileId>& ids) {
    std::vector<int> out;
    out.reserve(ids.size());
    for (const auto& id : ids) {
        const auto it = lookup.find(id);
        if (it == lookup.end()) throw DataError("no label for tile " + id.str());
        out.push_back(it->second);
    }
    return out;
}

std::vector<geo::ImageTile> load_tiles(const std::filesystem::path& corpus_dir,
                                       const geo::TileGrid& grid,
                                       const std::vector<geo::TileId>& ids, int workers) {
    std::vector<geo::ImageTile> tiles(ids.size());
    parallel_for(0, ids.size(), workers, [&](std::size_t i) {
        tiles[i] = geo::load_tile_image(corpus_dir, grid, ids[i]);
    });
    return tiles;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"geoprobe: how sampling strategy, featurization, and sample size drive "
                 "image-based price-class prediction accuracy"};
    app.require_subcommand(1);

    std::string config_path;
    std::uint64_t seed = 0;
    int workers = 1;
    std::string out_dir = "out";
    bool verbose = false;
    app.add_option("--config", config_path, "JSON config file");
    app.add_option("--seed", seed, "random seed");
    app.add_option("--workers", workers, "worker threads")->check(CLI::PositiveNumber);
    app.add_option("--out", out_dir, "output directory");
    app.add_flag("--verbose", verbose, "chatty progress on stderr");

    // synth
    auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic corpus");
    synth_cmd->fallthrough();
    synth_cmd->callback([&] {
        if (config_path.empty()) throw ConfigError("synth: --config is required");
        auto cfg = synth::synth_config_from_json(load_json_file(config_path));
        const auto corpus = synth::gen_corpus(cfg, workers);
        synth::write_corpus(out_dir, corpus, workers);
        std::cout << "wrote " << corpus.homes.size() << " homes and " << corpus.tiles.size()
                  << " tiles to " << out_dir << "\n";
    });

    // ingest
    auto* ingest_cmd = app.add_subcommand("ingest", "aggregate homes onto tiles and label them");
    ingest_cmd->fallthrough();
    std::string ingest_corpus;
    ingest_cmd->add_option("--corpus", ingest_corpus, "corpus directory")->required();
    ingest_cmd->callback([&] {
        const auto grid = geo::load_manifest(ingest_corpus);
        const auto homes = geo::load_homes(std::filesystem::path(ingest_corpus) / "homes.csv");
        geo::LabeledCorpus corpus;
        corpus.thresholds = geo::compute_thresholds(homes);
        auto agg = geo::aggregate_labels(homes, grid);
        geo::label_tiles(agg.tiles, corpus.thresholds);
        corpus.tiles = std::move(agg.tiles);
        corpus.skipped_outside = agg.skipped_outside;
        std::filesystem::create_directories(out_dir);
        geo::save_labeled(std::filesystem::path(out_dir) / "labeled.json", corpus);
        std::cout << "labeled " << corpus.tiles.size() << " tiles (" << corpus.skipped_outside
                  << " homes outside the grid)\n";
    });

    // split
    auto* split_cmd = app.add_subcommand("split", "buffered spatial train/test split");
    split_cmd->fallthrough();
    std::string split_labeled;
    double test_fraction = 0.2;
    double buffer_m = 100.0;
    split_cmd->add_option("--labeled", split_labeled, "labeled.json from ingest")->required();
    split_cmd->add_option("--test-fraction", test_fraction, "test fraction (0, 1)");
    split_cmd->add_option("--buffer", buffer_m, "buffer distance in meters");
    split_cmd->callback([&] {
        const auto corpus = geo::load_labeled(split_labeled);
        const auto split = geo::spatial_split(corpus.tiles, test_fraction, buffer_m, seed);
        std::filesystem::create_directories(out_dir);
        geo::save_split(std::filesystem::path(out_dir) / "split.json", split);
        std::cout << "train " << split.train_ids.size() << ", test " << split.test_ids.size()
                  << ", discarded " << split.discarded_ids.size() << "\n";
    });

    // sample
    auto* sample_cmd = app.add_subcommand("sample", "draw a training sample");
    sample_cmd->fallthrough();
    std::string sample_labeled, sample_split, scheme_str = "uar", side_str = "low";
    std::size_t sample_n = 0;
    int k_clusters = 1;
    std::optional<double> boundary;
    sample_cmd->add_option("--labeled", sample_labeled, "labeled.json from ingest")->required();
    sample_cmd->add_option("--split", sample_split, "split.json; restricts to the train side");
    sample_cmd->add_option("--scheme", scheme_str, "uar|cluster|lat|lon");
    sample_cmd->add_option("--n", sample_n, "sample size")->required();
    sample_cmd->add_option("--k", k_clusters, "cluster count (cluster scheme)");
    sample_cmd->add_option("--boundary", boundary, "stratification boundary (default: median)");
    sample_cmd->add_option("--side", side_str, "low|high (strat schemes)");
    sample_cmd->callback([&] {
        const auto corpus = geo::load_labeled(sample_labeled);
        std::vector<geo::LabeledTile> pop = corpus.tiles;
        if (!sample_split.empty()) {
            const auto split = geo::load_split(sample_split);
            const std::set<geo::TileId> train(split.train_ids.begin(), split.train_ids.end());
            std::erase_if(pop, [&](const geo::LabeledTile& t) { return !train.contains(t.id); });
        }
        sampling::SamplePlan plan;
        plan.scheme = sampling::scheme_from_name(scheme_str);
        plan.n = sample_n;
        plan.seed = seed;
        plan.k_clusters = k_clusters;
        plan.boundary = boundary;
        plan.side = sampling::side_from_name(side_str);
        const auto result = sampling::draw(pop, plan);
        std::filesystem::create_directories(out_dir);
        sampling::save_sample(std::filesystem::path(out_dir) / "sample.json", result);
        std::cout << "sampled " << result.tile_ids.size() << " of " << pop.size() << " tiles\n";
    });

    // featurize
    auto* feat_cmd = app.add_subcommand("featurize", "compute features for the labeled tiles");
    feat_cmd->fallthrough();
    std::string feat_corpus, feat_labeled, featurizer_name = "gist", external_path, ids_path,
                             cache_dir;
    feat_cmd->add_option("--corpus", feat_corpus, "corpus directory")->required();
    feat_cmd->add_option("--labeled", feat_labeled, "labeled.json from ingest")->required();
    feat_cmd->add_option("--featurizer", featurizer_name, "gist|randconv|external");
    feat_cmd->add_option("--external-path", external_path, "precomputed matrix (external)");
    feat_cmd->add_option("--ids", ids_path, "tile-id file for an external FMAT matrix");
    feat_cmd->add_option("--cache", cache_dir, "feature cache directory");
    feat_cmd->callback([&] {
        features::FeaturizerSpec spec;
        if (!config_path.empty()) {
            spec = features::spec_from_json(load_json_file(config_path));
        } else if (featurizer_name == "gist") {
            spec.kind = features::FeaturizerKind::Gist;
        } else if (featurizer_name == "randconv") {
            spec.kind = features::FeaturizerKind::RandConv;
            spec.randconv.seed = seed;
        } else if (featurizer_name == "external") {
            spec.kind = features::FeaturizerKind::External;
            spec.external_path = external_path;
        } else {
            throw ConfigError("unknown featurizer '" + featurizer_name + "'");
        }
        const auto labeled = geo::load_labeled(feat_labeled);
        std::vector<geo::TileId> ids;
        ids.reserve(labeled.tiles.size());
        for (const auto& t : labeled.tiles) ids.push_back(t.id);

        features::FeatureMatrix fm;
        features::FeaturizeStats stats;
        if (spec.kind == features::FeaturizerKind::External) {
            fm = features::load_external_features(spec.external_path, ids_path);
        } else {
            const auto grid = geo::load_manifest(feat_corpus);
            const auto tiles = load_tiles(feat_corpus, grid, ids, workers);
            fm = features::featurize_corpus(tiles, spec, {workers, cache_dir}, &stats);
        }
        std::filesystem::create_directories(out_dir);
        features::save_features(std::filesystem::path(out_dir) / "features.fmat", fm);
        std::cout << "features " << fm.n << " x " << fm.d << " (" << fm.featurizer_tag << ")";
        if (stats.tiles_featurized > 0)
            std::cout << " at " << static_cast<long>(stats.tiles_per_second) << " tiles/s";
        if (stats.cache_hit) std::cout << " from cache";
        std::cout << "\n";
    });

    // train
    auto* train_cmd = app.add_subcommand("train", "fit the one-vs-all ridge model");
    train_cmd->fallthrough();
    std::string train_features, train_labeled, train_sample;
    double lambda = 1.0;
    bool select_lambda = false;
    train_cmd->add_option("--features", train_features, "features.fmat")->required();
    train_cmd->add_option("--labeled", train_labeled, "labeled.json from ingest")->required();
    train_cmd->add_option("--sample", train_sample, "sample.json; trains on the sample only");
    train_cmd->add_option("--lambda", lambda, "ridge penalty");
    train_cmd->add_flag("--select-lambda", select_lambda, "pick lambda by validation MAP");
    train_cmd->callback([&] {
        const auto fm = features::load_features(train_features);
        const auto labeled = geo::load_labeled(train_labeled);
        const auto lookup = label_lookup(labeled);
        std::vector<geo::TileId> ids = fm.row_ids;
        if (!train_sample.empty()) ids = sampling::load_sample(train_sample).tile_ids;

        model::RidgeConfig cfg;
        cfg.lambda = lambda;
        cfg.select_lambda = select_lambda;
        cfg.selection_seed = rng::stream_key(seed, "ridge.val");
        auto weights =
            model::train_ridge_ova(features::rows_as_matrix(fm, ids), labels_for(lookup, ids), cfg);
        weights.featurizer_tag = fm.featurizer_tag;
        std::filesystem::create_directories(out_dir);
        model::save_model(std::filesystem::path(out_dir) / "model.bin", weights);
        std::cout << "trained on " << ids.size() << " tiles, lambda " << weights.trained_lambda
                  << "\n";
    });

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "score a model on the test split");
    eval_cmd->fallthrough();
    std::string eval_model, eval_features, eval_labeled, eval_split;
    eval_cmd->add_option("--model", eval_model, "model.bin from train")->required();
    eval_cmd->add_option("--features", eval_features, "features.fmat")->required();
    eval_cmd->add_option("--labeled", eval_labeled, "labeled.json from ingest")->required();
    eval_cmd->add_option("--split", eval_split, "split.json from split")->required();
    eval_cmd->callback([&] {
        const auto weights = model::load_model(eval_model);
        const auto fm = features::load_features(eval_features);
        const auto labeled = geo::load_labeled(eval_labeled);
        const auto split = geo::load_split(eval_split);
        const auto lookup = label_lookup(labeled);

        const auto scores = model::predict_scores(features::rows_as_matrix(fm, split.test_ids),
                                                  weights);
        const auto report =
            eval::mean_average_precision(scores, labels_for(lookup, split.test_ids));

        nlohmann::json j{{"map", report.map},
                         {"per_class_ap", report.per_class_ap},
                         {"n_test", report.n_test},
                         {"class_prevalence", report.class_prevalence}};
        std::filesystem::create_directories(out_dir);
        save_json_file(std::filesystem::path(out_dir) / "eval.json", j);
        std::cout << "map " << report.map << " (ap " << report.per_class_ap[0] << ", "
                  << report.per_class_ap[1] << ", " << report.per_class_ap[2] << ") on "
                  << report.n_test << " test tiles\n";
    });

    // curve
    auto* curve_cmd = app.add_subcommand("curve", "run the full sampling x featurizer sweep");
    curve_cmd->fallthrough();
    int curve_exit = 0;
    curve_cmd->callback([&] {
        if (config_path.empty()) throw ConfigError("curve: --config is required");
        auto cfg = runner::config_from_json(load_json_file(config_path));
        if (app.count("--out") > 0) cfg.out_dir = out_dir;
        if (app.count("--workers") > 0) cfg.workers = workers;
        if (verbose) cfg.verbose = true;
        const auto result = runner::run_learning_curve(cfg);
        runner::emit_report(result, cfg.out_dir);
        std::size_t ok = 0;
        for (const auto& row : result.rows) ok += row.ok() ? 1 : 0;
        std::cout << ok << " of " << result.rows.size() << " cells ok; report in "
                  << cfg.out_dir << "\n";
        if (ok == 0) curve_exit = 4;
    });

    // report
    auto* report_cmd = app.add_subcommand("report", "re-emit csv/svg from results.json");
    report_cmd->fallthrough();
    std::string report_results, report_format = "all";
    report_cmd->add_option("--results", report_results, "results.json")->required();
    report_cmd->add_option("--format", report_format, "all|csv|json|svg");
    report_cmd->callback([&] {
        const auto result = runner::load_result_json(report_results);
        runner::emit_report(result, out_dir, report_format);
        std::cout << "report in " << out_dir << "\n";
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const InfeasibleError& e) {
        std::cerr << "infeasible: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return curve_exit;
}
