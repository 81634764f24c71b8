#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "doctest.h"
#include "geoprobe/errors.hpp"
#include "geoprobe/geo.hpp"
#include "geoprobe/synth.hpp"

using namespace geoprobe;

namespace {

std::filesystem::path temp_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("geoprobe_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

synth::SynthConfig small_config(std::uint64_t seed) {
    synth::SynthConfig cfg;
    cfg.grid.origin = {33.7, -112.3};
    cfg.grid.tile_size_m = 128.0;
    cfg.grid.meters_per_pixel = 4.0;  // 32 x 32 pixels
    cfg.grid.rows = 12;
    cfg.grid.cols = 12;
    cfg.n_homes = 600;
    cfg.n_price_bumps = 5;
    cfg.bump_amplitude = 1.0;
    cfg.noise_sd = 0.2;
    cfg.seed = seed;
    return cfg;
}

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
    const double n = double(x.size());
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    return sxy / std::sqrt(sxx * syy);
}

std::vector<double> tile_mean_intensity(const synth::SynthCorpus& corpus) {
    std::vector<double> means;
    for (const auto& t : corpus.tiles) {
        double acc = 0.0;
        for (const auto p : t.pixels) acc += double(p);
        means.push_back(acc / double(t.pixels.size()));
    }
    return means;
}

double pixel_variance(const geo::ImageTile& tile) {
    double mean = 0.0;
    for (const auto p : tile.pixels) mean += double(p);
    mean /= double(tile.pixels.size());
    double acc = 0.0;
    for (const auto p : tile.pixels) acc += (double(p) - mean) * (double(p) - mean);
    return acc / double(tile.pixels.size());
}

}  // namespace

TEST_CASE("gen_corpus is deterministic and has the advertised cardinalities") {
    const auto cfg = small_config(3);
    const auto a = synth::gen_corpus(cfg, 1);
    const auto b = synth::gen_corpus(cfg, 4);  // worker count must not matter

    CHECK(a.homes.size() == cfg.n_homes);
    CHECK(a.tiles.size() == std::size_t(cfg.grid.rows) * cfg.grid.cols);
    CHECK(a.true_field.size() == a.tiles.size());
    CHECK(a.tiles[0].height == 32);
    CHECK(a.tiles[0].width == 32);
    CHECK(a.tiles[0].channels == 1);

    REQUIRE(a.homes.size() == b.homes.size());
    for (std::size_t i = 0; i < a.homes.size(); ++i) CHECK(a.homes[i] == b.homes[i]);
    REQUIRE(a.tiles.size() == b.tiles.size());
    for (std::size_t i = 0; i < a.tiles.size(); ++i) CHECK(a.tiles[i] == b.tiles[i]);
    CHECK(a.true_field == b.true_field);

    const auto c = synth::gen_corpus(small_config(4), 1);
    CHECK(c.homes[0].price != a.homes[0].price);  // seed actually matters

    // ids unique, points inside the AOI, prices positive
    std::set<std::string> ids;
    for (const auto& h : a.homes) {
        CHECK(ids.insert(h.id).second);
        CHECK(h.price > 0.0);
        CHECK(a.grid.locate(h.point).has_value());
    }
}

TEST_CASE("home prices follow the latent field") {
    auto cfg = small_config(9);
    cfg.noise_sd = 0.05;  // nearly noiseless ln prices
    const auto corpus = synth::gen_corpus(cfg, 2);

    std::vector<double> lp, field;
    for (const auto& h : corpus.homes) {
        const auto id = corpus.grid.locate(h.point);
        REQUIRE(id.has_value());
        lp.push_back(std::log(h.price));
        field.push_back(corpus.true_field[std::size_t(id->row) * cfg.grid.cols + id->col]);
    }
    CHECK(pearson(lp, field) > 0.7);
}

TEST_CASE("tile intensity tracks the field when the gain is on and not otherwise") {
    auto cfg = small_config(21);
    cfg.image_signal_gain = 25.0;
    cfg.image_noise_sd = 4.0;
    const auto strong = synth::gen_corpus(cfg, 2);
    std::vector<double> field(strong.true_field.begin(), strong.true_field.end());
    CHECK(pearson(tile_mean_intensity(strong), field) > 0.5);

    cfg.image_signal_gain = 0.0;
    const auto flat = synth::gen_corpus(cfg, 2);
    CHECK(std::abs(pearson(tile_mean_intensity(flat), field)) < 0.1);
}

TEST_CASE("write_corpus round-trips through the ingest loaders") {
    const auto dir = temp_dir("synth_rt");
    const auto cfg = small_config(13);
    const auto corpus = synth::gen_corpus(cfg, 2);
    synth::write_corpus(dir, corpus, 2);

    CHECK(geo::load_manifest(dir) == cfg.grid);
    const auto homes = geo::load_homes(dir / "homes.csv");
    REQUIRE(homes.size() == corpus.homes.size());
    for (std::size_t i = 0; i < homes.size(); ++i) {
        CHECK(homes[i].id == corpus.homes[i].id);
        CHECK(homes[i].point.lat == corpus.homes[i].point.lat);  // %.17g is exact
        CHECK(homes[i].point.lon == corpus.homes[i].point.lon);
        CHECK(homes[i].price == corpus.homes[i].price);
    }
    for (const auto& t : {corpus.tiles.front(), corpus.tiles.back()}) {
        const auto img = geo::load_tile_image(dir, cfg.grid, t.id);
        CHECK(img == t);
    }
    std::filesystem::remove_all(dir);
}

TEST_CASE("an ingested synthetic corpus produces all three labels") {
    auto cfg = small_config(2);
    cfg.n_homes = 2'000;
    cfg.bump_amplitude = 1.2;
    const auto corpus = synth::gen_corpus(cfg, 2);

    const auto th = geo::compute_thresholds(corpus.homes);
    auto agg = geo::aggregate_labels(corpus.homes, corpus.grid);
    CHECK(agg.skipped_outside == 0);
    geo::label_tiles(agg.tiles, th);
    std::array<int, 3> counts{0, 0, 0};
    for (const auto& t : agg.tiles) ++counts[std::size_t(t.label)];
    CHECK(counts[0] > 0);
    CHECK(counts[1] > 0);
    CHECK(counts[2] > 0);
}

TEST_CASE("motif grating variance matches the sinusoid closed form on a flat field") {
    // No bumps, noise, or gain: every tile is a pure sinusoid of amplitude
    // motif_amplitude, so pixel variance must be A^2/2 up to quantization.
    auto cfg = small_config(31);
    cfg.bump_amplitude = 0.0;
    cfg.image_signal_gain = 0.0;
    cfg.image_noise_sd = 0.0;
    cfg.image_base_intensity = 128.0;
    cfg.n_texture_motifs = 3;
    cfg.motif_amplitude = 30.0;
    const auto corpus = synth::gen_corpus(cfg, 2);
    const double expected = cfg.motif_amplitude * cfg.motif_amplitude / 2.0;
    for (const std::size_t t : {std::size_t(0), corpus.tiles.size() / 2, corpus.tiles.size() - 1})
        CHECK(pixel_variance(corpus.tiles[t]) == doctest::Approx(expected).epsilon(0.05));
}

TEST_CASE("motif grating energy couples log-linearly to the field") {
    // ln var = ln(A^2/2) + 2 * slope * (field - mean), so with one motif and
    // no other intensity sources the relation is essentially exact.
    auto cfg = small_config(31);
    cfg.image_signal_gain = 0.0;
    cfg.image_noise_sd = 0.0;
    cfg.image_base_intensity = 128.0;
    cfg.n_texture_motifs = 1;
    cfg.motif_amplitude = 30.0;
    const auto corpus = synth::gen_corpus(cfg, 2);

    std::vector<double> log_var, field;
    for (std::size_t t = 0; t < corpus.tiles.size(); ++t) {
        log_var.push_back(std::log(pixel_variance(corpus.tiles[t])));
        field.push_back(corpus.true_field[t]);
    }
    CHECK(std::abs(pearson(log_var, field)) > 0.95);

    const auto [lo, hi] = std::minmax_element(field.begin(), field.end());
    const double spread = *hi - *lo;
    REQUIRE(spread > 1.0);  // the coupling has something to amplify
    const double ratio = std::exp(*std::max_element(log_var.begin(), log_var.end()) -
                                  *std::min_element(log_var.begin(), log_var.end()));
    CHECK(ratio > 2.0);  // slope magnitude is at least 0.45, so e^{2*0.45} > 2
}

TEST_CASE("texture motifs leave the mean-intensity channel intact") {
    auto cfg = small_config(32);
    cfg.image_signal_gain = 25.0;
    cfg.image_noise_sd = 4.0;
    cfg.n_texture_motifs = 6;
    cfg.motif_amplitude = 12.0;
    const auto corpus = synth::gen_corpus(cfg, 2);
    std::vector<double> field(corpus.true_field.begin(), corpus.true_field.end());
    // gratings average out over a tile, so the mean still tracks the field
    CHECK(pearson(tile_mean_intensity(corpus), field) > 0.5);
}

TEST_CASE("motif corpora are deterministic across worker counts") {
    auto cfg = small_config(33);
    cfg.n_texture_motifs = 4;
    cfg.motif_amplitude = 10.0;
    const auto a = synth::gen_corpus(cfg, 1);
    const auto b = synth::gen_corpus(cfg, 4);
    REQUIRE(a.tiles.size() == b.tiles.size());
    for (std::size_t i = 0; i < a.tiles.size(); ++i) CHECK(a.tiles[i] == b.tiles[i]);
}

TEST_CASE("synth config json round-trips") {
    auto cfg = small_config(77);
    cfg.bump_width_min = 4.0;
    cfg.bump_width_max = 9.0;
    cfg.n_texture_motifs = 5;
    cfg.motif_amplitude = 7.5;
    const auto back = synth::synth_config_from_json(synth::synth_config_to_json(cfg));
    CHECK(back == cfg);
}

TEST_CASE("synth config validation") {
    auto cfg = small_config(1);
    cfg.n_homes = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = small_config(1);
    cfg.noise_sd = -1.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = small_config(1);
    cfg.channels = 2;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = small_config(1);
    cfg.bump_width_min = 0.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = small_config(1);
    cfg.bump_width_max = cfg.bump_width_min - 1.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = small_config(1);
    cfg.n_texture_motifs = -1;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = small_config(1);
    cfg.motif_amplitude = -0.5;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}
