#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <complex>
#include <filesystem>
#include <fstream>
#include <random>
#include <vector>

#include "doctest.h"
#include "geoprobe/errors.hpp"
#include "geoprobe/features.hpp"
#include "geoprobe/rng.hpp"

using namespace geoprobe;

namespace {

std::filesystem::path temp_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("geoprobe_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

geo::ImageTile make_tile(geo::TileId id, int side, int channels, std::uint64_t gen_seed) {
    geo::ImageTile t;
    t.id = id;
    t.height = side;
    t.width = side;
    t.channels = channels;
    t.pixels.resize(std::size_t(side) * side * channels);
    std::mt19937_64 gen(gen_seed);
    for (auto& p : t.pixels) p = std::uint8_t(gen() & 0xff);
    return t;
}

geo::ImageTile constant_tile(geo::TileId id, int side, std::uint8_t value) {
    geo::ImageTile t;
    t.id = id;
    t.height = side;
    t.width = side;
    t.channels = 1;
    t.pixels.assign(std::size_t(side) * side, value);
    return t;
}

// Naive O(N^4) spatial-domain evaluation of one gist band: inverse-DFT the
// transfer function into a complex kernel, circularly convolve by direct
// summation, then average |response|^2 over the pooling cells. Exercises the
// convolution theorem against the fft path with no fft anywhere.
std::vector<double> gist_band_by_convolution(const std::vector<double>& img,
                                             const std::vector<double>& transfer,
                                             const features::GistConfig& cfg) {
    const int n = cfg.resize;
    const double two_pi = 2.0 * std::acos(-1.0);
    std::vector<std::complex<double>> kernel(std::size_t(n) * n);
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
            std::complex<double> acc{0.0, 0.0};
            for (int ky = 0; ky < n; ++ky)
                for (int kx = 0; kx < n; ++kx) {
                    const double phase = two_pi * (double(ky) * y + double(kx) * x) / double(n);
                    acc += transfer[std::size_t(ky) * n + kx] *
                           std::complex<double>(std::cos(phase), std::sin(phase));
                }
            kernel[std::size_t(y) * n + x] = acc / double(n * n);
        }

    std::vector<std::complex<double>> resp(std::size_t(n) * n);
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
            std::complex<double> acc{0.0, 0.0};
            for (int u = 0; u < n; ++u)
                for (int v = 0; v < n; ++v) {
                    const int dy = ((y - u) % n + n) % n;
                    const int dx = ((x - v) % n + n) % n;
                    acc += img[std::size_t(u) * n + v] * kernel[std::size_t(dy) * n + dx];
                }
            resp[std::size_t(y) * n + x] = acc;
        }

    const int cell = n / cfg.grid;
    std::vector<double> out(std::size_t(cfg.grid) * cfg.grid, 0.0);
    for (int cy = 0; cy < cfg.grid; ++cy)
        for (int cx = 0; cx < cfg.grid; ++cx) {
            double acc = 0.0;
            for (int y = cy * cell; y < (cy + 1) * cell; ++y)
                for (int x = cx * cell; x < (cx + 1) * cell; ++x)
                    acc += std::norm(resp[std::size_t(y) * n + x]);
            out[std::size_t(cy) * cfg.grid + cx] = acc / double(cell * cell);
        }
    return out;
}

// Direct triple-loop random-conv features: no im2col, no matrix products.
std::vector<double> randconv_by_loops(const geo::ImageTile& tile,
                                      const features::FilterBank& bank,
                                      const features::RandomConvConfig& cfg) {
    const int oh = tile.height - cfg.patch + 1;
    const int ow = tile.width - cfg.patch + 1;
    std::vector<double> out(std::size_t(cfg.dim()), 0.0);
    for (int f = 0; f < cfg.n_filters; ++f) {
        std::vector<double> relu(std::size_t(oh) * ow);
        for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox) {
                double acc = 0.0;
                for (int c = 0; c < cfg.channels; ++c)
                    for (int dy = 0; dy < cfg.patch; ++dy)
                        for (int dx = 0; dx < cfg.patch; ++dx)
                            acc += double(tile.at(oy + dy, ox + dx, c)) / 255.0 *
                                   bank.weights[std::size_t(
                                       ((f * cfg.channels + c) * cfg.patch + dy) * cfg.patch +
                                       dx)];
                relu[std::size_t(oy) * ow + ox] = std::max(acc - cfg.bias, 0.0);
            }
        for (int cy = 0; cy < cfg.pool_grid; ++cy)
            for (int cx = 0; cx < cfg.pool_grid; ++cx) {
                const int y0 = cy * oh / cfg.pool_grid, y1 = (cy + 1) * oh / cfg.pool_grid;
                const int x0 = cx * ow / cfg.pool_grid, x1 = (cx + 1) * ow / cfg.pool_grid;
                double acc = 0.0;
                for (int y = y0; y < y1; ++y)
                    for (int x = x0; x < x1; ++x) acc += relu[std::size_t(y) * ow + x];
                out[std::size_t((f * cfg.pool_grid + cy) * cfg.pool_grid + cx)] =
                    acc / double((y1 - y0) * (x1 - x0));
            }
    }
    return out;
}

double phi(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

}  // namespace

TEST_CASE("gist dimensions follow the config") {
    features::GistConfig cfg;
    CHECK(cfg.dim() == 512);
    cfg.n_scales = 3;
    cfg.n_orientations = 6;
    cfg.grid = 3;
    cfg.resize = 32;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);  // 32 % 3 != 0
    cfg.resize = 36;
    cfg.validate();
    const auto tile = make_tile({0, 0}, 36, 1, 5);
    CHECK(features::gist(tile, cfg).size() == std::size_t(cfg.dim()));
}

TEST_CASE("a constant image produces an essentially zero descriptor") {
    features::GistConfig cfg;
    cfg.resize = 32;
    cfg.n_scales = 2;
    cfg.n_orientations = 4;
    cfg.grid = 2;
    const auto flat = features::gist(constant_tile({0, 0}, 32, 200), cfg);
    const auto noisy = features::gist(make_tile({0, 0}, 32, 1, 99), cfg);
    const double flat_peak = *std::max_element(flat.begin(), flat.end());
    const double noisy_peak = *std::max_element(noisy.begin(), noisy.end());
    CHECK(noisy_peak > 0.0);
    CHECK(flat_peak <= 1e-6 * noisy_peak);

    // same through the resize path
    const auto resized = features::gist(constant_tile({0, 0}, 48, 200), cfg);
    CHECK(*std::max_element(resized.begin(), resized.end()) <= 1e-6 * noisy_peak);
}

TEST_CASE("gist matches a naive spatial convolution on 32x32") {
    features::GistConfig cfg;
    cfg.resize = 32;
    cfg.n_scales = 2;
    cfg.n_orientations = 2;
    cfg.grid = 2;
    const auto tile = make_tile({1, 2}, 32, 1, 42);
    const auto got = features::gist(tile, cfg);
    REQUIRE(got.size() == std::size_t(cfg.dim()));

    const auto img = features::gist_preprocess(tile, cfg);
    std::size_t idx = 0;
    for (int s = 0; s < cfg.n_scales; ++s)
        for (int o = 0; o < cfg.n_orientations; ++o) {
            const auto want =
                gist_band_by_convolution(img, features::gist_filter(cfg, s, o), cfg);
            for (const double w : want) {
                const double g = got[idx++];
                CHECK(std::abs(g - w) <= 1e-4 * std::max({std::abs(g), std::abs(w), 1e-4}));
            }
        }
}

TEST_CASE("gist treats an equal-channel rgb tile as its gray counterpart") {
    features::GistConfig cfg;
    cfg.resize = 32;
    cfg.n_scales = 2;
    cfg.n_orientations = 4;
    cfg.grid = 2;
    const auto gray = make_tile({0, 0}, 32, 1, 7);
    geo::ImageTile rgb;
    rgb.id = gray.id;
    rgb.height = gray.height;
    rgb.width = gray.width;
    rgb.channels = 3;
    for (const auto p : gray.pixels) {
        rgb.pixels.push_back(p);
        rgb.pixels.push_back(p);
        rgb.pixels.push_back(p);
    }
    const auto a = features::gist(gray, cfg);
    const auto b = features::gist(rgb, cfg);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i)
        CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-9));
}

TEST_CASE("filter banks are deterministic, zero-mean, unit-norm") {
    features::RandomConvConfig cfg;
    cfg.n_filters = 32;
    cfg.patch = 8;
    cfg.seed = 11;
    const auto a = features::make_filter_bank(cfg);
    const auto b = features::make_filter_bank(cfg);
    CHECK(a.weights == b.weights);
    CHECK(a.provenance == b.provenance);

    cfg.seed = 12;
    const auto c = features::make_filter_bank(cfg);
    CHECK(a.weights != c.weights);
    CHECK(a.provenance != c.provenance);

    for (int f = 0; f < cfg.n_filters; ++f) {
        const auto w = a.filter(f);
        double mean = 0.0, norm2 = 0.0;
        for (const double v : w) mean += v;
        mean /= double(w.size());
        for (const double v : w) norm2 += v * v;
        CHECK(std::abs(mean) <= 1e-12);
        CHECK(std::sqrt(norm2) == doctest::Approx(1.0).epsilon(1e-9));
    }
}

TEST_CASE("the stream generator passes ks against its nominal laws") {
    // normal draws
    {
        rng::Stream stream(rng::stream_key(1, "test.ks.normal"));
        const std::size_t n = 100'000;
        std::vector<double> xs(n);
        for (auto& x : xs) x = stream.next_normal();
        std::sort(xs.begin(), xs.end());
        double d = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double f = phi(xs[i]);
            d = std::max(d, std::abs(double(i + 1) / double(n) - f));
            d = std::max(d, std::abs(f - double(i) / double(n)));
        }
        // Kolmogorov critical value at alpha 0.001
        CHECK(d * std::sqrt(double(n)) < 1.9494746035043753);
    }
    // uniform draws
    {
        rng::Stream stream(rng::stream_key(2, "test.ks.unit"));
        const std::size_t n = 100'000;
        std::vector<double> xs(n);
        for (auto& x : xs) {
            x = stream.next_unit();
            CHECK(x >= 0.0);
            CHECK(x < 1.0);
        }
        std::sort(xs.begin(), xs.end());
        double d = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            d = std::max(d, std::abs(double(i + 1) / double(n) - xs[i]));
            d = std::max(d, std::abs(xs[i] - double(i) / double(n)));
        }
        CHECK(d * std::sqrt(double(n)) < 1.9494746035043753);
    }
}

TEST_CASE("random conv features match the direct triple loop") {
    features::RandomConvConfig cfg;
    cfg.n_filters = 3;
    cfg.patch = 3;
    cfg.bias = 0.1;
    cfg.pool_grid = 2;
    cfg.seed = 21;
    const auto bank = features::make_filter_bank(cfg);

    for (const int side : {16, 17}) {  // odd side exercises uneven pooling cells
        const auto tile = make_tile({0, 0}, side, 1, 60 + side);
        const auto got = features::random_conv_features(tile, bank, cfg);
        const auto want = randconv_by_loops(tile, bank, cfg);
        REQUIRE(got.size() == want.size());
        for (std::size_t i = 0; i < got.size(); ++i)
            CHECK(std::abs(got[i] - want[i]) <=
                  1e-5 * std::max({std::abs(got[i]), std::abs(want[i]), 1e-6}));
    }
}

TEST_CASE("random conv features on rgb tiles match the triple loop too") {
    features::RandomConvConfig cfg;
    cfg.n_filters = 2;
    cfg.patch = 4;
    cfg.channels = 3;
    cfg.pool_grid = 3;
    cfg.seed = 5;
    const auto bank = features::make_filter_bank(cfg);
    const auto tile = make_tile({0, 0}, 20, 3, 71);
    const auto got = features::random_conv_features(tile, bank, cfg);
    const auto want = randconv_by_loops(tile, bank, cfg);
    REQUIRE(got.size() == want.size());
    for (std::size_t i = 0; i < got.size(); ++i)
        CHECK(std::abs(got[i] - want[i]) <=
              1e-5 * std::max({std::abs(got[i]), std::abs(want[i]), 1e-6}));
}

TEST_CASE("zero tiles and saturating biases give exactly zero features") {
    features::RandomConvConfig cfg;
    cfg.n_filters = 4;
    cfg.patch = 5;
    cfg.seed = 3;
    const auto bank = features::make_filter_bank(cfg);

    const auto zeros =
        features::random_conv_features(constant_tile({0, 0}, 16, 0), bank, cfg);
    for (const double v : zeros) CHECK(v == 0.0);

    auto big_bias = cfg;
    big_bias.bias = 1e9;
    const auto bank2 = features::make_filter_bank(big_bias);
    const auto dead = features::random_conv_features(make_tile({0, 0}, 16, 1, 2), bank2, big_bias);
    for (const double v : dead) CHECK(v == 0.0);
}

TEST_CASE("mismatched banks and tiles are rejected") {
    features::RandomConvConfig cfg;
    cfg.n_filters = 2;
    cfg.patch = 4;
    cfg.seed = 9;
    const auto bank = features::make_filter_bank(cfg);

    auto other = cfg;
    other.seed = 10;
    const auto tile = make_tile({0, 0}, 16, 1, 4);
    CHECK_THROWS_AS(features::random_conv_features(tile, bank, other), DataError);

    const auto rgb = make_tile({0, 0}, 16, 3, 4);
    CHECK_THROWS_AS(features::random_conv_features(rgb, bank, cfg), DataError);

    const auto tiny = make_tile({0, 0}, 3, 1, 4);  // smaller than the patch
    CHECK_THROWS_AS(features::random_conv_features(tiny, bank, cfg), DataError);
}

namespace {

std::vector<geo::ImageTile> small_corpus() {
    std::vector<geo::ImageTile> tiles;
    for (std::int32_t r = 0; r < 4; ++r)
        for (std::int32_t c = 0; c < 5; ++c)
            tiles.push_back(make_tile({r, c}, 32, 1, std::uint64_t(r) * 100 + c));
    return tiles;
}

features::FeaturizerSpec small_gist_spec() {
    features::FeaturizerSpec spec;
    spec.kind = features::FeaturizerKind::Gist;
    spec.gist.resize = 32;
    spec.gist.n_scales = 2;
    spec.gist.n_orientations = 4;
    spec.gist.grid = 2;
    return spec;
}

}  // namespace

TEST_CASE("featurize_corpus is invariant to worker count and tile order") {
    auto tiles = small_corpus();
    const auto spec = small_gist_spec();
    const auto a = features::featurize_corpus(tiles, spec, {1, {}});
    const auto b = features::featurize_corpus(tiles, spec, {4, {}});
    CHECK(a == b);

    std::mt19937_64 gen(8);
    std::shuffle(tiles.begin(), tiles.end(), gen);
    const auto c = features::featurize_corpus(tiles, spec, {3, {}});
    CHECK(a == c);

    CHECK(a.n == 20);
    CHECK(a.d == std::size_t(spec.gist.dim()));
    CHECK(std::is_sorted(a.row_ids.begin(), a.row_ids.end()));
    CHECK(a.featurizer_tag == spec.tag());
}

TEST_CASE("the feature cache round-trips and survives corruption") {
    const auto dir = temp_dir("feat_cache");
    const auto tiles = small_corpus();
    const auto spec = small_gist_spec();

    features::FeaturizeStats cold;
    const auto a = features::featurize_corpus(tiles, spec, {2, dir}, &cold);
    CHECK(cold.tiles_featurized == 20);
    CHECK(!cold.cache_hit);
    CHECK(cold.tiles_per_second > 0.0);

    features::FeaturizeStats warm;
    const auto b = features::featurize_corpus(tiles, spec, {2, dir}, &warm);
    CHECK(warm.tiles_featurized == 0);
    CHECK(warm.cache_hit);
    CHECK(a == b);

    // clobber whatever fmat file lives in the cache, expect a clean recompute
    bool clobbered = false;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (entry.path().extension() == ".fmat") {
            std::ofstream out(entry.path(), std::ios::binary | std::ios::trunc);
            out << "garbage";
            clobbered = true;
        }
    }
    CHECK(clobbered);
    features::FeaturizeStats redo;
    const auto c = features::featurize_corpus(tiles, spec, {2, dir}, &redo);
    CHECK(redo.tiles_featurized == 20);
    CHECK(!redo.cache_hit);
    CHECK(a == c);
    std::filesystem::remove_all(dir);
}

TEST_CASE("feature matrices round-trip through fmat plus sidecar") {
    const auto dir = temp_dir("feat_rt");
    const auto fm = features::featurize_corpus(small_corpus(), small_gist_spec(), {2, {}});
    features::save_features(dir / "features.fmat", fm);
    const auto back = features::load_features(dir / "features.fmat");
    CHECK(back == fm);
    std::filesystem::remove_all(dir);
}

TEST_CASE("rows_as_matrix returns requested rows in request order") {
    const auto fm = features::featurize_corpus(small_corpus(), small_gist_spec(), {2, {}});
    const std::vector<geo::TileId> want{{2, 3}, {0, 0}, {3, 4}};
    const auto X = features::rows_as_matrix(fm, want);
    CHECK(X.rows() == 3);
    CHECK(X.cols() == Eigen::Index(fm.d));
    for (std::size_t i = 0; i < want.size(); ++i) {
        const auto row = fm.row_of(want[i]);
        for (std::size_t j = 0; j < fm.d; ++j)
            CHECK(X(Eigen::Index(i), Eigen::Index(j)) == double(fm.at(row, j)));
    }
    CHECK_THROWS_AS(features::rows_as_matrix(fm, std::vector<geo::TileId>{{9, 9}}), DataError);
}

TEST_CASE("duplicate tile ids in the corpus are rejected") {
    auto tiles = small_corpus();
    tiles.push_back(tiles.front());
    CHECK_THROWS_AS(features::featurize_corpus(tiles, small_gist_spec(), {1, {}}), DataError);
}

TEST_CASE("external csv features load, sort, and validate") {
    const auto dir = temp_dir("feat_ext");
    {
        std::ofstream out(dir / "ext.csv", std::ios::binary);
        out << "tile_id,f0,f1\n";
        out << "1_2,3.5,-1.25\n";
        out << "0_0,0.5,2.0\n";
    }
    const auto fm = features::load_external_features(dir / "ext.csv");
    CHECK(fm.n == 2);
    CHECK(fm.d == 2);
    CHECK(fm.row_ids == std::vector<geo::TileId>{{0, 0}, {1, 2}});
    CHECK(fm.at(0, 0) == 0.5f);
    CHECK(fm.at(0, 1) == 2.0f);
    CHECK(fm.at(1, 0) == 3.5f);
    CHECK(fm.at(1, 1) == -1.25f);
    CHECK(fm.featurizer_tag.rfind("external:", 0) == 0);

    {
        std::ofstream out(dir / "nan.csv", std::ios::binary);
        out << "tile_id,f0\n0_0,nan\n";
    }
    CHECK_THROWS_AS(features::load_external_features(dir / "nan.csv"), DataError);

    {
        std::ofstream out(dir / "dup.csv", std::ios::binary);
        out << "tile_id,f0\n0_0,1\n0_0,2\n";
    }
    CHECK_THROWS_AS(features::load_external_features(dir / "dup.csv"), DataError);

    {
        std::ofstream out(dir / "ragged.csv", std::ios::binary);
        out << "tile_id,f0,f1\n0_0,1\n";
    }
    CHECK_THROWS_AS(features::load_external_features(dir / "ragged.csv"), DataError);
    std::filesystem::remove_all(dir);
}

TEST_CASE("external fmat features pair with an ids file") {
    const auto dir = temp_dir("feat_ext_fmat");
    const auto fm = features::featurize_corpus(small_corpus(), small_gist_spec(), {2, {}});
    features::save_features(dir / "ext.fmat", fm);

    // uses the sidecar when no ids file is given
    const auto a = features::load_external_features(dir / "ext.fmat");
    CHECK(a.n == fm.n);
    CHECK(a.row_ids == fm.row_ids);
    CHECK(a.values == fm.values);
    CHECK(a.featurizer_tag.rfind("external:", 0) == 0);
    std::filesystem::remove_all(dir);
}

TEST_CASE("featurizer specs serialize and tag stably") {
    auto spec = small_gist_spec();
    const auto j = features::spec_to_json(spec);
    const auto back = features::spec_from_json(j);
    CHECK(back.kind == spec.kind);
    CHECK(back.gist == spec.gist);
    CHECK(back.tag() == spec.tag());

    features::FeaturizerSpec rc;
    rc.kind = features::FeaturizerKind::RandConv;
    rc.randconv.n_filters = 64;
    rc.randconv.seed = 5;
    const auto rc2 = features::spec_from_json(features::spec_to_json(rc));
    CHECK(rc2.randconv == rc.randconv);
    CHECK(rc2.tag() == rc.tag());
    CHECK(rc.tag() != spec.tag());

    auto rc3 = rc;
    rc3.randconv.seed = 6;
    CHECK(rc3.tag() != rc.tag());

    CHECK(spec.name() == "gist");
    CHECK(rc.name() == "randconv");
    CHECK_THROWS_AS(features::spec_from_json(nlohmann::json{{"type", "wavelet"}}), ConfigError);
}
