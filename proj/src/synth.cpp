#include "geoprobe/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

#include "geoprobe/errors.hpp"
#include "geoprobe/json_util.hpp"
#include "geoprobe/parallel.hpp"
#include "geoprobe/png_io.hpp"
#include "geoprobe/rng.hpp"

namespace geoprobe::synth {

namespace {

struct Bump {
    double row = 0.0;    // center, tile units
    double col = 0.0;
    double width = 1.0;  // tile lengths
    double sign = 1.0;
};

std::vector<Bump> draw_bumps(const SynthConfig& cfg) {
    rng::Stream stream(rng::stream_key(cfg.seed, "synth.bumps"));
    std::vector<Bump> bumps(static_cast<std::size_t>(cfg.n_price_bumps));
    for (auto& b : bumps) {
        b.row = stream.next_uniform(0.0, cfg.grid.rows);
        b.col = stream.next_uniform(0.0, cfg.grid.cols);
        b.width = stream.next_uniform(cfg.bump_width_min, cfg.bump_width_max);
        b.sign = stream.next_unit() < 0.5 ? -1.0 : 1.0;
    }
    return bumps;
}

double field_at(const SynthConfig& cfg, const std::vector<Bump>& bumps, double row_units,
                double col_units) {
    double value = cfg.field_mean;
    for (const auto& b : bumps) {
        const double dr = row_units - b.row;
        const double dc = col_units - b.col;
        value += cfg.bump_amplitude * b.sign *
                 std::exp(-(dr * dr + dc * dc) / (2.0 * b.width * b.width));
    }
    return value;
}

struct Motif {
    double row = 0.0;  // Voronoi center, tile units
    double col = 0.0;
    double theta = 0.0;       // grating orientation
    double wavelength = 8.0;  // pixels
    double slope = 0.0;       // field coupling, signed
};

std::vector<Motif> draw_motifs(const SynthConfig& cfg) {
    rng::Stream stream(rng::stream_key(cfg.seed, "synth.motifs"));
    std::vector<Motif> motifs(static_cast<std::size_t>(cfg.n_texture_motifs));
    for (auto& m : motifs) {
        m.row = stream.next_uniform(0.0, cfg.grid.rows);
        m.col = stream.next_uniform(0.0, cfg.grid.cols);
        m.theta = stream.next_uniform(0.0, std::numbers::pi);
        m.wavelength = std::exp(stream.next_uniform(std::log(3.5), std::log(11.0)));
        const double sign = stream.next_unit() < 0.5 ? -1.0 : 1.0;
        m.slope = sign * stream.next_uniform(0.45, 0.9);
    }
    return motifs;
}

const Motif* nearest_motif(const std::vector<Motif>& motifs, double row_units,
                           double col_units) {
    const Motif* best = nullptr;
    double best_d2 = 0.0;
    for (const auto& m : motifs) {
        const double dr = row_units - m.row;
        const double dc = col_units - m.col;
        const double d2 = dr * dr + dc * dc;
        if (!best || d2 < best_d2) {
            best = &m;
            best_d2 = d2;
        }
    }
    return best;
}

std::string fmt_full(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

void SynthConfig::validate() const {
    grid.validate();
    if (n_homes < 1) throw ConfigError("synth: n_homes must be >= 1");
    if (n_price_bumps < 1) throw ConfigError("synth: n_price_bumps must be >= 1");
    if (!(bump_width_min > 0.0) || !(bump_width_max >= bump_width_min))
        throw ConfigError("synth: bump widths must satisfy 0 < min <= max");
    if (!(noise_sd >= 0.0) || !(image_noise_sd >= 0.0))
        throw ConfigError("synth: standard deviations must be >= 0");
    if (!std::isfinite(bump_amplitude) || !std::isfinite(field_mean) ||
        !std::isfinite(image_signal_gain) || !std::isfinite(image_base_intensity))
        throw ConfigError("synth: field parameters must be finite");
    if (n_texture_motifs < 0) throw ConfigError("synth: n_texture_motifs must be >= 0");
    if (!(motif_amplitude >= 0.0) || !std::isfinite(motif_amplitude))
        throw ConfigError("synth: motif_amplitude must be >= 0");
    if (channels != 1 && channels != 3) throw ConfigError("synth: channels must be 1 or 3");
}

SynthCorpus gen_corpus(const SynthConfig& cfg, int n_workers) {
    cfg.validate();
    const auto bumps = draw_bumps(cfg);

    SynthCorpus corpus;
    corpus.grid = cfg.grid;
    const std::size_t n_tiles =
        static_cast<std::size_t>(cfg.grid.rows) * static_cast<std::size_t>(cfg.grid.cols);

    corpus.true_field.resize(n_tiles);
    for (std::int32_t r = 0; r < cfg.grid.rows; ++r)
        for (std::int32_t c = 0; c < cfg.grid.cols; ++c)
            corpus.true_field[static_cast<std::size_t>(r) * cfg.grid.cols + c] =
                field_at(cfg, bumps, r + 0.5, c + 0.5);

    corpus.homes.resize(cfg.n_homes);
    parallel_for(0, cfg.n_homes, n_workers, [&](std::size_t i) {
        rng::Stream stream(rng::stream_key(cfg.seed, "synth.home", i));
        const double ru = stream.next_uniform(0.0, cfg.grid.rows);
        const double cu = stream.next_uniform(0.0, cfg.grid.cols);
        const double log_price = field_at(cfg, bumps, ru, cu) + cfg.noise_sd * stream.next_normal();
        auto& home = corpus.homes[i];
        home.id = "h" + std::to_string(i);
        home.point = cfg.grid.point_at(ru, cu);
        home.price = std::exp(log_price);
    });

    const int side = cfg.grid.pixels_per_side();
    const auto motifs = cfg.n_texture_motifs > 0 ? draw_motifs(cfg) : std::vector<Motif>{};
    corpus.tiles.resize(n_tiles);
    parallel_for(0, n_tiles, n_workers, [&](std::size_t t) {
        rng::Stream stream(rng::stream_key(cfg.seed, "synth.tile", t));
        auto& tile = corpus.tiles[t];
        tile.id = geo::TileId{static_cast<std::int32_t>(t / cfg.grid.cols),
                              static_cast<std::int32_t>(t % cfg.grid.cols)};
        tile.height = side;
        tile.width = side;
        tile.channels = cfg.channels;
        tile.pixels.resize(static_cast<std::size_t>(side) * side * cfg.channels);
        const double mean_intensity =
            cfg.image_base_intensity +
            cfg.image_signal_gain * (corpus.true_field[t] - cfg.field_mean);

        const Motif* motif = nullptr;
        double grating_amp = 0.0, phase = 0.0, wave_r = 0.0, wave_c = 0.0;
        if (!motifs.empty()) {
            motif = nearest_motif(motifs, tile.id.row + 0.5, tile.id.col + 0.5);
            grating_amp = cfg.motif_amplitude *
                          std::exp(motif->slope * (corpus.true_field[t] - cfg.field_mean));
            phase = stream.next_uniform(0.0, 2.0 * std::numbers::pi);
            const double k = 2.0 * std::numbers::pi / motif->wavelength;
            wave_r = k * std::sin(motif->theta);
            wave_c = k * std::cos(motif->theta);
        }

        std::size_t p = 0;
        for (int y = 0; y < side; ++y)
            for (int x = 0; x < side; ++x) {
                const double grating =
                    motif ? grating_amp * std::sin(wave_r * y + wave_c * x + phase) : 0.0;
                for (int ch = 0; ch < cfg.channels; ++ch, ++p) {
                    const double v = std::clamp(
                        mean_intensity + grating + cfg.image_noise_sd * stream.next_normal(), 0.0,
                        255.0);
                    tile.pixels[p] = static_cast<std::uint8_t>(std::lround(v));
                }
            }
    });
    return corpus;
}

void write_corpus(const std::filesystem::path& dir, const SynthCorpus& corpus, int n_workers) {
    std::filesystem::create_directories(dir / "tiles");

    std::ofstream homes(dir / "homes.csv");
    if (!homes) throw DataError("cannot write " + (dir / "homes.csv").string());
    homes << "id,lat,lon,price\n";
    for (const auto& h : corpus.homes)
        homes << h.id << ',' << fmt_full(h.point.lat) << ',' << fmt_full(h.point.lon) << ','
              << fmt_full(h.price) << '\n';
    homes.close();
    if (!homes) throw DataError("write failed for " + (dir / "homes.csv").string());

    geo::save_manifest(dir, corpus.grid);

    parallel_for(0, corpus.tiles.size(), n_workers, [&](std::size_t t) {
        const auto& tile = corpus.tiles[t];
        png_io::Image img{tile.height, tile.width, tile.channels, tile.pixels};
        png_io::write_png(geo::tile_png_path(dir, tile.id), img);
    });

    nlohmann::json truth{{"rows", corpus.grid.rows},
                         {"cols", corpus.grid.cols},
                         {"field", corpus.true_field}};
    save_json_file(dir / "truth.json", truth);
}

nlohmann::json synth_config_to_json(const SynthConfig& cfg) {
    return {{"n_homes", cfg.n_homes},
            {"grid",
             {{"origin_lat", cfg.grid.origin.lat},
              {"origin_lon", cfg.grid.origin.lon},
              {"tile_size_m", cfg.grid.tile_size_m},
              {"meters_per_pixel", cfg.grid.meters_per_pixel},
              {"rows", cfg.grid.rows},
              {"cols", cfg.grid.cols}}},
            {"n_price_bumps", cfg.n_price_bumps},
            {"bump_amplitude", cfg.bump_amplitude},
            {"bump_width_min", cfg.bump_width_min},
            {"bump_width_max", cfg.bump_width_max},
            {"noise_sd", cfg.noise_sd},
            {"field_mean", cfg.field_mean},
            {"image_signal_gain", cfg.image_signal_gain},
            {"image_noise_sd", cfg.image_noise_sd},
            {"image_base_intensity", cfg.image_base_intensity},
            {"n_texture_motifs", cfg.n_texture_motifs},
            {"motif_amplitude", cfg.motif_amplitude},
            {"channels", cfg.channels},
            {"seed", cfg.seed}};
}

SynthConfig synth_config_from_json(const nlohmann::json& j) {
    SynthConfig cfg;
    try {
        cfg.n_homes = j.at("n_homes").get<std::size_t>();
        const auto& g = j.at("grid");
        cfg.grid.origin.lat = g.at("origin_lat").get<double>();
        cfg.grid.origin.lon = g.at("origin_lon").get<double>();
        cfg.grid.tile_size_m = g.at("tile_size_m").get<double>();
        cfg.grid.meters_per_pixel = g.at("meters_per_pixel").get<double>();
        cfg.grid.rows = g.at("rows").get<std::int32_t>();
        cfg.grid.cols = g.at("cols").get<std::int32_t>();
        cfg.n_price_bumps = j.value("n_price_bumps", cfg.n_price_bumps);
        cfg.bump_amplitude = j.value("bump_amplitude", cfg.bump_amplitude);
        cfg.bump_width_min = j.value("bump_width_min", cfg.bump_width_min);
        cfg.bump_width_max = j.value("bump_width_max", cfg.bump_width_max);
        cfg.noise_sd = j.value("noise_sd", cfg.noise_sd);
        cfg.field_mean = j.value("field_mean", cfg.field_mean);
        cfg.image_signal_gain = j.value("image_signal_gain", cfg.image_signal_gain);
        cfg.image_noise_sd = j.value("image_noise_sd", cfg.image_noise_sd);
        cfg.image_base_intensity = j.value("image_base_intensity", cfg.image_base_intensity);
        cfg.n_texture_motifs = j.value("n_texture_motifs", cfg.n_texture_motifs);
        cfg.motif_amplitude = j.value("motif_amplitude", cfg.motif_amplitude);
        cfg.channels = j.value("channels", cfg.channels);
        cfg.seed = j.value("seed", cfg.seed);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad synth config: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

}  // namespace geoprobe::synth
