#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "geoprobe/geo.hpp"
#include "json.hpp"

namespace geoprobe::synth {

struct SynthConfig {
    std::size_t n_homes = 1000;
    geo::TileGrid grid;
    int n_price_bumps = 8;
    double bump_amplitude = 1.0;      // log-price units
    double bump_width_min = 2.0;      // tile lengths
    double bump_width_max = 10.0;
    double noise_sd = 0.25;           // log-price noise per home
    double field_mean = 12.0;         // global mean of the latent log-price field
    double image_signal_gain = 25.0;  // intensity per log-price unit above the mean
    double image_noise_sd = 20.0;     // pixel texture noise
    double image_base_intensity = 128.0;
    // Optional regional texture dialects: the AOI is split into Voronoi
    // regions, each with its own oriented grating whose amplitude tracks the
    // latent field with a region-specific slope. 0 disables the layer.
    int n_texture_motifs = 0;
    double motif_amplitude = 0.0;  // peak grating intensity at field == mean
    int channels = 1;
    std::uint64_t seed = 0;

    void validate() const;
    bool operator==(const SynthConfig&) const = default;
};

struct SynthCorpus {
    std::vector<geo::HomeRecord> homes;
    std::vector<geo::ImageTile> tiles;  // rows x cols, row-major
    std::vector<double> true_field;     // latent log price at each tile center
    geo::TileGrid grid;
};

// Latent field = field_mean + bump_amplitude * sum of signed Gaussian bumps
// (centers UAR in the AOI, widths UAR in [bump_width_min, bump_width_max]
// tile lengths, sign fair coin). Homes land UAR in the AOI with
// ln(price) = field + N(0, noise_sd).
// Tile pixels are base intensity + gain * (field - field_mean) + N(0,
// image_noise_sd), clamped to [0, 255]. With n_texture_motifs > 0 each tile
// also carries an oriented sinusoidal grating chosen by the nearest motif
// center (wavelength, orientation, and field-coupling slope per motif), with
// amplitude motif_amplitude * exp(slope * (field - field_mean)) and a random
// per-tile phase, so texture spectra vary by region and track the field.
// Every random draw comes from a counter-based stream keyed by
// (seed, purpose, index), so the output is a pure function of the config for
// any worker count.
SynthCorpus gen_corpus(const SynthConfig& cfg, int n_workers = 1);

// Standard corpus layout: homes.csv, manifest.json, tiles/tile_{row}_{col}.png,
// plus truth.json carrying the latent field for diagnostics.
void write_corpus(const std::filesystem::path& dir, const SynthCorpus& corpus,
                  int n_workers = 1);

nlohmann::json synth_config_to_json(const SynthConfig& cfg);
SynthConfig synth_config_from_json(const nlohmann::json& j);

}  // namespace geoprobe::synth
