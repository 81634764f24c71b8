#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "geoprobe/geo.hpp"
#include "json.hpp"

namespace geoprobe::features {

// --- configs ------------------------------------------------------------------

struct GistConfig {
    int resize = 128;          // working image side, must be divisible by grid
    int n_scales = 4;          // log-spaced center frequencies
    int n_orientations = 8;    // evenly spaced in [0, pi)
    int grid = 4;              // pooling cells per side

    int dim() const { return n_scales * n_orientations * grid * grid; }
    void validate() const;
    bool operator==(const GistConfig&) const = default;
};

struct RandomConvConfig {
    int n_filters = 256;
    int patch = 8;             // square filter side, must be < tile side
    double bias = 0.0;         // ReLU threshold
    int pool_grid = 2;         // pooling cells per side of the valid response map
    int channels = 1;          // must match the tiles being featurized
    std::uint64_t seed = 0;

    int dim() const { return n_filters * pool_grid * pool_grid; }
    void validate() const;
    bool operator==(const RandomConvConfig&) const = default;
};

// Random filters, each zero-mean and unit Frobenius norm. Layout is
// filter-major: weights[((f * C + c) * patch + y) * patch + x].
struct FilterBank {
    RandomConvConfig cfg;
    std::vector<double> weights;
    std::string provenance;  // hash of (config, seed)

    std::span<const double> filter(int f) const {
        const std::size_t sz = static_cast<std::size_t>(cfg.channels) * cfg.patch * cfg.patch;
        return {weights.data() + static_cast<std::size_t>(f) * sz, sz};
    }
};

// --- feature matrix -----------------------------------------------------------

struct FeatureMatrix {
    std::size_t n = 0;
    std::size_t d = 0;
    std::vector<float> values;           // row-major n x d
    std::vector<geo::TileId> row_ids;    // sorted ascending
    std::string featurizer_tag;

    float at(std::size_t row, std::size_t col) const { return values[row * d + col]; }
    // Row lookup; throws DataError when an id is absent.
    std::size_t row_of(const geo::TileId& id) const;
    bool operator==(const FeatureMatrix&) const = default;
};

// Rows for the given ids (in the ids' order) as a dense double matrix.
Eigen::MatrixXd rows_as_matrix(const FeatureMatrix& fm, std::span<const geo::TileId> ids);

// --- featurizers ----------------------------------------------------------------

// Shared preprocessing for the scene descriptor: luma conversion
// (0.299/0.587/0.114) followed by bilinear resize to cfg.resize square.
// Values stay on the 0..255 scale.
std::vector<double> gist_preprocess(const geo::ImageTile& tile, const GistConfig& cfg);

// Frequency-domain transfer function of one oriented band-pass (Gabor-style)
// filter of the bank: log-Gaussian radial profile around the scale's center
// frequency, Gaussian angular profile around the orientation, zero DC gain.
// Row-major cfg.resize^2 grid in DFT bin order.
std::vector<double> gist_filter(const GistConfig& cfg, int scale, int orientation);

// Scene descriptor: filter the preprocessed image with every bank filter in
// the frequency domain and average the squared response magnitude over a
// grid x grid cell partition. Output is scale-major, then orientation, then
// cell row-major; length cfg.dim().
std::vector<double> gist(const geo::ImageTile& tile, const GistConfig& cfg);

FilterBank make_filter_bank(const RandomConvConfig& cfg);

// Pixels scaled to [0,1], valid-mode convolution per filter, ReLU at
// cfg.bias, average pooling over pool_grid^2 near-equal cells. Output is
// filter-major, cell row-major; length cfg.dim().
std::vector<double> random_conv_features(const geo::ImageTile& tile, const FilterBank& bank,
                                         const RandomConvConfig& cfg);

// --- corpus pipeline -----------------------------------------------------------

enum class FeaturizerKind { Gist, RandConv, External };

struct FeaturizerSpec {
    FeaturizerKind kind = FeaturizerKind::Gist;
    GistConfig gist;
    RandomConvConfig randconv;
    std::filesystem::path external_path;

    std::string name() const;  // "gist", "randconv", "external"
    // Provenance tag: name plus a config hash, or "external:" + file digest.
    std::string tag() const;
    void validate() const;
};

nlohmann::json spec_to_json(const FeaturizerSpec& spec);
// {"type": "gist"|"randconv"|"external", ...config fields}; unknown fields
// keep their defaults, external requires "path".
FeaturizerSpec spec_from_json(const nlohmann::json& j);

struct FeaturizeOptions {
    int workers = 1;
    std::filesystem::path cache_dir;  // empty disables the on-disk cache
};

struct FeaturizeStats {
    std::size_t tiles_featurized = 0;  // 0 on a warm cache hit
    bool cache_hit = false;
    double tiles_per_second = 0.0;
};

// Featurizes every tile (rows in tile-id order). Results are bit-identical
// for any worker count. With a cache dir, reads a valid cached matrix or
// recomputes and atomically rewrites it; a corrupt or mismatched cache file
// is treated as a miss.
FeatureMatrix featurize_corpus(const std::vector<geo::ImageTile>& tiles,
                               const FeaturizerSpec& spec, const FeaturizeOptions& options,
                               FeaturizeStats* stats = nullptr);

// FMAT file plus "<file>.meta.json" sidecar carrying row ids and provenance.
void save_features(const std::filesystem::path& path, const FeatureMatrix& fm);
FeatureMatrix load_features(const std::filesystem::path& path);

// Ingests an externally computed matrix: either an FMAT file with an ids
// file (JSON list of [row, col], or anything with a "row_ids" field; pass an
// empty path to use the FMAT's own sidecar), or a CSV with header
// tile_id,f0,f1,... and inline "row_col" ids. Rows are re-sorted by tile id;
// non-finite values, duplicate ids, and id-count mismatches are errors.
FeatureMatrix load_external_features(const std::filesystem::path& matrix_file,
                                     const std::filesystem::path& ids_file = {});

}  // namespace geoprobe::features
