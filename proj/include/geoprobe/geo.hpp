#pragma once

#include <compare>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace geoprobe::geo {

inline constexpr double kEarthRadiusM = 6'371'000.0;

struct GeoPoint {
    double lat = 0.0;  // degrees, [-90, 90]
    double lon = 0.0;  // degrees, [-180, 180]

    bool operator==(const GeoPoint&) const = default;
};

bool valid_point(const GeoPoint& p);

// Great-circle distance in meters on a spherical earth.
double haversine_m(const GeoPoint& a, const GeoPoint& b);

struct HomeRecord {
    std::string id;
    GeoPoint point;
    double price = 0.0;        // strictly positive
    std::string date;          // optional ISO-8601 day, empty if absent

    bool operator==(const HomeRecord&) const = default;
};

struct TileId {
    std::int32_t row = 0;
    std::int32_t col = 0;

    auto operator<=>(const TileId&) const = default;
    std::string str() const { return std::to_string(row) + "_" + std::to_string(col); }
};

// Axis-aligned grid anchored at its NW corner. Row indices grow southward,
// column indices eastward. Cells are half-open so a point on a shared edge
// belongs to exactly one tile.
struct TileGrid {
    GeoPoint origin;               // NW corner
    double tile_size_m = 0.0;
    double meters_per_pixel = 0.0;
    std::int32_t rows = 0;
    std::int32_t cols = 0;

    void validate() const;

    int pixels_per_side() const;
    double lat_step_deg() const;
    double lon_step_deg() const;  // scaled by cos(origin latitude)

    std::optional<TileId> locate(const GeoPoint& p) const;
    GeoPoint centroid(const TileId& id) const;
    // Continuous grid coordinates (row, col units) -> geographic point.
    GeoPoint point_at(double row_units, double col_units) const;

    bool operator==(const TileGrid&) const = default;
};

// Row-major H x W x C, 8-bit, C in {1, 3}.
struct ImageTile {
    TileId id;
    int height = 0;
    int width = 0;
    int channels = 1;
    std::vector<std::uint8_t> pixels;

    std::uint8_t at(int y, int x, int c) const {
        return pixels[static_cast<std::size_t>((y * width + x) * channels + c)];
    }
    bool operator==(const ImageTile&) const = default;
};

struct ClassThresholds {
    double mu = 0.0;     // mean of ln(price) over all homes
    double sigma = 0.0;  // population standard deviation of ln(price)
    double t_low = 0.0;  // mu - sigma
    double t_high = 0.0; // mu + sigma
};

struct LabeledTile {
    TileId id;
    double mean_log_price = 0.0;
    int n_homes = 0;
    int label = 1;  // 0, 1, or 2
    GeoPoint centroid;
};

// --- operations -------------------------------------------------------------

// Parses the homes CSV (header id,lat,lon,price[,date]). Throws DataError on
// malformed rows, non-positive prices, out-of-range coordinates, duplicate
// ids; messages carry the 1-based line number.
std::vector<HomeRecord> load_homes(const std::filesystem::path& path);

struct AggregateResult {
    std::vector<LabeledTile> tiles;       // sorted by tile id, labels unassigned (=1)
    std::size_t skipped_outside = 0;      // homes outside the grid AOI
};

// Buckets homes onto grid tiles; mean_log_price is the arithmetic mean of
// ln(price) over the tile's homes. Tiles without homes are not emitted.
AggregateResult aggregate_labels(const std::vector<HomeRecord>& homes, const TileGrid& grid);

// mu/sigma of ln(price) over the full home-level corpus (population sd).
// Requires at least 2 homes.
ClassThresholds compute_thresholds(const std::vector<HomeRecord>& homes);

// 0 below t_low, 2 above t_high, else 1. Boundary values map to class 1.
int classify(double mean_log_price, const ClassThresholds& th);

void label_tiles(std::vector<LabeledTile>& tiles, const ClassThresholds& th);

struct SplitResult {
    std::uint64_t seed = 0;
    double buffer_m = 0.0;
    std::vector<TileId> test_ids;       // UAR draw, in canonical id order
    std::vector<TileId> train_ids;      // remainder after buffer discards
    std::vector<TileId> discarded_ids;  // within buffer_m of a test centroid
};

// Draws round(test_fraction * n) test tiles UAR without replacement, then
// discards remaining tiles whose centroid lies within buffer_m of any test
// centroid. Throws InfeasibleError if the train side comes out empty.
SplitResult spatial_split(const std::vector<LabeledTile>& tiles, double test_fraction,
                          double buffer_m, std::uint64_t seed);

// --- corpus files ------------------------------------------------------------

// Tiles manifest "manifest.json" inside a corpus directory, PNGs under tiles/.
void save_manifest(const std::filesystem::path& corpus_dir, const TileGrid& grid);
TileGrid load_manifest(const std::filesystem::path& corpus_dir);

std::filesystem::path tile_png_path(const std::filesystem::path& corpus_dir, const TileId& id);
// Throws DataError if the PNG is missing or its shape disagrees with the grid.
ImageTile load_tile_image(const std::filesystem::path& corpus_dir, const TileGrid& grid,
                          const TileId& id);

void save_split(const std::filesystem::path& path, const SplitResult& split);
SplitResult load_split(const std::filesystem::path& path);

// Labeled-tile set with its thresholds, as written by `geoprobe ingest`.
struct LabeledCorpus {
    ClassThresholds thresholds;
    std::size_t skipped_outside = 0;
    std::vector<LabeledTile> tiles;
};

void save_labeled(const std::filesystem::path& path, const LabeledCorpus& corpus);
LabeledCorpus load_labeled(const std::filesystem::path& path);

}  // namespace geoprobe::geo
