#include "geoprobe/geo.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>
#include <unordered_set>

#include "geoprobe/errors.hpp"
#include "geoprobe/json_util.hpp"
#include "geoprobe/png_io.hpp"
#include "geoprobe/rng.hpp"

namespace geoprobe::geo {

namespace {

constexpr double kDegToRad = std::numbers::pi / 180.0;
constexpr double kMetersPerDegLat = kEarthRadiusM * kDegToRad;

double parse_double(std::string_view field, std::size_t line_no, const char* what) {
    double value = 0.0;
    const char* begin = field.data();
    const char* end = begin + field.size();
    auto [ptr, ec] = std::from_chars(begin, end, value);
    if (ec != std::errc() || ptr != end)
        throw DataError("line " + std::to_string(line_no) + ": bad " + std::string(what) +
                        " value '" + std::string(field) + "'");
    if (!std::isfinite(value))
        throw DataError("line " + std::to_string(line_no) + ": non-finite " + std::string(what));
    return value;
}

std::vector<std::string_view> split_csv(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t comma = line.find(',', start);
        if (comma == std::string_view::npos) {
            out.push_back(line.substr(start));
            break;
        }
        out.push_back(line.substr(start, comma - start));
        start = comma + 1;
    }
    return out;
}

}  // namespace

bool valid_point(const GeoPoint& p) {
    return std::isfinite(p.lat) && std::isfinite(p.lon) && p.lat >= -90.0 && p.lat <= 90.0 &&
           p.lon >= -180.0 && p.lon <= 180.0;
}

double haversine_m(const GeoPoint& a, const GeoPoint& b) {
    const double phi1 = a.lat * kDegToRad;
    const double phi2 = b.lat * kDegToRad;
    const double dphi = (b.lat - a.lat) * kDegToRad;
    const double dlambda = (b.lon - a.lon) * kDegToRad;
    const double sp = std::sin(dphi / 2.0);
    const double sl = std::sin(dlambda / 2.0);
    const double h = sp * sp + std::cos(phi1) * std::cos(phi2) * sl * sl;
    return 2.0 * kEarthRadiusM * std::asin(std::min(1.0, std::sqrt(h)));
}

// --- TileGrid ----------------------------------------------------------------

void TileGrid::validate() const {
    if (!valid_point(origin)) throw ConfigError("grid origin out of range");
    if (rows <= 0 || cols <= 0) throw ConfigError("grid rows/cols must be positive");
    if (tile_size_m <= 0.0) throw ConfigError("tile_size_m must be positive");
    if (meters_per_pixel <= 0.0) throw ConfigError("meters_per_pixel must be positive");
    const double ratio = tile_size_m / meters_per_pixel;
    if (std::abs(ratio - std::round(ratio)) > 1e-9)
        throw ConfigError("tile_size_m must be an integer multiple of meters_per_pixel");
    if (origin.lat - rows * lat_step_deg() < -90.0)
        throw ConfigError("grid extends past the south pole");
    if (origin.lon + cols * lon_step_deg() > 180.0)
        throw ConfigError("grid extends past the antimeridian");
}

int TileGrid::pixels_per_side() const {
    return static_cast<int>(std::llround(tile_size_m / meters_per_pixel));
}

double TileGrid::lat_step_deg() const { return tile_size_m / kMetersPerDegLat; }

double TileGrid::lon_step_deg() const {
    return tile_size_m / (kMetersPerDegLat * std::cos(origin.lat * kDegToRad));
}

std::optional<TileId> TileGrid::locate(const GeoPoint& p) const {
    const double r = std::floor((origin.lat - p.lat) / lat_step_deg());
    const double c = std::floor((p.lon - origin.lon) / lon_step_deg());
    if (r < 0 || r >= rows || c < 0 || c >= cols) return std::nullopt;
    return TileId{static_cast<std::int32_t>(r), static_cast<std::int32_t>(c)};
}

GeoPoint TileGrid::centroid(const TileId& id) const {
    return point_at(id.row + 0.5, id.col + 0.5);
}

GeoPoint TileGrid::point_at(double row_units, double col_units) const {
    return GeoPoint{origin.lat - row_units * lat_step_deg(),
                    origin.lon + col_units * lon_step_deg()};
}

// --- homes CSV ---------------------------------------------------------------

std::vector<HomeRecord> load_homes(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open homes file " + path.string());

    std::string line;
    std::size_t line_no = 0;
    if (!std::getline(in, line)) throw DataError("homes file " + path.string() + " is empty");
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "id,lat,lon,price" && line != "id,lat,lon,price,date")
        throw DataError("homes file header must be id,lat,lon,price[,date], got '" + line + "'");

    std::vector<HomeRecord> homes;
    std::unordered_set<std::string> seen_ids;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;

        const auto fields = split_csv(line);
        if (fields.size() != 4 && fields.size() != 5)
            throw DataError("line " + std::to_string(line_no) + ": expected 4 or 5 fields, got " +
                            std::to_string(fields.size()));

        HomeRecord rec;
        rec.id = std::string(fields[0]);
        if (rec.id.empty()) throw DataError("line " + std::to_string(line_no) + ": empty id");
        if (!seen_ids.insert(rec.id).second)
            throw DataError("line " + std::to_string(line_no) + ": duplicate id '" + rec.id + "'");

        rec.point.lat = parse_double(fields[1], line_no, "lat");
        rec.point.lon = parse_double(fields[2], line_no, "lon");
        if (!valid_point(rec.point))
            throw DataError("line " + std::to_string(line_no) + ": coordinates out of range");
        rec.price = parse_double(fields[3], line_no, "price");
        if (rec.price <= 0.0)
            throw DataError("line " + std::to_string(line_no) + ": price must be positive");
        if (fields.size() == 5) rec.date = std::string(fields[4]);
        homes.push_back(std::move(rec));
    }
    return homes;
}

// --- aggregation and labels --------------------------------------------------

AggregateResult aggregate_labels(const std::vector<HomeRecord>& homes, const TileGrid& grid) {
    if (homes.empty()) throw DataError("aggregate_labels: empty homes list");
    grid.validate();

    struct Accum {
        double sum_log = 0.0;
        int count = 0;
    };
    std::map<TileId, Accum> buckets;
    std::size_t skipped = 0;
    for (const auto& home : homes) {
        const auto id = grid.locate(home.point);
        if (!id) {
            ++skipped;
            continue;
        }
        auto& acc = buckets[*id];
        acc.sum_log += std::log(home.price);
        acc.count += 1;
    }

    AggregateResult result;
    result.skipped_outside = skipped;
    result.tiles.reserve(buckets.size());
    for (const auto& [id, acc] : buckets) {
        LabeledTile tile;
        tile.id = id;
        tile.mean_log_price = acc.sum_log / acc.count;
        tile.n_homes = acc.count;
        tile.centroid = grid.centroid(id);
        result.tiles.push_back(tile);
    }
    return result;
}

ClassThresholds compute_thresholds(const std::vector<HomeRecord>& homes) {
    if (homes.size() < 2) throw DataError("compute_thresholds: need at least 2 homes");
    double sum = 0.0;
    for (const auto& h : homes) sum += std::log(h.price);
    const double mu = sum / static_cast<double>(homes.size());
    double ss = 0.0;
    for (const auto& h : homes) {
        const double d = std::log(h.price) - mu;
        ss += d * d;
    }
    const double sigma = std::sqrt(ss / static_cast<double>(homes.size()));
    return ClassThresholds{mu, sigma, mu - sigma, mu + sigma};
}

int classify(double mean_log_price, const ClassThresholds& th) {
    if (mean_log_price < th.t_low) return 0;
    if (mean_log_price > th.t_high) return 2;
    return 1;
}

void label_tiles(std::vector<LabeledTile>& tiles, const ClassThresholds& th) {
    for (auto& t : tiles) t.label = classify(t.mean_log_price, th);
}

// --- spatial split -----------------------------------------------------------

SplitResult spatial_split(const std::vector<LabeledTile>& tiles, double test_fraction,
                          double buffer_m, std::uint64_t seed) {
    if (tiles.empty()) throw DataError("spatial_split: empty tile list");
    if (!(test_fraction > 0.0 && test_fraction < 1.0))
        throw ConfigError("spatial_split: test_fraction must lie in (0, 1)");
    if (buffer_m < 0.0) throw ConfigError("spatial_split: buffer_m must be >= 0");

    // Canonical order; draws must not depend on ingestion order.
    std::vector<std::size_t> order(tiles.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return tiles[a].id < tiles[b].id; });

    const std::size_t n = tiles.size();
    const std::size_t n_test = static_cast<std::size_t>(
        std::llround(test_fraction * static_cast<double>(n)));

    rng::Stream stream(rng::stream_key(seed, "split.test"));
    const auto picked = rng::draw_without_replacement(n, n_test, stream);
    std::vector<char> is_test(n, 0);
    for (std::size_t p : picked) is_test[p] = 1;

    SplitResult split;
    split.seed = seed;
    split.buffer_m = buffer_m;
    std::vector<const LabeledTile*> test_tiles;
    for (std::size_t pos : order) {
        if (is_test[pos]) {
            split.test_ids.push_back(tiles[pos].id);
            test_tiles.push_back(&tiles[pos]);
        }
    }
    for (std::size_t pos : order) {
        if (is_test[pos]) continue;
        const auto& tile = tiles[pos];
        bool near_test = false;
        for (const auto* t : test_tiles) {
            if (haversine_m(tile.centroid, t->centroid) < buffer_m) {
                near_test = true;
                break;
            }
        }
        if (near_test)
            split.discarded_ids.push_back(tile.id);
        else
            split.train_ids.push_back(tile.id);
    }

    if (split.train_ids.empty())
        throw InfeasibleError("spatial_split: buffer of " + std::to_string(buffer_m) +
                              " m leaves no training tiles");
    return split;
}

// --- corpus files ------------------------------------------------------------

void save_manifest(const std::filesystem::path& corpus_dir, const TileGrid& grid) {
    nlohmann::json j{{"origin_lat", grid.origin.lat}, {"origin_lon", grid.origin.lon},
                     {"tile_size_m", grid.tile_size_m},
                     {"meters_per_pixel", grid.meters_per_pixel},
                     {"rows", grid.rows},          {"cols", grid.cols}};
    save_json_file(corpus_dir / "manifest.json", j);
}

TileGrid load_manifest(const std::filesystem::path& corpus_dir) {
    const auto j = load_json_file(corpus_dir / "manifest.json");
    TileGrid grid;
    try {
        grid.origin.lat = j.at("origin_lat").get<double>();
        grid.origin.lon = j.at("origin_lon").get<double>();
        grid.tile_size_m = j.at("tile_size_m").get<double>();
        grid.meters_per_pixel = j.at("meters_per_pixel").get<double>();
        grid.rows = j.at("rows").get<std::int32_t>();
        grid.cols = j.at("cols").get<std::int32_t>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError("bad tiles manifest: " + std::string(e.what()));
    }
    grid.validate();
    return grid;
}

std::filesystem::path tile_png_path(const std::filesystem::path& corpus_dir, const TileId& id) {
    return corpus_dir / "tiles" /
           ("tile_" + std::to_string(id.row) + "_" + std::to_string(id.col) + ".png");
}

ImageTile load_tile_image(const std::filesystem::path& corpus_dir, const TileGrid& grid,
                          const TileId& id) {
    const auto path = tile_png_path(corpus_dir, id);
    if (!std::filesystem::exists(path))
        throw DataError("missing tile image " + path.string());
    const auto img = png_io::read_png(path);
    const int side = grid.pixels_per_side();
    if (img.height != side || img.width != side)
        throw DataError("tile image " + path.string() + " is " + std::to_string(img.width) + "x" +
                        std::to_string(img.height) + ", expected " + std::to_string(side) + "x" +
                        std::to_string(side));
    ImageTile tile;
    tile.id = id;
    tile.height = img.height;
    tile.width = img.width;
    tile.channels = img.channels;
    tile.pixels = std::move(img.pixels);
    return tile;
}

void save_split(const std::filesystem::path& path, const SplitResult& split) {
    nlohmann::json j{{"seed", split.seed},
                     {"buffer_m", split.buffer_m},
                     {"test_ids", tile_ids_to_json(split.test_ids)},
                     {"train_ids", tile_ids_to_json(split.train_ids)},
                     {"discarded_ids", tile_ids_to_json(split.discarded_ids)}};
    save_json_file(path, j);
}

SplitResult load_split(const std::filesystem::path& path) {
    const auto j = load_json_file(path);
    SplitResult split;
    try {
        split.seed = j.at("seed").get<std::uint64_t>();
        split.buffer_m = j.at("buffer_m").get<double>();
        split.test_ids = tile_ids_from_json(j.at("test_ids"));
        split.train_ids = tile_ids_from_json(j.at("train_ids"));
        split.discarded_ids = tile_ids_from_json(j.at("discarded_ids"));
    } catch (const nlohmann::json::exception& e) {
        throw DataError("bad split file: " + std::string(e.what()));
    }
    return split;
}

void save_labeled(const std::filesystem::path& path, const LabeledCorpus& corpus) {
    nlohmann::json tiles = nlohmann::json::array();
    for (const auto& t : corpus.tiles) {
        tiles.push_back({{"tile_id", tile_id_to_json(t.id)},
                         {"mean_log_price", t.mean_log_price},
                         {"n_homes", t.n_homes},
                         {"label", t.label},
                         {"centroid", {{"lat", t.centroid.lat}, {"lon", t.centroid.lon}}}});
    }
    nlohmann::json j{{"thresholds",
                      {{"mu", corpus.thresholds.mu},
                       {"sigma", corpus.thresholds.sigma},
                       {"t_low", corpus.thresholds.t_low},
                       {"t_high", corpus.thresholds.t_high}}},
                     {"skipped_out_of_aoi", corpus.skipped_outside},
                     {"tiles", tiles}};
    save_json_file(path, j);
}

LabeledCorpus load_labeled(const std::filesystem::path& path) {
    const auto j = load_json_file(path);
    LabeledCorpus corpus;
    try {
        const auto& th = j.at("thresholds");
        corpus.thresholds.mu = th.at("mu").get<double>();
        corpus.thresholds.sigma = th.at("sigma").get<double>();
        corpus.thresholds.t_low = th.at("t_low").get<double>();
        corpus.thresholds.t_high = th.at("t_high").get<double>();
        corpus.skipped_outside = j.at("skipped_out_of_aoi").get<std::size_t>();
        for (const auto& e : j.at("tiles")) {
            LabeledTile t;
            t.id = tile_id_from_json(e.at("tile_id"));
            t.mean_log_price = e.at("mean_log_price").get<double>();
            t.n_homes = e.at("n_homes").get<int>();
            t.label = e.at("label").get<int>();
            t.centroid.lat = e.at("centroid").at("lat").get<double>();
            t.centroid.lon = e.at("centroid").at("lon").get<double>();
            corpus.tiles.push_back(t);
        }
    } catch (const nlohmann::json::exception& e) {
        throw DataError("bad labeled-tiles file: " + std::string(e.what()));
    }
    return corpus;
}

}  // namespace geoprobe::geo
