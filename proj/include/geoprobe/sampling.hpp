#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "geoprobe/geo.hpp"
#include "json.hpp"

namespace geoprobe::sampling {

enum class Scheme { UAR, Cluster, LatStrat, LonStrat };
enum class Side { Low, High };

std::string scheme_name(Scheme scheme);  // "uar", "cluster", "lat", "lon"
Scheme scheme_from_name(const std::string& name);
std::string side_name(Side side);
Side side_from_name(const std::string& name);

struct SamplePlan {
    Scheme scheme = Scheme::UAR;
    std::size_t n = 1;
    std::uint64_t seed = 0;
    int k_clusters = 1;               // Cluster only
    std::optional<double> boundary;   // strat schemes; empty = population median
    Side side = Side::Low;            // strat schemes

    void validate() const;
    bool operator==(const SamplePlan&) const = default;
};

struct SampleResult {
    SamplePlan plan;                              // boundary resolved to the value used
    std::vector<geo::TileId> tile_ids;            // draw order, no duplicates
    std::vector<geo::GeoPoint> cluster_centers;   // Cluster only
};

// All draws canonicalize the population by tile-id sort first, so results do
// not depend on input order. Infeasible requests (pool too small, k > n)
// throw InfeasibleError.
SampleResult sample_uar(const std::vector<geo::LabeledTile>& pop, std::size_t n,
                        std::uint64_t seed);

// k center tiles drawn UAR from a dedicated substream (centers stay put as n
// grows); each center claims its nearest unclaimed tiles round-robin, ties by
// tile id, with per-center quotas of ceil(n/k) or floor(n/k).
SampleResult sample_cluster(const std::vector<geo::LabeledTile>& pop, std::size_t n, int k,
                            std::uint64_t seed);

// UAR among tiles whose centroid latitude is strictly on the chosen side of
// the boundary (empty boundary = population median latitude).
SampleResult sample_lat_strat(const std::vector<geo::LabeledTile>& pop, std::size_t n,
                              std::optional<double> boundary, Side side, std::uint64_t seed);
SampleResult sample_lon_strat(const std::vector<geo::LabeledTile>& pop, std::size_t n,
                              std::optional<double> boundary, Side side, std::uint64_t seed);

SampleResult draw(const std::vector<geo::LabeledTile>& pop, const SamplePlan& plan);

void save_sample(const std::filesystem::path& path, const SampleResult& result);
SampleResult load_sample(const std::filesystem::path& path);

nlohmann::json plan_to_json(const SamplePlan& plan);
SamplePlan plan_from_json(const nlohmann::json& j);

}  // namespace geoprobe::sampling
