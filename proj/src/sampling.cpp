#include "geoprobe/sampling.hpp"

#include <algorithm>
#include <cmath>

#include "geoprobe/errors.hpp"
#include "geoprobe/json_util.hpp"
#include "geoprobe/rng.hpp"

namespace geoprobe::sampling {

namespace {

// Population in canonical (tile id) order, so draws are independent of input
// ordering.
std::vector<const geo::LabeledTile*> canonical(const std::vector<geo::LabeledTile>& pop) {
    if (pop.empty()) throw DataError("sample: empty population");
    std::vector<const geo::LabeledTile*> sorted(pop.size());
    for (std::size_t i = 0; i < pop.size(); ++i) sorted[i] = &pop[i];
    std::sort(sorted.begin(), sorted.end(),
              [](const geo::LabeledTile* a, const geo::LabeledTile* b) { return a->id < b->id; });
    for (std::size_t i = 1; i < sorted.size(); ++i)
        if (sorted[i - 1]->id == sorted[i]->id)
            throw DataError("sample: duplicate tile id " + sorted[i]->id.str());
    return sorted;
}

// UAR without replacement over an already-canonical pool. All schemes share
// this stream tag, so a vacuous stratification boundary reproduces plain UAR
// bit for bit.
std::vector<geo::TileId> draw_uar(const std::vector<const geo::LabeledTile*>& pool,
                                  std::size_t n, std::uint64_t seed) {
    rng::Stream stream(rng::stream_key(seed, "sample.uar"));
    const auto idx = rng::draw_without_replacement(pool.size(), n, stream);
    std::vector<geo::TileId> ids(n);
    for (std::size_t i = 0; i < n; ++i) ids[i] = pool[idx[i]]->id;
    return ids;
}

double coord(const geo::LabeledTile& t, bool use_lat) {
    return use_lat ? t.centroid.lat : t.centroid.lon;
}

double median_coord(const std::vector<const geo::LabeledTile*>& pool, bool use_lat) {
    std::vector<double> values(pool.size());
    for (std::size_t i = 0; i < pool.size(); ++i) values[i] = coord(*pool[i], use_lat);
    std::sort(values.begin(), values.end());
    const std::size_t m = values.size() / 2;
    return values.size() % 2 == 1 ? values[m] : 0.5 * (values[m - 1] + values[m]);
}

SampleResult strat_sample(const std::vector<geo::LabeledTile>& pop, std::size_t n,
                          std::optional<double> boundary, Side side, std::uint64_t seed,
                          bool use_lat) {
    if (n < 1) throw ConfigError("sample: n must be >= 1");
    const auto pool = canonical(pop);
    const double cut = boundary ? *boundary : median_coord(pool, use_lat);
    if (!std::isfinite(cut)) throw ConfigError("sample: boundary must be finite");

    std::vector<const geo::LabeledTile*> eligible;
    for (const auto* t : pool) {
        const double c = coord(*t, use_lat);
        if (side == Side::Low ? c < cut : c > cut) eligible.push_back(t);
    }
    if (eligible.size() < n)
        throw InfeasibleError("sample: " + std::string(use_lat ? "latitude" : "longitude") +
                              " stratum holds " + std::to_string(eligible.size()) +
                              " tiles, need " + std::to_string(n));

    SampleResult result;
    result.plan.scheme = use_lat ? Scheme::LatStrat : Scheme::LonStrat;
    result.plan.n = n;
    result.plan.seed = seed;
    result.plan.boundary = cut;
    result.plan.side = side;
    result.tile_ids = draw_uar(eligible, n, seed);
    return result;
}

}  // namespace

std::string scheme_name(Scheme scheme) {
    switch (scheme) {
        case Scheme::UAR: return "uar";
        case Scheme::Cluster: return "cluster";
        case Scheme::LatStrat: return "lat";
        case Scheme::LonStrat: return "lon";
    }
    return "?";
}

Scheme scheme_from_name(const std::string& name) {
    if (name == "uar") return Scheme::UAR;
    if (name == "cluster") return Scheme::Cluster;
    if (name == "lat") return Scheme::LatStrat;
    if (name == "lon") return Scheme::LonStrat;
    throw ConfigError("unknown sampling scheme '" + name + "'");
}

std::string side_name(Side side) { return side == Side::Low ? "low" : "high"; }

Side side_from_name(const std::string& name) {
    if (name == "low") return Side::Low;
    if (name == "high") return Side::High;
    throw ConfigError("side must be 'low' or 'high', got '" + name + "'");
}

void SamplePlan::validate() const {
    if (n < 1) throw ConfigError("sample plan: n must be >= 1");
    if (scheme == Scheme::Cluster && k_clusters < 1)
        throw ConfigError("sample plan: k_clusters must be >= 1");
    if (boundary && !std::isfinite(*boundary))
        throw ConfigError("sample plan: boundary must be finite");
}

SampleResult sample_uar(const std::vector<geo::LabeledTile>& pop, std::size_t n,
                        std::uint64_t seed) {
    if (n < 1) throw ConfigError("sample: n must be >= 1");
    const auto pool = canonical(pop);
    if (n > pool.size())
        throw InfeasibleError("sample: requested " + std::to_string(n) + " of " +
                              std::to_string(pool.size()) + " tiles");
    SampleResult result;
    result.plan.scheme = Scheme::UAR;
    result.plan.n = n;
    result.plan.seed = seed;
    result.tile_ids = draw_uar(pool, n, seed);
    return result;
}

SampleResult sample_cluster(const std::vector<geo::LabeledTile>& pop, std::size_t n, int k,
                            std::uint64_t seed) {
    if (n < 1) throw ConfigError("sample: n must be >= 1");
    if (k < 1) throw ConfigError("sample: k_clusters must be >= 1");
    const auto pool = canonical(pop);
    if (n > pool.size())
        throw InfeasibleError("sample: requested " + std::to_string(n) + " of " +
                              std::to_string(pool.size()) + " tiles");
    if (static_cast<std::size_t>(k) > n)
        throw InfeasibleError("sample: k_clusters " + std::to_string(k) + " exceeds n " +
                              std::to_string(n));

    // Centers come from their own substream so they stay fixed as n grows
    // along a learning curve.
    rng::Stream center_stream(rng::stream_key(seed, "sample.cluster.centers"));
    const auto center_idx =
        rng::draw_without_replacement(pool.size(), static_cast<std::size_t>(k), center_stream);

    SampleResult result;
    result.plan.scheme = Scheme::Cluster;
    result.plan.n = n;
    result.plan.seed = seed;
    result.plan.k_clusters = k;
    result.cluster_centers.reserve(center_idx.size());
    for (const std::size_t c : center_idx)
        result.cluster_centers.push_back(pool[c]->centroid);

    // Per-center preference order: by haversine distance, ties by tile id
    // (pool is already id-sorted, so a stable sort by distance suffices).
    std::vector<std::vector<std::uint32_t>> preference(center_idx.size());
    std::vector<double> dist(pool.size());
    for (std::size_t c = 0; c < center_idx.size(); ++c) {
        const geo::GeoPoint center = result.cluster_centers[c];
        for (std::size_t i = 0; i < pool.size(); ++i)
            dist[i] = geo::haversine_m(center, pool[i]->centroid);
        auto& order = preference[c];
        order.resize(pool.size());
        for (std::size_t i = 0; i < pool.size(); ++i) order[i] = static_cast<std::uint32_t>(i);
        std::stable_sort(order.begin(), order.end(),
                         [&](std::uint32_t a, std::uint32_t b) { return dist[a] < dist[b]; });
    }

    // Quotas ceil(n/k) for the first n%k centers (in draw order), floor(n/k)
    // for the rest; claiming proceeds round-robin, one tile per turn.
    std::vector<std::size_t> quota(center_idx.size(), n / static_cast<std::size_t>(k));
    for (std::size_t c = 0; c < n % static_cast<std::size_t>(k); ++c) ++quota[c];

    std::vector<bool> claimed(pool.size(), false);
    std::vector<std::size_t> cursor(center_idx.size(), 0);
    result.tile_ids.reserve(n);
    std::size_t remaining = n;
    while (remaining > 0) {
        for (std::size_t c = 0; c < center_idx.size() && remaining > 0; ++c) {
            if (quota[c] == 0) continue;
            auto& pos = cursor[c];
            while (claimed[preference[c][pos]]) ++pos;
            const std::uint32_t pick = preference[c][pos];
            claimed[pick] = true;
            result.tile_ids.push_back(pool[pick]->id);
            --quota[c];
            --remaining;
        }
    }
    return result;
}

SampleResult sample_lat_strat(const std::vector<geo::LabeledTile>& pop, std::size_t n,
                              std::optional<double> boundary, Side side, std::uint64_t seed) {
    return strat_sample(pop, n, boundary, side, seed, true);
}

SampleResult sample_lon_strat(const std::vector<geo::LabeledTile>& pop, std::size_t n,
                              std::optional<double> boundary, Side side, std::uint64_t seed) {
    return strat_sample(pop, n, boundary, side, seed, false);
}

SampleResult draw(const std::vector<geo::LabeledTile>& pop, const SamplePlan& plan) {
    plan.validate();
    switch (plan.scheme) {
        case Scheme::UAR: return sample_uar(pop, plan.n, plan.seed);
        case Scheme::Cluster: return sample_cluster(pop, plan.n, plan.k_clusters, plan.seed);
        case Scheme::LatStrat:
            return sample_lat_strat(pop, plan.n, plan.boundary, plan.side, plan.seed);
        case Scheme::LonStrat:
            return sample_lon_strat(pop, plan.n, plan.boundary, plan.side, plan.seed);
    }
    throw ConfigError("sample: unknown scheme");
}

nlohmann::json plan_to_json(const SamplePlan& plan) {
    nlohmann::json j{{"scheme", scheme_name(plan.scheme)},
                     {"n", plan.n},
                     {"seed", plan.seed}};
    if (plan.scheme == Scheme::Cluster) j["k_clusters"] = plan.k_clusters;
    if (plan.scheme == Scheme::LatStrat || plan.scheme == Scheme::LonStrat) {
        if (plan.boundary) j["boundary"] = *plan.boundary;
        j["side"] = side_name(plan.side);
    }
    return j;
}

SamplePlan plan_from_json(const nlohmann::json& j) {
    SamplePlan plan;
    try {
        plan.scheme = scheme_from_name(j.at("scheme").get<std::string>());
        plan.n = j.value("n", plan.n);
        plan.seed = j.value("seed", plan.seed);
        plan.k_clusters = j.value("k_clusters", plan.k_clusters);
        if (j.contains("boundary")) plan.boundary = j.at("boundary").get<double>();
        if (j.contains("side")) plan.side = side_from_name(j.at("side").get<std::string>());
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad sample plan: ") + e.what());
    }
    return plan;
}

void save_sample(const std::filesystem::path& path, const SampleResult& result) {
    nlohmann::json j = plan_to_json(result.plan);
    j["tile_ids"] = tile_ids_to_json(result.tile_ids);
    if (result.plan.scheme == Scheme::Cluster) {
        nlohmann::json centers = nlohmann::json::array();
        for (const auto& c : result.cluster_centers)
            centers.push_back(nlohmann::json::array({c.lat, c.lon}));
        j["cluster_centers"] = centers;
    }
    save_json_file(path, j);
}

SampleResult load_sample(const std::filesystem::path& path) {
    const auto j = load_json_file(path);
    SampleResult result;
    result.plan = plan_from_json(j);
    try {
        result.tile_ids = tile_ids_from_json(j.at("tile_ids"));
        if (j.contains("cluster_centers"))
            for (const auto& c : j.at("cluster_centers"))
                result.cluster_centers.push_back(
                    geo::GeoPoint{c.at(0).get<double>(), c.at(1).get<double>()});
    } catch (const nlohmann::json::exception& e) {
        throw DataError("bad sample file " + path.string() + ": " + e.what());
    }
    return result;
}

}  // namespace geoprobe::sampling
