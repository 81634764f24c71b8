#pragma once

#include <filesystem>
#include <fstream>
#include <vector>

#include "geoprobe/errors.hpp"
#include "geoprobe/geo.hpp"
#include "json.hpp"

namespace geoprobe {

inline nlohmann::json load_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("bad JSON in " + path.string() + ": " + e.what());
    }
    return j;
}

inline void save_json_file(const std::filesystem::path& path, const nlohmann::json& j, int indent = 2) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << j.dump(indent) << '\n';
}

inline nlohmann::json tile_id_to_json(const geo::TileId& id) {
    return nlohmann::json::array({id.row, id.col});
}

inline geo::TileId tile_id_from_json(const nlohmann::json& j) {
    if (!j.is_array() || j.size() != 2) throw DataError("tile id must be a [row, col] pair");
    return geo::TileId{j[0].get<std::int32_t>(), j[1].get<std::int32_t>()};
}

inline nlohmann::json tile_ids_to_json(const std::vector<geo::TileId>& ids) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& id : ids) arr.push_back(tile_id_to_json(id));
    return arr;
}

inline std::vector<geo::TileId> tile_ids_from_json(const nlohmann::json& j) {
    std::vector<geo::TileId> ids;
    ids.reserve(j.size());
    for (const auto& e : j) ids.push_back(tile_id_from_json(e));
    return ids;
}

}  // namespace geoprobe
