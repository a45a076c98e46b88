#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "shapecodec/geometry.hpp"

namespace shapecodec::data {

struct DatasetEntry {
    geometry::ProceduralShape shape;
    std::uint64_t seed = 0;  // generator seed; regenerates the shape exactly
};

// Procedural dataset with a JSON manifest. Per-entry seeds derive from
// (dataset seed, index), so generation is shard-invariant and entries are
// regenerable one at a time.
struct Dataset {
    std::uint64_t seed = 0;
    std::vector<DatasetEntry> entries;

    static Dataset procedural(int count, std::uint64_t seed);

    nlohmann::json manifest() const;
    static Dataset from_manifest(const nlohmann::json& j);

    void save(const std::string& path) const;
    static Dataset load(const std::string& path);
};

nlohmann::json shape_to_json(const geometry::ProceduralShape& s);
geometry::ProceduralShape shape_from_json(const nlohmann::json& j);

}  // namespace shapecodec::data
