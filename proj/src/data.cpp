#include "shapecodec/data.hpp"

#include <fstream>

#include "shapecodec/errors.hpp"

namespace shapecodec::data {

using geometry::ProceduralShape;
using geometry::ShapeKind;
using nlohmann::json;

json shape_to_json(const ProceduralShape& s) {
    json j;
    j["kind"] = geometry::to_string(s.kind);
    switch (s.kind) {
        case ShapeKind::Sphere:
            j["center"] = {s.center.x(), s.center.y(), s.center.z()};
            j["radius"] = s.radius;
            break;
        case ShapeKind::Box:
            j["center"] = {s.center.x(), s.center.y(), s.center.z()};
            j["half_extents"] = {s.half_extents.x(), s.half_extents.y(), s.half_extents.z()};
            break;
        case ShapeKind::Capsule:
            j["a"] = {s.cap_a.x(), s.cap_a.y(), s.cap_a.z()};
            j["b"] = {s.cap_b.x(), s.cap_b.y(), s.cap_b.z()};
            j["radius"] = s.radius;
            break;
        case ShapeKind::Torus:
            j["center"] = {s.center.x(), s.center.y(), s.center.z()};
            j["major_radius"] = s.major_radius;
            j["minor_radius"] = s.radius;
            break;
        case ShapeKind::Union: {
            json parts = json::array();
            for (const auto& p : s.parts) parts.push_back(shape_to_json(p));
            j["parts"] = parts;
            break;
        }
    }
    return j;
}

namespace {

geometry::Vec3 vec3_from(const json& j) {
    if (!j.is_array() || j.size() != 3) throw DataError("expected a 3-element array");
    return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

}  // namespace

ProceduralShape shape_from_json(const json& j) {
    ProceduralShape s;
    s.kind = geometry::shape_kind_from_string(j.at("kind").get<std::string>());
    switch (s.kind) {
        case ShapeKind::Sphere:
            s.center = vec3_from(j.at("center"));
            s.radius = j.at("radius").get<double>();
            break;
        case ShapeKind::Box:
            s.center = vec3_from(j.at("center"));
            s.half_extents = vec3_from(j.at("half_extents"));
            break;
        case ShapeKind::Capsule:
            s.cap_a = vec3_from(j.at("a"));
            s.cap_b = vec3_from(j.at("b"));
            s.radius = j.at("radius").get<double>();
            break;
        case ShapeKind::Torus:
            s.center = vec3_from(j.at("center"));
            s.major_radius = j.at("major_radius").get<double>();
            s.radius = j.at("minor_radius").get<double>();
            break;
        case ShapeKind::Union:
            for (const auto& p : j.at("parts")) s.parts.push_back(shape_from_json(p));
            break;
    }
    return s;
}

Dataset Dataset::procedural(int count, std::uint64_t seed) {
    Dataset ds;
    ds.seed = seed;
    ds.entries.reserve(static_cast<size_t>(count));
    for (int i = 0; i < count; ++i) {
        DatasetEntry e;
        e.seed = mix_seed(seed, static_cast<std::uint64_t>(i), 0x5a17);
        RandomStream rng(e.seed);
        e.shape = geometry::make_random_shape(rng);
        ds.entries.push_back(std::move(e));
    }
    return ds;
}

json Dataset::manifest() const {
    json j;
    j["seed"] = seed;
    j["count"] = entries.size();
    json shapes = json::array();
    for (const auto& e : entries) {
        json s = shape_to_json(e.shape);
        s["seed"] = e.seed;
        shapes.push_back(std::move(s));
    }
    j["shapes"] = std::move(shapes);
    return j;
}

Dataset Dataset::from_manifest(const json& j) {
    Dataset ds;
    ds.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& s : j.at("shapes")) {
        DatasetEntry e;
        e.seed = s.at("seed").get<std::uint64_t>();
        e.shape = shape_from_json(s);
        ds.entries.push_back(std::move(e));
    }
    if (j.contains("count") && j.at("count").get<size_t>() != ds.entries.size())
        throw DataError("manifest count does not match the shape list");
    return ds;
}

void Dataset::save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write manifest: " + path);
    out << manifest().dump(2) << '\n';
}

Dataset Dataset::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read manifest: " + path);
    json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw DataError("malformed manifest " + path + ": " + e.what());
    }
    return from_manifest(j);
}

}  // namespace shapecodec::data
