#pragma once

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "shapecodec/geometry.hpp"

namespace shapecodec::mesh {

using geometry::Points;
using geometry::Vec3;

struct Mesh {
    std::vector<Vec3> vertices;
    std::vector<std::array<int, 3>> faces;

    bool empty() const { return faces.empty(); }
};

// ASCII OBJ, v/f records only. Faces with >3 corners are fan-triangulated on
// load; normals/texcoords in f records are ignored.
Mesh load_obj(const std::string& path);
void save_obj(const Mesh& m, const std::string& path);

// Centers the bounding box at the origin and scales the longest axis to
// span 2*(1-margin). Throws on empty or zero-extent meshes.
Mesh normalize_to_unit_cube(const Mesh& m, double margin);

// Drops faces whose area is below `tol`; remaps and compacts vertices.
Mesh cleanup(const Mesh& m, double area_tol = 1e-12);

// Inside/outside by ray-crossing parity, majority over 3 fixed ray
// directions with deterministic perturbation on degenerate hits. Throws
// DataError when the directions disagree on more than 1% of queries
// (open/self-intersecting mesh).
Eigen::VectorXd mesh_occupancy(const Mesh& m, const Points& queries);

// Per-query parity agreement across the 3 directions (for diagnostics and
// the direction-invariance property test).
double mesh_parity_agreement(const Mesh& m, const Points& queries);

Points sample_mesh_surface(const Mesh& m, int n, std::uint64_t seed);

double mesh_surface_area(const Mesh& m);

// Test/data helpers.
Mesh make_box_mesh(const Vec3& half_extents, const Vec3& center = Vec3::Zero());
Mesh make_icosphere(int subdivisions, double radius, const Vec3& center = Vec3::Zero());

}  // namespace shapecodec::mesh
