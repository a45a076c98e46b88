#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <cstdint>
#include <string>
#include <vector>

#include "shapecodec/rng.hpp"

namespace shapecodec::geometry {

using Vec3 = Eigen::Vector3d;
using Points = Eigen::Matrix<double, Eigen::Dynamic, 3>;  // N x 3

// Points within this signed distance of a surface count as inside; keeps the
// oracle total on floating-point surface samples.
inline constexpr double kBoundaryEps = 1e-8;

enum class ShapeKind { Sphere, Box, Capsule, Torus, Union };

std::string to_string(ShapeKind k);
ShapeKind shape_kind_from_string(const std::string& s);

// Analytic watertight primitive (or union of primitives) with an exact
// signed distance, exact surface area, and uniform surface sampling.
// Torus axis is z through `center`; capsule is the segment [cap_a, cap_b].
struct ProceduralShape {
    ShapeKind kind = ShapeKind::Sphere;
    Vec3 center = Vec3::Zero();
    double radius = 0.5;                 // sphere/capsule radius, torus minor radius
    Vec3 half_extents = Vec3::Zero();    // box
    Vec3 cap_a = Vec3::Zero(), cap_b = Vec3::Zero();
    double major_radius = 0.0;           // torus
    std::vector<ProceduralShape> parts;  // union

    double signed_distance(const Vec3& p) const;
    bool contains(const Vec3& p) const { return signed_distance(p) <= kBoundaryEps; }
    double surface_area() const;
    // One uniform surface sample; for unions, rejects points strictly inside
    // sibling parts so the sample lies on the union boundary.
    Vec3 sample_surface_point(RandomStream& rng) const;
};

struct QueryBatch {
    Points points;                 // Q x 3, volume samples first
    Eigen::VectorXd labels;        // Q, 0/1 occupancy
    Eigen::VectorXi near_surface;  // Q, 1 for the near-surface partition
    int n_vol = 0;
    int n_near = 0;
};

// Greedy max-min-distance subset selection. First index is drawn uniformly
// from the seed; ties resolve to the lowest index.
std::vector<int> farthest_point_sample(const Points& points, int k, std::uint64_t seed);

Eigen::VectorXd occupancy_oracle(const ProceduralShape& shape, const Points& queries);

Points sample_surface_points(const ProceduralShape& shape, int n, std::uint64_t seed);

QueryBatch sample_queries(const ProceduralShape& shape, int n_vol, int n_near, double near_sigma,
                          std::uint64_t seed);

// Random shape generator for the procedural dataset. All surfaces stay
// strictly inside [-1,1]^3.
ProceduralShape make_random_shape(RandomStream& rng);

}  // namespace shapecodec::geometry
