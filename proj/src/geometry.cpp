#include "shapecodec/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "shapecodec/errors.hpp"

namespace shapecodec::geometry {

std::string to_string(ShapeKind k) {
    switch (k) {
        case ShapeKind::Sphere: return "sphere";
        case ShapeKind::Box: return "box";
        case ShapeKind::Capsule: return "capsule";
        case ShapeKind::Torus: return "torus";
        case ShapeKind::Union: return "union";
    }
    return "unknown";
}

ShapeKind shape_kind_from_string(const std::string& s) {
    if (s == "sphere") return ShapeKind::Sphere;
    if (s == "box") return ShapeKind::Box;
    if (s == "capsule") return ShapeKind::Capsule;
    if (s == "torus") return ShapeKind::Torus;
    if (s == "union") return ShapeKind::Union;
    throw DataError("unknown shape kind: " + s);
}

double ProceduralShape::signed_distance(const Vec3& p) const {
    switch (kind) {
        case ShapeKind::Sphere:
            return (p - center).norm() - radius;
        case ShapeKind::Box: {
            Vec3 q = (p - center).cwiseAbs() - half_extents;
            Vec3 qp = q.cwiseMax(0.0);
            double outside = qp.norm();
            double inside = std::min(std::max(q.x(), std::max(q.y(), q.z())), 0.0);
            return outside + inside;
        }
        case ShapeKind::Capsule: {
            Vec3 ab = cap_b - cap_a;
            double denom = ab.squaredNorm();
            double t = denom > 0.0 ? std::clamp((p - cap_a).dot(ab) / denom, 0.0, 1.0) : 0.0;
            return (p - (cap_a + t * ab)).norm() - radius;
        }
        case ShapeKind::Torus: {
            Vec3 q = p - center;
            double ring = std::sqrt(q.x() * q.x() + q.y() * q.y()) - major_radius;
            return std::sqrt(ring * ring + q.z() * q.z()) - radius;
        }
        case ShapeKind::Union: {
            double d = std::numeric_limits<double>::infinity();
            for (const auto& part : parts) d = std::min(d, part.signed_distance(p));
            return d;
        }
    }
    return std::numeric_limits<double>::infinity();
}

double ProceduralShape::surface_area() const {
    switch (kind) {
        case ShapeKind::Sphere:
            return 4.0 * M_PI * radius * radius;
        case ShapeKind::Box: {
            const Vec3& h = half_extents;
            return 8.0 * (h.x() * h.y() + h.y() * h.z() + h.x() * h.z());
        }
        case ShapeKind::Capsule: {
            double len = (cap_b - cap_a).norm();
            return 2.0 * M_PI * radius * len + 4.0 * M_PI * radius * radius;
        }
        case ShapeKind::Torus:
            return 4.0 * M_PI * M_PI * major_radius * radius;
        case ShapeKind::Union: {
            double a = 0.0;
            for (const auto& part : parts) a += part.surface_area();
            return a;  // upper bound; used only as sampling weights
        }
    }
    return 0.0;
}

namespace {

Vec3 uniform_direction(RandomStream& rng) {
    // Marsaglia rejection on the unit ball, normalized.
    for (;;) {
        Vec3 v(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0));
        double n2 = v.squaredNorm();
        if (n2 > 1e-12 && n2 <= 1.0) return v / std::sqrt(n2);
    }
}

Vec3 sample_box_surface(const ProceduralShape& s, RandomStream& rng) {
    const Vec3& h = s.half_extents;
    double ax = h.y() * h.z(), ay = h.x() * h.z(), az = h.x() * h.y();
    double total = 2.0 * (ax + ay + az);
    double r = rng.uniform() * total;
    int axis;
    if (r < 2.0 * ax) axis = 0;
    else if (r < 2.0 * (ax + ay)) axis = 1;
    else axis = 2;
    double side = rng.uniform() < 0.5 ? -1.0 : 1.0;
    Vec3 p;
    p[axis] = side * h[axis];
    int u = (axis + 1) % 3, v = (axis + 2) % 3;
    p[u] = rng.uniform(-h[u], h[u]);
    p[v] = rng.uniform(-h[v], h[v]);
    return s.center + p;
}

Vec3 sample_capsule_surface(const ProceduralShape& s, RandomStream& rng) {
    Vec3 ab = s.cap_b - s.cap_a;
    double len = ab.norm();
    double side_area = 2.0 * M_PI * s.radius * len;
    double cap_area = 4.0 * M_PI * s.radius * s.radius;
    if (rng.uniform() * (side_area + cap_area) < side_area) {
        Vec3 axis = ab / len;
        // orthonormal frame around the axis
        Vec3 ref = std::abs(axis.x()) < 0.9 ? Vec3(1, 0, 0) : Vec3(0, 1, 0);
        Vec3 e1 = axis.cross(ref).normalized();
        Vec3 e2 = axis.cross(e1);
        double t = rng.uniform();
        double phi = rng.uniform(0.0, 2.0 * M_PI);
        return s.cap_a + t * ab + s.radius * (std::cos(phi) * e1 + std::sin(phi) * e2);
    }
    Vec3 dir = uniform_direction(rng);
    Vec3 axis = ab / len;
    // hemisphere pointing away from the segment
    const Vec3& end = dir.dot(axis) >= 0.0 ? s.cap_b : s.cap_a;
    return end + s.radius * dir;
}

Vec3 sample_torus_surface(const ProceduralShape& s, RandomStream& rng) {
    // area element scales with (R + r cos phi); rejection keeps it uniform
    double phi;
    for (;;) {
        phi = rng.uniform(0.0, 2.0 * M_PI);
        double w = (s.major_radius + s.radius * std::cos(phi)) / (s.major_radius + s.radius);
        if (rng.uniform() <= w) break;
    }
    double theta = rng.uniform(0.0, 2.0 * M_PI);
    double ring = s.major_radius + s.radius * std::cos(phi);
    return s.center + Vec3(ring * std::cos(theta), ring * std::sin(theta), s.radius * std::sin(phi));
}

}  // namespace

Vec3 ProceduralShape::sample_surface_point(RandomStream& rng) const {
    switch (kind) {
        case ShapeKind::Sphere:
            return center + radius * uniform_direction(rng);
        case ShapeKind::Box:
            return sample_box_surface(*this, rng);
        case ShapeKind::Capsule:
            return sample_capsule_surface(*this, rng);
        case ShapeKind::Torus:
            return sample_torus_surface(*this, rng);
        case ShapeKind::Union: {
            std::vector<double> areas(parts.size());
            double total = 0.0;
            for (size_t i = 0; i < parts.size(); ++i) total += areas[i] = parts[i].surface_area();
            for (int attempt = 0; attempt < 10000; ++attempt) {
                double r = rng.uniform() * total;
                size_t pick = 0;
                for (; pick + 1 < parts.size() && r >= areas[pick]; ++pick) r -= areas[pick];
                Vec3 p = parts[pick].sample_surface_point(rng);
                bool interior = false;
                for (size_t j = 0; j < parts.size(); ++j) {
                    if (j == pick) continue;
                    if (parts[j].signed_distance(p) < -kBoundaryEps) { interior = true; break; }
                }
                if (!interior) return p;
            }
            throw DataError("union surface sampling failed: parts occlude each other");
        }
    }
    return Vec3::Zero();
}

std::vector<int> farthest_point_sample(const Points& points, int k, std::uint64_t seed) {
    const int n = static_cast<int>(points.rows());
    if (k < 1 || k > n)
        throw std::invalid_argument("farthest_point_sample: k=" + std::to_string(k) +
                                    " out of range for N=" + std::to_string(n));
    RandomStream rng(seed);
    std::vector<int> picked;
    picked.reserve(static_cast<size_t>(k));
    int current = static_cast<int>(rng.uniform_int(static_cast<std::uint32_t>(n)));
    picked.push_back(current);

    std::vector<double> min_d2(static_cast<size_t>(n), std::numeric_limits<double>::infinity());
    for (int step = 1; step < k; ++step) {
        double best = -1.0;
        int best_idx = 0;
        for (int i = 0; i < n; ++i) {
            double d2 = (points.row(i) - points.row(current)).squaredNorm();
            if (d2 < min_d2[static_cast<size_t>(i)]) min_d2[static_cast<size_t>(i)] = d2;
            if (min_d2[static_cast<size_t>(i)] > best) {  // strict: ties keep the lowest index
                best = min_d2[static_cast<size_t>(i)];
                best_idx = i;
            }
        }
        current = best_idx;
        picked.push_back(current);
    }
    return picked;
}

Eigen::VectorXd occupancy_oracle(const ProceduralShape& shape, const Points& queries) {
    Eigen::VectorXd labels(queries.rows());
    for (Eigen::Index i = 0; i < queries.rows(); ++i) {
        Vec3 p = queries.row(i);
        if (!p.allFinite()) throw std::invalid_argument("occupancy_oracle: non-finite query");
        labels(i) = shape.contains(p) ? 1.0 : 0.0;
    }
    return labels;
}

Points sample_surface_points(const ProceduralShape& shape, int n, std::uint64_t seed) {
    if (n < 1) throw std::invalid_argument("sample_surface_points: n must be >= 1");
    RandomStream rng(seed);
    Points out(n, 3);
    for (int i = 0; i < n; ++i) out.row(i) = shape.sample_surface_point(rng);
    return out;
}

QueryBatch sample_queries(const ProceduralShape& shape, int n_vol, int n_near, double near_sigma,
                          std::uint64_t seed) {
    if (near_sigma <= 0.0) throw std::invalid_argument("sample_queries: near_sigma must be > 0");
    RandomStream rng(seed);
    QueryBatch batch;
    batch.n_vol = n_vol;
    batch.n_near = n_near;
    batch.points.resize(n_vol + n_near, 3);
    batch.near_surface = Eigen::VectorXi::Zero(n_vol + n_near);
    for (int i = 0; i < n_vol; ++i)
        batch.points.row(i) << rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0);
    for (int i = 0; i < n_near; ++i) {
        Vec3 p = shape.sample_surface_point(rng);
        Vec3 noise(rng.normal(), rng.normal(), rng.normal());
        p += near_sigma * noise;
        p = p.cwiseMax(-1.0).cwiseMin(1.0);
        batch.points.row(n_vol + i) = p;
        batch.near_surface(n_vol + i) = 1;
    }
    batch.labels = occupancy_oracle(shape, batch.points);
    return batch;
}

ProceduralShape make_random_shape(RandomStream& rng) {
    auto random_primitive = [&rng](bool small) {
        ProceduralShape s;
        double scale = small ? 0.5 : 1.0;
        double c = small ? 0.45 : 0.25;
        s.center = Vec3(rng.uniform(-c, c), rng.uniform(-c, c), rng.uniform(-c, c));
        switch (rng.uniform_int(4)) {
            case 0:
                s.kind = ShapeKind::Sphere;
                s.radius = scale * rng.uniform(0.3, 0.55);
                break;
            case 1:
                s.kind = ShapeKind::Box;
                s.half_extents = scale * Vec3(rng.uniform(0.25, 0.55), rng.uniform(0.25, 0.55),
                                              rng.uniform(0.25, 0.55));
                break;
            case 2: {
                s.kind = ShapeKind::Capsule;
                s.radius = scale * rng.uniform(0.12, 0.25);
                Vec3 dir = uniform_direction(rng);
                double half_len = scale * rng.uniform(0.15, 0.35);
                s.cap_a = s.center - half_len * dir;
                s.cap_b = s.center + half_len * dir;
                break;
            }
            default:
                s.kind = ShapeKind::Torus;
                s.major_radius = scale * rng.uniform(0.3, 0.5);
                s.radius = scale * rng.uniform(0.08, std::min(0.2, 0.45 * s.major_radius / scale));
                break;
        }
        return s;
    };

    if (rng.uniform() < 0.2) {
        ProceduralShape u;
        u.kind = ShapeKind::Union;
        int n = 2 + static_cast<int>(rng.uniform_int(2));
        for (int i = 0; i < n; ++i) u.parts.push_back(random_primitive(true));
        return u;
    }
    return random_primitive(false);
}

}  // namespace shapecodec::geometry
