#include "shapecodec/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include "shapecodec/errors.hpp"

namespace shapecodec::mesh {

Mesh load_obj(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open OBJ file: " + path);
    Mesh m;
    std::string line;
    while (std::getline(in, line)) {
        if (line.size() < 2) continue;
        std::istringstream ss(line);
        std::string tag;
        ss >> tag;
        if (tag == "v") {
            Vec3 v;
            ss >> v.x() >> v.y() >> v.z();
            if (!ss) throw DataError("malformed vertex line in " + path + ": " + line);
            m.vertices.push_back(v);
        } else if (tag == "f") {
            std::vector<int> corners;
            std::string tok;
            while (ss >> tok) {
                // accept "i", "i/t", "i//n", "i/t/n"
                int idx = std::stoi(tok.substr(0, tok.find('/')));
                if (idx < 0) idx = static_cast<int>(m.vertices.size()) + idx + 1;
                corners.push_back(idx - 1);
            }
            if (corners.size() < 3) throw DataError("face with <3 vertices in " + path);
            for (size_t i = 1; i + 1 < corners.size(); ++i)
                m.faces.push_back({corners[0], corners[i], corners[i + 1]});
        }
    }
    for (const auto& f : m.faces)
        for (int idx : f)
            if (idx < 0 || idx >= static_cast<int>(m.vertices.size()))
                throw DataError("face index out of range in " + path);
    return m;
}

void save_obj(const Mesh& m, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write OBJ file: " + path);
    char buf[128];
    for (const auto& v : m.vertices) {
        std::snprintf(buf, sizeof(buf), "v %.9g %.9g %.9g\n", v.x(), v.y(), v.z());
        out << buf;
    }
    for (const auto& f : m.faces) out << "f " << f[0] + 1 << ' ' << f[1] + 1 << ' ' << f[2] + 1 << '\n';
}

Mesh normalize_to_unit_cube(const Mesh& m, double margin) {
    if (m.vertices.empty()) throw std::invalid_argument("normalize_to_unit_cube: empty mesh");
    Vec3 lo = m.vertices[0], hi = m.vertices[0];
    for (const auto& v : m.vertices) {
        lo = lo.cwiseMin(v);
        hi = hi.cwiseMax(v);
    }
    Vec3 extent = hi - lo;
    double longest = extent.maxCoeff();
    if (longest <= 0.0) throw std::invalid_argument("normalize_to_unit_cube: zero-extent mesh");
    Vec3 mid = 0.5 * (lo + hi);
    double s = 2.0 * (1.0 - margin) / longest;
    Mesh out = m;
    for (auto& v : out.vertices) v = (v - mid) * s;
    return out;
}

Mesh cleanup(const Mesh& m, double area_tol) {
    Mesh out;
    std::vector<int> remap(m.vertices.size(), -1);
    for (const auto& f : m.faces) {
        const Vec3& a = m.vertices[f[0]];
        Vec3 e1 = m.vertices[f[1]] - a, e2 = m.vertices[f[2]] - a;
        if (0.5 * e1.cross(e2).norm() <= area_tol) continue;
        std::array<int, 3> nf{};
        for (int i = 0; i < 3; ++i) {
            if (remap[f[i]] < 0) {
                remap[f[i]] = static_cast<int>(out.vertices.size());
                out.vertices.push_back(m.vertices[f[i]]);
            }
            nf[i] = remap[f[i]];
        }
        out.faces.push_back(nf);
    }
    return out;
}

namespace {

// Watertight-ish Moller-Trumbore; returns 0 no hit, 1 hit, -1 degenerate
// (edge/vertex graze or coplanar) for t > 0.
int ray_triangle(const Vec3& orig, const Vec3& dir, const Vec3& v0, const Vec3& v1, const Vec3& v2) {
    constexpr double eps = 1e-12;
    Vec3 e1 = v1 - v0, e2 = v2 - v0;
    Vec3 pvec = dir.cross(e2);
    double det = e1.dot(pvec);
    if (std::abs(det) < eps) return 0;  // parallel; treat as miss (perturbation handles grazing)
    double inv_det = 1.0 / det;
    Vec3 tvec = orig - v0;
    double u = tvec.dot(pvec) * inv_det;
    if (u < -eps || u > 1.0 + eps) return 0;
    Vec3 qvec = tvec.cross(e1);
    double v = dir.dot(qvec) * inv_det;
    if (v < -eps || u + v > 1.0 + eps) return 0;
    double t = e2.dot(qvec) * inv_det;
    if (t <= eps) return 0;
    const double edge_eps = 1e-9;
    if (u < edge_eps || v < edge_eps || u + v > 1.0 - edge_eps) return -1;
    return 1;
}

// Parity along one direction; perturbs deterministically while any triangle
// reports a degenerate graze.
int ray_parity(const Mesh& m, const Vec3& q, Vec3 dir) {
    for (int attempt = 0; attempt < 16; ++attempt) {
        int crossings = 0;
        bool degenerate = false;
        for (const auto& f : m.faces) {
            int r = ray_triangle(q, dir, m.vertices[f[0]], m.vertices[f[1]], m.vertices[f[2]]);
            if (r < 0) { degenerate = true; break; }
            crossings += r;
        }
        if (!degenerate) return crossings & 1;
        double a = 1e-4 * static_cast<double>(attempt + 1);
        dir = (dir + Vec3(std::sin(7.1 * a), std::cos(3.3 * a), std::sin(5.7 * a + 1.0)) * a).normalized();
    }
    return 0;  // give up; counted as disagreement by the caller if directions differ
}

const std::array<Vec3, 3> kRayDirs = {
    Vec3(0.57213, 0.33667, 0.74792).normalized(),
    Vec3(-0.27881, 0.89443, 0.34871).normalized(),
    Vec3(0.80178, -0.26726, -0.53452).normalized(),
};

}  // namespace

Eigen::VectorXd mesh_occupancy(const Mesh& m, const Points& queries) {
    if (m.empty()) throw std::invalid_argument("mesh_occupancy: empty mesh");
    const Eigen::Index n = queries.rows();
    Eigen::VectorXd labels(n);
    Eigen::VectorXi disagree(n);

#pragma omp parallel for schedule(static)
    for (Eigen::Index i = 0; i < n; ++i) {
        Vec3 q = queries.row(i);
        int p0 = ray_parity(m, q, kRayDirs[0]);
        int p1 = ray_parity(m, q, kRayDirs[1]);
        int p2 = ray_parity(m, q, kRayDirs[2]);
        labels(i) = (p0 + p1 + p2 >= 2) ? 1.0 : 0.0;
        disagree(i) = (p0 == p1 && p1 == p2) ? 0 : 1;
    }
    double frac = static_cast<double>(disagree.sum()) / static_cast<double>(std::max<Eigen::Index>(n, 1));
    if (frac > 0.01)
        throw DataError("mesh_occupancy: ray parity disagrees on " + std::to_string(100.0 * frac) +
                        "% of queries; mesh is likely open or self-intersecting");
    return labels;
}

double mesh_parity_agreement(const Mesh& m, const Points& queries) {
    const Eigen::Index n = queries.rows();
    Eigen::VectorXi agree(n);
#pragma omp parallel for schedule(static)
    for (Eigen::Index i = 0; i < n; ++i) {
        Vec3 q = queries.row(i);
        int p0 = ray_parity(m, q, kRayDirs[0]);
        int p1 = ray_parity(m, q, kRayDirs[1]);
        int p2 = ray_parity(m, q, kRayDirs[2]);
        agree(i) = (p0 == p1 && p1 == p2) ? 1 : 0;
    }
    return static_cast<double>(agree.sum()) / static_cast<double>(std::max<Eigen::Index>(n, 1));
}

double mesh_surface_area(const Mesh& m) {
    double area = 0.0;
    for (const auto& f : m.faces) {
        Vec3 e1 = m.vertices[f[1]] - m.vertices[f[0]];
        Vec3 e2 = m.vertices[f[2]] - m.vertices[f[0]];
        area += 0.5 * e1.cross(e2).norm();
    }
    return area;
}

Points sample_mesh_surface(const Mesh& m, int n, std::uint64_t seed) {
    if (m.empty()) throw std::invalid_argument("sample_mesh_surface: empty mesh");
    std::vector<double> cumulative(m.faces.size());
    double total = 0.0;
    for (size_t i = 0; i < m.faces.size(); ++i) {
        const auto& f = m.faces[i];
        Vec3 e1 = m.vertices[f[1]] - m.vertices[f[0]];
        Vec3 e2 = m.vertices[f[2]] - m.vertices[f[0]];
        total += 0.5 * e1.cross(e2).norm();
        cumulative[i] = total;
    }
    if (total <= 0.0) throw std::invalid_argument("sample_mesh_surface: zero-area mesh");

    RandomStream rng(seed);
    Points out(n, 3);
    for (int i = 0; i < n; ++i) {
        double r = rng.uniform() * total;
        size_t fi = static_cast<size_t>(
            std::lower_bound(cumulative.begin(), cumulative.end(), r) - cumulative.begin());
        fi = std::min(fi, m.faces.size() - 1);
        const auto& f = m.faces[fi];
        double u = rng.uniform(), v = rng.uniform();
        if (u + v > 1.0) { u = 1.0 - u; v = 1.0 - v; }
        out.row(i) = m.vertices[f[0]] + u * (m.vertices[f[1]] - m.vertices[f[0]]) +
                     v * (m.vertices[f[2]] - m.vertices[f[0]]);
    }
    return out;
}

Mesh make_box_mesh(const Vec3& half, const Vec3& center) {
    Mesh m;
    for (int i = 0; i < 8; ++i) {
        Vec3 corner((i & 1) ? half.x() : -half.x(), (i & 2) ? half.y() : -half.y(),
                    (i & 4) ? half.z() : -half.z());
        m.vertices.push_back(center + corner);
    }
    // outward-facing CCW quads, split into triangles
    const int quads[6][4] = {
        {0, 4, 6, 2},  // -x
        {1, 3, 7, 5},  // +x
        {0, 1, 5, 4},  // -y
        {2, 6, 7, 3},  // +y
        {0, 2, 3, 1},  // -z
        {4, 5, 7, 6},  // +z
    };
    for (const auto& q : quads) {
        m.faces.push_back({q[0], q[1], q[2]});
        m.faces.push_back({q[0], q[2], q[3]});
    }
    return m;
}

Mesh make_icosphere(int subdivisions, double radius, const Vec3& center) {
    const double t = (1.0 + std::sqrt(5.0)) / 2.0;
    std::vector<Vec3> verts = {
        {-1, t, 0}, {1, t, 0}, {-1, -t, 0}, {1, -t, 0}, {0, -1, t}, {0, 1, t},
        {0, -1, -t}, {0, 1, -t}, {t, 0, -1}, {t, 0, 1}, {-t, 0, -1}, {-t, 0, 1},
    };
    for (auto& v : verts) v.normalize();
    std::vector<std::array<int, 3>> faces = {
        {0, 11, 5}, {0, 5, 1}, {0, 1, 7}, {0, 7, 10}, {0, 10, 11}, {1, 5, 9},
        {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8}, {3, 9, 4}, {3, 4, 2},
        {3, 2, 6}, {3, 6, 8}, {3, 8, 9}, {4, 9, 5}, {2, 4, 11}, {6, 2, 10},
        {8, 6, 7}, {9, 8, 1},
    };

    for (int s = 0; s < subdivisions; ++s) {
        std::map<std::pair<int, int>, int> midpoint;
        auto mid = [&](int a, int b) {
            auto key = std::minmax(a, b);
            auto it = midpoint.find(key);
            if (it != midpoint.end()) return it->second;
            Vec3 v = (verts[a] + verts[b]).normalized();
            int idx = static_cast<int>(verts.size());
            verts.push_back(v);
            midpoint.emplace(key, idx);
            return idx;
        };
        std::vector<std::array<int, 3>> next;
        next.reserve(faces.size() * 4);
        for (const auto& f : faces) {
            int a = mid(f[0], f[1]), b = mid(f[1], f[2]), c = mid(f[2], f[0]);
            next.push_back({f[0], a, c});
            next.push_back({f[1], b, a});
            next.push_back({f[2], c, b});
            next.push_back({a, b, c});
        }
        faces = std::move(next);
    }

    Mesh m;
    m.vertices.reserve(verts.size());
    for (const auto& v : verts) m.vertices.push_back(center + radius * v);
    m.faces = std::move(faces);
    return m;
}

}  // namespace shapecodec::mesh
