#include <array>
#include <cmath>
#include <stdexcept>
#include <unordered_map>

#include "shapecodec/fields.hpp"

namespace shapecodec::fields {

namespace {

// Six tetrahedra around the main diagonal c0-c6. The induced face diagonals
// are translation invariant, so neighboring cubes tessellate their shared
// face identically and the extracted surface is closed.
constexpr int kTets[6][4] = {
    {0, 1, 2, 6}, {0, 2, 3, 6}, {0, 3, 7, 6}, {0, 7, 4, 6}, {0, 4, 5, 6}, {0, 5, 1, 6},
};

constexpr int kCornerOffset[8][3] = {
    {0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0}, {0, 0, 1}, {1, 0, 1}, {1, 1, 1}, {0, 1, 1},
};

struct EdgeKeyHash {
    std::size_t operator()(std::uint64_t k) const { return std::hash<std::uint64_t>{}(k); }
};

}  // namespace

mesh::Mesh extract_mesh(const OccupancyGrid& grid, double threshold) {
    if (!(threshold > 0.0 && threshold < 1.0))
        throw std::invalid_argument("extract_mesh: threshold must be in (0,1)");
    const int r = grid.r;
    mesh::Mesh out;
    if (r < 2) return out;

    std::unordered_map<std::uint64_t, int, EdgeKeyHash> edge_vertex;
    auto flat = [r](int x, int y, int z) {
        return (static_cast<std::uint64_t>(x) * r + y) * r + z;
    };

    // Vertex on the edge between lattice points a and b, welded by the
    // canonical key (lower endpoint, offset pattern).
    auto edge_point = [&](const int a[3], double va, const int b[3], double vb) {
        const int* lo = a;
        const int* hi = b;
        double vlo = va, vhi = vb;
        if (flat(b[0], b[1], b[2]) < flat(a[0], a[1], a[2])) {
            std::swap(lo, hi);
            std::swap(vlo, vhi);
        }
        std::uint64_t code = static_cast<std::uint64_t>((hi[0] - lo[0]) * 4 + (hi[1] - lo[1]) * 2 +
                                                        (hi[2] - lo[2]));
        std::uint64_t key = flat(lo[0], lo[1], lo[2]) * 8ull + code;
        auto it = edge_vertex.find(key);
        if (it != edge_vertex.end()) return it->second;

        double denom = vhi - vlo;
        double t = std::abs(denom) < 1e-300 ? 0.5 : (threshold - vlo) / denom;
        t = std::min(std::max(t, 0.0), 1.0);
        geometry::Vec3 p;
        for (int d = 0; d < 3; ++d) {
            double c0 = grid_coord(lo[d], r), c1 = grid_coord(hi[d], r);
            p[d] = c0 + t * (c1 - c0);
        }
        int idx = static_cast<int>(out.vertices.size());
        out.vertices.push_back(p);
        edge_vertex.emplace(key, idx);
        return idx;
    };

    auto emit = [&](int a, int b, int c) {
        if (a == b || b == c || a == c) return;  // collapsed at a lattice point
        out.faces.push_back({a, b, c});
    };

    int corner_pos[8][3];
    double corner_val[8];
    for (int ix = 0; ix + 1 < r; ++ix) {
        for (int iy = 0; iy + 1 < r; ++iy) {
            for (int iz = 0; iz + 1 < r; ++iz) {
                bool all_eval = true;
                for (int c = 0; c < 8; ++c) {
                    int x = ix + kCornerOffset[c][0];
                    int y = iy + kCornerOffset[c][1];
                    int z = iz + kCornerOffset[c][2];
                    std::size_t gi = grid.index(x, y, z);
                    if (!grid.mask[gi]) { all_eval = false; break; }
                    corner_pos[c][0] = x;
                    corner_pos[c][1] = y;
                    corner_pos[c][2] = z;
                    corner_val[c] = grid.values[gi];
                }
                if (!all_eval) continue;

                for (const auto& tet : kTets) {
                    int inside[4], n_in = 0;
                    int outside[4], n_out = 0;
                    for (int c = 0; c < 4; ++c) {
                        if (corner_val[tet[c]] >= threshold) inside[n_in++] = tet[c];
                        else outside[n_out++] = tet[c];
                    }
                    if (n_in == 0 || n_in == 4) continue;

                    if (n_in == 1 || n_in == 3) {
                        int apex = n_in == 1 ? inside[0] : outside[0];
                        const int* base = n_in == 1 ? outside : inside;
                        int v0 = edge_point(corner_pos[apex], corner_val[apex], corner_pos[base[0]],
                                            corner_val[base[0]]);
                        int v1 = edge_point(corner_pos[apex], corner_val[apex], corner_pos[base[1]],
                                            corner_val[base[1]]);
                        int v2 = edge_point(corner_pos[apex], corner_val[apex], corner_pos[base[2]],
                                            corner_val[base[2]]);
                        emit(v0, v1, v2);
                    } else {  // 2 in, 2 out: one quad
                        int a = inside[0], b = inside[1], c = outside[0], d = outside[1];
                        int vac = edge_point(corner_pos[a], corner_val[a], corner_pos[c], corner_val[c]);
                        int vad = edge_point(corner_pos[a], corner_val[a], corner_pos[d], corner_val[d]);
                        int vbd = edge_point(corner_pos[b], corner_val[b], corner_pos[d], corner_val[d]);
                        int vbc = edge_point(corner_pos[b], corner_val[b], corner_pos[c], corner_val[c]);
                        emit(vac, vad, vbd);
                        emit(vac, vbd, vbc);
                    }
                }
            }
        }
    }
    return out;
}

}  // namespace shapecodec::fields
