#pragma once

#include <Eigen/Core>
#include <array>
#include <vector>

#include "shapecodec/ad.hpp"
#include "shapecodec/geometry.hpp"
#include "shapecodec/mesh.hpp"
#include "shapecodec/nn.hpp"

namespace shapecodec::fields {

using ad::Mat;
using geometry::Points;
using geometry::Vec3;

// Three axis-aligned feature planes in the fixed order (xy, yz, xz). Each
// plane is stored pixel-major as an (R*R) x channels matrix with row
// index u*R + v, where (u, v) are the plane's two coordinates in that order.
struct Triplane {
    int resolution = 0;
    int channels = 0;
    std::array<Mat, 3> planes;
};

// Coordinate pair feeding each plane: xy -> (x,y), yz -> (y,z), xz -> (x,z).
inline void plane_uv(int plane, const Vec3& q, double& u, double& v) {
    switch (plane) {
        case 0: u = q.x(); v = q.y(); break;
        case 1: u = q.y(); v = q.z(); break;
        default: u = q.x(); v = q.z(); break;
    }
}

// Bilinear taps with the cell-center convention: uv=-1 maps to texel center
// 0 and uv=+1 to texel center R-1; out-of-range uv is clamped.
void bilerp_taps(int R, double u, double v, int idx[4], double w[4]);

// Bilinear sample of one plane; scalar reference is in the tests.
Eigen::VectorXd sample_plane(const Mat& plane, int R, double u, double v);

struct OccupancyMlp {
    Mat w1, b1, w2, b2, w3, b3;  // feat -> hidden -> hidden -> 1 logit
};

struct OccupancyField {
    Triplane triplane;
    OccupancyMlp mlp;
};

// Per-query logits; feature(q) = S_xy(x,y) + S_yz(y,z) + S_xz(x,z), passed
// through the MLP. Evaluated point-by-point so results are independent of
// batching/chunking.
Eigen::VectorXd query_occupancy_logits(const OccupancyField& field, const Points& queries);

// Eq-style query-wise uncertainty: product over planes of the bilinearly
// retrieved sigmoid-activated token logits (token grids are g x g per plane).
double uncertainty_at_query(const std::array<Mat, 3>& unc_logits, int g, const Vec3& q);

struct OccupancyGrid {
    int r = 0;
    std::vector<double> values;        // probabilities, 0 where unevaluated
    std::vector<std::uint8_t> mask;    // 1 = evaluated
    std::size_t index(int ix, int iy, int iz) const {
        return (static_cast<std::size_t>(ix) * r + iy) * r + iz;
    }
};

inline double grid_coord(int i, int r) { return -1.0 + 2.0 * i / static_cast<double>(r - 1); }

OccupancyGrid dense_grid_eval(const OccupancyField& field, int r, int chunk);

// Coarse pass at coarse_r; fine lattice points are evaluated only inside
// coarse-occupied voxels dilated by `dilation` voxels. Evaluated values are
// bitwise identical to dense_grid_eval.
OccupancyGrid multires_grid_eval(const OccupancyField& field, int coarse_r, int fine_r,
                                 int dilation, int chunk, double threshold = 0.5);

// Isosurface extraction (marching over a 6-tetrahedra cube decomposition)
// restricted to cells whose 8 corners are all evaluated. Vertices interpolate
// linearly along edges and are welded across cells, so closed isosurfaces
// fully interior to the grid come out watertight. An everywhere-inside grid
// produces an empty mesh (no boundary capping).
mesh::Mesh extract_mesh(const OccupancyGrid& grid, double threshold);

// --- autodiff side ----------------------------------------------------------

struct FieldsConfig {
    int triplane_channels = 32;
    int mlp_hidden = 64;
};

// The shallow occupancy MLP as graph parameters, plus graph builders for
// query decoding and query-wise uncertainty.
class FieldsNet {
public:
    FieldsNet() = default;
    FieldsNet(nn::ParamStore& ps, const FieldsConfig& cfg, RandomStream& rng);

    ad::Tensor query_logits(const std::array<ad::Tensor, 3>& planes, int R,
                            const Points& queries) const;

    // unc_logits: T x 1 over all three planes (g*g rows each, plane-major).
    static ad::Tensor uncertainty(const ad::Tensor& unc_logits, int g, const Points& queries);

    OccupancyMlp export_mlp() const;
    const FieldsConfig& config() const { return cfg_; }

private:
    FieldsConfig cfg_;
    nn::Linear fc1_, fc2_, fc3_;
};

// Tap table shared by the graph ops and the scalar path.
void bilerp_table(int R, int plane, const Points& queries, Eigen::Matrix<int, Eigen::Dynamic, 4>& idx,
                  Eigen::Matrix<double, Eigen::Dynamic, 4>& w);

}  // namespace shapecodec::fields
