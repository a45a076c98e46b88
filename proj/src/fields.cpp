#include "shapecodec/fields.hpp"

#include <algorithm>
#include <cmath>

namespace shapecodec::fields {

void bilerp_taps(int R, double u, double v, int idx[4], double w[4]) {
    u = std::clamp(u, -1.0, 1.0);
    v = std::clamp(v, -1.0, 1.0);
    double cu = 0.5 * (u + 1.0) * (R - 1);
    double cv = 0.5 * (v + 1.0) * (R - 1);
    int iu = std::min(static_cast<int>(std::floor(cu)), R - 2);
    int iv = std::min(static_cast<int>(std::floor(cv)), R - 2);
    iu = std::max(iu, 0);
    iv = std::max(iv, 0);
    double fu = cu - iu, fv = cv - iv;
    idx[0] = iu * R + iv;
    idx[1] = iu * R + (iv + 1);
    idx[2] = (iu + 1) * R + iv;
    idx[3] = (iu + 1) * R + (iv + 1);
    w[0] = (1.0 - fu) * (1.0 - fv);
    w[1] = (1.0 - fu) * fv;
    w[2] = fu * (1.0 - fv);
    w[3] = fu * fv;
}

Eigen::VectorXd sample_plane(const Mat& plane, int R, double u, double v) {
    int idx[4];
    double w[4];
    bilerp_taps(R, u, v, idx, w);
    Eigen::VectorXd out = Eigen::VectorXd::Zero(plane.cols());
    for (int k = 0; k < 4; ++k) out += w[k] * plane.row(idx[k]).transpose();
    return out;
}

namespace {

constexpr double kGeluK = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluC = 0.044715;

inline double gelu_scalar(double x) {
    return 0.5 * x * (1.0 + std::tanh(kGeluK * (x + kGeluC * x * x * x)));
}

// Scalar MLP evaluation; the loop order is fixed so chunking cannot change
// the result bits.
double mlp_logit(const OccupancyMlp& mlp, const Eigen::VectorXd& feat) {
    const Eigen::Index h1 = mlp.w1.cols(), h2 = mlp.w2.cols();
    Eigen::VectorXd a(h1);
    for (Eigen::Index j = 0; j < h1; ++j) {
        double acc = mlp.b1(0, j);
        for (Eigen::Index i = 0; i < feat.size(); ++i) acc += feat(i) * mlp.w1(i, j);
        a(j) = gelu_scalar(acc);
    }
    Eigen::VectorXd b(h2);
    for (Eigen::Index j = 0; j < h2; ++j) {
        double acc = mlp.b2(0, j);
        for (Eigen::Index i = 0; i < h1; ++i) acc += a(i) * mlp.w2(i, j);
        b(j) = gelu_scalar(acc);
    }
    double acc = mlp.b3(0, 0);
    for (Eigen::Index i = 0; i < h2; ++i) acc += b(i) * mlp.w3(i, 0);
    return acc;
}

}  // namespace

Eigen::VectorXd query_occupancy_logits(const OccupancyField& field, const Points& queries) {
    const int R = field.triplane.resolution;
    const Eigen::Index n = queries.rows();
    Eigen::VectorXd logits(n);
#pragma omp parallel for schedule(static)
    for (Eigen::Index qi = 0; qi < n; ++qi) {
        Vec3 q = queries.row(qi);
        Eigen::VectorXd feat = Eigen::VectorXd::Zero(field.triplane.channels);
        for (int plane = 0; plane < 3; ++plane) {
            double u, v;
            plane_uv(plane, q, u, v);
            int idx[4];
            double w[4];
            bilerp_taps(R, u, v, idx, w);
            for (int k = 0; k < 4; ++k)
                feat += w[k] * field.triplane.planes[plane].row(idx[k]).transpose();
        }
        logits(qi) = mlp_logit(field.mlp, feat);
    }
    return logits;
}

double uncertainty_at_query(const std::array<Mat, 3>& unc_logits, int g, const Vec3& q) {
    double u_val = 1.0;
    for (int plane = 0; plane < 3; ++plane) {
        double u, v;
        plane_uv(plane, q, u, v);
        int idx[4];
        double w[4];
        bilerp_taps(g, u, v, idx, w);
        double psi = 0.0;
        for (int k = 0; k < 4; ++k) {
            double s = 1.0 / (1.0 + std::exp(-unc_logits[plane](idx[k], 0)));
            psi += w[k] * s;
        }
        u_val *= psi;
    }
    return u_val;
}

OccupancyGrid dense_grid_eval(const OccupancyField& field, int r, int chunk) {
    if (r < 2) throw std::invalid_argument("dense_grid_eval: resolution must be >= 2");
    if (chunk < 1) chunk = 1 << 16;
    OccupancyGrid grid;
    grid.r = r;
    const std::size_t total = static_cast<std::size_t>(r) * r * r;
    grid.values.assign(total, 0.0);
    grid.mask.assign(total, 1);

    for (std::size_t start = 0; start < total; start += static_cast<std::size_t>(chunk)) {
        std::size_t count = std::min<std::size_t>(chunk, total - start);
        Points pts(static_cast<Eigen::Index>(count), 3);
        for (std::size_t i = 0; i < count; ++i) {
            std::size_t flat = start + i;
            int iz = static_cast<int>(flat % r);
            int iy = static_cast<int>((flat / r) % r);
            int ix = static_cast<int>(flat / (static_cast<std::size_t>(r) * r));
            pts.row(static_cast<Eigen::Index>(i)) << grid_coord(ix, r), grid_coord(iy, r),
                grid_coord(iz, r);
        }
        Eigen::VectorXd logits = query_occupancy_logits(field, pts);
        for (std::size_t i = 0; i < count; ++i)
            grid.values[start + i] = 1.0 / (1.0 + std::exp(-logits(static_cast<Eigen::Index>(i))));
    }
    return grid;
}

OccupancyGrid multires_grid_eval(const OccupancyField& field, int coarse_r, int fine_r,
                                 int dilation, int chunk, double threshold) {
    if (fine_r % coarse_r != 0)
        throw std::invalid_argument("multires_grid_eval: fine_r must be divisible by coarse_r");
    OccupancyGrid coarse = dense_grid_eval(field, coarse_r, chunk);

    // coarse voxel (i,j,k) spans lattice cell [i, i+1] x ...; occupied when
    // any corner is at/above threshold
    const int vc = coarse_r - 1;
    std::vector<std::uint8_t> occupied(static_cast<std::size_t>(vc) * vc * vc, 0);
    auto vox = [vc](int i, int j, int k) {
        return (static_cast<std::size_t>(i) * vc + j) * vc + k;
    };
    for (int i = 0; i < vc; ++i)
        for (int j = 0; j < vc; ++j)
            for (int k = 0; k < vc; ++k) {
                bool occ = false;
                for (int d = 0; d < 8 && !occ; ++d)
                    occ = coarse.values[coarse.index(i + (d & 1), j + ((d >> 1) & 1),
                                                     k + ((d >> 2) & 1))] >= threshold;
                occupied[vox(i, j, k)] = occ ? 1 : 0;
            }

    if (dilation > 0) {
        std::vector<std::uint8_t> dilated(occupied.size(), 0);
        for (int i = 0; i < vc; ++i)
            for (int j = 0; j < vc; ++j)
                for (int k = 0; k < vc; ++k) {
                    if (!occupied[vox(i, j, k)]) continue;
                    for (int di = -dilation; di <= dilation; ++di)
                        for (int dj = -dilation; dj <= dilation; ++dj)
                            for (int dk = -dilation; dk <= dilation; ++dk) {
                                int ni = i + di, nj = j + dj, nk = k + dk;
                                if (ni < 0 || nj < 0 || nk < 0 || ni >= vc || nj >= vc || nk >= vc)
                                    continue;
                                dilated[vox(ni, nj, nk)] = 1;
                            }
                }
        occupied.swap(dilated);
    }

    OccupancyGrid grid;
    grid.r = fine_r;
    const std::size_t total = static_cast<std::size_t>(fine_r) * fine_r * fine_r;
    grid.values.assign(total, 0.0);
    grid.mask.assign(total, 0);

    auto coarse_voxel_of = [&](double x) {
        int v = static_cast<int>(std::floor(0.5 * (x + 1.0) * (coarse_r - 1)));
        return std::clamp(v, 0, vc - 1);
    };

    std::vector<std::size_t> pending;
    pending.reserve(total / 8);
    for (int ix = 0; ix < fine_r; ++ix) {
        int vi = coarse_voxel_of(grid_coord(ix, fine_r));
        for (int iy = 0; iy < fine_r; ++iy) {
            int vj = coarse_voxel_of(grid_coord(iy, fine_r));
            for (int iz = 0; iz < fine_r; ++iz) {
                int vk = coarse_voxel_of(grid_coord(iz, fine_r));
                if (occupied[vox(vi, vj, vk)]) pending.push_back(grid.index(ix, iy, iz));
            }
        }
    }

    if (chunk < 1) chunk = 1 << 16;
    for (std::size_t start = 0; start < pending.size(); start += static_cast<std::size_t>(chunk)) {
        std::size_t count = std::min<std::size_t>(chunk, pending.size() - start);
        Points pts(static_cast<Eigen::Index>(count), 3);
        for (std::size_t i = 0; i < count; ++i) {
            std::size_t flat = pending[start + i];
            int iz = static_cast<int>(flat % fine_r);
            int iy = static_cast<int>((flat / fine_r) % fine_r);
            int ix = static_cast<int>(flat / (static_cast<std::size_t>(fine_r) * fine_r));
            pts.row(static_cast<Eigen::Index>(i)) << grid_coord(ix, fine_r), grid_coord(iy, fine_r),
                grid_coord(iz, fine_r);
        }
        Eigen::VectorXd logits = query_occupancy_logits(field, pts);
        for (std::size_t i = 0; i < count; ++i) {
            grid.values[pending[start + i]] =
                1.0 / (1.0 + std::exp(-logits(static_cast<Eigen::Index>(i))));
            grid.mask[pending[start + i]] = 1;
        }
    }
    return grid;
}

FieldsNet::FieldsNet(nn::ParamStore& ps, const FieldsConfig& cfg, RandomStream& rng) : cfg_(cfg) {
    fc1_ = nn::make_linear(ps, "fields.fc1", cfg.triplane_channels, cfg.mlp_hidden, rng);
    fc2_ = nn::make_linear(ps, "fields.fc2", cfg.mlp_hidden, cfg.mlp_hidden, rng);
    fc3_ = nn::make_linear(ps, "fields.fc3", cfg.mlp_hidden, 1, rng);
}

void bilerp_table(int R, int plane, const Points& queries, Eigen::Matrix<int, Eigen::Dynamic, 4>& idx,
                  Eigen::Matrix<double, Eigen::Dynamic, 4>& w) {
    idx.resize(queries.rows(), 4);
    w.resize(queries.rows(), 4);
    for (Eigen::Index qi = 0; qi < queries.rows(); ++qi) {
        Vec3 q = queries.row(qi);
        double u, v;
        plane_uv(plane, q, u, v);
        int ti[4];
        double tw[4];
        bilerp_taps(R, u, v, ti, tw);
        for (int k = 0; k < 4; ++k) {
            idx(qi, k) = ti[k];
            w(qi, k) = tw[k];
        }
    }
}

ad::Tensor FieldsNet::query_logits(const std::array<ad::Tensor, 3>& planes, int R,
                                   const Points& queries) const {
    ad::Tensor feat;
    for (int plane = 0; plane < 3; ++plane) {
        Eigen::Matrix<int, Eigen::Dynamic, 4> idx;
        Eigen::Matrix<double, Eigen::Dynamic, 4> w;
        bilerp_table(R, plane, queries, idx, w);
        ad::Tensor s = ad::bilerp_rows(planes[plane], idx, w);
        feat = plane == 0 ? s : ad::add(feat, s);
    }
    return fc3_(ad::gelu(fc2_(ad::gelu(fc1_(feat)))));
}

ad::Tensor FieldsNet::uncertainty(const ad::Tensor& unc_logits, int g, const Points& queries) {
    ad::Tensor sig = ad::sigmoid(unc_logits);
    ad::Tensor u;
    for (int plane = 0; plane < 3; ++plane) {
        ad::Tensor plane_vals = ad::slice_rows(sig, static_cast<Eigen::Index>(plane) * g * g, g * g);
        Eigen::Matrix<int, Eigen::Dynamic, 4> idx;
        Eigen::Matrix<double, Eigen::Dynamic, 4> w;
        bilerp_table(g, plane, queries, idx, w);
        ad::Tensor psi = ad::bilerp_rows(plane_vals, idx, w);
        u = plane == 0 ? psi : ad::mul(u, psi);
    }
    return u;
}

OccupancyMlp FieldsNet::export_mlp() const {
    OccupancyMlp m;
    m.w1 = fc1_.w.value();
    m.b1 = fc1_.b.value();
    m.w2 = fc2_.w.value();
    m.b2 = fc2_.b.value();
    m.w3 = fc3_.w.value();
    m.b3 = fc3_.b.value();
    return m;
}

}  // namespace shapecodec::fields
