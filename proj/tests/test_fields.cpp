#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <map>

#include "shapecodec/fields.hpp"
#include "shapecodec/geometry.hpp"
#include "shapecodec/nn.hpp"
#include "test_util.hpp"

using namespace shapecodec;
using ad::Mat;
using ad::Tensor;
using fields::OccupancyField;
using fields::OccupancyGrid;
using fields::OccupancyMlp;
using fields::Triplane;
using geometry::Points;
using geometry::Vec3;

namespace {

// scalar bilinear reference with the same cell-center convention
Eigen::VectorXd scalar_bilerp(const Mat& plane, int R, double u, double v) {
    u = std::clamp(u, -1.0, 1.0);
    v = std::clamp(v, -1.0, 1.0);
    double cu = 0.5 * (u + 1.0) * (R - 1);
    double cv = 0.5 * (v + 1.0) * (R - 1);
    int iu = std::clamp(static_cast<int>(std::floor(cu)), 0, R - 2);
    int iv = std::clamp(static_cast<int>(std::floor(cv)), 0, R - 2);
    double fu = cu - iu, fv = cv - iv;
    Eigen::VectorXd out = Eigen::VectorXd::Zero(plane.cols());
    for (int a = 0; a < 2; ++a)
        for (int b = 0; b < 2; ++b) {
            double w = (a ? fu : 1.0 - fu) * (b ? fv : 1.0 - fv);
            out += w * plane.row((iu + a) * R + (iv + b)).transpose();
        }
    return out;
}

OccupancyMlp tiny_mlp(int channels, int hidden, RandomStream& rng, double scale = 0.5) {
    OccupancyMlp m;
    m.w1 = testutil::random_matrix(channels, hidden, rng, scale);
    m.b1 = Mat::Zero(1, hidden);
    m.w2 = testutil::random_matrix(hidden, hidden, rng, scale);
    m.b2 = Mat::Zero(1, hidden);
    m.w3 = testutil::random_matrix(hidden, 1, rng, scale);
    m.b3 = Mat::Zero(1, 1);
    return m;
}

Triplane random_triplane(int R, int channels, RandomStream& rng, double scale = 0.5) {
    Triplane t;
    t.resolution = R;
    t.channels = channels;
    for (int p = 0; p < 3; ++p) t.planes[p] = testutil::random_matrix(R * R, channels, rng, scale);
    return t;
}

// Analytic sphere probability grid (1 inside, 0 outside).
OccupancyGrid sphere_grid(int r, double radius) {
    OccupancyGrid g;
    g.r = r;
    g.values.assign(static_cast<size_t>(r) * r * r, 0.0);
    g.mask.assign(g.values.size(), 1);
    for (int ix = 0; ix < r; ++ix)
        for (int iy = 0; iy < r; ++iy)
            for (int iz = 0; iz < r; ++iz) {
                Vec3 p(fields::grid_coord(ix, r), fields::grid_coord(iy, r), fields::grid_coord(iz, r));
                g.values[g.index(ix, iy, iz)] = p.norm() <= radius ? 1.0 : 0.0;
            }
    return g;
}

}  // namespace

TEST_CASE("bilinear sampling hits texel centers and midpoints") {
    RandomStream rng(1);
    const int R = 8;
    Mat plane = testutil::random_matrix(R * R, 4, rng);

    // uv=-1 -> texel 0, uv=+1 -> texel R-1
    CHECK((fields::sample_plane(plane, R, -1.0, -1.0) - plane.row(0).transpose()).norm() == 0.0);
    CHECK((fields::sample_plane(plane, R, 1.0, 1.0) - plane.row(R * R - 1).transpose()).norm() == 0.0);

    // exact texel center (2,5)
    double u = -1.0 + 2.0 * 2 / (R - 1), v = -1.0 + 2.0 * 5 / (R - 1);
    CHECK((fields::sample_plane(plane, R, u, v) - plane.row(2 * R + 5).transpose()).norm() < 1e-12);

    // midpoint of 4 texels -> arithmetic mean
    double um = -1.0 + 2.0 * 2.5 / (R - 1), vm = -1.0 + 2.0 * 5.5 / (R - 1);
    Eigen::VectorXd mean4 = 0.25 * (plane.row(2 * R + 5) + plane.row(2 * R + 6) +
                                    plane.row(3 * R + 5) + plane.row(3 * R + 6))
                                       .transpose();
    CHECK((fields::sample_plane(plane, R, um, vm) - mean4).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("bilinear sampling matches a scalar reference on random uv") {
    RandomStream rng(2);
    const int R = 13;
    Mat plane = testutil::random_matrix(R * R, 5, rng);
    for (int i = 0; i < 200; ++i) {
        double u = rng.uniform(-1.2, 1.2);  // exercises clamping too
        double v = rng.uniform(-1.2, 1.2);
        Eigen::VectorXd got = fields::sample_plane(plane, R, u, v);
        Eigen::VectorXd want = scalar_bilerp(plane, R, u, v);
        CHECK((got - want).cwiseAbs().maxCoeff() < 1e-6);
    }
}

TEST_CASE("bilinear sampling is piecewise linear along grid-aligned segments") {
    RandomStream rng(3);
    const int R = 9;
    Mat plane = testutil::random_matrix(R * R, 3, rng);
    // fix v inside a cell, vary u within one cell
    double v = -1.0 + 2.0 * 3.3 / (R - 1);
    double u0 = -1.0 + 2.0 * 5.0 / (R - 1);
    double u1 = -1.0 + 2.0 * 6.0 / (R - 1);
    Eigen::VectorXd s0 = fields::sample_plane(plane, R, u0, v);
    Eigen::VectorXd s1 = fields::sample_plane(plane, R, u1, v);
    for (double t : {0.2, 0.5, 0.8}) {
        Eigen::VectorXd st = fields::sample_plane(plane, R, u0 + t * (u1 - u0), v);
        CHECK((st - ((1 - t) * s0 + t * s1)).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("query features are symmetric under the plane permutation") {
    RandomStream rng(4);
    const int R = 7, C = 3;
    Triplane t = random_triplane(R, C, rng);

    auto transpose_plane = [R](const Mat& p) {
        Mat out(p.rows(), p.cols());
        for (int u = 0; u < R; ++u)
            for (int v = 0; v < R; ++v) out.row(u * R + v) = p.row(v * R + u);
        return out;
    };
    Triplane t2;
    t2.resolution = R;
    t2.channels = C;
    t2.planes[0] = t.planes[1];                   // xy' <- yz
    t2.planes[1] = transpose_plane(t.planes[2]);  // yz' <- xz^T
    t2.planes[2] = transpose_plane(t.planes[0]);  // xz' <- xy^T

    for (int i = 0; i < 50; ++i) {
        Vec3 q(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
        Vec3 q2(q.y(), q.z(), q.x());
        auto feature = [R](const Triplane& tp, const Vec3& p) {
            Eigen::VectorXd f = Eigen::VectorXd::Zero(tp.channels);
            for (int plane = 0; plane < 3; ++plane) {
                double u, v;
                fields::plane_uv(plane, p, u, v);
                f += fields::sample_plane(tp.planes[plane], R, u, v);
            }
            return f;
        };
        CHECK((feature(t, q) - feature(t2, q2)).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("query_occupancy constant case and empty batch") {
    RandomStream rng(5);
    OccupancyField f;
    f.triplane.resolution = 4;
    f.triplane.channels = 3;
    for (int p = 0; p < 3; ++p) f.triplane.planes[p] = Mat::Zero(16, 3);
    f.mlp = tiny_mlp(3, 4, rng);
    f.mlp.w1.setZero();
    f.mlp.w2.setZero();
    f.mlp.w3.setZero();
    f.mlp.b3.setConstant(0.7);

    Points q = testutil::random_matrix(10, 3, rng, 0.5);
    Eigen::VectorXd logits = fields::query_occupancy_logits(f, q);
    for (Eigen::Index i = 0; i < 10; ++i) CHECK(logits(i) == 0.7);

    CHECK(fields::query_occupancy_logits(f, Points(0, 3)).size() == 0);
}

TEST_CASE("query logits gradient wrt plane texels") {
    RandomStream rng(6);
    nn::ParamStore ps;
    fields::FieldsConfig cfg;
    cfg.triplane_channels = 4;
    cfg.mlp_hidden = 8;
    fields::FieldsNet net(ps, cfg, rng);
    const int R = 5;

    std::array<Tensor, 3> planes = {Tensor::param(testutil::random_matrix(R * R, 4, rng, 0.4)),
                                    Tensor::param(testutil::random_matrix(R * R, 4, rng, 0.4)),
                                    Tensor::param(testutil::random_matrix(R * R, 4, rng, 0.4))};
    Points q = testutil::random_matrix(12, 3, rng, 0.6);

    auto loss = [&] { return ad::mean(net.query_logits(planes, R, q)); };
    ps.freeze_all();  // probe only the texels
    CHECK(testutil::gradcheck(planes[0], loss, 1e-6, 32) < 1e-3);
    CHECK(testutil::gradcheck(planes[2], loss, 1e-6, 32) < 1e-3);
}

TEST_CASE("uncertainty retrieval matches the scalar product form") {
    RandomStream rng(7);
    const int g = 5;
    std::array<Mat, 3> unc = {testutil::random_matrix(g * g, 1, rng),
                              testutil::random_matrix(g * g, 1, rng),
                              testutil::random_matrix(g * g, 1, rng)};

    // all-zero logits -> (1/2)^3 = 0.125 exactly
    std::array<Mat, 3> zeros = {Mat::Zero(g * g, 1), Mat::Zero(g * g, 1), Mat::Zero(g * g, 1)};
    CHECK(fields::uncertainty_at_query(zeros, g, Vec3(0.1, -0.4, 0.7)) == 0.125);

    // saturated logits -> 1 within 1e-8
    std::array<Mat, 3> big = {Mat::Constant(g * g, 1, 20.0), Mat::Constant(g * g, 1, 20.0),
                              Mat::Constant(g * g, 1, 20.0)};
    CHECK(std::abs(fields::uncertainty_at_query(big, g, Vec3(0, 0, 0)) - 1.0) < 1e-8);

    // scalar reference on random cases (also exercised through the graph op)
    Mat stacked(3 * g * g, 1);
    stacked << unc[0], unc[1], unc[2];
    for (int i = 0; i < 20; ++i) {
        Vec3 q(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
        double ref = 1.0;
        for (int plane = 0; plane < 3; ++plane) {
            double u, v;
            fields::plane_uv(plane, q, u, v);
            Mat sig = (1.0 / (1.0 + (-unc[plane].array()).exp())).matrix();
            ref *= scalar_bilerp(sig, g, u, v)(0);
        }
        CHECK(std::abs(fields::uncertainty_at_query(unc, g, q) - ref) < 1e-6);

        Points qp(1, 3);
        qp.row(0) = q;
        double via_graph =
            fields::FieldsNet::uncertainty(Tensor::constant(stacked), g, qp).value()(0, 0);
        CHECK(std::abs(via_graph - ref) < 1e-6);
    }
}

TEST_CASE("dense grid evaluation: counts, chunk invariance, constant fields") {
    RandomStream rng(8);
    OccupancyField f;
    f.triplane = random_triplane(4, 2, rng);
    f.mlp = tiny_mlp(2, 4, rng);

    OccupancyGrid g128 = fields::dense_grid_eval(f, 128, 1 << 16);
    CHECK(g128.values.size() == 2097152);  // 128^3 evaluations
    std::size_t mask_sum = 0;
    for (auto m : g128.mask) mask_sum += m;
    CHECK(mask_sum == g128.values.size());

    OccupancyGrid a = fields::dense_grid_eval(f, 32, 4096);
    OccupancyGrid b = fields::dense_grid_eval(f, 32, 65536);
    double max_diff = 0.0;
    for (size_t i = 0; i < a.values.size(); ++i)
        max_diff = std::max(max_diff, std::abs(a.values[i] - b.values[i]));
    CHECK(max_diff == 0.0);

    // constant-logit field
    OccupancyField fc = f;
    for (int p = 0; p < 3; ++p) fc.triplane.planes[p].setZero();
    fc.mlp.w1.setZero();
    fc.mlp.w2.setZero();
    fc.mlp.w3.setZero();
    fc.mlp.b3.setConstant(1.3);
    OccupancyGrid gc = fields::dense_grid_eval(fc, 8, 0);
    double expect = 1.0 / (1.0 + std::exp(-1.3));
    for (double v : gc.values) CHECK(v == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("multires evaluation is exact on evaluated cells and skips empties") {
    RandomStream rng(9);
    OccupancyField f;
    f.triplane = random_triplane(8, 3, rng, 1.2);
    f.mlp = tiny_mlp(3, 8, rng, 0.8);

    OccupancyGrid dense = fields::dense_grid_eval(f, 32, 0);
    OccupancyGrid multi = fields::multires_grid_eval(f, 16, 32, 1, 0);
    std::size_t evaluated = 0;
    for (size_t i = 0; i < multi.values.size(); ++i) {
        if (!multi.mask[i]) {
            CHECK(multi.values[i] == 0.0);
            continue;
        }
        ++evaluated;
        CHECK(multi.values[i] == dense.values[i]);  // bitwise
    }
    CHECK(evaluated > 0);

    // empty field: no coarse voxel is occupied, fine pass evaluates nothing
    OccupancyField fe = f;
    for (int p = 0; p < 3; ++p) fe.triplane.planes[p].setZero();
    fe.mlp.w1.setZero();
    fe.mlp.w2.setZero();
    fe.mlp.w3.setZero();
    fe.mlp.b3.setConstant(-20.0);
    OccupancyGrid ge = fields::multires_grid_eval(fe, 16, 32, 1, 0);
    std::size_t n_eval = 0;
    for (auto m : ge.mask) n_eval += m;
    CHECK(n_eval == 0);

    CHECK_THROWS_AS(fields::multires_grid_eval(f, 24, 32, 1, 0), std::invalid_argument);
}

TEST_CASE("extract_mesh on an analytic sphere grid") {
    const int r = 64;
    const double radius = 0.5;
    OccupancyGrid grid = sphere_grid(r, radius);
    mesh::Mesh m = fields::extract_mesh(grid, 0.5);
    REQUIRE(!m.empty());
    const double cell = 2.0 / (r - 1);
    for (const auto& v : m.vertices) {
        CHECK(v.norm() >= radius - 2.0 * cell);
        CHECK(v.norm() <= radius + 2.0 * cell);
    }
}

TEST_CASE("extract_mesh degenerate grids") {
    OccupancyGrid zeros;
    zeros.r = 8;
    zeros.values.assign(512, 0.0);
    zeros.mask.assign(512, 1);
    CHECK(fields::extract_mesh(zeros, 0.5).empty());

    // everywhere-inside: no crossings, no boundary capping
    OccupancyGrid ones = zeros;
    ones.values.assign(512, 1.0);
    CHECK(fields::extract_mesh(ones, 0.5).empty());

    CHECK_THROWS_AS(fields::extract_mesh(zeros, 0.0), std::invalid_argument);
}

TEST_CASE("extracted closed isosurfaces are watertight") {
    OccupancyGrid grid = sphere_grid(48, 0.55);
    mesh::Mesh m = fields::extract_mesh(grid, 0.5);
    REQUIRE(m.faces.size() > 100);
    std::map<std::pair<int, int>, int> edge_count;
    for (const auto& f : m.faces) {
        for (int e = 0; e < 3; ++e) {
            int a = f[static_cast<size_t>(e)], b = f[static_cast<size_t>((e + 1) % 3)];
            edge_count[std::minmax(a, b)]++;
        }
    }
    for (const auto& [edge, count] : edge_count) CHECK(count == 2);
}

TEST_CASE("sphere-overfit field: multires mesh matches the dense mesh") {
    // small standalone field trained directly against the analytic sphere
    RandomStream rng(10);
    nn::ParamStore ps;
    fields::FieldsConfig cfg;
    cfg.triplane_channels = 8;
    cfg.mlp_hidden = 32;
    fields::FieldsNet net(ps, cfg, rng);
    const int R = 16;
    std::array<Tensor, 3> planes;
    for (int p = 0; p < 3; ++p)
        planes[p] = ps.create("plane" + std::to_string(p), R * R, 8, 0.02, rng);

    geometry::ProceduralShape sphere;
    sphere.kind = geometry::ShapeKind::Sphere;
    sphere.radius = 0.45;

    nn::AdamW opt;
    opt.lr = 3e-3;
    opt.weight_decay = 0.0;
    for (int step = 0; step < 400; ++step) {
        auto batch = geometry::sample_queries(sphere, 512, 512, 0.05, mix_seed(11, step));
        ps.zero_grads();
        Tensor logits = net.query_logits(planes, R, batch.points);
        Tensor loss = ad::mean(ad::bce_with_logits(logits, batch.labels));
        ad::backward(loss);
        opt.step(ps);
    }

    OccupancyField f;
    f.triplane.resolution = R;
    f.triplane.channels = 8;
    for (int p = 0; p < 3; ++p) f.triplane.planes[p] = planes[p].value();
    f.mlp = net.export_mlp();

    OccupancyGrid dense = fields::dense_grid_eval(f, 64, 0);
    OccupancyGrid multi = fields::multires_grid_eval(f, 32, 64, 1, 0);
    mesh::Mesh mesh_dense = fields::extract_mesh(dense, 0.5);
    mesh::Mesh mesh_multi = fields::extract_mesh(multi, 0.5);
    REQUIRE(!mesh_dense.empty());
    REQUIRE(!mesh_multi.empty());

    RandomStream qrng(12);
    Points q = testutil::random_matrix(4000, 3, qrng, 0.6);
    Eigen::VectorXd in_dense = mesh::mesh_occupancy(mesh_dense, q);
    Eigen::VectorXd in_multi = mesh::mesh_occupancy(mesh_multi, q);
    double inter = 0, uni = 0;
    for (Eigen::Index i = 0; i < q.rows(); ++i) {
        inter += (in_dense(i) > 0 && in_multi(i) > 0) ? 1 : 0;
        uni += (in_dense(i) > 0 || in_multi(i) > 0) ? 1 : 0;
    }
    REQUIRE(uni > 0);
    CHECK(inter / uni >= 0.99);
}
