#include "shapecodec/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace shapecodec::metrics {

BatchIndicator batch_indicator(const Indicator& f) {
    return [f](const Points& pts) {
        std::vector<char> out(static_cast<size_t>(pts.rows()));
        for (Eigen::Index i = 0; i < pts.rows(); ++i) out[static_cast<size_t>(i)] = f(pts.row(i)) ? 1 : 0;
        return out;
    };
}

namespace {

double iou_from_samples(const BatchIndicator& a, const BatchIndicator& ref, const Points& pts,
                        bool* zero_union) {
    std::vector<char> in_a = a(pts);
    std::vector<char> in_ref = ref(pts);
    long long inter = 0, uni = 0;
    for (size_t i = 0; i < in_a.size(); ++i) {
        inter += (in_a[i] && in_ref[i]) ? 1 : 0;
        uni += (in_a[i] || in_ref[i]) ? 1 : 0;
    }
    if (zero_union) *zero_union = (uni == 0);
    if (uni == 0) return 100.0;  // both empty over the sample: identical
    return 100.0 * static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace

double iou_volumetric(const BatchIndicator& a, const BatchIndicator& ref, int n_queries,
                      std::uint64_t seed, bool* zero_union) {
    RandomStream rng(seed);
    Points pts(n_queries, 3);
    for (int i = 0; i < n_queries; ++i)
        pts.row(i) << rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0);
    return iou_from_samples(a, ref, pts, zero_union);
}

double iou_volumetric(const Indicator& a, const Indicator& ref, int n_queries, std::uint64_t seed,
                      bool* zero_union) {
    return iou_volumetric(batch_indicator(a), batch_indicator(ref), n_queries, seed, zero_union);
}

double iou_near_surface(const BatchIndicator& a, const BatchIndicator& ref,
                        const SurfaceSampler& surface, int n_queries, double near_sigma,
                        std::uint64_t seed, bool* zero_union) {
    RandomStream rng(seed);
    Points pts(n_queries, 3);
    for (int i = 0; i < n_queries; ++i) {
        Vec3 p = surface(rng) + near_sigma * Vec3(rng.normal(), rng.normal(), rng.normal());
        pts.row(i) = p.cwiseMax(-1.0).cwiseMin(1.0);
    }
    return iou_from_samples(a, ref, pts, zero_union);
}

double iou_near_surface(const Indicator& a, const Indicator& ref, const SurfaceSampler& surface,
                        int n_queries, double near_sigma, std::uint64_t seed, bool* zero_union) {
    return iou_near_surface(batch_indicator(a), batch_indicator(ref), surface, n_queries,
                            near_sigma, seed, zero_union);
}

namespace {

// directed mean nearest-neighbor distance from a to b; per-point results are
// summed in index order so the value is independent of thread count
double directed_nn_mean(const Points& a, const Points& b) {
    Eigen::VectorXd nn(a.rows());
#pragma omp parallel for schedule(static)
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        double best = std::numeric_limits<double>::infinity();
        for (Eigen::Index j = 0; j < b.rows(); ++j) {
            double d2 = (a.row(i) - b.row(j)).squaredNorm();
            if (d2 < best) best = d2;
        }
        nn(i) = std::sqrt(best);
    }
    double sum = 0.0;
    for (Eigen::Index i = 0; i < a.rows(); ++i) sum += nn(i);
    return sum / static_cast<double>(a.rows());
}

}  // namespace

double chamfer_distance(const Points& a, const Points& b) {
    if (a.rows() == 0 || b.rows() == 0)
        throw std::invalid_argument("chamfer_distance: empty point set");
    return directed_nn_mean(a, b) + directed_nn_mean(b, a);
}

double f_score(const Points& a, const Points& b, double tau) {
    if (a.rows() == 0 || b.rows() == 0) throw std::invalid_argument("f_score: empty point set");
    auto fraction_within = [tau](const Points& from, const Points& to) {
        long long hits = 0;
#pragma omp parallel for reduction(+ : hits) schedule(static)
        for (Eigen::Index i = 0; i < from.rows(); ++i) {
            double best = std::numeric_limits<double>::infinity();
            for (Eigen::Index j = 0; j < to.rows(); ++j)
                best = std::min(best, (from.row(i) - to.row(j)).squaredNorm());
            if (std::sqrt(best) <= tau) ++hits;
        }
        return static_cast<double>(hits) / static_cast<double>(from.rows());
    };
    double precision = fraction_within(a, b);
    double recall = fraction_within(b, a);
    if (precision + recall <= 0.0) return 0.0;
    return 100.0 * 2.0 * precision * recall / (precision + recall);
}

SetMetrics set_metrics(const std::vector<Points>& gen, const std::vector<Points>& ref) {
    if (gen.empty() || ref.empty()) throw std::invalid_argument("set_metrics: empty shape set");
    const int ng = static_cast<int>(gen.size()), nr = static_cast<int>(ref.size());

    Eigen::MatrixXd cross(ng, nr);  // CD(gen_i, ref_j)
    for (int i = 0; i < ng; ++i)
        for (int j = 0; j < nr; ++j) cross(i, j) = chamfer_distance(gen[static_cast<size_t>(i)],
                                                                    ref[static_cast<size_t>(j)]);

    SetMetrics out;
    // MMD: mean over ref of the closest gen
    double mmd = 0.0;
    for (int j = 0; j < nr; ++j) mmd += cross.col(j).minCoeff();
    out.mmd = mmd / nr;

    // COV: distinct ref shapes claimed as nearest by some gen
    std::vector<char> covered(static_cast<size_t>(nr), 0);
    for (int i = 0; i < ng; ++i) {
        int best_j = 0;
        cross.row(i).minCoeff(&best_j);
        covered[static_cast<size_t>(best_j)] = 1;
    }
    out.cov_percent = 100.0 * std::accumulate(covered.begin(), covered.end(), 0) / nr;

    // 1-NNA: leave-one-out over gen + ref; ties prefer the cross-set
    // neighbor, so identical sets read 0%
    if (ng != nr)
        throw std::invalid_argument("set_metrics: 1-NNA requires |gen| == |ref| (" +
                                    std::to_string(ng) + " vs " + std::to_string(nr) + ")");
    const int total = ng + nr;
    auto point_set = [&](int idx) -> const Points& {
        return idx < ng ? gen[static_cast<size_t>(idx)] : ref[static_cast<size_t>(idx - ng)];
    };
    Eigen::MatrixXd all(total, total);
    for (int i = 0; i < total; ++i) {
        all(i, i) = std::numeric_limits<double>::infinity();
        for (int j = i + 1; j < total; ++j) {
            double d;
            if (i < ng && j >= ng) d = cross(i, j - ng);
            else d = chamfer_distance(point_set(i), point_set(j));
            all(i, j) = d;
            all(j, i) = d;
        }
    }
    int correct = 0;
    for (int i = 0; i < total; ++i) {
        int best_j = -1;
        double best = std::numeric_limits<double>::infinity();
        bool best_cross = false;
        for (int j = 0; j < total; ++j) {
            if (j == i) continue;
            bool cross_set = (i < ng) != (j < ng);
            if (all(i, j) < best || (all(i, j) == best && cross_set && !best_cross)) {
                best = all(i, j);
                best_j = j;
                best_cross = cross_set;
            }
        }
        if ((i < ng) == (best_j < ng)) ++correct;
    }
    out.nna_percent = 100.0 * correct / total;
    return out;
}

nlohmann::json MetricReport::to_json() const {
    return {{"name", name},
            {"parameters", parameters},
            {"per_sample", per_sample},
            {"aggregate", aggregate}};
}

MetricReport MetricReport::make(std::string name, nlohmann::json params, std::vector<double> values) {
    MetricReport r;
    r.name = std::move(name);
    r.parameters = std::move(params);
    r.per_sample = std::move(values);
    r.aggregate = r.per_sample.empty()
                      ? 0.0
                      : std::accumulate(r.per_sample.begin(), r.per_sample.end(), 0.0) /
                            static_cast<double>(r.per_sample.size());
    return r;
}

}  // namespace shapecodec::metrics
