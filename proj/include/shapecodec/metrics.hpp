#pragma once

#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "shapecodec/geometry.hpp"

namespace shapecodec::metrics {

using geometry::Points;
using geometry::Vec3;

using Indicator = std::function<bool(const Vec3&)>;
// Returns one 0/1 char per query row; lets callers evaluate in batches.
using BatchIndicator = std::function<std::vector<char>(const Points&)>;
using SurfaceSampler = std::function<Vec3(RandomStream&)>;

BatchIndicator batch_indicator(const Indicator& f);

// Monte-Carlo volumetric IoU (percent) over uniform samples of [-1,1]^3.
// An empty union counts as 100% agreement (flagged via zero_union).
double iou_volumetric(const BatchIndicator& a, const BatchIndicator& ref, int n_queries,
                      std::uint64_t seed, bool* zero_union = nullptr);
double iou_volumetric(const Indicator& a, const Indicator& ref, int n_queries, std::uint64_t seed,
                      bool* zero_union = nullptr);

// IoU (percent) over the near-surface distribution: reference surface
// samples plus isotropic Gaussian noise, clamped to the cube.
double iou_near_surface(const BatchIndicator& a, const BatchIndicator& ref,
                        const SurfaceSampler& surface, int n_queries, double near_sigma,
                        std::uint64_t seed, bool* zero_union = nullptr);
double iou_near_surface(const Indicator& a, const Indicator& ref, const SurfaceSampler& surface,
                        int n_queries, double near_sigma, std::uint64_t seed,
                        bool* zero_union = nullptr);

// Two-sided sum of mean nearest-neighbor L2 distances (not squared). This
// convention is reported alongside values because published CD scales vary.
double chamfer_distance(const Points& a, const Points& b);

// Harmonic mean (percent) of precision/recall at distance threshold tau.
double f_score(const Points& a, const Points& b, double tau);

struct SetMetrics {
    double mmd = 0.0;          // mean over ref of min CD to gen
    double cov_percent = 0.0;  // fraction of ref matched as some gen's nearest
    double nna_percent = 0.0;  // leave-one-out 1-NN accuracy on gen + ref
};

// CD-based set-level generation metrics over pre-sampled point sets.
// 1-NNA requires |gen| == |ref|; distance ties break toward the cross-set
// neighbor, so identical sets score exactly 0%.
SetMetrics set_metrics(const std::vector<Points>& gen, const std::vector<Points>& ref);

struct MetricReport {
    std::string name;
    nlohmann::json parameters;
    std::vector<double> per_sample;
    double aggregate = 0.0;  // mean of per_sample

    nlohmann::json to_json() const;
    static MetricReport make(std::string name, nlohmann::json params, std::vector<double> values);
};

}  // namespace shapecodec::metrics
