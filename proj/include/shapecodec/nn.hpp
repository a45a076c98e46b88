#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "shapecodec/ad.hpp"
#include "shapecodec/rng.hpp"

namespace shapecodec::nn {

using ad::Mat;
using ad::Tensor;

// Named parameter registry. Construction order is irrelevant for
// serialization (the map keeps names sorted), but names must be stable
// across runs for checkpoints to load back.
class ParamStore {
public:
    Tensor create(const std::string& name, Eigen::Index rows, Eigen::Index cols, double stddev,
                  RandomStream& rng);
    Tensor create_zeros(const std::string& name, Eigen::Index rows, Eigen::Index cols);
    Tensor create_const(const std::string& name, Mat init);

    Tensor get(const std::string& name) const;
    bool has(const std::string& name) const { return params_.count(name) > 0; }
    const std::map<std::string, Tensor>& all() const { return params_; }

    // Freezing toggles requires-grad on the underlying nodes: frozen
    // parameters receive no gradient and are skipped by the optimizer.
    void freeze_all();
    void unfreeze_prefix(const std::string& prefix);
    void unfreeze_all();
    bool is_frozen(const std::string& name) const { return frozen_.count(name) > 0; }
    const std::set<std::string>& frozen() const { return frozen_; }

    void zero_grads();
    std::size_t total_parameters() const;

private:
    std::map<std::string, Tensor> params_;
    std::set<std::string> frozen_;
};

struct Linear {
    Tensor w;  // in x out
    Tensor b;  // 1 x out (undefined when bias-less)

    Tensor operator()(const Tensor& x) const {
        Tensor y = ad::matmul(x, w);
        return b.defined() ? ad::add_rowvec(y, b) : y;
    }
};

Linear make_linear(ParamStore& ps, const std::string& name, Eigen::Index in, Eigen::Index out,
                   RandomStream& rng, bool bias = true);

struct LayerNorm {
    Tensor gamma, beta;
    Tensor operator()(const Tensor& x) const {
        return ad::add_rowvec(ad::mul_rowvec(ad::layernorm_rows(x), gamma), beta);
    }
};

LayerNorm make_layernorm(ParamStore& ps, const std::string& name, Eigen::Index width);

struct MultiheadAttention {
    int n_heads = 1;
    Linear q, k, v, o;

    // query: Nq x C, context: Nk x C
    Tensor operator()(const Tensor& query, const Tensor& context) const;
};

MultiheadAttention make_attention(ParamStore& ps, const std::string& name, Eigen::Index width,
                                  int n_heads, RandomStream& rng);

struct FeedForward {
    Linear fc1, fc2;
    Tensor operator()(const Tensor& x) const { return fc2(ad::gelu(fc1(x))); }
};

FeedForward make_feedforward(ParamStore& ps, const std::string& name, Eigen::Index width,
                             int expansion, RandomStream& rng);

// Pre-norm residual transformer block: x += Attn(LN(x), LN(ctx)); x += FF(LN(x)).
// Self-attention is the ctx == x case.
struct AttentionBlock {
    LayerNorm ln_q, ln_ctx, ln_ff;
    MultiheadAttention attn;
    FeedForward ff;

    Tensor self_forward(const Tensor& x) const;
    Tensor cross_forward(const Tensor& x, const Tensor& ctx) const;
};

AttentionBlock make_block(ParamStore& ps, const std::string& name, Eigen::Index width, int n_heads,
                          RandomStream& rng, int expansion = 4);

// Decoupled weight decay Adam. Moments are keyed by parameter name so they
// serialize into checkpoints and survive resume.
class AdamW {
public:
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;

    void step(ParamStore& ps);
    long long step_count() const { return t_; }

    // checkpoint access
    std::map<std::string, std::pair<Mat, Mat>>& moments() { return moments_; }
    const std::map<std::string, std::pair<Mat, Mat>>& moments() const { return moments_; }
    void set_step_count(long long t) { t_ = t; }

private:
    long long t_ = 0;
    std::map<std::string, std::pair<Mat, Mat>> moments_;
};

}  // namespace shapecodec::nn
