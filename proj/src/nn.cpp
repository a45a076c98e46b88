#include "shapecodec/nn.hpp"

#include <cmath>
#include <stdexcept>

#include "shapecodec/errors.hpp"

namespace shapecodec::nn {

Tensor ParamStore::create(const std::string& name, Eigen::Index rows, Eigen::Index cols,
                          double stddev, RandomStream& rng) {
    Mat m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = stddev * rng.normal();
    return create_const(name, std::move(m));
}

Tensor ParamStore::create_zeros(const std::string& name, Eigen::Index rows, Eigen::Index cols) {
    return create_const(name, Mat::Zero(rows, cols));
}

Tensor ParamStore::create_const(const std::string& name, Mat init) {
    if (params_.count(name)) throw std::logic_error("duplicate parameter name: " + name);
    Tensor t = Tensor::param(std::move(init));
    params_.emplace(name, t);
    return t;
}

Tensor ParamStore::get(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::logic_error("unknown parameter: " + name);
    return it->second;
}

void ParamStore::freeze_all() {
    for (auto& [name, t] : params_) {
        t.node()->needs_grad = false;
        frozen_.insert(name);
    }
}

void ParamStore::unfreeze_prefix(const std::string& prefix) {
    for (auto& [name, t] : params_) {
        if (name.rfind(prefix, 0) == 0) {
            t.node()->needs_grad = true;
            frozen_.erase(name);
        }
    }
}

void ParamStore::unfreeze_all() {
    for (auto& [name, t] : params_) t.node()->needs_grad = true;
    frozen_.clear();
}

void ParamStore::zero_grads() {
    for (auto& [name, t] : params_) t.zero_grad();
}

std::size_t ParamStore::total_parameters() const {
    std::size_t n = 0;
    for (const auto& [name, t] : params_) n += static_cast<std::size_t>(t.rows() * t.cols());
    return n;
}

Linear make_linear(ParamStore& ps, const std::string& name, Eigen::Index in, Eigen::Index out,
                   RandomStream& rng, bool bias) {
    Linear l;
    l.w = ps.create(name + ".w", in, out, 1.0 / std::sqrt(static_cast<double>(in)), rng);
    if (bias) l.b = ps.create_zeros(name + ".b", 1, out);
    return l;
}

LayerNorm make_layernorm(ParamStore& ps, const std::string& name, Eigen::Index width) {
    LayerNorm ln;
    ln.gamma = ps.create_const(name + ".g", Mat::Ones(1, width));
    ln.beta = ps.create_zeros(name + ".b", 1, width);
    return ln;
}

Tensor MultiheadAttention::operator()(const Tensor& query, const Tensor& context) const {
    const Eigen::Index width = q.w.cols();
    if (width % n_heads != 0) throw std::invalid_argument("attention width not divisible by heads");
    const Eigen::Index dh = width / n_heads;
    const double att_scale = 1.0 / std::sqrt(static_cast<double>(dh));

    Tensor Q = q(query), K = k(context), V = v(context);
    std::vector<Tensor> heads;
    heads.reserve(static_cast<size_t>(n_heads));
    for (int h = 0; h < n_heads; ++h) {
        Tensor Qh = ad::slice_cols(Q, h * dh, dh);
        Tensor Kh = ad::slice_cols(K, h * dh, dh);
        Tensor Vh = ad::slice_cols(V, h * dh, dh);
        Tensor scores = ad::scale(ad::matmul(Qh, ad::transpose(Kh)), att_scale);
        heads.push_back(ad::matmul(ad::softmax_rows(scores), Vh));
    }
    return o(n_heads == 1 ? heads[0] : ad::concat_cols(heads));
}

MultiheadAttention make_attention(ParamStore& ps, const std::string& name, Eigen::Index width,
                                  int n_heads, RandomStream& rng) {
    MultiheadAttention a;
    a.n_heads = n_heads;
    a.q = make_linear(ps, name + ".q", width, width, rng);
    a.k = make_linear(ps, name + ".k", width, width, rng);
    a.v = make_linear(ps, name + ".v", width, width, rng);
    a.o = make_linear(ps, name + ".o", width, width, rng);
    return a;
}

FeedForward make_feedforward(ParamStore& ps, const std::string& name, Eigen::Index width,
                             int expansion, RandomStream& rng) {
    FeedForward f;
    f.fc1 = make_linear(ps, name + ".fc1", width, width * expansion, rng);
    f.fc2 = make_linear(ps, name + ".fc2", width * expansion, width, rng);
    return f;
}

Tensor AttentionBlock::self_forward(const Tensor& x) const {
    Tensor h = ln_q(x);
    Tensor y = ad::add(x, attn(h, h));
    return ad::add(y, ff(ln_ff(y)));
}

Tensor AttentionBlock::cross_forward(const Tensor& x, const Tensor& ctx) const {
    Tensor y = ad::add(x, attn(ln_q(x), ln_ctx(ctx)));
    return ad::add(y, ff(ln_ff(y)));
}

AttentionBlock make_block(ParamStore& ps, const std::string& name, Eigen::Index width, int n_heads,
                          RandomStream& rng, int expansion) {
    AttentionBlock b;
    b.ln_q = make_layernorm(ps, name + ".ln_q", width);
    b.ln_ctx = make_layernorm(ps, name + ".ln_ctx", width);
    b.ln_ff = make_layernorm(ps, name + ".ln_ff", width);
    b.attn = make_attention(ps, name + ".attn", width, n_heads, rng);
    b.ff = make_feedforward(ps, name + ".ff", width, expansion, rng);
    return b;
}

void AdamW::step(ParamStore& ps) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
    for (auto& [name, t] : ps.all()) {
        if (ps.is_frozen(name)) {
            if (t.has_grad() && t.grad().cwiseAbs().maxCoeff() != 0.0)
                throw NumericError("gradient detected on frozen parameter: " + name);
            continue;
        }
        if (!t.has_grad()) continue;
        auto& [m, v] = moments_[name];
        if (m.size() == 0) {
            m = Mat::Zero(t.rows(), t.cols());
            v = Mat::Zero(t.rows(), t.cols());
        }
        const Mat& g = t.grad();
        if (!g.allFinite()) throw NumericError("non-finite gradient on parameter: " + name);
        m = beta1 * m + (1.0 - beta1) * g;
        v = beta2 * v + (1.0 - beta2) * g.cwiseProduct(g);
        Mat update = (m / bc1).array() / ((v / bc2).array().sqrt() + eps);
        Tensor p = t;  // shares the node
        Mat& val = p.value_mut();
        val -= lr * (update + weight_decay * val);
    }
}

}  // namespace shapecodec::nn
