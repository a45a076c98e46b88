#include "shapecodec/ad.hpp"

#include <cassert>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace shapecodec::ad {

namespace {

std::shared_ptr<Node> make_node(Mat value, std::vector<std::shared_ptr<Node>> parents,
                                std::function<void(Node&)> backward) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    bool needs = false;
    for (const auto& p : parents) needs = needs || p->needs_grad;
    n->needs_grad = needs;
    if (needs) {
        n->parents = std::move(parents);
        n->backward = std::move(backward);
    }
    return n;
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                    std::to_string(a.rows()) + "x" + std::to_string(a.cols()) + " vs " +
                                    std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
}

}  // namespace

Tensor Tensor::constant(Mat v) {
    auto n = std::make_shared<Node>();
    n->value = std::move(v);
    return Tensor(n);
}

Tensor Tensor::param(Mat v) {
    auto n = std::make_shared<Node>();
    n->value = std::move(v);
    n->is_param = true;
    n->needs_grad = true;
    return Tensor(n);
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.rows())
        throw std::invalid_argument("matmul: inner dimensions differ: " + std::to_string(a.cols()) +
                                    " vs " + std::to_string(b.rows()));
    auto pa = a.node(), pb = b.node();
    return Tensor(make_node(pa->value * pb->value, {pa, pb}, [pa, pb](Node& n) {
        if (pa->needs_grad) {
            pa->ensure_grad();
            pa->grad.noalias() += n.grad * pb->value.transpose();
        }
        if (pb->needs_grad) {
            pb->ensure_grad();
            pb->grad.noalias() += pa->value.transpose() * n.grad;
        }
    }));
}

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    auto pa = a.node(), pb = b.node();
    return Tensor(make_node(pa->value + pb->value, {pa, pb}, [pa, pb](Node& n) {
        if (pa->needs_grad) { pa->ensure_grad(); pa->grad += n.grad; }
        if (pb->needs_grad) { pb->ensure_grad(); pb->grad += n.grad; }
    }));
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "sub");
    auto pa = a.node(), pb = b.node();
    return Tensor(make_node(pa->value - pb->value, {pa, pb}, [pa, pb](Node& n) {
        if (pa->needs_grad) { pa->ensure_grad(); pa->grad += n.grad; }
        if (pb->needs_grad) { pb->ensure_grad(); pb->grad -= n.grad; }
    }));
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mul");
    auto pa = a.node(), pb = b.node();
    return Tensor(make_node(pa->value.cwiseProduct(pb->value), {pa, pb}, [pa, pb](Node& n) {
        if (pa->needs_grad) { pa->ensure_grad(); pa->grad += n.grad.cwiseProduct(pb->value); }
        if (pb->needs_grad) { pb->ensure_grad(); pb->grad += n.grad.cwiseProduct(pa->value); }
    }));
}

Tensor scale(const Tensor& a, double s) {
    auto pa = a.node();
    return Tensor(make_node(pa->value * s, {pa}, [pa, s](Node& n) {
        pa->ensure_grad();
        pa->grad += n.grad * s;
    }));
}

Tensor add_scalar(const Tensor& a, double s) {
    auto pa = a.node();
    return Tensor(make_node(pa->value.array() + s, {pa}, [pa](Node& n) {
        pa->ensure_grad();
        pa->grad += n.grad;
    }));
}

Tensor add_rowvec(const Tensor& a, const Tensor& row) {
    if (row.rows() != 1 || row.cols() != a.cols())
        throw std::invalid_argument("add_rowvec: expected 1x" + std::to_string(a.cols()));
    auto pa = a.node(), pr = row.node();
    Mat out = pa->value;
    out.rowwise() += pr->value.row(0);
    return Tensor(make_node(std::move(out), {pa, pr}, [pa, pr](Node& n) {
        if (pa->needs_grad) { pa->ensure_grad(); pa->grad += n.grad; }
        if (pr->needs_grad) { pr->ensure_grad(); pr->grad.row(0) += n.grad.colwise().sum(); }
    }));
}

Tensor mul_rowvec(const Tensor& a, const Tensor& row) {
    if (row.rows() != 1 || row.cols() != a.cols())
        throw std::invalid_argument("mul_rowvec: expected 1x" + std::to_string(a.cols()));
    auto pa = a.node(), pr = row.node();
    Mat out = pa->value.array().rowwise() * pr->value.row(0).array();
    return Tensor(make_node(std::move(out), {pa, pr}, [pa, pr](Node& n) {
        if (pa->needs_grad) {
            pa->ensure_grad();
            pa->grad.array() += n.grad.array().rowwise() * pr->value.row(0).array();
        }
        if (pr->needs_grad) {
            pr->ensure_grad();
            pr->grad.row(0) += n.grad.cwiseProduct(pa->value).colwise().sum();
        }
    }));
}

Tensor scale_rows(const Tensor& a, const Tensor& col) {
    if (col.cols() != 1 || col.rows() != a.rows())
        throw std::invalid_argument("scale_rows: expected " + std::to_string(a.rows()) + "x1");
    auto pa = a.node(), pc = col.node();
    Mat out = pa->value.array().colwise() * pc->value.col(0).array();
    return Tensor(make_node(std::move(out), {pa, pc}, [pa, pc](Node& n) {
        if (pa->needs_grad) {
            pa->ensure_grad();
            pa->grad.array() += n.grad.array().colwise() * pc->value.col(0).array();
        }
        if (pc->needs_grad) {
            pc->ensure_grad();
            pc->grad.col(0) += n.grad.cwiseProduct(pa->value).rowwise().sum();
        }
    }));
}

Tensor transpose(const Tensor& a) {
    auto pa = a.node();
    return Tensor(make_node(pa->value.transpose(), {pa}, [pa](Node& n) {
        pa->ensure_grad();
        pa->grad += n.grad.transpose();
    }));
}

Tensor softmax_rows(const Tensor& a) {
    auto pa = a.node();
    Mat out(pa->value.rows(), pa->value.cols());
    for (Eigen::Index i = 0; i < out.rows(); ++i) {
        double m = pa->value.row(i).maxCoeff();
        Eigen::ArrayXd e = (pa->value.row(i).array() - m).exp();
        out.row(i) = (e / e.sum()).matrix();
    }
    auto pout = make_node(std::move(out), {pa}, nullptr);
    if (pout->needs_grad) {
        auto raw = pout.get();
        pout->backward = [pa, raw](Node& n) {
            pa->ensure_grad();
            const Mat& y = raw->value;
            for (Eigen::Index i = 0; i < y.rows(); ++i) {
                double dot = n.grad.row(i).dot(y.row(i));
                pa->grad.row(i).array() +=
                    (n.grad.row(i).array() - dot) * y.row(i).array();
            }
        };
    }
    return Tensor(pout);
}

Tensor layernorm_rows(const Tensor& a, double eps) {
    auto pa = a.node();
    Eigen::Index cols = pa->value.cols();
    Mat out(pa->value.rows(), cols);
    Eigen::VectorXd inv_std(pa->value.rows());
    for (Eigen::Index i = 0; i < out.rows(); ++i) {
        double mu = pa->value.row(i).mean();
        Eigen::ArrayXd c = pa->value.row(i).array() - mu;
        double var = c.square().mean();
        double is = 1.0 / std::sqrt(var + eps);
        inv_std(i) = is;
        out.row(i) = (c * is).matrix();
    }
    auto pout = make_node(std::move(out), {pa}, nullptr);
    if (pout->needs_grad) {
        auto raw = pout.get();
        pout->backward = [pa, raw, inv_std, cols](Node& n) {
            pa->ensure_grad();
            const Mat& y = raw->value;
            double inv_c = 1.0 / static_cast<double>(cols);
            for (Eigen::Index i = 0; i < y.rows(); ++i) {
                double g_mean = n.grad.row(i).mean();
                double gy_mean = n.grad.row(i).cwiseProduct(y.row(i)).mean() /* == dot * inv_c */;
                (void)inv_c;
                pa->grad.row(i).array() +=
                    inv_std(i) * (n.grad.row(i).array() - g_mean - y.row(i).array() * gy_mean);
            }
        };
    }
    return Tensor(pout);
}

Tensor gelu(const Tensor& a) {
    // tanh approximation; smooth and cheap to differentiate.
    constexpr double k = 0.7978845608028654;  // sqrt(2/pi)
    constexpr double c = 0.044715;
    auto pa = a.node();
    const Mat& x = pa->value;
    Mat t = (k * (x.array() + c * x.array().cube())).tanh();
    Mat out = 0.5 * x.array() * (1.0 + t.array());
    return Tensor(make_node(std::move(out), {pa}, [pa, t = std::move(t), k, c](Node& n) {
        pa->ensure_grad();
        const auto& x = pa->value.array();
        auto th = t.array();
        auto dt = (1.0 - th.square()) * k * (1.0 + 3.0 * c * x.square());
        pa->grad.array() += n.grad.array() * (0.5 * (1.0 + th) + 0.5 * x * dt);
    }));
}

Tensor sigmoid(const Tensor& a) {
    auto pa = a.node();
    Mat out = (1.0 / (1.0 + (-pa->value.array()).exp()));
    auto pout = make_node(std::move(out), {pa}, nullptr);
    if (pout->needs_grad) {
        auto raw = pout.get();
        pout->backward = [pa, raw](Node& n) {
            pa->ensure_grad();
            auto y = raw->value.array();
            pa->grad.array() += n.grad.array() * y * (1.0 - y);
        };
    }
    return Tensor(pout);
}

Tensor expm(const Tensor& a) {
    auto pa = a.node();
    Mat out = pa->value.array().exp();
    auto pout = make_node(std::move(out), {pa}, nullptr);
    if (pout->needs_grad) {
        auto raw = pout.get();
        pout->backward = [pa, raw](Node& n) {
            pa->ensure_grad();
            pa->grad.array() += n.grad.array() * raw->value.array();
        };
    }
    return Tensor(pout);
}

Tensor sinm(const Tensor& a) {
    auto pa = a.node();
    return Tensor(make_node(pa->value.array().sin(), {pa}, [pa](Node& n) {
        pa->ensure_grad();
        pa->grad.array() += n.grad.array() * pa->value.array().cos();
    }));
}

Tensor cosm(const Tensor& a) {
    auto pa = a.node();
    return Tensor(make_node(pa->value.array().cos(), {pa}, [pa](Node& n) {
        pa->ensure_grad();
        pa->grad.array() -= n.grad.array() * pa->value.array().sin();
    }));
}

Tensor square(const Tensor& a) {
    auto pa = a.node();
    return Tensor(make_node(pa->value.array().square(), {pa}, [pa](Node& n) {
        pa->ensure_grad();
        pa->grad.array() += 2.0 * n.grad.array() * pa->value.array();
    }));
}

Tensor sum(const Tensor& a) {
    auto pa = a.node();
    Mat out(1, 1);
    out(0, 0) = pa->value.sum();
    return Tensor(make_node(std::move(out), {pa}, [pa](Node& n) {
        pa->ensure_grad();
        pa->grad.array() += n.grad(0, 0);
    }));
}

Tensor mean(const Tensor& a) {
    auto pa = a.node();
    double inv = 1.0 / static_cast<double>(pa->value.size());
    Mat out(1, 1);
    out(0, 0) = pa->value.sum() * inv;
    return Tensor(make_node(std::move(out), {pa}, [pa, inv](Node& n) {
        pa->ensure_grad();
        pa->grad.array() += n.grad(0, 0) * inv;
    }));
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows: empty");
    Eigen::Index cols = parts[0].cols(), rows = 0;
    std::vector<std::shared_ptr<Node>> ps;
    for (const auto& p : parts) {
        if (p.cols() != cols) throw std::invalid_argument("concat_rows: column mismatch");
        rows += p.rows();
        ps.push_back(p.node());
    }
    Mat out(rows, cols);
    Eigen::Index r = 0;
    for (const auto& p : ps) {
        out.middleRows(r, p->value.rows()) = p->value;
        r += p->value.rows();
    }
    return Tensor(make_node(std::move(out), ps, [ps](Node& n) {
        Eigen::Index r = 0;
        for (const auto& p : ps) {
            if (p->needs_grad) {
                p->ensure_grad();
                p->grad += n.grad.middleRows(r, p->value.rows());
            }
            r += p->value.rows();
        }
    }));
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: empty");
    Eigen::Index rows = parts[0].rows(), cols = 0;
    std::vector<std::shared_ptr<Node>> ps;
    for (const auto& p : parts) {
        if (p.rows() != rows) throw std::invalid_argument("concat_cols: row mismatch");
        cols += p.cols();
        ps.push_back(p.node());
    }
    Mat out(rows, cols);
    Eigen::Index c = 0;
    for (const auto& p : ps) {
        out.middleCols(c, p->value.cols()) = p->value;
        c += p->value.cols();
    }
    return Tensor(make_node(std::move(out), ps, [ps](Node& n) {
        Eigen::Index c = 0;
        for (const auto& p : ps) {
            if (p->needs_grad) {
                p->ensure_grad();
                p->grad += n.grad.middleCols(c, p->value.cols());
            }
            c += p->value.cols();
        }
    }));
}

Tensor slice_rows(const Tensor& a, Eigen::Index r0, Eigen::Index n) {
    if (r0 < 0 || r0 + n > a.rows()) throw std::invalid_argument("slice_rows: out of range");
    auto pa = a.node();
    return Tensor(make_node(pa->value.middleRows(r0, n), {pa}, [pa, r0, n](Node& nd) {
        pa->ensure_grad();
        pa->grad.middleRows(r0, n) += nd.grad;
    }));
}

Tensor slice_cols(const Tensor& a, Eigen::Index c0, Eigen::Index n) {
    if (c0 < 0 || c0 + n > a.cols()) throw std::invalid_argument("slice_cols: out of range");
    auto pa = a.node();
    return Tensor(make_node(pa->value.middleCols(c0, n), {pa}, [pa, c0, n](Node& nd) {
        pa->ensure_grad();
        pa->grad.middleCols(c0, n) += nd.grad;
    }));
}

Tensor gather_rows(const Tensor& a, std::vector<int> idx) {
    auto pa = a.node();
    Mat out(static_cast<Eigen::Index>(idx.size()), pa->value.cols());
    for (size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] < 0 || idx[i] >= pa->value.rows())
            throw std::invalid_argument("gather_rows: index out of range");
        out.row(static_cast<Eigen::Index>(i)) = pa->value.row(idx[i]);
    }
    return Tensor(make_node(std::move(out), {pa}, [pa, idx = std::move(idx)](Node& n) {
        pa->ensure_grad();
        for (size_t i = 0; i < idx.size(); ++i)
            pa->grad.row(idx[i]) += n.grad.row(static_cast<Eigen::Index>(i));
    }));
}

Tensor scatter_rows(const Tensor& a, std::vector<int> idx, Eigen::Index total_rows) {
    if (static_cast<Eigen::Index>(idx.size()) != a.rows())
        throw std::invalid_argument("scatter_rows: index count != row count");
    auto pa = a.node();
    Mat out = Mat::Zero(total_rows, pa->value.cols());
    for (size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] < 0 || idx[i] >= total_rows)
            throw std::invalid_argument("scatter_rows: index out of range");
        out.row(idx[i]) = pa->value.row(static_cast<Eigen::Index>(i));
    }
    return Tensor(make_node(std::move(out), {pa}, [pa, idx = std::move(idx)](Node& n) {
        pa->ensure_grad();
        for (size_t i = 0; i < idx.size(); ++i)
            pa->grad.row(static_cast<Eigen::Index>(i)) += n.grad.row(idx[i]);
    }));
}

Tensor bce_with_logits(const Tensor& logits, const Mat& labels) {
    if (logits.rows() != labels.rows() || logits.cols() != labels.cols())
        throw std::invalid_argument("bce_with_logits: shape mismatch");
    auto pa = logits.node();
    const auto& x = pa->value.array();
    Mat out = x.max(0.0) - x * labels.array() + (1.0 + (-x.abs()).exp()).log();
    return Tensor(make_node(std::move(out), {pa}, [pa, labels](Node& n) {
        pa->ensure_grad();
        auto sig = 1.0 / (1.0 + (-pa->value.array()).exp());
        pa->grad.array() += n.grad.array() * (sig - labels.array());
    }));
}

Tensor bilerp_rows(const Tensor& a, const Eigen::Matrix<int, Eigen::Dynamic, 4>& idx,
                   const Eigen::Matrix<double, Eigen::Dynamic, 4>& w) {
    if (idx.rows() != w.rows()) throw std::invalid_argument("bilerp_rows: idx/w mismatch");
    auto pa = a.node();
    Mat out = Mat::Zero(idx.rows(), pa->value.cols());
    for (Eigen::Index q = 0; q < idx.rows(); ++q)
        for (int k = 0; k < 4; ++k)
            out.row(q) += w(q, k) * pa->value.row(idx(q, k));
    return Tensor(make_node(std::move(out), {pa}, [pa, idx, w](Node& n) {
        pa->ensure_grad();
        for (Eigen::Index q = 0; q < idx.rows(); ++q)
            for (int k = 0; k < 4; ++k)
                pa->grad.row(idx(q, k)) += w(q, k) * n.grad.row(q);
    }));
}

Tensor patch_to_pixels(const Tensor& tokens, int tokens_per_side, int patch, int channels) {
    const int g = tokens_per_side, f = patch, ch = channels;
    if (tokens.rows() != static_cast<Eigen::Index>(g) * g ||
        tokens.cols() != static_cast<Eigen::Index>(f) * f * ch)
        throw std::invalid_argument("patch_to_pixels: bad token matrix shape");
    auto pa = tokens.node();
    const int R = g * f;
    Mat out(static_cast<Eigen::Index>(R) * R, ch);
    for (int u = 0; u < R; ++u) {
        for (int v = 0; v < R; ++v) {
            int trow = (u / f) * g + (v / f);
            int cblock = ((u % f) * f + (v % f)) * ch;
            out.row(static_cast<Eigen::Index>(u) * R + v) = pa->value.row(trow).segment(cblock, ch);
        }
    }
    return Tensor(make_node(std::move(out), {pa}, [pa, g, f, ch, R](Node& n) {
        pa->ensure_grad();
        for (int u = 0; u < R; ++u) {
            for (int v = 0; v < R; ++v) {
                int trow = (u / f) * g + (v / f);
                int cblock = ((u % f) * f + (v % f)) * ch;
                pa->grad.row(trow).segment(cblock, ch) +=
                    n.grad.row(static_cast<Eigen::Index>(u) * R + v);
            }
        }
    }));
}

void backward(const Tensor& root) {
    if (root.rows() != 1 || root.cols() != 1)
        throw std::invalid_argument("backward: root must be a scalar");
    auto r = root.node();
    if (!r->needs_grad) return;

    // iterative post-order DFS for the topological order
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, size_t>> stack;
    stack.emplace_back(r.get(), 0);
    visited.insert(r.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* p = node->parents[next++].get();
            if (p->needs_grad && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    r->ensure_grad();
    r->grad(0, 0) = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward && n->grad.size() > 0) n->backward(*n);
    }
}

double central_difference(const std::function<double(double)>& f, double x0, double eps) {
    return (f(x0 + eps) - f(x0 - eps)) / (2.0 * eps);
}

}  // namespace shapecodec::ad
