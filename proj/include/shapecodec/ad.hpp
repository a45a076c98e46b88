#pragma once

#include <Eigen/Core>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace shapecodec::ad {

using Mat = Eigen::MatrixXd;

// One node of the dynamically built computation graph. Values are dense
// double matrices; every set-like quantity in the model is a matrix of row
// vectors, so 2D is all we need.
struct Node {
    Mat value;
    Mat grad;                  // lazily allocated, same shape as value
    bool is_param = false;     // leaf that accumulates gradient across backward()
    bool needs_grad = false;   // this node or an ancestor is a parameter
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;  // reads this->grad, accumulates into parents

    void ensure_grad() {
        if (grad.rows() != value.rows() || grad.cols() != value.cols())
            grad = Mat::Zero(value.rows(), value.cols());
    }
};

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}

    static Tensor constant(Mat v);
    static Tensor param(Mat v);

    bool defined() const { return node_ != nullptr; }
    const Mat& value() const { return node_->value; }
    Mat& value_mut() { return node_->value; }
    const Mat& grad() const { return node_->grad; }
    bool has_grad() const { return node_->grad.size() > 0; }
    void zero_grad() { node_->grad.resize(0, 0); }
    bool needs_grad() const { return node_->needs_grad; }

    Eigen::Index rows() const { return node_->value.rows(); }
    Eigen::Index cols() const { return node_->value.cols(); }
    double scalar() const { return node_->value(0, 0); }

    std::shared_ptr<Node> node() const { return node_; }

private:
    std::shared_ptr<Node> node_;
};

// --- graph construction ---------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);       // elementwise
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor add_rowvec(const Tensor& a, const Tensor& row);   // row: 1 x C, broadcast down
Tensor mul_rowvec(const Tensor& a, const Tensor& row);
Tensor scale_rows(const Tensor& a, const Tensor& col);   // col: N x 1, scales each row
Tensor transpose(const Tensor& a);
Tensor softmax_rows(const Tensor& a);
Tensor layernorm_rows(const Tensor& a, double eps = 1e-5);  // no affine
Tensor gelu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor expm(const Tensor& a);
Tensor sinm(const Tensor& a);
Tensor cosm(const Tensor& a);
Tensor square(const Tensor& a);
Tensor sum(const Tensor& a);    // 1x1
Tensor mean(const Tensor& a);   // 1x1
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor slice_rows(const Tensor& a, Eigen::Index r0, Eigen::Index n);
Tensor slice_cols(const Tensor& a, Eigen::Index c0, Eigen::Index n);
Tensor gather_rows(const Tensor& a, std::vector<int> idx);
// Rows of `a` placed at `idx` within a total_rows x C zero matrix.
Tensor scatter_rows(const Tensor& a, std::vector<int> idx, Eigen::Index total_rows);

// Elementwise binary cross entropy with logits against constant labels.
Tensor bce_with_logits(const Tensor& logits, const Mat& labels);

// Gathers 4 rows per query with fixed bilinear weights: out(q,:) =
// sum_k w(q,k) * a(idx(q,k),:). Weights/indices are constants of the graph.
Tensor bilerp_rows(const Tensor& a, const Eigen::Matrix<int, Eigen::Dynamic, 4>& idx,
                   const Eigen::Matrix<double, Eigen::Dynamic, 4>& w);

// Rearranges per-token patch features (g*g rows, f*f*ch cols) into a dense
// pixel-major plane ((g*f)^2 rows, ch cols). Pure permutation of entries.
Tensor patch_to_pixels(const Tensor& tokens, int tokens_per_side, int patch, int channels);

// Scalar backward pass. `root` must be 1x1.
void backward(const Tensor& root);

// Finite-difference utility used by the gradient-check tests.
double central_difference(const std::function<double(double)>& f, double x0, double eps);

}  // namespace shapecodec::ad
