#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major
// double matrices. Every value in a graph is a 2-D matrix; scalars are 1x1.

#include <Eigen/Dense>

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace vlptl::ad {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;

struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    void accumulate(const Matrix& g);
};

class Var {
public:
    Var() = default;
    explicit Var(Matrix value, bool requires_grad = false);

    static Var scalar(double v, bool requires_grad = false);

    [[nodiscard]] const Matrix& value() const { return node_->value; }
    [[nodiscard]] Matrix& mutable_value() { return node_->value; }
    [[nodiscard]] const Matrix& grad() const { return node_->grad; }
    [[nodiscard]] Matrix& mutable_grad() { return node_->grad; }
    [[nodiscard]] bool requires_grad() const { return node_ && node_->requires_grad; }
    [[nodiscard]] Eigen::Index rows() const { return node_->value.rows(); }
    [[nodiscard]] Eigen::Index cols() const { return node_->value.cols(); }
    [[nodiscard]] double item() const;
    [[nodiscard]] bool defined() const { return static_cast<bool>(node_); }

    void zero_grad();

    [[nodiscard]] const std::shared_ptr<Node>& node() const { return node_; }

private:
    std::shared_ptr<Node> node_;

    friend Var make_result(Matrix value, std::vector<Var> parents,
                           std::function<void(Node&)> backward_fn);
};

// Builds a graph node. The backward closure receives the result node, whose
// grad is populated, and must accumulate into result.parents[i].
Var make_result(Matrix value, std::vector<Var> parents, std::function<void(Node&)> backward_fn);

// Runs backpropagation from a 1x1 root.
void backward(const Var& root);

// Disables graph recording for the lifetime of the guard (thread-local).
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

bool grad_enabled();

// ---- elementwise and linear algebra -------------------------------------

Var matmul(const Var& a, const Var& b);
// a * b^T
Var matmul_bt(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
// a * s where s is a 1x1 variable
Var scale_by(const Var& a, const Var& s);
Var add_row(const Var& a, const Var& row);
Var exp(const Var& a);
Var gelu(const Var& a);
Var sigmoid(const Var& a);

// ---- normalisation -------------------------------------------------------

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);
Var l2_normalize_rows(const Var& x, double eps = 1e-12);

// ---- shape -------------------------------------------------------------

Var gather_rows(const Var& x, std::span<const int> index);
Var reshape(const Var& x, Eigen::Index rows, Eigen::Index cols);
Var hconcat(const Var& a, const Var& b);
Var vconcat(std::span<const Var> parts);
Var col_slice(const Var& x, Eigen::Index start, Eigen::Index count);
// offsets has size segments+1; result row s is the mean of rows [offsets[s], offsets[s+1]).
Var segment_mean(const Var& x, std::span<const int> offsets);
Var sum(const Var& a);
Var mean(const Var& a);
Var weighted_sum(std::span<const Var> terms, std::span<const double> weights);

// ---- fused blocks --------------------------------------------------------

// qkv holds [Q | K | V] column blocks of width d each; attention is applied
// independently per segment (sequence) and per head.
Var multi_head_attention(const Var& qkv, int heads, std::span<const int> offsets);

// ---- losses --------------------------------------------------------------

// Mean softmax cross-entropy of each logits row against an integer class.
Var cross_entropy(const Var& logits, std::span<const int> targets);
// Mean binary cross-entropy of sigmoid(logits) against {0,1} targets.
Var bce_with_logits(const Var& logits, const Matrix& targets);
// Summed sigmoid focal loss.
Var sigmoid_focal_loss(const Var& logits, const Matrix& targets, double alpha, double gamma);
// Summed (1 - IoU) of left/top/right/bottom distance boxes sharing an anchor point.
Var ltrb_iou_loss(const Var& pred, const Matrix& target);

}  // namespace vlptl::ad
