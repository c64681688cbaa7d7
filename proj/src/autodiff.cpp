#include "vlptl/autodiff.hpp"

#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace vlptl::ad {

namespace {

thread_local bool g_grad_enabled = true;

void require_same_shape(const Var& a, const Var& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch (" + std::to_string(a.rows()) +
                                    "x" + std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) +
                                    "x" + std::to_string(b.cols()) + ")");
    }
}

double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double stable_sigmoid(double x) {
    if (x >= 0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

}  // namespace

void Node::accumulate(const Matrix& g) {
    if (grad.size() == 0) {
        grad = g;
    } else {
        grad += g;
    }
}

Var::Var(Matrix value, bool requires_grad) : node_(std::make_shared<Node>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
}

Var Var::scalar(double v, bool requires_grad) {
    Matrix m(1, 1);
    m(0, 0) = v;
    return Var(std::move(m), requires_grad);
}

double Var::item() const {
    if (rows() != 1 || cols() != 1) {
        throw std::logic_error("item() on non-scalar variable");
    }
    return node_->value(0, 0);
}

void Var::zero_grad() {
    if (node_) {
        node_->grad.resize(0, 0);
    }
}

Var make_result(Matrix value, std::vector<Var> parents, std::function<void(Node&)> backward_fn) {
    Var out;
    out.node_ = std::make_shared<Node>();
    out.node_->value = std::move(value);
    if (!g_grad_enabled) {
        return out;
    }
    bool any = false;
    for (const auto& p : parents) {
        any = any || p.requires_grad();
    }
    if (!any) {
        return out;
    }
    out.node_->requires_grad = true;
    out.node_->parents.reserve(parents.size());
    for (auto& p : parents) {
        out.node_->parents.push_back(p.node());
    }
    out.node_->backward_fn = std::move(backward_fn);
    return out;
}

void backward(const Var& root) {
    if (root.rows() != 1 || root.cols() != 1) {
        throw std::logic_error("backward() requires a scalar root");
    }
    if (!root.requires_grad()) {
        return;
    }
    // Iterative post-order DFS yields a topological order.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(root.node().get(), 0);
    visited.insert(root.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* parent = node->parents[next++].get();
            if (parent->requires_grad && !visited.contains(parent)) {
                visited.insert(parent);
                stack.emplace_back(parent, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    root.node()->accumulate(Matrix::Ones(1, 1));
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* node = *it;
        if (node->backward_fn && node->grad.size() != 0) {
            node->backward_fn(*node);
        }
    }
    // Interior grads are released; leaves keep theirs for the optimizer.
    for (Node* node : order) {
        if (!node->parents.empty()) {
            node->grad.resize(0, 0);
        }
    }
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

// Parents are addressed through the result node to avoid reference cycles.
#define PARENT(i) (*self.parents[i])

Var matmul(const Var& a, const Var& b) {
    if (a.cols() != b.rows()) {
        throw std::invalid_argument("matmul: inner dimension mismatch");
    }
    Matrix out = a.value() * b.value();
    return make_result(std::move(out), {a, b}, [](Node& self) {
        Node& pa = PARENT(0);
        Node& pb = PARENT(1);
        if (pa.requires_grad) {
            pa.accumulate(self.grad * pb.value.transpose());
        }
        if (pb.requires_grad) {
            pb.accumulate(pa.value.transpose() * self.grad);
        }
    });
}

Var matmul_bt(const Var& a, const Var& b) {
    if (a.cols() != b.cols()) {
        throw std::invalid_argument("matmul_bt: column mismatch");
    }
    Matrix out = a.value() * b.value().transpose();
    return make_result(std::move(out), {a, b}, [](Node& self) {
        Node& pa = PARENT(0);
        Node& pb = PARENT(1);
        if (pa.requires_grad) {
            pa.accumulate(self.grad * pb.value);
        }
        if (pb.requires_grad) {
            pb.accumulate(self.grad.transpose() * pa.value);
        }
    });
}

Var add(const Var& a, const Var& b) {
    require_same_shape(a, b, "add");
    return make_result(a.value() + b.value(), {a, b}, [](Node& self) {
        for (int i = 0; i < 2; ++i) {
            if (PARENT(i).requires_grad) {
                PARENT(i).accumulate(self.grad);
            }
        }
    });
}

Var sub(const Var& a, const Var& b) {
    require_same_shape(a, b, "sub");
    return make_result(a.value() - b.value(), {a, b}, [](Node& self) {
        if (PARENT(0).requires_grad) {
            PARENT(0).accumulate(self.grad);
        }
        if (PARENT(1).requires_grad) {
            PARENT(1).accumulate(-self.grad);
        }
    });
}

Var mul(const Var& a, const Var& b) {
    require_same_shape(a, b, "mul");
    return make_result(a.value().cwiseProduct(b.value()), {a, b}, [](Node& self) {
        Node& pa = PARENT(0);
        Node& pb = PARENT(1);
        if (pa.requires_grad) {
            pa.accumulate(self.grad.cwiseProduct(pb.value));
        }
        if (pb.requires_grad) {
            pb.accumulate(self.grad.cwiseProduct(pa.value));
        }
    });
}

Var scale(const Var& a, double s) {
    return make_result(a.value() * s, {a}, [s](Node& self) { PARENT(0).accumulate(self.grad * s); });
}

Var scale_by(const Var& a, const Var& s) {
    if (s.rows() != 1 || s.cols() != 1) {
        throw std::invalid_argument("scale_by: scale must be 1x1");
    }
    return make_result(a.value() * s.value()(0, 0), {a, s}, [](Node& self) {
        Node& pa = PARENT(0);
        Node& ps = PARENT(1);
        if (pa.requires_grad) {
            pa.accumulate(self.grad * ps.value(0, 0));
        }
        if (ps.requires_grad) {
            Matrix g(1, 1);
            g(0, 0) = self.grad.cwiseProduct(pa.value).sum();
            ps.accumulate(g);
        }
    });
}

Var add_row(const Var& a, const Var& row) {
    if (row.rows() != 1 || row.cols() != a.cols()) {
        throw std::invalid_argument("add_row: row shape mismatch");
    }
    Matrix out = a.value().rowwise() + row.value().row(0);
    return make_result(std::move(out), {a, row}, [](Node& self) {
        if (PARENT(0).requires_grad) {
            PARENT(0).accumulate(self.grad);
        }
        if (PARENT(1).requires_grad) {
            PARENT(1).accumulate(self.grad.colwise().sum());
        }
    });
}

Var exp(const Var& a) {
    Matrix out = a.value().array().exp().matrix();
    return make_result(out, {a}, [](Node& self) { PARENT(0).accumulate(self.grad.cwiseProduct(self.value)); });
}

Var gelu(const Var& a) {
    constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
    constexpr double k = 0.044715;
    const Matrix& x = a.value();
    Matrix out(x.rows(), x.cols());
    Matrix deriv(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double v = x.data()[i];
        const double th = std::tanh(c * (v + k * v * v * v));
        out.data()[i] = 0.5 * v * (1.0 + th);
        deriv.data()[i] = 0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * c * (1.0 + 3.0 * k * v * v);
    }
    return make_result(std::move(out), {a}, [deriv = std::move(deriv)](Node& self) {
        PARENT(0).accumulate(self.grad.cwiseProduct(deriv));
    });
}

Var sigmoid(const Var& a) {
    Matrix out = a.value().unaryExpr([](double v) { return stable_sigmoid(v); });
    return make_result(out, {a}, [](Node& self) {
        const Matrix& y = self.value;
        PARENT(0).accumulate(self.grad.cwiseProduct(y.cwiseProduct((1.0 - y.array()).matrix())));
    });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
    const Eigen::Index n = x.rows();
    const Eigen::Index d = x.cols();
    if (gamma.cols() != d || beta.cols() != d || gamma.rows() != 1 || beta.rows() != 1) {
        throw std::invalid_argument("layer_norm: affine shape mismatch");
    }
    Matrix xhat(n, d);
    Eigen::VectorXd inv_std(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto row = x.value().row(i);
        const double mu = row.mean();
        const double var = (row.array() - mu).square().mean();
        inv_std(i) = 1.0 / std::sqrt(var + eps);
        xhat.row(i) = (row.array() - mu) * inv_std(i);
    }
    Matrix out = (xhat.array().rowwise() * gamma.value().row(0).array()).matrix();
    out.rowwise() += beta.value().row(0);
    return make_result(std::move(out), {x, gamma, beta},
                       [xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
                           const Matrix& dy = self.grad;
                           Node& px = PARENT(0);
                           Node& pg = PARENT(1);
                           Node& pb = PARENT(2);
                           if (pg.requires_grad) {
                               pg.accumulate(dy.cwiseProduct(xhat).colwise().sum());
                           }
                           if (pb.requires_grad) {
                               pb.accumulate(dy.colwise().sum());
                           }
                           if (px.requires_grad) {
                               Matrix dxhat = (dy.array().rowwise() * pg.value.row(0).array()).matrix();
                               Matrix dx(dy.rows(), dy.cols());
                               for (Eigen::Index i = 0; i < dy.rows(); ++i) {
                                   const double m1 = dxhat.row(i).mean();
                                   const double m2 = dxhat.row(i).dot(xhat.row(i)) / static_cast<double>(dy.cols());
                                   dx.row(i) = (dxhat.row(i).array() - m1 - xhat.row(i).array() * m2) * inv_std(i);
                               }
                               px.accumulate(dx);
                           }
                       });
}

Var l2_normalize_rows(const Var& x, double eps) {
    Eigen::VectorXd norms = x.value().rowwise().norm();
    Matrix out = x.value();
    for (Eigen::Index i = 0; i < out.rows(); ++i) {
        norms(i) = std::max(norms(i), eps);
        out.row(i) /= norms(i);
    }
    return make_result(out, {x}, [norms = std::move(norms)](Node& self) {
        const Matrix& y = self.value;
        Matrix dx(y.rows(), y.cols());
        for (Eigen::Index i = 0; i < y.rows(); ++i) {
            const double proj = y.row(i).dot(self.grad.row(i));
            dx.row(i) = (self.grad.row(i) - y.row(i) * proj) / norms(i);
        }
        PARENT(0).accumulate(dx);
    });
}

Var gather_rows(const Var& x, std::span<const int> index) {
    std::vector<int> idx(index.begin(), index.end());
    Matrix out(static_cast<Eigen::Index>(idx.size()), x.cols());
    for (std::size_t r = 0; r < idx.size(); ++r) {
        if (idx[r] < 0 || idx[r] >= x.rows()) {
            throw std::out_of_range("gather_rows: index out of range");
        }
        out.row(static_cast<Eigen::Index>(r)) = x.value().row(idx[r]);
    }
    return make_result(std::move(out), {x}, [idx = std::move(idx)](Node& self) {
        Node& px = PARENT(0);
        Matrix g = Matrix::Zero(px.value.rows(), px.value.cols());
        for (std::size_t r = 0; r < idx.size(); ++r) {
            g.row(idx[r]) += self.grad.row(static_cast<Eigen::Index>(r));
        }
        px.accumulate(g);
    });
}

Var reshape(const Var& x, Eigen::Index rows, Eigen::Index cols) {
    if (rows * cols != x.value().size()) {
        throw std::invalid_argument("reshape: element count mismatch");
    }
    Matrix out = Eigen::Map<const Matrix>(x.value().data(), rows, cols);
    return make_result(std::move(out), {x}, [](Node& self) {
        Node& px = PARENT(0);
        px.accumulate(Eigen::Map<const Matrix>(self.grad.data(), px.value.rows(), px.value.cols()));
    });
}

Var hconcat(const Var& a, const Var& b) {
    if (a.rows() != b.rows()) {
        throw std::invalid_argument("hconcat: row mismatch");
    }
    Matrix out(a.rows(), a.cols() + b.cols());
    out << a.value(), b.value();
    const Eigen::Index ca = a.cols();
    return make_result(std::move(out), {a, b}, [ca](Node& self) {
        if (PARENT(0).requires_grad) {
            PARENT(0).accumulate(self.grad.leftCols(ca));
        }
        if (PARENT(1).requires_grad) {
            PARENT(1).accumulate(self.grad.rightCols(self.grad.cols() - ca));
        }
    });
}

Var vconcat(std::span<const Var> parts) {
    if (parts.empty()) {
        throw std::invalid_argument("vconcat: no inputs");
    }
    Eigen::Index rows = 0;
    const Eigen::Index cols = parts.front().cols();
    std::vector<Eigen::Index> starts;
    for (const auto& p : parts) {
        if (p.cols() != cols) {
            throw std::invalid_argument("vconcat: column mismatch");
        }
        starts.push_back(rows);
        rows += p.rows();
    }
    Matrix out(rows, cols);
    for (std::size_t i = 0; i < parts.size(); ++i) {
        out.middleRows(starts[i], parts[i].rows()) = parts[i].value();
    }
    std::vector<Var> parents(parts.begin(), parts.end());
    return make_result(std::move(out), std::move(parents), [starts = std::move(starts)](Node& self) {
        for (std::size_t i = 0; i < self.parents.size(); ++i) {
            Node& p = *self.parents[i];
            if (p.requires_grad) {
                p.accumulate(self.grad.middleRows(starts[i], p.value.rows()));
            }
        }
    });
}

Var col_slice(const Var& x, Eigen::Index start, Eigen::Index count) {
    if (start < 0 || start + count > x.cols()) {
        throw std::out_of_range("col_slice: range out of bounds");
    }
    Matrix out = x.value().middleCols(start, count);
    return make_result(std::move(out), {x}, [start, count](Node& self) {
        Node& px = PARENT(0);
        Matrix g = Matrix::Zero(px.value.rows(), px.value.cols());
        g.middleCols(start, count) = self.grad;
        px.accumulate(g);
    });
}

Var segment_mean(const Var& x, std::span<const int> offsets) {
    if (offsets.size() < 2 || offsets.back() != x.rows()) {
        throw std::invalid_argument("segment_mean: offsets do not cover input");
    }
    std::vector<int> off(offsets.begin(), offsets.end());
    const auto segments = static_cast<Eigen::Index>(off.size() - 1);
    Matrix out(segments, x.cols());
    for (Eigen::Index s = 0; s < segments; ++s) {
        const int len = off[s + 1] - off[s];
        if (len <= 0) {
            throw std::invalid_argument("segment_mean: empty segment");
        }
        out.row(s) = x.value().middleRows(off[s], len).colwise().mean();
    }
    return make_result(std::move(out), {x}, [off = std::move(off)](Node& self) {
        Node& px = PARENT(0);
        Matrix g(px.value.rows(), px.value.cols());
        for (std::size_t s = 0; s + 1 < off.size(); ++s) {
            const int len = off[s + 1] - off[s];
            const RowVector row = self.grad.row(static_cast<Eigen::Index>(s)) / static_cast<double>(len);
            for (int r = off[s]; r < off[s + 1]; ++r) {
                g.row(r) = row;
            }
        }
        px.accumulate(g);
    });
}

Var sum(const Var& a) {
    Matrix out(1, 1);
    out(0, 0) = a.value().sum();
    return make_result(std::move(out), {a}, [](Node& self) {
        Node& pa = PARENT(0);
        pa.accumulate(Matrix::Constant(pa.value.rows(), pa.value.cols(), self.grad(0, 0)));
    });
}

Var mean(const Var& a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

Var weighted_sum(std::span<const Var> terms, std::span<const double> weights) {
    if (terms.size() != weights.size() || terms.empty()) {
        throw std::invalid_argument("weighted_sum: size mismatch");
    }
    Matrix out = Matrix::Zero(1, 1);
    for (std::size_t i = 0; i < terms.size(); ++i) {
        if (terms[i].rows() != 1 || terms[i].cols() != 1) {
            throw std::invalid_argument("weighted_sum: terms must be scalars");
        }
        out(0, 0) += weights[i] * terms[i].item();
    }
    std::vector<double> w(weights.begin(), weights.end());
    std::vector<Var> parents(terms.begin(), terms.end());
    return make_result(std::move(out), std::move(parents), [w = std::move(w)](Node& self) {
        for (std::size_t i = 0; i < self.parents.size(); ++i) {
            if (self.parents[i]->requires_grad) {
                self.parents[i]->accumulate(self.grad * w[i]);
            }
        }
    });
}

Var multi_head_attention(const Var& qkv, int heads, std::span<const int> offsets) {
    const Eigen::Index width = qkv.cols();
    if (width % 3 != 0) {
        throw std::invalid_argument("multi_head_attention: qkv width not divisible by 3");
    }
    const Eigen::Index d = width / 3;
    if (heads <= 0 || d % heads != 0) {
        throw std::invalid_argument("multi_head_attention: width not divisible by heads");
    }
    if (offsets.size() < 2 || offsets.back() != qkv.rows()) {
        throw std::invalid_argument("multi_head_attention: offsets do not cover input");
    }
    const Eigen::Index dh = d / heads;
    const double scale_factor = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<int> off(offsets.begin(), offsets.end());
    const Matrix& x = qkv.value();
    Matrix out(x.rows(), d);
    std::vector<Matrix> probs;
    probs.reserve((off.size() - 1) * static_cast<std::size_t>(heads));
    for (std::size_t s = 0; s + 1 < off.size(); ++s) {
        const Eigen::Index start = off[s];
        const Eigen::Index len = off[s + 1] - off[s];
        for (int h = 0; h < heads; ++h) {
            const auto q = x.block(start, h * dh, len, dh);
            const auto k = x.block(start, d + h * dh, len, dh);
            const auto v = x.block(start, 2 * d + h * dh, len, dh);
            Matrix a = (q * k.transpose()) * scale_factor;
            for (Eigen::Index i = 0; i < len; ++i) {
                const double mx = a.row(i).maxCoeff();
                a.row(i) = (a.row(i).array() - mx).exp();
                a.row(i) /= a.row(i).sum();
            }
            out.block(start, h * dh, len, dh).noalias() = a * v;
            probs.push_back(std::move(a));
        }
    }
    return make_result(std::move(out), {qkv},
                       [off = std::move(off), probs = std::move(probs), heads, d, dh, scale_factor](Node& self) {
                           Node& px = PARENT(0);
                           const Matrix& x = px.value;
                           Matrix g = Matrix::Zero(x.rows(), x.cols());
                           std::size_t p = 0;
                           for (std::size_t s = 0; s + 1 < off.size(); ++s) {
                               const Eigen::Index start = off[s];
                               const Eigen::Index len = off[s + 1] - off[s];
                               for (int h = 0; h < heads; ++h, ++p) {
                                   const Matrix& a = probs[p];
                                   const auto q = x.block(start, h * dh, len, dh);
                                   const auto k = x.block(start, d + h * dh, len, dh);
                                   const auto v = x.block(start, 2 * d + h * dh, len, dh);
                                   const auto dout = self.grad.block(start, h * dh, len, dh);
                                   g.block(start, 2 * d + h * dh, len, dh).noalias() += a.transpose() * dout;
                                   Matrix da = dout * v.transpose();
                                   const Eigen::VectorXd inner = da.cwiseProduct(a).rowwise().sum();
                                   Matrix ds = (a.array() * (da.colwise() - inner).array()).matrix() * scale_factor;
                                   g.block(start, h * dh, len, dh).noalias() += ds * k;
                                   g.block(start, d + h * dh, len, dh).noalias() += ds.transpose() * q;
                               }
                           }
                           px.accumulate(g);
                       });
}

Var cross_entropy(const Var& logits, std::span<const int> targets) {
    const Eigen::Index n = logits.rows();
    const Eigen::Index c = logits.cols();
    if (static_cast<Eigen::Index>(targets.size()) != n || n == 0) {
        throw std::invalid_argument("cross_entropy: target count mismatch");
    }
    Matrix probs(n, c);
    double loss = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        const int t = targets[static_cast<std::size_t>(i)];
        if (t < 0 || t >= c) {
            throw std::out_of_range("cross_entropy: target out of range");
        }
        const double mx = logits.value().row(i).maxCoeff();
        probs.row(i) = (logits.value().row(i).array() - mx).exp();
        const double z = probs.row(i).sum();
        probs.row(i) /= z;
        loss += -(logits.value()(i, t) - mx - std::log(z));
    }
    std::vector<int> tgt(targets.begin(), targets.end());
    Matrix out(1, 1);
    out(0, 0) = loss / static_cast<double>(n);
    return make_result(std::move(out), {logits}, [probs = std::move(probs), tgt = std::move(tgt)](Node& self) {
        Matrix g = probs;
        for (std::size_t i = 0; i < tgt.size(); ++i) {
            g(static_cast<Eigen::Index>(i), tgt[i]) -= 1.0;
        }
        g *= self.grad(0, 0) / static_cast<double>(tgt.size());
        PARENT(0).accumulate(g);
    });
}

Var bce_with_logits(const Var& logits, const Matrix& targets) {
    if (targets.rows() != logits.rows() || targets.cols() != logits.cols()) {
        throw std::invalid_argument("bce_with_logits: shape mismatch");
    }
    const Matrix& z = logits.value();
    double loss = 0.0;
    for (Eigen::Index i = 0; i < z.size(); ++i) {
        loss += softplus(z.data()[i]) - targets.data()[i] * z.data()[i];
    }
    const auto count = static_cast<double>(z.size());
    Matrix out(1, 1);
    out(0, 0) = loss / count;
    return make_result(std::move(out), {logits}, [targets, count](Node& self) {
        Node& pz = PARENT(0);
        Matrix g = pz.value.unaryExpr([](double v) { return stable_sigmoid(v); }) - targets;
        pz.accumulate(g * (self.grad(0, 0) / count));
    });
}

Var sigmoid_focal_loss(const Var& logits, const Matrix& targets, double alpha, double gamma) {
    if (targets.rows() != logits.rows() || targets.cols() != logits.cols()) {
        throw std::invalid_argument("sigmoid_focal_loss: shape mismatch");
    }
    const Matrix& z = logits.value();
    Matrix g(z.rows(), z.cols());
    double loss = 0.0;
    for (Eigen::Index i = 0; i < z.size(); ++i) {
        const double x = z.data()[i];
        const double p = stable_sigmoid(x);
        const double log_p = -softplus(-x);
        const double log_q = -softplus(x);
        if (targets.data()[i] > 0.5) {
            const double w = std::pow(1.0 - p, gamma);
            loss += -alpha * w * log_p;
            g.data()[i] = alpha * w * (gamma * p * log_p - (1.0 - p));
        } else {
            const double w = std::pow(p, gamma);
            loss += -(1.0 - alpha) * w * log_q;
            g.data()[i] = -(1.0 - alpha) * w * (gamma * (1.0 - p) * log_q - p);
        }
    }
    Matrix out(1, 1);
    out(0, 0) = loss;
    return make_result(std::move(out), {logits},
                       [g = std::move(g)](Node& self) { PARENT(0).accumulate(g * self.grad(0, 0)); });
}

Var ltrb_iou_loss(const Var& pred, const Matrix& target) {
    if (pred.cols() != 4 || target.cols() != 4 || pred.rows() != target.rows()) {
        throw std::invalid_argument("ltrb_iou_loss: expected matching Nx4 inputs");
    }
    const Matrix& p = pred.value();
    const Eigen::Index n = p.rows();
    Matrix g(n, 4);
    double loss = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        const double l = p(i, 0), t = p(i, 1), r = p(i, 2), b = p(i, 3);
        const double lt = target(i, 0), tt = target(i, 1), rt = target(i, 2), bt = target(i, 3);
        const double area_p = (l + r) * (t + b);
        const double area_t = (lt + rt) * (tt + bt);
        const double iw = std::min(l, lt) + std::min(r, rt);
        const double ih = std::min(t, tt) + std::min(b, bt);
        const double inter = iw * ih;
        const double uni = area_p + area_t - inter;
        loss += 1.0 - inter / uni;
        // d(1 - I/U)/dx = -(dI (U + I) - I dAp) / U^2
        const double u2 = uni * uni;
        const auto grad_of = [&](double d_inter, double d_area) { return -(d_inter * (uni + inter) - inter * d_area) / u2; };
        g(i, 0) = grad_of(l < lt ? ih : 0.0, t + b);
        g(i, 2) = grad_of(r < rt ? ih : 0.0, t + b);
        g(i, 1) = grad_of(t < tt ? iw : 0.0, l + r);
        g(i, 3) = grad_of(b < bt ? iw : 0.0, l + r);
    }
    Matrix out(1, 1);
    out(0, 0) = loss;
    return make_result(std::move(out), {pred}, [g = std::move(g)](Node& self) { PARENT(0).accumulate(g * self.grad(0, 0)); });
}

#undef PARENT

}  // namespace vlptl::ad
