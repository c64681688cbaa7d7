#include "vlptl/nn.hpp"

#include <cmath>
#include <map>
#include <stdexcept>

namespace vlptl::nn {

ad::Var make_parameter(Eigen::Index rows, Eigen::Index cols, double stddev, Rng& rng) {
    std::normal_distribution<double> dist(0.0, stddev);
    ad::Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) {
        m.data()[i] = dist(rng);
    }
    return ad::Var(std::move(m), true);
}

ad::Var make_constant_parameter(Eigen::Index rows, Eigen::Index cols, double value) {
    return ad::Var(ad::Matrix::Constant(rows, cols, value), true);
}

Linear::Linear(int in, int out, Rng& rng)
    : weight(make_parameter(in, out, std::sqrt(2.0 / (in + out)), rng)), bias(make_constant_parameter(1, out, 0.0)) {}

ad::Var Linear::operator()(const ad::Var& x) const { return ad::add_row(ad::matmul(x, weight), bias); }

void Linear::collect(const std::string& prefix, ParameterList& out) const {
    out.push_back({prefix + ".weight", weight});
    out.push_back({prefix + ".bias", bias});
}

LayerNorm::LayerNorm(int dim) : gamma(make_constant_parameter(1, dim, 1.0)), beta(make_constant_parameter(1, dim, 0.0)) {}

ad::Var LayerNorm::operator()(const ad::Var& x) const { return ad::layer_norm(x, gamma, beta); }

void LayerNorm::collect(const std::string& prefix, ParameterList& out) const {
    out.push_back({prefix + ".gamma", gamma});
    out.push_back({prefix + ".beta", beta});
}

TransformerBlock::TransformerBlock(int dim, int heads_, int mlp_ratio, Rng& rng)
    : norm1(dim),
      qkv(dim, 3 * dim, rng),
      proj(dim, dim, rng),
      norm2(dim),
      fc1(dim, mlp_ratio * dim, rng),
      fc2(mlp_ratio * dim, dim, rng),
      heads(heads_) {}

ad::Var TransformerBlock::operator()(const ad::Var& x, std::span<const int> offsets) const {
    ad::Var h = ad::add(x, proj(ad::multi_head_attention(qkv(norm1(x)), heads, offsets)));
    return ad::add(h, fc2(ad::gelu(fc1(norm2(h)))));
}

void TransformerBlock::collect(const std::string& prefix, ParameterList& out) const {
    norm1.collect(prefix + ".norm1", out);
    qkv.collect(prefix + ".qkv", out);
    proj.collect(prefix + ".proj", out);
    norm2.collect(prefix + ".norm2", out);
    fc1.collect(prefix + ".fc1", out);
    fc2.collect(prefix + ".fc2", out);
}

void zero_grad(const ParameterList& params) {
    for (const auto& p : params) {
        ad::Var v = p.var;
        v.zero_grad();
    }
}

std::size_t parameter_count(const ParameterList& params) {
    std::size_t n = 0;
    for (const auto& p : params) {
        n += static_cast<std::size_t>(p.var.value().size());
    }
    return n;
}

void copy_values(const ParameterList& src, const ParameterList& dst) {
    std::map<std::string, const ad::Var*> by_name;
    for (const auto& p : src) {
        by_name[p.name] = &p.var;
    }
    for (const auto& p : dst) {
        const auto it = by_name.find(p.name);
        if (it == by_name.end()) {
            throw std::invalid_argument("copy_values: missing parameter " + p.name);
        }
        const ad::Matrix& value = it->second->value();
        if (value.rows() != p.var.rows() || value.cols() != p.var.cols()) {
            throw std::invalid_argument("copy_values: shape mismatch for " + p.name);
        }
        ad::Var target = p.var;
        target.mutable_value() = value;
    }
}

}  // namespace vlptl::nn
