#pragma once

#include "vlptl/autodiff.hpp"

#include <random>
#include <string>
#include <vector>

namespace vlptl::nn {

struct NamedParameter {
    std::string name;
    ad::Var var;
};

using ParameterList = std::vector<NamedParameter>;

using Rng = std::mt19937_64;

ad::Var make_parameter(Eigen::Index rows, Eigen::Index cols, double stddev, Rng& rng);
ad::Var make_constant_parameter(Eigen::Index rows, Eigen::Index cols, double value);

struct Linear {
    ad::Var weight;  // in x out
    ad::Var bias;    // 1 x out

    Linear() = default;
    Linear(int in, int out, Rng& rng);

    [[nodiscard]] ad::Var operator()(const ad::Var& x) const;
    void collect(const std::string& prefix, ParameterList& out) const;
    [[nodiscard]] Eigen::Index in_features() const { return weight.rows(); }
    [[nodiscard]] Eigen::Index out_features() const { return weight.cols(); }
};

struct LayerNorm {
    ad::Var gamma;
    ad::Var beta;

    LayerNorm() = default;
    explicit LayerNorm(int dim);

    [[nodiscard]] ad::Var operator()(const ad::Var& x) const;
    void collect(const std::string& prefix, ParameterList& out) const;
};

// Pre-norm transformer block: x + attn(ln(x)), then x + mlp(ln(x)).
struct TransformerBlock {
    LayerNorm norm1;
    Linear qkv;
    Linear proj;
    LayerNorm norm2;
    Linear fc1;
    Linear fc2;
    int heads = 1;

    TransformerBlock() = default;
    TransformerBlock(int dim, int heads, int mlp_ratio, Rng& rng);

    [[nodiscard]] ad::Var operator()(const ad::Var& x, std::span<const int> offsets) const;
    void collect(const std::string& prefix, ParameterList& out) const;
};

void zero_grad(const ParameterList& params);
std::size_t parameter_count(const ParameterList& params);
// Copies values by name; every name in dst must exist in src with equal shape.
void copy_values(const ParameterList& src, const ParameterList& dst);

}  // namespace vlptl::nn
