#include "vlptl/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace vlptl::optim {

Adam::Adam(std::vector<ParamGroup> groups, double beta1, double beta2, double eps)
    : groups_(std::move(groups)), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void Adam::step() {
    ++step_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_));
    for (auto& group : groups_) {
        for (auto& p : group.params) {
            ad::Var var = p.var;
            if (var.grad().size() == 0) {
                continue;
            }
            auto& st = state_[p.name];
            if (st.m.size() == 0) {
                st.m = ad::Matrix::Zero(var.rows(), var.cols());
                st.v = ad::Matrix::Zero(var.rows(), var.cols());
            }
            const ad::Matrix& g = var.grad();
            st.m = beta1_ * st.m + (1.0 - beta1_) * g;
            st.v = beta2_ * st.v + (1.0 - beta2_) * g.cwiseProduct(g);
            const double lr = group.lr * lr_scale_;
            if (lr == 0.0) {
                continue;
            }
            ad::Matrix& w = var.mutable_value();
            if (group.weight_decay > 0.0) {
                w *= (1.0 - lr * group.weight_decay);
            }
            w.array() -= lr * (st.m.array() / bc1) / ((st.v.array() / bc2).sqrt() + eps_);
        }
    }
}

void Adam::zero_grad() {
    for (auto& group : groups_) {
        nn::zero_grad(group.params);
    }
}

void Adam::export_state(std::map<std::string, ad::Matrix>& arrays) const {
    for (const auto& [name, st] : state_) {
        arrays["adam.m." + name] = st.m;
        arrays["adam.v." + name] = st.v;
    }
}

void Adam::import_state(const std::map<std::string, ad::Matrix>& arrays, long long steps) {
    state_.clear();
    for (const auto& group : groups_) {
        for (const auto& p : group.params) {
            const auto m = arrays.find("adam.m." + p.name);
            const auto v = arrays.find("adam.v." + p.name);
            if (m != arrays.end() && v != arrays.end() && m->second.rows() == p.var.rows() &&
                m->second.cols() == p.var.cols()) {
                state_[p.name] = Moments{m->second, v->second};
            }
        }
    }
    step_ = steps;
}

double warmup_cosine(long long step, long long total, long long warmup) {
    if (total <= 0) {
        return 1.0;
    }
    if (step < warmup) {
        return static_cast<double>(step + 1) / static_cast<double>(warmup);
    }
    const double span = static_cast<double>(std::max(1LL, total - warmup));
    const double t = std::min(1.0, static_cast<double>(step - warmup) / span);
    return 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

}  // namespace vlptl::optim
