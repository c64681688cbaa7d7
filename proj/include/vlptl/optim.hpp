#pragma once

#include "vlptl/nn.hpp"

#include <map>
#include <string>
#include <vector>

namespace vlptl::optim {

struct ParamGroup {
    nn::ParameterList params;
    double lr = 1e-3;
    double weight_decay = 0.0;  // decoupled (AdamW); 0 gives plain Adam
};

// Adam with optional decoupled weight decay per group.
class Adam {
public:
    explicit Adam(std::vector<ParamGroup> groups, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

    void step();
    void zero_grad();

    // Multiplies every group's learning rate; used by schedules.
    void set_lr_scale(double scale) { lr_scale_ = scale; }
    [[nodiscard]] double lr_scale() const { return lr_scale_; }

    [[nodiscard]] long long steps() const { return step_; }
    [[nodiscard]] const std::vector<ParamGroup>& groups() const { return groups_; }

    // State as named arrays ("adam.m.<param>", "adam.v.<param>") plus the step counter.
    void export_state(std::map<std::string, ad::Matrix>& arrays) const;
    void import_state(const std::map<std::string, ad::Matrix>& arrays, long long steps);

private:
    struct Moments {
        ad::Matrix m;
        ad::Matrix v;
    };
    std::vector<ParamGroup> groups_;
    std::map<std::string, Moments> state_;
    double beta1_;
    double beta2_;
    double eps_;
    double lr_scale_ = 1.0;
    long long step_ = 0;
};

// Linear warmup over the first `warmup` steps, then cosine decay to zero at `total`.
double warmup_cosine(long long step, long long total, long long warmup);

}  // namespace vlptl::optim
