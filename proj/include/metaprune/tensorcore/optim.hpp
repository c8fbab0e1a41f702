#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "metaprune/tensorcore/autograd.hpp"

namespace metaprune::tensorcore {

class OptimError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Learning-rate schedule. PerEpochDecay multiplies by `gamma` every epoch;
/// MilestoneDecay multiplies by `gamma` at each listed epoch.
struct Schedule {
    enum class Kind { PerEpochDecay, MilestoneDecay };

    Kind kind = Kind::PerEpochDecay;
    double initial_lr = 0.1;
    double gamma = 0.1;
    std::vector<int> milestones;

    double lr(int epoch) const;
    void validate() const;
};

std::string to_string(Schedule::Kind kind);
Schedule::Kind schedule_kind_from_string(const std::string& s);

struct SgdOptions {
    double momentum = 0.0;
    double weight_decay = 0.0;
};

/// Plain SGD with optional momentum. Throws OptimError when a gradient is not
/// finite, leaving the parameters untouched.
class Sgd {
public:
    Sgd(std::vector<Var> params, SgdOptions options = {});

    void step(double lr);
    void zero_grad();
    const std::vector<Var>& params() const { return params_; }

private:
    std::vector<Var> params_;
    SgdOptions options_;
    std::vector<std::vector<real>> velocity_;
};

/// p -= lr(epoch) * grad for every parameter.
void sgd_step(const std::vector<Var>& params, const Schedule& schedule, int epoch);

}  // namespace metaprune::tensorcore
