#include "metaprune/tensorcore/optim.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <functional>

namespace metaprune::tensorcore {

double Schedule::lr(int epoch) const {
    if (kind == Kind::PerEpochDecay) return initial_lr * std::pow(gamma, std::max(epoch, 0));
    const auto passed = std::count_if(milestones.begin(), milestones.end(), [epoch](int m) { return epoch >= m; });
    return initial_lr * std::pow(gamma, static_cast<double>(passed));
}

void Schedule::validate() const {
    if (!(initial_lr > 0.0) || !std::isfinite(initial_lr)) {
        throw OptimError(fmt::format("learning rate must be positive, got {}", initial_lr));
    }
    if (!(gamma > 0.0 && gamma < 1.0)) throw OptimError(fmt::format("decay factor must be in (0, 1), got {}", gamma));
    if (std::adjacent_find(milestones.begin(), milestones.end(), std::greater_equal<>()) != milestones.end()) {
        throw OptimError("milestones must be strictly increasing");
    }
    if (!milestones.empty() && milestones.front() < 1) throw OptimError("milestones must be >= 1");
}

std::string to_string(Schedule::Kind kind) {
    return kind == Schedule::Kind::PerEpochDecay ? "per_epoch" : "milestone";
}

Schedule::Kind schedule_kind_from_string(const std::string& s) {
    if (s == "per_epoch") return Schedule::Kind::PerEpochDecay;
    if (s == "milestone") return Schedule::Kind::MilestoneDecay;
    throw OptimError(fmt::format("unknown schedule '{}' (expected per_epoch or milestone)", s));
}

Sgd::Sgd(std::vector<Var> params, SgdOptions options) : params_(std::move(params)), options_(options) {
    for (const auto& p : params_) {
        if (!p.requires_grad()) throw OptimError("optimizer given a value that does not require gradients");
    }
    if (options_.momentum > 0.0) {
        velocity_.reserve(params_.size());
        for (const auto& p : params_) velocity_.emplace_back(p.value().size(), real{0});
    }
}

void Sgd::step(double lr) {
    for (const auto& p : params_) {
        for (real g : p.grad()) {
            if (!std::isfinite(g)) throw OptimError("non-finite gradient");
        }
    }
    for (std::size_t k = 0; k < params_.size(); ++k) {
        auto& t = params_[k].node()->tensor;
        auto w = t.values();
        auto g = t.grad();
        if (g.empty()) continue;
        for (std::size_t i = 0; i < w.size(); ++i) {
            real d = g[i] + static_cast<real>(options_.weight_decay) * w[i];
            if (!velocity_.empty()) {
                auto& v = velocity_[k][i];
                v = static_cast<real>(options_.momentum) * v + d;
                d = v;
            }
            w[i] -= static_cast<real>(lr) * d;
        }
    }
}

void sgd_step(const std::vector<Var>& params, const Schedule& schedule, int epoch) {
    Sgd(params).step(schedule.lr(epoch));
}

void Sgd::zero_grad() {
    tensorcore::zero_grad(params_);
}

}  // namespace metaprune::tensorcore
