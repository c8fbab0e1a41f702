#pragma once

// Reward shaping: R = alpha(accuracy) * psi(flops).
//
//   alpha = (b_a / (b_a - A))^2     accuracy coefficient, >= 1 on [0, b_a)
//   psi   = ln(b_f / F)             efficiency coefficient, > 0 on (0, b_f)
//
// Accuracies are fractions in [0, 1). Points outside either coefficient's
// domain are rejected with DomainError rather than clamped.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace metaprune::reward {

class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

struct RewardParams {
    double baseline_accuracy = 0.0;  // b_a, fraction in (0, 1)
    double baseline_flops = 0.0;     // b_f, MACs

    void validate() const;
};

struct RewardValue {
    double alpha = 0.0;
    double psi = 0.0;
    double reward = 0.0;
};

double alpha(double accuracy, const RewardParams& params);

/// `log_base` defaults to e; any other base rescales every psi by one constant.
double psi(double flops, const RewardParams& params, double log_base = std::numbers::e);

RewardValue reward(double accuracy, double flops, const RewardParams& params);

/// P* = P_m / P_b * 100.
double param_ratio(double pruned_params, double baseline_params);

/// Percent accuracy to the fraction the coefficients work in.
double accuracy_from_percent(double percent);

/// Pluggable reward: the search only sees this interface, so new coefficients
/// (latency, energy, prune rate) slot in without touching it.
class RewardModel {
public:
    virtual ~RewardModel() = default;
    virtual RewardValue evaluate(double accuracy, double flops) const = 0;
};

class AccuracyFlopsReward final : public RewardModel {
public:
    explicit AccuracyFlopsReward(RewardParams params, double log_base = std::numbers::e);
    RewardValue evaluate(double accuracy, double flops) const override;
    const RewardParams& params() const { return params_; }

private:
    RewardParams params_;
    double log_base_;
};

struct SurfaceCell {
    std::optional<RewardValue> value;  // empty when the point is outside the domain
};

struct RewardSurface {
    std::vector<double> accuracy_grid;  // rows
    std::vector<double> flops_grid;     // columns
    std::vector<std::vector<SurfaceCell>> cells;
};

RewardSurface reward_surface(const RewardParams& params, const std::vector<double>& accuracy_grid,
                             const std::vector<double>& flops_grid);

/// CSV: header row "accuracy\flops,<f0>,<f1>,...", one row per accuracy,
/// cells hold the reward or "nan" when flagged out of domain.
void write_surface_csv(const RewardSurface& surface, const std::filesystem::path& path);
std::string surface_csv(const RewardSurface& surface);

std::vector<double> linspace(double lo, double hi, int n);

}  // namespace metaprune::reward
