#include "metaprune/reward.hpp"

#include <fmt/format.h>

#include <fstream>

namespace metaprune::reward {

void RewardParams::validate() const {
    if (!(baseline_accuracy > 0.0 && baseline_accuracy < 1.0)) {
        throw DomainError(fmt::format("baseline accuracy {} must lie in (0, 1)", baseline_accuracy));
    }
    if (!(baseline_flops > 0.0)) {
        throw DomainError(fmt::format("baseline FLOPs {} must be positive", baseline_flops));
    }
}

double alpha(double accuracy, const RewardParams& params) {
    params.validate();
    if (!(accuracy >= 0.0)) throw DomainError(fmt::format("accuracy {} must be >= 0", accuracy));
    if (accuracy >= params.baseline_accuracy) {
        throw DomainError(fmt::format("accuracy {} reaches the baseline accuracy {}; baseline is miscalibrated",
                                      accuracy, params.baseline_accuracy));
    }
    const double r = params.baseline_accuracy / (params.baseline_accuracy - accuracy);
    return r * r;
}

double psi(double flops, const RewardParams& params, double log_base) {
    params.validate();
    if (!(flops > 0.0)) throw DomainError(fmt::format("FLOPs {} must be positive", flops));
    if (flops >= params.baseline_flops) {
        throw DomainError(fmt::format("FLOPs {} not below the baseline FLOPs {}", flops, params.baseline_flops));
    }
    if (!(log_base > 0.0) || log_base == 1.0) throw DomainError("log base must be positive and != 1");
    return std::log(params.baseline_flops / flops) / std::log(log_base);
}

RewardValue reward(double accuracy, double flops, const RewardParams& params) {
    RewardValue v;
    v.alpha = alpha(accuracy, params);
    v.psi = psi(flops, params);
    v.reward = v.alpha * v.psi;
    return v;
}

double param_ratio(double pruned_params, double baseline_params) {
    if (!(baseline_params > 0.0)) throw DomainError("baseline parameter count must be positive");
    return pruned_params / baseline_params * 100.0;
}

double accuracy_from_percent(double percent) {
    return percent / 100.0;
}

AccuracyFlopsReward::AccuracyFlopsReward(RewardParams params, double log_base)
    : params_(params), log_base_(log_base) {
    params_.validate();
}

RewardValue AccuracyFlopsReward::evaluate(double accuracy, double flops) const {
    RewardValue v;
    v.alpha = alpha(accuracy, params_);
    v.psi = psi(flops, params_, log_base_);
    v.reward = v.alpha * v.psi;
    return v;
}

RewardSurface reward_surface(const RewardParams& params, const std::vector<double>& accuracy_grid,
                             const std::vector<double>& flops_grid) {
    params.validate();
    RewardSurface s;
    s.accuracy_grid = accuracy_grid;
    s.flops_grid = flops_grid;
    s.cells.resize(accuracy_grid.size(), std::vector<SurfaceCell>(flops_grid.size()));
    for (std::size_t i = 0; i < accuracy_grid.size(); ++i) {
        for (std::size_t j = 0; j < flops_grid.size(); ++j) {
            try {
                s.cells[i][j].value = reward(accuracy_grid[i], flops_grid[j], params);
            } catch (const DomainError&) {
                s.cells[i][j].value.reset();
            }
        }
    }
    return s;
}

std::string surface_csv(const RewardSurface& surface) {
    std::string out = "accuracy\\flops";
    for (double f : surface.flops_grid) out += fmt::format(",{:.17g}", f);
    out += '\n';
    for (std::size_t i = 0; i < surface.accuracy_grid.size(); ++i) {
        out += fmt::format("{:.17g}", surface.accuracy_grid[i]);
        for (const auto& cell : surface.cells[i]) {
            out += cell.value ? fmt::format(",{:.17g}", cell.value->reward) : std::string(",nan");
        }
        out += '\n';
    }
    return out;
}

void write_surface_csv(const RewardSurface& surface, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error(fmt::format("cannot write '{}'", path.string()));
    out << "# schema_version=1\n" << surface_csv(surface);
}

std::vector<double> linspace(double lo, double hi, int n) {
    if (n < 1) throw std::invalid_argument("linspace needs n >= 1");
    std::vector<double> v(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) v[static_cast<std::size_t>(i)] = n == 1 ? lo : lo + (hi - lo) * i / (n - 1);
    return v;
}

}  // namespace metaprune::reward
