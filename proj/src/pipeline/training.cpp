#include "metaprune/pipeline/training.hpp"

#include <fmt/format.h>
#include <json.hpp>

#include <cmath>
#include <numeric>

#include "metaprune/reward.hpp"

namespace metaprune::pipeline {

using nlohmann::json;
namespace tc = tensorcore;
namespace hn = hypernet;

TrainedModel retrain(const ArchTemplate& t, const Nev& nev, const Split& train, const RetrainOptions& options,
                     const TrainEpochCallback& on_epoch) {
    if (train.size() < 2) throw DataError("retraining needs at least two samples");
    if (options.batch_size == 0) throw std::invalid_argument("batch size must be >= 1");
    if (options.epochs < 0) throw std::invalid_argument("epochs must be >= 0");
    options.schedule.validate();
    t.check(nev);

    TrainedModel out;
    Rng init_rng(derive_seed(options.seed, "retrain-init"));
    out.model = hn::init_model(t, nev, init_rng);
    if (!options.checkpoint.empty() && std::filesystem::exists(options.checkpoint)) {
        const auto ck = tc::load_checkpoint(options.checkpoint);
        auto resumed = hn::model_from_checkpoint(t, ck);
        if (resumed.plan.nev != nev) {
            throw tc::CheckpointError(fmt::format("{} holds NEV {}, expected {}", options.checkpoint.string(),
                                                  arch::to_string(resumed.plan.nev), arch::to_string(nev)));
        }
        out.model = std::move(resumed);
        out.epochs_done = json::parse(ck.metadata).at("extra").value("epochs_done", 0);
    }

    tc::Sgd opt(out.model.parameters());
    std::vector<std::size_t> order(train.size());
    for (int epoch = out.epochs_done; epoch < options.epochs; ++epoch) {
        Rng rng(derive_seed(options.seed, "retrain", static_cast<std::uint64_t>(epoch)));
        std::iota(order.begin(), order.end(), std::size_t{0});
        rng.shuffle(order);
        const double lr = options.schedule.lr(epoch);
        double loss_sum = 0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += options.batch_size) {
            const std::size_t end = std::min(order.size(), start + options.batch_size);
            if (end - start < 2) continue;
            const std::span<const std::size_t> idx(order.data() + start, end - start);
            const tc::Var logits =
                hn::forward(t, out.model.plan, out.model.weights, tc::Var::constant(train.gather(idx)));
            const tc::Var loss = tc::softmax_cross_entropy(logits, train.gather_labels(idx));
            if (!std::isfinite(loss.value()[0])) {
                throw TrainingDiverged(fmt::format(
                    "loss became {} in epoch {} (batch {}); last good checkpoint: {}", loss.value()[0], epoch + 1,
                    batches + 1, options.checkpoint.empty() ? std::string("none") : options.checkpoint.string()));
            }
            opt.zero_grad();
            tc::backward(loss);
            try {
                opt.step(lr);
            } catch (const tc::OptimError& e) {
                throw TrainingDiverged(fmt::format("{} in epoch {}; last good checkpoint: {}", e.what(), epoch + 1,
                                                   options.checkpoint.empty() ? std::string("none")
                                                                              : options.checkpoint.string()));
            }
            loss_sum += loss.value()[0];
            ++batches;
        }
        out.epochs_done = epoch + 1;
        const TrainLog entry{epoch + 1, batches ? loss_sum / static_cast<double>(batches) : 0.0, lr};
        out.log.push_back(entry);
        if (!options.checkpoint.empty()) {
            tc::save_checkpoint(options.checkpoint,
                                hn::model_checkpoint(t, out.model, json{{"epochs_done", out.epochs_done}}.dump()));
        }
        if (on_epoch && !on_epoch(entry)) break;
    }
    out.stats = hn::calibrate(t, out.model.plan, out.model.weights, train.head(options.calibration_samples));
    return out;
}

Metrics metrics(const ArchTemplate& t, const TrainedModel& m, const Split& validation) {
    const auto r = hn::evaluate(t, m.model.plan, m.model.weights, m.stats, validation);
    Metrics out;
    out.top1_error = 1.0 - r.top1;
    out.top5_error = 1.0 - r.top5;
    out.top_k = std::min(5, validation.classes);
    out.flops = arch::flops_of(t, m.model.plan.nev);
    out.params = arch::params_of(t, m.model.plan.nev);
    out.param_ratio = reward::param_ratio(static_cast<double>(out.params),
                                          static_cast<double>(arch::params_of(t, t.full_width())));
    return out;
}

}  // namespace metaprune::pipeline
