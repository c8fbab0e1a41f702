#include "metaprune/hypernet/hypernet.hpp"

#include <fmt/format.h>
#include <json.hpp>

#include <bit>
#include <cmath>
#include <numeric>

namespace metaprune::hypernet {

using nlohmann::json;
namespace tc = tensorcore;

namespace {

Var uniform_param(const Shape& shape, double bound, Rng& rng) {
    Tensor t(shape);
    for (auto& v : t.values()) v = static_cast<real>(rng.uniform(-bound, bound));
    return Var::parameter(std::move(t));
}

}  // namespace

HyperNet::HyperNet(ArchTemplate t, std::uint64_t seed, int hidden) : arch_(std::move(t)), hidden_(hidden) {
    if (hidden_ < 1) throw std::invalid_argument("generator hidden width must be >= 1");
    const auto full = make_plan(arch_, arch_.full_width());
    const auto l = static_cast<std::int64_t>(arch_.nev_length());
    for (int i = 0; i < arch_.layer_count(); ++i) {
        const auto& spec = arch_.layer(i);
        if (!arch::has_weights(spec.kind)) continue;
        Generator g;
        g.layer = i;
        g.full_shape = weight_shape(arch_, full, i);
        g.weight_count = tc::numel(g.full_shape);
        g.affine = spec.norm;
        g.bias = spec.bias;
        const auto c = g.full_shape[0];
        g.outputs = g.weight_count + (g.affine ? 2 * c : 0) + (g.bias ? c : 0);
        Rng rng(derive_seed(seed, "hypernet-init", static_cast<std::uint64_t>(i)));
        const double b1 = 1.0 / std::sqrt(static_cast<double>(l));
        const double b2 = 1.0 / std::sqrt(static_cast<double>(hidden_));
        g.fc1_w = uniform_param({hidden_, l}, b1, rng);
        g.fc1_b = uniform_param({hidden_}, b1, rng);
        g.fc2_w = uniform_param({g.outputs, hidden_}, b2, rng);
        g.fc2_b = uniform_param({g.outputs}, b2, rng);
        generators_.push_back(std::move(g));
    }
}

std::vector<Var> HyperNet::parameters() const {
    std::vector<Var> out;
    for (const auto& g : generators_) {
        out.insert(out.end(), {g.fc1_w, g.fc1_b, g.fc2_w, g.fc2_b});
    }
    return out;
}

std::int64_t HyperNet::parameter_count() const {
    std::int64_t n = 0;
    for (const auto& p : parameters()) n += static_cast<std::int64_t>(p.value().size());
    return n;
}

std::uint64_t HyperNet::checksum() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& p : parameters()) {
        for (real v : p.value().values()) {
            h ^= std::bit_cast<std::uint64_t>(static_cast<double>(v));
            h *= 0x100000001b3ULL;
        }
    }
    return h;
}

tc::Checkpoint HyperNet::to_checkpoint() const {
    json manifest = {{"kind", "hypernet"},
                     {"template", arch_.name()},
                     {"grid_hash", arch::ScaleGrid::hash()},
                     {"hidden", hidden_},
                     {"epochs_trained", epochs_trained_}};
    tc::Checkpoint ck;
    ck.metadata = manifest.dump();
    for (const auto& g : generators_) {
        const auto& name = arch_.layer(g.layer).name;
        for (auto [suffix, v] : {std::pair{".fc1.weight", &g.fc1_w}, std::pair{".fc1.bias", &g.fc1_b},
                                 std::pair{".fc2.weight", &g.fc2_w}, std::pair{".fc2.bias", &g.fc2_b}}) {
            Tensor t = v->value();
            t.drop_grad();
            ck.tensors.emplace_back(name + suffix, std::move(t));
        }
    }
    return ck;
}

HyperNet HyperNet::from_checkpoint(ArchTemplate t, const tc::Checkpoint& ck) {
    json manifest;
    try {
        manifest = json::parse(ck.metadata);
    } catch (const json::exception& e) {
        throw tc::CheckpointError(fmt::format("hypernet manifest is not JSON: {}", e.what()));
    }
    if (manifest.value("kind", "") != "hypernet") throw tc::CheckpointError("not a hypernet checkpoint");
    const auto tname = manifest.value("template", "");
    if (tname != t.name()) {
        throw tc::CheckpointError(fmt::format("hypernet checkpoint was trained on template '{}', not '{}'", tname, t.name()));
    }
    if (manifest.value("grid_hash", std::uint64_t{0}) != arch::ScaleGrid::hash()) {
        throw tc::CheckpointError("hypernet checkpoint was written with a different scale grid");
    }
    HyperNet h(std::move(t), 0, manifest.value("hidden", 64));
    h.epochs_trained_ = manifest.value("epochs_trained", 0);
    for (auto& g : h.generators_) {
        const auto& name = h.arch_.layer(g.layer).name;
        for (auto [suffix, v] : {std::pair{".fc1.weight", &g.fc1_w}, std::pair{".fc1.bias", &g.fc1_b},
                                 std::pair{".fc2.weight", &g.fc2_w}, std::pair{".fc2.bias", &g.fc2_b}}) {
            const Tensor& stored = ck.get(name + suffix);
            if (stored.shape() != v->shape()) {
                throw tc::CheckpointError(fmt::format("'{}{}' has shape {}, template expects {}", name, suffix,
                                                      tc::shape_string(stored.shape()), tc::shape_string(v->shape())));
            }
            *v = Var::parameter(stored);
        }
    }
    return h;
}

std::vector<real> normalize_nev(const Nev& nev) {
    std::vector<real> out;
    out.reserve(nev.size());
    for (int i : nev.slots) out.push_back(static_cast<real>(arch::ScaleGrid::level(i)));
    return out;
}

SlicedModel generate_weights(const HyperNet& h, const Nev& nev) {
    const auto& t = h.arch();
    SlicedModel m;
    m.plan = make_plan(t, nev);
    m.weights.resize(static_cast<std::size_t>(t.layer_count()));
    const auto v = normalize_nev(nev);
    const Var input = Var::constant(Tensor({1, static_cast<std::int64_t>(v.size())}, v));
    for (const auto& g : h.generators()) {
        const Var hidden = tc::dense(input, g.fc1_w, g.fc1_b);
        const Var out = tc::dense(hidden, g.fc2_w, g.fc2_b);
        auto& w = m.weights[static_cast<std::size_t>(g.layer)];
        const Shape shape = weight_shape(t, m.plan, g.layer);
        w.weight = tc::crop(out, 0, g.full_shape, shape);
        const auto full_c = g.full_shape[0];
        std::int64_t offset = g.weight_count;
        if (g.affine) {
            // scale is generated as a deviation from 1
            w.gamma = tc::add_scalar(tc::crop(out, offset, {full_c}, {shape[0]}), real{1});
            w.beta = tc::crop(out, offset + full_c, {full_c}, {shape[0]});
            offset += 2 * full_c;
        }
        if (g.bias) w.bias = tc::crop(out, offset, {full_c}, {shape[0]});
    }
    return m;
}

double evaluate_nev(const HyperNet& h, const Nev& nev, const Split& calibration, const Split& validation,
                    const EvalOptions& options) {
    if (validation.size() == 0) throw DataError("validation split is empty");
    tc::NoGradGuard guard;
    const auto m = generate_weights(h, nev);
    const auto stats = calibrate(h.arch(), m.plan, m.weights, calibration.head(options.calibration_samples));
    return evaluate(h.arch(), m.plan, m.weights, stats, validation, options.chunk).top1;
}

std::vector<MetaEpochLog> meta_train(HyperNet& h, const Split& train, const Split* validation,
                                     const MetaTrainOptions& options, const MetaEpochCallback& on_epoch) {
    if (train.size() == 0) throw DataError("meta-training split is empty");
    if (options.batch_size == 0) throw std::invalid_argument("batch size must be >= 1");
    const auto& t = h.arch();
    const auto& in = t.input_shape();
    if (train.channels != in.channels || train.height != in.height || train.width != in.width) {
        throw DataError(fmt::format("dataset images are {}x{}x{}, template '{}' expects {}x{}x{}", train.channels,
                                    train.height, train.width, t.name(), in.channels, in.height, in.width));
    }
    if (train.classes != t.classes()) {
        throw DataError(fmt::format("dataset has {} classes, template '{}' has {}", train.classes, t.name(), t.classes()));
    }
    options.schedule.validate();

    tc::Sgd opt(h.parameters());
    std::vector<MetaEpochLog> log;
    std::vector<std::size_t> order(train.size());
    for (int epoch = h.epochs_trained(); epoch < options.epochs; ++epoch) {
        Rng rng(derive_seed(options.seed, "meta-train", static_cast<std::uint64_t>(epoch)));
        std::iota(order.begin(), order.end(), std::size_t{0});
        rng.shuffle(order);
        const double lr = options.schedule.lr(epoch);
        double loss_sum = 0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += options.batch_size) {
            const std::size_t end = std::min(order.size(), start + options.batch_size);
            if (end - start < 2) continue;  // batch statistics need two samples
            const std::span<const std::size_t> idx(order.data() + start, end - start);
            const Nev nev = arch::random_nev(t, rng);
            const auto m = generate_weights(h, nev);
            const Var logits = forward(t, m.plan, m.weights, Var::constant(train.gather(idx)));
            const auto labels = train.gather_labels(idx);
            const Var loss = tc::softmax_cross_entropy(logits, labels);
            opt.zero_grad();
            tc::backward(loss);
            opt.step(lr);
            loss_sum += loss.value()[0];
            ++batches;
        }
        h.set_epochs_trained(epoch + 1);
        MetaEpochLog entry;
        entry.epoch = epoch + 1;
        entry.mean_loss = batches ? loss_sum / static_cast<double>(batches) : 0.0;
        entry.lr = lr;
        if (validation && validation->size() > 0 && options.progress_nevs > 0) {
            Rng prng(derive_seed(options.seed, "meta-progress", static_cast<std::uint64_t>(epoch)));
            const auto sample = validation->head(options.progress_samples);
            double acc = 0;
            for (int k = 0; k < options.progress_nevs; ++k) {
                acc += evaluate_nev(h, arch::random_nev(t, prng), train, sample, {options.calibration_samples, 500});
            }
            entry.validation_accuracy = acc / options.progress_nevs;
        }
        log.push_back(entry);
        if (on_epoch && !on_epoch(h, entry)) break;
    }
    return log;
}

}  // namespace metaprune::hypernet
