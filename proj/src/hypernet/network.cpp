#include "metaprune/hypernet/network.hpp"

#include <fmt/format.h>
#include <json.hpp>

#include <cmath>
#include <numeric>

namespace metaprune::hypernet {

using nlohmann::json;
namespace tc = tensorcore;

SlicePlan make_plan(const ArchTemplate& t, const Nev& nev) {
    t.check(nev);
    SlicePlan p;
    p.nev = nev;
    p.out_channels = arch::channel_plan(t, nev);
    p.in_channels = arch::input_plan(t, p.out_channels);
    return p;
}

Shape weight_shape(const ArchTemplate& t, const SlicePlan& plan, int layer) {
    const auto& l = t.layer(layer);
    const auto i = static_cast<std::size_t>(layer);
    switch (l.kind) {
    case arch::LayerKind::Conv:
    case arch::LayerKind::Pointwise:
        return {plan.out_channels[i], plan.in_channels[i], l.kernel_h, l.kernel_w};
    case arch::LayerKind::Depthwise:
        return {plan.out_channels[i], 1, l.kernel_h, l.kernel_w};
    case arch::LayerKind::Dense:
        return {plan.out_channels[i], plan.in_channels[i]};
    default:
        return {};
    }
}

Var forward(const ArchTemplate& t, const SlicePlan& plan, const std::vector<LayerWeights>& weights, const Var& input,
            const ForwardOptions& options) {
    if (weights.size() != static_cast<std::size_t>(t.layer_count())) {
        throw arch::ArchError(fmt::format("{} weight sets for {} layers", weights.size(), t.layer_count()));
    }
    const auto& in = t.input_shape();
    const auto& s = input.shape();
    if (s.size() != 4 || s[1] != in.channels || s[2] != in.height || s[3] != in.width) {
        throw tc::ShapeError(fmt::format("forward: input {} does not match template input [N, {}, {}, {}]",
                                         tc::shape_string(s), in.channels, in.height, in.width));
    }
    if (options.mode == NormMode::Fixed && !options.fixed_stats) {
        throw std::invalid_argument("forward: fixed normalization needs statistics");
    }
    if (options.stats_out) options.stats_out->assign(weights.size(), NormStats{});

    std::vector<Var> outs(weights.size());
    for (int i = 0; i < t.layer_count(); ++i) {
        const auto& l = t.layer(i);
        const auto& w = weights[static_cast<std::size_t>(i)];
        const Var& x = l.input < 0 ? input : outs[static_cast<std::size_t>(l.input)];
        if (arch::has_weights(l.kind)) {
            const Shape expected = weight_shape(t, plan, i);
            if (!w.weight.defined() || w.weight.shape() != expected) {
                throw tc::ShapeError(fmt::format("forward: layer '{}' weight is {}, plan needs {}", l.name,
                                                 w.weight.defined() ? tc::shape_string(w.weight.shape()) : "missing",
                                                 tc::shape_string(expected)));
            }
        }
        Var y;
        switch (l.kind) {
        case arch::LayerKind::Conv:
        case arch::LayerKind::Pointwise:
            y = tc::conv2d(x, w.weight, l.stride, l.padding);
            break;
        case arch::LayerKind::Depthwise:
            y = tc::depthwise_conv2d(x, w.weight, l.stride, l.padding);
            break;
        case arch::LayerKind::Dense:
            y = tc::dense(x.value().rank() == 2 ? x : tc::flatten(x), w.weight, w.bias);
            break;
        case arch::LayerKind::MaxPool:
            y = tc::max_pool2d(x, l.kernel_h, l.stride, l.padding);
            break;
        case arch::LayerKind::GlobalAvgPool:
            y = tc::global_avg_pool(x);
            break;
        }
        if (l.norm) {
            if (options.mode == NormMode::Fixed) {
                y = tc::channel_norm_fixed(y, w.gamma, w.beta, (*options.fixed_stats)[static_cast<std::size_t>(i)]);
            } else {
                NormStats* out = options.stats_out ? &(*options.stats_out)[static_cast<std::size_t>(i)] : nullptr;
                y = tc::channel_norm_affine(y, w.gamma, w.beta, tc::kNormEps, out);
            }
        }
        if (l.residual >= 0) y = tc::add(y, outs[static_cast<std::size_t>(l.residual)]);
        if (l.relu) y = tc::relu(y);
        outs[static_cast<std::size_t>(i)] = std::move(y);
    }
    return outs.back();
}

std::vector<NormStats> calibrate(const ArchTemplate& t, const SlicePlan& plan, const std::vector<LayerWeights>& weights,
                                 const Split& calibration) {
    if (calibration.size() == 0) throw DataError("calibration split is empty");
    tc::NoGradGuard guard;
    std::vector<std::size_t> idx(calibration.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::vector<NormStats> stats;
    ForwardOptions opt;
    opt.stats_out = &stats;
    forward(t, plan, weights, Var::constant(calibration.gather(idx)), opt);
    return stats;
}

std::size_t topk_hits(const Tensor& logits, std::span<const int> labels, int k) {
    const auto n = logits.dim(0);
    const auto c = logits.dim(1);
    if (static_cast<std::int64_t>(labels.size()) != n) throw tc::ShapeError("topk_hits: label count mismatch");
    std::size_t hits = 0;
    for (std::int64_t i = 0; i < n; ++i) {
        const real* z = logits.data() + i * c;
        const int y = labels[static_cast<std::size_t>(i)];
        // rank of the label: count classes scoring strictly higher, or equal with a lower index
        int better = 0;
        for (std::int64_t j = 0; j < c; ++j) {
            if (z[j] > z[y] || (z[j] == z[y] && j < y)) ++better;
        }
        if (better < k) ++hits;
    }
    return hits;
}

double topk_accuracy(const Tensor& logits, std::span<const int> labels, int k) {
    if (labels.empty()) return 0.0;
    return static_cast<double>(topk_hits(logits, labels, k)) / static_cast<double>(labels.size());
}

EvalResult evaluate(const ArchTemplate& t, const SlicePlan& plan, const std::vector<LayerWeights>& weights,
                    const std::vector<NormStats>& stats, const Split& data, std::size_t chunk) {
    if (data.size() == 0) throw DataError("evaluation split is empty");
    tc::NoGradGuard guard;
    ForwardOptions opt;
    opt.mode = NormMode::Fixed;
    opt.fixed_stats = &stats;
    const int k5 = std::min(5, data.classes);
    std::size_t hit1 = 0;
    std::size_t hit5 = 0;
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < data.size(); start += chunk) {
        const std::size_t end = std::min(data.size(), start + chunk);
        idx.resize(end - start);
        std::iota(idx.begin(), idx.end(), start);
        const Var logits = forward(t, plan, weights, Var::constant(data.gather(idx)), opt);
        const auto labels = data.gather_labels(idx);
        hit1 += topk_hits(logits.value(), labels, 1);
        hit5 += topk_hits(logits.value(), labels, k5);
    }
    const auto n = static_cast<double>(data.size());
    return {static_cast<double>(hit1) / n, static_cast<double>(hit5) / n, data.size()};
}

std::vector<Var> Model::parameters() const {
    std::vector<Var> out;
    for (const auto& w : weights) {
        for (const Var* v : {&w.weight, &w.gamma, &w.beta, &w.bias}) {
            if (v->defined()) out.push_back(*v);
        }
    }
    return out;
}

Model init_model(const ArchTemplate& t, const Nev& nev, Rng& rng) {
    Model m;
    m.plan = make_plan(t, nev);
    m.weights.resize(static_cast<std::size_t>(t.layer_count()));
    for (int i = 0; i < t.layer_count(); ++i) {
        const auto& l = t.layer(i);
        if (!arch::has_weights(l.kind)) continue;
        auto& w = m.weights[static_cast<std::size_t>(i)];
        const Shape shape = weight_shape(t, m.plan, i);
        const auto fan_in = tc::numel(shape) / shape[0];
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        Tensor wt(shape);
        for (auto& v : wt.values()) v = static_cast<real>(rng.uniform(-bound, bound));
        w.weight = Var::parameter(std::move(wt));
        const auto c = shape[0];
        if (l.norm) {
            w.gamma = Var::parameter(Tensor({c}, real{1}));
            w.beta = Var::parameter(Tensor({c}, real{0}));
        }
        if (l.bias) {
            Tensor b({c});
            for (auto& v : b.values()) v = static_cast<real>(rng.uniform(-bound, bound));
            w.bias = Var::parameter(std::move(b));
        }
    }
    return m;
}

tc::Checkpoint model_checkpoint(const ArchTemplate& t, const Model& m, const std::string& extra_json) {
    json meta = {{"kind", "model"},
                 {"template", t.name()},
                 {"grid_hash", arch::ScaleGrid::hash()},
                 {"nev", arch::to_string(m.plan.nev)},
                 {"extra", json::parse(extra_json)}};
    tc::Checkpoint ck;
    ck.metadata = meta.dump();
    for (int i = 0; i < t.layer_count(); ++i) {
        const auto& w = m.weights[static_cast<std::size_t>(i)];
        const auto& name = t.layer(i).name;
        if (w.weight.defined()) ck.tensors.emplace_back(name + ".weight", w.weight.value());
        if (w.gamma.defined()) ck.tensors.emplace_back(name + ".gamma", w.gamma.value());
        if (w.beta.defined()) ck.tensors.emplace_back(name + ".beta", w.beta.value());
        if (w.bias.defined()) ck.tensors.emplace_back(name + ".bias", w.bias.value());
    }
    for (auto& entry : ck.tensors) entry.second.drop_grad();
    return ck;
}

Model model_from_checkpoint(const ArchTemplate& t, const tc::Checkpoint& ck) {
    json meta;
    try {
        meta = json::parse(ck.metadata);
    } catch (const json::exception& e) {
        throw tc::CheckpointError(fmt::format("model checkpoint metadata is not JSON: {}", e.what()));
    }
    if (meta.value("kind", "") != "model") throw tc::CheckpointError("not a model checkpoint");
    if (meta.value("template", "") != t.name()) {
        throw tc::CheckpointError(fmt::format("checkpoint is for template '{}', not '{}'", meta.value("template", ""), t.name()));
    }
    if (meta.value("grid_hash", std::uint64_t{0}) != arch::ScaleGrid::hash()) {
        throw tc::CheckpointError("checkpoint was written with a different scale grid");
    }
    Model m;
    m.plan = make_plan(t, arch::nev_from_string(meta.at("nev").get<std::string>()));
    m.weights.resize(static_cast<std::size_t>(t.layer_count()));
    auto load = [&](const std::string& name, const Shape& shape) {
        const Tensor& v = ck.get(name);
        if (v.shape() != shape) {
            throw tc::CheckpointError(fmt::format("tensor '{}' has shape {}, expected {}", name,
                                                  tc::shape_string(v.shape()), tc::shape_string(shape)));
        }
        return Var::parameter(v);
    };
    for (int i = 0; i < t.layer_count(); ++i) {
        const auto& l = t.layer(i);
        if (!arch::has_weights(l.kind)) continue;
        auto& w = m.weights[static_cast<std::size_t>(i)];
        const Shape shape = weight_shape(t, m.plan, i);
        w.weight = load(l.name + ".weight", shape);
        if (l.norm) {
            w.gamma = load(l.name + ".gamma", {shape[0]});
            w.beta = load(l.name + ".beta", {shape[0]});
        }
        if (l.bias) w.bias = load(l.name + ".bias", {shape[0]});
    }
    return m;
}

}  // namespace metaprune::hypernet
