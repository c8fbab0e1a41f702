#include "metaprune/arch.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <set>
#include <sstream>

namespace metaprune::arch {

double ScaleGrid::level(int index) {
    if (index < 0 || index > kMaxIndex) {
        throw ArchError(fmt::format("scale index {} outside [0, {}]", index, kMaxIndex));
    }
    return (10.0 + 3.0 * index) / 100.0;
}

std::int64_t ScaleGrid::scaled_width(std::int64_t base, int index) {
    if (index < 0 || index > kMaxIndex) {
        throw ArchError(fmt::format("scale index {} outside [0, {}]", index, kMaxIndex));
    }
    // level = (10 + 3i) / 100, so round_half_up(base * level) = floor((base*(10+3i) + 50) / 100).
    const std::int64_t w = (base * (10 + 3 * index) + 50) / 100;
    return std::max<std::int64_t>(w, 1);
}

std::array<double, ScaleGrid::kLevels> ScaleGrid::levels() {
    std::array<double, kLevels> out{};
    for (int i = 0; i < kLevels; ++i) out[i] = level(i);
    return out;
}

std::uint64_t ScaleGrid::hash() {
    std::string text;
    for (double v : levels()) text += fmt::format("{:.17g};", v);
    return hash_label(text);
}

std::string to_string(LayerKind kind) {
    switch (kind) {
        case LayerKind::Conv: return "conv";
        case LayerKind::Depthwise: return "depthwise";
        case LayerKind::Pointwise: return "pointwise";
        case LayerKind::Dense: return "dense";
        case LayerKind::MaxPool: return "max_pool";
        case LayerKind::GlobalAvgPool: return "global_avg_pool";
    }
    return "unknown";
}

LayerKind layer_kind_from_string(const std::string& s) {
    if (s == "conv") return LayerKind::Conv;
    if (s == "depthwise") return LayerKind::Depthwise;
    if (s == "pointwise") return LayerKind::Pointwise;
    if (s == "dense") return LayerKind::Dense;
    if (s == "max_pool") return LayerKind::MaxPool;
    if (s == "global_avg_pool") return LayerKind::GlobalAvgPool;
    throw ArchError(fmt::format("unknown layer kind '{}'", s));
}

bool has_weights(LayerKind kind) {
    return kind == LayerKind::Conv || kind == LayerKind::Depthwise || kind == LayerKind::Pointwise ||
           kind == LayerKind::Dense;
}

namespace {

bool is_passthrough(LayerKind kind) {
    return kind == LayerKind::Depthwise || kind == LayerKind::MaxPool || kind == LayerKind::GlobalAvgPool;
}

}  // namespace

std::string to_string(const Nev& nev) {
    std::string out;
    for (std::size_t i = 0; i < nev.size(); ++i) {
        if (i) out += ',';
        out += std::to_string(nev[i]);
    }
    return out;
}

Nev nev_from_string(const std::string& s) {
    Nev nev;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const auto first = item.find_first_not_of(" \t");
        const auto last = item.find_last_not_of(" \t");
        item = first == std::string::npos ? std::string() : item.substr(first, last - first + 1);
        try {
            std::size_t used = 0;
            const int v = std::stoi(item, &used);
            if (used != item.size()) throw std::invalid_argument(item);
            nev.slots.push_back(v);
        } catch (const std::exception&) {
            throw ArchError(fmt::format("malformed NEV element '{}'", item));
        }
    }
    if (nev.slots.empty()) throw ArchError("empty NEV");
    return nev;
}

void IndexRange::validate() const {
    if (lo > hi) throw ArchError(fmt::format("empty index range [{}, {}]", lo, hi));
    if (lo < 0 || hi > ScaleGrid::kMaxIndex) {
        throw ArchError(fmt::format("index range [{}, {}] outside [0, {}]", lo, hi, ScaleGrid::kMaxIndex));
    }
}

ArchTemplate::ArchTemplate(std::string name, InputShape input, std::vector<LayerSpec> layers,
                           std::vector<Slot> slots, std::vector<std::vector<int>> shortcut_groups,
                           Baseline baseline)
    : name_(std::move(name)),
      input_(input),
      layers_(std::move(layers)),
      slots_(std::move(slots)),
      shortcut_groups_(std::move(shortcut_groups)),
      baseline_(baseline) {
    validate();
}

const LayerSpec& ArchTemplate::layer(int i) const {
    if (i < 0 || i >= layer_count()) {
        throw ArchError(fmt::format("layer index {} out of range (template '{}' has {} layers)", i, name_,
                                    layers_.size()));
    }
    return layers_[static_cast<std::size_t>(i)];
}

int ArchTemplate::layer_index(const std::string& name) const {
    for (int i = 0; i < layer_count(); ++i) {
        if (layers_[static_cast<std::size_t>(i)].name == name) return i;
    }
    throw ArchError(fmt::format("template '{}' has no layer '{}'", name_, name));
}

int ArchTemplate::classes() const {
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) {
        if (it->kind == LayerKind::Dense) return static_cast<int>(it->base_width);
    }
    return static_cast<int>(layers_.back().base_width);
}

int ArchTemplate::width_source(int layer_idx) const {
    int i = layer_idx;
    while (i >= 0 && is_passthrough(layers_[static_cast<std::size_t>(i)].kind)) {
        i = layers_[static_cast<std::size_t>(i)].input;
    }
    return i;  // -1 means the network input
}

Nev ArchTemplate::full_width() const {
    return Nev{std::vector<int>(slots_.size(), ScaleGrid::kMaxIndex)};
}

void ArchTemplate::check(const Nev& nev) const {
    if (nev.size() != slots_.size()) {
        throw ArchError(fmt::format("NEV has {} slots, template '{}' expects {}", nev.size(), name_,
                                    slots_.size()));
    }
    for (std::size_t i = 0; i < nev.size(); ++i) {
        if (nev[i] < 0 || nev[i] > ScaleGrid::kMaxIndex) {
            throw ArchError(fmt::format("NEV slot {} has index {} outside [0, {}]", i, nev[i],
                                        ScaleGrid::kMaxIndex));
        }
    }
}

void ArchTemplate::validate() {
    auto fail = [this](const std::string& msg) {
        throw ArchError(fmt::format("template '{}': {}", name_, msg));
    };
    if (input_.channels <= 0 || input_.height <= 0 || input_.width <= 0) fail("input_shape must be positive");
    if (layers_.empty()) fail("no layers");

    std::set<std::string> names;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        auto& l = layers_[i];
        if (!names.insert(l.name).second) fail(fmt::format("duplicate layer name '{}'", l.name));
        if (l.input >= static_cast<int>(i) || l.input < -1) {
            fail(fmt::format("layer '{}' must consume an earlier layer or the input", l.name));
        }
        if (l.residual >= static_cast<int>(i) || l.residual < -1) {
            fail(fmt::format("layer '{}' residual must reference an earlier layer", l.name));
        }
        if (l.stride < 1) fail(fmt::format("layer '{}' stride must be >= 1", l.name));
        if (l.kernel_h < 1 || l.kernel_w < 1) fail(fmt::format("layer '{}' kernel must be >= 1", l.name));

        const int in_c = l.input < 0 ? input_.channels : static_cast<int>(layers_[l.input].base_width);
        const int in_h = l.input < 0 ? input_.height : layers_[l.input].out_h;
        const int in_w = l.input < 0 ? input_.width : layers_[l.input].out_w;

        int oh = 0;
        int ow = 0;
        switch (l.kind) {
            case LayerKind::Pointwise:
                if (l.kernel_h != 1 || l.kernel_w != 1) fail(fmt::format("pointwise layer '{}' needs a 1x1 kernel", l.name));
                [[fallthrough]];
            case LayerKind::Conv:
            case LayerKind::Depthwise:
            case LayerKind::MaxPool:
                oh = (in_h + 2 * l.padding - l.kernel_h) / l.stride + 1;
                ow = (in_w + 2 * l.padding - l.kernel_w) / l.stride + 1;
                break;
            case LayerKind::GlobalAvgPool:
            case LayerKind::Dense:
                oh = 1;
                ow = 1;
                break;
        }
        if (oh < 1 || ow < 1) fail(fmt::format("layer '{}' has empty spatial output", l.name));
        if (l.out_h != 0 && (l.out_h != oh || l.out_w != ow)) {
            fail(fmt::format("layer '{}' spatial_out {}x{} inconsistent with stride chain ({}x{})", l.name, l.out_h,
                             l.out_w, oh, ow));
        }
        l.out_h = oh;
        l.out_w = ow;

        if (is_passthrough(l.kind)) {
            if (l.prunable) fail(fmt::format("layer '{}' ({}) follows its producer and cannot be prunable", l.name, to_string(l.kind)));
            if (l.base_width != 0 && l.base_width != in_c) {
                fail(fmt::format("layer '{}' width {} must equal its input width {}", l.name, l.base_width, in_c));
            }
            l.base_width = in_c;
        } else if (l.base_width < 1) {
            fail(fmt::format("layer '{}' needs out_channels >= 1", l.name));
        }
        if (l.residual >= 0) {
            const auto& r = layers_[static_cast<std::size_t>(l.residual)];
            if (r.base_width != l.base_width || r.out_h != l.out_h || r.out_w != l.out_w) {
                fail(fmt::format("layer '{}' residual '{}' has a different shape", l.name, r.name));
            }
        }
        l.slot = -1;
    }

    std::vector<int> slot_count(layers_.size(), 0);
    for (std::size_t s = 0; s < slots_.size(); ++s) {
        if (slots_[s].layers.empty()) fail(fmt::format("slot '{}' is empty", slots_[s].name));
        for (int li : slots_[s].layers) {
            if (li < 0 || li >= layer_count()) fail(fmt::format("slot '{}' references a missing layer", slots_[s].name));
            auto& l = layers_[static_cast<std::size_t>(li)];
            if (!l.prunable) fail(fmt::format("slot '{}' lists non-prunable layer '{}'", slots_[s].name, l.name));
            ++slot_count[static_cast<std::size_t>(li)];
            l.slot = static_cast<int>(s);
        }
    }
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        if (layers_[i].prunable && slot_count[i] != 1) {
            fail(fmt::format("prunable layer '{}' must belong to exactly one slot (found {})", layers_[i].name,
                             slot_count[i]));
        }
    }

    for (const auto& group : shortcut_groups_) {
        std::optional<int> slot;
        for (int li : group) {
            if (li < 0 || li >= layer_count()) fail("shortcut group references a missing layer");
            const int src = width_source(li);
            const int s = src < 0 ? -1 : layers_[static_cast<std::size_t>(src)].slot;
            if (s < 0) fail(fmt::format("shortcut group member '{}' is not prunable", layers_[li].name));
            if (slot && *slot != s) {
                fail(fmt::format("shortcut group member '{}' does not share the group's slot", layers_[li].name));
            }
            slot = s;
        }
    }

    // Residual adds must agree in width for every NEV.
    for (const auto& l : layers_) {
        if (l.residual < 0) continue;
        const int a = width_source(layer_index(l.name));
        const int b = width_source(l.residual);
        const int sa = a < 0 ? -1 : layers_[static_cast<std::size_t>(a)].slot;
        const int sb = b < 0 ? -1 : layers_[static_cast<std::size_t>(b)].slot;
        if (sa != sb) {
            fail(fmt::format("layer '{}' and its residual '{}' must share a slot", l.name,
                             layers_[static_cast<std::size_t>(l.residual)].name));
        }
    }
}

std::vector<std::int64_t> channel_plan(const ArchTemplate& t, const Nev& nev) {
    t.check(nev);
    std::vector<std::int64_t> ch(static_cast<std::size_t>(t.layer_count()));
    for (int i = 0; i < t.layer_count(); ++i) {
        const auto& l = t.layers()[static_cast<std::size_t>(i)];
        const std::size_t ui = static_cast<std::size_t>(i);
        if (is_passthrough(l.kind)) {
            ch[ui] = l.input < 0 ? t.input_shape().channels : ch[static_cast<std::size_t>(l.input)];
        } else if (l.prunable) {
            ch[ui] = ScaleGrid::scaled_width(l.base_width, nev[static_cast<std::size_t>(l.slot)]);
        } else {
            ch[ui] = l.base_width;
        }
    }
    return ch;
}

std::vector<std::int64_t> input_plan(const ArchTemplate& t, const std::vector<std::int64_t>& channels) {
    std::vector<std::int64_t> in(channels.size());
    for (int i = 0; i < t.layer_count(); ++i) {
        const auto& l = t.layers()[static_cast<std::size_t>(i)];
        std::int64_t c;
        std::int64_t hw;
        if (l.input < 0) {
            c = t.input_shape().channels;
            hw = static_cast<std::int64_t>(t.input_shape().height) * t.input_shape().width;
        } else {
            const auto& p = t.layers()[static_cast<std::size_t>(l.input)];
            c = channels[static_cast<std::size_t>(l.input)];
            hw = static_cast<std::int64_t>(p.out_h) * p.out_w;
        }
        in[static_cast<std::size_t>(i)] = l.kind == LayerKind::Dense ? c * hw : c;
    }
    return in;
}

std::int64_t channels_of(const ArchTemplate& t, const Nev& nev, int layer) {
    t.layer(layer);
    return channel_plan(t, nev)[static_cast<std::size_t>(layer)];
}

std::vector<LayerCost> layer_costs(const ArchTemplate& t, const Nev& nev) {
    const auto ch = channel_plan(t, nev);
    const auto in = input_plan(t, ch);
    std::vector<LayerCost> costs(ch.size());
    for (std::size_t i = 0; i < ch.size(); ++i) {
        const auto& l = t.layers()[i];
        const std::int64_t cout = ch[i];
        const std::int64_t cin = in[i];
        const std::int64_t k = static_cast<std::int64_t>(l.kernel_h) * l.kernel_w;
        const std::int64_t hw = static_cast<std::int64_t>(l.out_h) * l.out_w;
        LayerCost c;
        switch (l.kind) {
            case LayerKind::Conv:
            case LayerKind::Pointwise:
                c.macs = k * cin * cout * hw;
                c.params = k * cin * cout;
                break;
            case LayerKind::Depthwise:
                c.macs = k * cout * hw;
                c.params = k * cout;
                break;
            case LayerKind::Dense:
                c.macs = cin * cout;
                c.params = cin * cout;
                break;
            case LayerKind::MaxPool:
            case LayerKind::GlobalAvgPool:
                break;
        }
        if (has_weights(l.kind)) {
            if (l.bias) c.params += cout;
            if (l.norm) {
                c.macs += cout * hw;  // inference-time affine: one multiply-add per element
                c.params += 2 * cout;
            }
        }
        costs[i] = c;
    }
    return costs;
}

std::int64_t flops_of(const ArchTemplate& t, const Nev& nev) {
    std::int64_t total = 0;
    for (const auto& c : layer_costs(t, nev)) total += c.macs;
    return total;
}

std::int64_t params_of(const ArchTemplate& t, const Nev& nev) {
    std::int64_t total = 0;
    for (const auto& c : layer_costs(t, nev)) total += c.params;
    return total;
}

Nev random_nev(const ArchTemplate& t, Rng& rng, IndexRange range) {
    range.validate();
    Nev nev;
    nev.slots.resize(t.nev_length());
    for (auto& s : nev.slots) s = static_cast<int>(rng.uniform_int(range.lo, range.hi));
    return nev;
}

}  // namespace metaprune::arch
