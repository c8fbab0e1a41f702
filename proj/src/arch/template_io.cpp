// JSON template files. Schema (schema_version 1):
//
//   {
//     "schema_version": 1,
//     "name": "mininet",
//     "input_shape": [C, H, W],
//     "baseline": {"flops": 4110e6, "params": 25.5e6},        (optional)
//     "layers": [
//       {"name": "stem", "kind": "conv", "kernel": [3, 3], "stride": 2,
//        "padding": 1, "input": "input", "out_channels": 16,
//        "norm": true, "relu": true, "bias": false, "prunable": true,
//        "residual": "other_layer", "spatial_out": [14, 14]}, ...
//     ],
//     "slots": [{"name": "stem", "layers": ["stem"]}, ...],
//     "shortcut_groups": [["s1_proj", "s1b2_proj"], ...]
//   }
//
// kind is one of conv, depthwise, pointwise, dense, max_pool, global_avg_pool.
// "input" defaults to the previous layer (or the network input for the first
// layer); "padding" defaults to kernel/2; "bias" defaults to true for dense
// layers only. Depthwise and pooling layers take their width from their input
// and must not set out_channels to anything else.

#include "metaprune/arch.hpp"

#include <fmt/format.h>
#include <json.hpp>

#include <fstream>
#include <set>
#include <sstream>

namespace metaprune::arch {

using nlohmann::json;

namespace {

const std::set<std::string> kLayerKeys = {"name", "kind", "kernel", "stride", "padding", "input",
                                          "out_channels", "norm", "relu", "bias", "prunable",
                                          "residual", "spatial_out"};
const std::set<std::string> kTopKeys = {"schema_version", "name", "input_shape", "baseline",
                                        "layers", "slots", "shortcut_groups", "description"};

int index_of(const std::vector<LayerSpec>& layers, const std::string& name, const std::string& ctx) {
    for (std::size_t i = 0; i < layers.size(); ++i) {
        if (layers[i].name == name) return static_cast<int>(i);
    }
    throw ArchError(fmt::format("{}: unknown layer '{}'", ctx, name));
}

}  // namespace

ArchTemplate ArchTemplate::from_json_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ArchError(fmt::format("template is not valid JSON: {}", e.what()));
    }
    try {
        for (auto it = j.begin(); it != j.end(); ++it) {
            if (!kTopKeys.contains(it.key())) throw ArchError(fmt::format("unknown template field '{}'", it.key()));
        }
        if (j.value("schema_version", 1) != 1) throw ArchError("unsupported template schema_version");
        const std::string name = j.at("name").get<std::string>();
        const auto shape = j.at("input_shape").get<std::vector<int>>();
        if (shape.size() != 3) throw ArchError("input_shape must be [C, H, W]");
        InputShape input{shape[0], shape[1], shape[2]};

        std::vector<LayerSpec> layers;
        for (const auto& jl : j.at("layers")) {
            for (auto it = jl.begin(); it != jl.end(); ++it) {
                if (!kLayerKeys.contains(it.key())) {
                    throw ArchError(fmt::format("unknown layer field '{}'", it.key()));
                }
            }
            LayerSpec l;
            l.name = jl.at("name").get<std::string>();
            l.kind = layer_kind_from_string(jl.at("kind").get<std::string>());
            if (jl.contains("kernel")) {
                if (jl["kernel"].is_array()) {
                    const auto k = jl["kernel"].get<std::vector<int>>();
                    if (k.size() != 2) throw ArchError(fmt::format("layer '{}': kernel must be [kh, kw]", l.name));
                    l.kernel_h = k[0];
                    l.kernel_w = k[1];
                } else {
                    l.kernel_h = l.kernel_w = jl["kernel"].get<int>();
                }
            }
            l.stride = jl.value("stride", 1);
            l.padding = jl.value("padding", l.kernel_h / 2);
            const std::string in = jl.value("input", layers.empty() ? std::string("input") : layers.back().name);
            l.input = in == "input" ? -1 : index_of(layers, in, l.name);
            if (jl.contains("residual")) l.residual = index_of(layers, jl["residual"].get<std::string>(), l.name);
            l.base_width = jl.value("out_channels", std::int64_t{0});
            l.norm = jl.value("norm", false);
            l.relu = jl.value("relu", false);
            l.bias = jl.value("bias", l.kind == LayerKind::Dense);
            l.prunable = jl.value("prunable", false);
            if (jl.contains("spatial_out")) {
                const auto s = jl["spatial_out"].get<std::vector<int>>();
                if (s.size() != 2) throw ArchError(fmt::format("layer '{}': spatial_out must be [H, W]", l.name));
                l.out_h = s[0];
                l.out_w = s[1];
            }
            layers.push_back(std::move(l));
        }

        std::vector<Slot> slots;
        for (const auto& js : j.at("slots")) {
            Slot s;
            s.name = js.at("name").get<std::string>();
            for (const auto& ln : js.at("layers")) s.layers.push_back(index_of(layers, ln.get<std::string>(), s.name));
            slots.push_back(std::move(s));
        }
        std::vector<std::vector<int>> groups;
        if (j.contains("shortcut_groups")) {
            for (const auto& jg : j["shortcut_groups"]) {
                std::vector<int> g;
                for (const auto& ln : jg) g.push_back(index_of(layers, ln.get<std::string>(), "shortcut group"));
                groups.push_back(std::move(g));
            }
        }
        Baseline baseline;
        if (j.contains("baseline")) {
            const auto& jb = j["baseline"];
            if (jb.contains("flops")) baseline.flops = jb["flops"].get<double>();
            if (jb.contains("params")) baseline.params = jb["params"].get<double>();
        }
        return ArchTemplate(name, input, std::move(layers), std::move(slots), std::move(groups), baseline);
    } catch (const json::exception& e) {
        throw ArchError(fmt::format("malformed template: {}", e.what()));
    }
}

ArchTemplate ArchTemplate::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ArchError(fmt::format("cannot open template '{}'", path.string()));
    std::stringstream ss;
    ss << in.rdbuf();
    return from_json_text(ss.str());
}

std::string ArchTemplate::to_json_text() const {
    json j;
    j["schema_version"] = 1;
    j["name"] = name_;
    j["input_shape"] = {input_.channels, input_.height, input_.width};
    if (baseline_.flops || baseline_.params) {
        json b = json::object();
        if (baseline_.flops) b["flops"] = *baseline_.flops;
        if (baseline_.params) b["params"] = *baseline_.params;
        j["baseline"] = b;
    }
    json layers = json::array();
    for (const auto& l : layers_) {
        json jl;
        jl["name"] = l.name;
        jl["kind"] = to_string(l.kind);
        jl["kernel"] = {l.kernel_h, l.kernel_w};
        jl["stride"] = l.stride;
        jl["padding"] = l.padding;
        jl["input"] = l.input < 0 ? std::string("input") : layers_[static_cast<std::size_t>(l.input)].name;
        if (l.residual >= 0) jl["residual"] = layers_[static_cast<std::size_t>(l.residual)].name;
        jl["out_channels"] = l.base_width;
        jl["norm"] = l.norm;
        jl["relu"] = l.relu;
        jl["bias"] = l.bias;
        jl["prunable"] = l.prunable;
        jl["spatial_out"] = {l.out_h, l.out_w};
        layers.push_back(jl);
    }
    j["layers"] = layers;
    json slots = json::array();
    for (const auto& s : slots_) {
        json names = json::array();
        for (int li : s.layers) names.push_back(layers_[static_cast<std::size_t>(li)].name);
        slots.push_back({{"name", s.name}, {"layers", names}});
    }
    j["slots"] = slots;
    json groups = json::array();
    for (const auto& g : shortcut_groups_) {
        json names = json::array();
        for (int li : g) names.push_back(layers_[static_cast<std::size_t>(li)].name);
        groups.push_back(names);
    }
    j["shortcut_groups"] = groups;
    return j.dump(2);
}

}  // namespace metaprune::arch
