#include <doctest.h>

#include <fstream>
#include <json.hpp>
#include <map>
#include <sstream>

#include "metaprune/arch.hpp"
#include "paths.hpp"

using namespace metaprune;
using namespace metaprune::arch;
using nlohmann::json;

namespace {

// Independent cost oracle: walks the raw template JSON with its own shape
// propagation and nearest-integer width search.
struct OracleCost {
    std::int64_t macs = 0;
    std::int64_t params = 0;
};

std::int64_t oracle_width(std::int64_t base, int index) {
    // the integer c minimizing |100c - base*(10+3i)|, ties resolved upward
    const std::int64_t target = base * (10 + 3 * index);
    std::int64_t best = 1;
    for (std::int64_t c = 1; c <= base; ++c) {
        const auto d = std::llabs(100 * c - target);
        const auto bd = std::llabs(100 * best - target);
        if (d < bd || (d == bd && c > best)) best = c;
    }
    return best;
}

json read_json(const std::filesystem::path& p) {
    std::ifstream f(p);
    std::stringstream ss;
    ss << f.rdbuf();
    return json::parse(ss.str());
}

OracleCost oracle_cost(const json& t, const std::vector<int>& nev) {
    std::map<std::string, int> slot_of;
    for (std::size_t s = 0; s < t["slots"].size(); ++s) {
        for (const auto& l : t["slots"][s]["layers"]) slot_of[l.get<std::string>()] = static_cast<int>(s);
    }
    struct Out {
        std::int64_t c, h, w;
    };
    std::map<std::string, Out> outs;
    Out prev{t["input_shape"][0], t["input_shape"][1], t["input_shape"][2]};
    outs["input"] = prev;
    OracleCost cost;
    std::string last = "input";
    for (const auto& l : t["layers"]) {
        const std::string name = l["name"];
        const std::string kind = l["kind"];
        const Out in = outs.at(l.value("input", last));
        int kh = 1, kw = 1;
        if (l.contains("kernel")) {
            if (l["kernel"].is_array()) {
                kh = l["kernel"][0];
                kw = l["kernel"][1];
            } else {
                kh = kw = l["kernel"].get<int>();
            }
        }
        const int s = l.value("stride", 1);
        const int p = l.value("padding", kh / 2);
        Out o{};
        if (kind == "global_avg_pool") {
            o = {in.c, 1, 1};
        } else if (kind == "dense") {
            o = {0, 1, 1};
        } else {
            o = {in.c, (in.h + 2 * p - kh) / s + 1, (in.w + 2 * p - kw) / s + 1};
        }
        const bool prunable = l.value("prunable", false);
        const std::int64_t base = l.value("out_channels", std::int64_t{0});
        if (kind == "conv" || kind == "pointwise" || kind == "dense") {
            o.c = prunable ? oracle_width(base, nev[static_cast<std::size_t>(slot_of.at(name))]) : base;
        }
        const bool bias = l.value("bias", kind == "dense");
        const bool norm = l.value("norm", false);
        std::int64_t macs = 0, params = 0;
        if (kind == "conv" || kind == "pointwise") {
            params = std::int64_t{kh} * kw * in.c * o.c;
            macs = params * o.h * o.w;
        } else if (kind == "depthwise") {
            params = std::int64_t{kh} * kw * in.c;
            macs = params * o.h * o.w;
        } else if (kind == "dense") {
            params = in.c * in.h * in.w * o.c;
            macs = params;
        }
        if (kind != "max_pool" && kind != "global_avg_pool") {
            if (bias) params += o.c;
            if (norm) {
                params += 2 * o.c;
                macs += o.c * o.h * o.w;
            }
        }
        cost.macs += macs;
        cost.params += params;
        outs[name] = o;
        last = name;
    }
    return cost;
}

const char* kTiny = R"({
  "name": "tiny", "input_shape": [3, 8, 8],
  "layers": [
    {"name": "c1", "kind": "conv", "kernel": 3, "out_channels": 8, "norm": true, "relu": true, "prunable": true},
    {"name": "c2", "kind": "conv", "kernel": 3, "out_channels": 8, "norm": true, "prunable": true, "residual": "c1"},
    {"name": "gap", "kind": "global_avg_pool"},
    {"name": "fc", "kind": "dense", "out_channels": 4}
  ],
  "slots": [{"name": "s", "layers": ["c1", "c2"]}],
  "shortcut_groups": [["c1", "c2"]]
})";

}  // namespace

TEST_CASE("scale grid levels and widths") {
    CHECK(ScaleGrid::level(0) == doctest::Approx(0.10));
    CHECK(ScaleGrid::level(30) == doctest::Approx(1.00));
    CHECK(ScaleGrid::level(10) == doctest::Approx(0.40));
    const auto levels = ScaleGrid::levels();
    for (int i = 1; i < ScaleGrid::kLevels; ++i) CHECK(levels[static_cast<std::size_t>(i)] > levels[static_cast<std::size_t>(i - 1)]);
    for (std::int64_t base : {1, 3, 7, 10, 16, 32, 50, 64, 100, 255, 256, 1000, 2048}) {
        for (int i = 0; i <= ScaleGrid::kMaxIndex; ++i) {
            CHECK_MESSAGE(ScaleGrid::scaled_width(base, i) == oracle_width(base, i), "base ", base, " index ", i);
        }
        CHECK(ScaleGrid::scaled_width(base, 30) == base);
    }
    // 0.10 * 5 = 0.5 rounds up; never below one channel
    CHECK(ScaleGrid::scaled_width(5, 0) == 1);
    CHECK(ScaleGrid::scaled_width(1, 0) == 1);
    CHECK(ScaleGrid::scaled_width(25, 0) == 3);  // 2.5 -> 3
    CHECK_THROWS_AS(ScaleGrid::level(31), ArchError);
    CHECK_THROWS_AS(ScaleGrid::level(-1), ArchError);
}

TEST_CASE("widths are monotone in the slot index") {
    for (std::int64_t base = 1; base <= 300; base += 7) {
        for (int i = 1; i <= ScaleGrid::kMaxIndex; ++i) {
            CHECK(ScaleGrid::scaled_width(base, i) >= ScaleGrid::scaled_width(base, i - 1));
        }
    }
}

TEST_CASE("nev text round trip") {
    const Nev n{{0, 5, 30, 17}};
    CHECK(nev_from_string(to_string(n)) == n);
    CHECK(nev_from_string(" 1, 2 ,3") == Nev{{1, 2, 3}});
    CHECK_THROWS_AS(nev_from_string("1,,2"), ArchError);
    CHECK_THROWS_AS(nev_from_string("a,b"), ArchError);
    CHECK_THROWS_AS(nev_from_string(""), ArchError);
}

TEST_CASE("bundled templates match the independent cost oracle") {
    for (const char* name : {"mininet", "resnet50", "mobilenet_v2", "mobilenet_v1"}) {
        CAPTURE(name);
        const auto path = testutil::template_path(name);
        const auto t = ArchTemplate::load(path);
        const auto raw = read_json(path);
        Rng rng(42);
        for (int trial = 0; trial < 25; ++trial) {
            const Nev nev = trial == 0 ? t.full_width() : random_nev(t, rng);
            const auto oracle = oracle_cost(raw, nev.slots);
            CHECK(flops_of(t, nev) == oracle.macs);
            CHECK(params_of(t, nev) == oracle.params);
        }
    }
}

TEST_CASE("mininet full-width cost by hand") {
    const auto t = ArchTemplate::load(testutil::template_path("mininet"));
    // stem 3x3x1x16 @14x14, b1 dw 3x3x16 @7x7, pw 16x32 @7x7, b2 dw 3x3x32 @7x7, pw 32x64 @7x7,
    // b3 dw 3x3x64 @4x4, pw 64x64 @4x4, fc 64x10; plus one MAC per normalized output element
    const std::int64_t conv = 9 * 16 * 196 + 9 * 16 * 49 + 16 * 32 * 49 + 9 * 32 * 49 + 32 * 64 * 49 + 9 * 64 * 16 +
                              64 * 64 * 16 + 64 * 10;
    const std::int64_t norm = 16 * 196 + 16 * 49 + 32 * 49 + 32 * 49 + 64 * 49 + 64 * 16 + 64 * 16;
    CHECK(flops_of(t, t.full_width()) == conv + norm);
    CHECK(t.classes() == 10);
    CHECK(t.nev_length() == 4);
}

TEST_CASE("full-width FLOPs of the reference networks are close to their published counts") {
    const std::map<std::string, double> published{{"resnet50", 4110e6}, {"mobilenet_v2", 314e6}, {"mobilenet_v1", 569e6}};
    for (const auto& [name, ref] : published) {
        const auto t = ArchTemplate::load(testutil::template_path(name));
        const double f = static_cast<double>(flops_of(t, t.full_width()));
        CHECK_MESSAGE(std::abs(f - ref) / ref <= 0.03, name, " ", f);
    }
}

TEST_CASE("FLOPs are monotone in every slot") {
    const auto t = ArchTemplate::load(testutil::template_path("mobilenet_v2"));
    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        Nev n = random_nev(t, rng, {0, 29});
        const auto base = flops_of(t, n);
        const auto slot = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(n.size()) - 1));
        n[slot] += 1;
        CHECK(flops_of(t, n) >= base);
    }
}

TEST_CASE("template json round trip") {
    const auto t = ArchTemplate::load(testutil::template_path("resnet50"));
    const auto back = ArchTemplate::from_json_text(t.to_json_text());
    CHECK(back.layer_count() == t.layer_count());
    CHECK(back.nev_length() == t.nev_length());
    Rng rng(1);
    for (int i = 0; i < 5; ++i) {
        const auto n = random_nev(t, rng);
        CHECK(flops_of(back, n) == flops_of(t, n));
        CHECK(params_of(back, n) == params_of(t, n));
    }
}

TEST_CASE("residual template shares the slot across the shortcut") {
    const auto t = ArchTemplate::from_json_text(kTiny);
    const Nev n{{12}};
    CHECK(channels_of(t, n, 0) == channels_of(t, n, 1));
    CHECK(channels_of(t, n, 0) == ScaleGrid::scaled_width(8, 12));
    CHECK(flops_of(t, n) == oracle_cost(json::parse(kTiny), n.slots).macs);
}

TEST_CASE("template validation errors") {
    auto bad = [](auto&& mutate) {
        json j = json::parse(kTiny);
        mutate(j);
        return j.dump();
    };
    CHECK_THROWS_AS(ArchTemplate::from_json_text("{"), ArchError);
    CHECK_THROWS_AS(ArchTemplate::from_json_text(bad([](json& j) { j["extra"] = 1; })), ArchError);
    CHECK_THROWS_AS(ArchTemplate::from_json_text(bad([](json& j) { j["layers"][0]["colour"] = "red"; })), ArchError);
    CHECK_THROWS_AS(ArchTemplate::from_json_text(bad([](json& j) { j["layers"][0]["kind"] = "lstm"; })), ArchError);
    CHECK_THROWS_AS(ArchTemplate::from_json_text(bad([](json& j) { j["layers"][1]["name"] = "c1"; })), ArchError);
    CHECK_THROWS_AS(ArchTemplate::from_json_text(bad([](json& j) { j["layers"][1]["residual"] = "fc"; })), ArchError);
    // a prunable layer in no slot
    CHECK_THROWS_AS(ArchTemplate::from_json_text(bad([](json& j) { j["slots"][0]["layers"] = {"c1"}; })), ArchError);
    // residual partners in different slots
    CHECK_THROWS_AS(ArchTemplate::from_json_text(bad([](json& j) {
                        j["slots"] = {{{"name", "a"}, {"layers", {"c1"}}}, {{"name", "b"}, {"layers", {"c2"}}}};
                        j["shortcut_groups"] = json::array();
                    })),
                    ArchError);
    // declared spatial size disagrees with the arithmetic
    CHECK_THROWS_AS(ArchTemplate::from_json_text(bad([](json& j) { j["layers"][0]["spatial_out"] = {7, 7}; })), ArchError);
}

TEST_CASE("nev checks") {
    const auto t = ArchTemplate::load(testutil::template_path("mininet"));
    CHECK_NOTHROW(t.check(Nev{{0, 0, 0, 0}}));
    CHECK_THROWS_AS(t.check(Nev{{0, 0, 0}}), ArchError);
    CHECK_THROWS_AS(t.check(Nev{{0, 0, 0, 31}}), ArchError);
    CHECK_THROWS_AS(t.check(Nev{{-1, 0, 0, 0}}), ArchError);
}

TEST_CASE("random nevs stay inside the requested range") {
    const auto t = ArchTemplate::load(testutil::template_path("resnet50"));
    Rng rng(9);
    for (int i = 0; i < 200; ++i) {
        const auto n = random_nev(t, rng, {5, 9});
        for (int s : n.slots) {
            CHECK(s >= 5);
            CHECK(s <= 9);
        }
    }
    CHECK_THROWS_AS(IndexRange({5, 4}).validate(), ArchError);
    CHECK_THROWS_AS(IndexRange({0, 31}).validate(), ArchError);
}

TEST_CASE("grid hash is stable") {
    CHECK(ScaleGrid::hash() == ScaleGrid::hash());
    CHECK(ScaleGrid::hash() != 0);
}
