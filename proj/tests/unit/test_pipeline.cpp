#include <doctest.h>

#include <cmath>
#include <fstream>

#include "metaprune/pipeline/pipeline.hpp"
#include "metaprune/tensorcore/checkpoint.hpp"
#include "paths.hpp"

using namespace metaprune;
using namespace metaprune::pipeline;
namespace fs = std::filesystem;
namespace tc = metaprune::tensorcore;
using tc::real;

namespace {

const arch::ArchTemplate& mininet() {
    static const auto t = arch::ArchTemplate::load(testutil::template_path("mininet"));
    return t;
}

SyntheticOptions small_synthetic(std::size_t train = 300, std::size_t val = 100) {
    SyntheticOptions o;
    o.seed = 5;
    o.train_size = train;
    o.validation_size = val;
    return o;
}

const Dataset& small_data() {
    static const Dataset d = normalize(make_synthetic(small_synthetic()));
    return d;
}

RunOptions small_run(const fs::path& out) {
    RunOptions o;
    o.seed = 3;
    o.out_dir = out;
    o.hidden = 8;
    o.meta.epochs = 2;
    o.meta.batch_size = 32;
    o.meta.schedule.initial_lr = 0.1;
    o.meta.progress_samples = 50;
    o.meta.calibration_samples = 64;
    o.search.population = 6;
    o.search.elite_archive = 6;
    o.search.breeders = 3;
    o.search.k_elite = 1;
    o.search.mutants = 2;
    o.search.crossovers = 2;
    o.search.epochs = 2;
    o.retrain.epochs = 2;
    o.retrain.batch_size = 32;
    o.retrain.schedule = {tc::Schedule::Kind::MilestoneDecay, 0.1, 0.1, {}};
    o.retrain.calibration_samples = 128;
    return o;
}

RetrainOptions small_retrain(int epochs) {
    RetrainOptions o;
    o.epochs = epochs;
    o.batch_size = 32;
    o.seed = 4;
    o.calibration_samples = 128;
    o.schedule = {tc::Schedule::Kind::MilestoneDecay, 0.1, 0.1, {}};
    return o;
}

std::vector<std::vector<real>> param_values(const hypernet::Model& m) {
    std::vector<std::vector<real>> out;
    for (const auto& p : m.parameters()) out.emplace_back(p.value().values().begin(), p.value().values().end());
    return out;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), {}};
}

}  // namespace

TEST_CASE("synthetic data is deterministic per sample") {
    const auto a = make_synthetic(small_synthetic(100, 20));
    const auto b = make_synthetic(small_synthetic(100, 20));
    CHECK(a.train.pixels == b.train.pixels);
    CHECK(a.validation.labels == b.validation.labels);
    const auto longer = make_synthetic(small_synthetic(150, 20));
    CHECK(std::equal(a.train.pixels.begin(), a.train.pixels.end(), longer.train.pixels.begin()));
    auto other = small_synthetic(100, 20);
    other.seed = 6;
    CHECK(make_synthetic(other).train.pixels != a.train.pixels);
    CHECK(a.classes == 10);
    std::vector<int> counts(10, 0);
    for (int y : a.train.labels) ++counts[static_cast<std::size_t>(y)];
    for (int c : counts) CHECK(c == 10);
}

TEST_CASE("normalization uses train statistics") {
    const auto& d = small_data();
    REQUIRE(d.channel_mean.size() == 1);
    double sum = 0, sq = 0;
    for (auto v : d.train.images) {
        sum += v;
        sq += v * v;
    }
    const double n = static_cast<double>(d.train.images.size());
    CHECK(std::abs(sum / n) < 1e-9);
    CHECK(sq / n == doctest::Approx(1.0).epsilon(1e-9));
    d.train.check();
    d.validation.check();
}

TEST_CASE("idx export and ingest are bit-identical") {
    testutil::TempDir dir("idx");
    const auto raw = make_synthetic(small_synthetic(50, 10));
    write_idx(raw, dir.path());
    const auto back = read_idx(dir.path());
    CHECK(back.train.pixels == raw.train.pixels);
    CHECK(back.train.labels == raw.train.labels);
    CHECK(back.validation.pixels == raw.validation.pixels);
    CHECK(back.classes == raw.classes);
    const auto a = normalize(raw);
    const auto b = ingest(dir.path(), DataFormat::Idx);
    CHECK(a.train.images == b.train.images);
    CHECK(a.validation.images == b.validation.images);
    CHECK(data_format_from_string(to_string(DataFormat::Synthetic)) == DataFormat::Synthetic);
}

TEST_CASE("malformed idx files are rejected") {
    testutil::TempDir dir("idxbad");
    const auto raw = make_synthetic(small_synthetic(20, 5));
    write_idx(raw, dir.path());
    const auto images = dir.path() / "train-images.idx";
    const auto labels = dir.path() / "train-labels.idx";
    const auto good = slurp(images);

    auto write = [](const fs::path& p, const std::string& bytes) { std::ofstream(p, std::ios::binary) << bytes; };
    SUBCASE("byte-swapped magic") {
        auto swapped = good;
        std::reverse(swapped.begin(), swapped.begin() + 4);
        write(images, swapped);
        try {
            read_idx(dir.path());
            FAIL("expected DataError");
        } catch (const DataError& e) {
            CHECK(std::string(e.what()).find("byte") != std::string::npos);
        }
    }
    SUBCASE("truncated payload") {
        write(images, good.substr(0, good.size() - 10));
        CHECK_THROWS_AS(read_idx(dir.path()), DataError);
    }
    SUBCASE("image and label counts disagree") {
        RawSplit s = raw.train;
        s.labels.pop_back();
        s.pixels.resize(s.labels.size() * 28 * 28);
        write_idx_split(s, dir.path() / "x-images.idx", labels);
        CHECK_THROWS_AS(read_idx(dir.path()), DataError);
    }
    SUBCASE("missing directory") {
        CHECK_THROWS_AS(read_idx(dir.path() / "nope"), DataError);
    }
}

TEST_CASE("error rates against label oracles") {
    // perfect and label-blind classifiers scored through the same top-k routine
    const int n = 1000, k = 10;
    Rng rng(7);
    std::vector<int> labels(n);
    for (auto& y : labels) y = static_cast<int>(rng.uniform_int(0, k - 1));
    tc::Tensor perfect({n, k});
    tc::Tensor blind({n, k});
    std::vector<int> shuffled = labels;
    rng.shuffle(shuffled);
    for (int i = 0; i < n; ++i) {
        perfect[static_cast<std::size_t>(i * k + labels[static_cast<std::size_t>(i)])] = 1.0;
        blind[static_cast<std::size_t>(i * k + shuffled[static_cast<std::size_t>(i)])] = 1.0;
    }
    CHECK(hypernet::topk_accuracy(perfect, labels, 1) == 1.0);
    const double acc = hypernet::topk_accuracy(blind, labels, 1);
    CHECK(std::abs(acc - 0.1) < 3 * std::sqrt(0.09 / n));
}

TEST_CASE("retraining") {
    const auto& d = small_data();
    const auto nev = Nev{{12, 12, 12, 12}};

    SUBCASE("zero epochs score at chance on unlearnable labels") {
        Split noisy = d.validation;
        Rng rng(1);
        for (auto& y : noisy.labels) y = static_cast<int>(rng.uniform_int(0, 9));
        const auto big = [&] {
            Split s = d.train;
            for (auto& y : s.labels) y = static_cast<int>(rng.uniform_int(0, 9));
            return s;
        }();
        const auto m = retrain(mininet(), nev, big, small_retrain(0));
        CHECK(m.epochs_done == 0);
        const auto met = metrics(mininet(), m, big);
        const double sigma = std::sqrt(0.09 / static_cast<double>(big.size()));
        CHECK(std::abs((1 - met.top1_error) - 0.1) < 3 * sigma);
    }
    SUBCASE("deterministic and learns") {
        const auto a = retrain(mininet(), nev, d.train, small_retrain(2));
        const auto b = retrain(mininet(), nev, d.train, small_retrain(2));
        CHECK(param_values(a.model) == param_values(b.model));
        REQUIRE(a.log.size() == 2);
        CHECK(a.log[1].mean_loss < a.log[0].mean_loss);
        const auto met = metrics(mininet(), a, d.validation);
        CHECK(met.top5_error <= met.top1_error);
        CHECK(met.top_k == 5);
        CHECK(met.flops == arch::flops_of(mininet(), nev));
        CHECK(met.params == arch::params_of(mininet(), nev));
    }
    SUBCASE("interrupted retraining resumes to the same weights") {
        testutil::TempDir dir("rt");
        const auto straight = retrain(mininet(), nev, d.train, small_retrain(3));
        auto o = small_retrain(3);
        o.checkpoint = dir.path() / "r.ckpt";
        const auto part = retrain(mininet(), nev, d.train, o, [](const TrainLog& e) { return e.epoch < 1; });
        CHECK(part.epochs_done == 1);
        const auto rest = retrain(mininet(), nev, d.train, o);
        CHECK(rest.epochs_done == 3);
        CHECK(param_values(rest.model) == param_values(straight.model));
    }
    SUBCASE("divergence is detected") {
        testutil::TempDir dir("div");
        auto o = small_retrain(3);
        o.schedule.initial_lr = 1e200;
        o.checkpoint = dir.path() / "d.ckpt";
        try {
            retrain(mininet(), nev, d.train, o);
            FAIL("expected TrainingDiverged");
        } catch (const TrainingDiverged& e) {
            CHECK(std::string(e.what()).find("checkpoint") != std::string::npos);
        }
    }
}

TEST_CASE("full width keeps every parameter") {
    const auto& d = small_data();
    const auto m = retrain(mininet(), mininet().full_width(), d.train, small_retrain(0));
    const auto met = metrics(mininet(), m, d.validation);
    CHECK(met.param_ratio == doctest::Approx(100.0));
    CHECK(met.flops == arch::flops_of(mininet(), mininet().full_width()));
}

TEST_CASE("report json round trip") {
    RunReport r;
    r.template_name = "mininet";
    r.seed = 9;
    r.best = Nev{{1, 2, 3, 4}};
    r.search_reward = 1.25;
    r.top1_error = std::nan("");
    r.flops = 123;
    r.timings.search_s = 2.0;
    const auto back = report_from_json(report_to_json(r));
    CHECK(back.best == r.best);
    CHECK(back.search_reward == r.search_reward);
    CHECK(std::isnan(back.top1_error));
    CHECK(back.timings.search_s == 2.0);
    CHECK(report_to_json(r, false).find("timings") == std::string::npos);
    CHECK(report_to_json(back) == report_to_json(r));
}

TEST_CASE("phases run in isolation and end to end") {
    const auto& d = small_data();
    testutil::TempDir dir("run");
    auto o = resolve(mininet(), small_run(dir.path() / "a"));
    const auto full = arch::flops_of(mininet(), mininet().full_width());
    CHECK(o.reward.baseline_flops == static_cast<double>(full));
    CHECK(o.search.max_flops <= 0.7 * full);
    CHECK(o.meta.seed != o.search.seed);

    const auto h = run_meta_train(mininet(), d, o);
    CHECK(h.epochs_trained() == 2);
    const auto sum = h.checksum();
    const auto loaded = hypernet::HyperNet::from_checkpoint(mininet(), tc::load_checkpoint(o.out_dir / "hypernet.ckpt"));
    CHECK(loaded.checksum() == sum);
    CHECK_THROWS_AS(run_search_phase(loaded, d, o), std::invalid_argument);
    CHECK(std::isnan(known_baseline(o)));
    const double ba = run_baseline_phase(mininet(), d, o);
    CHECK(ba > 0.0);
    CHECK(ba < 1.0);
    CHECK(known_baseline(o) == ba);
    fs::remove(o.out_dir / "baseline.ckpt");
    CHECK(run_baseline_phase(mininet(), d, o) == ba);  // read back, not retrained
    o.reward.baseline_accuracy = ba;
    const auto found = run_search_phase(loaded, d, o);
    CHECK(loaded.checksum() == sum);
    CHECK(o.search.in_window(found.best.flops));
    CHECK(fs::exists(o.out_dir / "best_gene.json"));
    std::size_t unique = 0;
    const auto best = read_best_gene(o.out_dir / "best_gene.json", &unique);
    CHECK(best.nev == found.best.nev);
    CHECK(unique == found.state.evaluated.size());

    // retraining needs only the best gene
    fs::remove(o.out_dir / "hypernet.ckpt");
    const auto r = run_retrain_phase(mininet(), best.nev, d, o);
    CHECK(r.best == best.nev);
    CHECK(r.flops == arch::flops_of(mininet(), best.nev));
    CHECK(r.full_flops == full);
    CHECK(r.top5_error <= r.top1_error);
    CHECK(r.param_ratio < 100.0);

    // the same options through run_all agree with the phases run one by one
    const auto all = run_all(mininet(), d, small_run(dir.path() / "b"));
    CHECK(all.best == r.best);
    CHECK(all.top1_error == r.top1_error);
    CHECK(all.top5_error == r.top5_error);
    CHECK(all.params == r.params);
    CHECK(all.unique_genes == unique);
    CHECK(all.search_reward == *best.reward);
    CHECK(all.baseline_accuracy == ba);
    CHECK(report_to_json(read_report(dir.path() / "b" / "report.json"), false) == report_to_json(all, false));
}

TEST_CASE("interrupted runs resume to the same report") {
    const auto& d = small_data();
    testutil::TempDir dir("resume");
    const auto straight = run_all(mininet(), d, small_run(dir.path() / "straight"));
    const auto out = dir.path() / "resumed";
    for (const std::string phase : {"meta-train", "baseline", "search", "retrain"}) {
        CHECK_THROWS_AS(run_all(mininet(), d, small_run(out),
                                [&](std::string_view p, int epoch) { return p == phase && epoch == 1; }),
                        Interrupted);
    }
    const auto resumed = run_all(mininet(), d, small_run(out));
    CHECK(report_to_json(resumed, false) == report_to_json(straight, false));
    CHECK(slurp(out / "search_history.csv") == slurp(dir.path() / "straight" / "search_history.csv"));
    CHECK(slurp(out / "meta_train_log.csv") == slurp(dir.path() / "straight" / "meta_train_log.csv"));
}

TEST_CASE("full width beats the random-NEV average after shared training") {
    // soft property: majority of three seeds
    const auto data = normalize(make_synthetic(small_synthetic(1000, 300)));
    int wins = 0;
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        hypernet::HyperNet h(mininet(), seed, 16);
        hypernet::MetaTrainOptions o;
        o.epochs = 4;
        o.seed = seed;
        o.schedule.initial_lr = 0.5;
        o.calibration_samples = 128;
        hypernet::meta_train(h, data.train, nullptr, o);
        const hypernet::EvalOptions eo{128, 500};
        const double full = hypernet::evaluate_nev(h, mininet().full_width(), data.train, data.validation, eo);
        Rng rng(seed);
        double mean = 0;
        for (int i = 0; i < 20; ++i) {
            mean += hypernet::evaluate_nev(h, arch::random_nev(mininet(), rng), data.train, data.validation, eo) / 20;
        }
        wins += full >= mean;
    }
    CHECK(wins >= 2);
}
