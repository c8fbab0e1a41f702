#include <fmt/format.h>
#include <json.hpp>

#include <cmath>
#include <fstream>
#include <sstream>

#include "metaprune/evosearch.hpp"

namespace metaprune::evosearch {

using nlohmann::json;

namespace {

json nullable(double v) {
    return std::isnan(v) ? json(nullptr) : json(v);
}

double from_nullable(const json& j) {
    return j.is_null() ? std::nan("") : j.get<double>();
}

json gene_json(const Gene& g) {
    json j;
    j["nev"] = g.nev.slots;
    j["flops"] = g.flops;
    j["accuracy"] = g.accuracy ? json(*g.accuracy) : json(nullptr);
    j["reward"] = g.reward ? json(*g.reward) : json(nullptr);
    return j;
}

Gene gene_from_json(const json& j) {
    Gene g;
    g.nev.slots = j.at("nev").get<std::vector<int>>();
    g.flops = j.at("flops").get<std::int64_t>();
    if (!j.at("accuracy").is_null()) g.accuracy = j["accuracy"].get<double>();
    if (!j.at("reward").is_null()) g.reward = j["reward"].get<double>();
    return g;
}

std::string num(double v) {
    return std::isnan(v) ? std::string("nan") : fmt::format("{:.17g}", v);
}

}  // namespace

std::string history_csv(const std::vector<EpochRecord>& history) {
    std::string out = "epoch,best_reward,mean_reward,best_accuracy,best_flops,unique_genes_evaluated\n";
    for (const auto& r : history) {
        out += fmt::format("{},{},{},{},{},{}\n", r.epoch, num(r.best_reward), num(r.mean_reward),
                           num(r.best_accuracy), r.best_flops, r.unique_genes_evaluated);
    }
    return out;
}

void write_history_csv(const std::vector<EpochRecord>& history, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error(fmt::format("cannot write '{}'", path.string()));
    out << "# schema_version=1\n" << history_csv(history);
}

std::string histogram_csv(const Histogram& h) {
    std::string out = "# schema_version=1\nbin_low,bin_high,count\n";
    for (std::size_t i = 0; i < h.counts.size(); ++i) {
        out += fmt::format("{:.17g},{:.17g},{}\n", h.bin_low[i], h.bin_high[i], h.counts[i]);
    }
    return out;
}

void save_state(const SearchState& s, const std::filesystem::path& path) {
    json j;
    j["schema_version"] = 1;
    j["epoch"] = s.epoch;
    j["seed"] = s.seed;
    j["stagnant_epochs"] = s.stagnant_epochs;
    j["finished"] = s.finished;
    j["candidates"] = json::array();
    for (const auto& g : s.candidates) j["candidates"].push_back(gene_json(g));
    j["elites"] = json::array();
    for (const auto& g : s.elites) j["elites"].push_back(gene_json(g));
    j["evaluated"] = json::array();
    for (const auto& n : s.evaluated) j["evaluated"].push_back(n.slots);
    j["history"] = json::array();
    for (const auto& r : s.history) {
        j["history"].push_back({{"epoch", r.epoch},
                                {"best_reward", nullable(r.best_reward)},
                                {"mean_reward", nullable(r.mean_reward)},
                                {"best_accuracy", nullable(r.best_accuracy)},
                                {"best_flops", r.best_flops},
                                {"unique_genes_evaluated", r.unique_genes_evaluated},
                                {"archive_best_reward", nullable(r.archive_best_reward)}});
    }
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp);
        if (!out) throw std::runtime_error(fmt::format("cannot write '{}'", tmp));
        out << j.dump(1) << '\n';
    }
    std::filesystem::rename(tmp, path);
}

SearchState load_state(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error(fmt::format("cannot open search state '{}'", path.string()));
    std::stringstream ss;
    ss << in.rdbuf();
    try {
        const json j = json::parse(ss.str());
        if (j.at("schema_version").get<int>() != 1) throw std::runtime_error("unsupported search state version");
        SearchState s;
        s.epoch = j.at("epoch").get<int>();
        s.seed = j.at("seed").get<std::uint64_t>();
        s.stagnant_epochs = j.at("stagnant_epochs").get<int>();
        s.finished = j.at("finished").get<bool>();
        for (const auto& g : j.at("candidates")) s.candidates.push_back(gene_from_json(g));
        for (const auto& g : j.at("elites")) s.elites.push_back(gene_from_json(g));
        for (const auto& n : j.at("evaluated")) s.evaluated.insert(Nev{n.get<std::vector<int>>()});
        for (const auto& r : j.at("history")) {
            EpochRecord e;
            e.epoch = r.at("epoch").get<int>();
            e.best_reward = from_nullable(r.at("best_reward"));
            e.mean_reward = from_nullable(r.at("mean_reward"));
            e.best_accuracy = from_nullable(r.at("best_accuracy"));
            e.best_flops = r.at("best_flops").get<std::int64_t>();
            e.unique_genes_evaluated = r.at("unique_genes_evaluated").get<std::int64_t>();
            e.archive_best_reward = from_nullable(r.at("archive_best_reward"));
            s.history.push_back(e);
        }
        return s;
    } catch (const json::exception& e) {
        throw std::runtime_error(fmt::format("malformed search state '{}': {}", path.string(), e.what()));
    }
}

}  // namespace metaprune::evosearch
