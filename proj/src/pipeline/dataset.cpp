#include "metaprune/pipeline/dataset.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>

#include "metaprune/rng.hpp"

namespace metaprune::pipeline {

namespace {

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;

struct Stroke {
    double x0, y0, x1, y1;
};

double segment_dist2(double px, double py, const Stroke& s) {
    const double dx = s.x1 - s.x0;
    const double dy = s.y1 - s.y0;
    const double len2 = dx * dx + dy * dy;
    double u = len2 > 0 ? ((px - s.x0) * dx + (py - s.y0) * dy) / len2 : 0.0;
    u = std::clamp(u, 0.0, 1.0);
    const double ex = s.x0 + u * dx - px;
    const double ey = s.y0 + u * dy - py;
    return ex * ex + ey * ey;
}

std::vector<std::vector<Stroke>> class_prototypes(const SyntheticOptions& o) {
    std::vector<std::vector<Stroke>> protos;
    const double lo = o.size * 0.2;
    const double hi = o.size * 0.8;
    for (int c = 0; c < o.classes; ++c) {
        Rng rng(derive_seed(o.seed, "synthetic-class", static_cast<std::uint64_t>(c)));
        std::vector<Stroke> strokes;
        for (int k = 0; k < 3; ++k) {
            strokes.push_back({rng.uniform(lo, hi), rng.uniform(lo, hi), rng.uniform(lo, hi), rng.uniform(lo, hi)});
        }
        protos.push_back(std::move(strokes));
    }
    return protos;
}

void render(const std::vector<Stroke>& proto, int label, const SyntheticOptions& o, Rng& rng, std::uint8_t* out) {
    std::vector<Stroke> strokes;
    const double sx = static_cast<double>(rng.uniform_int(-o.max_shift, o.max_shift));
    const double sy = static_cast<double>(rng.uniform_int(-o.max_shift, o.max_shift));
    for (const auto& s : proto) {
        strokes.push_back({s.x0 + sx + rng.normal() * o.jitter, s.y0 + sy + rng.normal() * o.jitter,
                           s.x1 + sx + rng.normal() * o.jitter, s.y1 + sy + rng.normal() * o.jitter});
    }
    const double m = o.size * 0.1;
    for (int k = 0; k < o.distractors; ++k) {
        strokes.push_back({rng.uniform(m, o.size - m), rng.uniform(m, o.size - m), rng.uniform(m, o.size - m),
                           rng.uniform(m, o.size - m)});
    }
    const double intensity = rng.uniform(0.6, 1.0);
    const double sigma = rng.uniform(0.9, 1.6);
    const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
    (void)label;
    for (int y = 0; y < o.size; ++y) {
        for (int x = 0; x < o.size; ++x) {
            double best = 1e30;
            for (const auto& s : strokes) best = std::min(best, segment_dist2(x + 0.5, y + 0.5, s));
            double v = 255.0 * intensity * std::exp(-best * inv2s2) + rng.normal() * o.noise;
            out[y * o.size + x] = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
        }
    }
}

RawSplit synth_split(const SyntheticOptions& o, const std::vector<std::vector<Stroke>>& protos, std::size_t n,
                     std::string_view stream) {
    RawSplit s;
    s.channels = 1;
    s.height = o.size;
    s.width = o.size;
    const std::size_t px = static_cast<std::size_t>(o.size) * static_cast<std::size_t>(o.size);
    s.pixels.resize(n * px);
    s.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const int label = static_cast<int>(i % static_cast<std::size_t>(o.classes));
        Rng rng(derive_seed(o.seed, stream, i));
        render(protos[static_cast<std::size_t>(label)], label, o, rng, s.pixels.data() + i * px);
        s.labels[i] = label;
    }
    return s;
}

void put_be32(std::ofstream& f, std::uint32_t v) {
    const std::array<char, 4> b{static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8),
                                static_cast<char>(v)};
    f.write(b.data(), 4);
}

std::uint32_t get_be32(std::ifstream& f, const std::filesystem::path& p) {
    std::array<unsigned char, 4> b{};
    if (!f.read(reinterpret_cast<char*>(b.data()), 4)) {
        throw DataError(fmt::format("{}: truncated IDX header", p.string()));
    }
    return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) | std::uint32_t{b[3]};
}

std::uint32_t byteswap32(std::uint32_t v) {
    return ((v & 0xFFu) << 24) | ((v & 0xFF00u) << 8) | ((v >> 8) & 0xFF00u) | (v >> 24);
}

void check_magic(std::uint32_t got, std::uint32_t want, const std::filesystem::path& p) {
    if (got == want) return;
    if (byteswap32(got) == want) {
        throw DataError(fmt::format("{}: IDX magic is byte-swapped (0x{:08x}); IDX headers are big-endian", p.string(), got));
    }
    throw DataError(fmt::format("{}: bad IDX magic 0x{:08x}, expected 0x{:08x}", p.string(), got, want));
}

Split to_split(const RawSplit& raw, int classes, const std::vector<double>& mean, const std::vector<double>& sd) {
    Split s;
    s.channels = raw.channels;
    s.height = raw.height;
    s.width = raw.width;
    s.classes = classes;
    s.labels = raw.labels;
    s.images.resize(raw.pixels.size());
    const std::size_t plane = static_cast<std::size_t>(raw.height) * static_cast<std::size_t>(raw.width);
    for (std::size_t i = 0; i < raw.pixels.size(); ++i) {
        const std::size_t c = (i / plane) % static_cast<std::size_t>(raw.channels);
        s.images[i] = static_cast<tensorcore::real>((raw.pixels[i] - mean[c]) / sd[c]);
    }
    s.check();
    return s;
}

}  // namespace

RawDataset make_synthetic(const SyntheticOptions& o) {
    if (o.classes < 2) throw DataError("synthetic dataset needs at least 2 classes");
    if (o.size < 8) throw DataError("synthetic images must be at least 8 pixels wide");
    if (o.train_size == 0 || o.validation_size == 0) throw DataError("synthetic splits must be non-empty");
    const auto protos = class_prototypes(o);
    RawDataset d;
    d.classes = o.classes;
    d.train = synth_split(o, protos, o.train_size, "synthetic-train");
    d.validation = synth_split(o, protos, o.validation_size, "synthetic-validation");
    return d;
}

Dataset normalize(const RawDataset& raw) {
    const auto& tr = raw.train;
    if (tr.size() == 0) throw DataError("train split is empty");
    if (raw.validation.channels != tr.channels || raw.validation.height != tr.height || raw.validation.width != tr.width) {
        throw DataError("train and validation images differ in shape");
    }
    const std::size_t plane = static_cast<std::size_t>(tr.height) * static_cast<std::size_t>(tr.width);
    std::vector<double> sum(static_cast<std::size_t>(tr.channels), 0.0);
    std::vector<double> sum2(sum.size(), 0.0);
    for (std::size_t i = 0; i < tr.pixels.size(); ++i) {
        const std::size_t c = (i / plane) % sum.size();
        sum[c] += tr.pixels[i];
        sum2[c] += static_cast<double>(tr.pixels[i]) * tr.pixels[i];
    }
    Dataset d;
    d.classes = raw.classes;
    const double n = static_cast<double>(tr.size() * plane);
    for (std::size_t c = 0; c < sum.size(); ++c) {
        const double mu = sum[c] / n;
        const double var = std::max(sum2[c] / n - mu * mu, 0.0);
        d.channel_mean.push_back(mu);
        d.channel_std.push_back(var > 0 ? std::sqrt(var) : 1.0);
    }
    d.train = to_split(tr, raw.classes, d.channel_mean, d.channel_std);
    d.validation = to_split(raw.validation, raw.classes, d.channel_mean, d.channel_std);
    return d;
}

DataFormat data_format_from_string(const std::string& s) {
    if (s == "idx") return DataFormat::Idx;
    if (s == "synthetic") return DataFormat::Synthetic;
    throw DataError(fmt::format("unknown dataset format '{}' (expected idx or synthetic)", s));
}

std::string to_string(DataFormat f) {
    return f == DataFormat::Idx ? "idx" : "synthetic";
}

RawSplit read_idx_split(const std::filesystem::path& images, const std::filesystem::path& labels) {
    std::ifstream fi(images, std::ios::binary);
    if (!fi) throw DataError(fmt::format("cannot open {}", images.string()));
    check_magic(get_be32(fi, images), kImageMagic, images);
    const auto n = get_be32(fi, images);
    const auto h = get_be32(fi, images);
    const auto w = get_be32(fi, images);
    if (h == 0 || w == 0 || h > 4096 || w > 4096) {
        throw DataError(fmt::format("{}: implausible image size {}x{}", images.string(), h, w));
    }
    RawSplit s;
    s.height = static_cast<int>(h);
    s.width = static_cast<int>(w);
    s.pixels.resize(static_cast<std::size_t>(n) * h * w);
    if (!fi.read(reinterpret_cast<char*>(s.pixels.data()), static_cast<std::streamsize>(s.pixels.size()))) {
        throw DataError(fmt::format("{}: truncated, header promises {} images", images.string(), n));
    }

    std::ifstream fl(labels, std::ios::binary);
    if (!fl) throw DataError(fmt::format("cannot open {}", labels.string()));
    check_magic(get_be32(fl, labels), kLabelMagic, labels);
    const auto nl = get_be32(fl, labels);
    if (nl != n) throw DataError(fmt::format("{} has {} labels but {} has {} images", labels.string(), nl, images.string(), n));
    std::vector<std::uint8_t> lab(nl);
    if (!fl.read(reinterpret_cast<char*>(lab.data()), static_cast<std::streamsize>(lab.size()))) {
        throw DataError(fmt::format("{}: truncated, header promises {} labels", labels.string(), nl));
    }
    s.labels.assign(lab.begin(), lab.end());
    return s;
}

void write_idx_split(const RawSplit& s, const std::filesystem::path& images, const std::filesystem::path& labels) {
    if (s.channels != 1) throw DataError("IDX export supports single-channel images only");
    std::ofstream fi(images, std::ios::binary | std::ios::trunc);
    if (!fi) throw DataError(fmt::format("cannot write {}", images.string()));
    put_be32(fi, kImageMagic);
    put_be32(fi, static_cast<std::uint32_t>(s.size()));
    put_be32(fi, static_cast<std::uint32_t>(s.height));
    put_be32(fi, static_cast<std::uint32_t>(s.width));
    fi.write(reinterpret_cast<const char*>(s.pixels.data()), static_cast<std::streamsize>(s.pixels.size()));
    std::ofstream fl(labels, std::ios::binary | std::ios::trunc);
    if (!fl) throw DataError(fmt::format("cannot write {}", labels.string()));
    put_be32(fl, kLabelMagic);
    put_be32(fl, static_cast<std::uint32_t>(s.size()));
    for (int y : s.labels) {
        if (y < 0 || y > 255) throw DataError(fmt::format("label {} does not fit an IDX byte", y));
        fl.put(static_cast<char>(y));
    }
    if (!fi || !fl) throw DataError("IDX write failed");
}

RawDataset read_idx(const std::filesystem::path& dir) {
    RawDataset d;
    d.train = read_idx_split(dir / "train-images.idx", dir / "train-labels.idx");
    d.validation = read_idx_split(dir / "val-images.idx", dir / "val-labels.idx");
    int hi = -1;
    for (const auto* s : {&d.train, &d.validation}) {
        for (int y : s->labels) hi = std::max(hi, y);
    }
    d.classes = hi + 1;
    if (d.classes < 2) throw DataError(fmt::format("{}: need at least two classes", dir.string()));
    return d;
}

void write_idx(const RawDataset& raw, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    write_idx_split(raw.train, dir / "train-images.idx", dir / "train-labels.idx");
    write_idx_split(raw.validation, dir / "val-images.idx", dir / "val-labels.idx");
}

Dataset ingest(const std::filesystem::path& path, DataFormat format, const SyntheticOptions& synthetic) {
    if (format == DataFormat::Synthetic) return normalize(make_synthetic(synthetic));
    return normalize(read_idx(path));
}

}  // namespace metaprune::pipeline
