#include "metaprune/tensorcore/checkpoint.hpp"

#include <fmt/format.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace metaprune::tensorcore {

namespace {

constexpr std::uint32_t kMagic = 0x4B43504D;  // "MPCK" read as little-endian

static_assert(std::endian::native == std::endian::little, "checkpoint code assumes a little-endian host");

template <typename T>
void put(std::string& out, T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.append(buf, sizeof(T));
}

class Reader {
public:
    explicit Reader(const std::string& s) : s_(s) {}

    template <typename T>
    T get(const char* what) {
        need(sizeof(T), what);
        T v;
        std::memcpy(&v, s_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }

    std::string bytes(std::size_t n, const char* what) {
        need(n, what);
        std::string r = s_.substr(pos_, n);
        pos_ += n;
        return r;
    }

    bool done() const { return pos_ == s_.size(); }

private:
    void need(std::size_t n, const char* what) {
        if (s_.size() - pos_ < n) throw CheckpointError(fmt::format("checkpoint truncated while reading {}", what));
    }

    const std::string& s_;
    std::size_t pos_ = 0;
};

}  // namespace

const Tensor& Checkpoint::get(const std::string& name) const {
    for (const auto& [n, t] : tensors) {
        if (n == name) return t;
    }
    throw CheckpointError(fmt::format("checkpoint has no tensor '{}'", name));
}

bool Checkpoint::contains(const std::string& name) const {
    for (const auto& entry : tensors) {
        if (entry.first == name) return true;
    }
    return false;
}

std::string encode_checkpoint(const Checkpoint& ck) {
    std::string out;
    put<std::uint32_t>(out, kMagic);
    put<std::uint32_t>(out, kCheckpointVersion);
    put<std::uint64_t>(out, ck.metadata.size());
    out += ck.metadata;
    put<std::uint64_t>(out, ck.tensors.size());
    for (const auto& [name, t] : ck.tensors) {
        put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
        out += name;
        put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
        for (auto d : t.shape()) put<std::uint64_t>(out, static_cast<std::uint64_t>(d));
        for (real v : t.values()) put<std::uint64_t>(out, std::bit_cast<std::uint64_t>(static_cast<double>(v)));
    }
    return out;
}

Checkpoint decode_checkpoint(const std::string& bytes) {
    Reader r(bytes);
    if (r.get<std::uint32_t>("magic") != kMagic) throw CheckpointError("not a checkpoint file (bad magic)");
    const auto version = r.get<std::uint32_t>("version");
    if (version != kCheckpointVersion) {
        throw CheckpointError(fmt::format("unsupported checkpoint version {} (expected {})", version, kCheckpointVersion));
    }
    Checkpoint ck;
    ck.metadata = r.bytes(r.get<std::uint64_t>("metadata length"), "metadata");
    const auto count = r.get<std::uint64_t>("tensor count");
    for (std::uint64_t i = 0; i < count; ++i) {
        std::string name = r.bytes(r.get<std::uint32_t>("name length"), "name");
        const auto rank = r.get<std::uint32_t>("rank");
        if (rank > 8) throw CheckpointError(fmt::format("tensor '{}' has implausible rank {}", name, rank));
        Shape shape;
        for (std::uint32_t d = 0; d < rank; ++d) shape.push_back(static_cast<std::int64_t>(r.get<std::uint64_t>("dims")));
        const auto n = numel(shape);
        if (static_cast<std::uint64_t>(n) > bytes.size() / 8) throw CheckpointError("checkpoint truncated while reading values");
        std::vector<real> values(static_cast<std::size_t>(n));
        for (auto& v : values) v = static_cast<real>(std::bit_cast<double>(r.get<std::uint64_t>("values")));
        ck.tensors.emplace_back(std::move(name), Tensor(std::move(shape), std::move(values)));
    }
    if (!r.done()) throw CheckpointError("trailing bytes after checkpoint payload");
    return ck;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw CheckpointError(fmt::format("cannot write {}", tmp.string()));
        const auto bytes = encode_checkpoint(ck);
        f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!f) throw CheckpointError(fmt::format("write failed for {}", tmp.string()));
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw CheckpointError(fmt::format("cannot open checkpoint {}", path.string()));
    std::ostringstream ss;
    ss << f.rdbuf();
    try {
        return decode_checkpoint(ss.str());
    } catch (const CheckpointError& e) {
        throw CheckpointError(fmt::format("{}: {}", path.string(), e.what()));
    }
}

}  // namespace metaprune::tensorcore
