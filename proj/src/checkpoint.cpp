#include "flowct/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>

#include "flowct/error.hpp"

namespace flowct::train {

static_assert(std::endian::native == std::endian::little, "checkpoint encoding assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'F', 'L', 'O', 'W', 'C', 'K', 'P', 'T'};

class Writer {
public:
    explicit Writer(std::ostream& os) : os_(os) {}

    template <typename V>
    void pod(const V& v) {
        os_.write(reinterpret_cast<const char*>(&v), sizeof(V));
    }
    void bytes(const void* p, std::size_t n) { os_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }
    void string(const std::string& s) {
        pod(static_cast<std::uint32_t>(s.size()));
        bytes(s.data(), s.size());
    }
    template <typename T>
    void array(const std::vector<T>& v) {
        bytes(v.data(), v.size() * sizeof(T));
    }

private:
    std::ostream& os_;
};

class Reader {
public:
    Reader(std::istream& is, std::filesystem::path path) : is_(is), path_(std::move(path)) {}

    void bytes(void* p, std::size_t n, const char* what) {
        is_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(is_.gcount()) != n) {
            throw DataError("checkpoint " + path_.string() + ": truncated while reading " + what);
        }
    }
    template <typename V>
    V pod(const char* what) {
        V v;
        bytes(&v, sizeof(V), what);
        return v;
    }
    std::string string(const char* what, std::size_t limit) {
        const auto n = pod<std::uint32_t>(what);
        if (n > limit) throw DataError("checkpoint " + path_.string() + ": implausible length for " + what);
        std::string s(n, '\0');
        bytes(s.data(), n, what);
        return s;
    }
    void tag(const char (&expect)[5]) {
        char got[4];
        bytes(got, 4, expect);
        if (std::memcmp(got, expect, 4) != 0) {
            throw DataError("checkpoint " + path_.string() + ": expected section " + expect);
        }
    }
    const std::filesystem::path& path() const { return path_; }

private:
    std::istream& is_;
    std::filesystem::path path_;
};

template <typename T>
constexpr std::uint8_t dtype_code() {
    return static_cast<std::uint8_t>(sizeof(T));
}

} // namespace

template <typename T>
Checkpoint<T> make_checkpoint(const nlohmann::json& config, const net::VelocityNet<T>& net,
                              const OptimizerState<T>& opt, std::uint64_t seed, std::int64_t step) {
    Checkpoint<T> c;
    c.config = config;
    for (const auto& p : net.parameters()) {
        const auto v = p.tensor.values();
        c.params.push_back({p.name, p.tensor.shape(), std::vector<T>(v.begin(), v.end())});
    }
    c.optimizer = opt;
    c.seed = seed;
    c.step = step;
    return c;
}

template <typename T>
void save_checkpoint(const Checkpoint<T>& ckpt, const std::filesystem::path& path) {
    if (ckpt.optimizer.m.size() != ckpt.params.size() || ckpt.optimizer.v.size() != ckpt.params.size()) {
        throw ShapeError("checkpoint: optimizer state does not match the parameter list");
    }
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw DataError("cannot write checkpoint " + tmp.string());
        Writer w(os);
        w.bytes(kMagic, sizeof kMagic);
        w.pod(kCheckpointVersion);
        const std::string cfg = ckpt.config.dump();
        w.pod(static_cast<std::uint64_t>(cfg.size()));
        w.bytes(cfg.data(), cfg.size());
        w.pod(static_cast<std::uint32_t>(ckpt.params.size()));
        for (const auto& p : ckpt.params) {
            w.string(p.name);
            w.pod(static_cast<std::uint32_t>(p.shape.size()));
            for (auto d : p.shape) w.pod(static_cast<std::int64_t>(d));
            w.pod(dtype_code<T>());
            w.array(p.values);
        }
        w.bytes("OPTM", 4);
        w.pod(static_cast<std::int64_t>(ckpt.optimizer.step));
        w.pod(ckpt.optimizer.hyper.beta1);
        w.pod(ckpt.optimizer.hyper.beta2);
        w.pod(ckpt.optimizer.hyper.eps);
        for (std::size_t i = 0; i < ckpt.params.size(); ++i) {
            w.array(ckpt.optimizer.m[i]);
            w.array(ckpt.optimizer.v[i]);
        }
        w.bytes("RNGS", 4);
        w.pod(ckpt.seed);
        w.pod(static_cast<std::int64_t>(ckpt.step));
        w.bytes("END!", 4);
        if (!os) throw DataError("failed writing checkpoint " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open checkpoint " + path.string());
    Reader r(is, path);
    char magic[8];
    r.bytes(magic, sizeof magic, "magic");
    if (std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw DataError(path.string() + " is not a checkpoint file");
    const auto version = r.pod<std::uint32_t>("version");
    if (version != kCheckpointVersion) {
        throw DataError("checkpoint " + path.string() + ": unsupported version " + std::to_string(version));
    }
    Checkpoint<T> c;
    const auto cfg_len = r.pod<std::uint64_t>("config length");
    if (cfg_len > (1u << 24)) throw DataError("checkpoint " + path.string() + ": implausible config length");
    std::string cfg(cfg_len, '\0');
    r.bytes(cfg.data(), cfg_len, "config");
    try {
        c.config = nlohmann::json::parse(cfg);
    } catch (const nlohmann::json::exception& e) {
        throw DataError("checkpoint " + path.string() + ": config is not valid JSON: " + e.what());
    }

    const auto n_params = r.pod<std::uint32_t>("parameter count");
    for (std::uint32_t i = 0; i < n_params; ++i) {
        NamedArray<T> p;
        p.name = r.string("parameter name", 4096);
        const auto rank = r.pod<std::uint32_t>("rank");
        if (rank > 8) throw DataError("checkpoint " + path.string() + ": implausible rank for " + p.name);
        for (std::uint32_t d = 0; d < rank; ++d) {
            const auto dim = r.pod<std::int64_t>("shape");
            if (dim < 0 || dim > (1LL << 32)) throw DataError("checkpoint " + path.string() + ": bad shape for " + p.name);
            p.shape.push_back(dim);
        }
        const auto dtype = r.pod<std::uint8_t>("dtype");
        if (dtype != dtype_code<T>()) {
            throw ConfigError("checkpoint " + path.string() + " stores " + std::to_string(8 * dtype) +
                              "-bit parameters, expected " + std::to_string(8 * sizeof(T)));
        }
        p.values.resize(static_cast<std::size_t>(shape_numel(p.shape)));
        r.bytes(p.values.data(), p.values.size() * sizeof(T), p.name.c_str());
        c.params.push_back(std::move(p));
    }

    r.tag("OPTM");
    c.optimizer.step = r.pod<std::int64_t>("optimizer step");
    c.optimizer.hyper.beta1 = r.pod<double>("beta1");
    c.optimizer.hyper.beta2 = r.pod<double>("beta2");
    c.optimizer.hyper.eps = r.pod<double>("eps");
    for (const auto& p : c.params) {
        std::vector<T> m(p.values.size()), v(p.values.size());
        r.bytes(m.data(), m.size() * sizeof(T), "first moment");
        r.bytes(v.data(), v.size() * sizeof(T), "second moment");
        c.optimizer.m.push_back(std::move(m));
        c.optimizer.v.push_back(std::move(v));
    }
    r.tag("RNGS");
    c.seed = r.pod<std::uint64_t>("seed");
    c.step = r.pod<std::int64_t>("step");
    r.tag("END!");
    return c;
}

template <typename T>
void restore_parameters(net::VelocityNet<T>& net, const Checkpoint<T>& ckpt) {
    auto& params = net.parameters();
    if (params.size() != ckpt.params.size()) {
        throw ConfigError("checkpoint has " + std::to_string(ckpt.params.size()) + " parameters, network has " +
                          std::to_string(params.size()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& src = ckpt.params[i];
        if (params[i].name != src.name || params[i].tensor.shape() != src.shape) {
            throw ConfigError("checkpoint parameter " + src.name + " " + shape_str(src.shape) +
                              " does not match network parameter " + params[i].name + " " +
                              shape_str(params[i].tensor.shape()));
        }
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto dst = params[i].tensor.mutable_values();
        std::copy(ckpt.params[i].values.begin(), ckpt.params[i].values.end(), dst.begin());
    }
}

#define FLOWCT_INSTANTIATE(T)                                                                                         \
    template Checkpoint<T> make_checkpoint<T>(const nlohmann::json&, const net::VelocityNet<T>&,                     \
                                              const OptimizerState<T>&, std::uint64_t, std::int64_t);                  \
    template void save_checkpoint<T>(const Checkpoint<T>&, const std::filesystem::path&);                            \
    template Checkpoint<T> load_checkpoint<T>(const std::filesystem::path&);                                          \
    template void restore_parameters<T>(net::VelocityNet<T>&, const Checkpoint<T>&);

FLOWCT_INSTANTIATE(float)
FLOWCT_INSTANTIATE(double)
#undef FLOWCT_INSTANTIATE

} // namespace flowct::train
