#include "hglm/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "hglm/error.hpp"

namespace hglm {

namespace {

constexpr char kMagic[4] = {'H', 'G', 'L', 'M'};
constexpr std::uint32_t kMaxString = 1u << 24;
constexpr std::uint32_t kMaxRank = 8;

void put_u32(std::ostream& os, std::uint32_t v) {
    char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
    os.write(b, 4);
}

void put_u64(std::ostream& os, std::uint64_t v) {
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
    os.write(b, 8);
}

void put_string(std::ostream& os, const std::string& s) {
    put_u32(os, static_cast<std::uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

void put_tensor(std::ostream& os, const std::string& name, const Shape& shape, std::span<const double> data) {
    put_string(os, name);
    put_u32(os, static_cast<std::uint32_t>(shape.size()));
    for (std::size_t d : shape) put_u64(os, d);
    for (double v : data) put_u64(os, std::bit_cast<std::uint64_t>(v));
}

class Reader {
public:
    explicit Reader(std::istream& is) : is_(is) {}

    void bytes(char* dst, std::size_t n, const char* what) {
        is_.read(dst, static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(is_.gcount()) != n) {
            throw CheckpointError(CheckpointError::Kind::truncated, std::string("checkpoint truncated while reading ") + what);
        }
    }

    std::uint32_t u32(const char* what) {
        unsigned char b[4];
        bytes(reinterpret_cast<char*>(b), 4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
        return v;
    }

    std::uint64_t u64(const char* what) {
        unsigned char b[8];
        bytes(reinterpret_cast<char*>(b), 8, what);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
        return v;
    }

    std::string string(const char* what) {
        const std::uint32_t n = u32(what);
        if (n > kMaxString) {
            throw CheckpointError(CheckpointError::Kind::truncated, std::string("implausible length for ") + what);
        }
        std::string s(n, '\0');
        bytes(s.data(), n, what);
        return s;
    }

private:
    std::istream& is_;
};

struct RawTensor {
    std::string name;
    Shape shape;
    std::vector<double> data;
};

RawTensor read_tensor(Reader& r) {
    RawTensor t;
    t.name = r.string("tensor name");
    const std::uint32_t rank = r.u32("tensor rank");
    if (rank == 0 || rank > kMaxRank) {
        throw CheckpointError(CheckpointError::Kind::truncated, "tensor " + t.name + " has invalid rank " + std::to_string(rank));
    }
    std::uint64_t numel = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
        const std::uint64_t d = r.u64("tensor dims");
        if (d == 0 || d > (1ULL << 40)) {
            throw CheckpointError(CheckpointError::Kind::truncated, "tensor " + t.name + " has invalid dimension");
        }
        t.shape.push_back(static_cast<std::size_t>(d));
        numel *= d;
    }
    if (numel > (1ULL << 32)) {
        throw CheckpointError(CheckpointError::Kind::truncated, "tensor " + t.name + " is implausibly large");
    }
    t.data.resize(static_cast<std::size_t>(numel));
    for (double& v : t.data) v = std::bit_cast<double>(r.u64("tensor payload"));
    return t;
}

std::vector<RawTensor> read_table(Reader& r) {
    const std::uint32_t count = r.u32("tensor count");
    std::vector<RawTensor> out;
    for (std::uint32_t i = 0; i < count; ++i) out.push_back(read_tensor(r));
    return out;
}

[[noreturn]] void shape_error(const std::string& msg) {
    throw CheckpointError(CheckpointError::Kind::shape_mismatch, msg);
}

void check_table(const std::vector<RawTensor>& table, const ModelConfig& cfg, const std::string& prefix) {
    const auto expected = parameter_shapes(cfg);
    for (std::size_t i = 0; i < expected.size(); ++i) {
        const std::string want = prefix + expected[i].first;
        if (i >= table.size()) shape_error("checkpoint is missing tensor " + want);
        if (table[i].name != want) shape_error("tensor " + std::to_string(i) + " is " + table[i].name + ", expected " + want);
        if (table[i].shape != expected[i].second) {
            shape_error("tensor " + want + " has shape " + shape_to_string(table[i].shape) + ", expected " +
                        shape_to_string(expected[i].second));
        }
    }
    if (table.size() != expected.size()) {
        shape_error("checkpoint holds " + std::to_string(table.size()) + " tensors, expected " +
                    std::to_string(expected.size()));
    }
}

LanguageModel model_from_table(const ModelConfig& cfg, std::vector<RawTensor>& table) {
    // Build a correctly-shaped model, then overwrite every parameter in order.
    LanguageModel m = init_weights(cfg, 0);
    auto params = m.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto dst = params[i].tensor.mutable_data();
        std::copy(table[i].data.begin(), table[i].data.end(), dst.begin());
    }
    return m;
}

}  // namespace

void write_checkpoint(std::ostream& os, const LanguageModel& model, const OptimizerState* optimizer,
                      std::int64_t tokens_seen) {
    os.write(kMagic, 4);
    put_u32(os, kCheckpointVersion);
    put_string(os, to_config_text(model.config));
    const auto params = model.parameters();
    put_u32(os, static_cast<std::uint32_t>(params.size()));
    for (const auto& p : params) put_tensor(os, p.name, p.tensor.shape(), p.tensor.data());
    put_u64(os, static_cast<std::uint64_t>(tokens_seen));
    const char has_opt = optimizer ? 1 : 0;
    os.write(&has_opt, 1);
    if (optimizer) {
        if (optimizer->m.size() != params.size() || optimizer->v.size() != params.size()) {
            throw ValidationError("optimizer state does not match the model being saved");
        }
        put_u64(os, static_cast<std::uint64_t>(optimizer->step));
        put_u32(os, static_cast<std::uint32_t>(2 * params.size()));
        for (std::size_t i = 0; i < params.size(); ++i) put_tensor(os, "m." + params[i].name, params[i].tensor.shape(), optimizer->m[i]);
        for (std::size_t i = 0; i < params.size(); ++i) put_tensor(os, "v." + params[i].name, params[i].tensor.shape(), optimizer->v[i]);
    }
    if (!os) throw IoError("failed to write checkpoint");
}

Checkpoint read_checkpoint(std::istream& is) {
    Reader r(is);
    char magic[4] = {};
    is.read(magic, 4);
    if (is.gcount() != 4 || std::memcmp(magic, kMagic, 4) != 0) {
        throw CheckpointError(CheckpointError::Kind::bad_magic, "not a checkpoint: missing HGLM header");
    }
    const std::uint32_t version = r.u32("version");
    if (version != kCheckpointVersion) {
        throw CheckpointError(CheckpointError::Kind::version_mismatch,
                              "checkpoint version " + std::to_string(version) + " is not supported (expected " +
                                  std::to_string(kCheckpointVersion) + ")");
    }
    const std::string text = r.string("config text");
    ModelConfig cfg;
    try {
        for (const auto& s : parse_settings(text, "checkpoint config")) {
            if (!apply_setting(cfg, s.key, s.value)) throw ValidationError("unknown key " + s.key);
        }
        cfg.validate();
    } catch (const ValidationError& e) {
        throw CheckpointError(CheckpointError::Kind::config_mismatch, std::string("invalid stored config: ") + e.what());
    }
    auto table = read_table(r);
    check_table(table, cfg, "");

    Checkpoint ck;
    ck.model = model_from_table(cfg, table);
    ck.tokens_seen = static_cast<std::int64_t>(r.u64("tokens_seen"));
    char has_opt = 0;
    r.bytes(&has_opt, 1, "optimizer flag");
    if (has_opt) {
        OptimizerState st;
        st.step = static_cast<std::int64_t>(r.u64("optimizer step"));
        auto opt_table = read_table(r);
        const std::size_t n = ck.model.parameters().size();
        if (opt_table.size() != 2 * n) {
            shape_error("optimizer table holds " + std::to_string(opt_table.size()) + " tensors, expected " +
                        std::to_string(2 * n));
        }
        std::vector<RawTensor> ms(std::make_move_iterator(opt_table.begin()),
                                  std::make_move_iterator(opt_table.begin() + static_cast<std::ptrdiff_t>(n)));
        std::vector<RawTensor> vs(std::make_move_iterator(opt_table.begin() + static_cast<std::ptrdiff_t>(n)),
                                  std::make_move_iterator(opt_table.end()));
        check_table(ms, cfg, "m.");
        check_table(vs, cfg, "v.");
        for (auto& t : ms) st.m.push_back(std::move(t.data));
        for (auto& t : vs) st.v.push_back(std::move(t.data));
        ck.optimizer = std::move(st);
    }
    return ck;
}

void save_checkpoint(const std::string& path, const LanguageModel& model, const OptimizerState* optimizer,
                     std::int64_t tokens_seen) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open " + path + " for writing");
    write_checkpoint(os, model, optimizer, tokens_seen);
    os.flush();
    if (!os) throw IoError("failed to write checkpoint " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open checkpoint " + path);
    return read_checkpoint(is);
}

Checkpoint load_checkpoint(const std::string& path, const ModelConfig& expected) {
    Checkpoint ck = load_checkpoint(path);
    const auto want = parameter_shapes(expected);
    const auto params = ck.model.parameters();
    for (std::size_t i = 0; i < want.size(); ++i) {
        if (i >= params.size()) shape_error("checkpoint lacks tensor " + want[i].first + " required by the config");
        if (params[i].name != want[i].first || params[i].tensor.shape() != want[i].second) {
            shape_error("tensor " + want[i].first + " " + shape_to_string(want[i].second) + " does not match checkpoint tensor " +
                        params[i].name + " " + shape_to_string(params[i].tensor.shape()));
        }
    }
    if (params.size() != want.size()) {
        shape_error("checkpoint tensor " + params[want.size()].name + " is not part of the requested config");
    }
    if (!(ck.model.config == expected)) {
        throw CheckpointError(CheckpointError::Kind::config_mismatch, "checkpoint config differs from the requested config");
    }
    return ck;
}

}  // namespace hglm
