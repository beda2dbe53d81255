#include "hdae/checkpoint.hpp"

#include "hdae/hash.hpp"

#include <bit>
#include <fstream>
#include <stdexcept>

namespace hdae {

namespace {

constexpr char kMagic[8] = {'H', 'D', 'A', 'E', 'C', 'K', 'P', 'T'};

template <typename T>
void put(std::ostream& out, T v) {
    static_assert(std::endian::native == std::endian::little);
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) {
        throw std::runtime_error("checkpoint truncated");
    }
    return v;
}

std::string get_string(std::istream& in, uint64_t len) {
    if (len > (uint64_t{1} << 32)) {
        throw std::runtime_error("checkpoint corrupt: oversized string");
    }
    std::string s(len, '\0');
    in.read(s.data(), static_cast<std::streamsize>(len));
    if (!in) {
        throw std::runtime_error("checkpoint truncated");
    }
    return s;
}

} // namespace

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw std::runtime_error("cannot write " + tmp.string());
        }
        out.write(kMagic, sizeof(kMagic));
        put<uint32_t>(out, kCheckpointVersion);
        const auto cfg = ckpt.config.dump();
        put<uint64_t>(out, cfg.size());
        out.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
        const auto digest = sha256_hex(cfg);
        out.write(digest.data(), static_cast<std::streamsize>(digest.size()));
        put<uint64_t>(out, ckpt.tensors.size());
        for (const auto& [name, tensor] : ckpt.tensors) {
            auto t = tensor.detach().to(torch::kCPU).contiguous();
            uint8_t dtype = 0;
            if (t.scalar_type() == torch::kFloat64) {
                dtype = 1;
            } else if (t.scalar_type() != torch::kFloat32) {
                t = t.to(torch::kFloat32);
            }
            put<uint64_t>(out, name.size());
            out.write(name.data(), static_cast<std::streamsize>(name.size()));
            put<uint8_t>(out, dtype);
            put<uint32_t>(out, static_cast<uint32_t>(t.dim()));
            for (auto s : t.sizes()) {
                put<int64_t>(out, s);
            }
            out.write(static_cast<const char*>(t.data_ptr()), static_cast<std::streamsize>(t.nbytes()));
        }
        if (!out) {
            throw std::runtime_error("failed writing " + tmp.string());
        }
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot read checkpoint " + path.string());
    }
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::string_view(magic, 8) != std::string_view(kMagic, 8)) {
        throw std::runtime_error("not a checkpoint: " + path.string());
    }
    const auto version = get<uint32_t>(in);
    if (version != kCheckpointVersion) {
        throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
    }
    const auto cfg = get_string(in, get<uint64_t>(in));
    const auto digest = get_string(in, 64);
    if (sha256_hex(cfg) != digest) {
        throw std::runtime_error("checkpoint config hash mismatch in " + path.string());
    }
    Checkpoint ckpt;
    ckpt.config = nlohmann::json::parse(cfg);
    const auto count = get<uint64_t>(in);
    for (uint64_t i = 0; i < count; ++i) {
        auto name = get_string(in, get<uint64_t>(in));
        const auto dtype = get<uint8_t>(in);
        const auto ndim = get<uint32_t>(in);
        if (dtype > 1 || ndim > 8) {
            throw std::runtime_error("checkpoint corrupt: bad tensor header for " + name);
        }
        std::vector<int64_t> sizes(ndim);
        for (auto& s : sizes) {
            s = get<int64_t>(in);
        }
        auto t = torch::empty(sizes, dtype == 1 ? torch::kFloat64 : torch::kFloat32);
        in.read(static_cast<char*>(t.data_ptr()), static_cast<std::streamsize>(t.nbytes()));
        if (!in) {
            throw std::runtime_error("checkpoint truncated in tensor " + name);
        }
        ckpt.tensors.emplace(std::move(name), std::move(t));
    }
    return ckpt;
}

void put_module(Checkpoint& ckpt, const std::string& prefix, const torch::nn::Module& m) {
    for (const auto& item : m.named_parameters()) {
        ckpt.tensors[prefix + item.key()] = item.value();
    }
    for (const auto& item : m.named_buffers()) {
        ckpt.tensors[prefix + item.key()] = item.value();
    }
}

void take_module(const Checkpoint& ckpt, const std::string& prefix, torch::nn::Module& m) {
    torch::NoGradGuard no_grad;
    auto assign = [&](const std::string& key, torch::Tensor& dst) {
        auto it = ckpt.tensors.find(prefix + key);
        if (it == ckpt.tensors.end()) {
            throw std::runtime_error("checkpoint missing tensor " + prefix + key);
        }
        if (!it->second.sizes().equals(dst.sizes())) {
            throw std::runtime_error("checkpoint tensor " + prefix + key + " has the wrong shape");
        }
        dst.copy_(it->second);
    };
    for (auto& item : m.named_parameters()) {
        assign(item.key(), item.value());
    }
    for (auto& item : m.named_buffers()) {
        assign(item.key(), item.value());
    }
}

void save_model(const std::filesystem::path& path, DiffusionAutoencoder& model, DiffusionAutoencoder* ema,
                const nlohmann::json& train_config, int64_t step) {
    Checkpoint ckpt;
    ckpt.config = {{"model", model->config()}, {"train", train_config}, {"step", step}, {"has_ema", ema != nullptr}};
    put_module(ckpt, "model.", *model);
    if (ema != nullptr) {
        put_module(ckpt, "ema.", **ema);
    }
    write_checkpoint(path, ckpt);
}

ModelBundle load_model(const std::filesystem::path& path, bool prefer_ema) {
    const auto ckpt = read_checkpoint(path);
    ModelBundle b;
    b.model_config = ckpt.config.at("model").get<ModelConfig>();
    b.train_config = ckpt.config.value("train", nlohmann::json::object());
    b.step = ckpt.config.value("step", int64_t{0});
    b.model = DiffusionAutoencoder(b.model_config);
    const bool use_ema = prefer_ema && ckpt.config.value("has_ema", false);
    take_module(ckpt, use_ema ? "ema." : "model.", *b.model);
    b.model->eval();
    b.hash = sha256_file(path);
    return b;
}

} // namespace hdae
