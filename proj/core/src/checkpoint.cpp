#include "heartbert/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "heartbert/errors.hpp"

namespace heartbert {

namespace {

constexpr char kMagic[6] = {'H', 'B', 'C', 'K', '0', '1'};
constexpr uint8_t kDtypeF32 = 0;

template <typename T>
void write_le(std::ostream& out, T value) {
    char buf[sizeof(T)];
    std::memcpy(buf, &value, sizeof(T));
    out.write(buf, sizeof(T));
}

template <typename T>
T read_le(std::istream& in, const std::string& path) {
    char buf[sizeof(T)];
    in.read(buf, sizeof(T));
    if (in.gcount() != static_cast<std::streamsize>(sizeof(T))) {
        fail(ErrorKind::Format, path + ": truncated checkpoint");
    }
    T value;
    std::memcpy(&value, buf, sizeof(T));
    return value;
}

}  // namespace

const Tensor<float>* Checkpoint::find(const std::string& name) const {
    for (const auto& [n, t] : tensors) {
        if (n == name) return &t;
    }
    return nullptr;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::Parameter, "cannot open " + path + " for writing");
    out.write(kMagic, sizeof(kMagic));
    write_le<uint32_t>(out, static_cast<uint32_t>(ckpt.tensors.size()));
    for (const auto& [name, tensor] : ckpt.tensors) {
        write_le<uint32_t>(out, static_cast<uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_le<uint8_t>(out, kDtypeF32);
        write_le<uint32_t>(out, static_cast<uint32_t>(tensor.ndim()));
        for (size_t d = 0; d < tensor.ndim(); ++d) write_le<uint64_t>(out, tensor.dim(d));
    }
    for (const auto& [name, tensor] : ckpt.tensors) {
        (void)name;
        out.write(reinterpret_cast<const char*>(tensor.data()),
                  static_cast<std::streamsize>(tensor.numel() * sizeof(float)));
    }
    if (!out) fail(ErrorKind::Parameter, "write failed for " + path);

    std::ofstream side(path + ".config", std::ios::trunc);
    if (!side) fail(ErrorKind::Parameter, "cannot open " + path + ".config for writing");
    for (const auto& [key, value] : ckpt.meta) side << key << " = " << value << "\n";
    if (!side) fail(ErrorKind::Parameter, "write failed for " + path + ".config");
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::MissingArtifact, "checkpoint not found: " + path);
    char magic[sizeof(kMagic)];
    in.read(magic, sizeof(magic));
    if (in.gcount() != static_cast<std::streamsize>(sizeof(magic)) ||
        std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        fail(ErrorKind::Format, path + ": not a checkpoint (bad magic)");
    }

    Checkpoint ckpt;
    const auto count = read_le<uint32_t>(in, path);
    std::vector<std::vector<size_t>> shapes;
    std::vector<std::string> names;
    for (uint32_t i = 0; i < count; ++i) {
        const auto name_len = read_le<uint32_t>(in, path);
        if (name_len == 0 || name_len > 4096) fail(ErrorKind::Format, path + ": bad tensor name length");
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        if (in.gcount() != static_cast<std::streamsize>(name_len)) {
            fail(ErrorKind::Format, path + ": truncated checkpoint");
        }
        const auto dtype = read_le<uint8_t>(in, path);
        if (dtype != kDtypeF32) fail(ErrorKind::Format, path + ": unsupported dtype");
        const auto ndim = read_le<uint32_t>(in, path);
        if (ndim == 0 || ndim > 8) fail(ErrorKind::Format, path + ": bad tensor rank");
        std::vector<size_t> shape(ndim);
        for (uint32_t d = 0; d < ndim; ++d) {
            const auto dim = read_le<uint64_t>(in, path);
            if (dim == 0) fail(ErrorKind::Format, path + ": zero-sized dimension");
            shape[d] = static_cast<size_t>(dim);
        }
        names.push_back(std::move(name));
        shapes.push_back(std::move(shape));
    }
    for (uint32_t i = 0; i < count; ++i) {
        Tensor<float> t(shapes[i]);
        in.read(reinterpret_cast<char*>(t.data()),
                static_cast<std::streamsize>(t.numel() * sizeof(float)));
        if (in.gcount() != static_cast<std::streamsize>(t.numel() * sizeof(float))) {
            fail(ErrorKind::Format, path + ": truncated tensor payload");
        }
        ckpt.tensors.emplace_back(names[i], std::move(t));
    }

    std::ifstream side(path + ".config");
    if (!side) fail(ErrorKind::MissingArtifact, "checkpoint sidecar not found: " + path + ".config");
    std::string line;
    while (std::getline(side, line)) {
        if (line.empty() || line[0] == '#') continue;
        auto eq = line.find(" = ");
        if (eq == std::string::npos) fail(ErrorKind::Format, path + ".config: expected 'key = value'");
        ckpt.meta[line.substr(0, eq)] = line.substr(eq + 3);
    }
    return ckpt;
}

ModelConfig config_from_meta(const std::map<std::string, std::string>& meta) {
    std::map<std::string, std::string> kv;
    for (const auto& [key, value] : meta) {
        if (key.rfind("model.", 0) == 0) kv[key.substr(6)] = value;
    }
    if (kv.empty()) fail(ErrorKind::Format, "checkpoint sidecar has no model.* entries");
    return ModelConfig::from_kv(kv);
}

void save_encoder_checkpoint(const EncoderModel<float>& model, const std::string& path,
                             const std::map<std::string, std::string>& extra_meta) {
    Checkpoint ckpt;
    for (size_t i = 0; i < model.params.size(); ++i) {
        ckpt.tensors.emplace_back(model.params.names()[i], model.params.value(i));
    }
    for (const auto& [key, value] : model.config.to_kv()) ckpt.meta["model." + key] = value;
    for (const auto& [key, value] : extra_meta) ckpt.meta[key] = value;
    save_checkpoint(ckpt, path);
}

EncoderModel<float> encoder_from_checkpoint(const Checkpoint& ckpt) {
    ModelConfig config = config_from_meta(ckpt.meta);
    ParamStore<float> params;
    for (const auto& [name, tensor] : ckpt.tensors) {
        if (name.rfind("head.", 0) == 0) continue;  // hybrid checkpoints append head tensors
        params.add(name, tensor.shape()) = tensor;
    }
    return EncoderModel<float>::from_params(config, std::move(params));
}

EncoderModel<float> load_encoder_checkpoint(const std::string& path) {
    return encoder_from_checkpoint(load_checkpoint(path));
}

}  // namespace heartbert
