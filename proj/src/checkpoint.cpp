#include "simreglab/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <fstream>
#include <stdexcept>

static_assert(std::endian::native == std::endian::little, "checkpoint io assumes a little-endian host");

namespace simreg {

namespace {
constexpr const char* kMagic = "SIMREGCKPT v1";

template <class T>
void write_pod(std::ofstream& f, T v) {
    f.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::ifstream& f) {
    T v{};
    f.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!f) throw std::runtime_error("checkpoint: truncated file");
    return v;
}
}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open '" + path + "' for writing");
    f << kMagic << "\n";
    for (const auto& [k, v] : ckpt.header) f << k << " = " << v << "\n";
    f << "%tensors " << ckpt.tensors.size() << "\n";
    for (const auto& [name, t] : ckpt.tensors) {
        write_pod<uint32_t>(f, static_cast<uint32_t>(name.size()));
        f.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_pod<uint32_t>(f, static_cast<uint32_t>(t.shape.size()));
        for (int64_t e : t.shape) write_pod<int64_t>(f, e);
        f.write(reinterpret_cast<const char*>(t.data.data()),
                static_cast<std::streamsize>(t.data.size() * sizeof(double)));
    }
    if (!f) throw std::runtime_error("failed writing checkpoint '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open checkpoint '" + path + "'");
    std::string line;
    if (!std::getline(f, line) || line != kMagic) throw std::runtime_error("'" + path + "' is not a checkpoint");
    Checkpoint ckpt;
    size_t count = 0;
    while (std::getline(f, line)) {
        if (line.rfind("%tensors ", 0) == 0) {
            count = static_cast<size_t>(std::stoull(line.substr(9)));
            break;
        }
        const auto eq = line.find(" = ");
        if (eq == std::string::npos) throw std::runtime_error("checkpoint: malformed header line '" + line + "'");
        ckpt.header.emplace_back(line.substr(0, eq), line.substr(eq + 3));
    }
    for (size_t i = 0; i < count; ++i) {
        const auto name_len = read_pod<uint32_t>(f);
        std::string name(name_len, '\0');
        f.read(name.data(), name_len);
        const auto rank = read_pod<uint32_t>(f);
        std::vector<int64_t> shape(rank);
        for (auto& e : shape) e = read_pod<int64_t>(f);
        Tensor t(shape);
        f.read(reinterpret_cast<char*>(t.data.data()),
               static_cast<std::streamsize>(t.data.size() * sizeof(double)));
        if (!f) throw std::runtime_error("checkpoint: truncated tensor record '" + name + "'");
        ckpt.tensors[name] = std::move(t);
    }
    return ckpt;
}

}  // namespace simreg
