#include "fedlppa/tensor_io.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace fedlppa {

namespace {
constexpr char kMagic[4] = {'F', 'L', 'T', '1'};
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("save_tensor: cannot open " + path.string());
    f.write(kMagic, 4);
    const uint32_t nd = static_cast<uint32_t>(t.ndim());
    f.write(reinterpret_cast<const char*>(&nd), 4);
    for (int i = 0; i < t.ndim(); ++i) {
        const uint32_t d = static_cast<uint32_t>(t.dim(i));
        f.write(reinterpret_cast<const char*>(&d), 4);
    }
    f.write(reinterpret_cast<const char*>(t.data()),
            static_cast<std::streamsize>(t.vec().size() * sizeof(float)));
    if (!f) throw std::runtime_error("save_tensor: write failed for " + path.string());
}

Tensor load_tensor(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("load_tensor: cannot open " + path.string());
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, kMagic, 4) != 0)
        throw std::runtime_error("load_tensor: bad magic in " + path.string());
    uint32_t nd = 0;
    f.read(reinterpret_cast<char*>(&nd), 4);
    if (!f || nd > 8) throw std::runtime_error("load_tensor: bad ndim in " + path.string());
    Shape shape(nd);
    for (uint32_t i = 0; i < nd; ++i) {
        uint32_t d = 0;
        f.read(reinterpret_cast<char*>(&d), 4);
        shape[i] = static_cast<int>(d);
    }
    Tensor t(shape);
    f.read(reinterpret_cast<char*>(t.data()),
           static_cast<std::streamsize>(t.vec().size() * sizeof(float)));
    if (!f) throw std::runtime_error("load_tensor: truncated payload in " + path.string());
    return t;
}

}  // namespace fedlppa
