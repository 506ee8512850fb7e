#include "fedlppa/image.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace fedlppa {

size_t Image8::count(uint8_t val) const {
    return static_cast<size_t>(std::count(v.begin(), v.end(), val));
}

namespace {
void read_pgm_header(std::ifstream& f, const std::filesystem::path& path,
                     int& w, int& h, int& maxval) {
    std::string magic;
    f >> magic;
    if (magic != "P5") throw std::runtime_error("not a P5 PGM: " + path.string());
    auto skip_comments = [&f]() {
        f >> std::ws;
        while (f.peek() == '#') {
            std::string line;
            std::getline(f, line);
            f >> std::ws;
        }
    };
    skip_comments(); f >> w;
    skip_comments(); f >> h;
    skip_comments(); f >> maxval;
    f.get();  // single whitespace before payload
    if (!f || w <= 0 || h <= 0) throw std::runtime_error("bad PGM header: " + path.string());
}
}  // namespace

void write_pgm8(const std::filesystem::path& path, const Image8& img) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path.string());
    f << "P5\n" << img.w << " " << img.h << "\n255\n";
    f.write(reinterpret_cast<const char*>(img.v.data()), static_cast<std::streamsize>(img.v.size()));
    if (!f) throw std::runtime_error("write failed: " + path.string());
}

Image8 read_pgm8(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path.string());
    int w, h, maxval;
    read_pgm_header(f, path, w, h, maxval);
    if (maxval != 255) throw std::runtime_error("expected 8-bit PGM: " + path.string());
    Image8 img(h, w);
    f.read(reinterpret_cast<char*>(img.v.data()), static_cast<std::streamsize>(img.v.size()));
    if (!f) throw std::runtime_error("truncated PGM: " + path.string());
    return img;
}

void write_pgm16(const std::filesystem::path& path, const ImageF& img) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path.string());
    f << "P5\n" << img.w << " " << img.h << "\n65535\n";
    std::vector<uint8_t> buf(img.v.size() * 2);
    for (size_t i = 0; i < img.v.size(); ++i) {
        const float c = std::clamp(img.v[i], 0.0f, 1.0f);
        const uint16_t q = static_cast<uint16_t>(c * 65535.0f + 0.5f);
        buf[2 * i] = static_cast<uint8_t>(q >> 8);  // big-endian per PGM spec
        buf[2 * i + 1] = static_cast<uint8_t>(q & 0xff);
    }
    f.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!f) throw std::runtime_error("write failed: " + path.string());
}

ImageF read_pgm16(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path.string());
    int w, h, maxval;
    read_pgm_header(f, path, w, h, maxval);
    if (maxval != 65535) throw std::runtime_error("expected 16-bit PGM: " + path.string());
    ImageF img(h, w);
    std::vector<uint8_t> buf(img.v.size() * 2);
    f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!f) throw std::runtime_error("truncated PGM: " + path.string());
    for (size_t i = 0; i < img.v.size(); ++i) {
        const uint16_t q = static_cast<uint16_t>((buf[2 * i] << 8) | buf[2 * i + 1]);
        img.v[i] = static_cast<float>(q) / 65535.0f;
    }
    return img;
}

}  // namespace fedlppa
