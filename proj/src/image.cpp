#include "inst4d/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "inst4d/errors.hpp"

namespace inst4d {

void Image::clamp01() {
    for (double& v : data) v = std::clamp(v, 0.0, 1.0);
}

uint8_t quantize8(double v) {
    v = std::clamp(v, 0.0, 1.0);
    return static_cast<uint8_t>(std::lround(v * 255.0));
}

Image quantized(const Image& img) {
    Image out = img;
    for (double& v : out.data) v = quantize8(v) / 255.0;
    return out;
}

namespace {

// Reads a single ASCII token, skipping whitespace and '#' comments.
std::string next_token(std::istream& in) {
    std::string tok;
    int c;
    while ((c = in.get()) != EOF) {
        if (c == '#') {
            while ((c = in.get()) != EOF && c != '\n') {}
        } else if (!std::isspace(c)) {
            tok.push_back(static_cast<char>(c));
            while ((c = in.peek()) != EOF && !std::isspace(c)) {
                tok.push_back(static_cast<char>(in.get()));
            }
            return tok;
        }
    }
    throw FormatError("pnm: unexpected end of header");
}

void read_header(std::istream& in, const char* magic, int& width, int& height) {
    if (next_token(in) != magic) throw FormatError(std::string("pnm: expected ") + magic);
    width = std::stoi(next_token(in));
    height = std::stoi(next_token(in));
    int maxval = std::stoi(next_token(in));
    if (maxval != 255) throw FormatError("pnm: only 8-bit maxval 255 supported");
    in.get();  // single whitespace before binary payload
    if (width <= 0 || height <= 0) throw FormatError("pnm: bad dimensions");
}

}  // namespace

void save_ppm(const Image& img, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_ppm: cannot open " + path.string());
    out << "P6\n" << img.width << " " << img.height << "\n255\n";
    std::vector<uint8_t> row(static_cast<size_t>(img.width) * 3);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            for (int c = 0; c < 3; ++c) {
                row[static_cast<size_t>(x) * 3 + c] = quantize8(img.at(y, x, c));
            }
        }
        out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
    }
}

Image load_ppm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_ppm: cannot open " + path.string());
    int w, h;
    read_header(in, "P6", w, h);
    Image img(h, w);
    std::vector<uint8_t> raw(static_cast<size_t>(w) * h * 3);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (in.gcount() != static_cast<std::streamsize>(raw.size())) {
        throw FormatError("load_ppm: truncated payload in " + path.string());
    }
    for (size_t i = 0; i < raw.size(); ++i) img.data[i] = raw[i] / 255.0;
    return img;
}

void save_pgm(const LabelMap& map, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_pgm: cannot open " + path.string());
    out << "P5\n" << map.width << " " << map.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(map.labels.data()),
              static_cast<std::streamsize>(map.labels.size()));
}

LabelMap load_pgm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_pgm: cannot open " + path.string());
    int w, h;
    read_header(in, "P5", w, h);
    LabelMap map(h, w);
    in.read(reinterpret_cast<char*>(map.labels.data()),
            static_cast<std::streamsize>(map.labels.size()));
    if (in.gcount() != static_cast<std::streamsize>(map.labels.size())) {
        throw FormatError("load_pgm: truncated payload in " + path.string());
    }
    return map;
}

}  // namespace inst4d
