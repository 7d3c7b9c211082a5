#pragma once

#include <mmes/dense_tensor.hpp>

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <csetjmp>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace mmes {

namespace detail {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FileHandle = std::unique_ptr<std::FILE, FileCloser>;

inline double byte_to_unit(unsigned char b) { return static_cast<double>(b) / 255.0; }

inline unsigned char unit_to_byte(double v) {
    const double clamped = std::min(1.0, std::max(0.0, v));
    return static_cast<unsigned char>(std::llround(255.0 * clamped));
}

/// Skips whitespace and '#' comments between PNM header tokens.
inline bool pnm_next_token(std::istream& is, std::string& token) {
    token.clear();
    int c = is.get();
    while (c != EOF) {
        if (c == '#') {
            while (c != EOF && c != '\n') c = is.get();
        } else if (std::isspace(c)) {
            c = is.get();
        } else {
            break;
        }
    }
    while (c != EOF && !std::isspace(c)) {
        token.push_back(static_cast<char>(c));
        c = is.get();
    }
    return !token.empty();
}

inline std::size_t pnm_parse_size(const std::string& token, const std::string& path) {
    std::size_t pos = 0;
    unsigned long long v = 0;
    try {
        v = std::stoull(token, &pos);
    } catch (const std::exception&) {
        throw std::runtime_error("load_image: malformed header in " + path);
    }
    if (pos != token.size() || v == 0) {
        throw std::runtime_error("load_image: malformed header in " + path);
    }
    return static_cast<std::size_t>(v);
}

inline DenseTensor load_pnm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("load_image: cannot open " + path);
    char magic[2] = {};
    is.read(magic, 2);
    if (!is || magic[0] != 'P' || (magic[1] != '5' && magic[1] != '6')) {
        throw std::runtime_error("load_image: unsupported format in " + path);
    }
    const std::size_t channels = magic[1] == '6' ? 3 : 1;
    std::string token;
    if (!pnm_next_token(is, token)) throw std::runtime_error("load_image: truncated header in " + path);
    const std::size_t width = pnm_parse_size(token, path);
    if (!pnm_next_token(is, token)) throw std::runtime_error("load_image: truncated header in " + path);
    const std::size_t height = pnm_parse_size(token, path);
    if (!pnm_next_token(is, token)) throw std::runtime_error("load_image: truncated header in " + path);
    const std::size_t maxval = pnm_parse_size(token, path);
    if (maxval > 255) throw std::runtime_error("load_image: unsupported bit depth in " + path);
    const std::size_t count = width * height * channels;
    std::vector<unsigned char> bytes(count);
    is.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(count));
    if (static_cast<std::size_t>(is.gcount()) != count) {
        throw std::runtime_error("load_image: truncated pixel data in " + path);
    }
    const double scale = 1.0 / static_cast<double>(maxval);
    DenseTensor out = channels == 1 ? DenseTensor::zeros({height, width})
                                    : DenseTensor::zeros({height, width, 3});
    for (std::size_t i = 0; i < count; ++i) {
        out.data()[i] = scale * static_cast<double>(bytes[i]);
    }
    return out;
}

inline void save_pnm(const DenseTensor& x, const std::string& path, std::size_t channels) {
    const std::size_t height = x.shape()[0];
    const std::size_t width = x.shape()[1];
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("save_image: cannot open " + path);
    os << (channels == 3 ? "P6" : "P5") << "\n" << width << " " << height << "\n255\n";
    std::vector<unsigned char> bytes(height * width * channels);
    for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = unit_to_byte(x.data()[i]);
    os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw std::runtime_error("save_image: write failed for " + path);
}

inline DenseTensor load_png(const std::string& path) {
    FileHandle fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw std::runtime_error("load_image: cannot open " + path);
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw std::runtime_error("load_image: png reader allocation failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw std::runtime_error("load_image: png reader allocation failed");
    }
    std::vector<unsigned char> pixels;
    std::vector<png_bytep> rows;
    std::size_t width = 0;
    std::size_t height = 0;
    std::size_t channels = 0;
    bool depth_error = false;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        if (depth_error) throw std::runtime_error("load_image: unsupported bit depth in " + path);
        throw std::runtime_error("load_image: corrupt png " + path);
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);
    if (png_get_bit_depth(png, info) > 8) {
        depth_error = true;
        png_longjmp(png, 1);
    }
    png_set_palette_to_rgb(png);
    png_set_expand_gray_1_2_4_to_8(png);
    png_set_strip_alpha(png);
    png_read_update_info(png, info);
    width = png_get_image_width(png, info);
    height = png_get_image_height(png, info);
    channels = png_get_channels(png, info);
    if ((channels != 1 && channels != 3) || width == 0 || height == 0) {
        png_longjmp(png, 1);
    }
    pixels.resize(width * height * channels);
    rows.resize(height);
    for (std::size_t r = 0; r < height; ++r) rows[r] = pixels.data() + r * width * channels;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    DenseTensor out = channels == 1 ? DenseTensor::zeros({height, width})
                                    : DenseTensor::zeros({height, width, 3});
    for (std::size_t i = 0; i < pixels.size(); ++i) out.data()[i] = byte_to_unit(pixels[i]);
    return out;
}

inline void save_png(const DenseTensor& x, const std::string& path, std::size_t channels) {
    const std::size_t height = x.shape()[0];
    const std::size_t width = x.shape()[1];
    std::vector<unsigned char> pixels(height * width * channels);
    for (std::size_t i = 0; i < pixels.size(); ++i) pixels[i] = unit_to_byte(x.data()[i]);
    std::vector<png_bytep> rows(height);
    for (std::size_t r = 0; r < height; ++r) rows[r] = pixels.data() + r * width * channels;
    FileHandle fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw std::runtime_error("save_image: cannot open " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw std::runtime_error("save_image: png writer allocation failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw std::runtime_error("save_image: png writer allocation failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("save_image: write failed for " + path);
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8,
                 channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

inline bool has_suffix(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace detail

/// Loads an 8-bit grayscale or RGB image (PNG, PGM, or PPM, sniffed from the
/// file header) into [0,1]; grayscale becomes (H, W), color (H, W, 3).
inline DenseTensor load_image(const std::string& path) {
    std::ifstream probe(path, std::ios::binary);
    if (!probe) throw std::runtime_error("load_image: cannot open " + path);
    unsigned char magic[8] = {};
    probe.read(reinterpret_cast<char*>(magic), 8);
    probe.close();
    static const unsigned char kPngMagic[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    if (std::memcmp(magic, kPngMagic, 8) == 0) return detail::load_png(path);
    if (magic[0] == 'P' && (magic[1] == '5' || magic[1] == '6')) return detail::load_pnm(path);
    throw std::runtime_error("load_image: unsupported format in " + path);
}

/// Saves a (H, W) or (H, W, 3) tensor as an 8-bit image, clamping to [0,1]
/// and quantizing by round(255*v). The extension picks the codec: .png,
/// .pgm (grayscale), or .ppm (color).
inline void save_image(const DenseTensor& x, const std::string& path) {
    std::size_t channels = 0;
    if (x.ndim() == 2) {
        channels = 1;
    } else if (x.ndim() == 3 && x.shape()[2] == 3) {
        channels = 3;
    } else {
        throw std::invalid_argument("save_image: expected (H, W) or (H, W, 3)");
    }
    if (detail::has_suffix(path, ".png")) {
        detail::save_png(x, path, channels);
    } else if (detail::has_suffix(path, ".pgm")) {
        if (channels != 1) throw std::invalid_argument("save_image: .pgm holds grayscale only");
        detail::save_pnm(x, path, 1);
    } else if (detail::has_suffix(path, ".ppm")) {
        if (channels != 3) throw std::invalid_argument("save_image: .ppm holds color only");
        detail::save_pnm(x, path, 3);
    } else {
        throw std::invalid_argument("save_image: unsupported extension in " + path);
    }
}

/// Reads a one-value-per-line CSV into a 1-D tensor. A single leading
/// non-numeric line is treated as a header and skipped.
inline DenseTensor load_signal_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("load_signal_csv: cannot open " + path);
    std::vector<double> values;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        std::size_t begin = line.find_first_not_of(" \t\r");
        if (begin == std::string::npos) continue;
        std::size_t end = line.find_last_not_of(" \t\r");
        const std::string body = line.substr(begin, end - begin + 1);
        char* tail = nullptr;
        const double v = std::strtod(body.c_str(), &tail);
        if (tail != body.c_str() + body.size()) {
            if (line_no == 1 && values.empty()) continue;
            throw std::runtime_error("load_signal_csv: bad value at line " + std::to_string(line_no) +
                                     " of " + path);
        }
        values.push_back(v);
    }
    if (values.empty()) throw std::runtime_error("load_signal_csv: no samples in " + path);
    return DenseTensor({values.size()}, values);
}

/// Writes a 1-D tensor one value per line with round-trip precision.
inline void save_signal_csv(const DenseTensor& x, const std::string& path) {
    if (x.ndim() != 1) throw std::invalid_argument("save_signal_csv: expected a 1-D tensor");
    std::ofstream os(path);
    if (!os) throw std::runtime_error("save_signal_csv: cannot open " + path);
    char buf[64];
    for (std::size_t i = 0; i < x.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%.17g\n", x.data()[i]);
        os << buf;
    }
    if (!os) throw std::runtime_error("save_signal_csv: write failed for " + path);
}

/// Binary tensor dump (shape + row-major doubles), used for latent
/// checkpoints.
inline void save_tensor(const DenseTensor& x, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("save_tensor: cannot open " + path);
    os.write("MMESTN01", 8);
    const auto ndim = static_cast<std::uint32_t>(x.ndim());
    os.write(reinterpret_cast<const char*>(&ndim), sizeof(ndim));
    for (std::size_t n = 0; n < x.ndim(); ++n) {
        const auto extent = static_cast<std::uint64_t>(x.shape()[n]);
        os.write(reinterpret_cast<const char*>(&extent), sizeof(extent));
    }
    os.write(reinterpret_cast<const char*>(x.data()),
             static_cast<std::streamsize>(sizeof(double) * x.size()));
    if (!os) throw std::runtime_error("save_tensor: write failed for " + path);
}

inline DenseTensor load_tensor(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("load_tensor: cannot open " + path);
    char magic[8] = {};
    is.read(magic, 8);
    if (!is || std::memcmp(magic, "MMESTN01", 8) != 0) {
        throw std::runtime_error("load_tensor: bad magic in " + path);
    }
    std::uint32_t ndim = 0;
    is.read(reinterpret_cast<char*>(&ndim), sizeof(ndim));
    if (!is || ndim == 0 || ndim > 64) throw std::runtime_error("load_tensor: corrupt header in " + path);
    std::vector<std::size_t> shape(ndim);
    for (auto& extent : shape) {
        std::uint64_t v = 0;
        is.read(reinterpret_cast<char*>(&v), sizeof(v));
        if (!is || v == 0) throw std::runtime_error("load_tensor: corrupt header in " + path);
        extent = static_cast<std::size_t>(v);
    }
    DenseTensor out = DenseTensor::zeros(shape);
    is.read(reinterpret_cast<char*>(out.data()),
            static_cast<std::streamsize>(sizeof(double) * out.size()));
    if (!is) throw std::runtime_error("load_tensor: truncated file " + path);
    return out;
}

}  // namespace mmes
