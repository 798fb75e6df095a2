#include "adafm/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <string>

namespace adafm {

void Image::clamp01() {
    for (float& v : pixels) v = std::clamp(v, 0.0f, 1.0f);
}

namespace {

double mse(const Image& a, const Image& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("psnr: image shapes differ");
    if (a.pixels.empty()) throw std::invalid_argument("psnr: empty image");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.pixels.size(); ++i) {
        const double d = static_cast<double>(a.pixels[i]) - b.pixels[i];
        acc += d * d;
    }
    return acc / static_cast<double>(a.pixels.size());
}

double psnr_from_mse(double m) {
    if (m == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(1.0 / m);
}

class HeaderParser {
public:
    explicit HeaderParser(const std::vector<unsigned char>& b) : bytes_(b) {}

    int next_int(const char* what) {
        skip_space_and_comments();
        if (pos_ >= bytes_.size() || !std::isdigit(bytes_[pos_]))
            throw ImageFormatError(std::string("malformed PNM header: expected ") + what);
        long v = 0;
        while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
            v = v * 10 + (bytes_[pos_++] - '0');
            if (v > 1 << 24) throw ImageFormatError(std::string("PNM ") + what + " too large");
        }
        return static_cast<int>(v);
    }

    // Exactly one whitespace byte separates maxval from the raster.
    std::size_t raster_start() {
        if (pos_ >= bytes_.size() || !std::isspace(bytes_[pos_]))
            throw ImageFormatError("malformed PNM header: missing separator before raster");
        return pos_ + 1;
    }

private:
    void skip_space_and_comments() {
        while (pos_ < bytes_.size()) {
            if (std::isspace(bytes_[pos_])) {
                ++pos_;
            } else if (bytes_[pos_] == '#') {
                while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
            } else {
                break;
            }
        }
    }

    const std::vector<unsigned char>& bytes_;
    std::size_t pos_ = 2;
};

}  // namespace

double psnr(const Image& a, const Image& b) { return psnr_from_mse(mse(a, b)); }

Image luma(const Image& img) {
    if (img.channels == 1) return img;
    if (img.channels != 3) throw std::invalid_argument("luma: expected 1 or 3 channels");
    Image out(img.h, img.w, 1);
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x)
            out.at(y, x, 0) = 0.299f * img.at(y, x, 0) + 0.587f * img.at(y, x, 1) + 0.114f * img.at(y, x, 2);
    return out;
}

double psnr_y(const Image& a, const Image& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("psnr_y: image shapes differ");
    return psnr(luma(a), luma(b));
}

Image decode_pnm(const std::vector<unsigned char>& bytes) {
    if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6'))
        throw ImageFormatError("not a binary PGM/PPM file (bad magic)");
    const int channels = bytes[1] == '5' ? 1 : 3;
    HeaderParser parser(bytes);
    const int w = parser.next_int("width");
    const int h = parser.next_int("height");
    const int maxval = parser.next_int("maxval");
    if (w < 1 || h < 1) throw ImageFormatError("PNM image has zero size");
    if (maxval != 255) throw ImageFormatError("only maxval 255 is supported, got " + std::to_string(maxval));
    const std::size_t start = parser.raster_start();
    const std::size_t count = static_cast<std::size_t>(w) * h * channels;
    if (bytes.size() < start + count) throw ImageFormatError("PNM raster truncated");
    Image img(h, w, channels);
    for (std::size_t i = 0; i < count; ++i) img.pixels[i] = static_cast<float>(bytes[start + i]) / 255.0f;
    return img;
}

std::vector<unsigned char> encode_pnm(const Image& img) {
    if (img.channels != 1 && img.channels != 3) throw ImageFormatError("PNM supports 1 or 3 channels only");
    const std::string header = std::string(img.channels == 1 ? "P5" : "P6") + "\n" + std::to_string(img.w) + " " +
                               std::to_string(img.h) + "\n255\n";
    std::vector<unsigned char> out(header.begin(), header.end());
    out.reserve(header.size() + img.pixels.size());
    for (float v : img.pixels) {
        const double q = std::round(static_cast<double>(std::clamp(v, 0.0f, 1.0f)) * 255.0);
        out.push_back(static_cast<unsigned char>(q));
    }
    return out;
}

Image load_pnm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ImageFormatError("cannot open " + path.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_pnm(bytes);
}

void save_pnm(const std::filesystem::path& path, const Image& img) {
    const auto bytes = encode_pnm(img);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ImageFormatError("cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw ImageFormatError("failed writing " + path.string());
}

}  // namespace adafm
