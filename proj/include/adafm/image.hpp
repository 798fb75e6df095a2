#pragma once

#include <filesystem>
#include <limits>
#include <stdexcept>
#include <vector>

namespace adafm {

/// Interleaved (row-major, channel-fastest) float image with values in [0, 1].
struct Image {
    int h = 0;
    int w = 0;
    int channels = 1;
    std::vector<float> pixels;

    Image() = default;
    Image(int height, int width, int chans, float fill = 0.0f)
        : h(height), w(width), channels(chans), pixels(static_cast<std::size_t>(height) * width * chans, fill) {}

    float& at(int y, int x, int c) { return pixels[(static_cast<std::size_t>(y) * w + x) * channels + c]; }
    [[nodiscard]] float at(int y, int x, int c) const {
        return pixels[(static_cast<std::size_t>(y) * w + x) * channels + c];
    }
    [[nodiscard]] bool same_shape(const Image& o) const { return h == o.h && w == o.w && channels == o.channels; }

    void clamp01();
};

class ImageFormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// 10 log10(1 / MSE) over all channels. Identical images give +infinity.
double psnr(const Image& a, const Image& b);

/// PSNR on BT.601 luma (0.299 R + 0.587 G + 0.114 B); plain PSNR for
/// single-channel images.
double psnr_y(const Image& a, const Image& b);

Image luma(const Image& img);

/// Binary PGM (P5, 1 channel) or PPM (P6, 3 channels), maxval 255.
Image load_pnm(const std::filesystem::path& path);
/// Quantizes with round-half-away-from-zero after clamping to [0, 1].
void save_pnm(const std::filesystem::path& path, const Image& img);

Image decode_pnm(const std::vector<unsigned char>& bytes);
std::vector<unsigned char> encode_pnm(const Image& img);

}  // namespace adafm
