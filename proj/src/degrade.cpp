#include "adafm/degrade.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace adafm {

std::string to_string(Task task) { return task == Task::Denoise ? "denoise" : "sr"; }

Task parse_task(const std::string& s) {
    if (s == "denoise") return Task::Denoise;
    if (s == "sr" || s == "super_resolve") return Task::SuperResolve;
    throw std::invalid_argument("unknown task '" + s + "' (expected denoise or sr)");
}

void DegradationLevel::validate() const {
    if (!std::isfinite(level)) throw std::invalid_argument("degradation level must be finite");
    if (task == Task::Denoise && level < 0.0) throw std::invalid_argument("noise sigma must be >= 0");
    if (task == Task::SuperResolve && level < 1.0) throw std::invalid_argument("SR scale must be >= 1");
}

std::string DegradationLevel::str() const {
    std::ostringstream os;
    os << to_string(task) << "@" << level;
    return os.str();
}

Image gen_procedural_image(std::uint64_t seed, int h, int w, int channels) {
    if (h < 16 || w < 16) throw std::invalid_argument("procedural images need h, w >= 16");
    if (channels != 1 && channels != 3) throw std::invalid_argument("channels must be 1 or 3");
    RandomSource rng(splitmix64(seed ^ 0xA5F0C3E1D2B49786ULL));
    auto uni = [&](double lo, double hi) { return lo + (hi - lo) * rng.uniform(); };

    std::vector<double> plane(static_cast<std::size_t>(h) * w * channels);
    auto px = [&](int y, int x, int c) -> double& { return plane[(static_cast<std::size_t>(y) * w + x) * channels + c]; };

    // Background: per-channel linear gradient.
    for (int c = 0; c < channels; ++c) {
        const double base = uni(0.25, 0.75), gx = uni(-0.3, 0.3), gy = uni(-0.3, 0.3);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) px(y, x, c) = base + gx * (x / double(w) - 0.5) + gy * (y / double(h) - 0.5);
    }

    // Shapes painted over the background; soft shapes blend with a ramp.
    const int shapes = 6 + static_cast<int>(rng.below(7));
    for (int s = 0; s < shapes; ++s) {
        const bool ellipse = rng.uniform() < 0.5;
        const double cy = uni(0, h), cx = uni(0, w);
        const double ry = uni(0.06, 0.3) * h, rx = uni(0.06, 0.3) * w;
        const double softness = rng.uniform() < 0.5 ? 0.0 : uni(1.0, 4.0);
        double color[3];
        for (int c = 0; c < 3; ++c) color[c] = uni(0.0, 1.0);
        if (channels == 3 && rng.uniform() < 0.5) color[1] = color[2] = color[0];
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                // Signed distance-like measure in pixels (negative inside).
                double d;
                if (ellipse) {
                    const double ny = (y + 0.5 - cy) / ry, nx = (x + 0.5 - cx) / rx;
                    d = (std::sqrt(ny * ny + nx * nx) - 1.0) * std::min(rx, ry);
                } else {
                    d = std::max(std::fabs(y + 0.5 - cy) - ry, std::fabs(x + 0.5 - cx) - rx);
                }
                double alpha = softness == 0.0 ? (d <= 0.0 ? 1.0 : 0.0) : std::clamp(0.5 - d / softness, 0.0, 1.0);
                if (alpha == 0.0) continue;
                for (int c = 0; c < channels; ++c) px(y, x, c) = (1.0 - alpha) * px(y, x, c) + alpha * color[c];
            }
    }

    // Band-limited texture: a few oriented sinusoids in random patches.
    const int waves = 2 + static_cast<int>(rng.below(3));
    for (int k = 0; k < waves; ++k) {
        const double freq = uni(0.08, 0.45);  // cycles per pixel, below Nyquist
        const double theta = uni(0.0, std::numbers::pi);
        const double amp = uni(0.03, 0.09);
        const double phase = uni(0.0, 2.0 * std::numbers::pi);
        const double cy = uni(0, h), cx = uni(0, w), radius = uni(0.2, 0.6) * std::max(h, w);
        const double fy = freq * std::sin(theta), fx = freq * std::cos(theta);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const double dist = std::hypot(y - cy, x - cx);
                const double env = std::exp(-(dist * dist) / (2.0 * radius * radius));
                const double v = amp * env * std::sin(2.0 * std::numbers::pi * (fy * y + fx * x) + phase);
                for (int c = 0; c < channels; ++c) px(y, x, c) += v;
            }
    }

    Image img(h, w, channels);
    for (std::size_t i = 0; i < plane.size(); ++i) img.pixels[i] = static_cast<float>(std::clamp(plane[i], 0.0, 1.0));
    return img;
}

Image degrade_noise(const Image& img, double sigma, RandomSource& rng) {
    if (!(sigma >= 0.0)) throw std::invalid_argument("noise sigma must be >= 0");
    Image out = img;
    if (sigma == 0.0) return out;
    for (float& v : out.pixels) v = static_cast<float>(v + sigma * rng.gaussian());
    out.clamp01();
    return out;
}

namespace {

double cubic_kernel(double x) {
    constexpr double a = -0.5;
    x = std::fabs(x);
    if (x <= 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
    if (x < 2.0) return ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a;
    return 0.0;
}

struct Taps {
    std::vector<int> index;
    std::vector<double> weight;
};

std::vector<Taps> resize_taps(int in, int out) {
    const double scale = static_cast<double>(in) / out;
    const double stretch = std::max(scale, 1.0);
    const double support = 2.0 * stretch;
    std::vector<Taps> taps(out);
    for (int o = 0; o < out; ++o) {
        const double center = (o + 0.5) * scale - 0.5;
        const int lo = static_cast<int>(std::floor(center - support));
        const int hi = static_cast<int>(std::ceil(center + support));
        Taps& t = taps[o];
        double total = 0.0;
        for (int i = lo; i <= hi; ++i) {
            const double wgt = cubic_kernel((center - i) / stretch);
            if (wgt == 0.0) continue;
            t.index.push_back(std::clamp(i, 0, in - 1));
            t.weight.push_back(wgt);
            total += wgt;
        }
        for (double& wgt : t.weight) wgt /= total;
    }
    return taps;
}

}  // namespace

Image bicubic_resize(const Image& img, int out_h, int out_w) {
    if (out_h < 1 || out_w < 1) throw std::invalid_argument("bicubic_resize: output size must be positive");
    const auto ty = resize_taps(img.h, out_h);
    const auto tx = resize_taps(img.w, out_w);
    const int ch = img.channels;

    // Horizontal pass into doubles, then vertical.
    std::vector<double> mid(static_cast<std::size_t>(img.h) * out_w * ch);
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < out_w; ++x)
            for (int c = 0; c < ch; ++c) {
                double s = 0.0;
                for (std::size_t k = 0; k < tx[x].index.size(); ++k) s += tx[x].weight[k] * img.at(y, tx[x].index[k], c);
                mid[(static_cast<std::size_t>(y) * out_w + x) * ch + c] = s;
            }
    Image out(out_h, out_w, ch);
    for (int y = 0; y < out_h; ++y)
        for (int x = 0; x < out_w; ++x)
            for (int c = 0; c < ch; ++c) {
                double s = 0.0;
                for (std::size_t k = 0; k < ty[y].index.size(); ++k)
                    s += ty[y].weight[k] * mid[(static_cast<std::size_t>(ty[y].index[k]) * out_w + x) * ch + c];
                out.at(y, x, c) = static_cast<float>(s);
            }
    return out;
}

Image degrade_sr(const Image& img, double scale) {
    if (!(scale >= 1.0)) throw std::invalid_argument("SR scale must be >= 1");
    const int lh = std::max(1, static_cast<int>(std::lround(img.h / scale)));
    const int lw = std::max(1, static_cast<int>(std::lround(img.w / scale)));
    Image out = bicubic_resize(bicubic_resize(img, lh, lw), img.h, img.w);
    out.clamp01();
    return out;
}

Image degrade(const Image& img, const DegradationLevel& level, RandomSource& rng) {
    level.validate();
    return level.task == Task::Denoise ? degrade_noise(img, level.level, rng) : degrade_sr(img, level.level);
}

std::vector<Image> degrade_eval_set(std::span<const Image> clean, const DegradationLevel& level,
                                    std::uint64_t eval_seed) {
    std::vector<Image> out;
    out.reserve(clean.size());
    const RandomSource root(eval_seed);
    for (std::size_t i = 0; i < clean.size(); ++i) {
        RandomSource rng = root.fork(i);
        out.push_back(degrade(clean[i], level, rng));
    }
    return out;
}

namespace {

// Maps patch coordinates through rotation (k quarter turns) and an optional
// horizontal flip, returning the source offset inside the crop window.
std::pair<int, int> augment(int y, int x, int p, int rot, bool flip) {
    if (flip) x = p - 1 - x;
    for (int r = 0; r < rot; ++r) {
        const int ny = x, nx = p - 1 - y;
        y = ny;
        x = nx;
    }
    return {y, x};
}

}  // namespace

PatchBatch sample_patch_batch(std::span<const Image> images, const DegradationLevel& level, int patch, int count,
                              RandomSource& rng, std::span<const Image> pre_degraded) {
    level.validate();
    if (images.empty()) throw std::invalid_argument("sample_patch_batch: no images");
    if (patch < 1 || count < 1) throw std::invalid_argument("sample_patch_batch: bad patch size or count");
    if (!pre_degraded.empty() && pre_degraded.size() != images.size())
        throw std::invalid_argument("sample_patch_batch: pre-degraded set does not match images");
    const int ch = images.front().channels;
    for (const Image& img : images) {
        if (img.h < patch || img.w < patch)
            throw std::invalid_argument("sample_patch_batch: patch larger than image");
        if (img.channels != ch) throw std::invalid_argument("sample_patch_batch: mixed channel counts");
    }

    PatchBatch batch{Tensor(Shape{count, ch, patch, patch}), Tensor(Shape{count, ch, patch, patch}), level};
    for (int n = 0; n < count; ++n) {
        const std::size_t idx = rng.below(images.size());
        const Image& gt = images[idx];
        Image sr_lq;
        const Image* lq_src = &gt;
        if (level.task == Task::SuperResolve) {
            if (pre_degraded.empty()) {
                sr_lq = degrade_sr(gt, level.level);
                lq_src = &sr_lq;
            } else {
                lq_src = &pre_degraded[idx];
            }
        }
        const int oy = static_cast<int>(rng.below(gt.h - patch + 1));
        const int ox = static_cast<int>(rng.below(gt.w - patch + 1));
        const int rot = static_cast<int>(rng.below(4));
        const bool flip = rng.below(2) == 1;
        for (int c = 0; c < ch; ++c)
            for (int y = 0; y < patch; ++y)
                for (int x = 0; x < patch; ++x) {
                    const auto [sy, sx] = augment(y, x, patch, rot, flip);
                    batch.gt.at(n, c, y, x) = gt.at(oy + sy, ox + sx, c);
                    batch.lq.at(n, c, y, x) = lq_src->at(oy + sy, ox + sx, c);
                }
        if (level.task == Task::Denoise && level.level > 0.0) {
            for (int c = 0; c < ch; ++c)
                for (int y = 0; y < patch; ++y)
                    for (int x = 0; x < patch; ++x) {
                        float& v = batch.lq.at(n, c, y, x);
                        v = std::clamp(static_cast<float>(v + level.level * rng.gaussian()), 0.0f, 1.0f);
                    }
        }
    }
    return batch;
}

Tensor image_to_tensor(const Image& img) { return images_to_tensor(std::span<const Image>(&img, 1)); }

Tensor images_to_tensor(std::span<const Image> images) {
    if (images.empty()) throw std::invalid_argument("images_to_tensor: empty list");
    const Image& f = images.front();
    Tensor t(Shape{static_cast<int>(images.size()), f.channels, f.h, f.w});
    for (std::size_t n = 0; n < images.size(); ++n) {
        const Image& img = images[n];
        if (!img.same_shape(f)) throw std::invalid_argument("images_to_tensor: images differ in shape");
        for (int c = 0; c < img.channels; ++c)
            for (int y = 0; y < img.h; ++y)
                for (int x = 0; x < img.w; ++x) t.at(static_cast<int>(n), c, y, x) = img.at(y, x, c);
    }
    return t;
}

Image tensor_to_image(const Tensor& t, int n) {
    const Shape& s = t.shape();
    if (n < 0 || n >= s.n) throw std::out_of_range("tensor_to_image: sample index out of range");
    Image img(s.h, s.w, s.c);
    for (int c = 0; c < s.c; ++c)
        for (int y = 0; y < s.h; ++y)
            for (int x = 0; x < s.w; ++x) img.at(y, x, c) = t.at(n, c, y, x);
    return img;
}

}  // namespace adafm
