#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "adafm/image.hpp"
#include "adafm/random.hpp"
#include "adafm/tensor.hpp"

namespace adafm {

enum class Task { Denoise, SuperResolve };

std::string to_string(Task task);
/// Accepts "denoise" and "sr" (or "super_resolve").
Task parse_task(const std::string& s);

/// Noise sigma in [0, 1] pixel units for denoising; scale factor >= 1 for
/// super-resolution.
struct DegradationLevel {
    Task task = Task::Denoise;
    double level = 0.0;

    void validate() const;
    [[nodiscard]] std::string str() const;
    friend bool operator==(const DegradationLevel&, const DegradationLevel&) = default;
};

/// Deterministic synthetic image: a smooth gradient background, random
/// rectangles and ellipses (sharp and soft edges), and band-limited sinusoidal
/// texture. Needs h, w >= 16.
Image gen_procedural_image(std::uint64_t seed, int h, int w, int channels);

/// Adds N(0, sigma^2) noise per sample and clamps to [0, 1].
Image degrade_noise(const Image& img, double sigma, RandomSource& rng);

/// Separable cubic convolution (a = -0.5) with clamp-to-edge sampling. When
/// shrinking, the kernel is stretched by the scale factor (antialiasing) and
/// the taps renormalized.
Image bicubic_resize(const Image& img, int out_h, int out_w);

/// Bicubic downscale by `scale`, then bicubic upscale back to the input size.
Image degrade_sr(const Image& img, double scale);

/// Applies `level` to `img`. The RNG is only consumed for denoising.
Image degrade(const Image& img, const DegradationLevel& level, RandomSource& rng);

/// Evaluation inputs: every image is degraded with a generator derived from
/// `eval_seed` and the image index, so the set is frozen per seed.
std::vector<Image> degrade_eval_set(std::span<const Image> clean, const DegradationLevel& level,
                                    std::uint64_t eval_seed);

struct PatchBatch {
    Tensor lq;
    Tensor gt;
    DegradationLevel level;
};

/// Random crops with random horizontal flip and 90-degree rotation, applied
/// identically to input and target. For super-resolution `pre_degraded` holds
/// the degraded counterparts of `images` (computed on the fly when empty);
/// for denoising fresh noise is drawn per patch.
PatchBatch sample_patch_batch(std::span<const Image> images, const DegradationLevel& level, int patch, int count,
                              RandomSource& rng, std::span<const Image> pre_degraded = {});

/// Stacks same-size images into an (n, c, h, w) tensor.
Tensor images_to_tensor(std::span<const Image> images);
Tensor image_to_tensor(const Image& img);
/// Extracts sample `n` of a tensor as an image (values copied, not clamped).
Image tensor_to_image(const Tensor& t, int n = 0);

}  // namespace adafm
