#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "adafm/degrade.hpp"
#include "adafm/image.hpp"
#include "adafm/net.hpp"

namespace adafm {

/// Raised when training produces a non-finite loss or activation.
class TrainingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct TrainConfig {
    int iterations = 3000;
    float lr = 1e-4f;
    int lr_decay_step = 2000;  // lr is multiplied by 0.1 after this many iterations
    int batch = 8;
    int patch = 32;
    std::uint64_t seed = 0;
    int eval_every = 250;

    void validate() const;
    /// Desk defaults for `iterations` with the decay at two thirds.
    static TrainConfig with_iterations(int iterations);
};

struct DataConfig {
    int train_images = 64;
    int train_size = 96;
    int eval_images = 4;
    int eval_size = 64;
    int channels = 1;
    std::uint64_t seed = 0;
    std::uint64_t eval_seed = 777;
};

struct Dataset {
    std::vector<Image> train;
    std::vector<Image> eval;
    std::uint64_t eval_seed = 777;
};

/// Procedural training and held-out evaluation images (disjoint seeds).
Dataset make_procedural_dataset(const DataConfig& cfg);

/// Loads every *.pgm / *.ppm in `dir`, sorted by file name.
std::vector<Image> load_image_dir(const std::string& dir);

/// Evaluation images degraded once at a fixed level with the frozen seed.
struct EvalSet {
    DegradationLevel level;
    std::vector<Image> clean;
    std::vector<Image> degraded;
};

EvalSet make_eval_set(std::span<const Image> clean, const DegradationLevel& level, std::uint64_t eval_seed);

using Restorer = std::function<Tensor(const Tensor&)>;

/// Mean PSNR of clamp(restore(lq)) against the clean images. Denoising uses
/// every channel, super-resolution the luma channel.
double evaluate(const Restorer& restore, const EvalSet& set);
double evaluate(const BasicNet& net, const EvalSet& set);
/// Without lambda the AdaFM layers are used as trained (the lambda = 1 endpoint).
double evaluate(const AdaFMNet& net, std::optional<float> lambda, const EvalSet& set);
/// PSNR of the degraded inputs themselves (output = input).
double evaluate_identity(const EvalSet& set);

/// Restores one image of any size at `lambda`: odd sizes are edge-padded
/// and cropped back, and channel counts that differ from the net's are
/// handled per channel (grayscale net) or by replication (color net). The
/// result is clamped to [0, 1].
Image restore_image(const AdaFMNet& net, const Image& input, float lambda);

struct LogEntry {
    int iter = 0;
    double loss = 0.0;  // mean loss over the iterations since the previous entry
    double psnr = 0.0;
};

struct TrainLog {
    std::vector<double> losses;  // one per iteration
    std::vector<LogEntry> entries;

    /// Moving average of `losses` over `window` iterations, ending at each iteration.
    [[nodiscard]] std::vector<double> smoothed(int window = 20) const;
    /// Fraction of consecutive `window`-sized block means that rise by more
    /// than `tolerance` relative to the previous block.
    [[nodiscard]] double upward_violation_fraction(int window = 20, double tolerance = 0.05) const;
    void write(std::ostream& os) const;
};

using ProgressFn = std::function<void(const LogEntry&)>;

struct TrainResult {
    BasicNet net;
    TrainLog log;
};

/// Adam + L1 training on random patch batches of `level`. When `init` is
/// given training continues from a copy of its weights.
TrainResult train_basic(const NetConfig& cfg, const TrainConfig& tcfg, const DegradationLevel& level,
                        const Dataset& data, const BasicNet* init = nullptr, const ProgressFn& progress = {});

struct AdaptResult {
    AdaFMNet net;
    TrainLog log;
};

/// Optimizes only the AdaFM layers of (a copy of) `net` on `level_b`. The
/// base tensors stay shared with the input and are never written.
AdaptResult adapt(const AdaFMNet& net, const DegradationLevel& level_b, const TrainConfig& tcfg, const Dataset& data,
                  const ProgressFn& progress = {});

enum class Direction { EasyToHard, HardToEasy, Same };
std::string to_string(Direction d);

struct AdaptationReport {
    DegradationLevel start_level;
    DegradationLevel end_level;
    double psnr_adapted = 0.0;
    double psnr_baseline = 0.0;
    double distance = 0.0;
    Direction direction = Direction::Same;
    std::string error;  // non-empty when the cell failed
};

struct StudyConfig {
    NetConfig net;
    TrainConfig basic;
    TrainConfig adapt;
    int adafm_kernel = 1;
    AdaFMPlacement placement = AdaFMPlacement::ResidualBlocks;
};

using StudyProgressFn = std::function<void(const std::string&)>;

/// For every (start, end) pair: adapt the basic net trained at `start` to
/// `end` and compare with the basic net trained at `end`. Each level's basic
/// net is trained once and shared by every pair that uses it. A failing cell
/// is reported with its error and the remaining cells still run.
std::vector<AdaptationReport> adaptation_study(const std::vector<std::pair<DegradationLevel, DegradationLevel>>& pairs,
                                               const StudyConfig& cfg, const Dataset& data,
                                               const StudyProgressFn& progress = {});

void write_study_csv(std::ostream& os, const std::vector<AdaptationReport>& reports);

struct BridgeConfig {
    int steps = 500;
    float lr = 1e-3f;
};

struct BridgeResult {
    std::vector<AdaFMLayer> layers;       // one per conv layer, forward order
    std::vector<double> initial_residual;  // mean squared error before fitting
    std::vector<double> residual;          // after fitting
    double psnr_bridged = 0.0;
    double psnr_a = 0.0;
    double psnr_b = 0.0;

    [[nodiscard]] double gap_bridged() const { return std::abs(psnr_bridged - psnr_b); }
    [[nodiscard]] double gap_raw() const { return std::abs(psnr_a - psnr_b); }
};

/// Fits a depthwise k x k filter plus bias after every conv of `a` so that it
/// reproduces the matching conv of `b` on `a`'s own feature maps for `probe`.
/// Layers are fitted independently; the result is then run end to end and
/// compared with `b` on `eval`.
BridgeResult filter_bridge(const BasicNet& a, const BasicNet& b, int k, const Tensor& probe, const EvalSet& eval,
                           const BridgeConfig& cfg = {});

/// FNV-1a over shapes and raw float bytes.
std::uint64_t tensor_hash(std::span<const Tensor> tensors);

}  // namespace adafm
