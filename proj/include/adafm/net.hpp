#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "adafm/random.hpp"
#include "adafm/tensor.hpp"

namespace adafm {

struct NetConfig {
    int in_channels = 1;
    int feat_channels = 16;
    int num_blocks = 4;
    std::optional<int> adafm_kernel;

    /// Throws std::invalid_argument on an unusable configuration.
    void validate() const;
};

struct ConvLayer {
    Tensor weight;  // (out, in / groups, k, k)
    Tensor bias;    // (out, 1, 1, 1)
    int stride = 1;
};

struct ResidualBlock {
    ConvLayer conv1;
    ConvLayer conv2;
};

/// Restoration backbone:
///
///   head 3x3 -> ReLU -> down 3x3/2 -> ReLU -> [residual blocks] -> trunk 3x3
///   (+ skip from the down features) -> up 3x3 (4x channels) -> pixel_shuffle(2)
///   -> ReLU -> tail 3x3, plus a global skip from the input.
///
/// Each residual block is conv1 -> ReLU -> conv2 with an identity skip. The
/// middle features live at half resolution in each dimension.
struct BasicNet {
    NetConfig config;
    ConvLayer head;
    ConvLayer down;
    std::vector<ResidualBlock> blocks;
    ConvLayer trunk;
    ConvLayer up;
    ConvLayer tail;

    /// Every conv layer in forward order: head, down, block convs, trunk, up, tail.
    [[nodiscard]] std::vector<const ConvLayer*> conv_layers() const;
    [[nodiscard]] std::vector<ConvLayer*> conv_layers();
    [[nodiscard]] std::vector<Tensor> parameters() const;
    [[nodiscard]] std::vector<std::pair<std::string, Tensor>> named_tensors() const;
    /// Position of block `b`'s conv (0 or 1) in conv_layers().
    [[nodiscard]] static int block_conv_index(int block, int conv) { return 2 + 2 * block + conv; }
};

/// Depthwise feature modification: out_c = filter_c * x_c + bias_c.
struct AdaFMLayer {
    Tensor filter;  // (channels, 1, k, k)
    Tensor bias;    // (channels, 1, 1, 1)

    [[nodiscard]] int kernel() const { return filter.shape().h; }
    [[nodiscard]] int channels() const { return filter.shape().n; }

    /// Delta filters and zero biases: an exact no-op.
    static AdaFMLayer identity(int channels, int kernel);
};

Tensor apply_adafm(const AdaFMLayer& layer, const Tensor& x);

/// Where AdaFM layers go: after every residual-block conv, or after every
/// conv layer of the net.
enum class AdaFMPlacement { ResidualBlocks, AllConvs };

std::string to_string(AdaFMPlacement p);
/// Accepts "blocks" and "all".
AdaFMPlacement parse_placement(const std::string& s);

/// Basic net plus AdaFM layers placed right after convs, before the activation
/// (and before the skip add for a block's second conv). The base tensors are
/// shared handles with the BasicNet it was built from.
struct AdaFMNet {
    BasicNet base;
    AdaFMPlacement placement = AdaFMPlacement::ResidualBlocks;
    std::vector<AdaFMLayer> adafm;  // one per modulated conv, forward order

    [[nodiscard]] int kernel() const { return adafm.empty() ? 0 : adafm.front().kernel(); }
    /// Indices into base.conv_layers() of the modulated convs.
    [[nodiscard]] std::vector<int> modulated_convs() const;
    [[nodiscard]] std::vector<Tensor> adafm_parameters() const;
    [[nodiscard]] std::vector<std::pair<std::string, Tensor>> named_tensors() const;
};

BasicNet build_basic_net(const NetConfig& cfg, RandomSource& rng);

/// Copies nothing: the returned net references `net`'s tensors.
AdaFMNet insert_adafm(const BasicNet& net, int kernel, AdaFMPlacement placement = AdaFMPlacement::ResidualBlocks);

Tensor forward(const BasicNet& net, const Tensor& x);
Tensor forward(const AdaFMNet& net, const Tensor& x);

/// Forward through `net` with an optional depthwise modification after every
/// conv layer. `mods` is indexed like BasicNet::conv_layers(); null entries
/// leave that layer unmodified. When `conv_inputs` is given it receives the
/// input feature map of every conv layer, in the same order.
Tensor forward_with_mods(const BasicNet& net, const Tensor& x, std::span<const AdaFMLayer* const> mods,
                         std::vector<Tensor>* conv_inputs = nullptr);

struct InterpolatedAdaFM {
    std::vector<AdaFMLayer> layers;
    float applied_lambda = 0.0f;
    bool clamped = false;
};

/// filter* = (1 - lambda) I + lambda filter, bias* = lambda bias. lambda is
/// clamped to [0, 1] and the clamp is reported.
InterpolatedAdaFM interpolate_adafm(const AdaFMNet& net, float lambda);

/// Forward with AdaFM parameters interpolated at `lambda`.
Tensor forward_modulated(const AdaFMNet& net, const Tensor& x, float lambda);

/// Filter obtained by folding a depthwise filter `g` (interpolated at lambda)
/// into the regular conv filter `f`: f + lambda * ((g - I) conv f). The result
/// has kernel size kf + kg - 1.
Tensor interpolate_filter(const Tensor& f, const Tensor& g, float lambda);

struct ParamCounts {
    long long base_total = 0;
    long long adafm_total = 0;
    double adafm_fraction = 0.0;  // adafm_total / base_total
};

/// Weight counts with biases excluded.
ParamCounts count_params(const BasicNet& net);
ParamCounts count_params(const AdaFMNet& net);

/// Mean over every conv filter (flattened per output channel) of 1 - cos.
double mean_cosine_distance(const BasicNet& a, const BasicNet& b);

}  // namespace adafm
