#include "adafm/net.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "adafm/ops.hpp"

namespace adafm {

namespace {

constexpr int kConvKernel = 3;
constexpr float kTailScale = 0.1f;

ConvLayer make_conv(int in, int out, int stride, RandomSource& rng) {
    const float std = std::sqrt(2.0f / static_cast<float>(in * kConvKernel * kConvKernel));
    ConvLayer layer;
    layer.weight = randn(rng, Shape{out, in, kConvKernel, kConvKernel}, 0.0f, std);
    layer.bias = Tensor(Shape{out, 1, 1, 1});
    layer.stride = stride;
    return layer;
}

Tensor run_conv(const ConvLayer& layer, const Tensor& x, const AdaFMLayer* mod) {
    Tensor y = conv2d(x, layer.weight, layer.bias, {layer.stride, kConvKernel / 2, 1});
    return mod ? apply_adafm(*mod, y) : y;
}

long long weight_count(const ConvLayer& layer) { return static_cast<long long>(layer.weight.numel()); }

}  // namespace

void NetConfig::validate() const {
    if (in_channels != 1 && in_channels != 3) throw std::invalid_argument("in_channels must be 1 or 3");
    if (feat_channels < 1) throw std::invalid_argument("feat_channels must be positive");
    if (num_blocks < 1) throw std::invalid_argument("num_blocks must be at least 1");
    if (adafm_kernel && (*adafm_kernel < 1 || *adafm_kernel % 2 == 0))
        throw std::invalid_argument("adafm_kernel must be a positive odd number");
}

std::vector<const ConvLayer*> BasicNet::conv_layers() const {
    std::vector<const ConvLayer*> out{&head, &down};
    for (const auto& b : blocks) {
        out.push_back(&b.conv1);
        out.push_back(&b.conv2);
    }
    out.insert(out.end(), {&trunk, &up, &tail});
    return out;
}

std::vector<ConvLayer*> BasicNet::conv_layers() {
    std::vector<ConvLayer*> out;
    for (const ConvLayer* l : std::as_const(*this).conv_layers()) out.push_back(const_cast<ConvLayer*>(l));
    return out;
}

std::vector<Tensor> BasicNet::parameters() const {
    std::vector<Tensor> out;
    for (const ConvLayer* l : conv_layers()) {
        out.push_back(l->weight);
        out.push_back(l->bias);
    }
    return out;
}

std::vector<std::pair<std::string, Tensor>> BasicNet::named_tensors() const {
    std::vector<std::pair<std::string, Tensor>> out;
    auto push = [&](const std::string& name, const ConvLayer& l) {
        out.emplace_back(name + ".weight", l.weight);
        out.emplace_back(name + ".bias", l.bias);
    };
    push("head", head);
    push("down", down);
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        push("blocks." + std::to_string(i) + ".conv1", blocks[i].conv1);
        push("blocks." + std::to_string(i) + ".conv2", blocks[i].conv2);
    }
    push("trunk", trunk);
    push("up", up);
    push("tail", tail);
    return out;
}

AdaFMLayer AdaFMLayer::identity(int channels, int kernel) {
    if (kernel < 1 || kernel % 2 == 0) throw std::invalid_argument("AdaFM kernel must be odd");
    AdaFMLayer layer;
    layer.filter = Tensor(Shape{channels, 1, kernel, kernel});
    for (int c = 0; c < channels; ++c) layer.filter.at(c, 0, kernel / 2, kernel / 2) = 1.0f;
    layer.bias = Tensor(Shape{channels, 1, 1, 1});
    return layer;
}

Tensor apply_adafm(const AdaFMLayer& layer, const Tensor& x) {
    return conv2d(x, layer.filter, layer.bias, {1, layer.kernel() / 2, layer.channels()});
}

std::vector<Tensor> AdaFMNet::adafm_parameters() const {
    std::vector<Tensor> out;
    for (const auto& l : adafm) {
        out.push_back(l.filter);
        out.push_back(l.bias);
    }
    return out;
}

std::vector<std::pair<std::string, Tensor>> AdaFMNet::named_tensors() const {
    auto out = base.named_tensors();
    for (std::size_t i = 0; i < adafm.size(); ++i) {
        out.emplace_back("adafm." + std::to_string(i) + ".filter", adafm[i].filter);
        out.emplace_back("adafm." + std::to_string(i) + ".bias", adafm[i].bias);
    }
    return out;
}

BasicNet build_basic_net(const NetConfig& cfg, RandomSource& rng) {
    cfg.validate();
    BasicNet net;
    net.config = cfg;
    net.config.adafm_kernel.reset();
    const int f = cfg.feat_channels;
    net.head = make_conv(cfg.in_channels, f, 1, rng);
    net.down = make_conv(f, f, 2, rng);
    for (int i = 0; i < cfg.num_blocks; ++i) net.blocks.push_back({make_conv(f, f, 1, rng), make_conv(f, f, 1, rng)});
    net.trunk = make_conv(f, f, 1, rng);
    net.up = make_conv(f, 4 * f, 1, rng);
    net.tail = make_conv(f, cfg.in_channels, 1, rng);
    // A small residual branch keeps the untrained net close to the identity.
    for (float& v : net.tail.weight.data()) v *= kTailScale;
    return net;
}

std::string to_string(AdaFMPlacement p) { return p == AdaFMPlacement::AllConvs ? "all" : "blocks"; }

AdaFMPlacement parse_placement(const std::string& s) {
    if (s == "blocks") return AdaFMPlacement::ResidualBlocks;
    if (s == "all") return AdaFMPlacement::AllConvs;
    throw std::invalid_argument("unknown AdaFM placement '" + s + "' (expected blocks or all)");
}

std::vector<int> AdaFMNet::modulated_convs() const {
    std::vector<int> out;
    if (placement == AdaFMPlacement::AllConvs) {
        for (std::size_t i = 0; i < base.conv_layers().size(); ++i) out.push_back(static_cast<int>(i));
        return out;
    }
    for (int b = 0; b < static_cast<int>(base.blocks.size()); ++b) {
        out.push_back(BasicNet::block_conv_index(b, 0));
        out.push_back(BasicNet::block_conv_index(b, 1));
    }
    return out;
}

AdaFMNet insert_adafm(const BasicNet& net, int kernel, AdaFMPlacement placement) {
    if (kernel < 1 || kernel % 2 == 0) throw std::invalid_argument("AdaFM kernel must be odd, got " + std::to_string(kernel));
    AdaFMNet out;
    out.base = net;
    out.base.config.adafm_kernel = kernel;
    out.placement = placement;
    const auto convs = net.conv_layers();
    for (int i : out.modulated_convs()) out.adafm.push_back(AdaFMLayer::identity(convs[i]->weight.shape().n, kernel));
    return out;
}

Tensor forward_with_mods(const BasicNet& net, const Tensor& x, std::span<const AdaFMLayer* const> mods,
                         std::vector<Tensor>* conv_inputs) {
    const auto convs = net.conv_layers();
    if (!mods.empty() && mods.size() != convs.size())
        throw std::invalid_argument("forward_with_mods: expected one modifier slot per conv layer");
    const Shape& s = x.shape();
    if (s.c != net.config.in_channels)
        throw DimensionError("input has " + std::to_string(s.c) + " channels, net expects " +
                             std::to_string(net.config.in_channels));
    if (s.h % 2 != 0 || s.w % 2 != 0 || s.h < 2 || s.w < 2)
        throw DimensionError("input spatial size must be even, got " + s.str());

    if (conv_inputs) conv_inputs->clear();
    std::size_t idx = 0;
    auto conv = [&](const ConvLayer& layer, const Tensor& in) {
        if (conv_inputs) conv_inputs->push_back(in);
        const AdaFMLayer* mod = mods.empty() ? nullptr : mods[idx];
        ++idx;
        return run_conv(layer, in, mod);
    };
    Tensor h = relu(conv(net.head, x));
    const Tensor low = relu(conv(net.down, h));
    Tensor r = low;
    for (const auto& block : net.blocks) {
        Tensor t = relu(conv(block.conv1, r));
        t = conv(block.conv2, t);
        r = add(r, t);
    }
    Tensor f = add(low, conv(net.trunk, r));
    Tensor u = relu(pixel_shuffle(conv(net.up, f), 2));
    Tensor y = conv(net.tail, u);
    return add(x, y);
}

Tensor forward(const BasicNet& net, const Tensor& x) { return forward_with_mods(net, x, {}); }

namespace {

Tensor forward_adafm_layers(const AdaFMNet& net, const Tensor& x, const std::vector<AdaFMLayer>& layers) {
    const std::vector<int> slots = net.modulated_convs();
    if (layers.size() != slots.size()) throw std::invalid_argument("AdaFM layer count does not match the placement");
    std::vector<const AdaFMLayer*> mods(net.base.conv_layers().size(), nullptr);
    for (std::size_t i = 0; i < slots.size(); ++i) mods[slots[i]] = &layers[i];
    return forward_with_mods(net.base, x, mods);
}

}  // namespace

Tensor forward(const AdaFMNet& net, const Tensor& x) { return forward_adafm_layers(net, x, net.adafm); }

InterpolatedAdaFM interpolate_adafm(const AdaFMNet& net, float lambda) {
    InterpolatedAdaFM out;
    out.applied_lambda = std::clamp(lambda, 0.0f, 1.0f);
    out.clamped = out.applied_lambda != lambda;
    const float lam = out.applied_lambda;
    const float keep = 1.0f - lam;
    for (const auto& layer : net.adafm) {
        AdaFMLayer mixed = AdaFMLayer::identity(layer.channels(), layer.kernel());
        auto dst = mixed.filter.data();
        auto src = layer.filter.data();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = keep * dst[i] + lam * src[i];
        auto bdst = mixed.bias.data();
        auto bsrc = layer.bias.data();
        for (std::size_t i = 0; i < bdst.size(); ++i) bdst[i] = lam * bsrc[i];
        out.layers.push_back(std::move(mixed));
    }
    return out;
}

Tensor forward_modulated(const AdaFMNet& net, const Tensor& x, float lambda) {
    const InterpolatedAdaFM mixed = interpolate_adafm(net, lambda);
    return forward_adafm_layers(net, x, mixed.layers);
}

Tensor interpolate_filter(const Tensor& f, const Tensor& g, float lambda) {
    const Shape& fs = f.shape();
    const Shape& gs = g.shape();
    if (gs.n != fs.n || gs.c != 1 || gs.h != gs.w || gs.h % 2 == 0 || fs.h != fs.w)
        throw DimensionError("interpolate_filter: depthwise filter " + gs.str() + " incompatible with " + fs.str());
    const int kf = fs.h;
    const int kg = gs.h;
    const int big = kf + kg - 1;
    const int off = kg / 2;

    // Full 2-D convolution of (g - I) with each input-channel slice of f.
    Tensor delta(Shape{fs.n, fs.c, big, big});
    for (int o = 0; o < fs.n; ++o) {
        for (int ky = 0; ky < kg; ++ky) {
            for (int kx = 0; kx < kg; ++kx) {
                float gv = g.at(o, 0, ky, kx);
                if (ky == kg / 2 && kx == kg / 2) gv -= 1.0f;
                if (gv == 0.0f) continue;
                for (int i = 0; i < fs.c; ++i)
                    for (int fy = 0; fy < kf; ++fy)
                        for (int fx = 0; fx < kf; ++fx) delta.at(o, i, fy + ky, fx + kx) += gv * f.at(o, i, fy, fx);
            }
        }
    }

    Tensor out(Shape{fs.n, fs.c, big, big});
    for (int o = 0; o < fs.n; ++o)
        for (int i = 0; i < fs.c; ++i)
            for (int y = 0; y < big; ++y)
                for (int x = 0; x < big; ++x) {
                    const int fy = y - off, fx = x - off;
                    const float base = (fy >= 0 && fy < kf && fx >= 0 && fx < kf) ? f.at(o, i, fy, fx) : 0.0f;
                    out.at(o, i, y, x) = base + lambda * delta.at(o, i, y, x);
                }
    return out;
}

ParamCounts count_params(const BasicNet& net) {
    ParamCounts out;
    for (const ConvLayer* l : net.conv_layers()) out.base_total += weight_count(*l);
    return out;
}

ParamCounts count_params(const AdaFMNet& net) {
    ParamCounts out = count_params(net.base);
    for (const auto& l : net.adafm) out.adafm_total += static_cast<long long>(l.filter.numel());
    out.adafm_fraction = out.base_total > 0 ? static_cast<double>(out.adafm_total) / out.base_total : 0.0;
    return out;
}

double mean_cosine_distance(const BasicNet& a, const BasicNet& b) {
    const auto la = a.conv_layers();
    const auto lb = b.conv_layers();
    if (la.size() != lb.size()) throw std::invalid_argument("mean_cosine_distance: architecture mismatch");
    double total = 0.0;
    long long filters = 0;
    for (std::size_t i = 0; i < la.size(); ++i) {
        const Shape& sa = la[i]->weight.shape();
        if (sa != lb[i]->weight.shape()) throw std::invalid_argument("mean_cosine_distance: architecture mismatch");
        const std::size_t per = static_cast<std::size_t>(sa.c) * sa.h * sa.w;
        auto wa = la[i]->weight.data();
        auto wb = lb[i]->weight.data();
        for (int o = 0; o < sa.n; ++o) {
            double dot = 0.0, na = 0.0, nb = 0.0;
            for (std::size_t j = o * per; j < (o + 1) * per; ++j) {
                dot += static_cast<double>(wa[j]) * wb[j];
                na += static_cast<double>(wa[j]) * wa[j];
                nb += static_cast<double>(wb[j]) * wb[j];
            }
            const double denom = std::sqrt(na) * std::sqrt(nb);
            const double cosine = denom > 0.0 ? dot / denom : (na == nb ? 1.0 : 0.0);
            total += 1.0 - cosine;
            ++filters;
        }
    }
    return filters ? total / filters : 0.0;
}

}  // namespace adafm
