#include "adafm/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

namespace adafm {

namespace {

constexpr char kMagic[4] = {'A', 'F', 'M', 'C'};
constexpr std::uint8_t kDtypeF32 = 0;

class Writer {
public:
    void bytes(const void* p, std::size_t n) {
        const auto* b = static_cast<const std::uint8_t*>(p);
        out_.insert(out_.end(), b, b + n);
    }
    void u8(std::uint8_t v) { out_.push_back(v); }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    std::vector<std::uint8_t> take() { return std::move(out_); }

private:
    std::vector<std::uint8_t> out_;
};

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

    void need(std::size_t n, const char* what) const {
        if (in_.size() - pos_ < n) throw CheckpointError(std::string("checkpoint truncated while reading ") + what);
    }
    std::uint8_t u8(const char* what) {
        need(1, what);
        return in_[pos_++];
    }
    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in_[pos_ + i]) << (8 * i);
        pos_ += 4;
        return v;
    }
    std::string str(std::size_t n, const char* what) {
        need(n, what);
        std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
        pos_ += n;
        return s;
    }
    [[nodiscard]] bool done() const { return pos_ == in_.size(); }

private:
    std::span<const std::uint8_t> in_;
    std::size_t pos_ = 0;
};

std::string config_text(const std::map<std::string, std::string>& cfg) {
    std::string out;
    for (const auto& [k, v] : cfg) out += k + "=" + v + "\n";
    return out;
}

std::map<std::string, std::string> parse_config_text(const std::string& text) {
    std::map<std::string, std::string> out;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw CheckpointError("malformed config line in checkpoint: " + line);
        out[line.substr(0, eq)] = line.substr(eq + 1);
    }
    return out;
}

int config_int(const Checkpoint& ckpt, const std::string& key) {
    const auto it = ckpt.config.find(key);
    if (it == ckpt.config.end()) throw CheckpointError("checkpoint config lacks '" + key + "'");
    try {
        return std::stoi(it->second);
    } catch (const std::exception&) {
        throw CheckpointError("checkpoint config '" + key + "' is not an integer");
    }
}

Tensor take_tensor(const Checkpoint& ckpt, const std::string& name, const Shape& expected) {
    const Tensor& t = ckpt.tensor(name);
    if (t.shape() != expected)
        throw CheckpointError("tensor '" + name + "' has shape " + t.shape().str() + ", expected " + expected.str());
    return t.clone();
}

void fill_conv(const Checkpoint& ckpt, const std::string& name, ConvLayer& layer) {
    layer.weight = take_tensor(ckpt, name + ".weight", layer.weight.shape());
    layer.bias = take_tensor(ckpt, name + ".bias", layer.bias.shape());
}

std::map<std::string, std::string> net_config_entries(const NetConfig& cfg) {
    std::map<std::string, std::string> out{
        {"in_channels", std::to_string(cfg.in_channels)},
        {"feat_channels", std::to_string(cfg.feat_channels)},
        {"num_blocks", std::to_string(cfg.num_blocks)},
    };
    if (cfg.adafm_kernel) out["adafm_kernel"] = std::to_string(*cfg.adafm_kernel);
    return out;
}

}  // namespace

const Tensor& Checkpoint::tensor(const std::string& name) const {
    for (const auto& [n, t] : tensors)
        if (n == name) return t;
    throw CheckpointError("checkpoint has no tensor named '" + name + "'");
}

std::string Checkpoint::get(const std::string& key, const std::string& fallback) const {
    const auto it = config.find(key);
    return it == config.end() ? fallback : it->second;
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
    Writer w;
    w.bytes(kMagic, 4);
    w.u32(Checkpoint::kVersion);
    const std::string text = config_text(ckpt.config);
    w.u32(static_cast<std::uint32_t>(text.size()));
    w.bytes(text.data(), text.size());
    w.u32(static_cast<std::uint32_t>(ckpt.tensors.size()));
    for (const auto& [name, t] : ckpt.tensors) {
        w.u32(static_cast<std::uint32_t>(name.size()));
        w.bytes(name.data(), name.size());
        w.u8(kDtypeF32);
        w.u8(4);
        const Shape& s = t.shape();
        for (int d : {s.n, s.c, s.h, s.w}) w.u32(static_cast<std::uint32_t>(d));
        for (float v : t.data()) w.f32(v);
    }
    return w.take();
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
    Reader r(bytes);
    if (r.str(4, "magic") != std::string(kMagic, 4)) throw CheckpointError("not a checkpoint file (bad magic)");
    const std::uint32_t version = r.u32("version");
    if (version != Checkpoint::kVersion)
        throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
    Checkpoint ckpt;
    const std::uint32_t text_len = r.u32("config length");
    ckpt.config = parse_config_text(r.str(text_len, "config text"));
    const std::uint32_t count = r.u32("tensor count");
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t name_len = r.u32("tensor name length");
        std::string name = r.str(name_len, "tensor name");
        if (r.u8("dtype") != kDtypeF32) throw CheckpointError("tensor '" + name + "' has unsupported dtype");
        const std::uint8_t ndim = r.u8("ndim");
        if (ndim < 1 || ndim > 4) throw CheckpointError("tensor '" + name + "' has unsupported rank");
        int dims[4] = {1, 1, 1, 1};
        for (int d = 0; d < ndim; ++d) {
            const std::uint32_t v = r.u32("dims");
            if (v > (1u << 28)) throw CheckpointError("tensor '" + name + "' has an implausible dimension");
            dims[d] = static_cast<int>(v);
        }
        const Shape shape{dims[0], dims[1], dims[2], dims[3]};
        r.need(shape.numel() * 4, "tensor payload");
        std::vector<float> values(shape.numel());
        for (float& v : values) v = std::bit_cast<float>(r.u32("tensor payload"));
        ckpt.tensors.emplace_back(std::move(name), Tensor(shape, std::move(values)));
    }
    if (!r.done()) throw CheckpointError("trailing bytes after checkpoint tensor table");
    return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    const auto bytes = encode_checkpoint(ckpt);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError("failed writing " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_checkpoint(bytes);
}

Checkpoint to_checkpoint(const BasicNet& net, const std::map<std::string, std::string>& extra) {
    Checkpoint ckpt;
    ckpt.config = extra;
    for (auto& [k, v] : net_config_entries(net.config)) ckpt.config[k] = v;
    ckpt.config.erase("adafm_kernel");
    ckpt.config.erase("adafm_placement");
    for (auto& [name, t] : net.named_tensors()) ckpt.tensors.emplace_back(name, t);
    return ckpt;
}

Checkpoint to_checkpoint(const AdaFMNet& net, const std::map<std::string, std::string>& extra) {
    Checkpoint ckpt;
    ckpt.config = extra;
    NetConfig cfg = net.base.config;
    cfg.adafm_kernel = net.kernel();
    for (auto& [k, v] : net_config_entries(cfg)) ckpt.config[k] = v;
    if (net.placement != AdaFMPlacement::ResidualBlocks) ckpt.config["adafm_placement"] = to_string(net.placement);
    for (auto& [name, t] : net.named_tensors()) ckpt.tensors.emplace_back(name, t);
    return ckpt;
}

NetConfig config_from_checkpoint(const Checkpoint& ckpt) {
    NetConfig cfg;
    cfg.in_channels = config_int(ckpt, "in_channels");
    cfg.feat_channels = config_int(ckpt, "feat_channels");
    cfg.num_blocks = config_int(ckpt, "num_blocks");
    if (ckpt.config.count("adafm_kernel")) cfg.adafm_kernel = config_int(ckpt, "adafm_kernel");
    try {
        cfg.validate();
    } catch (const std::invalid_argument& e) {
        throw CheckpointError(std::string("invalid net config in checkpoint: ") + e.what());
    }
    return cfg;
}

BasicNet basic_net_from_checkpoint(const Checkpoint& ckpt) {
    NetConfig cfg = config_from_checkpoint(ckpt);
    cfg.adafm_kernel.reset();
    // Build a skeleton with the right shapes, then overwrite every tensor.
    RandomSource rng(0);
    BasicNet net = build_basic_net(cfg, rng);
    fill_conv(ckpt, "head", net.head);
    fill_conv(ckpt, "down", net.down);
    for (std::size_t i = 0; i < net.blocks.size(); ++i) {
        fill_conv(ckpt, "blocks." + std::to_string(i) + ".conv1", net.blocks[i].conv1);
        fill_conv(ckpt, "blocks." + std::to_string(i) + ".conv2", net.blocks[i].conv2);
    }
    fill_conv(ckpt, "trunk", net.trunk);
    fill_conv(ckpt, "up", net.up);
    fill_conv(ckpt, "tail", net.tail);
    return net;
}

AdaFMNet adafm_net_from_checkpoint(const Checkpoint& ckpt) {
    const NetConfig cfg = config_from_checkpoint(ckpt);
    if (!cfg.adafm_kernel) throw CheckpointError("checkpoint holds a basic net without AdaFM layers");
    AdaFMPlacement placement = AdaFMPlacement::ResidualBlocks;
    try {
        placement = parse_placement(ckpt.get("adafm_placement", "blocks"));
    } catch (const std::invalid_argument& e) {
        throw CheckpointError(e.what());
    }
    AdaFMNet net = insert_adafm(basic_net_from_checkpoint(ckpt), *cfg.adafm_kernel, placement);
    for (std::size_t i = 0; i < net.adafm.size(); ++i) {
        auto& layer = net.adafm[i];
        layer.filter = take_tensor(ckpt, "adafm." + std::to_string(i) + ".filter", layer.filter.shape());
        layer.bias = take_tensor(ckpt, "adafm." + std::to_string(i) + ".bias", layer.bias.shape());
    }
    return net;
}

}  // namespace adafm
