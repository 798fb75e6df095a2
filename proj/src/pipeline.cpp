#include "adafm/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <iomanip>
#include <map>
#include <sstream>

#include "adafm/adam.hpp"
#include "adafm/ops.hpp"

namespace adafm {

namespace fs = std::filesystem;

void TrainConfig::validate() const {
    if (iterations < 1) throw std::invalid_argument("iterations must be positive");
    if (!(lr > 0.0f)) throw std::invalid_argument("lr must be positive");
    if (lr_decay_step < 1) throw std::invalid_argument("lr_decay_step must be positive");
    if (batch < 1) throw std::invalid_argument("batch must be positive");
    if (patch < 2 || patch % 2 != 0) throw std::invalid_argument("patch must be a positive even number");
    if (eval_every < 1) throw std::invalid_argument("eval_every must be positive");
}

TrainConfig TrainConfig::with_iterations(int iterations) {
    TrainConfig t;
    t.iterations = iterations;
    t.lr_decay_step = std::max(1, iterations * 2 / 3);
    return t;
}

Dataset make_procedural_dataset(const DataConfig& cfg) {
    if (cfg.train_images < 1 || cfg.eval_images < 1) throw std::invalid_argument("dataset needs at least one image");
    Dataset d;
    d.eval_seed = cfg.eval_seed;
    const RandomSource root(cfg.seed);
    // Eval images use a separate fork so they never coincide with training ones.
    const RandomSource train_root = root.fork(1);
    const RandomSource eval_root = root.fork(2);
    for (int i = 0; i < cfg.train_images; ++i)
        d.train.push_back(gen_procedural_image(train_root.fork(i).seed(), cfg.train_size, cfg.train_size, cfg.channels));
    for (int i = 0; i < cfg.eval_images; ++i)
        d.eval.push_back(gen_procedural_image(eval_root.fork(i).seed(), cfg.eval_size, cfg.eval_size, cfg.channels));
    return d;
}

std::vector<Image> load_image_dir(const std::string& dir) {
    if (!fs::is_directory(dir)) throw ImageFormatError("not a directory: " + dir);
    std::vector<fs::path> paths;
    for (const auto& entry : fs::directory_iterator(dir)) {
        const auto ext = entry.path().extension().string();
        if (entry.is_regular_file() && (ext == ".pgm" || ext == ".ppm")) paths.push_back(entry.path());
    }
    std::sort(paths.begin(), paths.end());
    std::vector<Image> out;
    for (const auto& p : paths) out.push_back(load_pnm(p));
    if (out.empty()) throw ImageFormatError("no .pgm/.ppm images in " + dir);
    return out;
}

namespace {

// The net needs even spatial sizes; odd images lose their last row/column.
Image crop_even(const Image& img) {
    const int h = img.h - img.h % 2, w = img.w - img.w % 2;
    if (h == img.h && w == img.w) return img;
    Image out(h, w, img.channels);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < img.channels; ++c) out.at(y, x, c) = img.at(y, x, c);
    return out;
}

Image pad_even(const Image& img) {
    const int h = img.h + img.h % 2, w = img.w + img.w % 2;
    if (h == img.h && w == img.w) return img;
    Image out(h, w, img.channels);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < img.channels; ++c)
                out.at(y, x, c) = img.at(std::min(y, img.h - 1), std::min(x, img.w - 1), c);
    return out;
}

Image crop(const Image& img, int h, int w) {
    Image out(h, w, img.channels);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < img.channels; ++c) out.at(y, x, c) = img.at(y, x, c);
    return out;
}

double score(const Image& out, const Image& clean, Task task) {
    return task == Task::SuperResolve ? psnr_y(out, clean) : psnr(out, clean);
}

}  // namespace

EvalSet make_eval_set(std::span<const Image> clean, const DegradationLevel& level, std::uint64_t eval_seed) {
    if (clean.empty()) throw std::invalid_argument("empty evaluation set");
    EvalSet set;
    set.level = level;
    for (const Image& img : clean) set.clean.push_back(crop_even(img));
    set.degraded = degrade_eval_set(set.clean, level, eval_seed);
    return set;
}

double evaluate(const Restorer& restore, const EvalSet& set) {
    if (set.clean.empty()) throw std::invalid_argument("empty evaluation set");
    NoGradGuard guard;
    double total = 0.0;
    for (std::size_t i = 0; i < set.clean.size(); ++i) {
        Image out = tensor_to_image(restore(image_to_tensor(set.degraded[i])));
        out.clamp01();
        total += score(out, set.clean[i], set.level.task);
    }
    return total / static_cast<double>(set.clean.size());
}

double evaluate(const BasicNet& net, const EvalSet& set) {
    return evaluate([&](const Tensor& x) { return forward(net, x); }, set);
}

double evaluate(const AdaFMNet& net, std::optional<float> lambda, const EvalSet& set) {
    if (!lambda) return evaluate([&](const Tensor& x) { return forward(net, x); }, set);
    return evaluate([&](const Tensor& x) { return forward_modulated(net, x, *lambda); }, set);
}

double evaluate_identity(const EvalSet& set) {
    return evaluate([](const Tensor& x) { return x; }, set);
}

Image restore_image(const AdaFMNet& net, const Image& input, float lambda) {
    const int nc = net.base.config.in_channels;
    if (input.channels != 1 && input.channels != 3) throw std::invalid_argument("channels must be 1 or 3");
    const Image padded = pad_even(input);
    NoGradGuard guard;
    Image out;
    if (input.channels == nc) {
        out = tensor_to_image(forward_modulated(net, image_to_tensor(padded), lambda));
    } else if (nc == 1) {
        // Grayscale model on a color image: every channel is its own sample.
        std::vector<Image> planes(input.channels, Image(padded.h, padded.w, 1));
        for (int y = 0; y < padded.h; ++y)
            for (int x = 0; x < padded.w; ++x)
                for (int c = 0; c < input.channels; ++c) planes[c].at(y, x, 0) = padded.at(y, x, c);
        const Tensor t = forward_modulated(net, images_to_tensor(planes), lambda);
        out = Image(padded.h, padded.w, input.channels);
        for (int c = 0; c < input.channels; ++c) {
            const Image plane = tensor_to_image(t, c);
            for (int y = 0; y < padded.h; ++y)
                for (int x = 0; x < padded.w; ++x) out.at(y, x, c) = plane.at(y, x, 0);
        }
    } else {
        // Color model on a grayscale image: replicate, then average back.
        Image rgb(padded.h, padded.w, nc);
        for (int y = 0; y < padded.h; ++y)
            for (int x = 0; x < padded.w; ++x)
                for (int c = 0; c < nc; ++c) rgb.at(y, x, c) = padded.at(y, x, 0);
        const Image res = tensor_to_image(forward_modulated(net, image_to_tensor(rgb), lambda));
        out = Image(padded.h, padded.w, 1);
        for (int y = 0; y < padded.h; ++y)
            for (int x = 0; x < padded.w; ++x) {
                float s = 0.0f;
                for (int c = 0; c < nc; ++c) s += res.at(y, x, c);
                out.at(y, x, 0) = s / static_cast<float>(nc);
            }
    }
    out = crop(out, input.h, input.w);
    out.clamp01();
    return out;
}

std::vector<double> TrainLog::smoothed(int window) const {
    if (window < 1) throw std::invalid_argument("window must be positive");
    std::vector<double> out(losses.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < losses.size(); ++i) {
        acc += losses[i];
        if (i >= static_cast<std::size_t>(window)) acc -= losses[i - window];
        out[i] = acc / static_cast<double>(std::min<std::size_t>(i + 1, window));
    }
    return out;
}

double TrainLog::upward_violation_fraction(int window, double tolerance) const {
    if (window < 1) throw std::invalid_argument("window must be positive");
    std::vector<double> blocks;
    for (std::size_t start = 0; start + window <= losses.size(); start += window) {
        double s = 0.0;
        for (int i = 0; i < window; ++i) s += losses[start + i];
        blocks.push_back(s / window);
    }
    if (blocks.size() < 2) return 0.0;
    int bad = 0;
    for (std::size_t i = 1; i < blocks.size(); ++i)
        if (blocks[i] > blocks[i - 1] * (1.0 + tolerance)) ++bad;
    return static_cast<double>(bad) / static_cast<double>(blocks.size() - 1);
}

void TrainLog::write(std::ostream& os) const {
    std::ostringstream line;
    for (const LogEntry& e : entries) {
        line.str("");
        line << std::fixed << std::setprecision(6) << "iter " << e.iter << " loss " << e.loss << " psnr "
             << std::setprecision(4) << e.psnr << '\n';
        os << line.str();
    }
}

namespace {

void set_requires_grad(std::vector<Tensor>& params, bool on) {
    for (Tensor& p : params) p.set_requires_grad(on);
}

// Shared optimization loop for basic training and adaptation. `params` are
// the only tensors the optimizer touches.
TrainLog run_training(const std::function<Tensor(const Tensor&)>& model, std::vector<Tensor>& params,
                      const TrainConfig& tcfg, const DegradationLevel& level, const Dataset& data,
                      const ProgressFn& progress) {
    tcfg.validate();
    level.validate();
    if (data.train.empty()) throw std::invalid_argument("empty training set");

    std::vector<Image> pre;
    if (level.task == Task::SuperResolve)
        for (const Image& img : data.train) pre.push_back(degrade_sr(img, level.level));
    const EvalSet eval = make_eval_set(data.eval, level, data.eval_seed);

    AdamState adam;
    const RandomSource root(tcfg.seed);
    TrainLog log;
    double since_last = 0.0;
    int count = 0;
    set_requires_grad(params, true);
    try {
        for (int it = 1; it <= tcfg.iterations; ++it) {
            adam.learning_rate = it > tcfg.lr_decay_step ? tcfg.lr * 0.1f : tcfg.lr;
            RandomSource rng = root.fork(static_cast<std::uint64_t>(it));
            const PatchBatch batch = sample_patch_batch(data.train, level, tcfg.patch, tcfg.batch, rng, pre);
            double loss_value = 0.0;
            try {
                const Tensor loss = l1_loss(model(batch.lq), batch.gt);
                loss_value = loss.item();
                zero_grads(params);
                backward(loss);
            } catch (const NumericError& e) {
                throw TrainingError("training diverged at iteration " + std::to_string(it) + ": " + e.what());
            }
            if (!std::isfinite(loss_value))
                throw TrainingError("training diverged at iteration " + std::to_string(it) + ": loss is not finite");
            adam_step(params, adam);
            log.losses.push_back(loss_value);
            since_last += loss_value;
            ++count;
            if (it % tcfg.eval_every == 0 || it == tcfg.iterations) {
                LogEntry e{it, since_last / count, evaluate(model, eval)};
                log.entries.push_back(e);
                if (progress) progress(e);
                since_last = 0.0;
                count = 0;
            }
        }
    } catch (...) {
        set_requires_grad(params, false);
        throw;
    }
    zero_grads(params);
    set_requires_grad(params, false);
    for (Tensor& p : params) p.impl()->grad.clear();
    return log;
}

}  // namespace

TrainResult train_basic(const NetConfig& cfg, const TrainConfig& tcfg, const DegradationLevel& level,
                        const Dataset& data, const BasicNet* init, const ProgressFn& progress) {
    cfg.validate();
    TrainResult result;
    if (init) {
        result.net = *init;
        for (ConvLayer* l : result.net.conv_layers()) {
            l->weight = l->weight.clone();
            l->bias = l->bias.clone();
        }
    } else {
        RandomSource rng = RandomSource(tcfg.seed).fork(0x1417);
        result.net = build_basic_net(cfg, rng);
    }
    if (!data.train.empty() && data.train.front().channels != result.net.config.in_channels)
        throw DimensionError("training images have " + std::to_string(data.train.front().channels) +
                             " channels, net expects " + std::to_string(result.net.config.in_channels));
    std::vector<Tensor> params = result.net.parameters();
    const BasicNet& net = result.net;
    result.log = run_training([&](const Tensor& x) { return forward(net, x); }, params, tcfg, level, data, progress);
    return result;
}

AdaptResult adapt(const AdaFMNet& net, const DegradationLevel& level_b, const TrainConfig& tcfg, const Dataset& data,
                  const ProgressFn& progress) {
    if (net.adafm.empty() || net.adafm.size() != net.modulated_convs().size())
        throw std::invalid_argument("adapt needs a net built by insert_adafm");
    AdaptResult result;
    result.net = net;
    for (AdaFMLayer& l : result.net.adafm) {
        l.filter = l.filter.clone();
        l.bias = l.bias.clone();
    }
    std::vector<Tensor> base = result.net.base.parameters();
    set_requires_grad(base, false);
    std::vector<Tensor> params = result.net.adafm_parameters();
    const AdaFMNet& model = result.net;
    result.log = run_training([&](const Tensor& x) { return forward(model, x); }, params, tcfg, level_b, data, progress);
    return result;
}

std::string to_string(Direction d) {
    switch (d) {
        case Direction::EasyToHard: return "easy->hard";
        case Direction::HardToEasy: return "hard->easy";
        case Direction::Same: return "same";
    }
    return "?";
}

std::vector<AdaptationReport> adaptation_study(const std::vector<std::pair<DegradationLevel, DegradationLevel>>& pairs,
                                               const StudyConfig& cfg, const Dataset& data,
                                               const StudyProgressFn& progress) {
    struct Trained {
        std::optional<BasicNet> net;
        std::string error;
    };
    std::map<std::string, Trained> basics;
    auto basic_for = [&](const DegradationLevel& level) -> const Trained& {
        const std::string key = level.str();
        auto it = basics.find(key);
        if (it != basics.end()) return it->second;
        Trained t;
        try {
            if (progress) progress("training basic net at " + key);
            t.net = train_basic(cfg.net, cfg.basic, level, data).net;
        } catch (const std::exception& e) {
            t.error = e.what();
        }
        return basics.emplace(key, std::move(t)).first->second;
    };

    std::vector<AdaptationReport> out;
    for (const auto& [start, end] : pairs) {
        AdaptationReport r;
        r.start_level = start;
        r.end_level = end;
        r.direction = end.level > start.level   ? Direction::EasyToHard
                      : end.level < start.level ? Direction::HardToEasy
                                                : Direction::Same;
        try {
            if (start.task != end.task) throw std::invalid_argument("start and end levels belong to different tasks");
            const Trained& from = basic_for(start);
            if (!from.net) throw std::runtime_error(from.error);
            const Trained& target = basic_for(end);
            if (!target.net) throw std::runtime_error(target.error);
            if (progress) progress("adapting " + start.str() + " -> " + end.str());
            const AdaptResult adapted = adapt(insert_adafm(*from.net, cfg.adafm_kernel, cfg.placement), end, cfg.adapt, data);
            const EvalSet eval = make_eval_set(data.eval, end, data.eval_seed);
            r.psnr_adapted = evaluate(adapted.net, std::nullopt, eval);
            r.psnr_baseline = evaluate(*target.net, eval);
            r.distance = std::abs(r.psnr_baseline - r.psnr_adapted);
        } catch (const std::exception& e) {
            r.error = e.what();
        }
        out.push_back(r);
    }
    return out;
}

void write_study_csv(std::ostream& os, const std::vector<AdaptationReport>& reports) {
    std::ostringstream s;
    s << "start,end,psnr_adapted,psnr_baseline,distance,direction\n";
    s << std::fixed << std::setprecision(4);
    for (const auto& r : reports) {
        s << r.start_level.level << ',' << r.end_level.level << ',';
        if (r.error.empty())
            s << r.psnr_adapted << ',' << r.psnr_baseline << ',' << r.distance;
        else
            s << "nan,nan,nan";
        s << ',' << to_string(r.direction) << '\n';
    }
    os << s.str();
}

namespace {

void check_same_architecture(const BasicNet& a, const BasicNet& b) {
    const auto la = a.conv_layers(), lb = b.conv_layers();
    bool same = la.size() == lb.size() && a.config.in_channels == b.config.in_channels;
    for (std::size_t i = 0; same && i < la.size(); ++i)
        same = la[i]->weight.shape() == lb[i]->weight.shape() && la[i]->stride == lb[i]->stride;
    if (!same) throw std::invalid_argument("filter_bridge: networks have different architectures");
}

}  // namespace

BridgeResult filter_bridge(const BasicNet& a, const BasicNet& b, int k, const Tensor& probe, const EvalSet& eval,
                           const BridgeConfig& cfg) {
    check_same_architecture(a, b);
    if (k < 1 || k % 2 == 0) throw std::invalid_argument("bridge kernel must be odd");
    if (cfg.steps < 0) throw std::invalid_argument("bridge steps must be non-negative");

    std::vector<Tensor> inputs;
    {
        NoGradGuard guard;
        (void)forward_with_mods(a, probe, {}, &inputs);
    }
    const auto la = a.conv_layers(), lb = b.conv_layers();
    BridgeResult result;
    for (std::size_t i = 0; i < la.size(); ++i) {
        Tensor ya, yb;
        {
            NoGradGuard guard;
            ya = conv2d(inputs[i], la[i]->weight, la[i]->bias, {la[i]->stride, la[i]->weight.shape().h / 2, 1});
            yb = conv2d(inputs[i], lb[i]->weight, lb[i]->bias, {lb[i]->stride, lb[i]->weight.shape().h / 2, 1});
        }
        AdaFMLayer g = AdaFMLayer::identity(ya.shape().c, k);
        std::vector<Tensor> params{g.filter, g.bias};
        auto residual = [&] {
            NoGradGuard guard;
            return static_cast<double>(mse_loss(apply_adafm(g, ya), yb).item());
        };
        result.initial_residual.push_back(residual());
        AdamState adam;
        adam.learning_rate = cfg.lr;
        set_requires_grad(params, true);
        for (int s = 0; s < cfg.steps; ++s) {
            const Tensor loss = mse_loss(apply_adafm(g, ya), yb);
            zero_grads(params);
            backward(loss);
            adam_step(params, adam);
        }
        set_requires_grad(params, false);
        for (Tensor& p : params) p.impl()->grad.clear();
        result.residual.push_back(residual());
        result.layers.push_back(g);
    }

    std::vector<const AdaFMLayer*> mods;
    for (const AdaFMLayer& l : result.layers) mods.push_back(&l);
    result.psnr_bridged = evaluate([&](const Tensor& x) { return forward_with_mods(a, x, mods); }, eval);
    result.psnr_a = evaluate(a, eval);
    result.psnr_b = evaluate(b, eval);
    return result;
}

std::uint64_t tensor_hash(std::span<const Tensor> tensors) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&](const void* p, std::size_t n) {
        const auto* bytes = static_cast<const unsigned char*>(p);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= bytes[i];
            h *= 0x100000001b3ULL;
        }
    };
    for (const Tensor& t : tensors) {
        const Shape s = t.shape();
        const int dims[4] = {s.n, s.c, s.h, s.w};
        mix(dims, sizeof dims);
        mix(t.data().data(), t.data().size_bytes());
    }
    return h;
}

}  // namespace adafm
