#include <algorithm>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "adafm/checkpoint.hpp"
#include "adafm/modulation.hpp"
#include "adafm/pipeline.hpp"
#include "adafm/service.hpp"

using namespace adafm;
namespace fs = std::filesystem;

namespace {

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    return s.substr(b, s.find_last_not_of(" \t\r\n") - b + 1);
}

std::string fmt(double v) {
    char buf[32];
    const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, end);
}

std::set<std::string>& all_keys() {
    static std::set<std::string> keys{"config"};
    return keys;
}

// Options of one subcommand. Every flag is also a config-file key (the flag
// name without dashes); flags given on the command line win over the file.
class Command {
public:
    Command(CLI::App& parent, const std::string& name, const std::string& help)
        : app_(parent.add_subcommand(name, help)) {
        app_->add_option("--config", config_path_, "key = value file; flags override it");
    }

    Command& opt(const std::string& key, const std::string& help, const std::string& fallback = "") {
        given_[key];
        all_keys().insert(key);
        app_->add_option("--" + key, given_[key], help);
        if (!fallback.empty()) defaults_[key] = fallback;
        return *this;
    }

    CLI::App* app() const { return app_; }

    /// Resolves file, flags and defaults into one map.
    void resolve() {
        if (!config_path_.empty()) {
            std::ifstream is(config_path_);
            if (!is) throw UsageError("cannot read config file " + config_path_);
            std::string line;
            int n = 0;
            while (std::getline(is, line)) {
                ++n;
                if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
                line = trim(line);
                if (line.empty()) continue;
                const auto eq = line.find('=');
                if (eq == std::string::npos)
                    throw UsageError(config_path_ + ":" + std::to_string(n) + ": expected 'key = value'");
                const std::string key = trim(line.substr(0, eq));
                if (!all_keys().count(key))
                    throw UsageError(config_path_ + ":" + std::to_string(n) + ": unknown key '" + key + "'");
                if (!given_.count(key)) continue;  // belongs to another subcommand
                values_[key] = trim(line.substr(eq + 1));
            }
        }
        for (const auto& [key, v] : given_)
            if (app_->count("--" + key)) values_[key] = v;
        for (const auto& [key, v] : defaults_)
            if (!values_.count(key)) values_[key] = v;
    }

    bool has(const std::string& key) const { return values_.count(key) && !values_.at(key).empty(); }

    std::string str(const std::string& key) const {
        if (!has(key)) throw UsageError("missing required option --" + key);
        return values_.at(key);
    }

    template <typename T>
    T num(const std::string& key) const {
        const std::string s = str(key);
        T v{};
        const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
        if (ec != std::errc() || end != s.data() + s.size())
            throw UsageError("--" + key + ": not a valid number: '" + s + "'");
        return v;
    }

    std::vector<double> list(const std::string& key) const {
        std::vector<double> out;
        std::stringstream ss(str(key));
        std::string item;
        while (std::getline(ss, item, ',')) {
            item = trim(item);
            double v = 0;
            const auto [end, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
            if (item.empty() || ec != std::errc() || end != item.data() + item.size())
                throw UsageError("--" + key + ": bad list entry '" + item + "'");
            out.push_back(v);
        }
        return out;
    }

    void set(const std::string& key, const std::string& v) { values_[key] = v; }
    void erase(const std::string& key) { values_.erase(key); }

    /// Writes the resolved options as a config file.
    void write_resolved(const fs::path& path) const {
        std::ofstream os(path);
        for (const auto& [k, v] : values_) os << k << " = " << v << "\n";
        if (!os) throw std::runtime_error("cannot write " + path.string());
    }

private:
    CLI::App* app_;
    std::string config_path_;
    std::map<std::string, std::string> given_;
    std::map<std::string, std::string> defaults_;
    std::map<std::string, std::string> values_;
};

void add_data_opts(Command& c) {
    c.opt("train-dir", "directory of training .pgm/.ppm images (procedural when absent)")
        .opt("eval-dir", "directory of evaluation images (procedural when absent)")
        .opt("train-images", "procedural training images", "64")
        .opt("train-size", "procedural training image size", "96")
        .opt("eval-images", "procedural evaluation images", "4")
        .opt("eval-size", "procedural evaluation image size", "64")
        .opt("data-seed", "procedural image seed", "0")
        .opt("eval-seed", "seed of the frozen evaluation degradations", "777");
}

void add_train_opts(Command& c, const std::string& iterations) {
    c.opt("iterations", "training iterations", iterations)
        .opt("lr", "Adam learning rate", "5e-4")
        .opt("lr-decay", "iteration after which lr drops 10x (default: 2/3 of iterations)")
        .opt("batch", "patches per batch", "8")
        .opt("patch", "patch size (even)", "32")
        .opt("seed", "training seed", "0")
        .opt("eval-every", "evaluation interval", "250");
}

void add_net_opts(Command& c) {
    c.opt("feat", "feature channels", "16").opt("blocks", "residual blocks", "4").opt("channels", "image channels", "1");
}

TrainConfig train_config(const Command& c, const std::string& prefix = "") {
    TrainConfig t = TrainConfig::with_iterations(c.num<int>(prefix + "iterations"));
    t.lr = c.num<float>(prefix + "lr");
    if (c.has(prefix + "lr-decay")) t.lr_decay_step = c.num<int>(prefix + "lr-decay");
    t.batch = c.num<int>("batch");
    t.patch = c.num<int>("patch");
    t.seed = c.num<std::uint64_t>("seed");
    t.eval_every = c.num<int>("eval-every");
    try {
        t.validate();
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
    return t;
}

NetConfig net_config(const Command& c) {
    NetConfig n;
    n.feat_channels = c.num<int>("feat");
    n.num_blocks = c.num<int>("blocks");
    n.in_channels = c.num<int>("channels");
    try {
        n.validate();
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
    return n;
}

std::vector<Image> eval_images(const Command& c, int channels) {
    if (c.has("eval-dir")) return load_image_dir(c.str("eval-dir"));
    DataConfig d;
    d.train_images = 1;
    d.train_size = 16;
    d.eval_images = c.num<int>("eval-images");
    d.eval_size = c.num<int>("eval-size");
    d.seed = c.num<std::uint64_t>("data-seed");
    d.channels = channels;
    return make_procedural_dataset(d).eval;
}

Dataset dataset(const Command& c, int channels) {
    DataConfig d;
    d.train_images = c.num<int>("train-images");
    d.train_size = c.num<int>("train-size");
    d.eval_images = c.num<int>("eval-images");
    d.eval_size = c.num<int>("eval-size");
    d.seed = c.num<std::uint64_t>("data-seed");
    d.eval_seed = c.num<std::uint64_t>("eval-seed");
    d.channels = channels;
    Dataset data = make_procedural_dataset(d);
    if (c.has("train-dir")) data.train = load_image_dir(c.str("train-dir"));
    if (c.has("eval-dir")) data.eval = load_image_dir(c.str("eval-dir"));
    return data;
}

Task task_of(const Command& c, const std::string& fallback = "") {
    const std::string s = c.has("task") ? c.str("task") : fallback;
    if (s.empty()) throw UsageError("missing required option --task");
    try {
        return parse_task(s);
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
}

/// Reads `key` or its 8-bit variant `key-8bit` (divided by 255).
DegradationLevel level_of(Command& c, Task task, const std::string& key) {
    const bool plain = c.has(key), bits = c.has(key + "-8bit");
    if (plain && bits) throw UsageError("give only one of --" + key + " and --" + key + "-8bit");
    if (!plain && !bits) throw UsageError("missing required option --" + key);
    DegradationLevel l{task, plain ? c.num<double>(key) : c.num<double>(key + "-8bit") / 255.0};
    try {
        l.validate();
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
    c.erase(key + "-8bit");
    c.set(key, fmt(l.level));
    return l;
}

fs::path out_dir(const Command& c) {
    const fs::path dir = c.str("out");
    fs::create_directories(dir);
    return dir;
}

ProgressFn printer(const std::string& tag) {
    return [tag](const LogEntry& e) {
        std::printf("%s iter %d loss %.6f psnr %.4f\n", tag.c_str(), e.iter, e.loss, e.psnr);
        std::fflush(stdout);
    };
}

void write_log(const fs::path& path, const TrainLog& log) {
    std::ofstream os(path);
    log.write(os);
}

/// Defaults to 1x1 for denoising and 5x5 for super-resolution.
int adafm_kernel(Command& c, Task task) {
    if (!c.has("adafm-k")) c.set("adafm-k", task == Task::SuperResolve ? "5" : "1");
    const int k = c.num<int>("adafm-k");
    if (k < 1 || k % 2 == 0) throw UsageError("--adafm-k must be a positive odd number");
    return k;
}

AdaFMPlacement placement(const Command& c) {
    try {
        return parse_placement(c.str("adafm-placement"));
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
}

int cmd_train(Command& c) {
    const Task task = task_of(c);
    const DegradationLevel level = level_of(c, task, "level");
    const NetConfig net = net_config(c);
    const TrainConfig tcfg = train_config(c);
    const fs::path dir = out_dir(c);
    c.set("task", to_string(task));
    c.write_resolved(dir / "resolved.cfg");
    std::printf("seed=%llu\n", static_cast<unsigned long long>(tcfg.seed));
    const Dataset data = dataset(c, net.in_channels);
    const TrainResult r = train_basic(net, tcfg, level, data, nullptr, printer("train"));
    save_checkpoint(dir / "basic.ckpt", to_checkpoint(r.net, {{"task", to_string(task)}, {"level", fmt(level.level)}}));
    write_log(dir / "train.log", r.log);
    std::printf("wrote %s\n", (dir / "basic.ckpt").c_str());
    return 0;
}

int cmd_adapt(Command& c) {
    const Checkpoint base_ckpt = load_checkpoint(c.str("base"));
    const BasicNet base = basic_net_from_checkpoint(base_ckpt);
    const Task task = task_of(c, base_ckpt.get("task"));
    const DegradationLevel level_b = level_of(c, task, "level-b");
    const int k = adafm_kernel(c, task);
    const AdaFMPlacement where = placement(c);
    const TrainConfig tcfg = train_config(c);
    const fs::path dir = out_dir(c);
    c.set("task", to_string(task));
    c.write_resolved(dir / "resolved.cfg");
    std::printf("seed=%llu\n", static_cast<unsigned long long>(tcfg.seed));
    const Dataset data = dataset(c, base.config.in_channels);
    const AdaptResult r = adapt(insert_adafm(base, k, where), level_b, tcfg, data, printer("adapt"));
    std::map<std::string, std::string> meta{{"task", to_string(task)}, {"level_b", fmt(level_b.level)}};
    if (!base_ckpt.get("level").empty()) meta["level_a"] = base_ckpt.get("level");
    save_checkpoint(dir / "adafm.ckpt", to_checkpoint(r.net, meta));
    write_log(dir / "adapt.log", r.log);
    std::printf("wrote %s\n", (dir / "adafm.ckpt").c_str());
    return 0;
}

int cmd_study(Command& c) {
    const Task task = task_of(c);
    const std::vector<double> levels = c.list("pairs");
    if (levels.empty() || levels.size() % 2) throw UsageError("--pairs needs start,end,start,end,...");
    std::vector<std::pair<DegradationLevel, DegradationLevel>> pairs;
    for (std::size_t i = 0; i < levels.size(); i += 2) pairs.push_back({{task, levels[i]}, {task, levels[i + 1]}});
    StudyConfig cfg;
    cfg.net = net_config(c);
    cfg.basic = train_config(c);
    cfg.adapt = train_config(c, "adapt-");
    cfg.adafm_kernel = adafm_kernel(c, task);
    cfg.placement = placement(c);
    const fs::path dir = out_dir(c);
    c.write_resolved(dir / "resolved.cfg");
    std::printf("seed=%llu\n", static_cast<unsigned long long>(cfg.basic.seed));
    const Dataset data = dataset(c, cfg.net.in_channels);
    const auto reports = adaptation_study(pairs, cfg, data, [](const std::string& m) {
        std::printf("%s\n", m.c_str());
        std::fflush(stdout);
    });
    std::ofstream os(dir / "study.csv");
    write_study_csv(os, reports);
    write_study_csv(std::cout, reports);
    for (const auto& r : reports)
        if (!r.error.empty()) std::fprintf(stderr, "cell %s -> %s failed: %s\n", r.start_level.str().c_str(),
                                           r.end_level.str().c_str(), r.error.c_str());
    return 0;
}

int cmd_bridge(Command& c) {
    const Checkpoint ca = load_checkpoint(c.str("net-a"));
    const Checkpoint cb = load_checkpoint(c.str("net-b"));
    const BasicNet a = basic_net_from_checkpoint(ca);
    const BasicNet b = basic_net_from_checkpoint(cb);
    const Task task = task_of(c, cb.get("task"));
    if (!c.has("level") && !c.has("level-8bit") && !cb.get("level").empty()) c.set("level", cb.get("level"));
    const DegradationLevel level = level_of(c, task, "level");
    const int k = adafm_kernel(c, Task::Denoise);
    BridgeConfig bcfg;
    bcfg.steps = c.num<int>("steps");
    bcfg.lr = c.num<float>("bridge-lr");
    const std::uint64_t seed = c.num<std::uint64_t>("seed");
    const fs::path dir = out_dir(c);
    c.write_resolved(dir / "resolved.cfg");
    std::printf("seed=%llu\n", static_cast<unsigned long long>(seed));
    const Dataset data = dataset(c, a.config.in_channels);
    RandomSource rng(seed);
    const Tensor probe = sample_patch_batch(data.train, level, c.num<int>("patch"), c.num<int>("batch"), rng).lq;
    const EvalSet eval = make_eval_set(data.eval, level, data.eval_seed);
    const BridgeResult r = filter_bridge(a, b, k, probe, eval, bcfg);
    std::ofstream os(dir / "bridge.csv");
    os << "layer,initial_residual,residual\n";
    char line[128];
    for (std::size_t i = 0; i < r.residual.size(); ++i) {
        std::snprintf(line, sizeof line, "%zu,%.8g,%.8g\n", i, r.initial_residual[i], r.residual[i]);
        os << line;
    }
    std::printf("psnr_a=%.4f psnr_b=%.4f psnr_bridged=%.4f gap_raw=%.4f gap_bridged=%.4f\n", r.psnr_a, r.psnr_b,
                r.psnr_bridged, r.gap_raw(), r.gap_bridged());
    return 0;
}

int cmd_fit_curve(Command& c) {
    const Checkpoint ckpt = load_checkpoint(c.str("net"));
    const AdaFMNet net = adafm_net_from_checkpoint(ckpt);
    const Task task = task_of(c, ckpt.get("task"));
    if (!c.has("la") && !ckpt.get("level_a").empty()) c.set("la", ckpt.get("level_a"));
    if (!c.has("lb") && !ckpt.get("level_b").empty()) c.set("lb", ckpt.get("level_b"));
    const double la = c.num<double>("la"), lb = c.num<double>("lb");
    std::vector<double> interior = c.list("levels");
    std::sort(interior.begin(), interior.end());
    if (la > lb) std::reverse(interior.begin(), interior.end());
    // Straight line for a few interior points, cubic otherwise.
    if (!c.has("order")) c.set("order", interior.size() <= 3 ? "1" : "3");
    int order = c.num<int>("order");
    if (order < 1) throw UsageError("--order must be >= 1");
    if (static_cast<int>(interior.size()) < order - 1)
        throw UsageError("order " + std::to_string(order) + " needs at least " + std::to_string(order - 1) +
                         " interior levels");
    const double step = c.num<double>("step");
    const fs::path out = c.str("out");
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    c.write_resolved(fs::path(out).replace_extension(".resolved.cfg"));

    const std::vector<Image> images = eval_images(c, net.base.config.in_channels);
    const auto eval_seed = c.num<std::uint64_t>("eval-seed");
    std::printf("eval_seed=%llu\n", static_cast<unsigned long long>(eval_seed));
    std::vector<ModulationPoint> points{{la, 0.0, 0.0}};
    std::printf("level,lambda,psnr\n");
    for (double l : interior) {
        const EvalSet set = make_eval_set(images, {task, l}, eval_seed);
        const ModulationPoint p = best_lambda(net, set, step);
        std::printf("%.6f,%.4f,%.4f\n", p.level, p.lambda, p.psnr);
        points.push_back(p);
    }
    points.push_back({lb, 1.0, 0.0});

    ModulationCurve curve;
    for (;; --order) {
        curve = fit_curve(points, order, to_string(task));
        if (curve.monotone || order == 1) break;
        std::fprintf(stderr, "order %d fit is not monotone, trying order %d\n", order, order - 1);
    }
    save_curve(out.string(), curve);
    std::printf("order=%d max_residual=%.6f\nwrote %s\n", curve.order, curve.max_residual, out.c_str());
    return 0;
}

int cmd_restore(Command& c) {
    if (c.has("lambda") == c.has("level")) throw UsageError("give exactly one of --lambda and --level");
    if (c.has("level") && !c.has("curve")) throw UsageError("--level needs --curve");
    const AdaFMNet net = adafm_net_from_checkpoint(load_checkpoint(c.str("net")));
    double lambda = 0.0;
    if (c.has("lambda")) {
        lambda = c.num<double>("lambda");
    } else {
        lambda = predict_lambda(load_curve(c.str("curve")), c.num<double>("level"));
    }
    const float applied = std::clamp(static_cast<float>(lambda), 0.0f, 1.0f);
    if (lambda < 0.0 || lambda > 1.0) std::fprintf(stderr, "lambda %g clamped to %g\n", lambda, applied);
    const Image out = restore_image(net, load_pnm(c.str("in")), applied);
    const fs::path path = c.str("out");
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    save_pnm(path, out);
    std::printf("lambda=%.6f\n", static_cast<double>(applied));
    return 0;
}

int cmd_eval(Command& c) {
    const Checkpoint ckpt = load_checkpoint(c.str("net"));
    const bool modulated = ckpt.config.count("adafm_kernel") > 0;
    const Task task = task_of(c, ckpt.get("task"));
    if (!c.has("level") && !c.has("level-8bit")) {
        const std::string own = modulated ? ckpt.get("level_b") : ckpt.get("level");
        if (!own.empty()) c.set("level", own);
    }
    const DegradationLevel level = level_of(c, task, "level");
    const auto eval_seed = c.num<std::uint64_t>("eval-seed");
    std::fprintf(stderr, "eval_seed=%llu\n", static_cast<unsigned long long>(eval_seed));
    double p = 0.0;
    if (modulated) {
        const AdaFMNet net = adafm_net_from_checkpoint(ckpt);
        const EvalSet set = make_eval_set(eval_images(c, net.base.config.in_channels), level, eval_seed);
        std::optional<float> lambda;
        if (c.has("lambda")) lambda = c.num<float>("lambda");
        p = evaluate(net, lambda, set);
    } else {
        if (c.has("lambda")) throw UsageError("--lambda needs an AdaFM checkpoint");
        const BasicNet net = basic_net_from_checkpoint(ckpt);
        p = evaluate(net, make_eval_set(eval_images(c, net.config.in_channels), level, eval_seed));
    }
    std::printf("psnr=%.4f\n", p);
    return 0;
}

int cmd_serve(Command& c) {
    ServiceOptions opts;
    if (c.has("ui-dir")) opts.ui_dir = c.str("ui-dir");
    opts.max_width = opts.max_height = c.num<int>("max-size");
    const int port = c.num<int>("port");
    if (port < 0 || port > 65535) throw UsageError("--port must be in [0, 65535]");
    std::optional<std::string> curve;
    if (c.has("curve")) curve = c.str("curve");
    auto svc = std::make_shared<RestorationService>(RestorationService::from_files(c.str("model"), curve, opts));
    ServiceServer server(svc);
    const int bound = server.start(c.str("host"), port);
    std::printf("port=%d\n", bound);
    std::fflush(stdout);
    server.wait();
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app("AdaFM restoration toolkit");
    app.require_subcommand(1);

    Command train(app, "train", "train a basic restoration net at one level");
    train.opt("task", "denoise | sr").opt("level", "degradation level").opt("level-8bit", "level in 8-bit units");
    train.opt("out", "output directory");
    add_net_opts(train);
    add_train_opts(train, "3000");
    add_data_opts(train);

    Command adapt_cmd(app, "adapt", "fit AdaFM layers on a frozen basic net");
    adapt_cmd.opt("base", "basic checkpoint").opt("task", "denoise | sr (default: from the checkpoint)");
    adapt_cmd.opt("level-b", "target level").opt("level-b-8bit", "target level in 8-bit units");
    adapt_cmd.opt("adafm-k", "AdaFM filter size (default 1, or 5 for sr)").opt("adafm-placement", "blocks | all", "blocks");
    adapt_cmd.opt("out", "output directory");
    add_train_opts(adapt_cmd, "1500");
    add_data_opts(adapt_cmd);

    Command study(app, "study", "adaptation distance for pairs of levels");
    study.opt("task", "denoise | sr").opt("pairs", "start,end,start,end,...");
    study.opt("adafm-k", "AdaFM filter size (default 1, or 5 for sr)").opt("adafm-placement", "blocks | all", "blocks");
    study.opt("adapt-iterations", "adaptation iterations", "1500").opt("adapt-lr", "adaptation lr", "5e-4");
    study.opt("adapt-lr-decay", "adaptation lr decay iteration");
    study.opt("out", "output directory");
    add_net_opts(study);
    add_train_opts(study, "3000");
    add_data_opts(study);

    Command bridge(app, "bridge", "fit depthwise filters mapping one net onto another");
    bridge.opt("net-a", "source basic checkpoint").opt("net-b", "target basic checkpoint");
    bridge.opt("task", "denoise | sr (default: from net-b)");
    bridge.opt("level", "evaluation level (default: net-b's)").opt("level-8bit", "level in 8-bit units");
    bridge.opt("adafm-k", "filter size", "1").opt("steps", "Adam steps per layer", "500");
    bridge.opt("bridge-lr", "Adam learning rate", "1e-3").opt("seed", "probe seed", "0");
    bridge.opt("batch", "probe patches", "8").opt("patch", "probe patch size", "32");
    bridge.opt("out", "output directory");
    add_data_opts(bridge);

    Command fit(app, "fit-curve", "fit the level -> lambda curve of an AdaFM net");
    fit.opt("net", "AdaFM checkpoint").opt("task", "denoise | sr (default: from the checkpoint)");
    fit.opt("levels", "interior levels, comma separated");
    fit.opt("order", "polynomial order (default 1 for up to 3 levels, else 3)");
    fit.opt("la", "start level (default: from the checkpoint)").opt("lb", "end level (default: from the checkpoint)");
    fit.opt("step", "lambda sweep step", "0.01").opt("out", "curve file");
    fit.opt("eval-dir", "evaluation images (procedural when absent)");
    fit.opt("eval-images", "procedural evaluation images", "4").opt("eval-size", "procedural image size", "64");
    fit.opt("data-seed", "procedural image seed", "0").opt("eval-seed", "degradation seed", "777");

    Command restore(app, "restore", "restore one image");
    restore.opt("net", "AdaFM checkpoint").opt("lambda", "interpolation coefficient");
    restore.opt("level", "degradation level, mapped through --curve").opt("curve", "curve file");
    restore.opt("in", "input .pgm/.ppm").opt("out", "output .pgm/.ppm");

    Command eval(app, "eval", "mean PSNR on the evaluation set");
    eval.opt("net", "basic or AdaFM checkpoint").opt("task", "denoise | sr (default: from the checkpoint)");
    eval.opt("level", "degradation level (default: from the checkpoint)").opt("level-8bit", "level in 8-bit units");
    eval.opt("lambda", "AdaFM interpolation coefficient (default 1)");
    eval.opt("eval-dir", "evaluation images (procedural when absent)");
    eval.opt("eval-images", "procedural evaluation images", "4").opt("eval-size", "procedural image size", "64");
    eval.opt("data-seed", "procedural image seed", "0").opt("eval-seed", "degradation seed", "777");

    Command serve(app, "serve", "HTTP restoration service");
    serve.opt("model", "AdaFM checkpoint").opt("curve", "curve file").opt("ui-dir", "static UI bundle");
    serve.opt("host", "bind address", "127.0.0.1").opt("port", "port (0 picks a free one)", "8080");
    serve.opt("max-size", "largest accepted width/height", "1024");

    const std::vector<std::pair<Command*, int (*)(Command&)>> commands{
        {&train, cmd_train}, {&adapt_cmd, cmd_adapt}, {&study, cmd_study},     {&bridge, cmd_bridge},
        {&fit, cmd_fit_curve}, {&restore, cmd_restore}, {&eval, cmd_eval}, {&serve, cmd_serve}};

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }
    for (auto& [cmd, run] : commands) {
        if (!cmd->app()->parsed()) continue;
        try {
            cmd->resolve();
            return run(*cmd);
        } catch (const UsageError& e) {
            std::fprintf(stderr, "usage error: %s\n", e.what());
            return 2;
        } catch (const std::exception& e) {
            std::fprintf(stderr, "error: %s\n", e.what());
            return 1;
        }
    }
    return 2;
}
