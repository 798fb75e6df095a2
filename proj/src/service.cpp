#include "adafm/service.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "adafm/checkpoint.hpp"
#include "adafm/degrade.hpp"
#include "httplib.h"
#include "json.hpp"

namespace adafm {

namespace fs = std::filesystem;
using nlohmann::json;

std::string base64_encode(const std::vector<unsigned char>& bytes) {
    std::string out(4 * ((bytes.size() + 2) / 3), '\0');
    const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(),
                                  static_cast<int>(bytes.size()));
    out.resize(static_cast<std::size_t>(n));
    return out;
}

std::vector<unsigned char> base64_decode(const std::string& text) {
    if (text.size() % 4 != 0) throw std::invalid_argument("base64 length is not a multiple of 4");
    if (text.empty()) return {};
    std::vector<unsigned char> out(text.size() / 4 * 3);
    const int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(text.data()),
                                  static_cast<int>(text.size()));
    if (n < 0) throw std::invalid_argument("invalid base64 payload");
    // DecodeBlock keeps the zero bytes produced by '=' padding.
    std::size_t pad = 0;
    if (text.back() == '=') ++pad;
    if (text.size() >= 2 && text[text.size() - 2] == '=') ++pad;
    out.resize(static_cast<std::size_t>(n) - pad);
    return out;
}

namespace {

HttpReply error_reply(int status, const std::string& message) {
    return {status, json{{"error", message}}.dump(), "application/json"};
}

std::vector<unsigned char> quantize(const Image& img) {
    std::vector<unsigned char> out(img.pixels.size());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = static_cast<unsigned char>(std::round(std::clamp(img.pixels[i], 0.0f, 1.0f) * 255.0f));
    return out;
}

std::string content_type_for(const fs::path& p) {
    const std::string ext = p.extension().string();
    if (ext == ".html") return "text/html";
    if (ext == ".js" || ext == ".mjs") return "text/javascript";
    if (ext == ".css") return "text/css";
    if (ext == ".json") return "application/json";
    if (ext == ".svg") return "image/svg+xml";
    if (ext == ".png") return "image/png";
    if (ext == ".ico") return "image/x-icon";
    return "application/octet-stream";
}

double measure_lipschitz(const RestorationService& svc, int channels) {
    constexpr float kStep = 0.05f;
    std::vector<Image> probes;
    for (std::uint64_t s = 0; s < 2; ++s) {
        const Image clean = gen_procedural_image(9000 + s, 64, 64, channels);
        RandomSource rng(s);
        probes.push_back(degrade_noise(clean, 0.1, rng));
    }
    double worst = 0.0;
    for (const Image& p : probes) {
        std::vector<unsigned char> prev = quantize(svc.run(p, 0.0f));
        for (int i = 1; i <= 20; ++i) {
            const std::vector<unsigned char> cur = quantize(svc.run(p, i * kStep));
            double diff = 0.0;
            for (std::size_t j = 0; j < cur.size(); ++j) diff += std::abs(int(cur[j]) - int(prev[j]));
            worst = std::max(worst, diff / cur.size() / 255.0);
            prev = cur;
        }
    }
    // Twice the worst observed slope, plus room for one quantization level.
    return 2.0 * worst / kStep + (1.0 / 255.0) / kStep;
}

}  // namespace

RestorationService::RestorationService(AdaFMNet net, std::optional<ModulationCurve> curve, ServiceOptions options,
                                       std::map<std::string, std::string> model_meta)
    : net_(std::move(net)), curve_(std::move(curve)), options_(std::move(options)), meta_(std::move(model_meta)) {
    if (net_.adafm.empty()) throw std::invalid_argument("service needs an AdaFM model");
    lipschitz_ = measure_lipschitz(*this, net_.base.config.in_channels);
}

RestorationService RestorationService::from_files(const std::string& model_path,
                                                  const std::optional<std::string>& curve_path,
                                                  ServiceOptions options) {
    const Checkpoint ckpt = load_checkpoint(model_path);
    std::optional<ModulationCurve> curve;
    if (curve_path) curve = load_curve(*curve_path);
    return RestorationService(adafm_net_from_checkpoint(ckpt), curve, std::move(options), ckpt.config);
}

Image RestorationService::run(const Image& input, float lambda) const { return restore_image(net_, input, lambda); }

HttpReply RestorationService::restore(const std::string& body) const {
    int width = 0, height = 0, channels = 0;
    std::string pixels;
    std::optional<double> lambda, level;
    try {
        const json req = json::parse(body);
        if (!req.is_object()) return error_reply(400, "request body must be a JSON object");
        auto get_int = [&](const char* key) {
            if (!req.contains(key) || !req[key].is_number_integer())
                throw std::invalid_argument(std::string("missing or non-integer field '") + key + "'");
            return req[key].get<int>();
        };
        width = get_int("width");
        height = get_int("height");
        channels = get_int("channels");
        if (!req.contains("pixels") || !req["pixels"].is_string())
            throw std::invalid_argument("missing field 'pixels'");
        pixels = req["pixels"].get<std::string>();
        for (const char* key : {"lambda", "level"}) {
            if (!req.contains(key)) continue;
            if (!req[key].is_number()) throw std::invalid_argument(std::string("field '") + key + "' must be a number");
            (std::string(key) == "lambda" ? lambda : level) = req[key].get<double>();
        }
    } catch (const json::exception& e) {
        return error_reply(400, std::string("malformed JSON: ") + e.what());
    } catch (const std::invalid_argument& e) {
        return error_reply(400, e.what());
    }
    if (lambda.has_value() == level.has_value()) return error_reply(400, "give exactly one of 'lambda' and 'level'");
    if (width < 1 || height < 1) return error_reply(400, "width and height must be positive");
    if (channels != 1 && channels != 3) return error_reply(400, "channels must be 1 or 3");
    if (width > options_.max_width || height > options_.max_height)
        return error_reply(413, "image larger than " + std::to_string(options_.max_width) + "x" +
                                    std::to_string(options_.max_height));
    if ((lambda && !std::isfinite(*lambda)) || (level && !std::isfinite(*level)))
        return error_reply(400, "lambda and level must be finite");
    if (level && !curve_) return error_reply(400, "'level' needs a modulation curve, none is loaded");

    std::vector<unsigned char> bytes;
    try {
        bytes = base64_decode(pixels);
    } catch (const std::invalid_argument& e) {
        return error_reply(400, e.what());
    }
    const std::size_t expected = static_cast<std::size_t>(width) * height * channels;
    if (bytes.size() != expected)
        return error_reply(400, "pixel payload has " + std::to_string(bytes.size()) + " bytes, expected " +
                                    std::to_string(expected));

    const double requested = lambda ? *lambda : predict_lambda(*curve_, *level);
    const float applied = std::clamp(static_cast<float>(requested), 0.0f, 1.0f);
    bool clamped = false;
    if (lambda) {
        clamped = static_cast<double>(applied) != *lambda;
    } else {
        const double t = (*level - curve_->la) / (curve_->lb - curve_->la);
        clamped = t < 0.0 || t > 1.0;
    }
    try {
        Image input(height, width, channels);
        for (std::size_t i = 0; i < expected; ++i) input.pixels[i] = static_cast<float>(bytes[i]) / 255.0f;
        const std::vector<unsigned char> out = quantize(run(input, applied));
        Image quantized(height, width, channels);
        for (std::size_t i = 0; i < expected; ++i) quantized.pixels[i] = static_cast<float>(out[i]) / 255.0f;
        const double p = psnr(quantized, input);
        json res{{"width", width},
                 {"height", height},
                 {"channels", channels},
                 {"pixels", base64_encode(out)},
                 {"applied_lambda", applied},
                 {"clamped", clamped},
                 {"psnr_vs_input", std::isfinite(p) ? json(p) : json(nullptr)}};
        return {200, res.dump(), "application/json"};
    } catch (const std::exception& e) {
        return error_reply(500, std::string("restoration failed: ") + e.what());
    }
}

HttpReply RestorationService::info() const {
    const NetConfig& cfg = net_.base.config;
    const ParamCounts pc = count_params(net_);
    json model{{"in_channels", cfg.in_channels},
               {"feat_channels", cfg.feat_channels},
               {"num_blocks", cfg.num_blocks},
               {"adafm_kernel", net_.kernel()}};
    for (const auto& [k, v] : meta_)
        if (!model.contains(k)) model[k] = v;
    json curve = nullptr;
    if (curve_)
        curve = {{"task", curve_->task}, {"La", curve_->la}, {"Lb", curve_->lb}, {"M", curve_->order}, {"w", curve_->w}};
    json res{{"version", kServiceVersion},
             {"model", model},
             {"params", {{"base_total", pc.base_total}, {"adafm_total", pc.adafm_total},
                         {"adafm_fraction", pc.adafm_fraction}}},
             {"curve", curve},
             {"max_width", options_.max_width},
             {"max_height", options_.max_height},
             {"lipschitz_c", lipschitz_}};
    return {200, res.dump(), "application/json"};
}

HttpReply RestorationService::static_file(const std::string& path) const {
    if (!options_.ui_dir) return error_reply(404, "no UI bundle configured");
    std::string rel = path;
    while (!rel.empty() && rel.front() == '/') rel.erase(rel.begin());
    if (rel.empty()) rel = "index.html";
    const fs::path p = fs::path(rel).lexically_normal();
    if (p.is_absolute() || p.empty() || *p.begin() == "..") return error_reply(404, "not found");
    const fs::path full = fs::path(*options_.ui_dir) / p;
    if (!fs::is_regular_file(full)) return error_reply(404, "not found");
    std::ifstream is(full, std::ios::binary);
    std::ostringstream ss;
    ss << is.rdbuf();
    return {200, ss.str(), content_type_for(full)};
}

struct ServiceServer::Impl {
    std::shared_ptr<const RestorationService> service;
    httplib::Server server;
    std::thread thread;
};

ServiceServer::ServiceServer(std::shared_ptr<const RestorationService> service) : impl_(std::make_unique<Impl>()) {
    impl_->service = std::move(service);
    auto send = [](httplib::Response& res, const HttpReply& r) {
        res.status = r.status;
        res.set_content(r.body, r.content_type);
    };
    const RestorationService* svc = impl_->service.get();
    impl_->server.Post("/api/restore", [svc, send](const httplib::Request& req, httplib::Response& res) {
        send(res, svc->restore(req.body));
    });
    impl_->server.Get("/api/info", [svc, send](const httplib::Request&, httplib::Response& res) {
        send(res, svc->info());
    });
    impl_->server.Get(R"(/.*)", [svc, send](const httplib::Request& req, httplib::Response& res) {
        send(res, svc->static_file(req.path));
    });
}

ServiceServer::~ServiceServer() { stop(); }

int ServiceServer::start(const std::string& host, int port) {
    int bound = port;
    if (port == 0) {
        bound = impl_->server.bind_to_any_port(host);
    } else if (!impl_->server.bind_to_port(host, port)) {
        bound = -1;
    }
    if (bound < 0) throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port));
    impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
    impl_->server.wait_until_ready();
    return bound;
}

void ServiceServer::stop() {
    impl_->server.stop();
    wait();
}

void ServiceServer::wait() {
    if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace adafm
