#pragma once

#include <atomic>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <thread>

#include "adafm/image.hpp"
#include "adafm/modulation.hpp"
#include "adafm/net.hpp"

namespace adafm {

inline constexpr const char* kServiceVersion = "0.1.0";

struct ServiceOptions {
    int max_width = 1024;
    int max_height = 1024;
    std::optional<std::string> ui_dir;
};

struct HttpReply {
    int status = 200;
    std::string body;
    std::string content_type = "application/json";
};

std::string base64_encode(const std::vector<unsigned char>& bytes);
/// Throws std::invalid_argument on malformed input.
std::vector<unsigned char> base64_decode(const std::string& text);

/// Request handling for the restoration endpoint, independent of the HTTP
/// server so it can be exercised directly. The model is immutable after
/// construction; every handler is safe to call concurrently.
class RestorationService {
public:
    RestorationService(AdaFMNet net, std::optional<ModulationCurve> curve, ServiceOptions options = {},
                       std::map<std::string, std::string> model_meta = {});

    /// Loads an AdaFM checkpoint and optional curve file.
    static RestorationService from_files(const std::string& model_path, const std::optional<std::string>& curve_path,
                                         ServiceOptions options = {});

    [[nodiscard]] HttpReply restore(const std::string& body) const;
    [[nodiscard]] HttpReply info() const;
    /// Static file below ui_dir ("/" maps to index.html).
    [[nodiscard]] HttpReply static_file(const std::string& path) const;

    /// Restores an image at `lambda` exactly as the endpoint does, before
    /// 8-bit quantization.
    [[nodiscard]] Image run(const Image& input, float lambda) const;

    /// Empirical bound C: mean |out(lambda + 0.05) - out(lambda)| <= C * 0.05
    /// on 8-bit responses.
    [[nodiscard]] double lipschitz_bound() const { return lipschitz_; }
    [[nodiscard]] const AdaFMNet& net() const { return net_; }

private:
    AdaFMNet net_;
    std::optional<ModulationCurve> curve_;
    ServiceOptions options_;
    std::map<std::string, std::string> meta_;
    double lipschitz_ = 0.0;
};

/// HTTP server running on a background thread.
class ServiceServer {
public:
    explicit ServiceServer(std::shared_ptr<const RestorationService> service);
    ~ServiceServer();
    ServiceServer(const ServiceServer&) = delete;
    ServiceServer& operator=(const ServiceServer&) = delete;

    /// Binds to `host`:`port` (0 picks a free port) and starts serving.
    /// Returns the bound port.
    int start(const std::string& host, int port);
    void stop();
    /// Blocks until the server stops.
    void wait();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace adafm
