#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <thread>

#include "adafm/degrade.hpp"
#include "adafm/service.hpp"
#include "httplib.h"
#include "json.hpp"

using namespace adafm;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

AdaFMNet small_model(int channels = 1) {
    NetConfig cfg;
    cfg.in_channels = channels;
    cfg.feat_channels = 6;
    cfg.num_blocks = 2;
    RandomSource rng(11);
    AdaFMNet net = insert_adafm(build_basic_net(cfg, rng), 3);
    for (auto& l : net.adafm) {
        for (float& v : l.filter.data()) v += 0.1f * static_cast<float>(rng.gaussian());
        for (float& v : l.bias.data()) v = 0.05f * static_cast<float>(rng.gaussian());
    }
    return net;
}

const RestorationService& service() {
    static const RestorationService svc = [] {
        ModulationCurve curve = fit_curve({{0.05, 0, 0}, {0.2, 1, 0}}, 1);
        return RestorationService(small_model(), curve);
    }();
    return svc;
}

std::vector<unsigned char> image_bytes(const Image& img) {
    std::vector<unsigned char> out;
    for (float v : img.pixels) out.push_back(static_cast<unsigned char>(std::round(v * 255.0f)));
    return out;
}

json request(const Image& img) {
    return {{"width", img.w}, {"height", img.h}, {"channels", img.channels}, {"pixels", base64_encode(image_bytes(img))}};
}

Image test_image(int h = 24, int w = 30, int c = 1) {
    RandomSource rng(5);
    return degrade_noise(gen_procedural_image(21, h, w, c), 0.1, rng);
}

std::vector<unsigned char> response_bytes(const HttpReply& r) {
    return base64_decode(json::parse(r.body)["pixels"].get<std::string>());
}

}  // namespace

TEST_CASE("base64") {
    const std::string s = "foob";
    CHECK(base64_encode({s.begin(), s.end()}) == "Zm9vYg==");
    const auto d = base64_decode("Zm9vYg==");
    CHECK(std::string(d.begin(), d.end()) == "foob");
    CHECK(base64_decode("").empty());
    for (int n = 0; n < 20; ++n) {
        std::vector<unsigned char> bytes(n);
        for (int i = 0; i < n; ++i) bytes[i] = static_cast<unsigned char>(i * 37 + 3);
        CHECK(base64_decode(base64_encode(bytes)) == bytes);
    }
    CHECK_THROWS_AS(base64_decode("abc"), std::invalid_argument);
    CHECK_THROWS_AS(base64_decode("ab!d"), std::invalid_argument);
}

TEST_CASE("lambda zero equals the bare net") {
    const Image img = test_image();
    json req = request(img);
    req["lambda"] = 0.0;
    const HttpReply r = service().restore(req.dump());
    REQUIRE(r.status == 200);

    Image in(img.h, img.w, 1);
    const auto bytes = image_bytes(img);
    for (std::size_t i = 0; i < bytes.size(); ++i) in.pixels[i] = bytes[i] / 255.0f;
    NoGradGuard guard;
    Image bare = tensor_to_image(forward(service().net().base, image_to_tensor(in)));
    std::vector<unsigned char> expect;
    for (float v : bare.pixels) expect.push_back(static_cast<unsigned char>(std::round(std::clamp(v, 0.0f, 1.0f) * 255.0f)));
    CHECK(response_bytes(r) == expect);

    const json body = json::parse(r.body);
    CHECK(body["width"] == img.w);
    CHECK(body["height"] == img.h);
    CHECK(body["applied_lambda"] == 0.0);
    CHECK(body["clamped"] == false);
}

TEST_CASE("responses are deterministic and stateless") {
    json a = request(test_image());
    a["lambda"] = 0.7;
    json b = request(test_image(16, 16));
    b["lambda"] = 0.2;
    const HttpReply first = service().restore(a.dump());
    (void)service().restore(b.dump());
    CHECK(service().restore(a.dump()).body == first.body);

    std::vector<std::string> bodies(16);
    std::vector<std::thread> threads;
    for (int i = 0; i < 16; ++i) threads.emplace_back([&, i] { bodies[i] = service().restore(a.dump()).body; });
    for (auto& t : threads) t.join();
    for (const auto& s : bodies) CHECK(s == first.body);
}

TEST_CASE("malformed requests") {
    const Image img = test_image();
    auto status = [](const std::string& body) { return service().restore(body).status; };
    CHECK(status("not json") == 400);
    CHECK(status("[1,2]") == 400);
    json ok = request(img);
    ok["lambda"] = 0.5;
    CHECK(status(ok.dump()) == 200);

    json j = ok;
    j.erase("width");
    CHECK(status(j.dump()) == 400);
    j = ok;
    j["width"] = "30";
    CHECK(status(j.dump()) == 400);
    j = ok;
    j["width"] = img.w + 1;
    CHECK(status(j.dump()) == 400);
    j = ok;
    j["channels"] = 2;
    CHECK(status(j.dump()) == 400);
    j = ok;
    j["pixels"] = "!!!!";
    CHECK(status(j.dump()) == 400);
    j = ok;
    j.erase("lambda");
    CHECK(status(j.dump()) == 400);
    j = ok;
    j["level"] = 0.1;
    CHECK(status(j.dump()) == 400);
    j = ok;
    j["lambda"] = "high";
    CHECK(status(j.dump()) == 400);
    j = ok;
    j["width"] = 0;
    CHECK(status(j.dump()) == 400);

    j = ok;
    j["width"] = 2000;
    j["height"] = 10;
    CHECK(status(j.dump()) == 413);

    const RestorationService no_curve(small_model(), std::nullopt);
    j = ok;
    j.erase("lambda");
    j["level"] = 0.1;
    CHECK(no_curve.restore(j.dump()).status == 400);
}

TEST_CASE("level requests go through the curve and clamp") {
    json req = request(test_image());
    req["level"] = 0.125;
    json body = json::parse(service().restore(req.dump()).body);
    CHECK(body["applied_lambda"].get<double>() == doctest::Approx(0.5));
    CHECK(body["clamped"] == false);

    req["level"] = 0.5;
    body = json::parse(service().restore(req.dump()).body);
    CHECK(body["applied_lambda"] == 1.0);
    CHECK(body["clamped"] == true);

    json lam = request(test_image());
    lam["lambda"] = 1.0;
    CHECK(json::parse(service().restore(lam.dump()).body)["pixels"] == body["pixels"]);

    lam["lambda"] = -3.0;
    body = json::parse(service().restore(lam.dump()).body);
    CHECK(body["applied_lambda"] == 0.0);
    CHECK(body["clamped"] == true);
}

TEST_CASE("odd sizes and channel conversion keep dimensions") {
    for (int c : {1, 3}) {
        json req = request(test_image(17, 23, c));
        req["lambda"] = 0.5;
        const HttpReply r = service().restore(req.dump());
        REQUIRE(r.status == 200);
        CHECK(response_bytes(r).size() == static_cast<std::size_t>(17 * 23 * c));
    }
    const RestorationService color(small_model(3), std::nullopt);
    json req = request(test_image(16, 18, 1));
    req["lambda"] = 0.5;
    CHECK(response_bytes(color.restore(req.dump())).size() == 288);
}

TEST_CASE("lambda continuity bound") {
    const double c = service().lipschitz_bound();
    CHECK(c > 0.0);
    const Image img = test_image(32, 32);
    for (int i = 0; i < 20; ++i) {
        json a = request(img), b = request(img);
        a["lambda"] = i * 0.05;
        b["lambda"] = (i + 1) * 0.05;
        const auto pa = response_bytes(service().restore(a.dump()));
        const auto pb = response_bytes(service().restore(b.dump()));
        double diff = 0.0;
        for (std::size_t k = 0; k < pa.size(); ++k) diff += std::abs(int(pa[k]) - int(pb[k]));
        CHECK(diff / pa.size() / 255.0 <= c * 0.05);
    }
}

TEST_CASE("info") {
    const json info = json::parse(service().info().body);
    CHECK(info["version"] == kServiceVersion);
    CHECK(info["model"]["adafm_kernel"] == 3);
    const ParamCounts pc = count_params(service().net());
    CHECK(info["params"]["adafm_fraction"].get<double>() == pc.adafm_fraction);
    CHECK(info["params"]["adafm_total"] == pc.adafm_total);
    CHECK(info["curve"]["La"].get<double>() == 0.05);
    CHECK(info["curve"]["Lb"].get<double>() == 0.2);
    CHECK(info["lipschitz_c"].get<double>() == service().lipschitz_bound());
    const RestorationService no_curve(small_model(), std::nullopt);
    CHECK(json::parse(no_curve.info().body)["curve"].is_null());
}

TEST_CASE("static files") {
    CHECK(service().static_file("/").status == 404);
    const fs::path dir = fs::temp_directory_path() / "adafm_ui_test";
    fs::create_directories(dir / "assets");
    const std::string html = "<html>hi</html>\n";
    std::string blob(300, '\0');
    for (int i = 0; i < 300; ++i) blob[i] = static_cast<char>(i);
    std::ofstream(dir / "index.html", std::ios::binary) << html;
    std::ofstream(dir / "assets" / "app.js", std::ios::binary) << blob;
    ServiceOptions opts;
    opts.ui_dir = dir.string();
    const RestorationService svc(small_model(), std::nullopt, opts);
    HttpReply r = svc.static_file("/");
    CHECK(r.status == 200);
    CHECK(r.body == html);
    CHECK(r.content_type == "text/html");
    r = svc.static_file("/assets/app.js");
    CHECK(r.body == blob);
    CHECK(svc.static_file("/missing.txt").status == 404);
    CHECK(svc.static_file("/../etc/passwd").status == 404);
    fs::remove_all(dir);
}

TEST_CASE("http server") {
    auto svc = std::make_shared<RestorationService>(small_model(), std::nullopt);
    ServiceServer server(svc);
    const int port = server.start("127.0.0.1", 0);
    CHECK(port > 0);

    httplib::Client cli("127.0.0.1", port);
    auto info = cli.Get("/api/info");
    REQUIRE(info);
    CHECK(info->status == 200);
    CHECK(json::parse(info->body)["version"] == kServiceVersion);
    CHECK(cli.Get("/")->status == 404);

    json req = request(test_image());
    req["lambda"] = 0.3;
    const std::string expect = svc->restore(req.dump()).body;
    std::vector<std::string> bodies(16);
    std::vector<int> codes(16);
    std::vector<std::thread> threads;
    for (int i = 0; i < 16; ++i)
        threads.emplace_back([&, i] {
            httplib::Client c("127.0.0.1", port);
            auto res = c.Post("/api/restore", req.dump(), "application/json");
            codes[i] = res ? res->status : -1;
            bodies[i] = res ? res->body : "";
        });
    for (auto& t : threads) t.join();
    for (int i = 0; i < 16; ++i) {
        CHECK(codes[i] == 200);
        CHECK(bodies[i] == expect);
    }
    auto bad = cli.Post("/api/restore", "{}", "application/json");
    REQUIRE(bad);
    CHECK(bad->status == 400);
    server.stop();
}
