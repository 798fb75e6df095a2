#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>

#include "adafm/modulation.hpp"

using namespace adafm;

TEST_CASE("two-point line") {
    const ModulationCurve c = fit_curve({{80.0, 0.0, 0.0}, {50.0, 1.0, 0.0}}, 1, "dejpeg");
    CHECK(c.w.size() == 2);
    for (double l : {80.0, 75.0, 65.0, 60.0, 50.0}) CHECK(std::fabs(eval_polynomial(c.w, l) - (80.0 - l) / 30.0) < 1e-12);
    CHECK(predict_lambda(c, 65.0) == 0.5);
    CHECK(predict_lambda(c, 80.0) == 0.0);
    CHECK(predict_lambda(c, 50.0) == 1.0);
    CHECK(predict_lambda(c, 90.0) == 0.0);
    CHECK(predict_lambda(c, 10.0) == 1.0);
    CHECK(c.monotone);
}

TEST_CASE("printed cubic") {
    ModulationCurve c;
    c.la = 80.0;
    c.lb = 10.0;
    c.order = 3;
    c.w = {1.51, -6.24e-2, 1.01e-3, -5.91e-6};
    CHECK(std::fabs(eval_polynomial(c.w, 30.0) - 0.387) < 1e-3);
    CHECK(std::fabs(eval_polynomial(c.w, 30.0) - 0.40) < 0.02);
}

TEST_CASE("constrained fit hits endpoints") {
    const std::vector<ModulationPoint> pts{
        {0.05, 0.0, 0}, {0.08, 0.18, 0}, {0.11, 0.41, 0}, {0.14, 0.62, 0}, {0.17, 0.83, 0}, {0.2, 1.0, 0}};
    for (int m = 1; m <= 5; ++m) {
        const ModulationCurve c = fit_curve(pts, m);
        CHECK(std::fabs(eval_polynomial(c.w, 0.05)) < 1e-9);
        CHECK(std::fabs(eval_polynomial(c.w, 0.2) - 1.0) < 1e-9);
        CHECK(c.residuals.size() == 4);
        if (m >= 5) CHECK(c.max_residual < 1e-6);
        for (std::size_t i = 0; i < c.residuals.size(); ++i)
            CHECK(std::fabs(pts[i + 1].lambda - eval_polynomial(c.w, pts[i + 1].level)) <= c.max_residual + 1e-12);
    }
    // Large level values stay well conditioned.
    const ModulationCurve j = fit_curve({{80, 0, 0}, {60, 0.2, 0}, {40, 0.45, 0}, {30, 0.4, 0}, {10, 1, 0}}, 3);
    CHECK(std::fabs(eval_polynomial(j.w, 80.0)) < 1e-9);
    CHECK(std::fabs(eval_polynomial(j.w, 10.0) - 1.0) < 1e-9);
    CHECK(j.monotone);

    const ModulationCurve bump = fit_curve({{0.0, 0, 0}, {0.3, 0.9, 0}, {0.6, 0.1, 0}, {1.0, 1, 0}}, 3);
    CHECK(!bump.monotone);
}

TEST_CASE("fit errors") {
    CHECK_THROWS_AS(fit_curve({{0.05, 0, 0}, {0.2, 1, 0}}, 3), std::invalid_argument);
    CHECK_THROWS_AS(fit_curve({{0.05, 0, 0}, {0.1, 0.5, 0}, {0.1, 0.6, 0}, {0.2, 1, 0}}, 2), std::invalid_argument);
    CHECK_THROWS_AS(fit_curve({{0.05, 0, 0}, {0.3, 0.5, 0}, {0.2, 1, 0}}, 2), std::invalid_argument);
    CHECK_THROWS_AS(fit_curve({{0.05, 0, 0}, {0.2, 1, 0}}, 0), std::invalid_argument);
    CHECK_THROWS_AS(fit_curve({{0.05, 0, 0}}, 1), std::invalid_argument);
    CHECK_NOTHROW(fit_curve({{0.05, 0, 0}, {0.1, 0.3, 0}, {0.2, 1, 0}}, 2));
}

TEST_CASE("curve file round trip") {
    const ModulationCurve c =
        fit_curve({{0.05, 0, 0}, {0.08, 0.19, 0}, {0.125, 0.5123456789, 0}, {0.16, 0.77, 0}, {0.2, 1, 0}}, 3);
    const std::string text = format_curve(c);
    CHECK(text.rfind("task=denoise La=0.05", 0) == 0);
    const ModulationCurve back = parse_curve(text);
    CHECK(back.w == c.w);
    CHECK(back.la == c.la);
    CHECK(back.lb == c.lb);
    CHECK(back.order == 3);
    CHECK(format_curve(back) == text);

    const auto path = (std::filesystem::temp_directory_path() / "adafm_curve.txt").string();
    save_curve(path, c);
    CHECK(load_curve(path).w == c.w);
    std::filesystem::remove(path);

    CHECK_THROWS_AS(parse_curve("task=x La=1 Lb=2 M=2 w=0,1"), std::invalid_argument);
    CHECK_THROWS_AS(parse_curve("task=x La=1 Lb=2 M=1"), std::invalid_argument);
    CHECK_THROWS_AS(parse_curve("task=x La=1q Lb=2 M=1 w=0,1"), std::invalid_argument);
    CHECK_THROWS_AS(parse_curve("task=x La=1 Lb=1 M=1 w=0,1"), std::invalid_argument);
    CHECK_THROWS_AS(parse_curve("task=x La=0 Lb=1 M=1 w=0.1,1"), std::invalid_argument);
}

TEST_CASE("best lambda from a sweep") {
    std::vector<SweepPoint> s;
    for (int i = 0; i <= 10; ++i) s.push_back({i / 10.0, 30.0 - std::pow(i / 10.0 - 0.3, 2)});
    CHECK(best_lambda(s, 0.1).lambda == doctest::Approx(0.3));
    CHECK(is_unimodal(s));

    std::vector<SweepPoint> flat{{0.0, 5.0}, {0.5, 5.0}, {1.0, 5.0}};
    CHECK(best_lambda(flat, 0.0).lambda == 0.0);

    std::vector<SweepPoint> twin{{0.0, 1.0}, {0.25, 3.0}, {0.5, 1.0}, {0.75, 2.9}, {1.0, 1.0}};
    CHECK(!is_unimodal(twin));
    std::vector<SweepPoint> ripple{{0.0, 1.0}, {0.25, 1.5}, {0.5, 1.49}, {0.75, 2.0}, {1.0, 1.0}};
    CHECK(is_unimodal(ripple));
    CHECK_THROWS_AS(best_lambda(std::vector<SweepPoint>{}, 0.0), std::invalid_argument);
}

TEST_CASE("piecewise lambda") {
    const PiecewiseMap m{{0.05, 0.2, 0.3}, {"a.ckpt", "b.ckpt", "c.ckpt"}};
    PiecewiseSelection s = piecewise_lambda(m, 0.25);
    CHECK(s.segment == 1);
    CHECK(s.start_net == "b.ckpt");
    CHECK(s.end_net == "c.ckpt");
    CHECK(s.lambda == doctest::Approx(0.5));
    s = piecewise_lambda(m, 0.2);
    CHECK(s.segment == 1);
    CHECK(s.lambda == 0.0);
    CHECK(piecewise_lambda(m, 0.125).lambda == doctest::Approx(0.5));
    CHECK(piecewise_lambda(m, 0.3).lambda == 1.0);
    CHECK_THROWS_AS(piecewise_lambda(m, 0.31), std::out_of_range);
    CHECK_THROWS_AS(piecewise_lambda(m, 0.01), std::out_of_range);
    CHECK_THROWS_AS(piecewise_lambda({{0.1, 0.1}, {"a", "b"}}, 0.1), std::invalid_argument);

    const PiecewiseMap down{{80, 50, 20}, {"a", "b", "c"}};
    CHECK(piecewise_lambda(down, 65).lambda == doctest::Approx(0.5));
    CHECK(piecewise_lambda(down, 35).segment == 1);
}
