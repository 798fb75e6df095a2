#pragma once

#include <string>
#include <utility>
#include <vector>

#include "adafm/net.hpp"
#include "adafm/pipeline.hpp"

namespace adafm {

struct ModulationPoint {
    double level = 0.0;
    double lambda = 0.0;
    double psnr = 0.0;
};

/// lambda(L) = w[0] + w[1] L + ... + w[M] L^M with lambda(La) = 0 and
/// lambda(Lb) = 1. La may be larger than Lb.
struct ModulationCurve {
    std::string task;
    double la = 0.0;
    double lb = 1.0;
    int order = 1;
    std::vector<double> w;

    std::vector<double> residuals;  // lambda_i - curve(L_i) per interior point
    double max_residual = 0.0;
    bool monotone = true;  // non-decreasing from La to Lb over 100 samples
};

struct SweepPoint {
    double lambda = 0.0;
    double psnr = 0.0;
};

/// PSNR at lambda = 0, step, ..., 1.
std::vector<SweepPoint> lambda_sweep(const AdaFMNet& net, const EvalSet& set, double step = 0.01);

/// Grid argmax of lambda_sweep. Ties go to the smaller lambda.
ModulationPoint best_lambda(const AdaFMNet& net, const EvalSet& set, double step = 0.01);
ModulationPoint best_lambda(const std::vector<SweepPoint>& sweep, double level);

/// True when the sweep has a single maximum once dips of at most `ripple`
/// dB are ignored.
bool is_unimodal(const std::vector<SweepPoint>& sweep, double ripple = 0.02);

/// Unclamped polynomial value.
double eval_polynomial(const std::vector<double>& w, double level);

/// Least-squares fit of an order-M polynomial to the interior points with the
/// endpoint values forced exactly. points.front() and points.back() give La
/// and Lb (their lambdas are taken as 0 and 1); the rest are interior points,
/// of which at least M - 1 are needed. Throws std::invalid_argument on
/// duplicate levels, interior points outside the range, or too few points.
ModulationCurve fit_curve(const std::vector<ModulationPoint>& points, int order, const std::string& task = "denoise");

/// Clamped to [0, 1]; levels at or beyond an endpoint give that endpoint's
/// value. Assumes the curve satisfies its endpoint constraints.
double predict_lambda(const ModulationCurve& curve, double level);

/// One line: task=<tag> La=<f> Lb=<f> M=<int> w=<f,...>
std::string format_curve(const ModulationCurve& curve);
/// Rejects malformed text and curves that miss their endpoint values by more than 1e-6.
ModulationCurve parse_curve(const std::string& text);
void save_curve(const std::string& path, const ModulationCurve& curve);
ModulationCurve load_curve(const std::string& path);

/// Breakpoint levels (strictly monotone) with one net reference each.
struct PiecewiseMap {
    std::vector<double> levels;
    std::vector<std::string> nets;
};

struct PiecewiseSelection {
    std::size_t segment = 0;
    std::string start_net;
    std::string end_net;
    double lambda = 0.0;
};

/// Segment containing `level` and the linear lambda inside it. A level on an
/// inner breakpoint selects the segment starting there with lambda = 0.
/// Throws std::out_of_range outside the breakpoint span.
PiecewiseSelection piecewise_lambda(const PiecewiseMap& map, double level);

}  // namespace adafm
