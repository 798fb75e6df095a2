#include "adafm/modulation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace adafm {

std::vector<SweepPoint> lambda_sweep(const AdaFMNet& net, const EvalSet& set, double step) {
    if (!(step > 0.0) || step > 1.0) throw std::invalid_argument("lambda step must be in (0, 1]");
    if (set.clean.empty()) throw std::invalid_argument("empty evaluation set");
    const int n = static_cast<int>(std::lround(1.0 / step));
    std::vector<SweepPoint> out;
    for (int i = 0; i <= n; ++i) {
        const double lam = static_cast<double>(i) / n;
        out.push_back({lam, evaluate(net, static_cast<float>(lam), set)});
    }
    return out;
}

ModulationPoint best_lambda(const std::vector<SweepPoint>& sweep, double level) {
    if (sweep.empty()) throw std::invalid_argument("empty lambda sweep");
    std::size_t best = 0;
    for (std::size_t i = 1; i < sweep.size(); ++i)
        if (sweep[i].psnr > sweep[best].psnr) best = i;
    return {level, sweep[best].lambda, sweep[best].psnr};
}

ModulationPoint best_lambda(const AdaFMNet& net, const EvalSet& set, double step) {
    return best_lambda(lambda_sweep(net, set, step), set.level.level);
}

bool is_unimodal(const std::vector<SweepPoint>& sweep, double ripple) {
    if (sweep.empty()) return false;
    std::size_t peak = 0;
    for (std::size_t i = 1; i < sweep.size(); ++i)
        if (sweep[i].psnr > sweep[peak].psnr) peak = i;
    // Walking toward the peak from either side, no value may fall more than
    // `ripple` below the best value already seen on that side.
    double run = sweep.front().psnr;
    for (std::size_t i = 1; i <= peak; ++i) {
        if (sweep[i].psnr < run - ripple) return false;
        run = std::max(run, sweep[i].psnr);
    }
    run = sweep.back().psnr;
    for (std::size_t i = sweep.size() - 1; i-- > peak;) {
        if (sweep[i].psnr < run - ripple) return false;
        run = std::max(run, sweep[i].psnr);
    }
    return true;
}

double eval_polynomial(const std::vector<double>& w, double level) {
    double v = 0.0;
    for (std::size_t j = w.size(); j-- > 0;) v = v * level + w[j];
    return v;
}

namespace {

// Solves A x = b in place by Gaussian elimination with partial pivoting.
std::vector<double> solve(std::vector<std::vector<double>> a, std::vector<double> b) {
    const std::size_t n = b.size();
    for (std::size_t col = 0; col < n; ++col) {
        std::size_t piv = col;
        for (std::size_t r = col + 1; r < n; ++r)
            if (std::fabs(a[r][col]) > std::fabs(a[piv][col])) piv = r;
        if (std::fabs(a[piv][col]) < 1e-12) throw std::invalid_argument("curve fit is underdetermined");
        std::swap(a[piv], a[col]);
        std::swap(b[piv], b[col]);
        for (std::size_t r = col + 1; r < n; ++r) {
            const double f = a[r][col] / a[col][col];
            for (std::size_t c = col; c < n; ++c) a[r][c] -= f * a[col][c];
            b[r] -= f * b[col];
        }
    }
    std::vector<double> x(n);
    for (std::size_t i = n; i-- > 0;) {
        double s = b[i];
        for (std::size_t c = i + 1; c < n; ++c) s -= a[i][c] * x[c];
        x[i] = s / a[i][i];
    }
    return x;
}

}  // namespace

ModulationCurve fit_curve(const std::vector<ModulationPoint>& points, int order, const std::string& task) {
    if (order < 1) throw std::invalid_argument("curve order must be at least 1");
    if (points.size() < 2) throw std::invalid_argument("curve fit needs both endpoints");
    const double la = points.front().level, lb = points.back().level;
    if (la == lb) throw std::invalid_argument("curve endpoints have the same level");
    const std::vector<ModulationPoint> interior(points.begin() + 1, points.end() - 1);
    if (static_cast<int>(interior.size()) < order - 1)
        throw std::invalid_argument("order " + std::to_string(order) + " needs at least " + std::to_string(order - 1) +
                                    " interior points, got " + std::to_string(interior.size()));
    std::vector<double> levels;
    for (const auto& p : points) levels.push_back(p.level);
    std::sort(levels.begin(), levels.end());
    if (std::adjacent_find(levels.begin(), levels.end()) != levels.end())
        throw std::invalid_argument("duplicate levels in curve fit");
    for (const auto& p : interior) {
        const double t = (p.level - la) / (lb - la);
        if (!(t > 0.0 && t < 1.0)) throw std::invalid_argument("interior level outside the endpoint range");
    }

    // With w2..wM free, the endpoint constraints fix w1 and w0:
    //   f(L) = line(L) + sum_j wj psi_j(L),  line(L) = (L - La) / (Lb - La),
    //   psi_j(L) = L^j - La^j - (Lb^j - La^j) line(L).
    auto line = [&](double l) { return (l - la) / (lb - la); };
    auto psi = [&](int j, double l) {
        return std::pow(l, j) - std::pow(la, j) - (std::pow(lb, j) - std::pow(la, j)) * line(l);
    };
    const int free = order - 1;
    std::vector<double> free_w(free, 0.0);
    if (free > 0) {
        // Column scaling keeps the normal equations well conditioned for large levels.
        std::vector<double> scale(free, 0.0);
        for (int j = 0; j < free; ++j) {
            for (const auto& p : interior) scale[j] = std::max(scale[j], std::fabs(psi(j + 2, p.level)));
            if (scale[j] == 0.0) throw std::invalid_argument("curve fit is underdetermined");
        }
        std::vector<std::vector<double>> ata(free, std::vector<double>(free, 0.0));
        std::vector<double> atb(free, 0.0);
        for (const auto& p : interior) {
            std::vector<double> row(free);
            for (int j = 0; j < free; ++j) row[j] = psi(j + 2, p.level) / scale[j];
            const double r = p.lambda - line(p.level);
            for (int i = 0; i < free; ++i) {
                atb[i] += row[i] * r;
                for (int j = 0; j < free; ++j) ata[i][j] += row[i] * row[j];
            }
        }
        free_w = solve(ata, atb);
        for (int j = 0; j < free; ++j) free_w[j] /= scale[j];
    }

    ModulationCurve c;
    c.task = task;
    c.la = la;
    c.lb = lb;
    c.order = order;
    c.w.assign(order + 1, 0.0);
    double hi = 1.0, lo = 0.0;
    for (int j = 2; j <= order; ++j) {
        c.w[j] = free_w[j - 2];
        hi -= c.w[j] * (std::pow(lb, j) - std::pow(la, j));
    }
    c.w[1] = hi / (lb - la);
    lo = -c.w[1] * la;
    for (int j = 2; j <= order; ++j) lo -= c.w[j] * std::pow(la, j);
    c.w[0] = lo;

    for (const auto& p : interior) {
        c.residuals.push_back(p.lambda - eval_polynomial(c.w, p.level));
        c.max_residual = std::max(c.max_residual, std::fabs(c.residuals.back()));
    }
    double prev = eval_polynomial(c.w, la);
    for (int i = 1; i <= 100; ++i) {
        const double v = eval_polynomial(c.w, la + (lb - la) * i / 100.0);
        if (v < prev - 1e-12) c.monotone = false;
        prev = v;
    }
    return c;
}

namespace {

// Same polynomial written as the endpoint line plus the free terms, so the
// endpoint values and the order-1 case come out exact.
double eval_constrained(const ModulationCurve& c, double level) {
    const double t = (level - c.la) / (c.lb - c.la);
    double v = t;
    for (std::size_t j = 2; j < c.w.size(); ++j) {
        const int e = static_cast<int>(j);
        v += c.w[j] * (std::pow(level, e) - std::pow(c.la, e) - (std::pow(c.lb, e) - std::pow(c.la, e)) * t);
    }
    return v;
}

}  // namespace

double predict_lambda(const ModulationCurve& curve, double level) {
    const double t = (level - curve.la) / (curve.lb - curve.la);
    if (t <= 0.0) return 0.0;
    if (t >= 1.0) return 1.0;
    return std::clamp(eval_constrained(curve, level), 0.0, 1.0);
}

std::string format_curve(const ModulationCurve& curve) {
    std::ostringstream os;
    os.precision(17);
    os << "task=" << curve.task << " La=" << curve.la << " Lb=" << curve.lb << " M=" << curve.order << " w=";
    for (std::size_t i = 0; i < curve.w.size(); ++i) os << (i ? "," : "") << curve.w[i];
    return os.str();
}

ModulationCurve parse_curve(const std::string& text) {
    std::istringstream is(text);
    std::string tok;
    ModulationCurve c;
    bool seen[5] = {};
    auto number = [](const std::string& s) {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument("bad number '" + s + "'");
        return v;
    };
    try {
        while (is >> tok) {
            const auto eq = tok.find('=');
            if (eq == std::string::npos) throw std::invalid_argument("expected key=value, got '" + tok + "'");
            const std::string key = tok.substr(0, eq), val = tok.substr(eq + 1);
            if (key == "task") {
                c.task = val;
                seen[0] = true;
            } else if (key == "La") {
                c.la = number(val);
                seen[1] = true;
            } else if (key == "Lb") {
                c.lb = number(val);
                seen[2] = true;
            } else if (key == "M") {
                c.order = static_cast<int>(number(val));
                seen[3] = true;
            } else if (key == "w") {
                std::istringstream ws(val);
                std::string part;
                while (std::getline(ws, part, ',')) c.w.push_back(number(part));
                seen[4] = true;
            } else {
                throw std::invalid_argument("unknown curve key '" + key + "'");
            }
        }
    } catch (const std::out_of_range&) {
        throw std::invalid_argument("curve number out of range");
    }
    for (bool s : seen)
        if (!s) throw std::invalid_argument("curve is missing a field");
    if (c.order < 1 || c.w.size() != static_cast<std::size_t>(c.order) + 1)
        throw std::invalid_argument("curve order does not match its coefficient count");
    if (c.la == c.lb) throw std::invalid_argument("curve endpoints have the same level");
    if (std::fabs(eval_polynomial(c.w, c.la)) > 1e-6 || std::fabs(eval_polynomial(c.w, c.lb) - 1.0) > 1e-6)
        throw std::invalid_argument("curve does not map La to 0 and Lb to 1");
    return c;
}

void save_curve(const std::string& path, const ModulationCurve& curve) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path);
    os << format_curve(curve) << '\n';
}

ModulationCurve load_curve(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot read " + path);
    std::stringstream ss;
    ss << is.rdbuf();
    return parse_curve(ss.str());
}

PiecewiseSelection piecewise_lambda(const PiecewiseMap& map, double level) {
    const auto& lv = map.levels;
    if (lv.size() < 2 || map.nets.size() != lv.size())
        throw std::invalid_argument("piecewise map needs at least two breakpoints with one net each");
    const bool up = lv[1] > lv[0];
    for (std::size_t i = 1; i < lv.size(); ++i)
        if (up ? !(lv[i] > lv[i - 1]) : !(lv[i] < lv[i - 1]))
            throw std::invalid_argument("piecewise breakpoints must be strictly monotone");
    const double t_all = (level - lv.front()) / (lv.back() - lv.front());
    if (!(t_all >= 0.0 && t_all <= 1.0)) throw std::out_of_range("level outside the piecewise span");
    std::size_t seg = lv.size() - 2;
    for (std::size_t i = 0; i + 1 < lv.size(); ++i) {
        const double t = (level - lv[i]) / (lv[i + 1] - lv[i]);
        if (t >= 0.0 && t < 1.0) {
            seg = i;
            break;
        }
    }
    PiecewiseSelection s;
    s.segment = seg;
    s.start_net = map.nets[seg];
    s.end_net = map.nets[seg + 1];
    s.lambda = (level - lv[seg]) / (lv[seg + 1] - lv[seg]);
    return s;
}

}  // namespace adafm
