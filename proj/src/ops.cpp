#include "adafm/ops.hpp"

#include <cmath>

namespace adafm {

namespace {

using detail::GradNode;
using ImplPtr = std::shared_ptr<detail::TensorImpl>;

bool should_record(std::initializer_list<const Tensor*> inputs) {
    if (!grad_enabled()) return false;
    for (const Tensor* t : inputs)
        if (t->impl()->needs_grad()) return true;
    return false;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw DimensionError(std::string(op) + ": shape mismatch " + a.shape().str() + " vs " +
                             b.shape().str());
}

struct ConvGeometry {
    int n, ci, h, w;
    int co, k, stride, pad, groups;
    int oh, ow;
    int ci_g, co_g;
    [[nodiscard]] int col_rows() const { return ci_g * k * k; }
    [[nodiscard]] int col_cols() const { return oh * ow; }
};

// col[(c * k + ky) * k + kx][oy * ow + ox] = x[c0 + c][oy * s - p + ky][ox * s - p + kx]
void im2col(const float* x, const ConvGeometry& g, int c0, float* col) {
    const int plane = g.h * g.w;
    const int cols = g.col_cols();
    for (int c = 0; c < g.ci_g; ++c) {
        const float* xc = x + static_cast<std::size_t>(c0 + c) * plane;
        for (int ky = 0; ky < g.k; ++ky) {
            for (int kx = 0; kx < g.k; ++kx) {
                float* row = col + static_cast<std::size_t>((c * g.k + ky) * g.k + kx) * cols;
                for (int oy = 0; oy < g.oh; ++oy) {
                    const int iy = oy * g.stride - g.pad + ky;
                    float* dst = row + oy * g.ow;
                    if (iy < 0 || iy >= g.h) {
                        std::fill(dst, dst + g.ow, 0.0f);
                        continue;
                    }
                    const float* src = xc + iy * g.w;
                    if (g.stride == 1) {
                        const int lo = std::max(0, g.pad - kx);
                        const int hi = std::min(g.ow, g.w + g.pad - kx);
                        for (int ox = 0; ox < lo; ++ox) dst[ox] = 0.0f;
                        for (int ox = lo; ox < hi; ++ox) dst[ox] = src[ox - g.pad + kx];
                        for (int ox = std::max(hi, lo); ox < g.ow; ++ox) dst[ox] = 0.0f;
                    } else {
                        for (int ox = 0; ox < g.ow; ++ox) {
                            const int ix = ox * g.stride - g.pad + kx;
                            dst[ox] = (ix >= 0 && ix < g.w) ? src[ix] : 0.0f;
                        }
                    }
                }
            }
        }
    }
}

void col2im_add(const float* col, const ConvGeometry& g, int c0, float* dx) {
    const int plane = g.h * g.w;
    const int cols = g.col_cols();
    for (int c = 0; c < g.ci_g; ++c) {
        float* xc = dx + static_cast<std::size_t>(c0 + c) * plane;
        for (int ky = 0; ky < g.k; ++ky) {
            for (int kx = 0; kx < g.k; ++kx) {
                const float* row = col + static_cast<std::size_t>((c * g.k + ky) * g.k + kx) * cols;
                for (int oy = 0; oy < g.oh; ++oy) {
                    const int iy = oy * g.stride - g.pad + ky;
                    if (iy < 0 || iy >= g.h) continue;
                    const float* src = row + oy * g.ow;
                    float* dst = xc + iy * g.w;
                    for (int ox = 0; ox < g.ow; ++ox) {
                        const int ix = ox * g.stride - g.pad + kx;
                        if (ix >= 0 && ix < g.w) dst[ix] += src[ox];
                    }
                }
            }
        }
    }
}

// Sum with eight interleaved partial sums combined in a fixed order, so it
// vectorizes while staying bit-stable.
float total(const float* a, int n) {
    float lanes[8] = {0, 0, 0, 0, 0, 0, 0, 0};
    int i = 0;
    for (; i + 8 <= n; i += 8)
        for (int j = 0; j < 8; ++j) lanes[j] += a[i + j];
    float tail = 0.0f;
    for (; i < n; ++i) tail += a[i];
    return ((lanes[0] + lanes[1]) + (lanes[2] + lanes[3])) + ((lanes[4] + lanes[5]) + (lanes[6] + lanes[7])) + tail;
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, Conv2dParams p) {
    const Shape& xs = x.shape();
    const Shape& ws = weight.shape();
    if (p.groups < 1 || p.stride < 1 || p.pad < 0) throw DimensionError("conv2d: bad stride/pad/groups");
    if (ws.h != ws.w || ws.h % 2 == 0) throw DimensionError("conv2d: kernel must be square and odd, got " + ws.str());
    if (xs.c % p.groups != 0 || ws.n % p.groups != 0)
        throw DimensionError("conv2d: channels not divisible by groups");
    if (ws.c != xs.c / p.groups)
        throw DimensionError("conv2d: weight " + ws.str() + " incompatible with input " + xs.str());
    if (bias.numel() != static_cast<std::size_t>(ws.n))
        throw DimensionError("conv2d: bias has " + std::to_string(bias.numel()) + " values, expected " +
                             std::to_string(ws.n));
    if (xs.h + 2 * p.pad < ws.h || xs.w + 2 * p.pad < ws.w)
        throw DimensionError("conv2d: kernel larger than padded input");

    ConvGeometry g{xs.n, xs.c, xs.h, xs.w, ws.n, ws.h, p.stride, p.pad, p.groups, 0, 0, 0, 0};
    g.oh = (xs.h + 2 * p.pad - g.k) / p.stride + 1;
    g.ow = (xs.w + 2 * p.pad - g.k) / p.stride + 1;
    g.ci_g = xs.c / p.groups;
    g.co_g = ws.n / p.groups;

    Tensor out(Shape{g.n, g.co, g.oh, g.ow});
    const int rows = g.col_rows();
    const int cols = g.col_cols();
    std::vector<float> col(static_cast<std::size_t>(rows) * cols);
    const float* xd = x.data().data();
    const float* wd = weight.data().data();
    const float* bd = bias.data().data();
    float* od = out.data().data();

    for (int n = 0; n < g.n; ++n) {
        const float* xn = xd + static_cast<std::size_t>(n) * g.ci * g.h * g.w;
        float* on = od + static_cast<std::size_t>(n) * g.co * cols;
        for (int grp = 0; grp < g.groups; ++grp) {
            im2col(xn, g, grp * g.ci_g, col.data());
            for (int oc = 0; oc < g.co_g; ++oc) {
                const int co = grp * g.co_g + oc;
                float* orow = on + static_cast<std::size_t>(co) * cols;
                const float* wrow = wd + static_cast<std::size_t>(co) * rows;
                std::fill(orow, orow + cols, bd[co]);
                for (int r = 0; r < rows; ++r) {
                    const float wv = wrow[r];
                    const float* crow = col.data() + static_cast<std::size_t>(r) * cols;
                    for (int q = 0; q < cols; ++q) orow[q] += wv * crow[q];
                }
            }
        }
    }
    check_finite(out.data(), "conv2d");

    if (should_record({&x, &weight, &bias})) {
        auto node = std::make_shared<GradNode>();
        ImplPtr xi = x.impl(), wi = weight.impl(), bi = bias.impl();
        node->inputs = {xi, wi, bi};
        node->backward = [xi, wi, bi, g](std::span<const float> gout) {
            const int rows = g.col_rows();
            const int cols = g.col_cols();
            const bool need_x = xi->needs_grad();
            const bool need_w = wi->needs_grad();
            const bool need_b = bi->needs_grad();
            float* dx = need_x ? xi->ensure_grad().data() : nullptr;
            float* dw = need_w ? wi->ensure_grad().data() : nullptr;
            float* db = need_b ? bi->ensure_grad().data() : nullptr;
            const float* wd = wi->data.data();
            std::vector<float> col(static_cast<std::size_t>(rows) * cols);
            std::vector<float> colt(need_w ? col.size() : 0);
            std::vector<float> dcol(need_x ? col.size() : 0);

            for (int n = 0; n < g.n; ++n) {
                const float* xn = xi->data.data() + static_cast<std::size_t>(n) * g.ci * g.h * g.w;
                const float* gn = gout.data() + static_cast<std::size_t>(n) * g.co * cols;
                for (int grp = 0; grp < g.groups; ++grp) {
                    if (need_w) {
                        im2col(xn, g, grp * g.ci_g, col.data());
                        for (int r = 0; r < rows; ++r)
                            for (int q = 0; q < cols; ++q)
                                colt[static_cast<std::size_t>(q) * rows + r] = col[static_cast<std::size_t>(r) * cols + q];
                    }
                    if (need_x) std::fill(dcol.begin(), dcol.end(), 0.0f);
                    for (int oc = 0; oc < g.co_g; ++oc) {
                        const int co = grp * g.co_g + oc;
                        const float* grow = gn + static_cast<std::size_t>(co) * cols;
                        if (need_b) db[co] += total(grow, cols);
                        if (need_w) {
                            // Axpy over kernel taps per output position; vectorizes
                            // without reassociating any single sum.
                            float* dwrow = dw + static_cast<std::size_t>(co) * rows;
                            for (int q = 0; q < cols; ++q) {
                                const float gv = grow[q];
                                const float* trow = colt.data() + static_cast<std::size_t>(q) * rows;
                                for (int r = 0; r < rows; ++r) dwrow[r] += gv * trow[r];
                            }
                        }
                        if (need_x) {
                            const float* wrow = wd + static_cast<std::size_t>(co) * rows;
                            for (int r = 0; r < rows; ++r) {
                                const float wv = wrow[r];
                                float* drow = dcol.data() + static_cast<std::size_t>(r) * cols;
                                for (int q = 0; q < cols; ++q) drow[q] += wv * grow[q];
                            }
                        }
                    }
                    if (need_x) {
                        float* dxn = dx + static_cast<std::size_t>(n) * g.ci * g.h * g.w;
                        col2im_add(dcol.data(), g, grp * g.ci_g, dxn);
                    }
                }
            }
        };
        out.impl()->grad_fn = std::move(node);
    }
    return out;
}

Tensor relu(const Tensor& x) {
    Tensor out(x.shape());
    auto src = x.data();
    auto dst = out.data();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] > 0.0f ? src[i] : 0.0f;
    check_finite(dst, "relu");
    if (should_record({&x})) {
        auto node = std::make_shared<GradNode>();
        ImplPtr xi = x.impl();
        node->inputs = {xi};
        node->backward = [xi](std::span<const float> gout) {
            auto& dx = xi->ensure_grad();
            for (std::size_t i = 0; i < gout.size(); ++i)
                if (xi->data[i] > 0.0f) dx[i] += gout[i];
        };
        out.impl()->grad_fn = std::move(node);
    }
    return out;
}

namespace {

// Flat index maps between the shuffled (n, c, h*r, w*r) layout and the packed
// (n, c*r*r, h, w) layout.
template <typename Fn>
void for_each_shuffle_pair(const Shape& packed, int r, Fn&& fn) {
    const int c_out = packed.c / (r * r);
    const int oh = packed.h * r, ow = packed.w * r;
    for (int n = 0; n < packed.n; ++n)
        for (int c = 0; c < c_out; ++c)
            for (int i = 0; i < r; ++i)
                for (int j = 0; j < r; ++j) {
                    const int cin = c * r * r + i * r + j;
                    for (int y = 0; y < packed.h; ++y)
                        for (int x = 0; x < packed.w; ++x) {
                            const std::size_t pidx =
                                ((static_cast<std::size_t>(n) * packed.c + cin) * packed.h + y) * packed.w + x;
                            const std::size_t sidx =
                                ((static_cast<std::size_t>(n) * c_out + c) * oh + (y * r + i)) * ow + (x * r + j);
                            fn(pidx, sidx);
                        }
                }
}

}  // namespace

Tensor pixel_shuffle(const Tensor& x, int r) {
    const Shape& s = x.shape();
    if (r < 1 || s.c % (r * r) != 0)
        throw DimensionError("pixel_shuffle: channels " + std::to_string(s.c) + " not divisible by r^2");
    Tensor out(Shape{s.n, s.c / (r * r), s.h * r, s.w * r});
    auto src = x.data();
    auto dst = out.data();
    for_each_shuffle_pair(s, r, [&](std::size_t p, std::size_t q) { dst[q] = src[p]; });
    if (should_record({&x})) {
        auto node = std::make_shared<GradNode>();
        ImplPtr xi = x.impl();
        node->inputs = {xi};
        node->backward = [xi, r](std::span<const float> gout) {
            auto& dx = xi->ensure_grad();
            for_each_shuffle_pair(xi->shape, r, [&](std::size_t p, std::size_t q) { dx[p] += gout[q]; });
        };
        out.impl()->grad_fn = std::move(node);
    }
    return out;
}

Tensor pixel_unshuffle(const Tensor& x, int r) {
    const Shape& s = x.shape();
    if (r < 1 || s.h % r != 0 || s.w % r != 0)
        throw DimensionError("pixel_unshuffle: spatial size " + s.str() + " not divisible by r");
    const Shape packed{s.n, s.c * r * r, s.h / r, s.w / r};
    Tensor out(packed);
    auto src = x.data();
    auto dst = out.data();
    for_each_shuffle_pair(packed, r, [&](std::size_t p, std::size_t q) { dst[p] = src[q]; });
    if (should_record({&x})) {
        auto node = std::make_shared<GradNode>();
        ImplPtr xi = x.impl();
        node->inputs = {xi};
        node->backward = [xi, r, packed](std::span<const float> gout) {
            auto& dx = xi->ensure_grad();
            for_each_shuffle_pair(packed, r, [&](std::size_t p, std::size_t q) { dx[q] += gout[p]; });
        };
        out.impl()->grad_fn = std::move(node);
    }
    return out;
}

Tensor add(const Tensor& x, const Tensor& y) {
    require_same_shape(x, y, "add");
    Tensor out(x.shape());
    auto a = x.data();
    auto b = y.data();
    auto o = out.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = a[i] + b[i];
    check_finite(o, "add");
    if (should_record({&x, &y})) {
        auto node = std::make_shared<GradNode>();
        ImplPtr xi = x.impl(), yi = y.impl();
        node->inputs = {xi, yi};
        node->backward = [xi, yi](std::span<const float> gout) {
            for (auto* t : {xi.get(), yi.get()}) {
                if (!t->needs_grad()) continue;
                auto& d = t->ensure_grad();
                for (std::size_t i = 0; i < gout.size(); ++i) d[i] += gout[i];
            }
        };
        out.impl()->grad_fn = std::move(node);
    }
    return out;
}

Tensor sum(const Tensor& x) {
    double acc = 0.0;
    for (float v : x.data()) acc += v;
    Tensor out = Tensor::scalar(static_cast<float>(acc));
    check_finite(out.data(), "sum");
    if (should_record({&x})) {
        auto node = std::make_shared<GradNode>();
        ImplPtr xi = x.impl();
        node->inputs = {xi};
        node->backward = [xi](std::span<const float> gout) {
            auto& d = xi->ensure_grad();
            for (auto& v : d) v += gout[0];
        };
        out.impl()->grad_fn = std::move(node);
    }
    return out;
}

Tensor l1_loss(const Tensor& pred, const Tensor& target) {
    require_same_shape(pred, target, "l1_loss");
    auto p = pred.data();
    auto t = target.data();
    double acc = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) acc += std::fabs(static_cast<double>(p[i]) - t[i]);
    const double count = static_cast<double>(p.size());
    Tensor out = Tensor::scalar(static_cast<float>(acc / count));
    check_finite(out.data(), "l1_loss");
    if (should_record({&pred, &target})) {
        auto node = std::make_shared<GradNode>();
        ImplPtr pi = pred.impl(), ti = target.impl();
        node->inputs = {pi, ti};
        node->backward = [pi, ti, count](std::span<const float> gout) {
            const float scale = static_cast<float>(gout[0] / count);
            const bool need_p = pi->needs_grad(), need_t = ti->needs_grad();
            float* dp = need_p ? pi->ensure_grad().data() : nullptr;
            float* dt = need_t ? ti->ensure_grad().data() : nullptr;
            for (std::size_t i = 0; i < pi->data.size(); ++i) {
                const float d = pi->data[i] - ti->data[i];
                const float s = d > 0.0f ? scale : (d < 0.0f ? -scale : 0.0f);
                if (dp) dp[i] += s;
                if (dt) dt[i] -= s;
            }
        };
        out.impl()->grad_fn = std::move(node);
    }
    return out;
}

Tensor mse_loss(const Tensor& pred, const Tensor& target) {
    require_same_shape(pred, target, "mse_loss");
    auto p = pred.data();
    auto t = target.data();
    double acc = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double d = static_cast<double>(p[i]) - t[i];
        acc += d * d;
    }
    const double count = static_cast<double>(p.size());
    Tensor out = Tensor::scalar(static_cast<float>(acc / count));
    check_finite(out.data(), "mse_loss");
    if (should_record({&pred, &target})) {
        auto node = std::make_shared<GradNode>();
        ImplPtr pi = pred.impl(), ti = target.impl();
        node->inputs = {pi, ti};
        node->backward = [pi, ti, count](std::span<const float> gout) {
            const float scale = static_cast<float>(2.0 * gout[0] / count);
            const bool need_p = pi->needs_grad(), need_t = ti->needs_grad();
            float* dp = need_p ? pi->ensure_grad().data() : nullptr;
            float* dt = need_t ? ti->ensure_grad().data() : nullptr;
            for (std::size_t i = 0; i < pi->data.size(); ++i) {
                const float s = scale * (pi->data[i] - ti->data[i]);
                if (dp) dp[i] += s;
                if (dt) dt[i] -= s;
            }
        };
        out.impl()->grad_fn = std::move(node);
    }
    return out;
}

}  // namespace adafm
