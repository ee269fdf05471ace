#include "rgfs/layers.hpp"

#include <Eigen/Core>

#include <cmath>

#include "rgfs/errors.hpp"
#include "rgfs/rng.hpp"

namespace rgfs {

namespace {

using MatCM = Eigen::MatrixXd;
using MapRM = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using CMapRM =
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

int small_side(int large, int k, int stride, int pad) {
    const int num = large + 2 * pad - k;
    if (num < 0 || num % stride != 0)
        throw ConfigError("conv geometry mismatch: size " + std::to_string(large) + ", kernel " +
                          std::to_string(k) + ", stride " + std::to_string(stride) + ", pad " +
                          std::to_string(pad));
    return num / stride + 1;
}

/// Unfolds the (c, h, w) tensor into a (c*k*k) x (ho*wo) matrix, one column
/// per small-side pixel. Shared by conv forward and transposed-conv backward.
void im2col(const double* x, int c, int h, int w, int k, int stride, int pad, MatCM& cols) {
    const int ho = small_side(h, k, stride, pad);
    const int wo = small_side(w, k, stride, pad);
    cols.resize(static_cast<Eigen::Index>(c) * k * k, static_cast<Eigen::Index>(ho) * wo);
    for (int oy = 0; oy < ho; ++oy) {
        for (int ox = 0; ox < wo; ++ox) {
            double* col = cols.data() + (static_cast<std::size_t>(oy) * wo + ox) * cols.rows();
            std::size_t r = 0;
            for (int ci = 0; ci < c; ++ci) {
                const double* plane = x + static_cast<std::size_t>(ci) * h * w;
                for (int ky = 0; ky < k; ++ky) {
                    const int iy = oy * stride + ky - pad;
                    for (int kx = 0; kx < k; ++kx, ++r) {
                        const int ix = ox * stride + kx - pad;
                        col[r] = (iy >= 0 && iy < h && ix >= 0 && ix < w)
                                     ? plane[static_cast<std::size_t>(iy) * w + ix]
                                     : 0.0;
                    }
                }
            }
        }
    }
}

/// Scatter-add inverse of im2col; x must be zeroed by the caller.
void col2im(const MatCM& cols, int c, int h, int w, int k, int stride, int pad, double* x) {
    const int ho = small_side(h, k, stride, pad);
    const int wo = small_side(w, k, stride, pad);
    for (int oy = 0; oy < ho; ++oy) {
        for (int ox = 0; ox < wo; ++ox) {
            const double* col = cols.data() + (static_cast<std::size_t>(oy) * wo + ox) * cols.rows();
            std::size_t r = 0;
            for (int ci = 0; ci < c; ++ci) {
                double* plane = x + static_cast<std::size_t>(ci) * h * w;
                for (int ky = 0; ky < k; ++ky) {
                    const int iy = oy * stride + ky - pad;
                    for (int kx = 0; kx < k; ++kx, ++r) {
                        const int ix = ox * stride + kx - pad;
                        if (iy >= 0 && iy < h && ix >= 0 && ix < w)
                            plane[static_cast<std::size_t>(iy) * w + ix] += col[r];
                    }
                }
            }
        }
    }
}

thread_local MatCM tl_cols;
thread_local MatCM tl_dcols;

}  // namespace

void conv2d_forward(const Tensor& w, const Tensor& b, int stride, int pad, const Tensor& x,
                    Tensor& y) {
    const int out_c = w.dim(0), in_c = w.dim(1), k = w.dim(2);
    const int h = x.dim(1), wd = x.dim(2);
    if (x.dim(0) != in_c) throw ConfigError("conv2d: channel mismatch");
    const int ho = small_side(h, k, stride, pad), wo = small_side(wd, k, stride, pad);
    y.resize({out_c, ho, wo});

    im2col(x.data(), in_c, h, wd, k, stride, pad, tl_cols);
    CMapRM wm(w.data(), out_c, static_cast<Eigen::Index>(in_c) * k * k);
    MapRM ym(y.data(), out_c, static_cast<Eigen::Index>(ho) * wo);
    ym.noalias() = wm * tl_cols;
    for (int c = 0; c < out_c; ++c) ym.row(c).array() += b[static_cast<std::size_t>(c)];
}

void conv2d_backward(const Tensor& w, const Tensor& x, int stride, int pad, const Tensor& dy,
                     Tensor* dw, Tensor* db, Tensor* dx) {
    const int out_c = w.dim(0), in_c = w.dim(1), k = w.dim(2);
    const int h = x.dim(1), wd = x.dim(2);
    const int ho = dy.dim(1), wo = dy.dim(2);
    CMapRM wm(w.data(), out_c, static_cast<Eigen::Index>(in_c) * k * k);
    CMapRM dym(dy.data(), out_c, static_cast<Eigen::Index>(ho) * wo);

    if (dw) {
        im2col(x.data(), in_c, h, wd, k, stride, pad, tl_cols);
        MapRM dwm(dw->data(), out_c, static_cast<Eigen::Index>(in_c) * k * k);
        dwm.noalias() += dym * tl_cols.transpose();
    }
    if (db) {
        for (int c = 0; c < out_c; ++c) (*db)[static_cast<std::size_t>(c)] += dym.row(c).sum();
    }
    if (dx) {
        dx->resize({in_c, h, wd});
        tl_dcols.noalias() = wm.transpose() * dym;
        col2im(tl_dcols, in_c, h, wd, k, stride, pad, dx->data());
    }
}

void convt2d_forward(const Tensor& w, const Tensor& b, int stride, int pad, const Tensor& x,
                     Tensor& y) {
    const int in_c = w.dim(0), out_c = w.dim(1), k = w.dim(2);
    if (x.dim(0) != in_c) throw ConfigError("convt2d: channel mismatch");
    const int hi = x.dim(1), wi = x.dim(2);
    const int ho = (hi - 1) * stride + k - 2 * pad;
    const int wo = (wi - 1) * stride + k - 2 * pad;
    y.resize({out_c, ho, wo});

    CMapRM wm(w.data(), in_c, static_cast<Eigen::Index>(out_c) * k * k);
    CMapRM xm(x.data(), in_c, static_cast<Eigen::Index>(hi) * wi);
    tl_cols.noalias() = wm.transpose() * xm;
    col2im(tl_cols, out_c, ho, wo, k, stride, pad, y.data());
    for (int c = 0; c < out_c; ++c) {
        double* plane = y.data() + static_cast<std::size_t>(c) * ho * wo;
        const double bias = b[static_cast<std::size_t>(c)];
        for (int i = 0; i < ho * wo; ++i) plane[i] += bias;
    }
}

void convt2d_backward(const Tensor& w, const Tensor& x, int stride, int pad, const Tensor& dy,
                      Tensor* dw, Tensor* db, Tensor* dx) {
    const int in_c = w.dim(0), out_c = w.dim(1), k = w.dim(2);
    const int hi = x.dim(1), wi = x.dim(2);
    const int ho = dy.dim(1), wo = dy.dim(2);

    im2col(dy.data(), out_c, ho, wo, k, stride, pad, tl_dcols);  // (out_c*k*k) x (hi*wi)
    CMapRM xm(x.data(), in_c, static_cast<Eigen::Index>(hi) * wi);
    if (dw) {
        MapRM dwm(dw->data(), in_c, static_cast<Eigen::Index>(out_c) * k * k);
        dwm.noalias() += xm * tl_dcols.transpose();
    }
    if (db) {
        for (int c = 0; c < out_c; ++c) {
            const double* plane = dy.data() + static_cast<std::size_t>(c) * ho * wo;
            double s = 0.0;
            for (int i = 0; i < ho * wo; ++i) s += plane[i];
            (*db)[static_cast<std::size_t>(c)] += s;
        }
    }
    if (dx) {
        dx->resize({in_c, hi, wi});
        CMapRM wm(w.data(), in_c, static_cast<Eigen::Index>(out_c) * k * k);
        MapRM dxm(dx->data(), in_c, static_cast<Eigen::Index>(hi) * wi);
        dxm.noalias() = wm * tl_dcols;
    }
}

void instance_norm_forward(const Tensor& gamma, const Tensor& beta, const Tensor& x, Tensor& y,
                           Tensor& xhat, std::vector<double>& inv_std) {
    constexpr double kEps = 1e-5;
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    const int m = h * w;
    y.resize({c, h, w});
    xhat.resize({c, h, w});
    inv_std.assign(static_cast<std::size_t>(c), 0.0);
    for (int ci = 0; ci < c; ++ci) {
        const double* xp = x.data() + static_cast<std::size_t>(ci) * m;
        double mean = 0.0;
        for (int i = 0; i < m; ++i) mean += xp[i];
        mean /= m;
        double var = 0.0;
        for (int i = 0; i < m; ++i) {
            const double d = xp[i] - mean;
            var += d * d;
        }
        var /= m;
        const double is = 1.0 / std::sqrt(var + kEps);
        inv_std[static_cast<std::size_t>(ci)] = is;
        const double g = gamma[static_cast<std::size_t>(ci)];
        const double bt = beta[static_cast<std::size_t>(ci)];
        double* xh = xhat.data() + static_cast<std::size_t>(ci) * m;
        double* yp = y.data() + static_cast<std::size_t>(ci) * m;
        for (int i = 0; i < m; ++i) {
            xh[i] = (xp[i] - mean) * is;
            yp[i] = g * xh[i] + bt;
        }
    }
}

void instance_norm_backward(const Tensor& gamma, const Tensor& xhat,
                            const std::vector<double>& inv_std, const Tensor& dy, Tensor* dgamma,
                            Tensor* dbeta, Tensor& dx) {
    const int c = xhat.dim(0), h = xhat.dim(1), w = xhat.dim(2);
    const int m = h * w;
    dx.resize({c, h, w});
    for (int ci = 0; ci < c; ++ci) {
        const double* xh = xhat.data() + static_cast<std::size_t>(ci) * m;
        const double* dyp = dy.data() + static_cast<std::size_t>(ci) * m;
        double* dxp = dx.data() + static_cast<std::size_t>(ci) * m;
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (int i = 0; i < m; ++i) {
            sum_dy += dyp[i];
            sum_dy_xhat += dyp[i] * xh[i];
        }
        if (dgamma) (*dgamma)[static_cast<std::size_t>(ci)] += sum_dy_xhat;
        if (dbeta) (*dbeta)[static_cast<std::size_t>(ci)] += sum_dy;
        const double mean_dy = sum_dy / m;
        const double mean_dy_xhat = sum_dy_xhat / m;
        const double scale = gamma[static_cast<std::size_t>(ci)] * inv_std[static_cast<std::size_t>(ci)];
        for (int i = 0; i < m; ++i)
            dxp[i] = scale * (dyp[i] - mean_dy - xh[i] * mean_dy_xhat);
    }
}

namespace {
constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;

inline double gelu_scalar(double v) { return 0.5 * v * (1.0 + std::erf(v * kInvSqrt2)); }
inline double gelu_grad_scalar(double v) {
    const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
    return cdf + v * kInvSqrt2Pi * std::exp(-0.5 * v * v);
}
}  // namespace

void gelu_forward(const Tensor& x, Tensor& y) {
    y.resize(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = gelu_scalar(x[i]);
}

void gelu_backward(const Tensor& x, const Tensor& dy, Tensor& dx) {
    dx.resize(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) dx[i] = dy[i] * gelu_grad_scalar(x[i]);
}

void sigmoid_forward(const Tensor& x, Tensor& y) {
    y.resize(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = 1.0 / (1.0 + std::exp(-x[i]));
}

void sigmoid_backward(const Tensor& y_out, const Tensor& dy, Tensor& dx) {
    dx.resize(y_out.shape());
    for (std::size_t i = 0; i < y_out.size(); ++i) dx[i] = dy[i] * y_out[i] * (1.0 - y_out[i]);
}

void avgpool2_forward(const Tensor& x, Tensor& y) {
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    if (h % 2 != 0 || w % 2 != 0) throw ConfigError("avgpool2: odd spatial size");
    y.resize({c, h / 2, w / 2});
    for (int ci = 0; ci < c; ++ci)
        for (int oy = 0; oy < h / 2; ++oy)
            for (int ox = 0; ox < w / 2; ++ox)
                y.at(ci, oy, ox) = 0.25 * (x.at(ci, 2 * oy, 2 * ox) + x.at(ci, 2 * oy, 2 * ox + 1) +
                                           x.at(ci, 2 * oy + 1, 2 * ox) +
                                           x.at(ci, 2 * oy + 1, 2 * ox + 1));
}

void avgpool2_backward(int in_h, int in_w, const Tensor& dy, Tensor& dx) {
    const int c = dy.dim(0);
    dx.resize({c, in_h, in_w});
    for (int ci = 0; ci < c; ++ci)
        for (int oy = 0; oy < in_h / 2; ++oy)
            for (int ox = 0; ox < in_w / 2; ++ox) {
                const double g = 0.25 * dy.at(ci, oy, ox);
                dx.at(ci, 2 * oy, 2 * ox) = g;
                dx.at(ci, 2 * oy, 2 * ox + 1) = g;
                dx.at(ci, 2 * oy + 1, 2 * ox) = g;
                dx.at(ci, 2 * oy + 1, 2 * ox + 1) = g;
            }
}

void global_avgpool_forward(const Tensor& x, Tensor& y) {
    const int c = x.dim(0);
    const int m = x.dim(1) * x.dim(2);
    y.resize({c});
    for (int ci = 0; ci < c; ++ci) {
        const double* plane = x.data() + static_cast<std::size_t>(ci) * m;
        double s = 0.0;
        for (int i = 0; i < m; ++i) s += plane[i];
        y[static_cast<std::size_t>(ci)] = s / m;
    }
}

void global_avgpool_backward(int in_h, int in_w, const Tensor& dy, Tensor& dx) {
    const int c = dy.dim(0);
    const int m = in_h * in_w;
    dx.resize({c, in_h, in_w});
    for (int ci = 0; ci < c; ++ci) {
        const double g = dy[static_cast<std::size_t>(ci)] / m;
        double* plane = dx.data() + static_cast<std::size_t>(ci) * m;
        for (int i = 0; i < m; ++i) plane[i] = g;
    }
}

void linear_forward(const Tensor& w, const Tensor& b, const Tensor& x, Tensor& y) {
    const int out = w.dim(0), in = w.dim(1);
    y.resize({out});
    CMapRM wm(w.data(), out, in);
    Eigen::Map<const Eigen::VectorXd> xv(x.data(), in);
    Eigen::Map<Eigen::VectorXd> yv(y.data(), out);
    Eigen::Map<const Eigen::VectorXd> bv(b.data(), out);
    yv.noalias() = wm * xv + bv;
}

void linear_backward(const Tensor& w, const Tensor& x, const Tensor& dy, Tensor* dw, Tensor* db,
                     Tensor* dx) {
    const int out = w.dim(0), in = w.dim(1);
    CMapRM wm(w.data(), out, in);
    Eigen::Map<const Eigen::VectorXd> xv(x.data(), in);
    Eigen::Map<const Eigen::VectorXd> dyv(dy.data(), out);
    if (dw) {
        MapRM dwm(dw->data(), out, in);
        dwm.noalias() += dyv * xv.transpose();
    }
    if (db) {
        Eigen::Map<Eigen::VectorXd> dbv(db->data(), out);
        dbv.noalias() += dyv;
    }
    if (dx) {
        dx->resize({in});
        Eigen::Map<Eigen::VectorXd> dxv(dx->data(), in);
        dxv.noalias() = wm.transpose() * dyv;
    }
}

DropBlockMask sample_dropblock_mask(int channels, int height, int width, int block_size,
                                    double drop_prob, std::uint64_t seed) {
    if (block_size > height || block_size > width)
        throw ConfigError("dropblock block_size exceeds feature map");
    DropBlockMask out;
    out.block_size = block_size;
    out.multiplier = Tensor({channels, height, width});
    out.multiplier.fill(1.0);
    out.block_origins.assign(static_cast<std::size_t>(channels), {});
    if (drop_prob <= 0.0) return out;

    const int vh = height - block_size + 1;
    const int vw = width - block_size + 1;
    const double gamma = drop_prob * (static_cast<double>(height) * width) /
                         (static_cast<double>(block_size) * block_size * vh * vw);
    const int total = height * width;
    for (int c = 0; c < channels; ++c) {
        Rng rng(derive_seed(seed, Stream::DropBlock, static_cast<std::uint64_t>(c)));
        double* plane = out.multiplier.data() + static_cast<std::size_t>(c) * total;
        auto& origins = out.block_origins[static_cast<std::size_t>(c)];
        for (int cy = 0; cy < vh; ++cy)
            for (int cx = 0; cx < vw; ++cx)
                if (rng.bernoulli(gamma)) {
                    origins.emplace_back(cy, cx);
                    for (int y = cy; y < cy + block_size; ++y)
                        for (int x = cx; x < cx + block_size; ++x)
                            plane[static_cast<std::size_t>(y) * width + x] = 0.0;
                }
        int kept = 0;
        for (int i = 0; i < total; ++i)
            if (plane[i] != 0.0) ++kept;
        const double scale = kept > 0 ? static_cast<double>(total) / kept : 0.0;
        for (int i = 0; i < total; ++i) plane[i] *= scale;
    }
    return out;
}

Tensor dropblock(const Tensor& feature_map, int block_size, double drop_prob, std::uint64_t seed,
                 Mode mode) {
    if (mode == Mode::Eval || drop_prob <= 0.0) return feature_map;
    const DropBlockMask mask = sample_dropblock_mask(feature_map.dim(0), feature_map.dim(1),
                                                     feature_map.dim(2), block_size, drop_prob, seed);
    Tensor out = feature_map;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask.multiplier[i];
    return out;
}

}  // namespace rgfs
