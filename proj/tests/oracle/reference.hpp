#pragma once

// Plain double-precision reimplementations of the forward passes, written
// from the definitions and sharing no code with the library. They serve as
// value oracles and as the function that finite differences are taken on.

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <vector>

namespace oracle {

using Dims = std::vector<std::int64_t>;

struct Arr {
    Dims shape;
    std::vector<double> v;

    Arr() = default;
    explicit Arr(Dims s, double fill = 0.0) : shape(std::move(s)), v(count(shape), fill) {}
    Arr(Dims s, std::vector<double> values) : shape(std::move(s)), v(std::move(values)) {
        if (v.size() != count(shape)) throw std::invalid_argument("oracle::Arr: size mismatch");
    }

    static std::size_t count(const Dims& s) {
        std::size_t n = 1;
        for (auto d : s) n *= static_cast<std::size_t>(d);
        return n;
    }
    std::size_t size() const { return v.size(); }
    std::int64_t dim(int i) const { return shape[static_cast<std::size_t>(i < 0 ? i + static_cast<int>(shape.size()) : i)]; }
    double& operator[](std::size_t i) { return v[i]; }
    double operator[](std::size_t i) const { return v[i]; }
};

inline Arr reshape(Arr a, Dims s) {
    if (Arr::count(s) != a.size()) throw std::invalid_argument("oracle::reshape");
    a.shape = std::move(s);
    return a;
}

// numpy broadcasting by explicit multi-index walk.
inline Arr broadcast(const Arr& a, const Arr& b, const std::function<double(double, double)>& f) {
    const std::size_t r = std::max(a.shape.size(), b.shape.size());
    Dims sa(r, 1), sb(r, 1), so(r, 1);
    std::copy(a.shape.begin(), a.shape.end(), sa.begin() + static_cast<std::ptrdiff_t>(r - a.shape.size()));
    std::copy(b.shape.begin(), b.shape.end(), sb.begin() + static_cast<std::ptrdiff_t>(r - b.shape.size()));
    for (std::size_t i = 0; i < r; ++i) {
        if (sa[i] != sb[i] && sa[i] != 1 && sb[i] != 1) throw std::invalid_argument("oracle::broadcast");
        so[i] = std::max(sa[i], sb[i]);
    }
    Arr out(so);
    Dims idx(r, 0);
    for (std::size_t flat = 0; flat < out.size(); ++flat) {
        std::size_t ia = 0, ib = 0;
        for (std::size_t d = 0; d < r; ++d) {
            ia = ia * static_cast<std::size_t>(sa[d]) + static_cast<std::size_t>(sa[d] == 1 ? 0 : idx[d]);
            ib = ib * static_cast<std::size_t>(sb[d]) + static_cast<std::size_t>(sb[d] == 1 ? 0 : idx[d]);
        }
        out[flat] = f(a[ia], b[ib]);
        for (std::size_t d = r; d-- > 0;) {
            if (++idx[d] < so[d]) break;
            idx[d] = 0;
        }
    }
    return out;
}

inline Arr add(const Arr& a, const Arr& b) { return broadcast(a, b, [](double x, double y) { return x + y; }); }
inline Arr sub(const Arr& a, const Arr& b) { return broadcast(a, b, [](double x, double y) { return x - y; }); }
inline Arr mul(const Arr& a, const Arr& b) { return broadcast(a, b, [](double x, double y) { return x * y; }); }

inline Arr map(Arr a, const std::function<double(double)>& f) {
    for (auto& x : a.v) x = f(x);
    return a;
}
inline Arr scale(const Arr& a, double s) { return map(a, [s](double x) { return x * s; }); }
inline Arr relu(const Arr& a) { return map(a, [](double x) { return x > 0 ? x : 0.0; }); }
inline Arr prelu(const Arr& a, double slope) { return map(a, [slope](double x) { return x > 0 ? x : slope * x; }); }
inline Arr sigmoid(const Arr& a) { return map(a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); }); }
inline Arr tanh(const Arr& a) { return map(a, [](double x) { return std::tanh(x); }); }
inline Arr log(const Arr& a, double eps = 0.0) { return map(a, [eps](double x) { return std::log(x + eps); }); }
inline Arr rsqrt_or_zero(const Arr& a) { return map(a, [](double x) { return x > 0 ? 1.0 / std::sqrt(x) : 0.0; }); }

inline Arr transpose(const Arr& a) {
    const std::size_t r = a.shape.size();
    const std::int64_t M = a.shape[r - 2], P = a.shape[r - 1];
    const std::size_t batch = a.size() / static_cast<std::size_t>(M * P);
    Dims s = a.shape;
    std::swap(s[r - 2], s[r - 1]);
    Arr out(s);
    for (std::size_t b = 0; b < batch; ++b)
        for (std::int64_t i = 0; i < M; ++i)
            for (std::int64_t j = 0; j < P; ++j) out[b * M * P + j * M + i] = a[b * M * P + i * P + j];
    return out;
}

// Batched matmul; batch dims broadcast.
inline Arr matmul(const Arr& a, const Arr& b) {
    const std::int64_t M = a.dim(-2), K = a.dim(-1), P = b.dim(-1);
    if (b.dim(-2) != K) throw std::invalid_argument("oracle::matmul");
    Arr ba(Dims(a.shape.begin(), a.shape.end() - 2)), bb(Dims(b.shape.begin(), b.shape.end() - 2));
    // Index maps through broadcasting of two index arrays.
    for (std::size_t i = 0; i < ba.size(); ++i) ba[i] = static_cast<double>(i);
    for (std::size_t i = 0; i < bb.size(); ++i) bb[i] = static_cast<double>(i);
    const Arr ia = broadcast(ba, bb, [](double x, double) { return x; });
    const Arr ib = broadcast(ba, bb, [](double, double y) { return y; });
    Dims s = ia.shape;
    s.push_back(M);
    s.push_back(P);
    Arr out(s);
    for (std::size_t t = 0; t < ia.size(); ++t) {
        const auto oa = static_cast<std::size_t>(ia[t]) * static_cast<std::size_t>(M * K);
        const auto ob = static_cast<std::size_t>(ib[t]) * static_cast<std::size_t>(K * P);
        for (std::int64_t i = 0; i < M; ++i)
            for (std::int64_t j = 0; j < P; ++j) {
                double acc = 0.0;
                for (std::int64_t k = 0; k < K; ++k) acc += a[oa + i * K + k] * b[ob + k * P + j];
                out[t * M * P + i * P + j] = acc;
            }
    }
    return out;
}

// Splits the shape around `axis` into outer * n * inner.
struct AxisView {
    std::size_t outer = 1, n = 1, inner = 1;
    AxisView(const Dims& s, std::int64_t axis) {
        const auto ax = static_cast<std::size_t>(axis < 0 ? axis + static_cast<std::int64_t>(s.size()) : axis);
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (i < ax) outer *= static_cast<std::size_t>(s[i]);
            else if (i == ax) n = static_cast<std::size_t>(s[i]);
            else inner *= static_cast<std::size_t>(s[i]);
        }
    }
};

inline std::size_t norm_axis(const Dims& s, std::int64_t axis) {
    return static_cast<std::size_t>(axis < 0 ? axis + static_cast<std::int64_t>(s.size()) : axis);
}

inline Arr slice(const Arr& a, std::int64_t axis, std::int64_t start, std::int64_t len) {
    const AxisView av(a.shape, axis);
    Dims s = a.shape;
    s[norm_axis(s, axis)] = len;
    Arr out(s);
    for (std::size_t o = 0; o < av.outer; ++o)
        for (std::int64_t k = 0; k < len; ++k)
            for (std::size_t i = 0; i < av.inner; ++i)
                out[(o * len + k) * av.inner + i] = a[(o * av.n + start + k) * av.inner + i];
    return out;
}

inline Arr concat(const std::vector<Arr>& parts, std::int64_t axis) {
    Dims s = parts.front().shape;
    const auto ax = norm_axis(s, axis);
    s[ax] = 0;
    for (const auto& p : parts) s[ax] += p.shape[ax];
    Arr out(s);
    const AxisView ov(s, axis);
    std::size_t offset = 0;
    for (const auto& p : parts) {
        const AxisView pv(p.shape, axis);
        for (std::size_t o = 0; o < pv.outer; ++o)
            for (std::size_t k = 0; k < pv.n; ++k)
                for (std::size_t i = 0; i < pv.inner; ++i)
                    out[(o * ov.n + offset + k) * ov.inner + i] = p[(o * pv.n + k) * pv.inner + i];
        offset += pv.n;
    }
    return out;
}

inline double sum(const Arr& a) {
    double s = 0.0;
    for (double x : a.v) s += x;
    return s;
}
inline double mean(const Arr& a) { return sum(a) / static_cast<double>(a.size()); }

inline Arr sum(const Arr& a, std::int64_t axis) {
    const AxisView av(a.shape, axis);
    Dims s = a.shape;
    s.erase(s.begin() + static_cast<std::ptrdiff_t>(norm_axis(a.shape, axis)));
    Arr out(s);
    for (std::size_t o = 0; o < av.outer; ++o)
        for (std::size_t k = 0; k < av.n; ++k)
            for (std::size_t i = 0; i < av.inner; ++i) out[o * av.inner + i] += a[(o * av.n + k) * av.inner + i];
    return out;
}
inline Arr mean(const Arr& a, std::int64_t axis) {
    const auto n = static_cast<double>(a.shape[norm_axis(a.shape, axis)]);
    return scale(sum(a, axis), 1.0 / n);
}

inline Arr softmax(const Arr& a) {
    const std::size_t C = static_cast<std::size_t>(a.dim(-1)), rows = a.size() / C;
    Arr out(a.shape);
    for (std::size_t r = 0; r < rows; ++r) {
        double m = a[r * C];
        for (std::size_t c = 1; c < C; ++c) m = std::max(m, a[r * C + c]);
        double z = 0.0;
        for (std::size_t c = 0; c < C; ++c) z += std::exp(a[r * C + c] - m);
        for (std::size_t c = 0; c < C; ++c) out[r * C + c] = std::exp(a[r * C + c] - m) / z;
    }
    return out;
}

inline Arr l2_normalize_rows(const Arr& a, double eps = 1e-12) {
    const std::size_t C = static_cast<std::size_t>(a.dim(-1)), rows = a.size() / C;
    Arr out(a.shape);
    for (std::size_t r = 0; r < rows; ++r) {
        double n = 0.0;
        for (std::size_t c = 0; c < C; ++c) n += a[r * C + c] * a[r * C + c];
        const double d = std::max(std::sqrt(n), eps);
        for (std::size_t c = 0; c < C; ++c) out[r * C + c] = a[r * C + c] / d;
    }
    return out;
}

// x [B, Cin, L], w [Cout, Cin, K], b [Cout]
inline Arr conv1d(const Arr& x, const Arr& w, const Arr& b, std::int64_t stride, std::int64_t pad) {
    const std::int64_t B = x.dim(0), Cin = x.dim(1), L = x.dim(2), Cout = w.dim(0), K = w.dim(2);
    const std::int64_t Lout = (L + 2 * pad - K) / stride + 1;
    Arr out({B, Cout, Lout});
    for (std::int64_t n = 0; n < B; ++n)
        for (std::int64_t co = 0; co < Cout; ++co)
            for (std::int64_t t = 0; t < Lout; ++t) {
                double acc = b[static_cast<std::size_t>(co)];
                for (std::int64_t ci = 0; ci < Cin; ++ci)
                    for (std::int64_t k = 0; k < K; ++k) {
                        const std::int64_t src = t * stride + k - pad;
                        if (src < 0 || src >= L) continue;
                        acc += w[static_cast<std::size_t>((co * Cin + ci) * K + k)] *
                               x[static_cast<std::size_t>((n * Cin + ci) * L + src)];
                    }
                out[static_cast<std::size_t>((n * Cout + co) * Lout + t)] = acc;
            }
    return out;
}

inline Arr maxpool1d(const Arr& x, std::int64_t kernel, std::int64_t stride) {
    const std::int64_t L = x.dim(-1), Lout = (L - kernel) / stride + 1;
    const std::size_t rows = x.size() / static_cast<std::size_t>(L);
    Dims s = x.shape;
    s.back() = Lout;
    Arr out(s);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::int64_t t = 0; t < Lout; ++t) {
            double m = -INFINITY;
            for (std::int64_t k = 0; k < kernel; ++k) m = std::max(m, x[r * L + t * stride + k]);
            out[r * Lout + t] = m;
        }
    return out;
}

// Batch statistics (biased variance) over every axis but the channel axis.
inline Arr batchnorm_train(const Arr& x, const Arr& gamma, const Arr& beta, double eps = 1e-5) {
    const std::int64_t B = x.dim(0), C = x.dim(1);
    const std::int64_t L = x.shape.size() == 3 ? x.dim(2) : 1;
    Arr out(x.shape);
    for (std::int64_t c = 0; c < C; ++c) {
        double mu = 0.0, var = 0.0;
        for (std::int64_t b = 0; b < B; ++b)
            for (std::int64_t t = 0; t < L; ++t) mu += x[static_cast<std::size_t>((b * C + c) * L + t)];
        mu /= static_cast<double>(B * L);
        for (std::int64_t b = 0; b < B; ++b)
            for (std::int64_t t = 0; t < L; ++t) {
                const double d = x[static_cast<std::size_t>((b * C + c) * L + t)] - mu;
                var += d * d;
            }
        var /= static_cast<double>(B * L);
        for (std::int64_t b = 0; b < B; ++b)
            for (std::int64_t t = 0; t < L; ++t) {
                const auto i = static_cast<std::size_t>((b * C + c) * L + t);
                out[i] = gamma[static_cast<std::size_t>(c)] * (x[i] - mu) / std::sqrt(var + eps) +
                         beta[static_cast<std::size_t>(c)];
            }
    }
    return out;
}

inline Arr batchnorm_eval(const Arr& x, const Arr& gamma, const Arr& beta, const Arr& rmean, const Arr& rvar,
                          double eps = 1e-5) {
    const std::int64_t B = x.dim(0), C = x.dim(1);
    const std::int64_t L = x.shape.size() == 3 ? x.dim(2) : 1;
    Arr out(x.shape);
    for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t c = 0; c < C; ++c)
            for (std::int64_t t = 0; t < L; ++t) {
                const auto i = static_cast<std::size_t>((b * C + c) * L + t);
                const auto k = static_cast<std::size_t>(c);
                out[i] = gamma[k] * (x[i] - rmean[k]) / std::sqrt(rvar[k] + eps) + beta[k];
            }
    return out;
}

struct ConvLayer {
    Arr w, b, gamma, beta;
    std::int64_t pad = 0;
};

// Per-channel CNN: conv -> ReLU -> BN(batch stats) -> maxpool 2, then mean over time.
inline Arr temporal_cnn(const std::vector<ConvLayer>& layers, const Arr& x) {
    const std::int64_t B = x.dim(0), N = x.dim(1), L = x.dim(2);
    Arr h = reshape(x, {B * N, 1, L});
    for (const auto& l : layers) {
        h = conv1d(h, l.w, l.b, 1, l.pad);
        h = relu(h);
        h = batchnorm_train(h, l.gamma, l.beta);
        h = maxpool1d(h, 2, 2);
    }
    const std::int64_t F = h.dim(1);
    return reshape(mean(h, -1), {B, N, F});
}

// A_ij = ReLU(cos(z_i, z_j))
inline Arr graph_learner(const Arr& z) {
    const std::int64_t B = z.dim(0), N = z.dim(1), F = z.dim(2);
    Arr a({B, N, N});
    for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t i = 0; i < N; ++i)
            for (std::int64_t j = 0; j < N; ++j) {
                double dot = 0.0, ni = 0.0, nj = 0.0;
                for (std::int64_t f = 0; f < F; ++f) {
                    const double u = z[static_cast<std::size_t>((b * N + i) * F + f)];
                    const double v = z[static_cast<std::size_t>((b * N + j) * F + f)];
                    dot += u * v;
                    ni += u * u;
                    nj += v * v;
                }
                const double c = dot / (std::max(std::sqrt(ni), 1e-12) * std::max(std::sqrt(nj), 1e-12));
                a[static_cast<std::size_t>((b * N + i) * N + j)] = std::max(c, 0.0);
            }
    return a;
}

inline Arr normalize_adjacency(const Arr& a) {
    const std::int64_t B = a.dim(0), N = a.dim(1);
    Arr out(a.shape);
    for (std::int64_t b = 0; b < B; ++b) {
        std::vector<double> d(static_cast<std::size_t>(N));
        for (std::int64_t i = 0; i < N; ++i) {
            double deg = 0.0;
            for (std::int64_t j = 0; j < N; ++j) deg += a[static_cast<std::size_t>((b * N + i) * N + j)];
            d[static_cast<std::size_t>(i)] = deg > 0 ? 1.0 / std::sqrt(deg) : 0.0;
        }
        for (std::int64_t i = 0; i < N; ++i)
            for (std::int64_t j = 0; j < N; ++j) {
                const auto k = static_cast<std::size_t>((b * N + i) * N + j);
                out[k] = d[static_cast<std::size_t>(i)] * a[k] * d[static_cast<std::size_t>(j)];
            }
    }
    return out;
}

inline Arr graph_conv(const Arr& x, const Arr& a, const Arr& w, double slope) {
    return prelu(matmul(matmul(normalize_adjacency(a), x), w), slope);
}

inline Arr classify(const Arr& h, const Arr& w, const Arr& b) {
    return add(matmul(reshape(h, {h.dim(0), h.dim(1) * h.dim(2)}), w), b);
}

struct Lstm {
    Arr w_ih, w_hh, b, w_out, b_out;
};

// Scalar-loop LSTM over the node axis. Gates packed i, f, g, o.
inline Arr restore_temporal(const Lstm& p, const Arr& hm) {
    const std::int64_t B = hm.dim(0), N = hm.dim(1), D = hm.dim(2);
    Arr out(hm.shape);
    for (std::int64_t s = 0; s < B; ++s) {
        std::vector<double> h(static_cast<std::size_t>(D), 0.0), c(h), gates(static_cast<std::size_t>(4 * D));
        for (std::int64_t t = 0; t < N; ++t) {
            const double* x = &hm.v[static_cast<std::size_t>((s * N + t) * D)];
            for (std::int64_t g = 0; g < 4 * D; ++g) {
                double acc = p.b[static_cast<std::size_t>(g)];
                for (std::int64_t k = 0; k < D; ++k) {
                    acc += x[k] * p.w_ih[static_cast<std::size_t>(k * 4 * D + g)];
                    acc += h[static_cast<std::size_t>(k)] * p.w_hh[static_cast<std::size_t>(k * 4 * D + g)];
                }
                gates[static_cast<std::size_t>(g)] = acc;
            }
            auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
            for (std::int64_t k = 0; k < D; ++k) {
                const double ig = sig(gates[static_cast<std::size_t>(k)]);
                const double fg = sig(gates[static_cast<std::size_t>(D + k)]);
                const double gg = std::tanh(gates[static_cast<std::size_t>(2 * D + k)]);
                const double og = sig(gates[static_cast<std::size_t>(3 * D + k)]);
                c[static_cast<std::size_t>(k)] = fg * c[static_cast<std::size_t>(k)] + ig * gg;
                h[static_cast<std::size_t>(k)] = og * std::tanh(c[static_cast<std::size_t>(k)]);
            }
            for (std::int64_t j = 0; j < D; ++j) {
                double acc = p.b_out[static_cast<std::size_t>(j)];
                for (std::int64_t k = 0; k < D; ++k)
                    acc += h[static_cast<std::size_t>(k)] * p.w_out[static_cast<std::size_t>(k * D + j)];
                out[static_cast<std::size_t>((s * N + t) * D + j)] = acc;
            }
        }
    }
    return out;
}

inline Arr rewire_spatial(const Arr& w, double slope, const Arr& h, const Arr& a_masked) {
    const Arr zn = l2_normalize_rows(graph_conv(h, a_masked, w, slope));
    return matmul(zn, transpose(zn));
}

// -(1/B) sum_i sum_k t_ik log(p_ik + 1e-8)
inline double cls_loss(const Arr& logits, const std::vector<int>& y, double eta) {
    const std::int64_t B = logits.dim(0), K = logits.dim(1);
    const Arr p = softmax(logits);
    double loss = 0.0;
    for (std::int64_t i = 0; i < B; ++i)
        for (std::int64_t k = 0; k < K; ++k) {
            const double t = (k == y[static_cast<std::size_t>(i)] ? 1.0 - eta : 0.0) + eta / static_cast<double>(K);
            loss -= t * std::log(p[static_cast<std::size_t>(i * K + k)] + 1e-8);
        }
    return loss / static_cast<double>(B);
}

// Squared L2 per sample, averaged over the batch.
inline double squared_error(const Arr& a, const Arr& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return s / static_cast<double>(a.dim(0));
}

struct Im {
    double entropy, diversity;
    double total() const { return entropy + diversity; }
};

inline Im im_loss(const Arr& logits) {
    const std::int64_t B = logits.dim(0), K = logits.dim(1);
    const Arr p = softmax(logits);
    double ent = 0.0;
    std::vector<double> pbar(static_cast<std::size_t>(K), 0.0);
    for (std::int64_t i = 0; i < B; ++i)
        for (std::int64_t k = 0; k < K; ++k) {
            const double q = p[static_cast<std::size_t>(i * K + k)];
            ent -= q * std::log(q + 1e-8);
            pbar[static_cast<std::size_t>(k)] += q / static_cast<double>(B);
        }
    double div = 0.0;
    for (double q : pbar) div += q * std::log(q + 1e-8);
    return {ent / static_cast<double>(B), div};
}

}  // namespace oracle
