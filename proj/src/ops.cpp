#include "terse/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "terse/error.hpp"

namespace terse::ops {

namespace {

using NodePtr = std::shared_ptr<detail::Node>;
using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

// Gradient buffer of parent i, or nullptr when that parent needs none.
float* parent_grad(detail::Node& self, std::size_t i) {
    auto& p = self.parents[i];
    if (!p->requires_grad) return nullptr;
    p->ensure_grad();
    return p->grad.data();
}

std::int64_t norm_axis(std::int64_t axis, std::int64_t rank) {
    const auto a = axis < 0 ? axis + rank : axis;
    if (a < 0 || a >= rank) throw DimensionError("axis " + std::to_string(axis) + " out of range");
    return a;
}

// Flat-index maps from an output of broadcast shape back to each operand.
struct Broadcast {
    Shape out;
    bool same = false;
    std::vector<std::int64_t> ia, ib;
};

Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
    const std::size_t r = std::max(a.size(), b.size());
    Shape out(r);
    for (std::size_t i = 0; i < r; ++i) {
        const std::int64_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
        const std::int64_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
        if (da != db && da != 1 && db != 1) {
            throw DimensionError(std::string(op) + ": shapes " + shape_str(a) + " and " + shape_str(b) +
                                 " do not broadcast");
        }
        out[i] = std::max(da, db);
    }
    return out;
}

std::vector<std::int64_t> index_map(const Shape& out, const Shape& in) {
    const std::size_t r = out.size();
    std::vector<std::int64_t> stride(r, 0);
    std::int64_t s = 1;
    for (std::size_t k = 0; k < in.size(); ++k) {
        const std::size_t j = in.size() - 1 - k;
        const std::size_t oj = r - 1 - k;
        stride[oj] = in[j] == 1 ? 0 : s;
        s *= in[j];
    }
    const auto n = numel_of(out);
    std::vector<std::int64_t> map(static_cast<std::size_t>(n));
    std::vector<std::int64_t> idx(r, 0);
    std::int64_t off = 0;
    for (std::int64_t f = 0; f < n; ++f) {
        map[static_cast<std::size_t>(f)] = off;
        for (std::size_t k = r; k-- > 0;) {
            if (++idx[k] < out[k]) {
                off += stride[k];
                break;
            }
            off -= stride[k] * (out[k] - 1);
            idx[k] = 0;
        }
    }
    return map;
}

Broadcast plan(const Shape& a, const Shape& b, const char* op) {
    Broadcast p;
    if (a == b) {
        p.out = a;
        p.same = true;
        return p;
    }
    p.out = broadcast_shape(a, b, op);
    p.ia = index_map(p.out, a);
    p.ib = index_map(p.out, b);
    return p;
}

enum class Binary { add, sub, mul };

Tensor binary(const Tensor& a, const Tensor& b, Binary kind, const char* name) {
    auto bp = std::make_shared<Broadcast>(plan(a.shape(), b.shape(), name));
    const auto n = static_cast<std::size_t>(numel_of(bp->out));
    const float* av = a.data().data();
    const float* bv = b.data().data();
    std::vector<float> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        const float x = av[bp->same ? i : static_cast<std::size_t>(bp->ia[i])];
        const float y = bv[bp->same ? i : static_cast<std::size_t>(bp->ib[i])];
        out[i] = kind == Binary::add ? x + y : kind == Binary::sub ? x - y : x * y;
    }
    return Tensor::make_result(bp->out, std::move(out), {a.node_ptr(), b.node_ptr()},
                               [bp, kind, n](detail::Node& self) {
                                   const float* g = self.grad.data();
                                   const auto& av = self.parents[0]->value;
                                   const auto& bv = self.parents[1]->value;
                                   float* ga = parent_grad(self, 0);
                                   float* gb = parent_grad(self, 1);
                                   for (std::size_t i = 0; i < n; ++i) {
                                       const std::size_t ja = bp->same ? i : static_cast<std::size_t>(bp->ia[i]);
                                       const std::size_t jb = bp->same ? i : static_cast<std::size_t>(bp->ib[i]);
                                       switch (kind) {
                                           case Binary::add:
                                               if (ga) ga[ja] += g[i];
                                               if (gb) gb[jb] += g[i];
                                               break;
                                           case Binary::sub:
                                               if (ga) ga[ja] += g[i];
                                               if (gb) gb[jb] -= g[i];
                                               break;
                                           case Binary::mul:
                                               if (ga) ga[ja] += g[i] * bv[jb];
                                               if (gb) gb[jb] += g[i] * av[ja];
                                               break;
                                       }
                                   }
                               },
                               name);
}

// Elementwise unary op; dfdx receives (x, y) and returns the local derivative.
template <typename F, typename D>
Tensor unary(const Tensor& x, F f, D dfdx, const char* name) {
    const auto xv = x.data();
    std::vector<float> out(xv.size());
    std::transform(xv.begin(), xv.end(), out.begin(), f);
    return Tensor::make_result(x.shape(), std::move(out), {x.node_ptr()},
                               [dfdx](detail::Node& self) {
                                   float* gx = parent_grad(self, 0);
                                   if (!gx) return;
                                   const auto& xv = self.parents[0]->value;
                                   for (std::size_t i = 0; i < xv.size(); ++i) {
                                       gx[i] += self.grad[i] * dfdx(xv[i], self.value[i]);
                                   }
                               },
                               name);
}

// Decomposes a shape around one axis into outer x axis x inner.
struct AxisSplit {
    std::int64_t outer = 1, len = 1, inner = 1;
};

AxisSplit split_at(const Shape& s, std::int64_t axis) {
    AxisSplit r;
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(s.size()); ++i) {
        if (i < axis) r.outer *= s[i];
        else if (i == axis) r.len = s[i];
        else r.inner *= s[i];
    }
    return r;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, Binary::add, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, Binary::sub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, Binary::mul, "mul"); }

Tensor scale(const Tensor& x, float s) {
    return unary(x, [s](float v) { return v * s; }, [s](float, float) { return s; }, "scale");
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sa.size() < 2 || sb.size() < 2 || sa.back() != sb[sb.size() - 2]) {
        throw DimensionError("matmul: incompatible shapes " + shape_str(sa) + " and " + shape_str(sb));
    }
    const std::int64_t M = sa[sa.size() - 2], K = sa.back(), P = sb.back();
    const Shape ba(sa.begin(), sa.end() - 2);
    const Shape bb(sb.begin(), sb.end() - 2);
    Shape batch;
    try {
        batch = broadcast_shape(ba, bb, "matmul");
    } catch (const DimensionError&) {
        throw DimensionError("matmul: batch dims of " + shape_str(sa) + " and " + shape_str(sb) +
                             " do not broadcast");
    }
    const auto nb = numel_of(batch);
    auto amap = std::make_shared<std::vector<std::int64_t>>(index_map(batch, ba));
    auto bmap = std::make_shared<std::vector<std::int64_t>>(index_map(batch, bb));
    Shape out_shape = batch;
    out_shape.push_back(M);
    out_shape.push_back(P);
    std::vector<float> out(static_cast<std::size_t>(nb * M * P));
    const float* av = a.data().data();
    const float* bv = b.data().data();
    for (std::int64_t i = 0; i < nb; ++i) {
        CMapMat A(av + (*amap)[i] * M * K, M, K);
        CMapMat B(bv + (*bmap)[i] * K * P, K, P);
        MapMat C(out.data() + i * M * P, M, P);
        C.noalias() = A * B;
    }
    return Tensor::make_result(std::move(out_shape), std::move(out), {a.node_ptr(), b.node_ptr()},
                               [amap, bmap, nb, M, K, P](detail::Node& self) {
                                   float* ga = parent_grad(self, 0);
                                   float* gb = parent_grad(self, 1);
                                   const float* av = self.parents[0]->value.data();
                                   const float* bv = self.parents[1]->value.data();
                                   for (std::int64_t i = 0; i < nb; ++i) {
                                       CMapMat G(self.grad.data() + i * M * P, M, P);
                                       if (ga) {
                                           CMapMat B(bv + (*bmap)[i] * K * P, K, P);
                                           MapMat GA(ga + (*amap)[i] * M * K, M, K);
                                           GA.noalias() += G * B.transpose();
                                       }
                                       if (gb) {
                                           CMapMat A(av + (*amap)[i] * M * K, M, K);
                                           MapMat GB(gb + (*bmap)[i] * K * P, K, P);
                                           GB.noalias() += A.transpose() * G;
                                       }
                                   }
                               },
                               "matmul");
}

Tensor transpose(const Tensor& x) {
    const Shape& s = x.shape();
    if (s.size() < 2) throw DimensionError("transpose: need rank >= 2, got " + shape_str(s));
    const std::int64_t R = s[s.size() - 2], C = s.back();
    const std::int64_t nb = x.numel() / std::max<std::int64_t>(R * C, 1);
    Shape out_shape = s;
    std::swap(out_shape[s.size() - 2], out_shape[s.size() - 1]);
    std::vector<float> out(static_cast<std::size_t>(x.numel()));
    const float* xv = x.data().data();
    for (std::int64_t b = 0; b < nb; ++b)
        for (std::int64_t r = 0; r < R; ++r)
            for (std::int64_t c = 0; c < C; ++c) out[b * R * C + c * R + r] = xv[b * R * C + r * C + c];
    return Tensor::make_result(std::move(out_shape), std::move(out), {x.node_ptr()},
                               [nb, R, C](detail::Node& self) {
                                   float* gx = parent_grad(self, 0);
                                   if (!gx) return;
                                   for (std::int64_t b = 0; b < nb; ++b)
                                       for (std::int64_t r = 0; r < R; ++r)
                                           for (std::int64_t c = 0; c < C; ++c)
                                               gx[b * R * C + r * C + c] += self.grad[b * R * C + c * R + r];
                               },
                               "transpose");
}

Tensor reshape(const Tensor& x, const Shape& shape) {
    if (numel_of(shape) != x.numel()) {
        throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
    }
    std::vector<float> out(x.data().begin(), x.data().end());
    return Tensor::make_result(shape, std::move(out), {x.node_ptr()},
                               [](detail::Node& self) {
                                   float* gx = parent_grad(self, 0);
                                   if (!gx) return;
                                   for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += self.grad[i];
                               },
                               "reshape");
}

Tensor concat(const std::vector<Tensor>& parts, std::int64_t axis) {
    if (parts.empty()) throw DimensionError("concat: no inputs");
    const Shape& s0 = parts[0].shape();
    const auto ax = norm_axis(axis, static_cast<std::int64_t>(s0.size()));
    Shape out_shape = s0;
    out_shape[ax] = 0;
    std::vector<std::int64_t> lens;
    std::vector<NodePtr> nodes;
    for (const auto& p : parts) {
        const Shape& s = p.shape();
        bool ok = s.size() == s0.size();
        for (std::size_t i = 0; ok && i < s.size(); ++i) ok = static_cast<std::int64_t>(i) == ax || s[i] == s0[i];
        if (!ok) throw DimensionError("concat: shape " + shape_str(s) + " incompatible with " + shape_str(s0));
        out_shape[ax] += s[ax];
        lens.push_back(s[ax]);
        nodes.push_back(p.node_ptr());
    }
    const auto sp = split_at(out_shape, ax);
    std::vector<float> out(static_cast<std::size_t>(numel_of(out_shape)));
    std::int64_t offset = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const float* pv = parts[k].data().data();
        for (std::int64_t o = 0; o < sp.outer; ++o) {
            std::copy_n(pv + o * lens[k] * sp.inner, lens[k] * sp.inner,
                        out.data() + (o * sp.len + offset) * sp.inner);
        }
        offset += lens[k];
    }
    return Tensor::make_result(std::move(out_shape), std::move(out), std::move(nodes),
                               [lens, sp](detail::Node& self) {
                                   std::int64_t offset = 0;
                                   for (std::size_t k = 0; k < lens.size(); ++k) {
                                       if (float* gp = parent_grad(self, k)) {
                                           for (std::int64_t o = 0; o < sp.outer; ++o) {
                                               const float* src = self.grad.data() + (o * sp.len + offset) * sp.inner;
                                               float* dst = gp + o * lens[k] * sp.inner;
                                               for (std::int64_t i = 0; i < lens[k] * sp.inner; ++i) dst[i] += src[i];
                                           }
                                       }
                                       offset += lens[k];
                                   }
                               },
                               "concat");
}

Tensor slice(const Tensor& x, std::int64_t axis, std::int64_t start, std::int64_t length) {
    const Shape& s = x.shape();
    const auto ax = norm_axis(axis, static_cast<std::int64_t>(s.size()));
    if (start < 0 || length < 0 || start + length > s[ax]) {
        throw DimensionError("slice: range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                             ") out of bounds for " + shape_str(s));
    }
    const auto sp = split_at(s, ax);
    Shape out_shape = s;
    out_shape[ax] = length;
    std::vector<float> out(static_cast<std::size_t>(sp.outer * length * sp.inner));
    const float* xv = x.data().data();
    for (std::int64_t o = 0; o < sp.outer; ++o) {
        std::copy_n(xv + (o * sp.len + start) * sp.inner, length * sp.inner, out.data() + o * length * sp.inner);
    }
    return Tensor::make_result(std::move(out_shape), std::move(out), {x.node_ptr()},
                               [sp, start, length](detail::Node& self) {
                                   float* gx = parent_grad(self, 0);
                                   if (!gx) return;
                                   for (std::int64_t o = 0; o < sp.outer; ++o) {
                                       const float* src = self.grad.data() + o * length * sp.inner;
                                       float* dst = gx + (o * sp.len + start) * sp.inner;
                                       for (std::int64_t i = 0; i < length * sp.inner; ++i) dst[i] += src[i];
                                   }
                               },
                               "slice");
}

Tensor relu(const Tensor& x) {
    return unary(x, [](float v) { return v > 0.0f ? v : 0.0f; },
                 [](float v, float) { return v > 0.0f ? 1.0f : 0.0f; }, "relu");
}

Tensor prelu(const Tensor& x, const Tensor& slope) {
    if (slope.numel() != 1) throw DimensionError("prelu: slope must hold one value, got " + shape_str(slope.shape()));
    const float a = slope.data()[0];
    const auto xv = x.data();
    std::vector<float> out(xv.size());
    for (std::size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] > 0.0f ? xv[i] : a * xv[i];
    return Tensor::make_result(x.shape(), std::move(out), {x.node_ptr(), slope.node_ptr()},
                               [](detail::Node& self) {
                                   float* gx = parent_grad(self, 0);
                                   float* ga = parent_grad(self, 1);
                                   const auto& xv = self.parents[0]->value;
                                   const float a = self.parents[1]->value[0];
                                   double acc = 0.0;
                                   for (std::size_t i = 0; i < xv.size(); ++i) {
                                       const bool pos = xv[i] > 0.0f;
                                       if (gx) gx[i] += self.grad[i] * (pos ? 1.0f : a);
                                       if (!pos) acc += static_cast<double>(self.grad[i]) * xv[i];
                                   }
                                   if (ga) ga[0] += static_cast<float>(acc);
                               },
                               "prelu");
}

Tensor sigmoid(const Tensor& x) {
    return unary(
        x,
        [](float v) {
            // Split by sign so exp never overflows.
            if (v >= 0.0f) return 1.0f / (1.0f + std::exp(-v));
            const float e = std::exp(v);
            return e / (1.0f + e);
        },
        [](float, float y) { return y * (1.0f - y); }, "sigmoid");
}

Tensor tanh(const Tensor& x) {
    return unary(x, [](float v) { return std::tanh(v); }, [](float, float y) { return 1.0f - y * y; }, "tanh");
}

Tensor log(const Tensor& x, float eps) {
    return unary(x, [eps](float v) { return std::log(v + eps); },
                 [eps](float v, float) { return 1.0f / (v + eps); }, "log");
}

Tensor rsqrt_or_zero(const Tensor& x) {
    return unary(x, [](float v) { return v > 0.0f ? 1.0f / std::sqrt(v) : 0.0f; },
                 [](float, float y) { return -0.5f * y * y * y; }, "rsqrt_or_zero");
}

Tensor softmax(const Tensor& x) {
    const Shape& s = x.shape();
    if (s.empty()) throw DimensionError("softmax: scalar input");
    const std::int64_t C = s.back();
    const std::int64_t rows = C ? x.numel() / C : 0;
    const float* xv = x.data().data();
    std::vector<float> out(static_cast<std::size_t>(x.numel()));
    for (std::int64_t r = 0; r < rows; ++r) {
        const float* in = xv + r * C;
        float* o = out.data() + r * C;
        const float m = *std::max_element(in, in + C);
        double z = 0.0;
        for (std::int64_t c = 0; c < C; ++c) {
            o[c] = std::exp(in[c] - m);
            z += o[c];
        }
        const float inv = static_cast<float>(1.0 / z);
        for (std::int64_t c = 0; c < C; ++c) o[c] *= inv;
    }
    return Tensor::make_result(s, std::move(out), {x.node_ptr()},
                               [rows, C](detail::Node& self) {
                                   float* gx = parent_grad(self, 0);
                                   if (!gx) return;
                                   for (std::int64_t r = 0; r < rows; ++r) {
                                       const float* y = self.value.data() + r * C;
                                       const float* g = self.grad.data() + r * C;
                                       double dot = 0.0;
                                       for (std::int64_t c = 0; c < C; ++c) dot += static_cast<double>(g[c]) * y[c];
                                       for (std::int64_t c = 0; c < C; ++c)
                                           gx[r * C + c] += y[c] * (g[c] - static_cast<float>(dot));
                                   }
                               },
                               "softmax");
}

Tensor sum(const Tensor& x) {
    double acc = 0.0;
    for (float v : x.data()) acc += v;
    return Tensor::make_result(Shape{}, {static_cast<float>(acc)}, {x.node_ptr()},
                               [](detail::Node& self) {
                                   float* gx = parent_grad(self, 0);
                                   if (!gx) return;
                                   const float g = self.grad[0];
                                   for (std::size_t i = 0; i < self.parents[0]->value.size(); ++i) gx[i] += g;
                               },
                               "sum");
}

Tensor mean(const Tensor& x) {
    const auto n = x.numel();
    if (n == 0) throw DimensionError("mean of empty tensor");
    return scale(sum(x), 1.0f / static_cast<float>(n));
}

Tensor sum(const Tensor& x, std::int64_t axis) {
    const Shape& s = x.shape();
    const auto ax = norm_axis(axis, static_cast<std::int64_t>(s.size()));
    const auto sp = split_at(s, ax);
    Shape out_shape;
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(s.size()); ++i)
        if (i != ax) out_shape.push_back(s[i]);
    std::vector<float> out(static_cast<std::size_t>(sp.outer * sp.inner));
    const float* xv = x.data().data();
    for (std::int64_t o = 0; o < sp.outer; ++o)
        for (std::int64_t i = 0; i < sp.inner; ++i) {
            double acc = 0.0;
            for (std::int64_t k = 0; k < sp.len; ++k) acc += xv[(o * sp.len + k) * sp.inner + i];
            out[o * sp.inner + i] = static_cast<float>(acc);
        }
    return Tensor::make_result(std::move(out_shape), std::move(out), {x.node_ptr()},
                               [sp](detail::Node& self) {
                                   float* gx = parent_grad(self, 0);
                                   if (!gx) return;
                                   for (std::int64_t o = 0; o < sp.outer; ++o)
                                       for (std::int64_t k = 0; k < sp.len; ++k)
                                           for (std::int64_t i = 0; i < sp.inner; ++i)
                                               gx[(o * sp.len + k) * sp.inner + i] += self.grad[o * sp.inner + i];
                               },
                               "sum_axis");
}

Tensor mean(const Tensor& x, std::int64_t axis) {
    const auto len = x.dim(axis);
    if (len == 0) throw DimensionError("mean over empty axis");
    return scale(sum(x, axis), 1.0f / static_cast<float>(len));
}

Tensor l2_normalize_rows(const Tensor& x, float eps) {
    const Shape& s = x.shape();
    if (s.empty()) throw DimensionError("l2_normalize_rows: scalar input");
    const std::int64_t C = s.back();
    const std::int64_t rows = C ? x.numel() / C : 0;
    auto denom = std::make_shared<std::vector<float>>(static_cast<std::size_t>(rows));
    const float* xv = x.data().data();
    std::vector<float> out(static_cast<std::size_t>(x.numel()));
    for (std::int64_t r = 0; r < rows; ++r) {
        double sq = 0.0;
        for (std::int64_t c = 0; c < C; ++c) sq += static_cast<double>(xv[r * C + c]) * xv[r * C + c];
        const float d = std::max(static_cast<float>(std::sqrt(sq)), eps);
        (*denom)[r] = d;
        for (std::int64_t c = 0; c < C; ++c) out[r * C + c] = xv[r * C + c] / d;
    }
    return Tensor::make_result(s, std::move(out), {x.node_ptr()},
                               [denom, rows, C, eps](detail::Node& self) {
                                   float* gx = parent_grad(self, 0);
                                   if (!gx) return;
                                   for (std::int64_t r = 0; r < rows; ++r) {
                                       const float d = (*denom)[r];
                                       const float* y = self.value.data() + r * C;
                                       const float* g = self.grad.data() + r * C;
                                       if (d > eps) {
                                           double dot = 0.0;
                                           for (std::int64_t c = 0; c < C; ++c) dot += static_cast<double>(y[c]) * g[c];
                                           for (std::int64_t c = 0; c < C; ++c)
                                               gx[r * C + c] += (g[c] - y[c] * static_cast<float>(dot)) / d;
                                       } else {
                                           for (std::int64_t c = 0; c < C; ++c) gx[r * C + c] += g[c] / d;
                                       }
                                   }
                               },
                               "l2_normalize_rows");
}

Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& b, std::int64_t stride, std::int64_t pad) {
    const Shape& sx = x.shape();
    const Shape& sw = w.shape();
    if (sx.size() != 3 || sw.size() != 3 || sx[1] != sw[1] || b.numel() != sw[0]) {
        throw DimensionError("conv1d: incompatible shapes x " + shape_str(sx) + ", w " + shape_str(sw) + ", b " +
                             shape_str(b.shape()));
    }
    if (stride < 1 || pad < 0) throw DimensionError("conv1d: stride must be >= 1 and pad >= 0");
    const std::int64_t B = sx[0], Cin = sx[1], L = sx[2], Cout = sw[0], K = sw[2];
    if (L + 2 * pad < K) {
        throw DimensionError("conv1d: kernel " + std::to_string(K) + " larger than padded input " +
                             std::to_string(L + 2 * pad) + " (x " + shape_str(sx) + ", w " + shape_str(sw) + ")");
    }
    const std::int64_t Lout = (L + 2 * pad - K) / stride + 1;
    const std::int64_t rows = Cin * K, cols = B * Lout;

    // im2col: col[ci*K + k, b*Lout + t] = x[b, ci, t*stride + k - pad]
    auto col = std::make_shared<std::vector<float>>(static_cast<std::size_t>(rows * cols), 0.0f);
    const float* xv = x.data().data();
    for (std::int64_t ci = 0; ci < Cin; ++ci)
        for (std::int64_t k = 0; k < K; ++k) {
            float* crow = col->data() + (ci * K + k) * cols;
            for (std::int64_t bi = 0; bi < B; ++bi) {
                const float* xrow = xv + (bi * Cin + ci) * L;
                for (std::int64_t t = 0; t < Lout; ++t) {
                    const std::int64_t pos = t * stride + k - pad;
                    if (pos >= 0 && pos < L) crow[bi * Lout + t] = xrow[pos];
                }
            }
        }
    RowMat prod(Cout, cols);
    prod.noalias() = CMapMat(w.data().data(), Cout, rows) * CMapMat(col->data(), rows, cols);
    std::vector<float> out(static_cast<std::size_t>(B * Cout * Lout));
    const float* bv = b.data().data();
    for (std::int64_t bi = 0; bi < B; ++bi)
        for (std::int64_t co = 0; co < Cout; ++co)
            for (std::int64_t t = 0; t < Lout; ++t)
                out[(bi * Cout + co) * Lout + t] = prod(co, bi * Lout + t) + bv[co];

    return Tensor::make_result(
        Shape{B, Cout, Lout}, std::move(out), {x.node_ptr(), w.node_ptr(), b.node_ptr()},
        [col, B, Cin, L, Cout, K, Lout, stride, pad, rows, cols](detail::Node& self) {
            float* gx = parent_grad(self, 0);
            float* gw = parent_grad(self, 1);
            float* gb = parent_grad(self, 2);
            RowMat gout(Cout, cols);
            for (std::int64_t bi = 0; bi < B; ++bi)
                for (std::int64_t co = 0; co < Cout; ++co)
                    for (std::int64_t t = 0; t < Lout; ++t)
                        gout(co, bi * Lout + t) = self.grad[(bi * Cout + co) * Lout + t];
            if (gb) {
                for (std::int64_t co = 0; co < Cout; ++co) {
                    double acc = 0.0;
                    for (std::int64_t j = 0; j < cols; ++j) acc += gout(co, j);
                    gb[co] += static_cast<float>(acc);
                }
            }
            if (gw) {
                MapMat(gw, Cout, rows).noalias() += gout * CMapMat(col->data(), rows, cols).transpose();
            }
            if (gx) {
                RowMat gcol(rows, cols);
                gcol.noalias() = CMapMat(self.parents[1]->value.data(), Cout, rows).transpose() * gout;
                for (std::int64_t ci = 0; ci < Cin; ++ci)
                    for (std::int64_t k = 0; k < K; ++k)
                        for (std::int64_t bi = 0; bi < B; ++bi) {
                            float* xrow = gx + (bi * Cin + ci) * L;
                            for (std::int64_t t = 0; t < Lout; ++t) {
                                const std::int64_t pos = t * stride + k - pad;
                                if (pos >= 0 && pos < L) xrow[pos] += gcol(ci * K + k, bi * Lout + t);
                            }
                        }
            }
        },
        "conv1d");
}

Tensor maxpool1d(const Tensor& x, std::int64_t kernel, std::int64_t stride) {
    const Shape& s = x.shape();
    if (s.empty() || kernel < 1 || stride < 1 || s.back() < kernel) {
        throw DimensionError("maxpool1d: kernel " + std::to_string(kernel) + " does not fit input " + shape_str(s));
    }
    const std::int64_t L = s.back();
    const std::int64_t rows = x.numel() / L;
    const std::int64_t Lout = (L - kernel) / stride + 1;
    Shape out_shape = s;
    out_shape.back() = Lout;
    auto argmax = std::make_shared<std::vector<std::int64_t>>(static_cast<std::size_t>(rows * Lout));
    std::vector<float> out(static_cast<std::size_t>(rows * Lout));
    const float* xv = x.data().data();
    for (std::int64_t r = 0; r < rows; ++r)
        for (std::int64_t t = 0; t < Lout; ++t) {
            std::int64_t best = r * L + t * stride;
            for (std::int64_t k = 1; k < kernel; ++k) {
                const std::int64_t j = r * L + t * stride + k;
                if (xv[j] > xv[best]) best = j;
            }
            (*argmax)[r * Lout + t] = best;
            out[r * Lout + t] = xv[best];
        }
    return Tensor::make_result(std::move(out_shape), std::move(out), {x.node_ptr()},
                               [argmax](detail::Node& self) {
                                   float* gx = parent_grad(self, 0);
                                   if (!gx) return;
                                   for (std::size_t i = 0; i < argmax->size(); ++i) gx[(*argmax)[i]] += self.grad[i];
                               },
                               "maxpool1d");
}

namespace {

// Row sums with independent float lanes so the loop vectorises; lanes are
// combined in double. The summation order is fixed, so results are
// reproducible run to run.
double row_sum(const float* x, std::int64_t n) {
    float lane[8] = {};
    std::int64_t i = 0;
    for (; i + 8 <= n; i += 8)
        for (int k = 0; k < 8; ++k) lane[k] += x[i + k];
    double acc = 0.0;
    for (int k = 0; k < 8; ++k) acc += lane[k];
    for (; i < n; ++i) acc += x[i];
    return acc;
}

double row_centered_sq(const float* x, std::int64_t n, float mu) {
    float lane[8] = {};
    std::int64_t i = 0;
    for (; i + 8 <= n; i += 8)
        for (int k = 0; k < 8; ++k) {
            const float d = x[i + k] - mu;
            lane[k] += d * d;
        }
    double acc = 0.0;
    for (int k = 0; k < 8; ++k) acc += lane[k];
    for (; i < n; ++i) {
        const double d = x[i] - mu;
        acc += d * d;
    }
    return acc;
}

double row_dot(const float* x, const float* y, std::int64_t n) {
    float lane[8] = {};
    std::int64_t i = 0;
    for (; i + 8 <= n; i += 8)
        for (int k = 0; k < 8; ++k) lane[k] += x[i + k] * y[i + k];
    double acc = 0.0;
    for (int k = 0; k < 8; ++k) acc += lane[k];
    for (; i < n; ++i) acc += static_cast<double>(x[i]) * y[i];
    return acc;
}

}  // namespace

Tensor batchnorm1d(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState& state, BnMode mode) {
    const Shape& s = x.shape();
    if (s.size() != 2 && s.size() != 3) throw DimensionError("batchnorm1d: expected [B, C] or [B, C, L], got " + shape_str(s));
    const std::int64_t B = s[0], C = s[1], L = s.size() == 3 ? s[2] : 1;
    if (gamma.numel() != C || beta.numel() != C || static_cast<std::int64_t>(state.running_mean.size()) != C) {
        throw DimensionError("batchnorm1d: parameter size does not match " + std::to_string(C) + " channels");
    }
    const std::int64_t M = B * L;
    const bool batch_stats = mode != BnMode::eval;
    if (batch_stats && M < 2) throw DimensionError("batchnorm1d: batch statistics need more than one value per channel");

    auto xhat = std::make_shared<std::vector<float>>(static_cast<std::size_t>(x.numel()));
    auto inv_std = std::make_shared<std::vector<float>>(static_cast<std::size_t>(C));
    std::vector<float> out(static_cast<std::size_t>(x.numel()));
    const float* xv = x.data().data();
    const float* gv = gamma.data().data();
    const float* bv = beta.data().data();
    for (std::int64_t c = 0; c < C; ++c) {
        double mu, var;
        if (batch_stats) {
            double acc = 0.0;
            for (std::int64_t b = 0; b < B; ++b) acc += row_sum(xv + (b * C + c) * L, L);
            mu = acc / static_cast<double>(M);
            double sq = 0.0;
            for (std::int64_t b = 0; b < B; ++b) sq += row_centered_sq(xv + (b * C + c) * L, L, static_cast<float>(mu));
            var = sq / static_cast<double>(M);
            if (mode == BnMode::train) {
                const float m = state.momentum;
                state.running_mean[c] = (1.0f - m) * state.running_mean[c] + m * static_cast<float>(mu);
                state.running_var[c] = (1.0f - m) * state.running_var[c] +
                                       m * static_cast<float>(sq / static_cast<double>(M - 1));
            }
        } else {
            mu = state.running_mean[c];
            var = state.running_var[c];
        }
        const float is = static_cast<float>(1.0 / std::sqrt(var + state.eps));
        const float muf = static_cast<float>(mu);
        (*inv_std)[c] = is;
        for (std::int64_t b = 0; b < B; ++b) {
            const std::int64_t base = (b * C + c) * L;
            for (std::int64_t t = 0; t < L; ++t) {
                const float h = (xv[base + t] - muf) * is;
                (*xhat)[base + t] = h;
                out[base + t] = gv[c] * h + bv[c];
            }
        }
    }
    return Tensor::make_result(
        s, std::move(out), {x.node_ptr(), gamma.node_ptr(), beta.node_ptr()},
        [xhat, inv_std, B, C, L, M, batch_stats](detail::Node& self) {
            float* gx = parent_grad(self, 0);
            float* gg = parent_grad(self, 1);
            float* gbt = parent_grad(self, 2);
            const float* gv = self.parents[1]->value.data();
            const float* g = self.grad.data();
            for (std::int64_t c = 0; c < C; ++c) {
                double sum_g = 0.0, sum_gh = 0.0;
                for (std::int64_t b = 0; b < B; ++b) {
                    const std::int64_t base = (b * C + c) * L;
                    sum_g += row_sum(g + base, L);
                    sum_gh += row_dot(g + base, xhat->data() + base, L);
                }
                if (gg) gg[c] += static_cast<float>(sum_gh);
                if (gbt) gbt[c] += static_cast<float>(sum_g);
                if (!gx) continue;
                const float k = gv[c] * (*inv_std)[c];
                const float mg = static_cast<float>(sum_g / static_cast<double>(M));
                const float mgh = static_cast<float>(sum_gh / static_cast<double>(M));
                for (std::int64_t b = 0; b < B; ++b) {
                    const std::int64_t base = (b * C + c) * L;
                    if (batch_stats) {
                        for (std::int64_t t = 0; t < L; ++t)
                            gx[base + t] += k * (g[base + t] - mg - (*xhat)[base + t] * mgh);
                    } else {
                        for (std::int64_t t = 0; t < L; ++t) gx[base + t] += k * g[base + t];
                    }
                }
            }
        },
        "batchnorm1d");
}

}  // namespace terse::ops
