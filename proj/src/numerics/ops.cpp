#include "numerics/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "numerics/gemm.hpp"

namespace stylecode::nn {

namespace {

template <typename T>
void require_finite(const Tensor<T>& t, const char* op) {
    check_finite<T>(t.data(), std::string(op) + " input");
}

[[noreturn]] void shape_fail(const char* op, const Shape& a, const Shape& b) {
    throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

// b broadcasts over a iff b's shape is a trailing suffix of a's shape.
bool is_suffix(const Shape& a, const Shape& b) {
    if (b.size() > a.size()) return false;
    return std::equal(b.rbegin(), b.rend(), a.rbegin());
}

template <typename T>
std::vector<T>* grad_of(Node<T>& self, std::size_t i) {
    auto& in = *self.inputs[i];
    return in.requires_grad ? &in.ensure_grad() : nullptr;
}

Shape drop_last(const Shape& s) {
    Shape out(s.begin(), s.end() - 1);
    if (out.empty()) out.push_back(1);
    return out;
}

} // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, bool ta, bool tb) {
    require_finite(a, "matmul");
    require_finite(b, "matmul");
    const Shape& as = a.shape();
    const Shape& bs = b.shape();
    std::size_t batch = 1, m = 0, k = 0, n = 0, kb = 0;
    Shape out;
    if (bs.size() == 2 && (as.size() == 2 || (as.size() > 2 && !ta))) {
        if (as.size() == 2) {
            m = ta ? as[1] : as[0];
            k = ta ? as[0] : as[1];
        } else {
            k = as.back();
            m = k ? a.numel() / k : 0;
        }
        kb = tb ? bs[1] : bs[0];
        n = tb ? bs[0] : bs[1];
        out = as.size() == 2 ? Shape{m, n} : as;
        out.back() = n;
    } else if (as.size() == 3 && bs.size() == 3 && as[0] == bs[0]) {
        batch = as[0];
        m = ta ? as[2] : as[1];
        k = ta ? as[1] : as[2];
        kb = tb ? bs[2] : bs[1];
        n = tb ? bs[1] : bs[2];
        out = {batch, m, n};
    } else {
        shape_fail("matmul", as, bs);
    }
    if (k != kb) shape_fail("matmul", as, bs);

    const std::size_t sa = m * k, sb = (batch > 1 ? k * n : 0), sc = m * n;
    std::vector<T> c(batch * sc);
    for (std::size_t i = 0; i < batch; ++i)
        gemm<T>(ta, tb, m, n, k, a.data().data() + i * sa, b.data().data() + i * sb, c.data() + i * sc, false);

    return detail::make_result<T>(std::move(out), std::move(c), "matmul", {&a, &b},
                                  [=](Node<T>& self) {
        const T* g = self.grad.data();
        const T* av = self.inputs[0]->value.data();
        const T* bv = self.inputs[1]->value.data();
        if (auto* ga = grad_of(self, 0)) {
            for (std::size_t i = 0; i < batch; ++i) {
                const T* gi = g + i * sc;
                const T* bi = bv + i * sb;
                T* dai = ga->data() + i * sa;
                if (!ta && !tb) gemm<T>(false, true, m, k, n, gi, bi, dai, true);
                else if (!ta && tb) gemm<T>(false, false, m, k, n, gi, bi, dai, true);
                else if (ta && !tb) gemm<T>(false, true, k, m, n, bi, gi, dai, true);
                else gemm<T>(true, true, k, m, n, bi, gi, dai, true);
            }
        }
        if (auto* gb = grad_of(self, 1)) {
            for (std::size_t i = 0; i < batch; ++i) {
                const T* gi = g + i * sc;
                const T* ai = av + i * sa;
                T* dbi = gb->data() + i * sb;
                if (!ta && !tb) gemm<T>(true, false, k, n, m, ai, gi, dbi, true);
                else if (!ta && tb) gemm<T>(true, false, n, k, m, gi, ai, dbi, true);
                else if (ta && !tb) gemm<T>(false, false, k, n, m, ai, gi, dbi, true);
                else gemm<T>(true, true, n, k, m, gi, ai, dbi, true);
            }
        }
    });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    require_finite(a, "add");
    require_finite(b, "add");
    if (!is_suffix(a.shape(), b.shape())) shape_fail("add", a.shape(), b.shape());
    const std::size_t nb = b.numel(), reps = a.numel() / std::max<std::size_t>(nb, 1);
    std::vector<T> out(a.data().begin(), a.data().end());
    for (std::size_t r = 0; r < reps; ++r)
        for (std::size_t j = 0; j < nb; ++j) out[r * nb + j] += b.data()[j];
    return detail::make_result<T>(a.shape(), std::move(out), "add", {&a, &b}, [=](Node<T>& self) {
        const auto& g = self.grad;
        if (auto* ga = grad_of(self, 0))
            for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
        if (auto* gb = grad_of(self, 1))
            for (std::size_t r = 0; r < reps; ++r)
                for (std::size_t j = 0; j < nb; ++j) (*gb)[j] += g[r * nb + j];
    });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    require_finite(a, "sub");
    require_finite(b, "sub");
    if (!is_suffix(a.shape(), b.shape())) shape_fail("sub", a.shape(), b.shape());
    const std::size_t nb = b.numel(), reps = a.numel() / std::max<std::size_t>(nb, 1);
    std::vector<T> out(a.data().begin(), a.data().end());
    for (std::size_t r = 0; r < reps; ++r)
        for (std::size_t j = 0; j < nb; ++j) out[r * nb + j] -= b.data()[j];
    return detail::make_result<T>(a.shape(), std::move(out), "sub", {&a, &b}, [=](Node<T>& self) {
        const auto& g = self.grad;
        if (auto* ga = grad_of(self, 0))
            for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
        if (auto* gb = grad_of(self, 1))
            for (std::size_t r = 0; r < reps; ++r)
                for (std::size_t j = 0; j < nb; ++j) (*gb)[j] -= g[r * nb + j];
    });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    require_finite(a, "mul");
    require_finite(b, "mul");
    if (!is_suffix(a.shape(), b.shape())) shape_fail("mul", a.shape(), b.shape());
    const std::size_t nb = b.numel(), reps = a.numel() / std::max<std::size_t>(nb, 1);
    std::vector<T> out(a.numel());
    for (std::size_t r = 0; r < reps; ++r)
        for (std::size_t j = 0; j < nb; ++j) out[r * nb + j] = a.data()[r * nb + j] * b.data()[j];
    return detail::make_result<T>(a.shape(), std::move(out), "mul", {&a, &b}, [=](Node<T>& self) {
        const auto& g = self.grad;
        const auto& av = self.inputs[0]->value;
        const auto& bv = self.inputs[1]->value;
        if (auto* ga = grad_of(self, 0))
            for (std::size_t r = 0; r < reps; ++r)
                for (std::size_t j = 0; j < nb; ++j) (*ga)[r * nb + j] += g[r * nb + j] * bv[j];
        if (auto* gb = grad_of(self, 1))
            for (std::size_t r = 0; r < reps; ++r)
                for (std::size_t j = 0; j < nb; ++j) (*gb)[j] += g[r * nb + j] * av[r * nb + j];
    });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, double factor) {
    require_finite(a, "scale");
    const T f = static_cast<T>(factor);
    std::vector<T> out(a.data().begin(), a.data().end());
    for (auto& v : out) v *= f;
    return detail::make_result<T>(a.shape(), std::move(out), "scale", {&a}, [=](Node<T>& self) {
        if (auto* ga = grad_of(self, 0))
            for (std::size_t i = 0; i < self.grad.size(); ++i) (*ga)[i] += self.grad[i] * f;
    });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, double value) {
    require_finite(a, "add_scalar");
    const T c = static_cast<T>(value);
    std::vector<T> out(a.data().begin(), a.data().end());
    for (auto& v : out) v += c;
    return detail::make_result<T>(a.shape(), std::move(out), "add_scalar", {&a}, [](Node<T>& self) {
        if (auto* ga = grad_of(self, 0))
            for (std::size_t i = 0; i < self.grad.size(); ++i) (*ga)[i] += self.grad[i];
    });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
    require_finite(x, "relu");
    std::vector<T> out(x.data().begin(), x.data().end());
    for (auto& v : out) v = v > T(0) ? v : T(0);
    return detail::make_result<T>(x.shape(), std::move(out), "relu", {&x}, [](Node<T>& self) {
        if (auto* gx = grad_of(self, 0))
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                if (self.inputs[0]->value[i] > T(0)) (*gx)[i] += self.grad[i];
    });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
    require_finite(x, "gelu");
    constexpr T c = static_cast<T>(0.7978845608028654);  // sqrt(2/pi)
    constexpr T a = static_cast<T>(0.044715);
    std::vector<T> out(x.numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const T v = x.data()[i];
        out[i] = T(0.5) * v * (T(1) + std::tanh(c * (v + a * v * v * v)));
    }
    return detail::make_result<T>(x.shape(), std::move(out), "gelu", {&x}, [](Node<T>& self) {
        if (auto* gx = grad_of(self, 0)) {
            const auto& xv = self.inputs[0]->value;
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                const T v = xv[i];
                const T th = std::tanh(c * (v + a * v * v * v));
                const T d = T(0.5) * (T(1) + th) + T(0.5) * v * (T(1) - th * th) * c * (T(1) + T(3) * a * v * v);
                (*gx)[i] += self.grad[i] * d;
            }
        }
    });
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, double eps) {
    require_finite(x, "layer_norm");
    require_finite(gamma, "layer_norm");
    require_finite(beta, "layer_norm");
    if (x.rank() == 0) shape_fail("layer_norm", x.shape(), gamma.shape());
    const std::size_t w = x.shape().back();
    if (gamma.shape() != Shape{w} || beta.shape() != Shape{w}) shape_fail("layer_norm", x.shape(), gamma.shape());
    const std::size_t rows = x.numel() / std::max<std::size_t>(w, 1);
    std::vector<T> out(x.numel()), xhat(x.numel()), inv(rows);
    const T* xv = x.data().data();
    for (std::size_t r = 0; r < rows; ++r) {
        T mu = 0;
        for (std::size_t j = 0; j < w; ++j) mu += xv[r * w + j];
        mu /= static_cast<T>(w);
        T var = 0;
        for (std::size_t j = 0; j < w; ++j) {
            const T d = xv[r * w + j] - mu;
            var += d * d;
        }
        var /= static_cast<T>(w);
        inv[r] = T(1) / std::sqrt(var + static_cast<T>(eps));
        for (std::size_t j = 0; j < w; ++j) {
            xhat[r * w + j] = (xv[r * w + j] - mu) * inv[r];
            out[r * w + j] = gamma.data()[j] * xhat[r * w + j] + beta.data()[j];
        }
    }
    return detail::make_result<T>(x.shape(), std::move(out), "layer_norm", {&x, &gamma, &beta},
                                  [=, xhat = std::move(xhat), inv = std::move(inv)](Node<T>& self) {
        const auto& g = self.grad;
        const auto& gm = self.inputs[1]->value;
        if (auto* gg = grad_of(self, 1))
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t j = 0; j < w; ++j) (*gg)[j] += g[r * w + j] * xhat[r * w + j];
        if (auto* gb = grad_of(self, 2))
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t j = 0; j < w; ++j) (*gb)[j] += g[r * w + j];
        if (auto* gx = grad_of(self, 0)) {
            for (std::size_t r = 0; r < rows; ++r) {
                T mean_d = 0, mean_dx = 0;
                for (std::size_t j = 0; j < w; ++j) {
                    const T d = g[r * w + j] * gm[j];
                    mean_d += d;
                    mean_dx += d * xhat[r * w + j];
                }
                mean_d /= static_cast<T>(w);
                mean_dx /= static_cast<T>(w);
                for (std::size_t j = 0; j < w; ++j) {
                    const T d = g[r * w + j] * gm[j];
                    (*gx)[r * w + j] += inv[r] * (d - mean_d - xhat[r * w + j] * mean_dx);
                }
            }
        }
    });
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x) {
    require_finite(x, "softmax");
    if (x.rank() == 0) throw ShapeError("softmax on rank-0 tensor");
    const std::size_t w = x.shape().back();
    const std::size_t rows = x.numel() / std::max<std::size_t>(w, 1);
    std::vector<T> out(x.numel());
    for (std::size_t r = 0; r < rows; ++r) {
        const T* xi = x.data().data() + r * w;
        T* yi = out.data() + r * w;
        const T mx = *std::max_element(xi, xi + w);
        T total = 0;
        for (std::size_t j = 0; j < w; ++j) total += (yi[j] = std::exp(xi[j] - mx));
        for (std::size_t j = 0; j < w; ++j) yi[j] /= total;
    }
    return detail::make_result<T>(x.shape(), std::move(out), "softmax", {&x}, [=](Node<T>& self) {
        if (auto* gx = grad_of(self, 0)) {
            const auto& y = self.value;
            const auto& g = self.grad;
            for (std::size_t r = 0; r < rows; ++r) {
                T dot = 0;
                for (std::size_t j = 0; j < w; ++j) dot += g[r * w + j] * y[r * w + j];
                for (std::size_t j = 0; j < w; ++j) (*gx)[r * w + j] += y[r * w + j] * (g[r * w + j] - dot);
            }
        }
    });
}

template <typename T>
Tensor<T> embedding_lookup(const Tensor<T>& table, std::span<const std::int32_t> ids) {
    require_finite(table, "embedding_lookup");
    if (table.rank() != 2) throw ShapeError("embedding_lookup: table must be rank 2, got " + shape_str(table.shape()));
    const std::size_t vocab = table.dim(0), w = table.dim(1);
    std::vector<std::int32_t> idx(ids.begin(), ids.end());
    std::vector<T> out(idx.size() * w);
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] < 0 || static_cast<std::size_t>(idx[i]) >= vocab)
            throw std::out_of_range("embedding_lookup: id " + std::to_string(idx[i]) + " outside vocabulary of " +
                                    std::to_string(vocab));
        std::copy_n(table.data().data() + idx[i] * w, w, out.data() + i * w);
    }
    const std::size_t rows = idx.size();
    return detail::make_result<T>({rows, w}, std::move(out), "embedding_lookup", {&table},
                                  [=, idx = std::move(idx)](Node<T>& self) {
        if (auto* gt = grad_of(self, 0))
            for (std::size_t i = 0; i < idx.size(); ++i)
                for (std::size_t j = 0; j < w; ++j) (*gt)[idx[i] * w + j] += self.grad[i * w + j];
    });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
    if (parts.empty()) throw ShapeError("concat of zero tensors");
    const Shape& first = parts[0].shape();
    if (axis >= first.size()) throw ShapeError("concat axis out of range for " + shape_str(first));
    std::size_t outer = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= first[i];
    std::size_t tail = 1;
    for (std::size_t i = axis + 1; i < first.size(); ++i) tail *= first[i];
    Shape out_shape = first;
    out_shape[axis] = 0;
    std::vector<std::size_t> widths;
    for (const auto& p : parts) {
        require_finite(p, "concat");
        const Shape& s = p.shape();
        if (s.size() != first.size()) shape_fail("concat", first, s);
        for (std::size_t i = 0; i < s.size(); ++i)
            if (i != axis && s[i] != first[i]) shape_fail("concat", first, s);
        out_shape[axis] += s[axis];
        widths.push_back(s[axis] * tail);
    }
    std::size_t row = 0;
    for (auto wdt : widths) row += wdt;
    std::vector<T> out(outer * row);
    for (std::size_t o = 0; o < outer; ++o) {
        std::size_t offset = 0;
        for (std::size_t p = 0; p < parts.size(); ++p) {
            std::copy_n(parts[p].data().data() + o * widths[p], widths[p], out.data() + o * row + offset);
            offset += widths[p];
        }
    }
    return detail::make_result<T>(std::move(out_shape), std::move(out), "concat", parts,
                                  [=, widths = std::move(widths)](Node<T>& self) {
        for (std::size_t o = 0; o < outer; ++o) {
            std::size_t offset = 0;
            for (std::size_t p = 0; p < widths.size(); ++p) {
                if (auto* gp = grad_of(self, p))
                    for (std::size_t j = 0; j < widths[p]; ++j)
                        (*gp)[o * widths[p] + j] += self.grad[o * row + offset + j];
                offset += widths[p];
            }
        }
    });
}

template <typename T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t start, std::size_t length) {
    require_finite(x, "slice");
    const Shape& s = x.shape();
    if (axis >= s.size() || start + length > s[axis])
        throw ShapeError("slice [" + std::to_string(start) + ", +" + std::to_string(length) + ") on axis " +
                         std::to_string(axis) + " out of range for " + shape_str(s));
    std::size_t outer = 1, tail = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
    for (std::size_t i = axis + 1; i < s.size(); ++i) tail *= s[i];
    const std::size_t in_row = s[axis] * tail, out_row = length * tail, off = start * tail;
    Shape out_shape = s;
    out_shape[axis] = length;
    std::vector<T> out(outer * out_row);
    for (std::size_t o = 0; o < outer; ++o)
        std::copy_n(x.data().data() + o * in_row + off, out_row, out.data() + o * out_row);
    return detail::make_result<T>(std::move(out_shape), std::move(out), "slice", {&x}, [=](Node<T>& self) {
        if (auto* gx = grad_of(self, 0))
            for (std::size_t o = 0; o < outer; ++o)
                for (std::size_t j = 0; j < out_row; ++j) (*gx)[o * in_row + off + j] += self.grad[o * out_row + j];
    });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
    if (shape_numel(shape) != x.numel()) shape_fail("reshape", x.shape(), shape);
    std::vector<T> out(x.data().begin(), x.data().end());
    return detail::make_result<T>(std::move(shape), std::move(out), "reshape", {&x}, [](Node<T>& self) {
        if (auto* gx = grad_of(self, 0))
            for (std::size_t i = 0; i < self.grad.size(); ++i) (*gx)[i] += self.grad[i];
    });
}

template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& perm) {
    const Shape& s = x.shape();
    if (perm.size() != s.size()) throw ShapeError("permute: rank mismatch for " + shape_str(s));
    std::vector<bool> seen(s.size(), false);
    for (auto p : perm) {
        if (p >= s.size() || seen[p]) throw ShapeError("permute: invalid axis order");
        seen[p] = true;
    }
    std::vector<std::size_t> in_stride(s.size(), 1);
    for (std::size_t i = s.size(); i-- > 1;) in_stride[i - 1] = in_stride[i] * s[i];
    Shape out_shape(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) out_shape[i] = s[perm[i]];
    const std::size_t n = x.numel();
    // source[i] = flat input offset of flat output element i
    std::vector<std::size_t> source(n);
    std::vector<std::size_t> idx(s.size(), 0);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t off = 0;
        for (std::size_t d = 0; d < s.size(); ++d) off += idx[d] * in_stride[perm[d]];
        source[i] = off;
        for (std::size_t d = s.size(); d-- > 0;) {
            if (++idx[d] < out_shape[d]) break;
            idx[d] = 0;
        }
    }
    std::vector<T> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = x.data()[source[i]];
    return detail::make_result<T>(std::move(out_shape), std::move(out), "permute", {&x},
                                  [source = std::move(source)](Node<T>& self) {
        if (auto* gx = grad_of(self, 0))
            for (std::size_t i = 0; i < source.size(); ++i) (*gx)[source[i]] += self.grad[i];
    });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
    require_finite(x, "sum");
    T total = 0;
    for (auto v : x.data()) total += v;
    return detail::make_result<T>({1}, {total}, "sum", {&x}, [](Node<T>& self) {
        if (auto* gx = grad_of(self, 0))
            for (auto& v : *gx) v += self.grad[0];
    });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
    require_finite(x, "mean");
    if (x.numel() == 0) throw ShapeError("mean of empty tensor");
    T total = 0;
    for (auto v : x.data()) total += v;
    const T n = static_cast<T>(x.numel());
    return detail::make_result<T>({1}, {total / n}, "mean", {&x}, [n](Node<T>& self) {
        if (auto* gx = grad_of(self, 0))
            for (auto& v : *gx) v += self.grad[0] / n;
    });
}

namespace {

template <typename T>
Tensor<T> reduce_axis(const Tensor<T>& x, std::size_t axis, bool average) {
    require_finite(x, average ? "mean" : "sum");
    const Shape& s = x.shape();
    if (axis >= s.size()) throw ShapeError("reduction axis out of range for " + shape_str(s));
    std::size_t outer = 1, tail = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
    for (std::size_t i = axis + 1; i < s.size(); ++i) tail *= s[i];
    const std::size_t len = s[axis];
    if (average && len == 0) throw ShapeError("mean over empty axis");
    const T factor = average ? T(1) / static_cast<T>(len) : T(1);
    Shape out_shape;
    for (std::size_t i = 0; i < s.size(); ++i)
        if (i != axis) out_shape.push_back(s[i]);
    if (out_shape.empty()) out_shape.push_back(1);
    std::vector<T> out(outer * tail, T(0));
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t a = 0; a < len; ++a)
            for (std::size_t t = 0; t < tail; ++t) out[o * tail + t] += x.data()[(o * len + a) * tail + t];
    if (average)
        for (auto& v : out) v *= factor;
    return detail::make_result<T>(std::move(out_shape), std::move(out), average ? "mean_axis" : "sum_axis", {&x},
                                  [=](Node<T>& self) {
        if (auto* gx = grad_of(self, 0))
            for (std::size_t o = 0; o < outer; ++o)
                for (std::size_t a = 0; a < len; ++a)
                    for (std::size_t t = 0; t < tail; ++t)
                        (*gx)[(o * len + a) * tail + t] += self.grad[o * tail + t] * factor;
    });
}

} // namespace

template <typename T>
Tensor<T> sum(const Tensor<T>& x, std::size_t axis) {
    return reduce_axis(x, axis, false);
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x, std::size_t axis) {
    return reduce_axis(x, axis, true);
}

template <typename T>
Tensor<T> cosine_similarity(const Tensor<T>& a, const Tensor<T>& b) {
    require_finite(a, "cosine_similarity");
    require_finite(b, "cosine_similarity");
    if (a.shape() != b.shape() || a.rank() == 0) shape_fail("cosine_similarity", a.shape(), b.shape());
    const std::size_t w = a.shape().back();
    const std::size_t rows = a.numel() / std::max<std::size_t>(w, 1);
    const T eps = static_cast<T>(kEps);
    std::vector<T> out(rows), na(rows), nb(rows), dots(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        T d = 0, sa = 0, sb = 0;
        for (std::size_t j = 0; j < w; ++j) {
            const T x = a.data()[r * w + j], y = b.data()[r * w + j];
            d += x * y;
            sa += x * x;
            sb += y * y;
        }
        na[r] = std::sqrt(sa);
        nb[r] = std::sqrt(sb);
        dots[r] = d;
        out[r] = d / (std::max(na[r], eps) * std::max(nb[r], eps));
    }
    return detail::make_result<T>(drop_last(a.shape()), std::move(out), "cosine_similarity", {&a, &b},
                                  [=, na = std::move(na), nb = std::move(nb), dots = std::move(dots)](Node<T>& self) {
        const auto& av = self.inputs[0]->value;
        const auto& bv = self.inputs[1]->value;
        auto* ga = grad_of(self, 0);
        auto* gb = grad_of(self, 1);
        for (std::size_t r = 0; r < rows; ++r) {
            const T g = self.grad[r];
            const T fa = std::max(na[r], eps), fb = std::max(nb[r], eps);
            const T denom = fa * fb;
            // the norm only contributes to the derivative where it is above the floor
            const T ca = na[r] > eps ? dots[r] / (denom * fa * fa) : T(0);
            const T cb = nb[r] > eps ? dots[r] / (denom * fb * fb) : T(0);
            for (std::size_t j = 0; j < w; ++j) {
                const T x = av[r * w + j], y = bv[r * w + j];
                if (ga) (*ga)[r * w + j] += g * (y / denom - ca * x);
                if (gb) (*gb)[r * w + j] += g * (x / denom - cb * y);
            }
        }
    });
}

template <typename T>
Tensor<T> mse(const Tensor<T>& prediction, const Tensor<T>& target) {
    require_finite(prediction, "mse");
    require_finite(target, "mse");
    if (prediction.shape() != target.shape()) shape_fail("mse", prediction.shape(), target.shape());
    if (prediction.numel() == 0) throw ShapeError("mse of empty tensors");
    const std::size_t n = prediction.numel();
    T total = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const T d = prediction.data()[i] - target.data()[i];
        total += d * d;
    }
    return detail::make_result<T>({1}, {total / static_cast<T>(n)}, "mse", {&prediction, &target},
                                  [n](Node<T>& self) {
        const auto& p = self.inputs[0]->value;
        const auto& t = self.inputs[1]->value;
        const T c = T(2) * self.grad[0] / static_cast<T>(n);
        auto* gp = grad_of(self, 0);
        auto* gt = grad_of(self, 1);
        for (std::size_t i = 0; i < n; ++i) {
            const T d = c * (p[i] - t[i]);
            if (gp) (*gp)[i] += d;
            if (gt) (*gt)[i] -= d;
        }
    });
}

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const std::int32_t> targets) {
    require_finite(logits, "cross_entropy");
    if (logits.rank() != 2 || logits.dim(0) != targets.size())
        throw ShapeError("cross_entropy: logits " + shape_str(logits.shape()) + " vs " +
                         std::to_string(targets.size()) + " targets");
    const std::size_t n = logits.dim(0), c = logits.dim(1);
    if (n == 0) throw ShapeError("cross_entropy of empty batch");
    std::vector<std::int32_t> tgt(targets.begin(), targets.end());
    std::vector<T> probs(n * c);
    T total = 0;
    for (std::size_t r = 0; r < n; ++r) {
        if (tgt[r] < 0 || static_cast<std::size_t>(tgt[r]) >= c)
            throw std::out_of_range("cross_entropy: target " + std::to_string(tgt[r]) + " outside " +
                                    std::to_string(c) + " classes");
        const T* x = logits.data().data() + r * c;
        T* p = probs.data() + r * c;
        const T mx = *std::max_element(x, x + c);
        T z = 0;
        for (std::size_t j = 0; j < c; ++j) z += (p[j] = std::exp(x[j] - mx));
        for (std::size_t j = 0; j < c; ++j) p[j] /= z;
        total += -(x[tgt[r]] - mx - std::log(z));
    }
    return detail::make_result<T>({1}, {total / static_cast<T>(n)}, "cross_entropy", {&logits},
                                  [=, probs = std::move(probs), tgt = std::move(tgt)](Node<T>& self) {
        if (auto* gl = grad_of(self, 0)) {
            const T g = self.grad[0] / static_cast<T>(n);
            for (std::size_t r = 0; r < n; ++r)
                for (std::size_t j = 0; j < c; ++j)
                    (*gl)[r * c + j] += g * (probs[r * c + j] - (static_cast<std::int32_t>(j) == tgt[r] ? T(1) : T(0)));
        }
    });
}

template <typename T>
Tensor<T> straight_through(const Tensor<T>& continuous, const Tensor<T>& quantized) {
    require_finite(continuous, "straight_through");
    require_finite(quantized, "straight_through");
    if (continuous.shape() != quantized.shape())
        shape_fail("straight_through", continuous.shape(), quantized.shape());
    std::vector<T> out(quantized.data().begin(), quantized.data().end());
    return detail::make_result<T>(quantized.shape(), std::move(out), "straight_through", {&continuous},
                                  [](Node<T>& self) {
        if (auto* gc = grad_of(self, 0))
            for (std::size_t i = 0; i < self.grad.size(); ++i) (*gc)[i] += self.grad[i];
    });
}

#define STYLECODE_INSTANTIATE_OPS(T)                                                                    \
    template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&, bool, bool);                          \
    template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                         \
    template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                         \
    template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                         \
    template Tensor<T> scale(const Tensor<T>&, double);                                                 \
    template Tensor<T> add_scalar(const Tensor<T>&, double);                                            \
    template Tensor<T> relu(const Tensor<T>&);                                                          \
    template Tensor<T> gelu(const Tensor<T>&);                                                          \
    template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, double);        \
    template Tensor<T> softmax(const Tensor<T>&);                                                       \
    template Tensor<T> embedding_lookup(const Tensor<T>&, std::span<const std::int32_t>);               \
    template Tensor<T> concat(const std::vector<Tensor<T>>&, std::size_t);                              \
    template Tensor<T> slice(const Tensor<T>&, std::size_t, std::size_t, std::size_t);                  \
    template Tensor<T> reshape(const Tensor<T>&, Shape);                                                \
    template Tensor<T> permute(const Tensor<T>&, const std::vector<std::size_t>&);                      \
    template Tensor<T> sum(const Tensor<T>&);                                                           \
    template Tensor<T> mean(const Tensor<T>&);                                                          \
    template Tensor<T> sum(const Tensor<T>&, std::size_t);                                              \
    template Tensor<T> mean(const Tensor<T>&, std::size_t);                                             \
    template Tensor<T> cosine_similarity(const Tensor<T>&, const Tensor<T>&);                           \
    template Tensor<T> mse(const Tensor<T>&, const Tensor<T>&);                                         \
    template Tensor<T> cross_entropy(const Tensor<T>&, std::span<const std::int32_t>);                  \
    template Tensor<T> straight_through(const Tensor<T>&, const Tensor<T>&);

STYLECODE_INSTANTIATE_OPS(float)
STYLECODE_INSTANTIATE_OPS(double)

#undef STYLECODE_INSTANTIATE_OPS

} // namespace stylecode::nn
