#pragma once

// Reverse-mode differentiation over dense matrices. A Tape records every op of
// one forward pass; backward() replays the recorded adjoints in reverse order.

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "rwa/tensor.hpp"

namespace rwa {

struct Var {
    std::size_t id = 0;
};

template <class T>
class Tape {
public:
    Tape() { nodes_.reserve(1024); }
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Tensor<T> value) { return push(std::move(value), false); }
    Var parameter(Tensor<T> value) { return push(std::move(value), true); }

    [[nodiscard]] const Tensor<T>& value(Var v) const { return nodes_[v.id].value; }
    [[nodiscard]] T scalar(Var v) const { return nodes_[v.id].value.data.at(0); }
    [[nodiscard]] bool needs_grad(Var v) const { return nodes_[v.id].needs_grad; }
    [[nodiscard]] std::size_t size() const noexcept { return nodes_.size(); }

    /// Gradient accumulated at v by the last backward(); zeros if v received none.
    [[nodiscard]] Tensor<T> grad(Var v) const {
        const Node& n = nodes_[v.id];
        if (n.grad.empty()) return Tensor<T>(n.value.rows, n.value.cols);
        return n.grad;
    }

    void backward(Var root) {
        if (nodes_[root.id].value.size() != 1) throw std::invalid_argument("backward: root must be a scalar");
        for (auto& n : nodes_) n.grad = {};
        grad_ref(root.id).data[0] = T(1);
        for (std::size_t i = root.id + 1; i-- > 0;) {
            Node& n = nodes_[i];
            if (n.backward && !n.grad.empty()) n.backward();
        }
    }

    // ---- elementwise ----

    Var add(Var a, Var b) {
        check_same(a, b, "add");
        Tensor<T> out = value(a);
        const auto& vb = value(b).data;
        for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += vb[i];
        return record(std::move(out), {a, b}, [this, a, b](std::size_t self) {
            accumulate(a, grad_of(self));
            accumulate(b, grad_of(self));
        });
    }

    Var sub(Var a, Var b) {
        check_same(a, b, "sub");
        Tensor<T> out = value(a);
        const auto& vb = value(b).data;
        for (std::size_t i = 0; i < out.size(); ++i) out.data[i] -= vb[i];
        return record(std::move(out), {a, b}, [this, a, b](std::size_t self) {
            accumulate(a, grad_of(self));
            if (needs_grad(b)) {
                auto& gb = grad_ref(b.id).data;
                const auto& g = grad_of(self).data;
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
            }
        });
    }

    Var scale(Var a, T s) {
        Tensor<T> out = value(a);
        for (auto& v : out.data) v *= s;
        return record(std::move(out), {a}, [this, a, s](std::size_t self) {
            if (!needs_grad(a)) return;
            auto& ga = grad_ref(a.id).data;
            const auto& g = grad_of(self).data;
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
        });
    }

    /// Elementwise product with a constant tensor (masks).
    Var mul_const(Var a, Tensor<T> c) {
        if (!value(a).same_shape(c)) throw std::invalid_argument("mul_const: shape mismatch");
        Tensor<T> out = value(a);
        for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= c.data[i];
        return record(std::move(out), {a}, [this, a, c = std::move(c)](std::size_t self) {
            if (!needs_grad(a)) return;
            auto& ga = grad_ref(a.id).data;
            const auto& g = grad_of(self).data;
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += c.data[i] * g[i];
        });
    }

    /// a[r×c] + bias[1×c] broadcast over rows.
    Var add_row(Var a, Var bias) {
        const auto& va = value(a);
        const auto& vb = value(bias);
        if (vb.rows != 1 || vb.cols != va.cols) throw std::invalid_argument("add_row: bias shape " + shape_string(vb) + " vs " + shape_string(va));
        Tensor<T> out = va;
        for (std::size_t r = 0; r < out.rows; ++r)
            for (std::size_t c = 0; c < out.cols; ++c) out(r, c) += vb.data[c];
        return record(std::move(out), {a, bias}, [this, a, bias](std::size_t self) {
            const auto& g = grad_of(self);
            accumulate(a, g);
            if (needs_grad(bias)) {
                auto& gb = grad_ref(bias.id);
                for (std::size_t r = 0; r < g.rows; ++r)
                    for (std::size_t c = 0; c < g.cols; ++c) gb.data[c] += g(r, c);
            }
        });
    }

    /// GELU, exact erf form.
    Var gelu(Var a) {
        const auto& va = value(a);
        Tensor<T> out(va.rows, va.cols);
        for (std::size_t i = 0; i < va.size(); ++i) {
            const T x = va.data[i];
            out.data[i] = T(0.5) * x * (T(1) + std::erf(x * T(std::numbers::sqrt2 / 2)));
        }
        return record(std::move(out), {a}, [this, a](std::size_t self) {
            if (!needs_grad(a)) return;
            const auto& x = value(a).data;
            const auto& g = grad_of(self).data;
            auto& ga = grad_ref(a.id).data;
            const T inv_sqrt2pi = T(1.0 / std::sqrt(2.0 * std::numbers::pi));
            for (std::size_t i = 0; i < g.size(); ++i) {
                const T cdf = T(0.5) * (T(1) + std::erf(x[i] * T(std::numbers::sqrt2 / 2)));
                const T pdf = inv_sqrt2pi * std::exp(T(-0.5) * x[i] * x[i]);
                ga[i] += g[i] * (cdf + x[i] * pdf);
            }
        });
    }

    // ---- linear algebra ----

    Var matmul(Var a, Var b) {
        Tensor<T> out = rwa::matmul(value(a), value(b));
        return record(std::move(out), {a, b}, [this, a, b](std::size_t self) {
            const auto& g = grad_of(self);
            if (needs_grad(a)) add_into(grad_ref(a.id), rwa::matmul_nt(g, value(b)));
            if (needs_grad(b)) add_into(grad_ref(b.id), rwa::matmul_tn(value(a), g));
        });
    }

    /// a·bᵀ
    Var matmul_nt(Var a, Var b) {
        Tensor<T> out = rwa::matmul_nt(value(a), value(b));
        return record(std::move(out), {a, b}, [this, a, b](std::size_t self) {
            const auto& g = grad_of(self);
            if (needs_grad(a)) add_into(grad_ref(a.id), rwa::matmul(g, value(b)));
            if (needs_grad(b)) add_into(grad_ref(b.id), rwa::matmul_tn(g, value(a)));
        });
    }

    Var transpose(Var a) {
        return record(rwa::transpose(value(a)), {a}, [this, a](std::size_t self) {
            if (needs_grad(a)) add_into(grad_ref(a.id), rwa::transpose(grad_of(self)));
        });
    }

    // ---- structural ----

    Var slice_rows(Var a, std::size_t first, std::size_t count) {
        const auto& va = value(a);
        if (first + count > va.rows) throw std::out_of_range("slice_rows: range exceeds " + shape_string(va));
        Tensor<T> out(count, va.cols);
        std::copy_n(va.data.begin() + static_cast<std::ptrdiff_t>(first * va.cols), count * va.cols, out.data.begin());
        return record(std::move(out), {a}, [this, a, first](std::size_t self) {
            if (!needs_grad(a)) return;
            const auto& g = grad_of(self);
            auto& ga = grad_ref(a.id);
            for (std::size_t i = 0; i < g.size(); ++i) ga.data[first * ga.cols + i] += g.data[i];
        });
    }

    Var slice_cols(Var a, std::size_t first, std::size_t count) {
        const auto& va = value(a);
        if (first + count > va.cols) throw std::out_of_range("slice_cols: range exceeds " + shape_string(va));
        Tensor<T> out(va.rows, count);
        for (std::size_t r = 0; r < va.rows; ++r)
            for (std::size_t c = 0; c < count; ++c) out(r, c) = va(r, first + c);
        return record(std::move(out), {a}, [this, a, first](std::size_t self) {
            if (!needs_grad(a)) return;
            const auto& g = grad_of(self);
            auto& ga = grad_ref(a.id);
            for (std::size_t r = 0; r < g.rows; ++r)
                for (std::size_t c = 0; c < g.cols; ++c) ga(r, first + c) += g(r, c);
        });
    }

    Var concat_rows(const std::vector<Var>& parts) {
        if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
        const std::size_t cols = value(parts[0]).cols;
        std::size_t rows = 0;
        for (Var p : parts) {
            if (value(p).cols != cols) throw std::invalid_argument("concat_rows: column mismatch");
            rows += value(p).rows;
        }
        Tensor<T> out(rows, cols);
        std::size_t offset = 0;
        for (Var p : parts) {
            const auto& vp = value(p);
            std::copy(vp.data.begin(), vp.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(offset));
            offset += vp.size();
        }
        return record(std::move(out), parts, [this, parts](std::size_t self) {
            const auto& g = grad_of(self);
            std::size_t off = 0;
            for (Var p : parts) {
                const std::size_t n = value(p).size();
                if (needs_grad(p)) {
                    auto& gp = grad_ref(p.id).data;
                    for (std::size_t i = 0; i < n; ++i) gp[i] += g.data[off + i];
                }
                off += n;
            }
        });
    }

    Var concat_cols(const std::vector<Var>& parts) {
        if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
        const std::size_t rows = value(parts[0]).rows;
        std::size_t cols = 0;
        for (Var p : parts) {
            if (value(p).rows != rows) throw std::invalid_argument("concat_cols: row mismatch");
            cols += value(p).cols;
        }
        Tensor<T> out(rows, cols);
        std::size_t offset = 0;
        for (Var p : parts) {
            const auto& vp = value(p);
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t c = 0; c < vp.cols; ++c) out(r, offset + c) = vp(r, c);
            offset += vp.cols;
        }
        return record(std::move(out), parts, [this, parts](std::size_t self) {
            const auto& g = grad_of(self);
            std::size_t off = 0;
            for (Var p : parts) {
                const std::size_t pc = value(p).cols;
                if (needs_grad(p)) {
                    auto& gp = grad_ref(p.id);
                    for (std::size_t r = 0; r < g.rows; ++r)
                        for (std::size_t c = 0; c < pc; ++c) gp(r, c) += g(r, off + c);
                }
                off += pc;
            }
        });
    }

    /// out[i] = table[ids[i]]
    Var gather_rows(Var table, std::vector<std::size_t> ids) {
        const auto& vt = value(table);
        Tensor<T> out(ids.size(), vt.cols);
        for (std::size_t i = 0; i < ids.size(); ++i) {
            if (ids[i] >= vt.rows) throw std::out_of_range("gather_rows: index " + std::to_string(ids[i]) + " outside table " + shape_string(vt));
            std::copy(vt.row(ids[i]).begin(), vt.row(ids[i]).end(), out.row(i).begin());
        }
        return record(std::move(out), {table}, [this, table, ids = std::move(ids)](std::size_t self) {
            if (!needs_grad(table)) return;
            const auto& g = grad_of(self);
            auto& gt = grad_ref(table.id);
            for (std::size_t i = 0; i < ids.size(); ++i)
                for (std::size_t c = 0; c < g.cols; ++c) gt(ids[i], c) += g(i, c);
        });
    }

    /// Arranges 1×1 scalars row-major into a rows×cols matrix.
    Var stack_scalars(const std::vector<Var>& scalars, std::size_t rows, std::size_t cols) {
        if (scalars.size() != rows * cols) throw std::invalid_argument("stack_scalars: count mismatch");
        Tensor<T> out(rows, cols);
        for (std::size_t i = 0; i < scalars.size(); ++i) out.data[i] = scalar(scalars[i]);
        return record(std::move(out), scalars, [this, scalars](std::size_t self) {
            const auto& g = grad_of(self);
            for (std::size_t i = 0; i < scalars.size(); ++i)
                if (needs_grad(scalars[i])) grad_ref(scalars[i].id).data[0] += g.data[i];
        });
    }

    // ---- reductions and normalizations ----

    Var mean(Var a) {
        const auto& va = value(a);
        if (va.empty()) throw std::invalid_argument("mean: empty input");
        T acc = 0;
        for (T v : va.data) acc += v;
        const T n = static_cast<T>(va.size());
        return record(Tensor<T>(1, 1, acc / n), {a}, [this, a, n](std::size_t self) {
            if (!needs_grad(a)) return;
            const T g = grad_of(self).data[0] / n;
            for (auto& v : grad_ref(a.id).data) v += g;
        });
    }

    /// Row-wise dot product; [r×c]·[r×c] -> [r×1].
    Var row_dot(Var a, Var b) {
        check_same(a, b, "row_dot");
        const auto& va = value(a);
        const auto& vb = value(b);
        Tensor<T> out(va.rows, 1);
        for (std::size_t r = 0; r < va.rows; ++r) out.data[r] = rwa::dot(va.row(r), vb.row(r));
        return record(std::move(out), {a, b}, [this, a, b](std::size_t self) {
            const auto& g = grad_of(self);
            const auto& va2 = value(a);
            const auto& vb2 = value(b);
            if (needs_grad(a)) {
                auto& ga = grad_ref(a.id);
                for (std::size_t r = 0; r < va2.rows; ++r)
                    for (std::size_t c = 0; c < va2.cols; ++c) ga(r, c) += g.data[r] * vb2(r, c);
            }
            if (needs_grad(b)) {
                auto& gb = grad_ref(b.id);
                for (std::size_t r = 0; r < va2.rows; ++r)
                    for (std::size_t c = 0; c < va2.cols; ++c) gb(r, c) += g.data[r] * va2(r, c);
            }
        });
    }

    /// Scales each row to unit L2 norm. All-zero rows stay zero and pass no gradient.
    Var normalize_rows(Var a) {
        const auto& va = value(a);
        Tensor<T> out(va.rows, va.cols);
        std::vector<T> norms(va.rows);
        for (std::size_t r = 0; r < va.rows; ++r) {
            norms[r] = rwa::norm2(va.row(r));
            if (norms[r] == T(0)) continue;
            for (std::size_t c = 0; c < va.cols; ++c) out(r, c) = va(r, c) / norms[r];
        }
        return record(std::move(out), {a}, [this, a, norms = std::move(norms)](std::size_t self) {
            if (!needs_grad(a)) return;
            const auto& g = grad_of(self);
            const auto& y = value(Var{self});
            auto& ga = grad_ref(a.id);
            for (std::size_t r = 0; r < g.rows; ++r) {
                if (norms[r] == T(0)) continue;
                const T gy = rwa::dot(g.row(r), y.row(r));
                for (std::size_t c = 0; c < g.cols; ++c) ga(r, c) += (g(r, c) - gy * y(r, c)) / norms[r];
            }
        });
    }

    /// Softmax along each row restricted to columns where key_mask is true; other entries are 0.
    Var softmax_rows(Var a, const std::vector<bool>& key_mask = {}) {
        const auto& va = value(a);
        if (!key_mask.empty() && key_mask.size() != va.cols) throw std::invalid_argument("softmax_rows: mask length mismatch");
        auto live = [&key_mask](std::size_t c) { return key_mask.empty() || key_mask[c]; };
        Tensor<T> out(va.rows, va.cols);
        for (std::size_t r = 0; r < va.rows; ++r) {
            T mx = -std::numeric_limits<T>::infinity();
            for (std::size_t c = 0; c < va.cols; ++c)
                if (live(c)) mx = std::max(mx, va(r, c));
            if (!std::isfinite(mx)) throw std::invalid_argument("softmax_rows: row has no unmasked finite entry");
            T z = 0;
            for (std::size_t c = 0; c < va.cols; ++c)
                if (live(c)) z += (out(r, c) = std::exp(va(r, c) - mx));
            for (std::size_t c = 0; c < va.cols; ++c) out(r, c) /= z;
        }
        return record(std::move(out), {a}, [this, a](std::size_t self) {
            if (!needs_grad(a)) return;
            const auto& g = grad_of(self);
            const auto& y = value(Var{self});
            auto& ga = grad_ref(a.id);
            for (std::size_t r = 0; r < g.rows; ++r) {
                const T gy = rwa::dot(g.row(r), y.row(r));
                for (std::size_t c = 0; c < g.cols; ++c) ga(r, c) += y(r, c) * (g(r, c) - gy);
            }
        });
    }

    /// Per-row layer normalization followed by gain/bias ([1×c] each).
    Var layer_norm(Var a, Var gain, Var bias, T eps = T(1e-5)) {
        const auto& va = value(a);
        const auto& vg = value(gain);
        const auto& vbias = value(bias);
        if (vg.cols != va.cols || vbias.cols != va.cols) throw std::invalid_argument("layer_norm: parameter width mismatch");
        const std::size_t n = va.cols;
        Tensor<T> xhat(va.rows, n);
        std::vector<T> inv_std(va.rows);
        Tensor<T> out(va.rows, n);
        for (std::size_t r = 0; r < va.rows; ++r) {
            T mu = 0;
            for (T v : va.row(r)) mu += v;
            mu /= static_cast<T>(n);
            T var = 0;
            for (T v : va.row(r)) var += (v - mu) * (v - mu);
            var /= static_cast<T>(n);
            inv_std[r] = T(1) / std::sqrt(var + eps);
            for (std::size_t c = 0; c < n; ++c) {
                xhat(r, c) = (va(r, c) - mu) * inv_std[r];
                out(r, c) = xhat(r, c) * vg.data[c] + vbias.data[c];
            }
        }
        return record(std::move(out), {a, gain, bias},
                      [this, a, gain, bias, xhat = std::move(xhat), inv_std = std::move(inv_std)](std::size_t self) {
                          const auto& g = grad_of(self);
                          const auto& vg2 = value(gain);
                          const std::size_t cols = g.cols;
                          if (needs_grad(gain) || needs_grad(bias)) {
                              for (std::size_t r = 0; r < g.rows; ++r)
                                  for (std::size_t c = 0; c < cols; ++c) {
                                      if (needs_grad(gain)) grad_ref(gain.id).data[c] += g(r, c) * xhat(r, c);
                                      if (needs_grad(bias)) grad_ref(bias.id).data[c] += g(r, c);
                                  }
                          }
                          if (!needs_grad(a)) return;
                          auto& ga = grad_ref(a.id);
                          std::vector<T> gx(cols);
                          for (std::size_t r = 0; r < g.rows; ++r) {
                              T mean_g = 0, mean_gx = 0;
                              for (std::size_t c = 0; c < cols; ++c) {
                                  gx[c] = g(r, c) * vg2.data[c];
                                  mean_g += gx[c];
                                  mean_gx += gx[c] * xhat(r, c);
                              }
                              mean_g /= static_cast<T>(cols);
                              mean_gx /= static_cast<T>(cols);
                              for (std::size_t c = 0; c < cols; ++c)
                                  ga(r, c) += inv_std[r] * (gx[c] - mean_g - xhat(r, c) * mean_gx);
                          }
                      });
    }

    /// Row-direction InfoNCE over a square similarity matrix:
    /// −(1/B) Σ_i log softmax_j(S[i,j]/σ) evaluated at j = i.
    Var info_nce_rows(Var s, T sigma) {
        const auto& vs = value(s);
        if (vs.rows != vs.cols || vs.rows < 2) throw std::invalid_argument("info_nce: need a square matrix with B >= 2, got " + shape_string(vs));
        if (!(sigma > T(0))) throw std::invalid_argument("info_nce: sigma must be positive");
        if (!all_finite(vs)) throw std::domain_error("info_nce: non-finite similarity");
        const std::size_t b = vs.rows;
        Tensor<T> prob(b, b);
        T loss = 0;
        for (std::size_t i = 0; i < b; ++i) {
            T mx = -std::numeric_limits<T>::infinity();
            for (std::size_t j = 0; j < b; ++j) mx = std::max(mx, vs(i, j) / sigma);
            T z = 0;
            for (std::size_t j = 0; j < b; ++j) z += (prob(i, j) = std::exp(vs(i, j) / sigma - mx));
            for (std::size_t j = 0; j < b; ++j) prob(i, j) /= z;
            loss -= vs(i, i) / sigma - mx - std::log(z);
        }
        loss /= static_cast<T>(b);
        return record(Tensor<T>(1, 1, loss), {s}, [this, s, sigma, prob = std::move(prob)](std::size_t self) {
            if (!needs_grad(s)) return;
            const T g = grad_of(self).data[0];
            const std::size_t bb = prob.rows;
            auto& gs = grad_ref(s.id);
            const T k = g / (sigma * static_cast<T>(bb));
            for (std::size_t i = 0; i < bb; ++i)
                for (std::size_t j = 0; j < bb; ++j) gs(i, j) += k * (prob(i, j) - (i == j ? T(1) : T(0)));
        });
    }

private:
    struct Node {
        Tensor<T> value;
        Tensor<T> grad;
        bool needs_grad = false;
        std::function<void()> backward;
    };

    Var push(Tensor<T> value, bool needs_grad) {
        nodes_.push_back(Node{std::move(value), {}, needs_grad, {}});
        return Var{nodes_.size() - 1};
    }

    template <class Fn>
    Var record(Tensor<T> out, const std::vector<Var>& inputs, Fn&& fn) {
        bool ng = false;
        for (Var v : inputs) ng = ng || needs_grad(v);
        Var result = push(std::move(out), ng);
        if (ng) {
            const std::size_t self = result.id;
            nodes_[self].backward = [fn = std::forward<Fn>(fn), self]() { fn(self); };
        }
        return result;
    }

    const Tensor<T>& grad_of(std::size_t id) const { return nodes_[id].grad; }

    Tensor<T>& grad_ref(std::size_t id) {
        Node& n = nodes_[id];
        if (n.grad.empty()) n.grad = Tensor<T>(n.value.rows, n.value.cols);
        return n.grad;
    }

    void accumulate(Var target, const Tensor<T>& g) {
        if (needs_grad(target)) add_into(grad_ref(target.id), g);
    }

    static void add_into(Tensor<T>& dst, const Tensor<T>& src) {
        for (std::size_t i = 0; i < dst.size(); ++i) dst.data[i] += src.data[i];
    }

    void check_same(Var a, Var b, const char* op) const {
        if (!value(a).same_shape(value(b)))
            throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_string(value(a)) + " vs " + shape_string(value(b)));
    }

    std::vector<Node> nodes_;
};

}  // namespace rwa
