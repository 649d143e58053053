// Copyright 2026 The prompt-forge Authors
// SPDX-License-Identifier: Apache-2.0
//
// Minimal reverse-mode differentiation over Matrix values. A Tape records
// each op's output and a closure that scatters the output gradient back to
// its inputs. Nodes whose inputs all have requires_grad == false are pure
// constants and never receive a gradient, which is how frozen weights stay
// out of the backward pass.

#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "prompt_forge/numerics.hpp"

namespace prompt_forge::ad {

struct Var {
    std::size_t id = static_cast<std::size_t>(-1);
    bool valid() const { return id != static_cast<std::size_t>(-1); }
};

class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var leaf(Matrix value, bool requires_grad) { return push(std::move(value), requires_grad, {}); }
    Var constant(Matrix value) { return push(std::move(value), false, {}); }

    const Matrix& value(Var v) const { return nodes_[v.id].value; }
    bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }

    /// Gradient of the last backward() target w.r.t. v (zeros if none flowed).
    Matrix grad(Var v) const {
        const Node& n = nodes_[v.id];
        if (n.grad.size() == 0) return Matrix(n.value.rows, n.value.cols);
        return n.grad;
    }

    std::size_t size() const { return nodes_.size(); }

    /// Seeds d(target)/d(target) = 1 for a 1x1 target and runs the sweep.
    void backward(Var target) {
        if (value(target).size() != 1) throw InvalidArgument("Tape::backward: target must be 1x1");
        for (Node& n : nodes_) n.grad = Matrix();
        if (!nodes_[target.id].requires_grad) return;
        nodes_[target.id].grad = Matrix(1, 1, 1.0);
        for (std::size_t i = target.id + 1; i-- > 0;) {
            Node& n = nodes_[i];
            if (n.backward && n.grad.size() != 0) n.backward(n.grad);
        }
    }

    // ---------------------------------------------------------------- ops

    Var matmul(Var a, Var b) {
        Matrix out = prompt_forge::matmul(value(a), value(b));
        return push(std::move(out), rg(a, b), [this, a, b](const Matrix& g) {
            if (requires_grad(a)) accumulate(a, prompt_forge::matmul_nt(g, value(b)));
            if (requires_grad(b)) accumulate(b, prompt_forge::matmul_tn(value(a), g));
        });
    }

    /// a · bᵀ
    Var matmul_nt(Var a, Var b) {
        Matrix out = prompt_forge::matmul_nt(value(a), value(b));
        return push(std::move(out), rg(a, b), [this, a, b](const Matrix& g) {
            if (requires_grad(a)) accumulate(a, prompt_forge::matmul(g, value(b)));
            if (requires_grad(b)) accumulate(b, prompt_forge::matmul_tn(g, value(a)));
        });
    }

    Var add(Var a, Var b) {
        const Matrix& av = value(a);
        const Matrix& bv = value(b);
        if (!av.same_shape(bv)) throw InvalidArgument("add: " + shape_str(av) + " vs " + shape_str(bv));
        Matrix out = av;
        for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += bv.data[i];
        return push(std::move(out), rg(a, b), [this, a, b](const Matrix& g) {
            if (requires_grad(a)) accumulate(a, g);
            if (requires_grad(b)) accumulate(b, g);
        });
    }

    /// Adds a 1 x cols row vector to every row of a.
    Var add_row(Var a, Var r) {
        const Matrix& av = value(a);
        const Matrix& rv = value(r);
        if (rv.rows != 1 || rv.cols != av.cols) throw InvalidArgument("add_row: " + shape_str(av) + " + " + shape_str(rv));
        Matrix out = av;
        for (std::size_t i = 0; i < out.rows; ++i)
            for (std::size_t j = 0; j < out.cols; ++j) out(i, j) += rv(0, j);
        return push(std::move(out), rg(a, r), [this, a, r](const Matrix& g) {
            if (requires_grad(a)) accumulate(a, g);
            if (requires_grad(r)) {
                Matrix gr(1, g.cols);
                for (std::size_t i = 0; i < g.rows; ++i)
                    for (std::size_t j = 0; j < g.cols; ++j) gr(0, j) += g(i, j);
                accumulate(r, gr);
            }
        });
    }

    Var scale(Var a, double s) {
        Matrix out = value(a);
        for (double& x : out.data) x *= s;
        return push(std::move(out), requires_grad(a), [this, a, s](const Matrix& g) {
            Matrix ga = g;
            for (double& x : ga.data) x *= s;
            accumulate(a, ga);
        });
    }

    /// tanh-approximated GELU.
    Var gelu(Var a) {
        const Matrix& av = value(a);
        Matrix out(av.rows, av.cols);
        for (std::size_t i = 0; i < av.size(); ++i) out.data[i] = gelu_value(av.data[i]);
        return push(std::move(out), requires_grad(a), [this, a](const Matrix& g) {
            const Matrix& x = value(a);
            Matrix ga(x.rows, x.cols);
            for (std::size_t i = 0; i < x.size(); ++i) ga.data[i] = g.data[i] * gelu_deriv(x.data[i]);
            accumulate(a, ga);
        });
    }

    /// Row-wise layer normalization with affine gamma/beta (both 1 x cols).
    Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5) {
        const Matrix& xv = value(x);
        const Matrix& gv = value(gamma);
        const Matrix& bv = value(beta);
        if (gv.cols != xv.cols || bv.cols != xv.cols) throw InvalidArgument("layer_norm: width mismatch");
        const std::size_t n = xv.cols;
        Matrix xhat(xv.rows, n);
        std::vector<double> inv_std(xv.rows);
        Matrix out(xv.rows, n);
        for (std::size_t i = 0; i < xv.rows; ++i) {
            double mean = 0.0;
            for (std::size_t j = 0; j < n; ++j) mean += xv(i, j);
            mean /= static_cast<double>(n);
            double var = 0.0;
            for (std::size_t j = 0; j < n; ++j) var += (xv(i, j) - mean) * (xv(i, j) - mean);
            var /= static_cast<double>(n);
            inv_std[i] = 1.0 / std::sqrt(var + eps);
            for (std::size_t j = 0; j < n; ++j) {
                xhat(i, j) = (xv(i, j) - mean) * inv_std[i];
                out(i, j) = xhat(i, j) * gv(0, j) + bv(0, j);
            }
        }
        const bool need = requires_grad(x) || requires_grad(gamma) || requires_grad(beta);
        return push(std::move(out), need,
                    [this, x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std)](const Matrix& g) {
                        const Matrix& gv = value(gamma);
                        const std::size_t n = g.cols;
                        if (requires_grad(gamma) || requires_grad(beta)) {
                            Matrix gg(1, n), gb(1, n);
                            for (std::size_t i = 0; i < g.rows; ++i)
                                for (std::size_t j = 0; j < n; ++j) {
                                    gg(0, j) += g(i, j) * xhat(i, j);
                                    gb(0, j) += g(i, j);
                                }
                            if (requires_grad(gamma)) accumulate(gamma, gg);
                            if (requires_grad(beta)) accumulate(beta, gb);
                        }
                        if (requires_grad(x)) {
                            Matrix gx(g.rows, n);
                            const double inv_n = 1.0 / static_cast<double>(n);
                            for (std::size_t i = 0; i < g.rows; ++i) {
                                double s1 = 0.0, s2 = 0.0;
                                for (std::size_t j = 0; j < n; ++j) {
                                    const double dxh = g(i, j) * gv(0, j);
                                    s1 += dxh;
                                    s2 += dxh * xhat(i, j);
                                }
                                for (std::size_t j = 0; j < n; ++j) {
                                    const double dxh = g(i, j) * gv(0, j);
                                    gx(i, j) = inv_std[i] * (dxh - inv_n * s1 - xhat(i, j) * inv_n * s2);
                                }
                            }
                            accumulate(x, gx);
                        }
                    });
    }

    /// Row-wise softmax. With `causal`, entry (i, j) is masked when j > i.
    Var softmax_rows(Var a, bool causal = false) {
        const Matrix& av = value(a);
        Matrix out(av.rows, av.cols);
        for (std::size_t i = 0; i < av.rows; ++i) {
            const std::size_t lim = causal ? std::min(i + 1, av.cols) : av.cols;
            double mx = av(i, 0);
            for (std::size_t j = 1; j < lim; ++j) mx = std::max(mx, av(i, j));
            double z = 0.0;
            for (std::size_t j = 0; j < lim; ++j) {
                out(i, j) = std::exp(av(i, j) - mx);
                z += out(i, j);
            }
            for (std::size_t j = 0; j < lim; ++j) out(i, j) /= z;
        }
        const std::size_t self = nodes_.size();
        return push(std::move(out), requires_grad(a), [this, a, self](const Matrix& g) {
            const Matrix& y = nodes_[self].value;
            Matrix ga(y.rows, y.cols);
            for (std::size_t i = 0; i < y.rows; ++i) {
                double s = 0.0;
                for (std::size_t j = 0; j < y.cols; ++j) s += g(i, j) * y(i, j);
                for (std::size_t j = 0; j < y.cols; ++j) ga(i, j) = y(i, j) * (g(i, j) - s);
            }
            accumulate(a, ga);
        });
    }

    /// Stacks a on top of b.
    Var concat_rows(Var a, Var b) {
        const Matrix& av = value(a);
        const Matrix& bv = value(b);
        if (av.cols != bv.cols) throw InvalidArgument("concat_rows: " + shape_str(av) + " over " + shape_str(bv));
        Matrix out(av.rows + bv.rows, av.cols);
        std::copy(av.data.begin(), av.data.end(), out.data.begin());
        std::copy(bv.data.begin(), bv.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(av.size()));
        const std::size_t split = av.size();
        return push(std::move(out), rg(a, b), [this, a, b, split](const Matrix& g) {
            if (requires_grad(a)) {
                const Matrix& av = value(a);
                accumulate(a, Matrix(av.rows, av.cols, std::vector<double>(g.data.begin(), g.data.begin() + static_cast<std::ptrdiff_t>(split))));
            }
            if (requires_grad(b)) {
                const Matrix& bv = value(b);
                accumulate(b, Matrix(bv.rows, bv.cols, std::vector<double>(g.data.begin() + static_cast<std::ptrdiff_t>(split), g.data.end())));
            }
        });
    }

    /// Columns [c0, c1) of a.
    Var slice_cols(Var a, std::size_t c0, std::size_t c1) {
        const Matrix& av = value(a);
        if (c0 > c1 || c1 > av.cols) throw InvalidArgument("slice_cols: bad range");
        Matrix out(av.rows, c1 - c0);
        for (std::size_t i = 0; i < av.rows; ++i)
            for (std::size_t j = c0; j < c1; ++j) out(i, j - c0) = av(i, j);
        return push(std::move(out), requires_grad(a), [this, a, c0, c1](const Matrix& g) {
            const Matrix& av = value(a);
            Matrix ga(av.rows, av.cols);
            for (std::size_t i = 0; i < g.rows; ++i)
                for (std::size_t j = c0; j < c1; ++j) ga(i, j) = g(i, j - c0);
            accumulate(a, ga);
        });
    }

    Var concat_cols(const std::vector<Var>& parts) {
        if (parts.empty()) throw InvalidArgument("concat_cols: no parts");
        const std::size_t rows = value(parts[0]).rows;
        std::size_t cols = 0;
        bool need = false;
        for (Var p : parts) {
            if (value(p).rows != rows) throw InvalidArgument("concat_cols: row mismatch");
            cols += value(p).cols;
            need = need || requires_grad(p);
        }
        Matrix out(rows, cols);
        std::size_t off = 0;
        for (Var p : parts) {
            const Matrix& pv = value(p);
            for (std::size_t i = 0; i < rows; ++i)
                for (std::size_t j = 0; j < pv.cols; ++j) out(i, off + j) = pv(i, j);
            off += pv.cols;
        }
        return push(std::move(out), need, [this, parts](const Matrix& g) {
            std::size_t off = 0;
            for (Var p : parts) {
                const Matrix& pv = value(p);
                if (requires_grad(p)) {
                    Matrix gp(pv.rows, pv.cols);
                    for (std::size_t i = 0; i < pv.rows; ++i)
                        for (std::size_t j = 0; j < pv.cols; ++j) gp(i, j) = g(i, off + j);
                    accumulate(p, gp);
                }
                off += pv.cols;
            }
        });
    }

    /// Rows of `table` selected by index (embedding lookup).
    Var gather_rows(Var table, std::vector<std::size_t> ids) {
        const Matrix& tv = value(table);
        Matrix out(ids.size(), tv.cols);
        for (std::size_t i = 0; i < ids.size(); ++i) {
            if (ids[i] >= tv.rows) throw InvalidArgument("gather_rows: index " + std::to_string(ids[i]) + " out of range");
            for (std::size_t j = 0; j < tv.cols; ++j) out(i, j) = tv(ids[i], j);
        }
        return push(std::move(out), requires_grad(table), [this, table, ids = std::move(ids)](const Matrix& g) {
            const Matrix& tv = value(table);
            Matrix gt(tv.rows, tv.cols);
            for (std::size_t i = 0; i < ids.size(); ++i)
                for (std::size_t j = 0; j < tv.cols; ++j) gt(ids[i], j) += g(i, j);
            accumulate(table, gt);
        });
    }

    Var reshape(Var a, std::size_t rows, std::size_t cols) {
        const Matrix& av = value(a);
        if (rows * cols != av.size()) throw InvalidArgument("reshape: size mismatch");
        Matrix out(rows, cols, av.data);
        return push(std::move(out), requires_grad(a), [this, a](const Matrix& g) {
            const Matrix& av = value(a);
            accumulate(a, Matrix(av.rows, av.cols, g.data));
        });
    }

    /// Column-wise mean over rows: n x c -> 1 x c.
    Var mean_rows(Var a) {
        const Matrix& av = value(a);
        Matrix out(1, av.cols);
        for (std::size_t i = 0; i < av.rows; ++i)
            for (std::size_t j = 0; j < av.cols; ++j) out(0, j) += av(i, j);
        for (double& x : out.data) x /= static_cast<double>(av.rows);
        return push(std::move(out), requires_grad(a), [this, a](const Matrix& g) {
            const Matrix& av = value(a);
            Matrix ga(av.rows, av.cols);
            const double inv = 1.0 / static_cast<double>(av.rows);
            for (std::size_t i = 0; i < av.rows; ++i)
                for (std::size_t j = 0; j < av.cols; ++j) ga(i, j) = g(0, j) * inv;
            accumulate(a, ga);
        });
    }

    Var transpose(Var a) {
        Matrix out = prompt_forge::transpose(value(a));
        return push(std::move(out), requires_grad(a), [this, a](const Matrix& g) { accumulate(a, prompt_forge::transpose(g)); });
    }

    /// Sum of all entries -> 1x1.
    Var sum(Var a) {
        double s = 0.0;
        for (double x : value(a).data) s += x;
        return push(Matrix(1, 1, s), requires_grad(a), [this, a](const Matrix& g) {
            const Matrix& av = value(a);
            accumulate(a, Matrix(av.rows, av.cols, g(0, 0)));
        });
    }

    /// Σ_i −log softmax(logits_i)[targets_i] -> 1x1.
    Var cross_entropy_sum(Var logits, std::vector<std::size_t> targets) {
        const Matrix& lv = value(logits);
        if (targets.size() != lv.rows) throw InvalidArgument("cross_entropy_sum: target count mismatch");
        Matrix probs(lv.rows, lv.cols);
        double loss = 0.0;
        for (std::size_t i = 0; i < lv.rows; ++i) {
            if (targets[i] >= lv.cols) throw InvalidArgument("cross_entropy_sum: target out of range");
            const auto row = lv.row(i);
            const double lse = log_sum_exp(row);
            for (std::size_t j = 0; j < lv.cols; ++j) probs(i, j) = std::exp(row[j] - lse);
            loss += lse - row[targets[i]];
        }
        return push(Matrix(1, 1, loss), requires_grad(logits),
                    [this, logits, targets = std::move(targets), probs = std::move(probs)](const Matrix& g) {
                        Matrix gl = probs;
                        for (std::size_t i = 0; i < gl.rows; ++i) gl(i, targets[i]) -= 1.0;
                        for (double& x : gl.data) x *= g(0, 0);
                        accumulate(logits, gl);
                    });
    }

    static double gelu_value(double x) {
        constexpr double k = 0.7978845608028654;  // sqrt(2/pi)
        return 0.5 * x * (1.0 + std::tanh(k * (x + 0.044715 * x * x * x)));
    }
    static double gelu_deriv(double x) {
        constexpr double k = 0.7978845608028654;
        const double u = k * (x + 0.044715 * x * x * x);
        const double t = std::tanh(u);
        const double du = k * (1.0 + 3.0 * 0.044715 * x * x);
        return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
    }

private:
    struct Node {
        Matrix value;
        Matrix grad;
        bool requires_grad = false;
        std::function<void(const Matrix&)> backward;
    };

    bool rg(Var a, Var b) const { return requires_grad(a) || requires_grad(b); }

    Var push(Matrix value, bool requires_grad, std::function<void(const Matrix&)> back) {
        Node n;
        n.value = std::move(value);
        n.requires_grad = requires_grad;
        if (requires_grad) n.backward = std::move(back);
        nodes_.push_back(std::move(n));
        return Var{nodes_.size() - 1};
    }

    void accumulate(Var v, const Matrix& g) {
        Node& n = nodes_[v.id];
        if (!n.requires_grad) return;
        if (n.grad.size() == 0) {
            n.grad = g;
            return;
        }
        for (std::size_t i = 0; i < g.size(); ++i) n.grad.data[i] += g.data[i];
    }

    std::vector<Node> nodes_;
};

}  // namespace prompt_forge::ad
