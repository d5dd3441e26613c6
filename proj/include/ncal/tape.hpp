// SPDX-License-Identifier: Apache-2.0
//
// ncal: neural-calibrated beamforming and channel estimation for massive MIMO
// Copyright (C) 2026 The ncal authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
// http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
// ------------------------------------------------------------------------

#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "real_matrix.hpp"

namespace ncal {

/// Reverse-mode autodiff over real matrices.
///
/// The tape is an append-only list of nodes; every operation evaluates
/// eagerly into its node and records parent indices plus the few scalars the
/// backward pass needs. backward() walks the list once in reverse creation
/// order, so no graph search or std::function indirection is involved.
/// Complex arithmetic never appears here: complex layers are composed from
/// these real primitives (see tape_complex.hpp).
class Tape {
  public:
    using Var = int;

    enum class Op : int {
        input,
        constant,
        add,
        sub,
        neg,
        mul_elem,
        recip,
        mul_scalar,
        add_scalar,
        matmul,
        transpose,
        inverse,
        relu,
        log_elem,
        sqrt_elem,
        sum_all,
        add_broadcast_row,
        mul_broadcast_row,
        mul_scalar_node,
        hcat,
        row_slice,
        col_slice,
        vcat,
        reshape,
    };

    /// Differentiable leaf (grad is tracked and retrievable).
    Var input(RealMatrix v) { return push(Op::input, std::move(v)); }

    /// Non-differentiable leaf.
    Var constant(RealMatrix v) { return push(Op::constant, std::move(v)); }

    Var add(Var a, Var b)
    {
        Var r = push(Op::add, ncal::add(val(a), val(b)));
        link(r, a, b);
        return r;
    }

    Var sub(Var a, Var b)
    {
        Var r = push(Op::sub, ncal::sub(val(a), val(b)));
        link(r, a, b);
        return r;
    }

    Var neg(Var a)
    {
        Var r = push(Op::neg, ncal::neg(val(a)));
        link(r, a);
        return r;
    }

    Var mul_elem(Var a, Var b)
    {
        Var r = push(Op::mul_elem, hadamard(val(a), val(b)));
        link(r, a, b);
        return r;
    }

    /// Elementwise reciprocal.
    Var recip(Var a)
    {
        const RealMatrix &x = val(a);
        RealMatrix y(x.rows(), x.cols());
        for (std::size_t i = 0; i < x.size(); ++i)
            y.data()[i] = 1.0 / x.data()[i];
        Var r = push(Op::recip, std::move(y));
        link(r, a);
        return r;
    }

    Var mul_scalar(Var a, double s)
    {
        Var r = push(Op::mul_scalar, scale(val(a), s));
        link(r, a);
        nodes_[r].s = s;
        return r;
    }

    Var add_scalar(Var a, double s)
    {
        const RealMatrix &x = val(a);
        RealMatrix y(x.rows(), x.cols());
        for (std::size_t i = 0; i < x.size(); ++i)
            y.data()[i] = x.data()[i] + s;
        Var r = push(Op::add_scalar, std::move(y));
        link(r, a);
        nodes_[r].s = s;
        return r;
    }

    Var matmul(Var a, Var b)
    {
        Var r = push(Op::matmul, ncal::matmul(val(a), val(b)));
        link(r, a, b);
        return r;
    }

    Var transpose(Var a)
    {
        Var r = push(Op::transpose, ncal::transpose(val(a)));
        link(r, a);
        return r;
    }

    /// Matrix inverse (square). Backward: dA = -Y^T G Y^T for Y = A^-1.
    Var inverse(Var a)
    {
        Var r = push(Op::inverse, lu_inverse(val(a)));
        link(r, a);
        return r;
    }

    /// ReLU with the subgradient at zero taken as zero.
    Var relu(Var a)
    {
        const RealMatrix &x = val(a);
        RealMatrix y(x.rows(), x.cols());
        for (std::size_t i = 0; i < x.size(); ++i)
            y.data()[i] = x.data()[i] > 0.0 ? x.data()[i] : 0.0;
        Var r = push(Op::relu, std::move(y));
        link(r, a);
        return r;
    }

    /// Elementwise natural logarithm.
    Var log_elem(Var a)
    {
        const RealMatrix &x = val(a);
        RealMatrix y(x.rows(), x.cols());
        for (std::size_t i = 0; i < x.size(); ++i)
            y.data()[i] = std::log(x.data()[i]);
        Var r = push(Op::log_elem, std::move(y));
        link(r, a);
        return r;
    }

    Var sqrt_elem(Var a)
    {
        const RealMatrix &x = val(a);
        RealMatrix y(x.rows(), x.cols());
        for (std::size_t i = 0; i < x.size(); ++i)
            y.data()[i] = std::sqrt(x.data()[i]);
        Var r = push(Op::sqrt_elem, std::move(y));
        link(r, a);
        return r;
    }

    /// Sum of all entries, as a 1x1 node.
    Var sum_all(Var a)
    {
        RealMatrix y(1, 1);
        y(0, 0) = ncal::sum_all(val(a));
        Var r = push(Op::sum_all, std::move(y));
        link(r, a);
        return r;
    }

    /// x + row broadcast down the rows; row must be 1 x cols(x).
    Var add_broadcast_row(Var a, Var row)
    {
        const RealMatrix &x = val(a), &w = val(row);
        broadcast_check(x, w, "add_broadcast_row");
        RealMatrix y(x.rows(), x.cols());
        for (int i = 0; i < x.rows(); ++i)
            for (int j = 0; j < x.cols(); ++j)
                y(i, j) = x(i, j) + w(0, j);
        Var r = push(Op::add_broadcast_row, std::move(y));
        link(r, a, row);
        return r;
    }

    /// x * row broadcast down the rows (elementwise per column).
    Var mul_broadcast_row(Var a, Var row)
    {
        const RealMatrix &x = val(a), &w = val(row);
        broadcast_check(x, w, "mul_broadcast_row");
        RealMatrix y(x.rows(), x.cols());
        for (int i = 0; i < x.rows(); ++i)
            for (int j = 0; j < x.cols(); ++j)
                y(i, j) = x(i, j) * w(0, j);
        Var r = push(Op::mul_broadcast_row, std::move(y));
        link(r, a, row);
        return r;
    }

    /// x scaled by a 1x1 node.
    Var mul_scalar_node(Var a, Var s)
    {
        const RealMatrix &sv = val(s);
        if (sv.rows() != 1 || sv.cols() != 1)
            throw std::invalid_argument("mul_scalar_node: scalar operand must be 1x1");
        Var r = push(Op::mul_scalar_node, scale(val(a), sv(0, 0)));
        link(r, a, s);
        return r;
    }

    /// Horizontal concatenation [A | B].
    Var hcat(Var a, Var b)
    {
        const RealMatrix &x = val(a), &y = val(b);
        if (x.rows() != y.rows())
            throw std::invalid_argument("hcat: row count mismatch");
        RealMatrix z(x.rows(), x.cols() + y.cols());
        for (int i = 0; i < x.rows(); ++i) {
            for (int j = 0; j < x.cols(); ++j)
                z(i, j) = x(i, j);
            for (int j = 0; j < y.cols(); ++j)
                z(i, x.cols() + j) = y(i, j);
        }
        Var r = push(Op::hcat, std::move(z));
        link(r, a, b);
        nodes_[r].i0 = x.cols();
        return r;
    }

    /// Rows [r0, r1) of a.
    Var row_slice(Var a, int r0, int r1)
    {
        const RealMatrix &x = val(a);
        slice_check(r0, r1, x.rows(), "row_slice");
        RealMatrix y(r1 - r0, x.cols());
        for (int i = r0; i < r1; ++i)
            for (int j = 0; j < x.cols(); ++j)
                y(i - r0, j) = x(i, j);
        Var r = push(Op::row_slice, std::move(y));
        link(r, a);
        nodes_[r].i0 = r0;
        nodes_[r].i1 = r1;
        return r;
    }

    /// Columns [c0, c1) of a.
    Var col_slice(Var a, int c0, int c1)
    {
        const RealMatrix &x = val(a);
        slice_check(c0, c1, x.cols(), "col_slice");
        RealMatrix y(x.rows(), c1 - c0);
        for (int i = 0; i < x.rows(); ++i)
            for (int j = c0; j < c1; ++j)
                y(i, j - c0) = x(i, j);
        Var r = push(Op::col_slice, std::move(y));
        link(r, a);
        nodes_[r].i0 = c0;
        nodes_[r].i1 = c1;
        return r;
    }

    /// Row-major reshape to r x c (entry order preserved).
    Var reshape(Var a, int r, int c)
    {
        const RealMatrix &x = val(a);
        if (static_cast<std::size_t>(r) * c != x.size() || r < 0 || c < 0)
            throw std::invalid_argument("reshape: " + std::to_string(x.rows()) + "x" + std::to_string(x.cols()) +
                                        " cannot become " + std::to_string(r) + "x" + std::to_string(c));
        RealMatrix y(r, c);
        for (std::size_t i = 0; i < x.size(); ++i)
            y.data()[i] = x.data()[i];
        Var v = push(Op::reshape, std::move(y));
        link(v, a);
        return v;
    }

    /// Vertical concatenation of any number of parents (equal column counts).
    Var vcat(const std::vector<Var> &parts)
    {
        if (parts.empty())
            throw std::invalid_argument("vcat: no parts");
        int total_rows = 0;
        const int cols = val(parts[0]).cols();
        for (Var p : parts) {
            if (val(p).cols() != cols)
                throw std::invalid_argument("vcat: column count mismatch");
            total_rows += val(p).rows();
        }
        RealMatrix z(total_rows, cols);
        int r0 = 0;
        for (Var p : parts) {
            const RealMatrix &x = val(p);
            for (int i = 0; i < x.rows(); ++i)
                for (int j = 0; j < cols; ++j)
                    z(r0 + i, j) = x(i, j);
            r0 += x.rows();
        }
        Var r = push(Op::vcat, std::move(z));
        nodes_[r].extra = parts;
        return r;
    }

    const RealMatrix &value(Var v) const { return nodes_[check(v)].value; }

    /// Gradient of the last backward()'s loss with respect to node v.
    const RealMatrix &grad(Var v) const
    {
        const Node &n = nodes_[check(v)];
        if (!n.touched)
            throw std::logic_error("grad: node did not participate in the last backward pass");
        return n.grad;
    }

    /// Whether the node received any gradient in the last backward pass.
    bool touched(Var v) const { return nodes_[check(v)].touched; }

    std::size_t size() const { return nodes_.size(); }

    /// Reverse pass from a 1x1 loss node. Seeds d(loss)/d(loss) = 1 and
    /// accumulates into every ancestor; may be called once per tape.
    void backward(Var loss)
    {
        const Node &ln = nodes_[check(loss)];
        if (ln.value.rows() != 1 || ln.value.cols() != 1)
            throw std::invalid_argument("backward: loss node must be 1x1");
        for (Node &n : nodes_) {
            n.touched = false;
            n.grad = RealMatrix();
        }
        touch(loss);
        nodes_[loss].grad(0, 0) = 1.0;

        for (int id = loss; id >= 0; --id) {
            Node &n = nodes_[id];
            if (!n.touched)
                continue;
            const RealMatrix &g = n.grad;
            switch (n.op) {
            case Op::input:
            case Op::constant:
                break;
            case Op::add:
                accumulate(n.a, g);
                accumulate(n.b, g);
                break;
            case Op::sub:
                accumulate(n.a, g);
                accumulate_neg(n.b, g);
                break;
            case Op::neg:
                accumulate_neg(n.a, g);
                break;
            case Op::mul_elem:
                accumulate(n.a, hadamard(g, nodes_[n.b].value));
                accumulate(n.b, hadamard(g, nodes_[n.a].value));
                break;
            case Op::recip: {
                // d(1/x) = -y^2 dx
                RealMatrix t = hadamard(n.value, n.value);
                for (std::size_t i = 0; i < t.size(); ++i)
                    t.data()[i] = -t.data()[i] * g.data()[i];
                accumulate(n.a, t);
                break;
            }
            case Op::mul_scalar:
                accumulate(n.a, scale(g, n.s));
                break;
            case Op::add_scalar:
                accumulate(n.a, g);
                break;
            case Op::matmul:
                accumulate(n.a, ncal::matmul(g, ncal::transpose(nodes_[n.b].value)));
                accumulate(n.b, ncal::matmul(ncal::transpose(nodes_[n.a].value), g));
                break;
            case Op::transpose:
                accumulate(n.a, ncal::transpose(g));
                break;
            case Op::inverse: {
                const RealMatrix yt = ncal::transpose(n.value);
                accumulate_neg(n.a, ncal::matmul(yt, ncal::matmul(g, yt)));
                break;
            }
            case Op::relu: {
                const RealMatrix &x = nodes_[n.a].value;
                RealMatrix t(x.rows(), x.cols());
                for (std::size_t i = 0; i < t.size(); ++i)
                    t.data()[i] = x.data()[i] > 0.0 ? g.data()[i] : 0.0;
                accumulate(n.a, t);
                break;
            }
            case Op::log_elem: {
                const RealMatrix &x = nodes_[n.a].value;
                RealMatrix t(x.rows(), x.cols());
                for (std::size_t i = 0; i < t.size(); ++i)
                    t.data()[i] = g.data()[i] / x.data()[i];
                accumulate(n.a, t);
                break;
            }
            case Op::sqrt_elem: {
                RealMatrix t(n.value.rows(), n.value.cols());
                for (std::size_t i = 0; i < t.size(); ++i)
                    t.data()[i] = 0.5 * g.data()[i] / n.value.data()[i];
                accumulate(n.a, t);
                break;
            }
            case Op::sum_all:
                accumulate_fill(n.a, g(0, 0));
                break;
            case Op::add_broadcast_row: {
                accumulate(n.a, g);
                RealMatrix rg(1, g.cols());
                for (int i = 0; i < g.rows(); ++i)
                    for (int j = 0; j < g.cols(); ++j)
                        rg(0, j) += g(i, j);
                accumulate(n.b, rg);
                break;
            }
            case Op::mul_broadcast_row: {
                const RealMatrix &x = nodes_[n.a].value;
                const RealMatrix &w = nodes_[n.b].value;
                RealMatrix gx(x.rows(), x.cols());
                RealMatrix gw(1, x.cols());
                for (int i = 0; i < x.rows(); ++i)
                    for (int j = 0; j < x.cols(); ++j) {
                        gx(i, j) = g(i, j) * w(0, j);
                        gw(0, j) += g(i, j) * x(i, j);
                    }
                accumulate(n.a, gx);
                accumulate(n.b, gw);
                break;
            }
            case Op::mul_scalar_node: {
                const double s = nodes_[n.b].value(0, 0);
                accumulate(n.a, scale(g, s));
                const RealMatrix &x = nodes_[n.a].value;
                RealMatrix gs(1, 1);
                for (std::size_t i = 0; i < x.size(); ++i)
                    gs(0, 0) += g.data()[i] * x.data()[i];
                accumulate(n.b, gs);
                break;
            }
            case Op::hcat: {
                const int ca = n.i0;
                RealMatrix ga(g.rows(), ca), gb(g.rows(), g.cols() - ca);
                for (int i = 0; i < g.rows(); ++i) {
                    for (int j = 0; j < ca; ++j)
                        ga(i, j) = g(i, j);
                    for (int j = ca; j < g.cols(); ++j)
                        gb(i, j - ca) = g(i, j);
                }
                accumulate(n.a, ga);
                accumulate(n.b, gb);
                break;
            }
            case Op::row_slice: {
                touch(n.a);
                RealMatrix &pg = nodes_[n.a].grad;
                for (int i = n.i0; i < n.i1; ++i)
                    for (int j = 0; j < g.cols(); ++j)
                        pg(i, j) += g(i - n.i0, j);
                break;
            }
            case Op::col_slice: {
                touch(n.a);
                RealMatrix &pg = nodes_[n.a].grad;
                for (int i = 0; i < g.rows(); ++i)
                    for (int j = n.i0; j < n.i1; ++j)
                        pg(i, j) += g(i, j - n.i0);
                break;
            }
            case Op::reshape: {
                touch(n.a);
                RealMatrix &pg = nodes_[n.a].grad;
                for (std::size_t i = 0; i < pg.size(); ++i)
                    pg.data()[i] += g.data()[i];
                break;
            }
            case Op::vcat: {
                int r0 = 0;
                for (Var p : n.extra) {
                    touch(p);
                    RealMatrix &pg = nodes_[p].grad;
                    const int pr = pg.rows();
                    for (int i = 0; i < pr; ++i)
                        for (int j = 0; j < g.cols(); ++j)
                            pg(i, j) += g(r0 + i, j);
                    r0 += pr;
                }
                break;
            }
            }
        }
    }

  private:
    struct Node {
        Op op;
        int a = -1;
        int b = -1;
        double s = 0.0;
        int i0 = 0;
        int i1 = 0;
        std::vector<int> extra;
        RealMatrix value;
        RealMatrix grad;
        bool touched = false;
    };

    Var push(Op op, RealMatrix v)
    {
        Node n;
        n.op = op;
        n.value = std::move(v);
        nodes_.push_back(std::move(n));
        return static_cast<Var>(nodes_.size() - 1);
    }

    void link(Var r, Var a, Var b = -1)
    {
        nodes_[r].a = check(a);
        if (b >= 0)
            nodes_[r].b = check(b);
    }

    Var check(Var v) const
    {
        if (v < 0 || static_cast<std::size_t>(v) >= nodes_.size())
            throw std::out_of_range("Tape: bad node id " + std::to_string(v));
        return v;
    }

    const RealMatrix &val(Var v) const { return nodes_[check(v)].value; }

    void touch(Var v)
    {
        Node &n = nodes_[v];
        if (!n.touched) {
            n.touched = true;
            n.grad = RealMatrix(n.value.rows(), n.value.cols());
        }
    }

    void accumulate(Var v, const RealMatrix &g)
    {
        touch(v);
        RealMatrix &pg = nodes_[v].grad;
        for (std::size_t i = 0; i < pg.size(); ++i)
            pg.data()[i] += g.data()[i];
    }

    void accumulate_neg(Var v, const RealMatrix &g)
    {
        touch(v);
        RealMatrix &pg = nodes_[v].grad;
        for (std::size_t i = 0; i < pg.size(); ++i)
            pg.data()[i] -= g.data()[i];
    }

    void accumulate_fill(Var v, double s)
    {
        touch(v);
        RealMatrix &pg = nodes_[v].grad;
        for (std::size_t i = 0; i < pg.size(); ++i)
            pg.data()[i] += s;
    }

    static void broadcast_check(const RealMatrix &x, const RealMatrix &row, const char *op)
    {
        if (row.rows() != 1 || row.cols() != x.cols())
            throw std::invalid_argument(std::string(op) + ": row operand must be 1x" + std::to_string(x.cols()));
    }

    static void slice_check(int lo, int hi, int limit, const char *op)
    {
        if (lo < 0 || hi > limit || lo >= hi)
            throw std::invalid_argument(std::string(op) + ": bad range [" + std::to_string(lo) + ", " +
                                        std::to_string(hi) + ") of " + std::to_string(limit));
    }

    std::vector<Node> nodes_;
};

} // namespace ncal
