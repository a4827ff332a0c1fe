#include "mcl/tape.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "mcl/clearing.hpp"
#include "mcl/kernels.hpp"

namespace mcl {

const char* op_name(Op op) {
    switch (op) {
        case Op::Leaf: return "leaf";
        case Op::Add: return "add";
        case Op::Sub: return "sub";
        case Op::Mul: return "mul";
        case Op::Div: return "div";
        case Op::AddScalar: return "add_scalar";
        case Op::MulScalar: return "mul_scalar";
        case Op::PowScalar: return "pow_scalar";
        case Op::Exp: return "exp";
        case Op::Log: return "log";
        case Op::Sqrt: return "sqrt";
        case Op::Relu: return "relu";
        case Op::Softplus: return "softplus";
        case Op::MaxElem: return "max_elem";
        case Op::MaxScalar: return "max_scalar";
        case Op::MatMul: return "matmul";
        case Op::SumAll: return "sum_all";
        case Op::SumCols: return "sum_cols";
        case Op::BcastRow: return "bcast_row";
        case Op::BcastCol: return "bcast_col";
        case Op::SliceCols: return "slice_cols";
        case Op::ConcatCols: return "concat_cols";
        case Op::ClearSimple: return "clearing_simple";
        case Op::ClearProject: return "clearing_project";
    }
    return "unknown";
}

namespace {
double stable_softplus(double x) {
    if (x > 30.0) return x;
    if (x < -30.0) return std::exp(x);
    return std::log1p(std::exp(x));
}
double sigmoid(double x) {
    if (x >= 0.0) {
        const double e = std::exp(-x);
        return 1.0 / (1.0 + e);
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}
[[noreturn]] void unregistered(Op op) {
    throw std::runtime_error(std::string("tape: unregistered primitive '") + op_name(op) + "' (" +
                             std::to_string(static_cast<int>(op)) + ")");
}
} // namespace

void Tape::check_same_tape(Var v) const {
    if (v.tape != this || v.id < 0 || v.id >= static_cast<int>(nodes.size()))
        throw std::invalid_argument("tape: variable does not belong to this tape");
}

int Tape::push(Node n) {
    nodes.push_back(std::move(n));
    const int id = static_cast<int>(nodes.size()) - 1;
    eval_node(id);
    return id;
}

Var Tape::leaf(const Mat& m, bool is_param) {
    Node n;
    n.op = Op::Leaf;
    n.rows = m.rows;
    n.cols = m.cols;
    n.is_param = is_param;
    n.val = m.a;
    nodes.push_back(std::move(n));
    return {this, static_cast<int>(nodes.size()) - 1};
}

Var Tape::zeros(int r, int c) { return leaf(Mat(r, c), false); }

Var Tape::binary(Op op, Var a, Var b) {
    check_same_tape(a);
    check_same_tape(b);
    const Node& na = nodes[a.id];
    const Node& nb = nodes[b.id];
    if (na.rows != nb.rows || na.cols != nb.cols)
        throw std::invalid_argument(std::string("tape: shape mismatch in ") + op_name(op) + ": " +
                                    std::to_string(na.rows) + "x" + std::to_string(na.cols) +
                                    " vs " + std::to_string(nb.rows) + "x" +
                                    std::to_string(nb.cols));
    Node n;
    n.op = op;
    n.a = a.id;
    n.b = b.id;
    n.rows = na.rows;
    n.cols = na.cols;
    return {this, push(std::move(n))};
}

Var Tape::unary(Op op, Var a, double s0) {
    check_same_tape(a);
    Node n;
    n.op = op;
    n.a = a.id;
    n.rows = nodes[a.id].rows;
    n.cols = nodes[a.id].cols;
    n.s0 = s0;
    return {this, push(std::move(n))};
}

Var Tape::add(Var a, Var b) { return binary(Op::Add, a, b); }
Var Tape::sub(Var a, Var b) { return binary(Op::Sub, a, b); }
Var Tape::mul(Var a, Var b) { return binary(Op::Mul, a, b); }
Var Tape::div(Var a, Var b) { return binary(Op::Div, a, b); }
Var Tape::max_elem(Var a, Var b) { return binary(Op::MaxElem, a, b); }
Var Tape::add_scalar(Var a, double c) { return unary(Op::AddScalar, a, c); }
Var Tape::mul_scalar(Var a, double c) { return unary(Op::MulScalar, a, c); }
Var Tape::pow_scalar(Var a, double c) { return unary(Op::PowScalar, a, c); }
Var Tape::exp(Var a) { return unary(Op::Exp, a); }
Var Tape::log(Var a) { return unary(Op::Log, a); }
Var Tape::sqrt(Var a) { return unary(Op::Sqrt, a); }
Var Tape::relu(Var a) { return unary(Op::Relu, a); }
Var Tape::softplus(Var a) { return unary(Op::Softplus, a); }
Var Tape::max_scalar(Var a, double c) { return unary(Op::MaxScalar, a, c); }

Var Tape::matmul(Var a, Var b) {
    check_same_tape(a);
    check_same_tape(b);
    const Node& na = nodes[a.id];
    const Node& nb = nodes[b.id];
    if (na.cols != nb.rows)
        throw std::invalid_argument("tape: matmul inner dims " + std::to_string(na.cols) + " vs " +
                                    std::to_string(nb.rows));
    Node n;
    n.op = Op::MatMul;
    n.a = a.id;
    n.b = b.id;
    n.rows = na.rows;
    n.cols = nb.cols;
    return {this, push(std::move(n))};
}

Var Tape::sum_all(Var a) {
    check_same_tape(a);
    Node n;
    n.op = Op::SumAll;
    n.a = a.id;
    n.rows = 1;
    n.cols = 1;
    return {this, push(std::move(n))};
}

Var Tape::sum_cols(Var a) {
    check_same_tape(a);
    Node n;
    n.op = Op::SumCols;
    n.a = a.id;
    n.rows = nodes[a.id].rows;
    n.cols = 1;
    return {this, push(std::move(n))};
}

Var Tape::bcast_row(Var a, int rows) {
    check_same_tape(a);
    if (nodes[a.id].rows != 1) throw std::invalid_argument("tape: bcast_row needs a 1xc input");
    Node n;
    n.op = Op::BcastRow;
    n.a = a.id;
    n.rows = rows;
    n.cols = nodes[a.id].cols;
    return {this, push(std::move(n))};
}

Var Tape::bcast_col(Var a, int cols) {
    check_same_tape(a);
    if (nodes[a.id].cols != 1) throw std::invalid_argument("tape: bcast_col needs an rx1 input");
    Node n;
    n.op = Op::BcastCol;
    n.a = a.id;
    n.rows = nodes[a.id].rows;
    n.cols = cols;
    return {this, push(std::move(n))};
}

Var Tape::slice_cols(Var a, int offset, int width) {
    check_same_tape(a);
    const Node& na = nodes[a.id];
    if (offset < 0 || width < 1 || offset + width > na.cols)
        throw std::invalid_argument("tape: slice_cols [" + std::to_string(offset) + "," +
                                    std::to_string(offset + width) + ") out of " +
                                    std::to_string(na.cols) + " columns");
    Node n;
    n.op = Op::SliceCols;
    n.a = a.id;
    n.rows = na.rows;
    n.cols = width;
    n.s0 = static_cast<double>(offset);
    return {this, push(std::move(n))};
}

Var Tape::concat_cols(const std::vector<Var>& xs) {
    if (xs.empty()) throw std::invalid_argument("tape: concat_cols of nothing");
    int total = 0;
    const int r = nodes[xs[0].id].rows;
    Node n;
    n.op = Op::ConcatCols;
    for (Var v : xs) {
        check_same_tape(v);
        if (nodes[v.id].rows != r) throw std::invalid_argument("tape: concat_cols row mismatch");
        total += nodes[v.id].cols;
        n.srcs.push_back(v.id);
    }
    n.rows = r;
    n.cols = total;
    return {this, push(std::move(n))};
}

Var Tape::clearing_simple(Var a, std::vector<double> mu, double supply) {
    check_same_tape(a);
    const Node& na = nodes[a.id];
    if (static_cast<int>(mu.size()) != na.cols)
        throw std::invalid_argument("tape: clearing mu size " + std::to_string(mu.size()) +
                                    " vs columns " + std::to_string(na.cols));
    Node n;
    n.op = Op::ClearSimple;
    n.a = a.id;
    n.rows = na.rows;
    n.cols = na.cols;
    n.clr = std::make_shared<ClearingAttr>();
    n.clr->mu = std::move(mu);
    n.clr->supply = supply;
    return {this, push(std::move(n))};
}

Var Tape::clearing_project(Var a, std::vector<double> mu, double supply, std::vector<double> lb,
                           bool bisection) {
    check_same_tape(a);
    const Node& na = nodes[a.id];
    if (static_cast<int>(mu.size()) != na.cols || static_cast<int>(lb.size()) != na.cols)
        throw std::invalid_argument("tape: clearing mu/lb size vs columns mismatch");
    Node n;
    n.op = Op::ClearProject;
    n.a = a.id;
    n.rows = na.rows;
    n.cols = na.cols;
    n.clr = std::make_shared<ClearingAttr>();
    n.clr->mu = std::move(mu);
    n.clr->supply = supply;
    n.clr->lb = std::move(lb);
    n.clr->bounded = true;
    n.clr->bisection = bisection;
    return {this, push(std::move(n))};
}

Var Tape::mean_all(Var a) {
    const Node& na = nodes[a.id];
    return mul_scalar(sum_all(a), 1.0 / (static_cast<double>(na.rows) * na.cols));
}

Var Tape::fischer_burmeister(Var x, Var y) {
    return sub(add(x, y), sqrt(add(square(x), square(y))));
}

void Tape::eval_node(int id) {
    Node& n = nodes[id];
    n.val.resize(static_cast<size_t>(n.rows) * n.cols);
    const size_t sz = n.val.size();
    const double* A = n.a >= 0 ? nodes[n.a].val.data() : nullptr;
    const double* B = n.b >= 0 ? nodes[n.b].val.data() : nullptr;
    double* O = n.val.data();

    switch (n.op) {
        case Op::Leaf: return;
        case Op::Add:
            for (size_t i = 0; i < sz; ++i) O[i] = A[i] + B[i];
            return;
        case Op::Sub:
            for (size_t i = 0; i < sz; ++i) O[i] = A[i] - B[i];
            return;
        case Op::Mul:
            for (size_t i = 0; i < sz; ++i) O[i] = A[i] * B[i];
            return;
        case Op::Div:
            for (size_t i = 0; i < sz; ++i) O[i] = A[i] / B[i];
            return;
        case Op::AddScalar:
            for (size_t i = 0; i < sz; ++i) O[i] = A[i] + n.s0;
            return;
        case Op::MulScalar:
            for (size_t i = 0; i < sz; ++i) O[i] = A[i] * n.s0;
            return;
        case Op::PowScalar:
            for (size_t i = 0; i < sz; ++i) O[i] = std::pow(A[i], n.s0);
            return;
        case Op::Exp:
            for (size_t i = 0; i < sz; ++i) O[i] = std::exp(A[i]);
            return;
        case Op::Log:
            for (size_t i = 0; i < sz; ++i) O[i] = std::log(A[i]);
            return;
        case Op::Sqrt:
            for (size_t i = 0; i < sz; ++i) O[i] = std::sqrt(A[i]);
            return;
        case Op::Relu:
            for (size_t i = 0; i < sz; ++i) O[i] = A[i] > 0.0 ? A[i] : 0.0;
            return;
        case Op::Softplus:
            for (size_t i = 0; i < sz; ++i) O[i] = stable_softplus(A[i]);
            return;
        case Op::MaxElem:
            for (size_t i = 0; i < sz; ++i) O[i] = A[i] >= B[i] ? A[i] : B[i];
            return;
        case Op::MaxScalar:
            for (size_t i = 0; i < sz; ++i) O[i] = A[i] >= n.s0 ? A[i] : n.s0;
            return;
        case Op::MatMul:
            kernels::matmul_nn(A, B, O, nodes[n.a].rows, nodes[n.a].cols, nodes[n.b].cols);
            return;
        case Op::SumAll: {
            double s = 0.0;
            const size_t na = nodes[n.a].val.size();
            for (size_t i = 0; i < na; ++i) s += A[i];
            O[0] = s;
            return;
        }
        case Op::SumCols: {
            const int ac = nodes[n.a].cols;
            for (int r = 0; r < n.rows; ++r) {
                double s = 0.0;
                const double* Ar = A + static_cast<size_t>(r) * ac;
                for (int c = 0; c < ac; ++c) s += Ar[c];
                O[r] = s;
            }
            return;
        }
        case Op::BcastRow:
            for (int r = 0; r < n.rows; ++r)
                for (int c = 0; c < n.cols; ++c) O[static_cast<size_t>(r) * n.cols + c] = A[c];
            return;
        case Op::BcastCol:
            for (int r = 0; r < n.rows; ++r)
                for (int c = 0; c < n.cols; ++c) O[static_cast<size_t>(r) * n.cols + c] = A[r];
            return;
        case Op::SliceCols: {
            const int off = static_cast<int>(n.s0);
            const int ac = nodes[n.a].cols;
            for (int r = 0; r < n.rows; ++r)
                for (int c = 0; c < n.cols; ++c)
                    O[static_cast<size_t>(r) * n.cols + c] = A[static_cast<size_t>(r) * ac + off + c];
            return;
        }
        case Op::ConcatCols: {
            int off = 0;
            for (int src : n.srcs) {
                const Node& ns = nodes[src];
                for (int r = 0; r < n.rows; ++r)
                    for (int c = 0; c < ns.cols; ++c)
                        O[static_cast<size_t>(r) * n.cols + off + c] =
                            ns.val[static_cast<size_t>(r) * ns.cols + c];
                off += ns.cols;
            }
            return;
        }
        case Op::ClearSimple: {
            ClearingAttr& cl = *n.clr;
            double mu_sum = 0.0;
            for (double m : cl.mu) mu_sum += m;
            for (int r = 0; r < n.rows; ++r)
                clearing::simple_adjust_row(cl.mu, mu_sum,
                                            {A + static_cast<size_t>(r) * n.cols, (size_t)n.cols},
                                            cl.supply, {O + static_cast<size_t>(r) * n.cols, (size_t)n.cols});
            return;
        }
        case Op::ClearProject: {
            ClearingAttr& cl = *n.clr;
            cl.active.assign(sz, 0);
            cl.free_mass.assign(n.rows, 0.0);
            clearing::RowWorkspace ws;
            for (int r = 0; r < n.rows; ++r) {
                clearing::project_row(cl.mu, {A + static_cast<size_t>(r) * n.cols, (size_t)n.cols},
                                      cl.supply, cl.lb,
                                      {O + static_cast<size_t>(r) * n.cols, (size_t)n.cols},
                                      {cl.active.data() + static_cast<size_t>(r) * n.cols, (size_t)n.cols},
                                      &cl.free_mass[r], ws, cl.bisection);
            }
            return;
        }
    }
    unregistered(n.op);
}

void Tape::backward(Var root, double seed) {
    check_same_tape(root);
    const Node& rn = nodes[root.id];
    if (rn.rows != 1 || rn.cols != 1)
        throw std::invalid_argument("tape: backward needs a scalar root, got " +
                                    std::to_string(rn.rows) + "x" + std::to_string(rn.cols));
    for (Node& n : nodes) n.adj.assign(n.val.size(), 0.0);
    nodes[root.id].adj[0] = seed;
    for (int id = root.id; id >= 0; --id) backward_node(id);
}

void Tape::backward_node(int id) {
    Node& n = nodes[id];
    if (n.op == Op::Leaf) return;
    const size_t sz = n.val.size();
    const double* G = n.adj.data();
    const double* A = n.a >= 0 ? nodes[n.a].val.data() : nullptr;
    const double* B = n.b >= 0 ? nodes[n.b].val.data() : nullptr;
    double* gA = n.a >= 0 ? nodes[n.a].adj.data() : nullptr;
    double* gB = n.b >= 0 ? nodes[n.b].adj.data() : nullptr;

    switch (n.op) {
        case Op::Leaf: return;
        case Op::Add:
            for (size_t i = 0; i < sz; ++i) {
                gA[i] += G[i];
                gB[i] += G[i];
            }
            return;
        case Op::Sub:
            for (size_t i = 0; i < sz; ++i) {
                gA[i] += G[i];
                gB[i] -= G[i];
            }
            return;
        case Op::Mul:
            for (size_t i = 0; i < sz; ++i) {
                gA[i] += G[i] * B[i];
                gB[i] += G[i] * A[i];
            }
            return;
        case Op::Div:
            for (size_t i = 0; i < sz; ++i) {
                gA[i] += G[i] / B[i];
                gB[i] -= G[i] * A[i] / (B[i] * B[i]);
            }
            return;
        case Op::AddScalar:
            for (size_t i = 0; i < sz; ++i) gA[i] += G[i];
            return;
        case Op::MulScalar:
            for (size_t i = 0; i < sz; ++i) gA[i] += G[i] * n.s0;
            return;
        case Op::PowScalar:
            for (size_t i = 0; i < sz; ++i) gA[i] += G[i] * n.s0 * std::pow(A[i], n.s0 - 1.0);
            return;
        case Op::Exp:
            for (size_t i = 0; i < sz; ++i) gA[i] += G[i] * n.val[i];
            return;
        case Op::Log:
            for (size_t i = 0; i < sz; ++i) gA[i] += G[i] / A[i];
            return;
        case Op::Sqrt:
            for (size_t i = 0; i < sz; ++i) gA[i] += G[i] * 0.5 / n.val[i];
            return;
        case Op::Relu:
            for (size_t i = 0; i < sz; ++i) gA[i] += A[i] > 0.0 ? G[i] : 0.0;
            return;
        case Op::Softplus:
            for (size_t i = 0; i < sz; ++i) gA[i] += G[i] * sigmoid(A[i]);
            return;
        case Op::MaxElem:
            // ties go to the first argument
            for (size_t i = 0; i < sz; ++i) {
                if (A[i] >= B[i])
                    gA[i] += G[i];
                else
                    gB[i] += G[i];
            }
            return;
        case Op::MaxScalar:
            for (size_t i = 0; i < sz; ++i)
                if (A[i] >= n.s0) gA[i] += G[i];
            return;
        case Op::MatMul: {
            const int m = nodes[n.a].rows, k = nodes[n.a].cols, c = nodes[n.b].cols;
            kernels::matmul_nt(G, B, gA, m, c, k, /*accumulate=*/true); // gA += G * B^T
            kernels::matmul_tn(A, G, gB, k, m, c, /*accumulate=*/true); // gB += A^T * G
            return;
        }
        case Op::SumAll: {
            const double g = G[0];
            double* ga = gA;
            const size_t na = nodes[n.a].val.size();
            for (size_t i = 0; i < na; ++i) ga[i] += g;
            return;
        }
        case Op::SumCols: {
            const int ac = nodes[n.a].cols;
            for (int r = 0; r < n.rows; ++r) {
                const double g = G[r];
                double* gr = gA + static_cast<size_t>(r) * ac;
                for (int c = 0; c < ac; ++c) gr[c] += g;
            }
            return;
        }
        case Op::BcastRow: {
            const int c = n.cols;
            for (int r = 0; r < n.rows; ++r) {
                const double* Gr = G + static_cast<size_t>(r) * c;
                for (int j = 0; j < c; ++j) gA[j] += Gr[j];
            }
            return;
        }
        case Op::BcastCol: {
            const int c = n.cols;
            for (int r = 0; r < n.rows; ++r) {
                const double* Gr = G + static_cast<size_t>(r) * c;
                double s = 0.0;
                for (int j = 0; j < c; ++j) s += Gr[j];
                gA[r] += s;
            }
            return;
        }
        case Op::SliceCols: {
            const int off = static_cast<int>(n.s0);
            const int ac = nodes[n.a].cols;
            for (int r = 0; r < n.rows; ++r)
                for (int c = 0; c < n.cols; ++c)
                    gA[static_cast<size_t>(r) * ac + off + c] += G[static_cast<size_t>(r) * n.cols + c];
            return;
        }
        case Op::ConcatCols: {
            int off = 0;
            for (int src : n.srcs) {
                Node& ns = nodes[src];
                for (int r = 0; r < n.rows; ++r)
                    for (int c = 0; c < ns.cols; ++c)
                        ns.adj[static_cast<size_t>(r) * ns.cols + c] +=
                            G[static_cast<size_t>(r) * n.cols + off + c];
                off += ns.cols;
            }
            return;
        }
        case Op::ClearSimple: {
            const ClearingAttr& cl = *n.clr;
            double M = 0.0;
            for (double m : cl.mu) M += m;
            const int c = n.cols;
            for (int r = 0; r < n.rows; ++r) {
                const double* Gr = G + static_cast<size_t>(r) * c;
                double gsum = 0.0;
                for (int j = 0; j < c; ++j) gsum += Gr[j];
                double* gr = gA + static_cast<size_t>(r) * c;
                for (int j = 0; j < c; ++j) gr[j] += Gr[j] - cl.mu[j] * gsum / M;
            }
            return;
        }
        case Op::ClearProject: {
            const ClearingAttr& cl = *n.clr;
            const int c = n.cols;
            std::vector<int> active_idx;
            for (int r = 0; r < n.rows; ++r) {
                const double* Gr = G + static_cast<size_t>(r) * c;
                const uint8_t* act = cl.active.data() + static_cast<size_t>(r) * c;
                active_idx.clear();
                for (int j = 0; j < c; ++j)
                    if (act[j]) active_idx.push_back(j);
                std::vector<double> g =
                    clearing::project_backward(cl.mu, active_idx, {Gr, (size_t)c});
                double* gr = gA + static_cast<size_t>(r) * c;
                for (int j = 0; j < c; ++j) gr[j] += g[j];
            }
            return;
        }
    }
    unregistered(n.op);
}

Mat Tape::value_mat(Var v) const {
    const Node& n = nodes[v.id];
    return Mat(n.rows, n.cols, n.val);
}

Mat Tape::adjoint_mat(Var v) const {
    const Node& n = nodes[v.id];
    return Mat(n.rows, n.cols, n.adj);
}

Recorded record_and_eval(const Program& program, const std::vector<Mat>& inputs) {
    Recorded rec;
    rec.tape = std::make_unique<Tape>();
    for (const Mat& m : inputs) {
        for (double v : m.a)
            if (!std::isfinite(v))
                throw std::invalid_argument("record_and_eval: non-finite input");
        rec.inputs.push_back(rec.tape->param(m));
    }
    rec.root = program(*rec.tape, rec.inputs);
    rec.value = rec.tape->value_mat(rec.root);
    return rec;
}

std::string GradCheckReport::describe() const {
    char buf[256];
    std::snprintf(buf, sizeof(buf),
                  "max_rel_err=%.3e at input %d component %ld (ad=%.12g fd=%.12g)", max_rel_err,
                  worst_input, worst_component, ad_value, fd_value);
    return buf;
}

GradCheckReport gradcheck(const Program& program, const std::vector<Mat>& inputs, double step,
                          double tolerance, bool throw_on_fail) {
    if (!(step > 0.0)) throw std::invalid_argument("gradcheck: step must be > 0");
    Recorded rec = record_and_eval(program, inputs);
    if (rec.value.rows != 1 || rec.value.cols != 1)
        throw std::invalid_argument("gradcheck: program must return a scalar");
    rec.tape->backward(rec.root, 1.0);

    std::vector<std::vector<double>> ad;
    for (Var v : rec.inputs) ad.push_back(rec.tape->adjoint(v));

    GradCheckReport rep;
    std::vector<Mat> work = inputs;
    auto value_at = [&](const std::vector<Mat>& x) {
        Recorded r = record_and_eval(program, x);
        return r.value.a[0];
    };
    for (size_t vi = 0; vi < work.size(); ++vi) {
        for (size_t ci = 0; ci < work[vi].a.size(); ++ci) {
            const double orig = work[vi].a[ci];
            work[vi].a[ci] = orig + step;
            const double fp = value_at(work);
            work[vi].a[ci] = orig - step;
            const double fm = value_at(work);
            work[vi].a[ci] = orig;
            const double fd = (fp - fm) / (2.0 * step);
            const double a = ad[vi][ci];
            const double err = std::fabs(a - fd) / std::max({std::fabs(a), std::fabs(fd), 1.0});
            if (err > rep.max_rel_err) {
                rep.max_rel_err = err;
                rep.worst_input = static_cast<int>(vi);
                rep.worst_component = static_cast<long>(ci);
                rep.ad_value = a;
                rep.fd_value = fd;
            }
        }
    }
    rep.pass = rep.max_rel_err <= tolerance;
    if (!rep.pass && throw_on_fail)
        throw std::runtime_error("gradcheck failed: " + rep.describe());
    return rep;
}

} // namespace mcl
