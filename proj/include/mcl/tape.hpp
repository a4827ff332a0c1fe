#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "mcl/mat.hpp"

namespace mcl {

// Reverse-mode tape over dense matrices. Nodes are recorded in topological
// order (an op can only reference already-existing nodes); backward walks the
// node list once in reverse. A tape is single-threaded; independent tapes may
// run concurrently.
enum class Op : int {
    Leaf = 0,
    Add,
    Sub,
    Mul,
    Div,
    AddScalar,
    MulScalar,
    PowScalar,
    Exp,
    Log,
    Sqrt,
    Relu,
    Softplus,
    MaxElem,   // elementwise max(a, b); ties differentiate to the first argument
    MaxScalar, // max(x, c); ties differentiate to x
    MatMul,
    SumAll,  // [r x c] -> [1 x 1]
    SumCols, // [r x c] -> [r x 1]
    BcastRow, // [1 x c] -> [r x c]
    BcastCol, // [r x 1] -> [r x c]
    SliceCols,
    ConcatCols,
    ClearSimple,  // equal-shift market clearing, custom vjp
    ClearProject, // bound-respecting clearing projection, custom vjp
};

const char* op_name(Op op);

// Attributes for the clearing ops. mu/lb are per-column; active sets are
// recorded per row during the forward pass for the backward rule.
struct ClearingAttr {
    std::vector<double> mu;
    double supply = 0.0;
    std::vector<double> lb;
    bool bounded = false;
    bool bisection = false;
    // filled by forward
    std::vector<uint8_t> active;     // rows x cols flags
    std::vector<double> free_mass;   // per row
};

struct Node {
    Op op = Op::Leaf;
    int a = -1;
    int b = -1;
    int rows = 0;
    int cols = 0;
    double s0 = 0.0; // scalar attr (AddScalar/MulScalar/PowScalar/MaxScalar, slice offset)
    bool is_param = false;
    std::vector<int> srcs;              // ConcatCols inputs
    std::shared_ptr<ClearingAttr> clr;  // clearing ops
    std::vector<double> val;
    std::vector<double> adj;
};

class Tape;

struct Var {
    Tape* tape = nullptr;
    int id = -1;
    bool valid() const { return tape != nullptr && id >= 0; }
};

class Tape {
  public:
    std::vector<Node> nodes;

    Var leaf(const Mat& m, bool is_param = false);
    Var constant(const Mat& m) { return leaf(m, false); }
    Var param(const Mat& m) { return leaf(m, true); }
    Var zeros(int r, int c);

    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);
    Var div(Var a, Var b);
    Var add_scalar(Var a, double c);
    Var mul_scalar(Var a, double c);
    Var pow_scalar(Var a, double c);
    Var exp(Var a);
    Var log(Var a);
    Var sqrt(Var a);
    Var relu(Var a);
    Var softplus(Var a);
    Var max_elem(Var a, Var b);
    Var max_scalar(Var a, double c);
    Var matmul(Var a, Var b);
    Var sum_all(Var a);
    Var sum_cols(Var a);
    Var bcast_row(Var a, int rows);
    Var bcast_col(Var a, int cols);
    Var slice_cols(Var a, int offset, int width);
    Var concat_cols(const std::vector<Var>& xs);
    Var clearing_simple(Var a, std::vector<double> mu, double supply);
    Var clearing_project(Var a, std::vector<double> mu, double supply, std::vector<double> lb,
                         bool bisection = false);

    // convenience compounds
    Var square(Var a) { return mul(a, a); }
    Var neg(Var a) { return mul_scalar(a, -1.0); }
    Var mean_all(Var a);
    Var fischer_burmeister(Var x, Var y); // x + y - sqrt(x^2 + y^2)

    void backward(Var root, double seed = 1.0);

    const std::vector<double>& value(Var v) const { return nodes[v.id].val; }
    Mat value_mat(Var v) const;
    const std::vector<double>& adjoint(Var v) const { return nodes[v.id].adj; }
    Mat adjoint_mat(Var v) const;
    int rows(Var v) const { return nodes[v.id].rows; }
    int cols(Var v) const { return nodes[v.id].cols; }

  private:
    int push(Node n);
    Var binary(Op op, Var a, Var b);
    Var unary(Op op, Var a, double s0 = 0.0);
    void eval_node(int id);
    void backward_node(int id);
    void check_same_tape(Var v) const;
};

inline Var operator+(Var a, Var b) { return a.tape->add(a, b); }
inline Var operator-(Var a, Var b) { return a.tape->sub(a, b); }
inline Var operator*(Var a, Var b) { return a.tape->mul(a, b); }
inline Var operator/(Var a, Var b) { return a.tape->div(a, b); }
inline Var operator+(Var a, double c) { return a.tape->add_scalar(a, c); }
inline Var operator-(Var a, double c) { return a.tape->add_scalar(a, -c); }
inline Var operator*(Var a, double c) { return a.tape->mul_scalar(a, c); }
inline Var operator-(Var a) { return a.tape->mul_scalar(a, -1.0); }
inline Var operator+(double c, Var a) { return a.tape->add_scalar(a, c); }
inline Var operator*(double c, Var a) { return a.tape->mul_scalar(a, c); }
inline Var operator-(double c, Var a) { return a.tape->add_scalar(a.tape->mul_scalar(a, -1.0), c); }

// Records `program` applied to `inputs` (each input becomes a differentiable
// leaf) and evaluates it. The tape can then be driven backward.
using Program = std::function<Var(Tape&, const std::vector<Var>&)>;

struct Recorded {
    std::unique_ptr<Tape> tape;
    std::vector<Var> inputs;
    Var root;
    Mat value;
};

Recorded record_and_eval(const Program& program, const std::vector<Mat>& inputs);

struct GradCheckReport {
    double max_rel_err = 0.0;
    int worst_input = -1;
    long worst_component = -1;
    double ad_value = 0.0;
    double fd_value = 0.0;
    bool pass = true;
    std::string describe() const;
};

// Compares backward() against central finite differences componentwise.
// Throws std::runtime_error describing the worst component if tolerance is
// exceeded and `throw_on_fail` is set.
GradCheckReport gradcheck(const Program& program, const std::vector<Mat>& inputs,
                          double step = 1e-6, double tolerance = 1e-6,
                          bool throw_on_fail = false);

} // namespace mcl
