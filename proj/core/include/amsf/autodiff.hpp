#pragma once

#include <functional>
#include <vector>

#include "amsf/common.hpp"
#include "amsf/rng.hpp"

namespace amsf::ad {

using amsf::Matrix;

class Tape;

/// Handle to a node on a tape. Cheap to copy; invalidated by Tape::reset().
struct Var {
    Tape* tape = nullptr;
    int idx = -1;

    bool valid() const { return tape != nullptr && idx >= 0; }
    long rows() const;
    long cols() const;
    const Matrix& value() const;
};

/// Named parameter with a gradient accumulator. Stable address required
/// while any tape holds a handle to it (ParamStore uses a deque).
struct Parameter {
    std::string name;
    Matrix value;
    Matrix grad;

    void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

/// Row-sum extremes of every attention softmax routed through an op.
struct AttentionStats {
    double row_sum_min = 1.0;
    double row_sum_max = 1.0;
    long rows_seen = 0;

    void observe(const Matrix& probs);
};

// Append-only arena of nodes. Creation order is a topological order, so
// backward() is a single reverse sweep. One backward per tape generation;
// reset() clears nodes and allows reuse of the storage.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Leaf holding a constant. Gradient is still tracked (readable after
    /// backward) so inputs can be gradient-checked.
    Var leaf(Matrix value);

    /// Leaf bound to a parameter; backward() adds into p.grad.
    Var param(Parameter& p);

    /// Reverse sweep from a 1x1 root.
    void backward(const Var& root);

    const Matrix& value(const Var& v) const;
    /// Gradient of the last backward() root w.r.t. v (zero if untouched).
    Matrix grad(const Var& v) const;

    void reset();
    size_t size() const { return nodes_.size(); }

    // plumbing for op implementations
    int emplace(Matrix value);
    void set_backprop(int idx, std::function<void(Tape&, const Matrix&)> fn);
    const Matrix& node_value(int idx) const { return nodes_[idx].value; }
    void accumulate(int idx, const Matrix& g);

private:
    friend struct Var;

    struct Node {
        Matrix value;
        Matrix grad;                               // lazily allocated
        bool grad_live = false;
        std::function<void(Tape&, const Matrix&)> backprop;  // empty for leaves
        Parameter* bound = nullptr;
    };

    std::vector<Node> nodes_;
    bool swept_ = false;
};

// ---- op set ---------------------------------------------------------------
// Shapes must agree unless noted; a 1x1 operand of add/sub/mul broadcasts.

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var neg(Var a);
Var mul(Var a, Var b);               // Hadamard, or scalar broadcast via 1x1
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
Var matmul(Var a, Var b);
Var transpose(Var a);
Var add_rowvec(Var a, Var r);        // a: n x d, r: 1 x d
Var mul_rowvec(Var a, Var r);
Var linear(Var x, Var w, Var b);     // x*w + broadcast bias row
Var relu(Var a);
Var gelu(Var a);                     // exact erf form
Var sigmoid(Var a);
Var softplus(Var a);
Var exp(Var a);
Var log(Var a);
Var clamp(Var a, double lo, double hi);
Var softmax_rows(Var a);
Var layer_norm_rows(Var x, Var gain, Var bias, double eps = 1e-6);
Var sum_all(Var a);                  // 1x1
Var mean_all(Var a);                 // 1x1
Var mean_over_rows(Var a);           // column means, 1 x d
Var rows(Var a, int first, int count);
Var cols(Var a, int first, int count);
Var vcat(Var a, Var b);
Var hcat(Var a, Var b);
Var l2_normalize_rows(Var a, double guard = 1e-12);
Var spd_solve(Var a, Var b);         // a^{-1} b, a symmetric positive definite

/// Rearranges an (H*W) x C pixels-as-rows matrix into a (grid_h*grid_w) x
/// (patch*patch*C) patch-token matrix. Row-major patches, row-major pixels
/// within a patch, channels fastest.
Var patchify(Var pixels, int height, int width, int patch);

/// Flattens an H x W map to (H*W) x 1 in row-major pixel order.
Var flatten_image(Var a);

/// Softmax(Q_h K_h^T / sqrt(d_h)) V_h per head, heads concatenated.
/// q: Tq x d, k/v: Tk x d, heads must divide d.
Var multihead_attention(Var q, Var k, Var v, int heads, AttentionStats* stats = nullptr);

/// Inverted-scale dropout; identity when !training or rate == 0.
Var dropout(Var a, double rate, Rng& rng, bool training);

inline long Var::rows() const { return tape->value(*this).rows(); }
inline long Var::cols() const { return tape->value(*this).cols(); }
inline const Matrix& Var::value() const { return tape->value(*this); }

}  // namespace amsf::ad
