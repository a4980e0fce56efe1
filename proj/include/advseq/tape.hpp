#pragma once

#include <cstddef>
#include <functional>
#include <utility>
#include <vector>

#include "advseq/matrix.hpp"

namespace advseq {

struct ValueRef {
    std::size_t id = static_cast<std::size_t>(-1);
    bool valid() const { return id != static_cast<std::size_t>(-1); }
};

/// Reverse-mode tape. Every primitive records its cached forward values and a
/// backward closure; backward() replays the closures in exact reverse order of
/// forward application, accumulating gradients additively. One tape serves one
/// logical computation and is never shared across threads.
class Tape {
  public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // --- leaves ---
    ValueRef leaf(const Matrix& m);
    ValueRef leaf(const Vector& v);
    ValueRef leaf(double s);

    // --- primitives (forward recorded, backward exact) ---

    /// W x + b. W is rows x cols, x and b vectors.
    ValueRef affine(ValueRef w, ValueRef x, ValueRef b);

    /// Standard LSTM cell: gates i,f,o use the logistic function, the
    /// candidate uses tanh. Weight rows are ordered [i | f | g | o].
    /// Returns (h, c).
    std::pair<ValueRef, ValueRef> lstm_cell(ValueRef x, ValueRef h_prev, ValueRef c_prev,
                                            ValueRef w_x, ValueRef w_h, ValueRef bias);

    /// Valid 1-d convolution over the rows of M (T x k) with a kernel (l x k)
    /// and scalar bias: out[i] = <kernel, M[i..i+l)> + b, length T - l + 1.
    ValueRef conv1d(ValueRef m, ValueRef kernel, ValueRef bias);

    /// Numerically stabilized softmax over a vector of logits.
    ValueRef softmax(ValueRef z);

    /// log softmax(z)[index], fused for stability.
    ValueRef log_softmax_pick(ValueRef z, std::size_t index);

    ValueRef sigmoid(ValueRef a);
    ValueRef tanh_op(ValueRef a);
    ValueRef relu(ValueRef a);
    ValueRef log_op(ValueRef a);

    /// Elementwise clamp to [lo, hi]; gradient passes through strictly inside
    /// the interval and is zero where the clamp binds. Increments clamp_hits()
    /// once per saturated element.
    ValueRef clamp(ValueRef a, double lo, double hi);

    ValueRef add(ValueRef a, ValueRef b);
    ValueRef sub(ValueRef a, ValueRef b);
    ValueRef mul(ValueRef a, ValueRef b);  // elementwise
    ValueRef scale(ValueRef a, double factor);
    ValueRef dot(ValueRef a, ValueRef b);
    ValueRef sum(ValueRef a);
    ValueRef max_over_time(ValueRef v);  // max entry; ties resolve to lowest index

    /// Row `index` of a matrix leaf, as a vector. Backward scatters into the row.
    ValueRef row(ValueRef m, std::size_t index);

    /// Stacks rows of `m` given by token ids: out is ids.size() x k.
    ValueRef rows_select(ValueRef m, const std::vector<std::size_t>& ids);

    /// Concatenates scalars/vectors into one vector.
    ValueRef concat(const std::vector<ValueRef>& parts);

    // --- execution ---

    /// Seeds d(out) = 1 (out must be scalar) and replays all recorded
    /// primitives backward. May be called once per tape.
    void backward(ValueRef out);

    const Matrix& value(ValueRef r) const { return nodes_[r.id].value; }
    const Matrix& grad(ValueRef r) const { return nodes_[r.id].grad; }
    double scalar(ValueRef r) const { return nodes_[r.id].value.data[0]; }

    std::size_t clamp_hits() const { return clamp_hits_; }

  private:
    struct Node {
        Matrix value;
        Matrix grad;
    };

    ValueRef push(Matrix value);
    Matrix& g(ValueRef r) { return nodes_[r.id].grad; }
    const Matrix& v(ValueRef r) const { return nodes_[r.id].value; }

    std::vector<Node> nodes_;
    std::vector<std::function<void()>> steps_;
    std::size_t clamp_hits_ = 0;
    bool ran_backward_ = false;
};

// --- forward-only helpers shared with sampling paths ---

/// Stabilized softmax of a logit vector (no tape).
Vector softmax_value(const Vector& z);

/// Plain LSTM cell forward (no tape): returns (h, c).
std::pair<Vector, Vector> lstm_cell_value(const Vector& x, const Vector& h_prev,
                                          const Vector& c_prev, const Matrix& w_x,
                                          const Matrix& w_h, const Vector& bias);

}  // namespace advseq
