#include "advseq/tape.hpp"

#include <algorithm>
#include <cmath>

namespace advseq {

ValueRef Tape::push(Matrix value) {
    nodes_.push_back(Node{std::move(value), Matrix()});
    Node& n = nodes_.back();
    n.grad = Matrix(n.value.rows, n.value.cols, 0.0);
    return ValueRef{nodes_.size() - 1};
}

ValueRef Tape::leaf(const Matrix& m) { return push(m); }

ValueRef Tape::leaf(const Vector& v) { return push(Matrix::from_vector(v)); }

ValueRef Tape::leaf(double s) {
    Matrix m(1, 1);
    m.data[0] = s;
    return push(m);
}

ValueRef Tape::affine(ValueRef w, ValueRef x, ValueRef b) {
    const Matrix& wm = v(w);
    const Matrix& xm = v(x);
    const Matrix& bm = v(b);
    check_shape(wm.cols == xm.size(), "affine: W cols != x length");
    check_shape(bm.size() == wm.rows, "affine: b length != W rows");
    Matrix out(wm.rows, 1);
    for (std::size_t i = 0; i < wm.rows; ++i) {
        double acc = bm.data[i];
        const double* wrow = wm.data.data() + i * wm.cols;
        for (std::size_t j = 0; j < wm.cols; ++j) acc += wrow[j] * xm.data[j];
        out.data[i] = acc;
    }
    ValueRef r = push(std::move(out));
    steps_.push_back([this, w, x, b, r] {
        const Matrix& wm = v(w);
        const Matrix& xm = v(x);
        const Matrix& go = g(r);
        Matrix& gw = g(w);
        Matrix& gx = g(x);
        Matrix& gb = g(b);
        for (std::size_t i = 0; i < wm.rows; ++i) {
            const double d = go.data[i];
            if (d == 0.0) continue;
            gb.data[i] += d;
            double* gwrow = gw.data.data() + i * wm.cols;
            const double* wrow = wm.data.data() + i * wm.cols;
            for (std::size_t j = 0; j < wm.cols; ++j) {
                gwrow[j] += d * xm.data[j];
                gx.data[j] += d * wrow[j];
            }
        }
    });
    return r;
}

namespace {
inline double sigmoid_s(double x) { return 1.0 / (1.0 + std::exp(-x)); }
}  // namespace

std::pair<ValueRef, ValueRef> Tape::lstm_cell(ValueRef x, ValueRef h_prev, ValueRef c_prev,
                                              ValueRef w_x, ValueRef w_h, ValueRef bias) {
    const Matrix& xm = v(x);
    const Matrix& hm = v(h_prev);
    const Matrix& cm = v(c_prev);
    const Matrix& wx = v(w_x);
    const Matrix& wh = v(w_h);
    const Matrix& bm = v(bias);
    const std::size_t hid = hm.size();
    check_shape(cm.size() == hid, "lstm_cell: c_prev length != hidden size");
    check_shape(wx.rows == 4 * hid && wx.cols == xm.size(), "lstm_cell: w_x shape");
    check_shape(wh.rows == 4 * hid && wh.cols == hid, "lstm_cell: w_h shape");
    check_shape(bm.size() == 4 * hid, "lstm_cell: bias length");

    // Pre-activations a = w_x x + w_h h_prev + b, rows [i | f | g | o].
    Vector act(4 * hid);
    for (std::size_t r = 0; r < 4 * hid; ++r) {
        double acc = bm.data[r];
        const double* wxr = wx.data.data() + r * wx.cols;
        for (std::size_t j = 0; j < wx.cols; ++j) acc += wxr[j] * xm.data[j];
        const double* whr = wh.data.data() + r * wh.cols;
        for (std::size_t j = 0; j < hid; ++j) acc += whr[j] * hm.data[j];
        act[r] = acc;
    }
    Matrix h_out(hid, 1), c_out(hid, 1);
    Vector gate_i(hid), gate_f(hid), gate_g(hid), gate_o(hid), tanh_c(hid);
    for (std::size_t j = 0; j < hid; ++j) {
        gate_i[j] = sigmoid_s(act[j]);
        gate_f[j] = sigmoid_s(act[hid + j]);
        gate_g[j] = std::tanh(act[2 * hid + j]);
        gate_o[j] = sigmoid_s(act[3 * hid + j]);
        c_out.data[j] = gate_f[j] * cm.data[j] + gate_i[j] * gate_g[j];
        tanh_c[j] = std::tanh(c_out.data[j]);
        h_out.data[j] = gate_o[j] * tanh_c[j];
    }
    ValueRef hr = push(std::move(h_out));
    ValueRef cr = push(std::move(c_out));
    steps_.push_back([this, x, h_prev, c_prev, w_x, w_h, bias, hr, cr, hid,
                      gi = std::move(gate_i), gf = std::move(gate_f), gg = std::move(gate_g),
                      go = std::move(gate_o), tc = std::move(tanh_c)] {
        const Matrix& xm = v(x);
        const Matrix& hm = v(h_prev);
        const Matrix& cm = v(c_prev);
        const Matrix& wx = v(w_x);
        const Matrix& wh = v(w_h);
        const Matrix& dh = g(hr);
        const Matrix& dc_out = g(cr);
        Vector da(4 * hid);
        Vector dc(hid);
        for (std::size_t j = 0; j < hid; ++j) {
            const double dhj = dh.data[j];
            dc[j] = dc_out.data[j] + dhj * go[j] * (1.0 - tc[j] * tc[j]);
            const double d_o = dhj * tc[j];
            const double d_i = dc[j] * gg[j];
            const double d_f = dc[j] * cm.data[j];
            const double d_g = dc[j] * gi[j];
            da[j] = d_i * gi[j] * (1.0 - gi[j]);
            da[hid + j] = d_f * gf[j] * (1.0 - gf[j]);
            da[2 * hid + j] = d_g * (1.0 - gg[j] * gg[j]);
            da[3 * hid + j] = d_o * go[j] * (1.0 - go[j]);
        }
        Matrix& gx = g(x);
        Matrix& gh = g(h_prev);
        Matrix& gc = g(c_prev);
        Matrix& gwx = g(w_x);
        Matrix& gwh = g(w_h);
        Matrix& gb = g(bias);
        for (std::size_t j = 0; j < hid; ++j) gc.data[j] += dc[j] * gf[j];
        for (std::size_t r = 0; r < 4 * hid; ++r) {
            const double d = da[r];
            if (d == 0.0) continue;
            gb.data[r] += d;
            double* gwxr = gwx.data.data() + r * wx.cols;
            const double* wxr = wx.data.data() + r * wx.cols;
            for (std::size_t j = 0; j < wx.cols; ++j) {
                gwxr[j] += d * xm.data[j];
                gx.data[j] += d * wxr[j];
            }
            double* gwhr = gwh.data.data() + r * hid;
            const double* whr = wh.data.data() + r * hid;
            for (std::size_t j = 0; j < hid; ++j) {
                gwhr[j] += d * hm.data[j];
                gh.data[j] += d * whr[j];
            }
        }
    });
    return {hr, cr};
}

ValueRef Tape::conv1d(ValueRef m, ValueRef kernel, ValueRef bias) {
    const Matrix& mm = v(m);
    const Matrix& km = v(kernel);
    const Matrix& bm = v(bias);
    check_shape(km.cols == mm.cols, "conv1d: kernel cols != input cols");
    check_shape(km.rows <= mm.rows, "conv1d: kernel taller than input");
    check_shape(bm.size() == 1, "conv1d: bias must be scalar");
    const std::size_t steps = mm.rows - km.rows + 1;
    Matrix out(steps, 1);
    for (std::size_t i = 0; i < steps; ++i) {
        double acc = bm.data[0];
        for (std::size_t r = 0; r < km.rows; ++r) {
            const double* mrow = mm.data.data() + (i + r) * mm.cols;
            const double* krow = km.data.data() + r * km.cols;
            for (std::size_t c = 0; c < km.cols; ++c) acc += mrow[c] * krow[c];
        }
        out.data[i] = acc;
    }
    ValueRef r = push(std::move(out));
    steps_.push_back([this, m, kernel, bias, r, steps] {
        const Matrix& mm = v(m);
        const Matrix& km = v(kernel);
        const Matrix& go = g(r);
        Matrix& gm = g(m);
        Matrix& gk = g(kernel);
        Matrix& gb = g(bias);
        for (std::size_t i = 0; i < steps; ++i) {
            const double d = go.data[i];
            if (d == 0.0) continue;
            gb.data[0] += d;
            for (std::size_t rr = 0; rr < km.rows; ++rr) {
                const double* mrow = mm.data.data() + (i + rr) * mm.cols;
                const double* krow = km.data.data() + rr * km.cols;
                double* gmrow = gm.data.data() + (i + rr) * mm.cols;
                double* gkrow = gk.data.data() + rr * km.cols;
                for (std::size_t c = 0; c < km.cols; ++c) {
                    gkrow[c] += d * mrow[c];
                    gmrow[c] += d * krow[c];
                }
            }
        }
    });
    return r;
}

Vector softmax_value(const Vector& z) {
    if (z.empty()) throw ShapeError("softmax: empty logit vector");
    const double m = *std::max_element(z.begin(), z.end());
    Vector p(z.size());
    double total = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        p[i] = std::exp(z[i] - m);
        total += p[i];
    }
    for (double& x : p) x /= total;
    return p;
}

ValueRef Tape::softmax(ValueRef z) {
    const Matrix& zm = v(z);
    check_shape(zm.size() > 0, "softmax: empty logit vector");
    Matrix out(zm.rows, zm.cols);
    out.data = softmax_value(zm.data);
    const Vector p = out.data;
    ValueRef r = push(std::move(out));
    steps_.push_back([this, z, r, p] {
        const Matrix& go = g(r);
        Matrix& gz = g(z);
        double inner = 0.0;
        for (std::size_t i = 0; i < p.size(); ++i) inner += p[i] * go.data[i];
        for (std::size_t i = 0; i < p.size(); ++i) gz.data[i] += p[i] * (go.data[i] - inner);
    });
    return r;
}

ValueRef Tape::log_softmax_pick(ValueRef z, std::size_t index) {
    const Matrix& zm = v(z);
    check_shape(index < zm.size(), "log_softmax_pick: index out of range");
    const Vector p = softmax_value(zm.data);
    const double m = *std::max_element(zm.data.begin(), zm.data.end());
    double lse = 0.0;
    for (double x : zm.data) lse += std::exp(x - m);
    lse = m + std::log(lse);
    Matrix out(1, 1);
    out.data[0] = zm.data[index] - lse;
    ValueRef r = push(std::move(out));
    steps_.push_back([this, z, r, index, p] {
        const double d = g(r).data[0];
        if (d == 0.0) return;
        Matrix& gz = g(z);
        for (std::size_t i = 0; i < p.size(); ++i) gz.data[i] -= d * p[i];
        gz.data[index] += d;
    });
    return r;
}

ValueRef Tape::sigmoid(ValueRef a) {
    const Matrix& am = v(a);
    Matrix out(am.rows, am.cols);
    for (std::size_t i = 0; i < am.size(); ++i) out.data[i] = sigmoid_s(am.data[i]);
    const Vector s = out.data;
    ValueRef r = push(std::move(out));
    steps_.push_back([this, a, r, s] {
        const Matrix& go = g(r);
        Matrix& ga = g(a);
        for (std::size_t i = 0; i < s.size(); ++i) ga.data[i] += go.data[i] * s[i] * (1.0 - s[i]);
    });
    return r;
}

ValueRef Tape::tanh_op(ValueRef a) {
    const Matrix& am = v(a);
    Matrix out(am.rows, am.cols);
    for (std::size_t i = 0; i < am.size(); ++i) out.data[i] = std::tanh(am.data[i]);
    const Vector t = out.data;
    ValueRef r = push(std::move(out));
    steps_.push_back([this, a, r, t] {
        const Matrix& go = g(r);
        Matrix& ga = g(a);
        for (std::size_t i = 0; i < t.size(); ++i) ga.data[i] += go.data[i] * (1.0 - t[i] * t[i]);
    });
    return r;
}

ValueRef Tape::relu(ValueRef a) {
    const Matrix& am = v(a);
    Matrix out(am.rows, am.cols);
    for (std::size_t i = 0; i < am.size(); ++i) out.data[i] = am.data[i] > 0.0 ? am.data[i] : 0.0;
    ValueRef r = push(std::move(out));
    steps_.push_back([this, a, r] {
        const Matrix& am = v(a);
        const Matrix& go = g(r);
        Matrix& ga = g(a);
        for (std::size_t i = 0; i < am.size(); ++i)
            if (am.data[i] > 0.0) ga.data[i] += go.data[i];
    });
    return r;
}

ValueRef Tape::log_op(ValueRef a) {
    const Matrix& am = v(a);
    Matrix out(am.rows, am.cols);
    for (std::size_t i = 0; i < am.size(); ++i) out.data[i] = std::log(am.data[i]);
    ValueRef r = push(std::move(out));
    steps_.push_back([this, a, r] {
        const Matrix& am = v(a);
        const Matrix& go = g(r);
        Matrix& ga = g(a);
        for (std::size_t i = 0; i < am.size(); ++i) ga.data[i] += go.data[i] / am.data[i];
    });
    return r;
}

ValueRef Tape::clamp(ValueRef a, double lo, double hi) {
    const Matrix& am = v(a);
    Matrix out(am.rows, am.cols);
    std::vector<char> active(am.size());
    for (std::size_t i = 0; i < am.size(); ++i) {
        const double x = am.data[i];
        if (x < lo) {
            out.data[i] = lo;
            ++clamp_hits_;
        } else if (x > hi) {
            out.data[i] = hi;
            ++clamp_hits_;
        } else {
            out.data[i] = x;
            active[i] = 1;
        }
    }
    ValueRef r = push(std::move(out));
    steps_.push_back([this, a, r, active = std::move(active)] {
        const Matrix& go = g(r);
        Matrix& ga = g(a);
        for (std::size_t i = 0; i < active.size(); ++i)
            if (active[i]) ga.data[i] += go.data[i];
    });
    return r;
}

ValueRef Tape::add(ValueRef a, ValueRef b) {
    const Matrix& am = v(a);
    const Matrix& bm = v(b);
    check_shape(am.size() == bm.size(), "add: size mismatch");
    Matrix out(am.rows, am.cols);
    for (std::size_t i = 0; i < am.size(); ++i) out.data[i] = am.data[i] + bm.data[i];
    ValueRef r = push(std::move(out));
    steps_.push_back([this, a, b, r] {
        const Matrix& go = g(r);
        Matrix& ga = g(a);
        Matrix& gb = g(b);
        for (std::size_t i = 0; i < go.size(); ++i) {
            ga.data[i] += go.data[i];
            gb.data[i] += go.data[i];
        }
    });
    return r;
}

ValueRef Tape::sub(ValueRef a, ValueRef b) {
    const Matrix& am = v(a);
    const Matrix& bm = v(b);
    check_shape(am.size() == bm.size(), "sub: size mismatch");
    Matrix out(am.rows, am.cols);
    for (std::size_t i = 0; i < am.size(); ++i) out.data[i] = am.data[i] - bm.data[i];
    ValueRef r = push(std::move(out));
    steps_.push_back([this, a, b, r] {
        const Matrix& go = g(r);
        Matrix& ga = g(a);
        Matrix& gb = g(b);
        for (std::size_t i = 0; i < go.size(); ++i) {
            ga.data[i] += go.data[i];
            gb.data[i] -= go.data[i];
        }
    });
    return r;
}

ValueRef Tape::mul(ValueRef a, ValueRef b) {
    const Matrix& am = v(a);
    const Matrix& bm = v(b);
    check_shape(am.size() == bm.size(), "mul: size mismatch");
    Matrix out(am.rows, am.cols);
    for (std::size_t i = 0; i < am.size(); ++i) out.data[i] = am.data[i] * bm.data[i];
    ValueRef r = push(std::move(out));
    steps_.push_back([this, a, b, r] {
        const Matrix& am = v(a);
        const Matrix& bm = v(b);
        const Matrix& go = g(r);
        Matrix& ga = g(a);
        Matrix& gb = g(b);
        for (std::size_t i = 0; i < go.size(); ++i) {
            ga.data[i] += go.data[i] * bm.data[i];
            gb.data[i] += go.data[i] * am.data[i];
        }
    });
    return r;
}

ValueRef Tape::scale(ValueRef a, double factor) {
    const Matrix& am = v(a);
    Matrix out(am.rows, am.cols);
    for (std::size_t i = 0; i < am.size(); ++i) out.data[i] = am.data[i] * factor;
    ValueRef r = push(std::move(out));
    steps_.push_back([this, a, r, factor] {
        const Matrix& go = g(r);
        Matrix& ga = g(a);
        for (std::size_t i = 0; i < go.size(); ++i) ga.data[i] += go.data[i] * factor;
    });
    return r;
}

ValueRef Tape::dot(ValueRef a, ValueRef b) {
    const Matrix& am = v(a);
    const Matrix& bm = v(b);
    check_shape(am.size() == bm.size(), "dot: size mismatch");
    Matrix out(1, 1);
    for (std::size_t i = 0; i < am.size(); ++i) out.data[0] += am.data[i] * bm.data[i];
    ValueRef r = push(std::move(out));
    steps_.push_back([this, a, b, r] {
        const Matrix& am = v(a);
        const Matrix& bm = v(b);
        const double d = g(r).data[0];
        if (d == 0.0) return;
        Matrix& ga = g(a);
        Matrix& gb = g(b);
        for (std::size_t i = 0; i < am.size(); ++i) {
            ga.data[i] += d * bm.data[i];
            gb.data[i] += d * am.data[i];
        }
    });
    return r;
}

ValueRef Tape::sum(ValueRef a) {
    const Matrix& am = v(a);
    Matrix out(1, 1);
    for (double x : am.data) out.data[0] += x;
    ValueRef r = push(std::move(out));
    steps_.push_back([this, a, r] {
        const double d = g(r).data[0];
        if (d == 0.0) return;
        Matrix& ga = g(a);
        for (double& x : ga.data) x += d;
    });
    return r;
}

ValueRef Tape::max_over_time(ValueRef vref) {
    const Matrix& am = v(vref);
    check_shape(am.size() > 0, "max_over_time: empty input");
    std::size_t best = 0;
    for (std::size_t i = 1; i < am.size(); ++i)
        if (am.data[i] > am.data[best]) best = i;
    Matrix out(1, 1);
    out.data[0] = am.data[best];
    ValueRef r = push(std::move(out));
    steps_.push_back([this, vref, r, best] { g(vref).data[best] += g(r).data[0]; });
    return r;
}

ValueRef Tape::row(ValueRef m, std::size_t index) {
    const Matrix& mm = v(m);
    check_shape(index < mm.rows, "row: index out of range");
    Matrix out(mm.cols, 1);
    for (std::size_t j = 0; j < mm.cols; ++j) out.data[j] = mm(index, j);
    ValueRef r = push(std::move(out));
    steps_.push_back([this, m, r, index] {
        const Matrix& go = g(r);
        Matrix& gm = g(m);
        for (std::size_t j = 0; j < go.size(); ++j) gm.data[index * gm.cols + j] += go.data[j];
    });
    return r;
}

ValueRef Tape::rows_select(ValueRef m, const std::vector<std::size_t>& ids) {
    const Matrix& mm = v(m);
    Matrix out(ids.size(), mm.cols);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        check_shape(ids[i] < mm.rows, "rows_select: id out of range");
        for (std::size_t j = 0; j < mm.cols; ++j) out(i, j) = mm(ids[i], j);
    }
    ValueRef r = push(std::move(out));
    steps_.push_back([this, m, r, ids] {
        const Matrix& go = g(r);
        Matrix& gm = g(m);
        for (std::size_t i = 0; i < ids.size(); ++i)
            for (std::size_t j = 0; j < go.cols; ++j)
                gm.data[ids[i] * gm.cols + j] += go(i, j);
    });
    return r;
}

ValueRef Tape::concat(const std::vector<ValueRef>& parts) {
    std::size_t total = 0;
    for (ValueRef p : parts) total += v(p).size();
    Matrix out(total, 1);
    std::size_t at = 0;
    for (ValueRef p : parts) {
        const Matrix& pm = v(p);
        std::copy(pm.data.begin(), pm.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(at));
        at += pm.size();
    }
    ValueRef r = push(std::move(out));
    steps_.push_back([this, parts, r] {
        const Matrix& go = g(r);
        std::size_t at = 0;
        for (ValueRef p : parts) {
            Matrix& gp = g(p);
            for (std::size_t i = 0; i < gp.size(); ++i) gp.data[i] += go.data[at + i];
            at += gp.size();
        }
    });
    return r;
}

void Tape::backward(ValueRef out) {
    check_shape(v(out).size() == 1, "backward: output must be scalar");
    if (ran_backward_) throw NumericError("backward: tape already consumed");
    ran_backward_ = true;
    g(out).data[0] = 1.0;
    for (std::size_t i = steps_.size(); i-- > 0;) steps_[i]();
}

std::pair<Vector, Vector> lstm_cell_value(const Vector& x, const Vector& h_prev,
                                          const Vector& c_prev, const Matrix& w_x,
                                          const Matrix& w_h, const Vector& bias) {
    const std::size_t hid = h_prev.size();
    check_shape(c_prev.size() == hid, "lstm_cell: c_prev length != hidden size");
    check_shape(w_x.rows == 4 * hid && w_x.cols == x.size(), "lstm_cell: w_x shape");
    check_shape(w_h.rows == 4 * hid && w_h.cols == hid, "lstm_cell: w_h shape");
    check_shape(bias.size() == 4 * hid, "lstm_cell: bias length");
    Vector h(hid), c(hid);
    for (std::size_t j = 0; j < hid; ++j) {
        double ai = bias[j], af = bias[hid + j], ag = bias[2 * hid + j], ao = bias[3 * hid + j];
        const double* wxi = w_x.data.data() + j * w_x.cols;
        const double* wxf = w_x.data.data() + (hid + j) * w_x.cols;
        const double* wxg = w_x.data.data() + (2 * hid + j) * w_x.cols;
        const double* wxo = w_x.data.data() + (3 * hid + j) * w_x.cols;
        for (std::size_t k = 0; k < x.size(); ++k) {
            ai += wxi[k] * x[k];
            af += wxf[k] * x[k];
            ag += wxg[k] * x[k];
            ao += wxo[k] * x[k];
        }
        const double* whi = w_h.data.data() + j * hid;
        const double* whf = w_h.data.data() + (hid + j) * hid;
        const double* whg = w_h.data.data() + (2 * hid + j) * hid;
        const double* who = w_h.data.data() + (3 * hid + j) * hid;
        for (std::size_t k = 0; k < hid; ++k) {
            ai += whi[k] * h_prev[k];
            af += whf[k] * h_prev[k];
            ag += whg[k] * h_prev[k];
            ao += who[k] * h_prev[k];
        }
        const double gi = sigmoid_s(ai), gf = sigmoid_s(af), gg = std::tanh(ag),
                     go = sigmoid_s(ao);
        c[j] = gf * c_prev[j] + gi * gg;
        h[j] = go * std::tanh(c[j]);
    }
    return {std::move(h), std::move(c)};
}

}  // namespace advseq
