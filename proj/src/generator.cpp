#include "advseq/generator.hpp"

#include <algorithm>
#include <cmath>

#include "advseq/discriminator.hpp"
#include "advseq/parallel.hpp"
#include "advseq/tape.hpp"

namespace advseq {

GeneratorParams GeneratorParams::random_init(std::size_t vocab, std::size_t d_emb,
                                             std::size_t d_h, Rng& rng, double scale) {
    if (vocab < 1) throw InputError("GeneratorParams: vocab must be >= 1");
    GeneratorParams p;
    p.vocab = vocab;
    p.d_emb = d_emb;
    p.d_h = d_h;
    p.embedding = Matrix(vocab, d_emb);
    p.w_x = Matrix(4 * d_h, d_emb);
    p.w_h = Matrix(4 * d_h, d_h);
    p.b = Vector(4 * d_h, 0.0);
    p.v = Matrix(vocab, d_h);
    p.c_head = Vector(vocab, 0.0);
    for (double& x : p.w_x.data) x = scale * rng.normal();
    for (double& x : p.w_h.data) x = scale * rng.normal();
    for (double& x : p.b) x = scale * rng.normal();
    for (double& x : p.embedding.data) x = scale * rng.normal();
    for (double& x : p.v.data) x = scale * rng.normal();
    for (double& x : p.c_head) x = scale * rng.normal();
    return p;
}

namespace {

void append(Vector& out, const Vector& src) { out.insert(out.end(), src.begin(), src.end()); }

std::size_t take(Vector& dst, const Vector& flat, std::size_t at) {
    std::copy(flat.begin() + static_cast<std::ptrdiff_t>(at),
              flat.begin() + static_cast<std::ptrdiff_t>(at + dst.size()), dst.begin());
    return at + dst.size();
}

}  // namespace

Vector GeneratorParams::flatten() const {
    Vector flat;
    flat.reserve(flat_dim());
    append(flat, w_x.data);
    append(flat, w_h.data);
    append(flat, b);
    append(flat, embedding.data);
    append(flat, v.data);
    append(flat, c_head);
    return flat;
}

void GeneratorParams::set_flat(const Vector& flat) {
    check_shape(flat.size() == flat_dim(), "GeneratorParams::set_flat: size mismatch");
    std::size_t at = 0;
    at = take(w_x.data, flat, at);
    at = take(w_h.data, flat, at);
    at = take(b, flat, at);
    at = take(embedding.data, flat, at);
    at = take(v.data, flat, at);
    take(c_head, flat, at);
}

Vector GeneratorParams::core() const {
    Vector out;
    out.reserve(core_dim());
    append(out, w_x.data);
    append(out, w_h.data);
    append(out, b);
    return out;
}

void GeneratorParams::set_core(const Vector& core) {
    check_shape(core.size() == core_dim(), "GeneratorParams::set_core: size mismatch");
    std::size_t at = 0;
    at = take(w_x.data, core, at);
    at = take(w_h.data, core, at);
    take(b, core, at);
}

bool GeneratorParams::all_finite() const {
    return embedding.all_finite() && w_x.all_finite() && w_h.all_finite() &&
           advseq::all_finite(b) && v.all_finite() && advseq::all_finite(c_head);
}

StepResult generator_step(const GeneratorParams& params, const Vector& h, const Vector& c_state,
                          TokenId prev_token) {
    if (prev_token >= params.vocab) throw InputError("generator_step: token out of range");
    const Vector x = params.embedding.row(prev_token);
    auto [h_next, c_next] = lstm_cell_value(x, h, c_state, params.w_x, params.w_h, params.b);
    Vector logits = params.c_head;
    for (std::size_t i = 0; i < params.vocab; ++i) {
        const double* vrow = params.v.data.data() + i * params.d_h;
        for (std::size_t j = 0; j < params.d_h; ++j) logits[i] += vrow[j] * h_next[j];
    }
    return StepResult{softmax_value(logits), std::move(h_next), std::move(c_next)};
}

namespace {

struct RolloutState {
    Vector h;
    Vector c;
    TokenId prev = kStartToken;
};

TokenId sample_step(const GeneratorParams& params, RolloutState& st, Rng& rng,
                    double* log_prob_out) {
    StepResult step = generator_step(params, st.h, st.c, st.prev);
    const TokenId tok = rng.categorical(step.dist);
    if (log_prob_out) *log_prob_out = std::log(step.dist[tok]);
    st.h = std::move(step.h);
    st.c = std::move(step.c_state);
    st.prev = tok;
    return tok;
}

}  // namespace

TokenSequence sample_sequence(const GeneratorParams& params, std::size_t length, Rng& rng) {
    if (length == 0) throw InputError("sample_sequence: length must be >= 1");
    TokenSequence seq;
    seq.tokens.reserve(length);
    seq.log_probs.reserve(length);
    RolloutState st{Vector(params.d_h, 0.0), Vector(params.d_h, 0.0), kStartToken};
    for (std::size_t t = 0; t < length; ++t) {
        double lp = 0.0;
        seq.tokens.push_back(sample_step(params, st, rng, &lp));
        seq.log_probs.push_back(lp);
    }
    return seq;
}

double mc_q_estimate(const GeneratorParams& gen, const DiscriminatorParams& disc,
                     const TokenSequence& prefix, TokenId action, std::size_t horizon,
                     std::size_t n_rollouts, Rng& rng) {
    const std::size_t t = prefix.length();
    if (t + 1 > horizon) throw InputError("mc_q_estimate: prefix longer than horizon");
    if (n_rollouts < 1) throw InputError("mc_q_estimate: n_rollouts must be >= 1");

    // Recurrent state after consuming prefix + action.
    RolloutState st{Vector(gen.d_h, 0.0), Vector(gen.d_h, 0.0), kStartToken};
    TokenSequence full = prefix;
    for (TokenId tok : prefix.tokens) {
        StepResult step = generator_step(gen, st.h, st.c, st.prev);
        st.h = std::move(step.h);
        st.c = std::move(step.c_state);
        st.prev = tok;
    }
    {
        StepResult step = generator_step(gen, st.h, st.c, st.prev);
        st.h = std::move(step.h);
        st.c = std::move(step.c_state);
        st.prev = action;
    }
    full.tokens.push_back(action);
    full.log_probs.clear();
    full.rewards.clear();

    if (t + 1 == horizon) return discriminator_forward(disc, full);

    double total = 0.0;
    for (std::size_t r = 0; r < n_rollouts; ++r) {
        Rng sub = rng.fork(r);
        RolloutState roll = st;
        TokenSequence completed = full;
        for (std::size_t u = t + 1; u < horizon; ++u)
            completed.tokens.push_back(sample_step(gen, roll, sub, nullptr));
        total += discriminator_forward(disc, completed);
    }
    return total / static_cast<double>(n_rollouts);
}

namespace {

/// Tape leaves for every generator block, in flatten() order.
struct GenLeaves {
    ValueRef w_x, w_h, b, embedding, v, c_head;
};

GenLeaves make_leaves(Tape& tape, const GeneratorParams& p) {
    return GenLeaves{tape.leaf(p.w_x), tape.leaf(p.w_h), tape.leaf(p.b),
                     tape.leaf(p.embedding), tape.leaf(p.v), tape.leaf(p.c_head)};
}

Vector collect_grad(const Tape& tape, const GenLeaves& leaves, const GeneratorParams& p) {
    Vector flat;
    flat.reserve(p.flat_dim());
    append(flat, tape.grad(leaves.w_x).data);
    append(flat, tape.grad(leaves.w_h).data);
    append(flat, tape.grad(leaves.b).data);
    append(flat, tape.grad(leaves.embedding).data);
    append(flat, tape.grad(leaves.v).data);
    append(flat, tape.grad(leaves.c_head).data);
    return flat;
}

/// Builds sum_t weight[t] * log G(y_t | Y_{1:t-1}) on the tape and returns the
/// flattened gradient (and the weighted sum value).
std::pair<double, Vector> weighted_log_likelihood_grad(const GeneratorParams& p,
                                                       const TokenSequence& seq,
                                                       const Vector& weights) {
    Tape tape;
    GenLeaves leaves = make_leaves(tape, p);
    ValueRef h = tape.leaf(Vector(p.d_h, 0.0));
    ValueRef c = tape.leaf(Vector(p.d_h, 0.0));
    TokenId prev = kStartToken;
    std::vector<ValueRef> terms;
    terms.reserve(seq.length());
    for (std::size_t t = 0; t < seq.length(); ++t) {
        ValueRef x = tape.row(leaves.embedding, prev);
        auto [h2, c2] = tape.lstm_cell(x, h, c, leaves.w_x, leaves.w_h, leaves.b);
        h = h2;
        c = c2;
        ValueRef logits = tape.affine(leaves.v, h, leaves.c_head);
        ValueRef lp = tape.log_softmax_pick(logits, seq.tokens[t]);
        terms.push_back(weights.empty() ? lp : tape.scale(lp, weights[t]));
        prev = seq.tokens[t];
    }
    ValueRef total = tape.sum(tape.concat(terms));
    const double value = tape.scalar(total);
    tape.backward(total);
    return {value, collect_grad(tape, leaves, p)};
}

}  // namespace

Vector policy_gradient(const GeneratorParams& gen, const DiscriminatorParams& disc,
                       const std::vector<TokenSequence>& batch,
                       const PolicyGradientOptions& options, Rng& rng) {
    if (batch.empty()) throw InputError("policy_gradient: empty batch");
    const std::size_t horizon = batch.front().length();

    // Forks happen up front in batch order so parallel scheduling cannot
    // change the streams.
    std::vector<Rng> seq_rngs;
    seq_rngs.reserve(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) seq_rngs.push_back(rng.fork(i));

    std::vector<Vector> per_seq(batch.size());
    parallel_for(batch.size(), [&](std::size_t i) {
        const TokenSequence& seq = batch[i];
        Rng local = seq_rngs[i];
        Vector q_hat(seq.length());
        TokenSequence prefix;
        prefix.tokens.reserve(seq.length());
        for (std::size_t t = 0; t < seq.length(); ++t) {
            Rng qrng = local.fork(t);
            q_hat[t] = mc_q_estimate(gen, disc, prefix, seq.tokens[t], horizon,
                                     options.n_rollouts, qrng);
            if (options.use_baseline) q_hat[t] -= options.baseline;
            prefix.tokens.push_back(seq.tokens[t]);
        }
        per_seq[i] = weighted_log_likelihood_grad(gen, seq, q_hat).second;
    });

    Vector grad(gen.flat_dim(), 0.0);
    for (const Vector& g : per_seq) axpy(1.0 / static_cast<double>(batch.size()), g, grad);
    return grad;
}

GeneratorParams adversarial_update(const GeneratorParams& gen, const Vector& gradient,
                                   double alpha, double clip_norm) {
    if (alpha <= 0.0) throw InputError("adversarial_update: alpha must be > 0");
    if (!all_finite(gradient)) throw NumericError("adversarial_update: non-finite gradient");
    Vector flat = gen.flatten();
    check_shape(gradient.size() == flat.size(), "adversarial_update: gradient size mismatch");
    double factor = alpha;
    const double norm = norm2(gradient);
    if (std::isfinite(clip_norm) && norm > clip_norm) factor = alpha * clip_norm / norm;
    axpy(factor, gradient, flat);
    GeneratorParams out = gen;
    out.set_flat(flat);
    return out;
}

std::pair<double, Vector> log_likelihood_and_grad(const GeneratorParams& gen,
                                                  const std::vector<TokenSequence>& data) {
    if (data.empty()) throw InputError("log_likelihood_and_grad: empty data");
    std::vector<Vector> grads(data.size());
    std::vector<double> values(data.size());
    parallel_for(data.size(), [&](std::size_t i) {
        auto [value, grad] = weighted_log_likelihood_grad(gen, data[i], Vector());
        values[i] = value;
        grads[i] = std::move(grad);
    });
    double total = 0.0;
    Vector grad(gen.flat_dim(), 0.0);
    for (std::size_t i = 0; i < data.size(); ++i) {
        total += values[i];
        axpy(1.0, grads[i], grad);
    }
    return {total, std::move(grad)};
}

double mean_nll(const GeneratorParams& gen, const std::vector<TokenSequence>& data) {
    if (data.empty()) throw InputError("mean_nll: empty data");
    double total = 0.0;
    std::size_t tokens = 0;
    for (const TokenSequence& seq : data) {
        RolloutState st{Vector(gen.d_h, 0.0), Vector(gen.d_h, 0.0), kStartToken};
        for (TokenId tok : seq.tokens) {
            StepResult step = generator_step(gen, st.h, st.c, st.prev);
            total -= std::log(step.dist[tok]);
            st.h = std::move(step.h);
            st.c = std::move(step.c_state);
            st.prev = tok;
            ++tokens;
        }
    }
    return total / static_cast<double>(tokens);
}

GeneratorParams mle_pretrain(const GeneratorParams& gen, const std::vector<TokenSequence>& data,
                             std::size_t epochs, double alpha, double clip_norm) {
    if (data.empty()) throw InputError("mle_pretrain: empty data");
    GeneratorParams params = gen;
    for (std::size_t e = 0; e < epochs; ++e) {
        auto [value, grad] = log_likelihood_and_grad(params, data);
        (void)value;
        const double inv = 1.0 / static_cast<double>(data.size());
        for (double& x : grad) x *= inv;
        params = adversarial_update(params, grad, alpha, clip_norm);
    }
    return params;
}

}  // namespace advseq
