#include "advseq/discriminator.hpp"

#include <algorithm>
#include <cmath>

#include "advseq/tape.hpp"

namespace advseq {

namespace {
constexpr double kProbClamp = 1e-7;
}

DiscriminatorParams DiscriminatorParams::random_init(std::size_t vocab, std::size_t k_emb,
                                                     const std::vector<std::size_t>& window_sizes,
                                                     std::size_t kernels_per_size, Rng& rng,
                                                     double scale) {
    DiscriminatorParams p;
    p.vocab = vocab;
    p.k_emb = k_emb;
    p.window_sizes = window_sizes;
    p.kernels_per_size = kernels_per_size;
    p.embedding = Matrix(vocab, k_emb);
    for (double& x : p.embedding.data) x = scale * rng.normal();
    for (std::size_t l : window_sizes) {
        for (std::size_t n = 0; n < kernels_per_size; ++n) {
            Matrix k(l, k_emb);
            for (double& x : k.data) x = scale * rng.normal();
            p.kernels.push_back(std::move(k));
            p.kernel_bias.push_back(scale * rng.normal());
        }
    }
    p.head_w = Vector(p.kernels.size());
    for (double& x : p.head_w) x = scale * rng.normal();
    p.head_b = scale * rng.normal();
    return p;
}

std::size_t DiscriminatorParams::min_sequence_length() const {
    std::size_t m = 1;
    for (std::size_t l : window_sizes) m = std::max(m, l);
    return m;
}

std::size_t DiscriminatorParams::flat_dim() const {
    std::size_t n = embedding.size();
    for (const Matrix& k : kernels) n += k.size();
    return n + kernel_bias.size() + head_w.size() + 1;
}

Vector DiscriminatorParams::flatten() const {
    Vector flat;
    flat.reserve(flat_dim());
    flat.insert(flat.end(), embedding.data.begin(), embedding.data.end());
    for (const Matrix& k : kernels) flat.insert(flat.end(), k.data.begin(), k.data.end());
    flat.insert(flat.end(), kernel_bias.begin(), kernel_bias.end());
    flat.insert(flat.end(), head_w.begin(), head_w.end());
    flat.push_back(head_b);
    return flat;
}

void DiscriminatorParams::set_flat(const Vector& flat) {
    check_shape(flat.size() == flat_dim(), "DiscriminatorParams::set_flat: size mismatch");
    std::size_t at = 0;
    std::copy_n(flat.begin(), embedding.size(), embedding.data.begin());
    at += embedding.size();
    for (Matrix& k : kernels) {
        std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(at), k.size(), k.data.begin());
        at += k.size();
    }
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(at), kernel_bias.size(),
                kernel_bias.begin());
    at += kernel_bias.size();
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(at), head_w.size(), head_w.begin());
    at += head_w.size();
    head_b = flat[at];
}

bool DiscriminatorParams::all_finite() const {
    if (!embedding.all_finite() || !advseq::all_finite(kernel_bias) ||
        !advseq::all_finite(head_w) || !std::isfinite(head_b))
        return false;
    for (const Matrix& k : kernels)
        if (!k.all_finite()) return false;
    return true;
}

LabeledBatch::LabeledBatch(std::vector<TokenSequence> pos, std::vector<TokenSequence> neg)
    : positives(std::move(pos)), negatives(std::move(neg)) {
    if (positives.empty() || positives.size() != negatives.size())
        throw InputError("LabeledBatch: positives and negatives must be nonempty equal counts");
    const std::size_t len = positives.front().length();
    for (const auto& s : positives)
        if (s.length() != len) throw InputError("LabeledBatch: mixed sequence lengths");
    for (const auto& s : negatives)
        if (s.length() != len) throw InputError("LabeledBatch: mixed sequence lengths");
}

Matrix embed_sequence(const DiscriminatorParams& params, const TokenSequence& seq) {
    Matrix out(seq.length(), params.k_emb);
    for (std::size_t t = 0; t < seq.length(); ++t) {
        const TokenId tok = seq.tokens[t];
        if (tok >= params.vocab) throw InputError("embed_sequence: token out of range");
        for (std::size_t j = 0; j < params.k_emb; ++j) out(t, j) = params.embedding(tok, j);
    }
    return out;
}

double discriminator_forward(const DiscriminatorParams& params, const TokenSequence& seq) {
    if (seq.length() < params.min_sequence_length())
        throw ShapeError("discriminator_forward: sequence shorter than largest window");
    const Matrix m = embed_sequence(params, seq);
    double logit = params.head_b;
    for (std::size_t ki = 0; ki < params.kernels.size(); ++ki) {
        const Matrix& k = params.kernels[ki];
        const std::size_t steps = m.rows - k.rows + 1;
        double pooled = 0.0;  // ReLU floor: max over time of max(conv, 0)
        for (std::size_t i = 0; i < steps; ++i) {
            double acc = params.kernel_bias[ki];
            for (std::size_t r = 0; r < k.rows; ++r) {
                const double* mrow = m.data.data() + (i + r) * m.cols;
                const double* krow = k.data.data() + r * k.cols;
                for (std::size_t c = 0; c < k.cols; ++c) acc += mrow[c] * krow[c];
            }
            if (acc > pooled) pooled = acc;
        }
        logit += params.head_w[ki] * pooled;
    }
    return 1.0 / (1.0 + std::exp(-logit));
}

namespace {

struct DiscLeaves {
    ValueRef embedding;
    std::vector<ValueRef> kernels;
    std::vector<ValueRef> biases;
    ValueRef head_w;
    ValueRef head_b;
};

DiscLeaves make_leaves(Tape& tape, const DiscriminatorParams& p) {
    DiscLeaves leaves;
    leaves.embedding = tape.leaf(p.embedding);
    for (const Matrix& k : p.kernels) leaves.kernels.push_back(tape.leaf(k));
    for (double b : p.kernel_bias) leaves.biases.push_back(tape.leaf(b));
    leaves.head_w = tape.leaf(p.head_w);
    leaves.head_b = tape.leaf(p.head_b);
    return leaves;
}

/// Probability node for one sequence: conv -> ReLU -> max pool -> head.
ValueRef forward_node(Tape& tape, const DiscLeaves& leaves, const DiscriminatorParams& p,
                      const TokenSequence& seq) {
    if (seq.length() < p.min_sequence_length())
        throw ShapeError("discriminator forward: sequence shorter than largest window");
    ValueRef m = tape.rows_select(leaves.embedding, seq.tokens);
    std::vector<ValueRef> pooled;
    pooled.reserve(p.kernels.size());
    for (std::size_t ki = 0; ki < p.kernels.size(); ++ki) {
        ValueRef fmap = tape.conv1d(m, leaves.kernels[ki], leaves.biases[ki]);
        pooled.push_back(tape.max_over_time(tape.relu(fmap)));
    }
    ValueRef features = tape.concat(pooled);
    ValueRef logit = tape.add(tape.dot(leaves.head_w, features), leaves.head_b);
    return tape.sigmoid(logit);
}

Vector collect_grad(const Tape& tape, const DiscLeaves& leaves, const DiscriminatorParams& p) {
    Vector flat;
    flat.reserve(p.flat_dim());
    const auto& ge = tape.grad(leaves.embedding).data;
    flat.insert(flat.end(), ge.begin(), ge.end());
    for (ValueRef k : leaves.kernels) {
        const auto& gk = tape.grad(k).data;
        flat.insert(flat.end(), gk.begin(), gk.end());
    }
    for (ValueRef b : leaves.biases) flat.push_back(tape.grad(b).data[0]);
    const auto& gw = tape.grad(leaves.head_w).data;
    flat.insert(flat.end(), gw.begin(), gw.end());
    flat.push_back(tape.grad(leaves.head_b).data[0]);
    return flat;
}

}  // namespace

MinimaxResult minimax_loss(const DiscriminatorParams& params, const LabeledBatch& batch,
                           double mu, double lambda) {
    if (mu <= 0.0 || lambda <= 0.0) throw InputError("minimax_loss: mu and lambda must be > 0");
    Tape tape;
    DiscLeaves leaves = make_leaves(tape, params);
    std::vector<ValueRef> terms;
    terms.reserve(2 * batch.positives.size());
    const ValueRef one = tape.leaf(1.0);
    for (std::size_t i = 0; i < batch.positives.size(); ++i) {
        ValueRef d_pos = tape.clamp(forward_node(tape, leaves, params, batch.positives[i]),
                                    kProbClamp, 1.0 - kProbClamp);
        ValueRef d_neg = tape.clamp(forward_node(tape, leaves, params, batch.negatives[i]),
                                    kProbClamp, 1.0 - kProbClamp);
        terms.push_back(tape.scale(tape.log_op(d_pos), lambda));
        terms.push_back(tape.scale(tape.log_op(tape.sub(one, d_neg)), mu));
    }
    ValueRef loss =
        tape.scale(tape.sum(tape.concat(terms)), 1.0 / static_cast<double>(batch.positives.size()));
    MinimaxResult result;
    result.loss = tape.scalar(loss);
    tape.backward(loss);
    result.gradient = collect_grad(tape, leaves, params);
    result.clamp_events = tape.clamp_hits();
    return result;
}

TrainStepResult discriminator_train_step(const DiscriminatorParams& params,
                                         const GeneratorParams& gen,
                                         const std::vector<TokenSequence>& experts,
                                         std::size_t seq_len, const TrainStepOptions& options,
                                         Rng& rng) {
    if (experts.size() < options.batch_size)
        throw InputError("discriminator_train_step: insufficient expert data");
    std::vector<TokenSequence> pos, neg;
    pos.reserve(options.batch_size);
    neg.reserve(options.batch_size);
    for (std::size_t i = 0; i < options.batch_size; ++i) {
        TokenSequence p = experts[rng.uniform_int(experts.size())];
        p.source = SequenceSource::kExpert;
        pos.push_back(std::move(p));
    }
    for (std::size_t i = 0; i < options.batch_size; ++i) {
        TokenSequence s = sample_sequence(gen, seq_len, rng);
        s.source = SequenceSource::kSampled;
        neg.push_back(std::move(s));
    }
    LabeledBatch batch(std::move(pos), std::move(neg));
    MinimaxResult mm = minimax_loss(params, batch, options.mu, options.lambda);

    TrainStepResult out;
    out.loss = mm.loss;
    out.clamp_events = mm.clamp_events;
    out.positives = batch.positives.size();
    out.negatives = batch.negatives.size();
    Vector flat = params.flatten();
    double factor = options.alpha;
    const double norm = norm2(mm.gradient);
    if (std::isfinite(options.clip_norm) && norm > options.clip_norm)
        factor = options.alpha * options.clip_norm / norm;
    if (!all_finite(mm.gradient))
        throw NumericError("discriminator_train_step: non-finite gradient");
    axpy(factor, mm.gradient, flat);
    out.params = params;
    out.params.set_flat(flat);
    return out;
}

double discriminator_accuracy(const DiscriminatorParams& params,
                              const std::vector<TokenSequence>& positives,
                              const std::vector<TokenSequence>& negatives) {
    std::size_t correct = 0;
    for (const auto& s : positives)
        if (discriminator_forward(params, s) >= 0.5) ++correct;
    for (const auto& s : negatives)
        if (discriminator_forward(params, s) < 0.5) ++correct;
    return static_cast<double>(correct) / static_cast<double>(positives.size() + negatives.size());
}

}  // namespace advseq
