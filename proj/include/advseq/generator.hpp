#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "advseq/matrix.hpp"
#include "advseq/rng.hpp"

namespace advseq {

struct DiscriminatorParams;

using TokenId = std::size_t;

/// Reserved start-of-sequence token fed at t = 1. It is an ordinary member of
/// the vocabulary and may also be emitted.
inline constexpr TokenId kStartToken = 0;

enum class SequenceSource : std::uint8_t { kSampled, kExpert };

/// An ordered list of discrete action tokens y_1..y_T. Per-step
/// log-probabilities and rewards are filled where the producing code knows
/// them and left empty otherwise.
struct TokenSequence {
    std::vector<TokenId> tokens;
    Vector log_probs;  // empty or one entry per token, each <= 0
    Vector rewards;    // empty or one entry per token
    SequenceSource source = SequenceSource::kSampled;

    std::size_t length() const { return tokens.size(); }
};

/// LSTM token policy: embedding -> LSTM cell -> logits c + V h -> softmax.
/// The LSTM block (w_x, w_h, b) is the shared core slice used by the lifelong
/// basis; embedding and the output head (v, c_head) are per-task. Flattening
/// order is [w_x | w_h | b | embedding | v | c_head], core first.
struct GeneratorParams {
    std::size_t vocab = 0;
    std::size_t d_emb = 0;
    std::size_t d_h = 0;
    Matrix embedding;  // vocab x d_emb
    Matrix w_x;        // 4 d_h x d_emb, gate rows [i | f | g | o]
    Matrix w_h;        // 4 d_h x d_h
    Vector b;          // 4 d_h
    Matrix v;          // vocab x d_h
    Vector c_head;     // vocab

    static GeneratorParams random_init(std::size_t vocab, std::size_t d_emb, std::size_t d_h,
                                       Rng& rng, double scale = 0.1);

    std::size_t core_dim() const { return 4 * d_h * (d_emb + d_h + 1); }
    std::size_t flat_dim() const {
        return core_dim() + vocab * d_emb + vocab * d_h + vocab;
    }

    Vector flatten() const;
    void set_flat(const Vector& flat);
    Vector core() const;
    void set_core(const Vector& core);

    bool all_finite() const;
};

struct StepResult {
    Vector dist;  // probability vector over the vocabulary
    Vector h;
    Vector c_state;
};

/// Advances the recurrent state by one token and returns the next-token
/// distribution softmax(c + V h').
StepResult generator_step(const GeneratorParams& params, const Vector& h, const Vector& c_state,
                          TokenId prev_token);

/// Samples `length` tokens autoregressively from the start token, recording
/// per-step log-probabilities. Reproducible under an identical rng state.
TokenSequence sample_sequence(const GeneratorParams& params, std::size_t length, Rng& rng);

/// Action-value estimate for taking `action` after `prefix`: exact
/// discriminator output when the sequence completes the horizon, otherwise
/// the mean discriminator score over n_rollouts sampled completions.
double mc_q_estimate(const GeneratorParams& gen, const DiscriminatorParams& disc,
                     const TokenSequence& prefix, TokenId action, std::size_t horizon,
                     std::size_t n_rollouts, Rng& rng);

struct PolicyGradientOptions {
    std::size_t n_rollouts = 16;
    bool use_baseline = false;  // subtract a constant from every Q estimate
    double baseline = 0.0;
};

/// REINFORCE ascent direction: mean over the batch of
/// sum_t grad log G(y_t | Y_{1:t-1}) * Q(Y_{1:t-1}, y_t), flattened in
/// parameter order. Per-sequence work is independent and runs in parallel;
/// the reduction sums in batch order.
Vector policy_gradient(const GeneratorParams& gen, const DiscriminatorParams& disc,
                       const std::vector<TokenSequence>& batch,
                       const PolicyGradientOptions& options, Rng& rng);

/// theta <- theta + alpha * clip(gradient); pure (input left unmodified).
/// Gradients are clipped to L2 norm `clip_norm` before the step; pass +inf to
/// disable. Non-finite gradient entries refuse the update.
GeneratorParams adversarial_update(const GeneratorParams& gen, const Vector& gradient,
                                   double alpha, double clip_norm = 5.0);

/// Sum of log-likelihoods of `data` under the policy, with its gradient.
std::pair<double, Vector> log_likelihood_and_grad(const GeneratorParams& gen,
                                                  const std::vector<TokenSequence>& data);

/// Mean per-token negative log-likelihood over a dataset.
double mean_nll(const GeneratorParams& gen, const std::vector<TokenSequence>& data);

/// Gradient-ascent MLE over expert data: `epochs` full-batch steps of rate
/// alpha on the mean sequence log-likelihood.
GeneratorParams mle_pretrain(const GeneratorParams& gen, const std::vector<TokenSequence>& data,
                             std::size_t epochs, double alpha, double clip_norm = 5.0);

}  // namespace advseq
