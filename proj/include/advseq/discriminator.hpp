#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include "advseq/generator.hpp"
#include "advseq/matrix.hpp"
#include "advseq/rng.hpp"

namespace advseq {

/// Convolutional sequence critic: token embedding, a bank of kernels per
/// window size with ReLU and max-over-time pooling, and a single-logit head
/// squashed to (0, 1). Flattening order is
/// [embedding | kernels (bank order) | kernel biases | head_w | head_b].
struct DiscriminatorParams {
    std::size_t vocab = 0;
    std::size_t k_emb = 0;
    std::vector<std::size_t> window_sizes;  // e.g. {2, 3, 4}
    std::size_t kernels_per_size = 0;
    Matrix embedding;             // vocab x k_emb
    std::vector<Matrix> kernels;  // window_sizes.size() * kernels_per_size, each l x k
    Vector kernel_bias;           // one per kernel
    Vector head_w;                // pooled feature count = kernels.size()
    double head_b = 0.0;

    static DiscriminatorParams random_init(std::size_t vocab, std::size_t k_emb,
                                           const std::vector<std::size_t>& window_sizes,
                                           std::size_t kernels_per_size, Rng& rng,
                                           double scale = 0.1);

    std::size_t feature_count() const { return kernels.size(); }
    std::size_t min_sequence_length() const;
    std::size_t flat_dim() const;
    Vector flatten() const;
    void set_flat(const Vector& flat);
    bool all_finite() const;
};

/// Balanced real/generated batch; positives and negatives share one length.
struct LabeledBatch {
    std::vector<TokenSequence> positives;
    std::vector<TokenSequence> negatives;

    LabeledBatch(std::vector<TokenSequence> pos, std::vector<TokenSequence> neg);
};

/// Row t of the result is the embedding of token y_t (T x k).
Matrix embed_sequence(const DiscriminatorParams& params, const TokenSequence& seq);

/// Probability in (0, 1) that the sequence is real.
double discriminator_forward(const DiscriminatorParams& params, const TokenSequence& seq);

struct MinimaxResult {
    double loss = 0.0;   // mean over pairs of mu log(1 - D(neg)) + lambda log D(pos)
    Vector gradient;     // ascent direction for the discriminator
    std::size_t clamp_events = 0;  // probabilities clamped before the logs
};

/// The two-player objective the discriminator ascends. D outputs are clamped
/// to [1e-7, 1 - 1e-7] before the logs; clamp events are counted.
MinimaxResult minimax_loss(const DiscriminatorParams& params, const LabeledBatch& batch,
                           double mu, double lambda);

struct TrainStepOptions {
    std::size_t batch_size = 25;
    double alpha = 0.1;
    double mu = 1.0;
    double lambda = 1.0;
    double clip_norm = 5.0;
};

struct TrainStepResult {
    DiscriminatorParams params;
    double loss = 0.0;
    std::size_t clamp_events = 0;
    std::size_t positives = 0;
    std::size_t negatives = 0;
};

/// One ascent step on a balanced batch: batch_size positives sampled from
/// `experts`, batch_size negatives freshly sampled from the generator.
TrainStepResult discriminator_train_step(const DiscriminatorParams& params,
                                         const GeneratorParams& gen,
                                         const std::vector<TokenSequence>& experts,
                                         std::size_t seq_len, const TrainStepOptions& options,
                                         Rng& rng);

/// Classification accuracy at threshold 0.5 over a labeled set; a positive
/// counts when p >= 0.5, a negative when p < 0.5.
double discriminator_accuracy(const DiscriminatorParams& params,
                              const std::vector<TokenSequence>& positives,
                              const std::vector<TokenSequence>& negatives);

}  // namespace advseq
