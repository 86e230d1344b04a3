#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "egomem/dataset.hpp"
#include "egomem/retrieval.hpp"

namespace egomem {

/// Row-major dense matrix.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

    double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    bool operator==(const Matrix&) const = default;
};

/// Two linear encoders over hashed bag-of-words features: `context`
/// projects conversation context, `memory` projects memory sentences.
struct LinearEncoderPair {
    std::size_t dim_in = 0;
    std::size_t dim_out = 0;
    Matrix context;
    Matrix memory;

    LinearEncoderPair() = default;
    LinearEncoderPair(std::size_t in, std::size_t out)
        : dim_in(in), dim_out(out), context(out, in), memory(out, in) {}

    /// Uniform(-scale, scale) initialization with scale = init_scale / sqrt(dim_in).
    static LinearEncoderPair random(std::size_t in, std::size_t out, std::uint64_t seed,
                                    double init_scale = 1.0);

    EmbeddingVector features(std::string_view text, EncoderRole role) const {
        return hashed_embed(text, dim_in, role);
    }
    EmbeddingVector project(const EmbeddingVector& x, EncoderRole role) const;
    EmbeddingVector encode(std::string_view text, EncoderRole role) const {
        return project(features(text, role), role);
    }

    bool operator==(const LinearEncoderPair&) const = default;
};

struct TripletExample {
    std::string context;
    std::string positive;
    std::string negative;
};

/// Features for one triplet, already hashed.
struct TripletFeatures {
    EmbeddingVector context;
    EmbeddingVector positive;
    EmbeddingVector negative;
};

inline constexpr double kDefaultMargin = 0.2;

struct TrainConfig {
    double margin = kDefaultMargin;
    double learning_rate = 1e-4;
    std::size_t batch_size = 90;
    std::size_t max_epochs = 20;
    std::uint64_t seed = 0;
    std::size_t dim_in = HashedEmbedder::kDefaultDim;
    std::size_t dim_out = 64;
    double init_scale = 1.0;
    // Adam moments.
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    /// Stop once the mean training loss reaches this value.
    double target_loss = 0.0;
};

struct Gradients {
    Matrix context;
    Matrix memory;
};

TripletFeatures featurize(const LinearEncoderPair& pair, const TripletExample& ex);

/// max(0, margin + cos(c, neg) - cos(c, pos)) on encoded vectors.
double triplet_loss(const LinearEncoderPair& pair, const TripletFeatures& ex, double margin);
double triplet_loss(const LinearEncoderPair& pair, const TripletExample& ex, double margin);

/// Analytic gradient of triplet_loss. Zero when the hinge is inactive or
/// exactly at the kink.
Gradients loss_gradient(const LinearEncoderPair& pair, const TripletFeatures& ex, double margin);
Gradients loss_gradient(const LinearEncoderPair& pair, const TripletExample& ex, double margin);

/// Mean of per-example gradients, accumulated in input order.
Gradients batch_gradient(const LinearEncoderPair& pair, std::span<const TripletFeatures> batch,
                         double margin);

double mean_loss(const LinearEncoderPair& pair, std::span<const TripletFeatures> data, double margin);

struct TrainReport {
    double initial_loss = 0.0;
    double final_loss = 0.0;
    std::size_t epochs_run = 0;
    std::size_t best_epoch = 0;
    std::vector<double> epoch_losses;
};

struct TrainResult {
    LinearEncoderPair pair;
    TrainReport report;
};

/// Mini-batch Adam on the triplet objective. Each epoch visits the data in
/// a seeded shuffled order. Returns the weights with the lowest mean
/// training loss seen (the initial weights included). Throws Error{EmptyDataset}.
TrainResult train(std::span<const TripletExample> dataset, const TrainConfig& config);
/// Same, starting from given weights.
TrainResult train_from(LinearEncoderPair initial, std::span<const TripletExample> dataset,
                       const TrainConfig& config);

/// One triplet per (tagged main-speaker utterance, tag): context is the
/// session transcript before the utterance, positive the tagged memory,
/// negative a uniformly drawn memory of the same episode not tagged on that
/// utterance. Pairs with no possible negative are skipped.
/// Throws Error{NoTaggedUtterances} when no utterance carries a tag.
std::vector<TripletExample> mine_triplets(std::span<const EpisodeRecord> episodes, std::uint64_t seed);

/// `egomem-encoder v1 dim_in dim_out`, then dim_out context rows and
/// dim_out memory rows of dim_in decimal values each.
void save_encoder(std::ostream& out, const LinearEncoderPair& pair);
void save_encoder(const std::filesystem::path& path, const LinearEncoderPair& pair);
/// Throws Error{EncoderFormatError}.
LinearEncoderPair load_encoder(std::istream& in);
LinearEncoderPair load_encoder(const std::filesystem::path& path);

class LinearEmbedder final : public Embedder {
public:
    explicit LinearEmbedder(LinearEncoderPair pair) : pair_(std::move(pair)) {}

    EmbeddingVector embed_context(std::string_view text) const override {
        return pair_.encode(text, EncoderRole::Context);
    }
    EmbeddingVector embed_memory(std::string_view text) const override {
        return pair_.encode(text, EncoderRole::Memory);
    }
    std::size_t dim() const noexcept override { return pair_.dim_out; }

    const LinearEncoderPair& pair() const noexcept { return pair_; }

private:
    LinearEncoderPair pair_;
};

}  // namespace egomem
