#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "egomem/link_graph.hpp"
#include "egomem/memory.hpp"

namespace egomem {

/// Dense vector produced by an encoder. Values are always finite.
class EmbeddingVector {
public:
    EmbeddingVector() = default;
    explicit EmbeddingVector(std::size_t dim) : values_(dim, 0.0) {}
    explicit EmbeddingVector(std::vector<double> values);

    std::size_t dim() const noexcept { return values_.size(); }
    std::span<const double> values() const noexcept { return values_; }
    double operator[](std::size_t i) const { return values_[i]; }
    double& operator[](std::size_t i) { return values_[i]; }

    double norm() const noexcept;
    bool operator==(const EmbeddingVector&) const = default;

private:
    std::vector<double> values_;
};

enum class EncoderRole : std::uint8_t { Context, Memory };

/// Pair of encoders: one for the conversation context, one for memories.
/// Implementations must be deterministic for a fixed configuration and
/// safe to call concurrently.
class Embedder {
public:
    virtual ~Embedder() = default;
    virtual EmbeddingVector embed_context(std::string_view text) const = 0;
    virtual EmbeddingVector embed_memory(std::string_view text) const = 0;
    virtual std::size_t dim() const noexcept = 0;
};

/// dot(a,b) / (|a||b|), 0 if either norm is 0. Throws Error{DimMismatch}.
double cosine_similarity(const EmbeddingVector& a, const EmbeddingVector& b);

/// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::span<const unsigned char> bytes) noexcept;

/// Bag-of-words feature hashing. Tokens are maximal runs of ASCII
/// alphanumerics, lowercased; each bumps bucket FNV-1a64(role byte ++ token)
/// mod dim, then the vector is L2-normalized. The role byte is 'c' for
/// context and 'm' for memory. Requires dim >= 8.
EmbeddingVector hashed_embed(std::string_view text, std::size_t dim, EncoderRole role);

class HashedEmbedder final : public Embedder {
public:
    static constexpr std::size_t kDefaultDim = 256;

    explicit HashedEmbedder(std::size_t dim = kDefaultDim);

    EmbeddingVector embed_context(std::string_view text) const override {
        return hashed_embed(text, dim_, EncoderRole::Context);
    }
    EmbeddingVector embed_memory(std::string_view text) const override {
        return hashed_embed(text, dim_, EncoderRole::Memory);
    }
    std::size_t dim() const noexcept override { return dim_; }

private:
    std::size_t dim_;
};

struct RetrievalResult {
    MemoryId primary = 0;
    double score = 0.0;
    /// Linked memories, ascending, excluding primary.
    std::vector<MemoryId> expansion;

    bool operator==(const RetrievalResult&) const = default;
};

struct RetrievalOptions {
    /// Memories whose source_session equals this are not candidates.
    /// 0 disables the filter.
    int exclude_session = 0;
    /// Expand to the whole connected component instead of direct neighbors.
    bool transitive_expansion = false;
};

/// Top-1 memory by cosine similarity (ties go to the smallest id) plus its
/// linked neighbors. Empty when there is no candidate. Embedder failures
/// surface as Error{EmbeddingError}.
std::optional<RetrievalResult> retrieve(std::string_view context, const MemoryStore& store,
                                        const LinkGraph& graph, const Embedder& embedder,
                                        const RetrievalOptions& options = {});

}  // namespace egomem
