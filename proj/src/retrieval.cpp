#include "egomem/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <exception>

#include "egomem/error.hpp"

namespace egomem {

EmbeddingVector::EmbeddingVector(std::vector<double> values) : values_(std::move(values)) {
    for (const auto v : values_) {
        if (!std::isfinite(v)) throw Error(ErrorCode::EmbeddingError, "embedding has a non-finite value");
    }
}

double EmbeddingVector::norm() const noexcept {
    double sum = 0.0;
    for (const auto v : values_) sum += v * v;
    return std::sqrt(sum);
}

double cosine_similarity(const EmbeddingVector& a, const EmbeddingVector& b) {
    if (a.dim() != b.dim()) {
        throw Error(ErrorCode::DimMismatch, "cannot compare vectors of dim " + std::to_string(a.dim()) +
                                                " and " + std::to_string(b.dim()));
    }
    double dot = 0.0;
    double na = 0.0;
    double nb = 0.0;
    for (std::size_t i = 0; i < a.dim(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) return 0.0;
    const double sim = dot / (std::sqrt(na) * std::sqrt(nb));
    return std::clamp(sim, -1.0, 1.0);
}

std::uint64_t fnv1a64(std::span<const unsigned char> bytes) noexcept {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto b : bytes) {
        h ^= b;
        h *= 0x100000001b3ULL;
    }
    return h;
}

namespace {

bool is_ascii_alnum(unsigned char c) noexcept {
    return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z');
}

}  // namespace

EmbeddingVector hashed_embed(std::string_view text, std::size_t dim, EncoderRole role) {
    if (dim < 8) throw Error(ErrorCode::InvalidConfig, "hashed embedder dim must be >= 8");
    EmbeddingVector out(dim);
    std::vector<unsigned char> token;
    const unsigned char role_byte = role == EncoderRole::Context ? 'c' : 'm';

    auto flush = [&] {
        if (token.size() <= 1) {
            token.clear();
            return;
        }
        out[fnv1a64(token) % dim] += 1.0;
        token.clear();
    };

    token.push_back(role_byte);
    for (const char ch : text) {
        const auto c = static_cast<unsigned char>(ch);
        if (is_ascii_alnum(c)) {
            token.push_back(c >= 'A' && c <= 'Z' ? static_cast<unsigned char>(c - 'A' + 'a') : c);
        } else {
            flush();
            token.push_back(role_byte);
        }
    }
    flush();

    const double n = out.norm();
    if (n > 0.0) {
        for (std::size_t i = 0; i < dim; ++i) out[i] /= n;
    }
    return out;
}

HashedEmbedder::HashedEmbedder(std::size_t dim) : dim_(dim) {
    if (dim_ < 8) throw Error(ErrorCode::InvalidConfig, "hashed embedder dim must be >= 8");
}

std::optional<RetrievalResult> retrieve(std::string_view context, const MemoryStore& store,
                                        const LinkGraph& graph, const Embedder& embedder,
                                        const RetrievalOptions& options) {
    auto guarded = [](auto&& fn) {
        try {
            return fn();
        } catch (const Error& e) {
            if (e.code() == ErrorCode::EmbeddingError) throw;
            throw Error(ErrorCode::EmbeddingError, e.what());
        } catch (const std::exception& e) {
            throw Error(ErrorCode::EmbeddingError, e.what());
        }
    };

    std::optional<EmbeddingVector> query;
    std::optional<RetrievalResult> best;
    for (const auto& entry : store.entries()) {
        if (options.exclude_session != 0 && entry.source_session == options.exclude_session) continue;
        if (!query) query = guarded([&] { return embedder.embed_context(context); });
        const auto key = guarded([&] { return embedder.embed_memory(entry.text); });
        const double score = cosine_similarity(*query, key);
        // Strict '>' keeps the earliest id on ties since entries are id-ordered.
        if (!best || score > best->score) best = RetrievalResult{entry.id, score, {}};
    }
    if (!best) return std::nullopt;

    const auto linked = options.transitive_expansion ? graph.component(best->primary)
                                                     : graph.neighbors(best->primary);
    for (const auto id : linked) {
        if (id != best->primary) best->expansion.push_back(id);
    }
    return best;
}

}  // namespace egomem
