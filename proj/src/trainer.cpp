#include "egomem/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>

#include "egomem/error.hpp"
#include "egomem/rng.hpp"

namespace egomem {

LinearEncoderPair LinearEncoderPair::random(std::size_t in, std::size_t out, std::uint64_t seed,
                                            double init_scale) {
    LinearEncoderPair pair(in, out);
    Rng rng(seed);
    const double scale = init_scale / std::sqrt(static_cast<double>(in));
    for (auto& v : pair.context.data) v = rng.uniform(-scale, scale);
    for (auto& v : pair.memory.data) v = rng.uniform(-scale, scale);
    return pair;
}

EmbeddingVector LinearEncoderPair::project(const EmbeddingVector& x, EncoderRole role) const {
    if (x.dim() != dim_in) {
        throw Error(ErrorCode::DimMismatch, "encoder expects dim " + std::to_string(dim_in));
    }
    const Matrix& w = role == EncoderRole::Context ? context : memory;
    EmbeddingVector out(dim_out);
    for (std::size_t k = 0; k < dim_in; ++k) {
        const double xk = x[k];
        if (xk == 0.0) continue;
        for (std::size_t r = 0; r < dim_out; ++r) out[r] += w(r, k) * xk;
    }
    return out;
}

TripletFeatures featurize(const LinearEncoderPair& pair, const TripletExample& ex) {
    return {pair.features(ex.context, EncoderRole::Context), pair.features(ex.positive, EncoderRole::Memory),
            pair.features(ex.negative, EncoderRole::Memory)};
}

double triplet_loss(const LinearEncoderPair& pair, const TripletFeatures& ex, double margin) {
    const auto u = pair.project(ex.context, EncoderRole::Context);
    const auto vp = pair.project(ex.positive, EncoderRole::Memory);
    const auto vn = pair.project(ex.negative, EncoderRole::Memory);
    return std::max(0.0, margin + cosine_similarity(u, vn) - cosine_similarity(u, vp));
}

double triplet_loss(const LinearEncoderPair& pair, const TripletExample& ex, double margin) {
    return triplet_loss(pair, featurize(pair, ex), margin);
}

namespace {

struct CosineGrad {
    double value = 0.0;
    std::vector<double> d_first;   // d cos / d a
    std::vector<double> d_second;  // d cos / d b
};

CosineGrad cosine_with_grad(const EmbeddingVector& a, const EmbeddingVector& b) {
    const std::size_t n = a.dim();
    CosineGrad g{0.0, std::vector<double>(n, 0.0), std::vector<double>(n, 0.0)};
    double dot = 0.0;
    double naa = 0.0;
    double nbb = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        dot += a[i] * b[i];
        naa += a[i] * a[i];
        nbb += b[i] * b[i];
    }
    if (naa == 0.0 || nbb == 0.0) return g;
    const double na = std::sqrt(naa);
    const double nb = std::sqrt(nbb);
    g.value = dot / (na * nb);
    for (std::size_t i = 0; i < n; ++i) {
        g.d_first[i] = b[i] / (na * nb) - g.value * a[i] / naa;
        g.d_second[i] = a[i] / (na * nb) - g.value * b[i] / nbb;
    }
    return g;
}

void add_outer(Matrix& m, std::span<const double> left, const EmbeddingVector& right, double scale) {
    for (std::size_t k = 0; k < right.dim(); ++k) {
        const double xk = right[k] * scale;
        if (xk == 0.0) continue;
        for (std::size_t r = 0; r < m.rows; ++r) m(r, k) += left[r] * xk;
    }
}

}  // namespace

Gradients loss_gradient(const LinearEncoderPair& pair, const TripletFeatures& ex, double margin) {
    Gradients g{Matrix(pair.dim_out, pair.dim_in), Matrix(pair.dim_out, pair.dim_in)};
    const auto u = pair.project(ex.context, EncoderRole::Context);
    const auto vp = pair.project(ex.positive, EncoderRole::Memory);
    const auto vn = pair.project(ex.negative, EncoderRole::Memory);
    const auto pos = cosine_with_grad(u, vp);
    const auto neg = cosine_with_grad(u, vn);
    if (margin + neg.value - pos.value <= 0.0) return g;

    std::vector<double> du(pair.dim_out);
    for (std::size_t r = 0; r < pair.dim_out; ++r) du[r] = neg.d_first[r] - pos.d_first[r];
    add_outer(g.context, du, ex.context, 1.0);
    add_outer(g.memory, neg.d_second, ex.negative, 1.0);
    add_outer(g.memory, pos.d_second, ex.positive, -1.0);
    return g;
}

Gradients loss_gradient(const LinearEncoderPair& pair, const TripletExample& ex, double margin) {
    return loss_gradient(pair, featurize(pair, ex), margin);
}

Gradients batch_gradient(const LinearEncoderPair& pair, std::span<const TripletFeatures> batch,
                         double margin) {
    Gradients total{Matrix(pair.dim_out, pair.dim_in), Matrix(pair.dim_out, pair.dim_in)};
    if (batch.empty()) return total;
    for (const auto& ex : batch) {
        const auto g = loss_gradient(pair, ex, margin);
        for (std::size_t i = 0; i < total.context.data.size(); ++i) total.context.data[i] += g.context.data[i];
        for (std::size_t i = 0; i < total.memory.data.size(); ++i) total.memory.data[i] += g.memory.data[i];
    }
    const double inv = 1.0 / static_cast<double>(batch.size());
    for (auto& v : total.context.data) v *= inv;
    for (auto& v : total.memory.data) v *= inv;
    return total;
}

double mean_loss(const LinearEncoderPair& pair, std::span<const TripletFeatures> data, double margin) {
    if (data.empty()) return 0.0;
    double sum = 0.0;
    for (const auto& ex : data) sum += triplet_loss(pair, ex, margin);
    return sum / static_cast<double>(data.size());
}

namespace {

struct AdamState {
    std::vector<double> m;
    std::vector<double> v;

    explicit AdamState(std::size_t n) : m(n, 0.0), v(n, 0.0) {}

    void step(std::vector<double>& w, const std::vector<double>& g, const TrainConfig& c, std::size_t t) {
        const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(t));
        const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(t));
        for (std::size_t i = 0; i < w.size(); ++i) {
            m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
            v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            w[i] -= c.learning_rate * mhat / (std::sqrt(vhat) + c.epsilon);
        }
    }
};

void check_config(const TrainConfig& c) {
    if (!(c.margin >= 0.0)) throw Error(ErrorCode::InvalidConfig, "margin must be >= 0");
    if (!(c.learning_rate >= 0.0)) throw Error(ErrorCode::InvalidConfig, "learning rate must be >= 0");
    if (c.batch_size == 0) throw Error(ErrorCode::InvalidConfig, "batch size must be > 0");
}

}  // namespace

TrainResult train_from(LinearEncoderPair initial, std::span<const TripletExample> dataset,
                       const TrainConfig& config) {
    check_config(config);
    if (dataset.empty()) throw Error(ErrorCode::EmptyDataset, "no training triplets");

    std::vector<TripletFeatures> data;
    data.reserve(dataset.size());
    for (const auto& ex : dataset) data.push_back(featurize(initial, ex));

    TrainResult result{initial, {}};
    LinearEncoderPair& best = result.pair;
    LinearEncoderPair current = std::move(initial);
    auto& report = result.report;
    report.initial_loss = mean_loss(current, data, config.margin);
    double best_loss = report.initial_loss;

    AdamState adam_c(current.context.data.size());
    AdamState adam_m(current.memory.data.size());
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
    std::size_t step = 0;
    std::vector<TripletFeatures> batch;

    for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
        if (best_loss <= config.target_loss) break;
        rng.shuffle(std::span<std::size_t>(order));
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const auto stop = std::min(order.size(), start + config.batch_size);
            batch.clear();
            for (std::size_t i = start; i < stop; ++i) batch.push_back(data[order[i]]);
            const auto g = batch_gradient(current, batch, config.margin);
            ++step;
            adam_c.step(current.context.data, g.context.data, config, step);
            adam_m.step(current.memory.data, g.memory.data, config, step);
        }
        const double loss = mean_loss(current, data, config.margin);
        report.epoch_losses.push_back(loss);
        report.epochs_run = epoch;
        if (loss < best_loss) {
            best_loss = loss;
            best = current;
            report.best_epoch = epoch;
        }
    }
    report.final_loss = best_loss;
    return result;
}

TrainResult train(std::span<const TripletExample> dataset, const TrainConfig& config) {
    check_config(config);
    if (dataset.empty()) throw Error(ErrorCode::EmptyDataset, "no training triplets");
    return train_from(LinearEncoderPair::random(config.dim_in, config.dim_out, config.seed, config.init_scale),
                      dataset, config);
}

std::vector<TripletExample> mine_triplets(std::span<const EpisodeRecord> episodes, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<TripletExample> out;
    bool any_tag = false;
    for (const auto& ep : episodes) {
        const auto* main = ep.scenario.main_speaker();
        if (main == nullptr) continue;
        std::map<MemoryId, const MemoryEntry*> by_id;
        for (const auto& m : ep.memories) by_id.emplace(m.id, &m);

        for (const auto& session : ep.sessions) {
            std::string context;
            for (const auto& turn : session.turns) {
                if (turn.speaker == main->id && !turn.tags.empty()) {
                    any_tag = true;
                    std::vector<const MemoryEntry*> negatives;
                    for (const auto& m : ep.memories) {
                        if (!turn.tags.contains(m.id)) negatives.push_back(&m);
                    }
                    for (const auto tag : turn.tags) {
                        auto pos = by_id.find(tag);
                        if (pos == by_id.end() || negatives.empty()) continue;
                        const auto* neg = negatives[rng.below(negatives.size())];
                        out.push_back({context, pos->second->text, neg->text});
                    }
                }
                const auto* who = ep.scenario.find(turn.speaker);
                if (!context.empty()) context += '\n';
                context += who != nullptr ? who->name : turn.speaker.value;
                context += ": ";
                context += turn.text;
            }
        }
    }
    if (!any_tag) throw Error(ErrorCode::NoTaggedUtterances, "no tagged main-speaker utterances");
    return out;
}

void save_encoder(std::ostream& out, const LinearEncoderPair& pair) {
    out << "egomem-encoder v1 " << pair.dim_in << ' ' << pair.dim_out << '\n';
    char buf[40];
    for (const Matrix* m : {&pair.context, &pair.memory}) {
        for (std::size_t r = 0; r < m->rows; ++r) {
            for (std::size_t c = 0; c < m->cols; ++c) {
                std::snprintf(buf, sizeof buf, "%.17g", (*m)(r, c));
                if (c > 0) out << ' ';
                out << buf;
            }
            out << '\n';
        }
    }
}

void save_encoder(const std::filesystem::path& path, const LinearEncoderPair& pair) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
    save_encoder(out, pair);
}

LinearEncoderPair load_encoder(std::istream& in) {
    std::string header;
    if (!std::getline(in, header)) throw Error(ErrorCode::EncoderFormatError, "missing encoder header");
    std::istringstream hs(header);
    std::string magic;
    std::string version;
    std::size_t dim_in = 0;
    std::size_t dim_out = 0;
    std::string extra;
    if (!(hs >> magic >> version >> dim_in >> dim_out) || magic != "egomem-encoder" || version != "v1" ||
        (hs >> extra)) {
        throw Error(ErrorCode::EncoderFormatError, "bad encoder header: " + header);
    }
    if (dim_in < 8 || dim_out == 0) throw Error(ErrorCode::EncoderFormatError, "bad encoder dims");
    LinearEncoderPair pair(dim_in, dim_out);
    for (Matrix* m : {&pair.context, &pair.memory}) {
        for (auto& v : m->data) {
            std::string tok;
            if (!(in >> tok)) throw Error(ErrorCode::EncoderFormatError, "encoder file is truncated");
            char* end = nullptr;
            v = std::strtod(tok.c_str(), &end);
            if (end == tok.c_str() || *end != '\0' || !std::isfinite(v)) {
                throw Error(ErrorCode::EncoderFormatError, "bad encoder value '" + tok + "'");
            }
        }
    }
    std::string trailing;
    if (in >> trailing) throw Error(ErrorCode::EncoderFormatError, "trailing data after encoder weights");
    return pair;
}

LinearEncoderPair load_encoder(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
    return load_encoder(in);
}

}  // namespace egomem
