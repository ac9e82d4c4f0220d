#pragma once

#include "skillknn/http.hpp"

#include <chrono>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace skillknn {

struct EmbeddingVector {
    std::vector<double> values;
    std::string model_id;

    std::size_t dim() const noexcept { return values.size(); }
    bool operator==(const EmbeddingVector&) const = default;
};

enum class EmbedderKind { Remote, LocalDeterministic };

struct EmbedderConfig {
    EmbedderKind kind = EmbedderKind::LocalDeterministic;
    std::string endpoint_url;
    std::string model_id = "local-hash-v1";
    std::size_t dim = 256;
    std::chrono::milliseconds timeout{60000};
    int max_retries = 3;
    std::string api_key_env;
    /// Texts per remote request.
    std::size_t batch_size = 64;
    /// Concurrent remote requests within one embed_batch call.
    std::size_t max_in_flight = 4;

    /// Throws Error(Config) when the invariants do not hold.
    void validate() const;
};

/// Cosine in double precision. Throws Error(Shape) on dimension mismatch and
/// Error(DegenerateEmbedding) when either operand has zero norm.
double cosine_similarity(std::span<const double> a, std::span<const double> b);
double cosine_similarity(const EmbeddingVector& a, const EmbeddingVector& b);

/// Offline stand-in for a sentence embedder: lowercased alphanumeric tokens,
/// each adding its occurrence count to one seeded-hash bucket. Depends only on
/// the token multiset and `dim`.
EmbeddingVector local_deterministic_embed(std::string_view text, std::size_t dim,
                                          std::string model_id = "local-hash-v1");

/// Append-only on-disk map from content key to vector. Keys hash the model id
/// and the normalized text. All writes go through one mutex-guarded appender.
class EmbeddingCache {
public:
    /// In-memory only.
    EmbeddingCache() = default;
    /// Loads `dir/embeddings.jsonl` if present and appends new entries to it.
    explicit EmbeddingCache(std::filesystem::path dir);

    static std::string key_for(std::string_view model_id, std::string_view normalized_text);

    std::optional<EmbeddingVector> lookup(const std::string& key) const;
    void store(const std::string& key, const EmbeddingVector& vector);
    std::size_t size() const;

private:
    std::filesystem::path file_;
    mutable std::mutex mutex_;
    std::unordered_map<std::string, EmbeddingVector> entries_;
};

/// Sends a batch of normalized texts and returns one raw vector per text.
using EmbeddingTransport =
    std::function<std::vector<std::vector<double>>(const std::vector<std::string>& texts)>;

/// HTTP transport: POST {"model", "input": [texts]}; accepts either an
/// OpenAI-style {"data": [{"embedding": [...], "index": i}]} or a bare
/// {"embeddings": [[...], ...]} response.
EmbeddingTransport make_http_embedding_transport(const EmbedderConfig& config);

class Embedder {
public:
    /// Remote configs get an HTTP transport; pass `transport` to override it.
    explicit Embedder(EmbedderConfig config, std::shared_ptr<EmbeddingCache> cache = nullptr,
                      EmbeddingTransport transport = nullptr);

    EmbeddingVector embed(std::string_view text);

    /// Element i equals embed(texts[i]). A failing element aborts the batch
    /// with an error naming its index.
    std::vector<EmbeddingVector> embed_batch(const std::vector<std::string>& texts);

    const EmbedderConfig& config() const noexcept { return config_; }
    std::size_t remote_calls() const noexcept { return remote_calls_; }

private:
    EmbeddingVector checked(std::vector<double> values, std::string_view text) const;

    EmbedderConfig config_;
    std::shared_ptr<EmbeddingCache> cache_;
    EmbeddingTransport transport_;
    std::size_t remote_calls_ = 0;
};

/// One-shot helpers over a fresh in-memory cache.
EmbeddingVector embed_text(std::string_view text, const EmbedderConfig& config);
std::vector<EmbeddingVector> embed_batch(const std::vector<std::string>& texts,
                                         const EmbedderConfig& config);

}  // namespace skillknn
