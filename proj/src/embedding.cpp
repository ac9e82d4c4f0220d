#include "skillknn/embedding.hpp"

#include "skillknn/error.hpp"
#include "skillknn/jsonl.hpp"
#include "skillknn/util.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>

namespace skillknn {

void EmbedderConfig::validate() const {
    if (dim == 0) throw Error(ErrorKind::Config, "embedder dim must be positive");
    if (model_id.empty()) throw Error(ErrorKind::Config, "embedder model_id is empty");
    if (kind == EmbedderKind::Remote && endpoint_url.empty()) {
        throw Error(ErrorKind::Config, "remote embedder requires endpoint_url");
    }
    if (kind == EmbedderKind::LocalDeterministic && dim < 8) {
        throw Error(ErrorKind::Config, "local embedder dim must be at least 8");
    }
    if (batch_size == 0) throw Error(ErrorKind::Config, "embedder batch_size must be positive");
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) {
        throw Error(ErrorKind::Shape, "dimension mismatch: " + std::to_string(a.size()) + " vs " +
                                          std::to_string(b.size()));
    }
    double dot = 0.0;
    double norm_a = 0.0;
    double norm_b = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        norm_a += a[i] * a[i];
        norm_b += b[i] * b[i];
    }
    if (norm_a == 0.0 || norm_b == 0.0) {
        throw Error(ErrorKind::DegenerateEmbedding, "cosine of a zero-norm vector");
    }
    // sqrt of the rounded square gives back the norm exactly, so a vector
    // against itself scores exactly 1. Fall back when the product leaves the
    // normal range.
    const double product = norm_a * norm_b;
    double value = std::isnormal(product) ? dot / std::sqrt(product)
                                          : dot / (std::sqrt(norm_a) * std::sqrt(norm_b));
    return std::clamp(value, -1.0, 1.0);
}

double cosine_similarity(const EmbeddingVector& a, const EmbeddingVector& b) {
    return cosine_similarity(std::span<const double>(a.values), std::span<const double>(b.values));
}

namespace {

constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;
constexpr std::uint64_t kBucketSeed = 0x9e3779b97f4a7c15ULL;

std::uint64_t seeded_fnv1a(std::string_view token) {
    std::uint64_t h = kFnvOffset ^ kBucketSeed;
    for (unsigned char c : token) {
        h ^= c;
        h *= kFnvPrime;
    }
    // Final avalanche so short tokens spread across buckets.
    h ^= h >> 33;
    h *= 0xff51afd7ed558ccdULL;
    h ^= h >> 33;
    return h;
}

// Bytes >= 0x80 count as word characters so UTF-8 words stay whole.
bool is_token_char(unsigned char c) { return c >= 0x80 || std::isalnum(c) != 0; }

}  // namespace

EmbeddingVector local_deterministic_embed(std::string_view text, std::size_t dim,
                                          std::string model_id) {
    if (dim < 8) throw Error(ErrorKind::Input, "local embedder dim must be at least 8");
    if (trim(text).empty()) throw Error(ErrorKind::Input, "cannot embed empty text");

    EmbeddingVector out{std::vector<double>(dim, 0.0), std::move(model_id)};
    std::string token;
    auto flush = [&] {
        if (token.empty()) return;
        out.values[seeded_fnv1a(token) % dim] += 1.0;
        token.clear();
    };
    for (unsigned char c : text) {
        if (is_token_char(c)) {
            token.push_back(static_cast<char>(std::tolower(c)));
        } else {
            flush();
        }
    }
    flush();
    return out;
}

EmbeddingCache::EmbeddingCache(std::filesystem::path dir) : file_(dir / "embeddings.jsonl") {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw Error(ErrorKind::Io, "cannot create cache directory " + dir.string());
    if (!std::filesystem::exists(file_)) return;

    std::string raw = read_file(file_);
    auto contents = jsonl::complete_lines(raw);
    if (contents.size() != raw.size()) write_file_atomic(file_, contents);
    jsonl::for_each_record(contents, file_.string(), [&](const nlohmann::json& rec, std::size_t) {
        EmbeddingVector v{rec.at("values").get<std::vector<double>>(),
                          rec.at("model_id").get<std::string>()};
        entries_.insert_or_assign(rec.at("key").get<std::string>(), std::move(v));
    });
}

std::string EmbeddingCache::key_for(std::string_view model_id, std::string_view normalized_text) {
    return content_key({"embedding", model_id, normalized_text});
}

std::optional<EmbeddingVector> EmbeddingCache::lookup(const std::string& key) const {
    std::lock_guard lock(mutex_);
    auto it = entries_.find(key);
    if (it == entries_.end()) return std::nullopt;
    return it->second;
}

void EmbeddingCache::store(const std::string& key, const EmbeddingVector& vector) {
    std::lock_guard lock(mutex_);
    if (!entries_.emplace(key, vector).second) return;
    if (file_.empty()) return;
    nlohmann::json rec;
    rec["key"] = key;
    rec["model_id"] = vector.model_id;
    rec["values"] = vector.values;
    std::ofstream out(file_, std::ios::binary | std::ios::app);
    out << jsonl::dump_line(rec);
    if (!out) throw Error(ErrorKind::Io, "cannot append to " + file_.string());
}

std::size_t EmbeddingCache::size() const {
    std::lock_guard lock(mutex_);
    return entries_.size();
}

EmbeddingTransport make_http_embedding_transport(const EmbedderConfig& config) {
    HttpOptions options;
    options.timeout = config.timeout;
    options.max_retries = config.max_retries;
    options.bearer_token_env = config.api_key_env;
    auto client = std::make_shared<HttpJsonClient>(config.endpoint_url, options);
    std::string model = config.model_id;

    return [client, model](const std::vector<std::string>& texts) {
        nlohmann::json request;
        request["model"] = model;
        request["input"] = texts;
        nlohmann::json response = client->post(request);

        std::vector<std::vector<double>> vectors;
        try {
            if (response.contains("data")) {
                vectors.resize(response.at("data").size());
                std::size_t position = 0;
                for (const auto& item : response.at("data")) {
                    std::size_t index = item.value("index", position);
                    if (index >= vectors.size()) {
                        throw Error(ErrorKind::Transport, "embedding index out of range");
                    }
                    vectors[index] = item.at("embedding").get<std::vector<double>>();
                    ++position;
                }
            } else {
                vectors = response.at("embeddings").get<std::vector<std::vector<double>>>();
            }
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorKind::Transport,
                        client->url() + ": malformed embedding response: " + e.what());
        }
        if (vectors.size() != texts.size()) {
            throw Error(ErrorKind::Transport, client->url() + ": expected " +
                                                  std::to_string(texts.size()) + " embeddings, got " +
                                                  std::to_string(vectors.size()));
        }
        return vectors;
    };
}

Embedder::Embedder(EmbedderConfig config, std::shared_ptr<EmbeddingCache> cache,
                   EmbeddingTransport transport)
    : config_(std::move(config)), cache_(std::move(cache)), transport_(std::move(transport)) {
    config_.validate();
    if (!cache_) cache_ = std::make_shared<EmbeddingCache>();
    if (config_.kind == EmbedderKind::Remote && !transport_) {
        transport_ = make_http_embedding_transport(config_);
    }
}

EmbeddingVector Embedder::checked(std::vector<double> values, std::string_view text) const {
    if (values.size() != config_.dim) {
        throw Error(ErrorKind::Shape, "embedder returned " + std::to_string(values.size()) +
                                          " values, expected " + std::to_string(config_.dim));
    }
    bool all_zero = std::all_of(values.begin(), values.end(), [](double v) { return v == 0.0; });
    if (all_zero) {
        throw Error(ErrorKind::DegenerateEmbedding,
                    "all-zero embedding for text '" + std::string(text.substr(0, 80)) + "'");
    }
    for (double v : values) {
        if (!std::isfinite(v)) {
            throw Error(ErrorKind::DegenerateEmbedding, "non-finite embedding value");
        }
    }
    return EmbeddingVector{std::move(values), config_.model_id};
}

EmbeddingVector Embedder::embed(std::string_view text) {
    return embed_batch({std::string(text)}).front();
}

std::vector<EmbeddingVector> Embedder::embed_batch(const std::vector<std::string>& texts) {
    std::vector<std::string> normalized(texts.size());
    std::vector<std::string> keys(texts.size());
    for (std::size_t i = 0; i < texts.size(); ++i) {
        normalized[i] = normalize_whitespace(texts[i]);
        if (normalized[i].empty()) {
            throw Error(ErrorKind::Input,
                        "batch element " + std::to_string(i) + ": cannot embed empty text");
        }
        keys[i] = EmbeddingCache::key_for(config_.model_id, normalized[i]);
    }

    std::vector<std::optional<EmbeddingVector>> results(texts.size());
    // Distinct uncached texts, in first-occurrence order.
    std::map<std::string, std::size_t> pending_index;
    std::vector<std::size_t> pending;
    for (std::size_t i = 0; i < texts.size(); ++i) {
        if (auto hit = cache_->lookup(keys[i])) {
            results[i] = std::move(*hit);
        } else if (pending_index.emplace(keys[i], i).second) {
            pending.push_back(i);
        }
    }

    if (config_.kind == EmbedderKind::LocalDeterministic) {
        for (std::size_t i : pending) {
            try {
                auto v = local_deterministic_embed(normalized[i], config_.dim, config_.model_id);
                cache_->store(keys[i], checked(std::move(v.values), normalized[i]));
            } catch (const Error& e) {
                throw e.with_context("batch element " + std::to_string(i));
            }
        }
    } else if (!pending.empty()) {
        std::vector<std::vector<std::size_t>> chunks;
        for (std::size_t start = 0; start < pending.size(); start += config_.batch_size) {
            auto end = std::min(pending.size(), start + config_.batch_size);
            chunks.emplace_back(pending.begin() + static_cast<std::ptrdiff_t>(start),
                                pending.begin() + static_cast<std::ptrdiff_t>(end));
        }
        std::atomic<std::size_t> calls{0};
        parallel_for(chunks.size(), config_.max_in_flight, [&](std::size_t c) {
            const auto& chunk = chunks[c];
            std::vector<std::string> request;
            request.reserve(chunk.size());
            for (std::size_t i : chunk) request.push_back(normalized[i]);
            ++calls;
            std::vector<std::vector<double>> vectors;
            try {
                vectors = transport_(request);
            } catch (const Error& e) {
                throw e.with_context("batch element " + std::to_string(chunk.front()));
            }
            if (vectors.size() != chunk.size()) {
                throw Error(ErrorKind::Transport,
                            "batch element " + std::to_string(chunk.front()) +
                                ": transport returned wrong vector count");
            }
            for (std::size_t j = 0; j < chunk.size(); ++j) {
                try {
                    cache_->store(keys[chunk[j]], checked(std::move(vectors[j]), request[j]));
                } catch (const Error& e) {
                    throw e.with_context("batch element " + std::to_string(chunk[j]));
                }
            }
        });
        remote_calls_ += calls.load();
    }

    std::vector<EmbeddingVector> out;
    out.reserve(texts.size());
    for (std::size_t i = 0; i < texts.size(); ++i) {
        if (results[i]) {
            out.push_back(std::move(*results[i]));
        } else {
            out.push_back(*cache_->lookup(keys[i]));
        }
    }
    return out;
}

EmbeddingVector embed_text(std::string_view text, const EmbedderConfig& config) {
    Embedder embedder(config);
    return embedder.embed(text);
}

std::vector<EmbeddingVector> embed_batch(const std::vector<std::string>& texts,
                                         const EmbedderConfig& config) {
    Embedder embedder(config);
    return embedder.embed_batch(texts);
}

}  // namespace skillknn
