#pragma once

#include "skillknn/bank.hpp"
#include "skillknn/embedding.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace skillknn {

enum class Strategy {
    Random,
    KnnRaw,
    SkillBase,
    SkillConsistency,
    SkillDistinctiveness,
    OracleTargetKnn,
    OracleSketch,
};

std::string_view to_string(Strategy strategy);
/// Accepts the snake_case names used on the command line; Error(Config)
/// otherwise.
Strategy parse_strategy(std::string_view name);
bool uses_skills(Strategy strategy);

struct SelectionConfig {
    std::size_t k = 4;
    Strategy strategy = Strategy::SkillDistinctiveness;
    std::uint64_t seed = 0;
    std::size_t trials = 3;

    /// Error(Config) unless 1 <= k <= bank_size and trials >= 1.
    void validate(std::size_t bank_size) const;
};

struct ScoredExample {
    std::string example_id;
    double score = 0.0;

    bool operator==(const ScoredExample&) const = default;
};

/// `ranked` is best-first; `prompt_order` is its reverse, so the most similar
/// example sits next to the query in the prompt.
struct SelectionResult {
    std::string query_id;
    Strategy strategy = Strategy::KnnRaw;
    std::size_t trial = 0;
    std::vector<ScoredExample> ranked;
    std::vector<std::string> prompt_order;

    bool operator==(const SelectionResult&) const = default;
};

/// Top-k of `scores` (aligned with `ids`, in bank order): descending score,
/// ties to the lower bank index. Throws Error(Config) if k > ids.size() and
/// Error(Data) on a non-finite score.
SelectionResult rank_top_k(std::string query_id, Strategy strategy, std::span<const double> scores,
                           const std::vector<std::string>& ids, std::size_t k);

/// Bank-ordered vectors, one per example id.
struct IndexedVectors {
    std::vector<std::string> ids;
    std::vector<EmbeddingVector> vectors;
};

/// One result per trial, each k distinct examples drawn uniformly. The draw
/// stream depends on (seed, query_id) only. Every score is 0, so `ranked`
/// falls back to bank order.
std::vector<SelectionResult> select_random(const ExampleBank& bank, const SelectionConfig& config,
                                           const std::string& query_id = {});

/// Exact cosine scan over the bank.
SelectionResult select_knn(const std::string& query_id, const EmbeddingVector& query,
                           const IndexedVectors& bank, std::size_t k,
                           Strategy strategy = Strategy::KnnRaw);

/// Cosine between the arithmetic means of the two candidate sets. Each
/// coordinate is summed in sorted order, making the result independent of
/// candidate order. Error(DegenerateMean) if either mean is the zero vector.
double sim_consistency(std::span<const EmbeddingVector> query_set,
                       std::span<const EmbeddingVector> example_set);

/// Maximum cosine over all cross pairs.
double sim_distinctiveness(std::span<const EmbeddingVector> query_set,
                           std::span<const EmbeddingVector> example_set);

enum class SkillVariant { Base, Consistency, Distinctiveness };

Strategy strategy_of(SkillVariant variant);

/// Embedded candidate set. For the base variant the first vector must be the
/// identity-permutation skill.
struct CandidateEmbeddings {
    std::string id;
    std::vector<EmbeddingVector> candidates;
};

SelectionResult select_skill_knn(const CandidateEmbeddings& query,
                                 std::span<const CandidateEmbeddings> bank, SkillVariant variant,
                                 std::size_t k);

/// Keyword and operator vocabulary used for target sketches.
const std::vector<std::string>& sketch_vocabulary();

/// Vocabulary items present in `sql`. Words match case-insensitively on
/// identifier boundaries; operator symbols match per character, so ">="
/// yields both ">" and "=".
std::set<std::string> sketch_keywords(std::string_view sql);

/// Size of the keyword-set intersection.
std::size_t sketch_similarity(std::string_view a, std::string_view b);

enum class OracleMode { TargetKnn, Sketch };

/// Ranks by keyword overlap between the query's gold target and each bank
/// target.
SelectionResult select_oracle_sketch(const ExampleBank& bank, const std::string& query_id,
                                     std::string_view query_target, std::size_t k);

/// Ranks by cosine between target embeddings. `target_vectors` must cover
/// the query id and every bank id; a missing one raises Error(Data).
SelectionResult select_oracle_target_knn(
    const ExampleBank& bank, const std::string& query_id,
    const std::unordered_map<std::string, EmbeddingVector>& target_vectors, std::size_t k);

/// Dispatches on `mode`; TargetKnn requires `target_vectors`.
SelectionResult select_oracle(
    const ExampleBank& bank, const std::string& query_id, std::string_view query_target,
    OracleMode mode, std::size_t k,
    const std::unordered_map<std::string, EmbeddingVector>* target_vectors = nullptr);

std::string serialize_selections(const std::vector<SelectionResult>& results);
std::vector<SelectionResult> parse_selections(std::string_view contents,
                                              std::string_view source = "<memory>");
void save_selections(const std::vector<SelectionResult>& results, const std::filesystem::path& path);
std::vector<SelectionResult> load_selections(const std::filesystem::path& path);

}  // namespace skillknn
