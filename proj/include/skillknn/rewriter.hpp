#pragma once

#include "skillknn/backend.hpp"
#include "skillknn/bank.hpp"
#include "skillknn/prompt_template.hpp"

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace skillknn {

/// A hand-written question -> skill description pair used as a rewriting
/// demonstration.
struct AnnotatedDemonstration {
    std::string question;
    std::string schema;
    std::string skill;

    bool operator==(const AnnotatedDemonstration&) const = default;
};

struct DemonstrationSet {
    std::vector<AnnotatedDemonstration> demos;
    std::string task_tag;

    std::size_t size() const noexcept { return demos.size(); }
};

/// Same line-delimited layout as banks, with `question` and `skill` required
/// and `schema` optional. An empty file is rejected.
DemonstrationSet load_demonstrations(const std::filesystem::path& path, std::string task_tag);
DemonstrationSet parse_demonstrations(std::string_view contents, std::string task_tag,
                                      std::string_view source = "<memory>");

using Permutation = std::vector<std::size_t>;

bool is_permutation_of_range(const Permutation& permutation, std::size_t n);
Permutation identity_permutation(std::size_t n);

struct SkillCandidate {
    std::string skill;
    Permutation permutation;
    std::string model_id;
    std::string timestamp;

    bool operator==(const SkillCandidate&) const = default;
};

/// Distinct skill strings generated for one input. The first candidate comes
/// from the identity permutation whenever that generation was non-empty.
struct SkillCandidateSet {
    std::string input_id;
    std::vector<SkillCandidate> candidates;

    bool operator==(const SkillCandidateSet&) const = default;

    std::optional<std::string> identity_skill() const;
    std::vector<std::string> skills() const;
};

/// Demonstrations in permutation order, then the input with an empty skill
/// slot. Throws Error(Input) if `permutation` is not a permutation of
/// 0..demos.size()-1.
std::string build_rewrite_prompt(const DemonstrationSet& demos, const Permutation& permutation,
                                 std::string_view question, std::string_view schema,
                                 const PromptTemplate& tmpl);

struct GenerationRecord {
    std::string completion;
    std::string model_id;
    std::string timestamp;
};

/// Append-only completion cache keyed by hash of (prompt, model, temperature).
/// Same file discipline as EmbeddingCache.
class GenerationCache {
public:
    GenerationCache() = default;
    explicit GenerationCache(std::filesystem::path dir);

    static std::string key_for(std::string_view prompt, std::string_view model_id,
                               double temperature);

    std::optional<GenerationRecord> lookup(const std::string& key) const;
    void store(const std::string& key, const GenerationRecord& record);
    std::size_t size() const;

private:
    std::filesystem::path file_;
    mutable std::mutex mutex_;
    std::unordered_map<std::string, GenerationRecord> entries_;
};

/// UTC ISO-8601 wall clock; injectable for reproducible metadata.
using Clock = std::function<std::string()>;
std::string utc_timestamp();

class SkillRewriter {
public:
    SkillRewriter(DemonstrationSet demos, std::shared_ptr<CompletionBackend> backend,
                  PromptTemplate tmpl, std::shared_ptr<GenerationCache> cache = nullptr,
                  Clock clock = utc_timestamp);

    /// One skill for one permutation. Throws Error(EmptySkill) when the
    /// trimmed completion is empty.
    std::string generate_skill(std::string_view question, std::string_view schema,
                               const Permutation& permutation, const DecodingParams& decoding);

    /// Up to `m` distinct skills from the identity order plus m-1 seeded
    /// shuffles. The shuffle stream is derived from (seed, input_id), so the
    /// result does not depend on which other inputs are processed.
    SkillCandidateSet generate_candidate_set(const std::string& input_id, std::string_view question,
                                             std::string_view schema, std::size_t m,
                                             std::uint64_t seed, const DecodingParams& decoding);

    SkillCandidateSet generate_candidate_set(const Example& example, std::size_t m,
                                             std::uint64_t seed, const DecodingParams& decoding);
    SkillCandidateSet generate_candidate_set(const QueryInput& query, std::size_t m,
                                             std::uint64_t seed, const DecodingParams& decoding);

    /// Candidate sets for many inputs, up to `max_in_flight` concurrently.
    /// Output order matches input order.
    std::vector<SkillCandidateSet> generate_all(const std::vector<QueryInput>& inputs, std::size_t m,
                                                std::uint64_t seed, const DecodingParams& decoding,
                                                std::size_t max_in_flight = 1);

    /// Permutations used for an input: identity first, then distinct
    /// shuffles while any remain.
    std::vector<Permutation> draw_permutations(const std::string& input_id, std::size_t m,
                                               std::uint64_t seed) const;

    const DemonstrationSet& demonstrations() const noexcept { return demos_; }
    std::size_t backend_calls() const noexcept { return backend_calls_.load(); }

private:
    GenerationRecord complete_cached(const std::string& prompt, const DecodingParams& decoding);

    DemonstrationSet demos_;
    std::shared_ptr<CompletionBackend> backend_;
    PromptTemplate template_;
    std::shared_ptr<GenerationCache> cache_;
    Clock clock_;
    std::atomic<std::size_t> backend_calls_{0};
};

std::string serialize_skill_sets(const std::vector<SkillCandidateSet>& sets);
std::vector<SkillCandidateSet> parse_skill_sets(std::string_view contents,
                                                std::string_view source = "<memory>");
void save_skill_sets(const std::vector<SkillCandidateSet>& sets, const std::filesystem::path& path);
std::vector<SkillCandidateSet> load_skill_sets(const std::filesystem::path& path);

}  // namespace skillknn
