#pragma once

#include "skillknn/backend.hpp"
#include "skillknn/bank.hpp"
#include "skillknn/embedding.hpp"
#include "skillknn/evaluation.hpp"
#include "skillknn/prompt_template.hpp"
#include "skillknn/prompting.hpp"
#include "skillknn/rewriter.hpp"
#include "skillknn/selector.hpp"

#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace skillknn {

/// Everything one experiment needs. Loaded from a single JSON file whose
/// relative paths resolve against the file's directory.
struct RunConfig {
    std::string task_tag = "text-to-sql";
    std::filesystem::path bank_path;
    std::filesystem::path queries_path;
    std::filesystem::path demos_path;
    std::filesystem::path cache_dir;
    std::filesystem::path out_dir;
    std::filesystem::path answer_template_path;
    std::filesystem::path skill_template_path;
    std::filesystem::path table_counts_path;

    EmbedderConfig embedder;
    BackboneEndpoint rewriter;
    BackboneEndpoint backbone;
    SelectionConfig selection;
    DecodingParams decoding;
    /// Skill candidates per input (m).
    std::size_t candidates = 5;
    std::uint64_t seed = 0;
    std::size_t max_in_flight = 4;

    /// Error(Config) naming the first missing path or bad field.
    void validate() const;
};

/// Parses the JSON layout documented in the README. Environment variables
/// SKILLKNN_EMBEDDER_URL, SKILLKNN_REWRITER_URL and SKILLKNN_BACKBONE_URL
/// override the corresponding endpoint urls.
RunConfig parse_run_config(const nlohmann::json& doc, const std::filesystem::path& base_dir);
RunConfig load_run_config(const std::filesystem::path& path);

EmbedderConfig parse_embedder_config(const nlohmann::json& doc);
BackboneEndpoint parse_endpoint(const nlohmann::json& doc, const std::filesystem::path& base_dir);

PromptTemplate answer_template(const RunConfig& config);
PromptTemplate skill_template(const RunConfig& config);

/// Per-db table counts: the optional JSON object file if configured,
/// otherwise derived from the bank's schemas.
std::unordered_map<std::string, std::size_t> load_table_counts(const RunConfig& config,
                                                               const ExampleBank& bank);

/// Candidate embeddings for the skill variants. Base keeps only the
/// identity-permutation skill; a set without one raises Error(Data).
std::vector<CandidateEmbeddings> embed_candidate_sets(const std::vector<SkillCandidateSet>& sets,
                                                      Embedder& embedder, SkillVariant variant);

SkillVariant variant_of(Strategy strategy);

/// Selections for every query. Skill strategies need `skill_sets` covering
/// bank and query ids; oracle strategies need `query_targets`.
struct SelectionInputs {
    const ExampleBank* bank = nullptr;
    const std::vector<QueryInput>* queries = nullptr;
    const std::vector<SkillCandidateSet>* skill_sets = nullptr;
    const std::unordered_map<std::string, std::string>* query_targets = nullptr;
    Embedder* embedder = nullptr;
};

std::vector<SelectionResult> select_all(const SelectionInputs& inputs, const SelectionConfig& config);

/// Assembles and completes one prompt per selection, up to `max_in_flight`
/// concurrently. Output order follows `selections`.
std::vector<Prediction> run_selections(const std::vector<SelectionResult>& selections,
                                       const ExampleBank& bank,
                                       const std::vector<QueryInput>& queries,
                                       CompletionBackend& backend, const DecodingParams& params,
                                       const PromptTemplate& tmpl, std::size_t max_in_flight);

struct PipelineOptions {
    bool dry_run = false;
    std::ostream* log = nullptr;
};

struct PipelineResult {
    EvalReport report;
    /// Files written to out_dir.
    std::vector<std::filesystem::path> outputs;
    /// Stages whose output was reused from cache_dir.
    std::vector<std::string> reused_stages;
};

/// rewrite -> embed -> select -> assemble -> complete -> evaluate. Each stage
/// output is stored under cache_dir/stages keyed by a hash of its inputs and
/// reused when present. Errors carry the stage name.
PipelineResult run_pipeline(const RunConfig& config, const PipelineOptions& options = {});

/// Human-readable list of the stages run_pipeline would execute.
std::string describe_plan(const RunConfig& config);

}  // namespace skillknn
