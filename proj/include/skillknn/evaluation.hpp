#pragma once

#include "skillknn/bank.hpp"
#include "skillknn/embedding.hpp"
#include "skillknn/selector.hpp"

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace skillknn {

/// Trim, collapse whitespace, drop one trailing semicolon. Case is kept.
std::string normalize_logical_form(std::string_view text);

bool exact_match(std::string_view prediction, std::string_view target);

/// Groups samples by normalized form, orders groups by descending frequency
/// (ties: first occurrence) and reports whether any of the first `n` groups
/// matches `target`.
bool recall_at_n(const std::vector<std::string>& samples, std::size_t n, std::string_view target);

/// Distinct db_ids; the empty id counts as one shared database.
std::size_t diversity_distinct_dbs(std::span<const Example> selected);

/// Counts `name [...]` groups in a serialized schema.
std::size_t table_count_from_schema(std::string_view schema);

struct ComplexityStats {
    double mean_tables = 0.0;
    double mean_target_len = 0.0;
};

/// Mean table count (examples with an empty db_id contribute 0) and mean
/// whitespace-token length of targets. Error(Data) for an unknown db_id.
ComplexityStats complexity_stats(std::span<const Example> selected,
                                 const std::unordered_map<std::string, std::size_t>& table_counts);

/// Table counts per db_id derived from the schemas stored in a bank.
std::unordered_map<std::string, std::size_t> table_counts_from_bank(const ExampleBank& bank);

struct Prediction {
    std::string query_id;
    std::size_t trial = 0;
    std::string prediction;
    /// Sampled completions for recall@N; empty under greedy decoding.
    std::vector<std::string> samples;

    bool operator==(const Prediction&) const = default;
};

std::string serialize_predictions(const std::vector<Prediction>& predictions);
std::vector<Prediction> parse_predictions(std::string_view contents,
                                          std::string_view source = "<memory>");
void save_predictions(const std::vector<Prediction>& predictions, const std::filesystem::path& path);
std::vector<Prediction> load_predictions(const std::filesystem::path& path);

struct EvalRecord {
    std::string query_id;
    std::size_t trial = 0;
    std::string prediction;
    std::string target;
    bool exact_match = false;
    std::size_t sketch_overlap = 0;
    std::vector<std::string> selected_ids;
};

struct EvalReport {
    std::size_t n = 0;
    std::size_t trials = 1;
    double exact_match_rate = 0.0;
    double mean_sketch_overlap = 0.0;
    double diversity_mean_distinct_dbs = 0.0;
    double complexity_mean_tables = 0.0;
    double complexity_mean_target_len = 0.0;
    /// Filled only for multi-trial runs; the headline rate is their mean.
    std::vector<double> per_trial_rates;
    /// N -> fraction of (query, trial) pairs whose top-N sampled groups hit.
    std::map<std::size_t, double> recall_at_n;

    bool operator==(const EvalReport&) const = default;
};

struct EvalOutput {
    std::vector<EvalRecord> records;
    EvalReport report;
};

/// Recall cut-offs evaluated when predictions carry samples.
inline const std::vector<std::size_t> kDefaultRecallCutoffs = {1, 2, 3, 5, 7, 10};

/// Joins predictions and selections with the test set on (query_id, trial).
/// Every test query needs a prediction and a selection in every trial that
/// appears; anything unmatched raises Error(Join) naming the id. Records are
/// emitted in test-set order, trial-major.
EvalOutput evaluate_run(const std::vector<Prediction>& predictions, const ExampleBank& test_set,
                        const std::vector<SelectionResult>& selections, const ExampleBank& bank,
                        const std::unordered_map<std::string, std::size_t>& table_counts,
                        const std::vector<std::size_t>& recall_cutoffs = kDefaultRecallCutoffs);

std::string serialize_eval_records(const std::vector<EvalRecord>& records);

nlohmann::ordered_json report_to_json(const EvalReport& report);
EvalReport report_from_json(const nlohmann::json& doc);

/// Aligned two-column text table for terminals.
std::string format_report(const EvalReport& report);

/// One `SQL<TAB>db_id` line per test query, in test-set order, for the given
/// trial. This is the layout external execution scripts read.
std::string spider_prediction_lines(const std::vector<Prediction>& predictions,
                                    const ExampleBank& test_set, std::size_t trial = 0);

/// {"id", "model_id", "embedding": [...]} per line, for projection tools.
std::string serialize_embedding_export(const std::vector<std::string>& ids,
                                       const std::vector<EmbeddingVector>& vectors);

}  // namespace skillknn
