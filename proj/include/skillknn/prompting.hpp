#pragma once

#include "skillknn/backend.hpp"
#include "skillknn/bank.hpp"
#include "skillknn/prompt_template.hpp"
#include "skillknn/selector.hpp"

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace skillknn {

struct PromptSpec {
    std::string rendered;
    std::vector<std::string> example_ids_in_order;
    std::size_t token_estimate = 0;
    std::size_t truncated_count = 0;
};

/// ceil(bytes / 3): a deliberate over-estimate for subword tokenizers.
std::size_t estimate_tokens(std::string_view text);

/// Renders the selected examples in prompt order, then the query with an
/// empty output slot.
///
/// When the estimate exceeds max_context_tokens - max_decode_tokens, examples
/// are dropped from the front of the prompt order (least similar first) until
/// it fits. Error(Budget) if the query block alone does not fit;
/// Error(Data) if a selected id is not in the bank.
PromptSpec assemble_prompt(const SelectionResult& selection, const ExampleBank& bank,
                           const QueryInput& query, const DecodingParams& params,
                           const PromptTemplate& tmpl);

/// `params.n_samples` completions, each cut at the template's stop strings.
std::vector<std::string> complete(const PromptSpec& prompt, CompletionBackend& backend,
                                  const DecodingParams& params, const PromptTemplate& tmpl);

}  // namespace skillknn
