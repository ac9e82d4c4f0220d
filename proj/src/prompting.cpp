#include "skillknn/prompting.hpp"

#include "skillknn/error.hpp"

namespace skillknn {

std::size_t estimate_tokens(std::string_view text) { return (text.size() + 2) / 3; }

PromptSpec assemble_prompt(const SelectionResult& selection, const ExampleBank& bank,
                           const QueryInput& query, const DecodingParams& params,
                           const PromptTemplate& tmpl) {
    if (params.max_context_tokens <= params.max_decode_tokens) {
        throw Error(ErrorKind::Budget, "no prompt budget left after reserving decode tokens");
    }
    const std::size_t budget = params.max_context_tokens - params.max_decode_tokens;

    std::vector<std::string> blocks;
    blocks.reserve(selection.prompt_order.size());
    for (const auto& id : selection.prompt_order) {
        const auto& ex = bank.at(id);
        blocks.push_back(tmpl.render_block(ex.question, ex.schema, ex.target));
    }
    const std::string query_block = tmpl.render_query(query.question, query.schema);

    if (estimate_tokens(query_block) > budget) {
        throw Error(ErrorKind::Budget, "query '" + query.id + "' alone needs " +
                                           std::to_string(estimate_tokens(query_block)) +
                                           " tokens, budget is " + std::to_string(budget));
    }

    // Byte length of the joined prompt when the first `drop` blocks are removed.
    auto joined_size = [&](std::size_t drop) {
        std::size_t bytes = query_block.size();
        for (std::size_t i = drop; i < blocks.size(); ++i) {
            bytes += blocks[i].size() + tmpl.separator.size();
        }
        return bytes;
    };
    std::size_t drop = 0;
    while (drop < blocks.size() && (joined_size(drop) + 2) / 3 > budget) ++drop;

    PromptSpec spec;
    spec.truncated_count = drop;
    for (std::size_t i = drop; i < blocks.size(); ++i) {
        spec.rendered += blocks[i];
        spec.rendered += tmpl.separator;
        spec.example_ids_in_order.push_back(selection.prompt_order[i]);
    }
    spec.rendered += query_block;
    spec.token_estimate = estimate_tokens(spec.rendered);
    return spec;
}

std::vector<std::string> complete(const PromptSpec& prompt, CompletionBackend& backend,
                                  const DecodingParams& params, const PromptTemplate& tmpl) {
    params.validate();
    auto raw = backend.generate(prompt.rendered, params, tmpl.stop);
    if (raw.size() != params.n_samples) {
        throw Error(ErrorKind::Transport, "backend returned " + std::to_string(raw.size()) +
                                              " completions, expected " +
                                              std::to_string(params.n_samples));
    }
    std::vector<std::string> out;
    out.reserve(raw.size());
    for (const auto& text : raw) out.push_back(tmpl.trim_completion(text));
    return out;
}

}  // namespace skillknn
