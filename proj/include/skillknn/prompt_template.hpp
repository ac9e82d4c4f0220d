#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace skillknn {

/// Block layout for one task. `example` holds the {question}, {schema} and
/// {output} slots; `schema` wraps a non-empty schema through its {value} slot
/// and renders as nothing when the schema is empty. Blocks are joined by
/// `separator`. A completion is cut at the earliest `stop` string.
///
/// Stored as a JSON object with exactly these four fields.
struct PromptTemplate {
    std::string example;
    std::string schema;
    std::string separator;
    std::vector<std::string> stop;

    std::string render_block(std::string_view question, std::string_view schema_text,
                             std::string_view output) const;

    /// The block with an empty output slot and trailing spaces removed.
    std::string render_query(std::string_view question, std::string_view schema_text) const;

    std::string trim_completion(std::string_view completion) const;

    /// Text after the literal that precedes {output}, taken from the last
    /// completed block in `prompt` (the one right before the query block).
    std::optional<std::string> last_output(std::string_view prompt) const;

    /// Throws Error(Config) if the example pattern lacks {question} or
    /// {output}, or separator is empty.
    void validate() const;
};

enum class TemplateRole { Answer, Skill };

/// Built-in layouts for "text-to-sql" and "cogs"; any other tag gets a
/// generic Input/Output layout.
PromptTemplate default_template(std::string_view task_tag, TemplateRole role);

PromptTemplate load_template(const std::filesystem::path& path);

}  // namespace skillknn
