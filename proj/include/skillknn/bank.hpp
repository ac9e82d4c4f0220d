#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace skillknn {

/// One labeled input-output pair. `schema` and `db_id` are empty when the
/// task has no database (COGS).
struct Example {
    std::string id;
    std::string question;
    std::string schema;
    std::string target;
    std::string db_id;

    bool operator==(const Example&) const = default;
};

/// A test-time input: the question and optional schema, no label.
struct QueryInput {
    std::string id;
    std::string question;
    std::string schema;

    bool operator==(const QueryInput&) const = default;
};

QueryInput to_query(const Example& example);

/// Immutable, ordered collection of examples with unique ids.
class ExampleBank {
public:
    ExampleBank() = default;

    /// Throws Error(Validation) on duplicate ids or blank question/target.
    ExampleBank(std::vector<Example> examples, std::string task_tag);

    const std::vector<Example>& examples() const noexcept { return examples_; }
    std::size_t size() const noexcept { return examples_.size(); }
    bool empty() const noexcept { return examples_.empty(); }
    const std::string& task_tag() const noexcept { return task_tag_; }

    const Example& operator[](std::size_t index) const { return examples_[index]; }
    std::optional<std::size_t> index_of(std::string_view id) const;

    /// Throws Error(Data) naming the id when absent.
    const Example& at(std::string_view id) const;

    std::vector<std::string> ids() const;

    bool operator==(const ExampleBank& other) const {
        return task_tag_ == other.task_tag_ && examples_ == other.examples_;
    }

private:
    std::vector<Example> examples_;
    std::string task_tag_;
    std::unordered_map<std::string, std::size_t> index_;
};

/// Reads a line-delimited record file. Blank lines are skipped; a malformed
/// line raises Error(Parse) with its 1-based line number.
ExampleBank load_bank(const std::filesystem::path& path, std::string task_tag);

/// Parses records from an in-memory buffer; `source` labels error messages.
ExampleBank parse_bank(std::string_view contents, std::string task_tag,
                       std::string_view source = "<memory>");

void save_bank(const ExampleBank& bank, const std::filesystem::path& path);

std::string serialize_bank(const ExampleBank& bank);

/// Test inputs; `target` and `db_id` fields, if present, are ignored.
std::vector<QueryInput> load_queries(const std::filesystem::path& path);

/// Text handed to the embedder: the question alone, whitespace-normalized.
std::string embedding_text_of(const Example& example);
std::string embedding_text_of(const QueryInput& query);

struct BankStats {
    std::size_t count = 0;
    std::size_t distinct_db_ids = 0;
};

BankStats bank_stats(const ExampleBank& bank);

}  // namespace skillknn
