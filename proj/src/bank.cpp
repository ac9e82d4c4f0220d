#include "skillknn/bank.hpp"

#include "skillknn/error.hpp"
#include "skillknn/jsonl.hpp"
#include "skillknn/util.hpp"

#include "json.hpp"

#include <set>

namespace skillknn {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

QueryInput to_query(const Example& example) {
    return QueryInput{example.id, example.question, example.schema};
}

ExampleBank::ExampleBank(std::vector<Example> examples, std::string task_tag)
    : examples_(std::move(examples)), task_tag_(std::move(task_tag)) {
    index_.reserve(examples_.size());
    for (std::size_t i = 0; i < examples_.size(); ++i) {
        const auto& ex = examples_[i];
        if (trim(ex.id).empty()) {
            throw Error(ErrorKind::Validation, "example at position " + std::to_string(i) +
                                                   " has an empty id");
        }
        if (trim(ex.question).empty()) {
            throw Error(ErrorKind::Validation, "example '" + ex.id + "' has an empty question");
        }
        if (trim(ex.target).empty()) {
            throw Error(ErrorKind::Validation, "example '" + ex.id + "' has an empty target");
        }
        if (!index_.emplace(ex.id, i).second) {
            throw Error(ErrorKind::Validation, "duplicate example id '" + ex.id + "'");
        }
    }
}

std::optional<std::size_t> ExampleBank::index_of(std::string_view id) const {
    auto it = index_.find(std::string(id));
    if (it == index_.end()) return std::nullopt;
    return it->second;
}

const Example& ExampleBank::at(std::string_view id) const {
    auto index = index_of(id);
    if (!index) {
        throw Error(ErrorKind::Data, "example id '" + std::string(id) + "' not in bank");
    }
    return examples_[*index];
}

std::vector<std::string> ExampleBank::ids() const {
    std::vector<std::string> out;
    out.reserve(examples_.size());
    for (const auto& ex : examples_) out.push_back(ex.id);
    return out;
}

namespace {

Example example_from_json(const json& record, bool require_target) {
    Example ex;
    ex.id = jsonl::required_string(record, "id");
    ex.question = jsonl::required_string(record, "question");
    ex.schema = jsonl::optional_string(record, "schema");
    if (require_target) {
        ex.target = jsonl::required_string(record, "target");
    } else {
        ex.target = jsonl::optional_string(record, "target");
    }
    ex.db_id = jsonl::optional_string(record, "db_id");
    return ex;
}

}  // namespace

ExampleBank parse_bank(std::string_view contents, std::string task_tag, std::string_view source) {
    std::vector<Example> examples;
    jsonl::for_each_record(contents, source, [&](const json& record, std::size_t line) {
        try {
            examples.push_back(example_from_json(record, true));
        } catch (const Error& e) {
            throw Error(ErrorKind::Parse,
                        std::string(source) + ":" + std::to_string(line) + ": " + e.detail());
        }
    });
    try {
        return ExampleBank(std::move(examples), std::move(task_tag));
    } catch (const Error& e) {
        throw e.with_context(std::string(source));
    }
}

ExampleBank load_bank(const std::filesystem::path& path, std::string task_tag) {
    return parse_bank(read_file(path), std::move(task_tag), path.string());
}

std::string serialize_bank(const ExampleBank& bank) {
    std::string out;
    for (const auto& ex : bank.examples()) {
        ordered_json record;
        record["id"] = ex.id;
        record["question"] = ex.question;
        record["schema"] = ex.schema;
        record["target"] = ex.target;
        record["db_id"] = ex.db_id;
        out += jsonl::dump_line(record);
    }
    return out;
}

void save_bank(const ExampleBank& bank, const std::filesystem::path& path) {
    write_file_atomic(path, serialize_bank(bank));
}

std::vector<QueryInput> load_queries(const std::filesystem::path& path) {
    std::vector<QueryInput> queries;
    std::set<std::string> seen;
    const std::string source = path.string();
    jsonl::for_each_record(read_file(path), source, [&](const json& record, std::size_t line) {
        Example ex;
        try {
            ex = example_from_json(record, false);
        } catch (const Error& e) {
            throw Error(ErrorKind::Parse, source + ":" + std::to_string(line) + ": " + e.detail());
        }
        if (trim(ex.question).empty()) {
            throw Error(ErrorKind::Validation, "query '" + ex.id + "' has an empty question");
        }
        if (!seen.insert(ex.id).second) {
            throw Error(ErrorKind::Validation, "duplicate query id '" + ex.id + "'");
        }
        queries.push_back(to_query(ex));
    });
    return queries;
}

std::string embedding_text_of(const Example& example) {
    return normalize_whitespace(example.question);
}

std::string embedding_text_of(const QueryInput& query) {
    return normalize_whitespace(query.question);
}

BankStats bank_stats(const ExampleBank& bank) {
    std::set<std::string> dbs;
    for (const auto& ex : bank.examples()) dbs.insert(ex.db_id);
    return BankStats{bank.size(), dbs.size()};
}

}  // namespace skillknn
