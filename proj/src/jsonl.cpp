#include "skillknn/jsonl.hpp"

#include "skillknn/error.hpp"
#include "skillknn/util.hpp"

namespace skillknn::jsonl {

void for_each_record(std::string_view contents, std::string_view source,
                     const std::function<void(const nlohmann::json&, std::size_t)>& fn) {
    std::size_t line_number = 0;
    std::size_t pos = 0;
    while (pos < contents.size()) {
        std::size_t end = contents.find('\n', pos);
        if (end == std::string_view::npos) end = contents.size();
        std::string_view line = contents.substr(pos, end - pos);
        pos = end + 1;
        ++line_number;
        if (trim(line).empty()) continue;

        nlohmann::json record;
        try {
            record = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw Error(ErrorKind::Parse, std::string(source) + ":" + std::to_string(line_number) +
                                              ": " + e.what());
        }
        if (!record.is_object()) {
            throw Error(ErrorKind::Parse, std::string(source) + ":" + std::to_string(line_number) +
                                              ": record is not an object");
        }
        fn(record, line_number);
    }
}

namespace {
template <typename Json>
std::string dump_impl(const Json& record) {
    try {
        return record.dump() + "\n";
    } catch (const nlohmann::json::type_error& e) {
        throw Error(ErrorKind::Validation, std::string("cannot serialize record: ") + e.what());
    }
}
}  // namespace

std::string dump_line(const nlohmann::ordered_json& record) { return dump_impl(record); }
std::string dump_line(const nlohmann::json& record) { return dump_impl(record); }

std::string_view complete_lines(std::string_view contents) {
    if (contents.empty() || contents.back() == '\n') return contents;
    auto last_newline = contents.rfind('\n');
    return last_newline == std::string_view::npos ? std::string_view() : contents.substr(0, last_newline + 1);
}

std::string required_string(const nlohmann::json& record, const char* field) {
    auto it = record.find(field);
    if (it == record.end()) {
        throw Error(ErrorKind::Parse, std::string("missing field '") + field + "'");
    }
    if (!it->is_string()) {
        throw Error(ErrorKind::Parse, std::string("field '") + field + "' is not a string");
    }
    return it->get<std::string>();
}

std::string optional_string(const nlohmann::json& record, const char* field) {
    auto it = record.find(field);
    if (it == record.end() || it->is_null()) return {};
    if (!it->is_string()) {
        throw Error(ErrorKind::Parse, std::string("field '") + field + "' is not a string");
    }
    return it->get<std::string>();
}

}  // namespace skillknn::jsonl
