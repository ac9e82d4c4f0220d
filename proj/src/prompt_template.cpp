#include "skillknn/prompt_template.hpp"

#include "skillknn/error.hpp"
#include "skillknn/util.hpp"

#include "json.hpp"

namespace skillknn {

namespace {

struct Slot {
    std::string_view name;
    std::string_view value;
};

// Single left-to-right pass; substituted values are never rescanned, so
// braces inside questions or SQL stay literal.
std::string substitute(std::string_view pattern, std::initializer_list<Slot> slots) {
    std::string out;
    out.reserve(pattern.size() + 64);
    std::size_t i = 0;
    while (i < pattern.size()) {
        if (pattern[i] == '{') {
            auto close = pattern.find('}', i);
            if (close != std::string_view::npos) {
                auto name = pattern.substr(i + 1, close - i - 1);
                bool replaced = false;
                for (const auto& slot : slots) {
                    if (slot.name == name) {
                        out.append(slot.value);
                        replaced = true;
                        break;
                    }
                }
                if (replaced) {
                    i = close + 1;
                    continue;
                }
            }
        }
        out.push_back(pattern[i]);
        ++i;
    }
    return out;
}

// Literal text between the previous slot (or pattern start) and {output}.
std::string output_label(std::string_view pattern) {
    auto slot = pattern.find("{output}");
    if (slot == std::string_view::npos) return {};
    auto prev_close = pattern.rfind('}', slot == 0 ? 0 : slot - 1);
    std::size_t start = (prev_close == std::string_view::npos || prev_close >= slot) ? 0 : prev_close + 1;
    return std::string(pattern.substr(start, slot - start));
}

}  // namespace

std::string PromptTemplate::render_block(std::string_view question, std::string_view schema_text,
                                         std::string_view output) const {
    std::string schema_block =
        schema_text.empty() ? std::string() : substitute(schema, {{"value", schema_text}});
    return substitute(example,
                      {{"question", question}, {"schema", schema_block}, {"output", output}});
}

std::string PromptTemplate::render_query(std::string_view question,
                                         std::string_view schema_text) const {
    std::string block = render_block(question, schema_text, "");
    while (!block.empty() && (block.back() == ' ' || block.back() == '\t')) block.pop_back();
    return block;
}

std::string PromptTemplate::trim_completion(std::string_view completion) const {
    std::string text = trim(completion);
    std::size_t cut = text.size();
    for (const auto& s : stop) {
        if (s.empty()) continue;
        auto pos = text.find(s);
        if (pos != std::string::npos) cut = std::min(cut, pos);
    }
    return trim(std::string_view(text).substr(0, cut));
}

std::optional<std::string> PromptTemplate::last_output(std::string_view prompt) const {
    auto query_start = prompt.rfind(separator);
    if (query_start == std::string_view::npos) return std::nullopt;
    auto before = prompt.substr(0, query_start);
    std::string label = output_label(example);
    if (label.empty()) return std::nullopt;
    auto pos = before.rfind(label);
    if (pos == std::string_view::npos) return std::nullopt;
    return std::string(before.substr(pos + label.size()));
}

void PromptTemplate::validate() const {
    if (example.find("{question}") == std::string::npos) {
        throw Error(ErrorKind::Config, "template example pattern lacks {question}");
    }
    if (example.find("{output}") == std::string::npos) {
        throw Error(ErrorKind::Config, "template example pattern lacks {output}");
    }
    if (separator.empty()) throw Error(ErrorKind::Config, "template separator is empty");
}

PromptTemplate default_template(std::string_view task_tag, TemplateRole role) {
    const bool skill = role == TemplateRole::Skill;
    if (task_tag == "text-to-sql") {
        return PromptTemplate{
            skill ? "Question: {question}\n{schema}Skill: {output}"
                  : "Question: {question}\n{schema}SQL: {output}",
            "Database:\n{value}\n", "\n\n", {"\n\n", "\nQuestion:"}};
    }
    if (task_tag == "cogs") {
        return PromptTemplate{skill ? "Input: {question}\nSkill: {output}"
                                    : "Input: {question}\nOutput: {output}",
                              "", "\n\n", {"\n\n", "\nInput:"}};
    }
    return PromptTemplate{skill ? "Input: {question}\n{schema}Skill: {output}"
                                : "Input: {question}\n{schema}Output: {output}",
                          "Context:\n{value}\n", "\n\n", {"\n\n", "\nInput:"}};
}

PromptTemplate load_template(const std::filesystem::path& path) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(read_file(path));
    } catch (const nlohmann::json::parse_error& e) {
        throw Error(ErrorKind::Parse, path.string() + ": " + e.what());
    }
    PromptTemplate tmpl;
    try {
        tmpl.example = doc.at("example").get<std::string>();
        tmpl.schema = doc.value("schema", std::string());
        tmpl.separator = doc.at("separator").get<std::string>();
        tmpl.stop = doc.value("stop", std::vector<std::string>{});
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::Parse, path.string() + ": " + e.what());
    }
    try {
        tmpl.validate();
    } catch (const Error& e) {
        throw e.with_context(path.string());
    }
    return tmpl;
}

}  // namespace skillknn
