#include "skillknn/evaluation.hpp"

#include "skillknn/error.hpp"
#include "skillknn/jsonl.hpp"
#include "skillknn/util.hpp"

#include <algorithm>
#include <iomanip>
#include <set>
#include <sstream>

namespace skillknn {

std::string normalize_logical_form(std::string_view text) {
    std::string out = normalize_whitespace(text);
    if (!out.empty() && out.back() == ';') {
        out.pop_back();
        out = trim(out);
    }
    return out;
}

bool exact_match(std::string_view prediction, std::string_view target) {
    return normalize_logical_form(prediction) == normalize_logical_form(target);
}

bool recall_at_n(const std::vector<std::string>& samples, std::size_t n, std::string_view target) {
    struct Group {
        std::string form;
        std::size_t count = 0;
        std::size_t first = 0;
    };
    std::vector<Group> groups;
    std::unordered_map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        auto form = normalize_logical_form(samples[i]);
        auto [it, inserted] = index.emplace(form, groups.size());
        if (inserted) groups.push_back(Group{form, 0, i});
        ++groups[it->second].count;
    }
    std::stable_sort(groups.begin(), groups.end(), [](const Group& a, const Group& b) {
        if (a.count != b.count) return a.count > b.count;
        return a.first < b.first;
    });
    const auto wanted = normalize_logical_form(target);
    for (std::size_t i = 0; i < std::min(n, groups.size()); ++i) {
        if (groups[i].form == wanted) return true;
    }
    return false;
}

std::size_t diversity_distinct_dbs(std::span<const Example> selected) {
    std::set<std::string> dbs;
    for (const auto& ex : selected) dbs.insert(ex.db_id);
    return dbs.size();
}

std::size_t table_count_from_schema(std::string_view schema) {
    std::size_t tables = 0;
    int depth = 0;
    for (char c : schema) {
        if (c == '[') {
            if (depth == 0) ++tables;
            ++depth;
        } else if (c == ']' && depth > 0) {
            --depth;
        }
    }
    return tables;
}

namespace {

std::size_t whitespace_tokens(std::string_view text) {
    std::istringstream in{std::string(text)};
    std::size_t count = 0;
    std::string token;
    while (in >> token) ++count;
    return count;
}

std::size_t tables_of(const Example& ex,
                      const std::unordered_map<std::string, std::size_t>& table_counts) {
    if (ex.db_id.empty()) return 0;
    auto it = table_counts.find(ex.db_id);
    if (it == table_counts.end()) {
        throw Error(ErrorKind::Data, "no table count for database '" + ex.db_id + "'");
    }
    return it->second;
}

}  // namespace

ComplexityStats complexity_stats(std::span<const Example> selected,
                                 const std::unordered_map<std::string, std::size_t>& table_counts) {
    if (selected.empty()) return {};
    std::size_t tables = 0;
    std::size_t tokens = 0;
    for (const auto& ex : selected) {
        tables += tables_of(ex, table_counts);
        tokens += whitespace_tokens(ex.target);
    }
    const auto n = static_cast<double>(selected.size());
    return ComplexityStats{static_cast<double>(tables) / n, static_cast<double>(tokens) / n};
}

std::unordered_map<std::string, std::size_t> table_counts_from_bank(const ExampleBank& bank) {
    std::unordered_map<std::string, std::size_t> counts;
    for (const auto& ex : bank.examples()) {
        if (ex.db_id.empty()) continue;
        auto tables = table_count_from_schema(ex.schema);
        auto& slot = counts[ex.db_id];
        slot = std::max(slot, tables);
    }
    return counts;
}

std::string serialize_predictions(const std::vector<Prediction>& predictions) {
    std::string out;
    for (const auto& p : predictions) {
        nlohmann::ordered_json rec;
        rec["query_id"] = p.query_id;
        rec["trial"] = p.trial;
        rec["prediction"] = p.prediction;
        if (!p.samples.empty()) rec["samples"] = p.samples;
        out += jsonl::dump_line(rec);
    }
    return out;
}

std::vector<Prediction> parse_predictions(std::string_view contents, std::string_view source) {
    std::vector<Prediction> out;
    jsonl::for_each_record(contents, source, [&](const nlohmann::json& rec, std::size_t line) {
        try {
            Prediction p;
            p.query_id = rec.at("query_id").get<std::string>();
            p.trial = rec.value("trial", std::size_t{0});
            p.prediction = rec.at("prediction").get<std::string>();
            p.samples = rec.value("samples", std::vector<std::string>{});
            out.push_back(std::move(p));
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorKind::Parse,
                        std::string(source) + ":" + std::to_string(line) + ": " + e.what());
        }
    });
    return out;
}

void save_predictions(const std::vector<Prediction>& predictions, const std::filesystem::path& path) {
    write_file_atomic(path, serialize_predictions(predictions));
}

std::vector<Prediction> load_predictions(const std::filesystem::path& path) {
    return parse_predictions(read_file(path), path.string());
}

namespace {

using TrialKey = std::pair<std::string, std::size_t>;

struct TrialKeyHash {
    std::size_t operator()(const TrialKey& key) const {
        return std::hash<std::string>{}(key.first) * 31 + key.second;
    }
};

}  // namespace

EvalOutput evaluate_run(const std::vector<Prediction>& predictions, const ExampleBank& test_set,
                        const std::vector<SelectionResult>& selections, const ExampleBank& bank,
                        const std::unordered_map<std::string, std::size_t>& table_counts,
                        const std::vector<std::size_t>& recall_cutoffs) {
    std::unordered_map<TrialKey, const Prediction*, TrialKeyHash> by_prediction;
    std::unordered_map<TrialKey, const SelectionResult*, TrialKeyHash> by_selection;
    std::set<std::size_t> trial_ids;

    for (const auto& p : predictions) {
        if (!test_set.index_of(p.query_id)) {
            throw Error(ErrorKind::Join, "prediction for unknown query '" + p.query_id + "'");
        }
        if (!by_prediction.emplace(TrialKey{p.query_id, p.trial}, &p).second) {
            throw Error(ErrorKind::Join, "duplicate prediction for query '" + p.query_id +
                                             "' trial " + std::to_string(p.trial));
        }
        trial_ids.insert(p.trial);
    }
    for (const auto& s : selections) {
        if (!test_set.index_of(s.query_id)) {
            throw Error(ErrorKind::Join, "selection for unknown query '" + s.query_id + "'");
        }
        by_selection.emplace(TrialKey{s.query_id, s.trial}, &s);
        trial_ids.insert(s.trial);
    }
    if (trial_ids.empty()) trial_ids.insert(0);

    EvalOutput out;
    EvalReport& report = out.report;
    report.n = test_set.size();
    report.trials = trial_ids.size();

    std::size_t overlap_sum = 0;
    std::size_t diversity_sum = 0;
    std::size_t selection_count = 0;
    std::size_t table_sum = 0;
    std::size_t token_sum = 0;
    std::size_t selected_examples = 0;
    std::map<std::size_t, std::size_t> recall_hits;
    std::size_t sampled_records = 0;

    for (std::size_t trial : trial_ids) {
        std::size_t matches = 0;
        for (const auto& test : test_set.examples()) {
            const TrialKey key{test.id, trial};
            auto p = by_prediction.find(key);
            if (p == by_prediction.end()) {
                throw Error(ErrorKind::Join, "no prediction for query '" + test.id + "' trial " +
                                                 std::to_string(trial));
            }
            auto s = by_selection.find(key);
            if (s == by_selection.end()) {
                throw Error(ErrorKind::Join, "no selection for query '" + test.id + "' trial " +
                                                 std::to_string(trial));
            }
            const Prediction& pred = *p->second;

            EvalRecord record;
            record.query_id = test.id;
            record.trial = trial;
            record.prediction = pred.prediction;
            record.target = test.target;
            record.exact_match = exact_match(pred.prediction, test.target);
            record.sketch_overlap = sketch_similarity(pred.prediction, test.target);

            std::vector<Example> selected;
            for (const auto& scored : s->second->ranked) {
                record.selected_ids.push_back(scored.example_id);
                selected.push_back(bank.at(scored.example_id));
            }
            matches += record.exact_match ? 1 : 0;
            overlap_sum += record.sketch_overlap;
            diversity_sum += diversity_distinct_dbs(selected);
            ++selection_count;
            for (const auto& ex : selected) {
                table_sum += tables_of(ex, table_counts);
                token_sum += whitespace_tokens(ex.target);
            }
            selected_examples += selected.size();

            if (!pred.samples.empty()) {
                ++sampled_records;
                for (std::size_t cutoff : recall_cutoffs) {
                    recall_hits[cutoff] += recall_at_n(pred.samples, cutoff, test.target) ? 1 : 0;
                }
            }
            out.records.push_back(std::move(record));
        }
        report.per_trial_rates.push_back(
            report.n == 0 ? 0.0 : static_cast<double>(matches) / static_cast<double>(report.n));
    }

    double rate_sum = 0.0;
    for (double r : report.per_trial_rates) rate_sum += r;
    report.exact_match_rate = rate_sum / static_cast<double>(report.per_trial_rates.size());
    if (report.per_trial_rates.size() == 1) report.per_trial_rates.clear();

    const std::size_t records = out.records.size();
    if (records > 0) {
        report.mean_sketch_overlap = static_cast<double>(overlap_sum) / static_cast<double>(records);
    }
    if (selection_count > 0) {
        report.diversity_mean_distinct_dbs =
            static_cast<double>(diversity_sum) / static_cast<double>(selection_count);
    }
    if (selected_examples > 0) {
        report.complexity_mean_tables =
            static_cast<double>(table_sum) / static_cast<double>(selected_examples);
        report.complexity_mean_target_len =
            static_cast<double>(token_sum) / static_cast<double>(selected_examples);
    }
    if (sampled_records > 0) {
        for (const auto& [cutoff, hits] : recall_hits) {
            report.recall_at_n[cutoff] =
                static_cast<double>(hits) / static_cast<double>(sampled_records);
        }
    }
    return out;
}

std::string serialize_eval_records(const std::vector<EvalRecord>& records) {
    std::string out;
    for (const auto& r : records) {
        nlohmann::ordered_json rec;
        rec["query_id"] = r.query_id;
        rec["trial"] = r.trial;
        rec["prediction"] = r.prediction;
        rec["target"] = r.target;
        rec["exact_match"] = r.exact_match;
        rec["sketch_overlap"] = r.sketch_overlap;
        rec["selected_ids"] = r.selected_ids;
        out += jsonl::dump_line(rec);
    }
    return out;
}

nlohmann::ordered_json report_to_json(const EvalReport& report) {
    nlohmann::ordered_json doc;
    doc["n"] = report.n;
    doc["trials"] = report.trials;
    doc["exact_match_rate"] = report.exact_match_rate;
    doc["mean_sketch_overlap"] = report.mean_sketch_overlap;
    doc["diversity_mean_distinct_dbs"] = report.diversity_mean_distinct_dbs;
    doc["complexity_mean_tables"] = report.complexity_mean_tables;
    doc["complexity_mean_target_len"] = report.complexity_mean_target_len;
    if (!report.per_trial_rates.empty()) doc["per_trial_rates"] = report.per_trial_rates;
    if (!report.recall_at_n.empty()) {
        nlohmann::ordered_json recall;
        for (const auto& [cutoff, rate] : report.recall_at_n) recall[std::to_string(cutoff)] = rate;
        doc["recall_at_n"] = std::move(recall);
    }
    return doc;
}

EvalReport report_from_json(const nlohmann::json& doc) {
    EvalReport report;
    try {
        report.n = doc.at("n").get<std::size_t>();
        report.trials = doc.value("trials", std::size_t{1});
        report.exact_match_rate = doc.at("exact_match_rate").get<double>();
        report.mean_sketch_overlap = doc.value("mean_sketch_overlap", 0.0);
        report.diversity_mean_distinct_dbs = doc.value("diversity_mean_distinct_dbs", 0.0);
        report.complexity_mean_tables = doc.value("complexity_mean_tables", 0.0);
        report.complexity_mean_target_len = doc.value("complexity_mean_target_len", 0.0);
        report.per_trial_rates = doc.value("per_trial_rates", std::vector<double>{});
        if (doc.contains("recall_at_n")) {
            for (const auto& [key, value] : doc.at("recall_at_n").items()) {
                report.recall_at_n[std::stoul(key)] = value.get<double>();
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::Parse, std::string("malformed report: ") + e.what());
    }
    return report;
}

std::string format_report(const EvalReport& report) {
    std::vector<std::pair<std::string, std::string>> rows;
    auto fixed = [](double v, int digits = 4) {
        std::ostringstream s;
        s << std::fixed << std::setprecision(digits) << v;
        return s.str();
    };
    rows.emplace_back("queries", std::to_string(report.n));
    rows.emplace_back("trials", std::to_string(report.trials));
    rows.emplace_back("exact match", fixed(report.exact_match_rate));
    for (std::size_t t = 0; t < report.per_trial_rates.size(); ++t) {
        rows.emplace_back("  trial " + std::to_string(t), fixed(report.per_trial_rates[t]));
    }
    rows.emplace_back("sketch overlap", fixed(report.mean_sketch_overlap));
    rows.emplace_back("distinct dbs", fixed(report.diversity_mean_distinct_dbs));
    rows.emplace_back("tables / example", fixed(report.complexity_mean_tables));
    rows.emplace_back("target length", fixed(report.complexity_mean_target_len));
    for (const auto& [cutoff, rate] : report.recall_at_n) {
        rows.emplace_back("recall@" + std::to_string(cutoff), fixed(rate));
    }

    std::size_t width = 0;
    for (const auto& row : rows) width = std::max(width, row.first.size());
    std::ostringstream out;
    for (const auto& [label, value] : rows) {
        out << std::left << std::setw(static_cast<int>(width) + 2) << label << value << '\n';
    }
    return out.str();
}

std::string spider_prediction_lines(const std::vector<Prediction>& predictions,
                                    const ExampleBank& test_set, std::size_t trial) {
    std::unordered_map<std::string, const Prediction*> by_id;
    for (const auto& p : predictions) {
        if (p.trial == trial) by_id[p.query_id] = &p;
    }
    std::string out;
    for (const auto& test : test_set.examples()) {
        auto it = by_id.find(test.id);
        if (it == by_id.end()) {
            throw Error(ErrorKind::Join, "no prediction for query '" + test.id + "'");
        }
        // The format is line-oriented, so predictions are flattened to one line.
        out += normalize_whitespace(it->second->prediction);
        out += '\t';
        out += test.db_id;
        out += '\n';
    }
    return out;
}

std::string serialize_embedding_export(const std::vector<std::string>& ids,
                                       const std::vector<EmbeddingVector>& vectors) {
    if (ids.size() != vectors.size()) {
        throw Error(ErrorKind::Shape, "export ids and vectors differ in length");
    }
    std::string out;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        nlohmann::ordered_json rec;
        rec["id"] = ids[i];
        rec["model_id"] = vectors[i].model_id;
        rec["embedding"] = vectors[i].values;
        out += jsonl::dump_line(rec);
    }
    return out;
}

}  // namespace skillknn
