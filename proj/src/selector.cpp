#include "skillknn/selector.hpp"

#include "skillknn/error.hpp"
#include "skillknn/jsonl.hpp"
#include "skillknn/util.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

namespace skillknn {

namespace {

struct StrategyName {
    Strategy strategy;
    std::string_view name;
};

constexpr StrategyName kStrategyNames[] = {
    {Strategy::Random, "random"},
    {Strategy::KnnRaw, "knn_raw"},
    {Strategy::SkillBase, "skill_base"},
    {Strategy::SkillConsistency, "skill_consistency"},
    {Strategy::SkillDistinctiveness, "skill_distinctiveness"},
    {Strategy::OracleTargetKnn, "oracle_target_knn"},
    {Strategy::OracleSketch, "oracle_sketch"},
};

}  // namespace

std::string_view to_string(Strategy strategy) {
    for (const auto& entry : kStrategyNames) {
        if (entry.strategy == strategy) return entry.name;
    }
    return "unknown";
}

Strategy parse_strategy(std::string_view name) {
    for (const auto& entry : kStrategyNames) {
        if (entry.name == name) return entry.strategy;
    }
    throw Error(ErrorKind::Config, "unknown strategy '" + std::string(name) + "'");
}

bool uses_skills(Strategy strategy) {
    return strategy == Strategy::SkillBase || strategy == Strategy::SkillConsistency ||
           strategy == Strategy::SkillDistinctiveness;
}

void SelectionConfig::validate(std::size_t bank_size) const {
    if (k == 0) throw Error(ErrorKind::Config, "k must be at least 1");
    if (k > bank_size) {
        throw Error(ErrorKind::Config, "k = " + std::to_string(k) + " exceeds bank size " +
                                           std::to_string(bank_size));
    }
    if (trials == 0) throw Error(ErrorKind::Config, "trials must be at least 1");
}

SelectionResult rank_top_k(std::string query_id, Strategy strategy, std::span<const double> scores,
                           const std::vector<std::string>& ids, std::size_t k) {
    if (scores.size() != ids.size()) {
        throw Error(ErrorKind::Shape, "score count does not match id count");
    }
    if (k > ids.size()) {
        throw Error(ErrorKind::Config, "k = " + std::to_string(k) + " exceeds bank size " +
                                           std::to_string(ids.size()));
    }
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (!std::isfinite(scores[i])) {
            throw Error(ErrorKind::Data, "non-finite score for example '" + ids[i] + "'");
        }
    }

    std::vector<std::size_t> order(ids.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    auto better = [&](std::size_t a, std::size_t b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return a < b;
    };
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                      better);

    SelectionResult result;
    result.query_id = std::move(query_id);
    result.strategy = strategy;
    result.ranked.reserve(k);
    for (std::size_t r = 0; r < k; ++r) {
        result.ranked.push_back(ScoredExample{ids[order[r]], scores[order[r]]});
    }
    for (auto it = result.ranked.rbegin(); it != result.ranked.rend(); ++it) {
        result.prompt_order.push_back(it->example_id);
    }
    return result;
}

std::vector<SelectionResult> select_random(const ExampleBank& bank, const SelectionConfig& config,
                                           const std::string& query_id) {
    config.validate(bank.size());
    const std::string key = content_key({"random", std::to_string(config.seed), query_id});
    std::mt19937_64 rng(std::stoull(key.substr(0, 16), nullptr, 16));

    const auto ids = bank.ids();
    std::vector<SelectionResult> trials;
    trials.reserve(config.trials);
    for (std::size_t t = 0; t < config.trials; ++t) {
        // Partial Fisher-Yates: the first k slots become a uniform k-subset.
        std::vector<std::size_t> pool(bank.size());
        std::iota(pool.begin(), pool.end(), std::size_t{0});
        for (std::size_t i = 0; i < config.k; ++i) {
            auto j = i + static_cast<std::size_t>(uniform_below(rng, pool.size() - i));
            std::swap(pool[i], pool[j]);
        }
        std::vector<std::size_t> chosen(pool.begin(),
                                        pool.begin() + static_cast<std::ptrdiff_t>(config.k));
        std::sort(chosen.begin(), chosen.end());

        SelectionResult result;
        result.query_id = query_id;
        result.strategy = Strategy::Random;
        result.trial = t;
        for (std::size_t index : chosen) result.ranked.push_back(ScoredExample{ids[index], 0.0});
        for (auto it = result.ranked.rbegin(); it != result.ranked.rend(); ++it) {
            result.prompt_order.push_back(it->example_id);
        }
        trials.push_back(std::move(result));
    }
    return trials;
}

SelectionResult select_knn(const std::string& query_id, const EmbeddingVector& query,
                           const IndexedVectors& bank, std::size_t k, Strategy strategy) {
    if (bank.ids.size() != bank.vectors.size()) {
        throw Error(ErrorKind::Shape, "bank ids and vectors differ in length");
    }
    std::vector<double> scores(bank.vectors.size());
    for (std::size_t i = 0; i < bank.vectors.size(); ++i) {
        try {
            scores[i] = cosine_similarity(query, bank.vectors[i]);
        } catch (const Error& e) {
            throw e.with_context("example '" + bank.ids[i] + "'");
        }
    }
    return rank_top_k(query_id, strategy, scores, bank.ids, k);
}

namespace {

std::vector<double> order_free_mean(std::span<const EmbeddingVector> set) {
    if (set.empty()) throw Error(ErrorKind::Input, "candidate set is empty");
    const std::size_t dim = set.front().dim();
    std::vector<double> mean(dim, 0.0);
    std::vector<double> column(set.size());
    for (std::size_t d = 0; d < dim; ++d) {
        for (std::size_t j = 0; j < set.size(); ++j) {
            if (set[j].dim() != dim) {
                throw Error(ErrorKind::Shape, "candidate vectors differ in dimension");
            }
            column[j] = set[j].values[d];
        }
        std::sort(column.begin(), column.end());
        double sum = 0.0;
        for (double v : column) sum += v;
        mean[d] = sum / static_cast<double>(set.size());
    }
    return mean;
}

bool all_zero(const std::vector<double>& v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return x == 0.0; });
}

}  // namespace

double sim_consistency(std::span<const EmbeddingVector> query_set,
                       std::span<const EmbeddingVector> example_set) {
    auto query_mean = order_free_mean(query_set);
    auto example_mean = order_free_mean(example_set);
    if (all_zero(query_mean) || all_zero(example_mean)) {
        throw Error(ErrorKind::DegenerateMean, "mean candidate embedding is the zero vector");
    }
    return cosine_similarity(query_mean, example_mean);
}

double sim_distinctiveness(std::span<const EmbeddingVector> query_set,
                           std::span<const EmbeddingVector> example_set) {
    if (query_set.empty() || example_set.empty()) {
        throw Error(ErrorKind::Input, "candidate set is empty");
    }
    double best = -std::numeric_limits<double>::infinity();
    for (const auto& q : query_set) {
        for (const auto& e : example_set) best = std::max(best, cosine_similarity(q, e));
    }
    return best;
}

Strategy strategy_of(SkillVariant variant) {
    switch (variant) {
        case SkillVariant::Base: return Strategy::SkillBase;
        case SkillVariant::Consistency: return Strategy::SkillConsistency;
        case SkillVariant::Distinctiveness: return Strategy::SkillDistinctiveness;
    }
    return Strategy::SkillBase;
}

SelectionResult select_skill_knn(const CandidateEmbeddings& query,
                                 std::span<const CandidateEmbeddings> bank, SkillVariant variant,
                                 std::size_t k) {
    if (query.candidates.empty()) {
        throw Error(ErrorKind::Input, "query '" + query.id + "' has no skill candidates");
    }
    std::vector<std::string> ids;
    std::vector<double> scores;
    ids.reserve(bank.size());
    scores.reserve(bank.size());
    for (const auto& example : bank) {
        ids.push_back(example.id);
        if (example.candidates.empty()) {
            throw Error(ErrorKind::Input, "example '" + example.id + "' has no skill candidates");
        }
        try {
            switch (variant) {
                case SkillVariant::Base:
                    scores.push_back(
                        cosine_similarity(query.candidates.front(), example.candidates.front()));
                    break;
                case SkillVariant::Consistency:
                    scores.push_back(sim_consistency(query.candidates, example.candidates));
                    break;
                case SkillVariant::Distinctiveness:
                    scores.push_back(sim_distinctiveness(query.candidates, example.candidates));
                    break;
            }
        } catch (const Error& e) {
            throw e.with_context("query '" + query.id + "' vs example '" + example.id + "'");
        }
    }
    return rank_top_k(query.id, strategy_of(variant), scores, ids, k);
}

const std::vector<std::string>& sketch_vocabulary() {
    static const std::vector<std::string> vocabulary = {
        "SELECT", "WHERE",   "GROUP", "HAVING", "ORDER",    "DESC",  "ASC",   "LIMIT",
        "JOIN",   "INTERSECT", "EXCEPT", "UNION", "NOT",    "IN",    "OR",    "AND",
        "BETWEEN", "EXISTS", "LIKE",  "DISTINCT", "COUNT",  "AVG",   "MIN",   "MAX",
        "SUM",    "*",       "=",     ">",      "<",        "!",     "+",     "-",
    };
    return vocabulary;
}

namespace {

bool is_word_char(unsigned char c) { return std::isalnum(c) != 0 || c == '_'; }

bool is_vocabulary_word(const std::string& upper) {
    const auto& vocab = sketch_vocabulary();
    return std::find(vocab.begin(), vocab.end(), upper) != vocab.end();
}

}  // namespace

std::set<std::string> sketch_keywords(std::string_view sql) {
    static const std::string kSymbols = "*=><!+-";
    std::set<std::string> found;
    std::string word;
    auto flush = [&] {
        if (!word.empty() && is_vocabulary_word(word)) found.insert(word);
        word.clear();
    };
    for (unsigned char c : sql) {
        if (is_word_char(c)) {
            word.push_back(static_cast<char>(std::toupper(c)));
            continue;
        }
        flush();
        if (kSymbols.find(static_cast<char>(c)) != std::string::npos) {
            found.insert(std::string(1, static_cast<char>(c)));
        }
    }
    flush();
    return found;
}

std::size_t sketch_similarity(std::string_view a, std::string_view b) {
    auto ka = sketch_keywords(a);
    auto kb = sketch_keywords(b);
    std::size_t shared = 0;
    for (const auto& w : ka) shared += kb.count(w);
    return shared;
}

SelectionResult select_oracle_sketch(const ExampleBank& bank, const std::string& query_id,
                                     std::string_view query_target, std::size_t k) {
    const auto query_keywords = sketch_keywords(query_target);
    std::vector<double> scores;
    scores.reserve(bank.size());
    for (const auto& ex : bank.examples()) {
        auto keywords = sketch_keywords(ex.target);
        std::size_t shared = 0;
        for (const auto& w : query_keywords) shared += keywords.count(w);
        scores.push_back(static_cast<double>(shared));
    }
    return rank_top_k(query_id, Strategy::OracleSketch, scores, bank.ids(), k);
}

SelectionResult select_oracle_target_knn(
    const ExampleBank& bank, const std::string& query_id,
    const std::unordered_map<std::string, EmbeddingVector>& target_vectors, std::size_t k) {
    auto find = [&](const std::string& id) -> const EmbeddingVector& {
        auto it = target_vectors.find(id);
        if (it == target_vectors.end()) {
            throw Error(ErrorKind::Data, "missing target embedding for '" + id + "'");
        }
        return it->second;
    };
    const auto& query = find(query_id);
    IndexedVectors indexed;
    indexed.ids = bank.ids();
    indexed.vectors.reserve(bank.size());
    for (const auto& id : indexed.ids) indexed.vectors.push_back(find(id));
    return select_knn(query_id, query, indexed, k, Strategy::OracleTargetKnn);
}

SelectionResult select_oracle(
    const ExampleBank& bank, const std::string& query_id, std::string_view query_target,
    OracleMode mode, std::size_t k,
    const std::unordered_map<std::string, EmbeddingVector>* target_vectors) {
    if (mode == OracleMode::Sketch) return select_oracle_sketch(bank, query_id, query_target, k);
    if (!target_vectors) {
        throw Error(ErrorKind::Data, "target-KNN oracle needs target embeddings for '" + query_id + "'");
    }
    return select_oracle_target_knn(bank, query_id, *target_vectors, k);
}

std::string serialize_selections(const std::vector<SelectionResult>& results) {
    std::string out;
    for (const auto& r : results) {
        nlohmann::ordered_json rec;
        rec["query_id"] = r.query_id;
        rec["strategy"] = std::string(to_string(r.strategy));
        rec["trial"] = r.trial;
        auto ranked = nlohmann::ordered_json::array();
        for (const auto& s : r.ranked) {
            nlohmann::ordered_json item;
            item["id"] = s.example_id;
            item["score"] = s.score;
            ranked.push_back(std::move(item));
        }
        rec["ranked"] = std::move(ranked);
        rec["prompt_order"] = r.prompt_order;
        out += jsonl::dump_line(rec);
    }
    return out;
}

std::vector<SelectionResult> parse_selections(std::string_view contents, std::string_view source) {
    std::vector<SelectionResult> results;
    jsonl::for_each_record(contents, source, [&](const nlohmann::json& rec, std::size_t line) {
        try {
            SelectionResult r;
            r.query_id = rec.at("query_id").get<std::string>();
            r.strategy = parse_strategy(rec.at("strategy").get<std::string>());
            r.trial = rec.value("trial", std::size_t{0});
            for (const auto& item : rec.at("ranked")) {
                r.ranked.push_back(
                    ScoredExample{item.at("id").get<std::string>(), item.at("score").get<double>()});
            }
            r.prompt_order = rec.at("prompt_order").get<std::vector<std::string>>();
            std::vector<std::string> reversed;
            for (auto it = r.ranked.rbegin(); it != r.ranked.rend(); ++it) {
                reversed.push_back(it->example_id);
            }
            if (reversed != r.prompt_order) {
                throw Error(ErrorKind::Parse, "prompt_order is not the reverse of ranked");
            }
            results.push_back(std::move(r));
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorKind::Parse,
                        std::string(source) + ":" + std::to_string(line) + ": " + e.what());
        } catch (const Error& e) {
            throw Error(ErrorKind::Parse,
                        std::string(source) + ":" + std::to_string(line) + ": " + e.detail());
        }
    });
    return results;
}

void save_selections(const std::vector<SelectionResult>& results,
                     const std::filesystem::path& path) {
    write_file_atomic(path, serialize_selections(results));
}

std::vector<SelectionResult> load_selections(const std::filesystem::path& path) {
    return parse_selections(read_file(path), path.string());
}

}  // namespace skillknn
