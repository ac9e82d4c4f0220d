#include "fixtures.hpp"

#include "skillknn/util.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <stdexcept>

namespace testsupport {

namespace fs = std::filesystem;
using namespace skillknn;

TempDir::TempDir() {
    static std::atomic<int> counter{0};
    auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
    path_ = fs::temp_directory_path() /
            ("skillknn-test-" + std::to_string(stamp) + "-" + std::to_string(counter++));
    fs::create_directories(path_);
}

TempDir::~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    out << text;
}

std::vector<double> random_vector(std::mt19937_64& rng, std::size_t dim) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::vector<double> v(dim);
    double norm = 0.0;
    do {
        norm = 0.0;
        for (auto& x : v) {
            x = gauss(rng);
            norm += x * x;
        }
    } while (norm < 1e-6);
    return v;
}

EmbeddingVector random_embedding(std::mt19937_64& rng, std::size_t dim) {
    return EmbeddingVector{random_vector(rng, dim), "test"};
}

std::vector<ScoredExample> brute_force_knn(const std::vector<double>& query,
                                           const std::vector<std::vector<double>>& bank,
                                           const std::vector<std::string>& ids, std::size_t k) {
    auto cosine = [](const std::vector<double>& a, const std::vector<double>& b) {
        double dot = 0, na = 0, nb = 0;
        for (std::size_t i = 0; i < a.size(); ++i) {
            dot += a[i] * b[i];
            na += a[i] * a[i];
            nb += b[i] * b[i];
        }
        return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
    };
    std::vector<std::pair<double, std::size_t>> all;
    for (std::size_t i = 0; i < bank.size(); ++i) all.emplace_back(cosine(query, bank[i]), i);
    std::sort(all.begin(), all.end(), [](const auto& x, const auto& y) {
        if (x.first != y.first) return x.first > y.first;
        return x.second < y.second;
    });
    std::vector<ScoredExample> out;
    for (std::size_t i = 0; i < k; ++i) out.push_back({ids[all[i].second], all[i].first});
    return out;
}

std::vector<std::string> numbered_ids(const std::string& prefix, std::size_t n) {
    std::vector<std::string> ids;
    for (std::size_t i = 0; i < n; ++i) ids.push_back(prefix + std::to_string(i));
    return ids;
}

ExampleBank placeholder_bank(std::size_t n, const std::string& prefix) {
    std::vector<Example> examples;
    for (const auto& id : numbered_ids(prefix, n)) {
        examples.push_back(Example{id, "question " + id, "", "SELECT " + id, ""});
    }
    return ExampleBank(std::move(examples), "text-to-sql");
}

namespace {

const std::vector<std::string> kClassPhrase = {
    "list unique",      "count different",  "tally per",     "range extremes",
    "sorted descending", "starting pattern", "within interval", "never having",
    "either combined",  "single smallest",
};

const std::vector<std::string> kClassOps = {
    "select distinct values in one column",
    "count the number of distinct values in one column",
    "group the selections and count the number of selections in each group",
    "return the minimum value, the maximum value and the average of values in one column",
    "select two columns and sort them in descending order by one column",
    "select one column and apply a constraint on the format of values",
    "select one column and apply a constraint that values lie in a certain range",
    "apply a non-inclusion constraint with another set of selections",
    "return the union of two sets of selections",
    "sort the selections in ascending order and select the top result",
};

const std::vector<std::string> kSkillPrefix = {
    "To solve this task in the database, we need to ",
    "To solve this task on the database, we need to ",
    "For this task we have to ",
};

const std::vector<std::string> kClassTarget = {
    "SELECT DISTINCT name FROM t1",
    "SELECT COUNT(DISTINCT name) FROM t1",
    "SELECT name, COUNT(*) FROM t1 GROUP BY name",
    "SELECT MIN(v), MAX(v), AVG(v) FROM t1",
    "SELECT name, v FROM t1 ORDER BY v DESC",
    "SELECT name FROM t1 WHERE name LIKE '2%'",
    "SELECT name FROM t1 WHERE v BETWEEN 1 AND 5",
    "SELECT name FROM t1 WHERE id NOT IN (SELECT id FROM t2)",
    "SELECT name FROM t1 UNION SELECT name FROM t2",
    "SELECT name FROM t1 ORDER BY v ASC LIMIT 1",
};

constexpr std::size_t kEntityVocab = 6;
constexpr std::size_t kEntityTokens = 8;

std::string entity_token(std::size_t cluster, std::size_t j) {
    return "k" + std::to_string(cluster) + "v" + std::to_string(j);
}

std::string target_for(std::size_t cls, std::size_t cluster) {
    std::string target = kClassTarget[cls];
    if (cluster % 2 == 1) {
        auto pos = target.find("FROM t1");
        target.replace(pos, 7, "FROM t1 JOIN t2 ON t1.id = t2.id");
    }
    return target;
}

std::string schema_for(std::size_t cluster) {
    std::string schema = "t1 [id, name, v]\nt2 [id, name]";
    for (std::size_t extra = 0; extra < cluster % 3; ++extra) {
        schema += "\nt" + std::to_string(3 + extra) + " [id]";
    }
    return schema;
}

}  // namespace

std::string SkillFixture::skill_text(std::size_t cls, std::size_t variant) {
    return kSkillPrefix[variant % kSkillPrefix.size()] + kClassOps[cls] + ".";
}

std::vector<QueryInput> SkillFixture::queries() const {
    std::vector<QueryInput> out;
    for (const auto& ex : test_set.examples()) out.push_back(to_query(ex));
    return out;
}

std::shared_ptr<MockBackend> SkillFixture::oracle_rewriter() const {
    std::string identity_prefix;
    for (const auto& d : demos.demos) {
        identity_prefix += skill_template.render_block(d.question, d.schema, d.skill);
        identity_prefix += skill_template.separator;
    }
    auto classes_by_question = class_of_question;
    auto backend = std::make_shared<MockBackend>("oracle-rewriter");
    backend->with_responder([identity_prefix, classes_by_question](const std::string& prompt,
                                                                   std::size_t) {
        auto pos = prompt.rfind("Question: ");
        if (pos == std::string::npos) throw std::runtime_error("no question in prompt");
        pos += 10;
        auto end = prompt.find('\n', pos);
        auto question = prompt.substr(pos, end - pos);
        auto it = classes_by_question.find(question);
        if (it == classes_by_question.end()) {
            throw std::runtime_error("unknown question: " + question);
        }
        std::size_t variant = 0;
        if (prompt.compare(0, identity_prefix.size(), identity_prefix) != 0) {
            variant = 1 + std::stoul(sha256_hex(prompt).substr(0, 8), nullptr, 16) % 2;
        }
        return SkillFixture::skill_text(it->second, variant);
    });
    return backend;
}

SkillFixture make_skill_fixture(std::uint64_t seed, std::size_t bank_size, std::size_t query_count) {
    SkillFixture fx;
    fx.skill_template = default_template("text-to-sql", TemplateRole::Skill);
    std::mt19937_64 rng(seed);
    std::set<std::string> seen;

    auto make_example = [&](const std::string& id, std::size_t cls) {
        std::size_t cluster = uniform_below(rng, fx.clusters);
        std::string question;
        do {
            question = kClassPhrase[cls];
            for (std::size_t t = 0; t < kEntityTokens; ++t) {
                question += " " + entity_token(cluster, uniform_below(rng, kEntityVocab));
            }
        } while (!seen.insert(question).second);
        fx.class_of[id] = cls;
        fx.class_of_question[question] = cls;
        return Example{id, question, schema_for(cluster), target_for(cls, cluster),
                       "db" + std::to_string(cluster)};
    };

    std::vector<Example> bank;
    for (std::size_t i = 0; i < bank_size; ++i) {
        bank.push_back(make_example("b" + std::to_string(i), i % fx.classes));
    }
    std::vector<Example> tests;
    for (std::size_t i = 0; i < query_count; ++i) {
        tests.push_back(make_example("q" + std::to_string(i), uniform_below(rng, fx.classes)));
    }
    fx.bank = ExampleBank(std::move(bank), "text-to-sql");
    fx.test_set = ExampleBank(std::move(tests), "text-to-sql");

    fx.demos.task_tag = "text-to-sql";
    for (std::size_t c = 0; c < fx.classes; ++c) {
        std::string question = kClassPhrase[c] + " demo" + std::to_string(c);
        fx.class_of_question[question] = c;
        fx.demos.demos.push_back({question, "", SkillFixture::skill_text(c, 0)});
    }
    return fx;
}

double same_class_fraction(const std::vector<SelectionResult>& results,
                           const std::unordered_map<std::string, std::size_t>& class_of) {
    if (results.empty()) return 0.0;
    double total = 0.0;
    for (const auto& r : results) {
        std::size_t hits = 0;
        for (const auto& s : r.ranked) hits += class_of.at(s.example_id) == class_of.at(r.query_id);
        total += static_cast<double>(hits) / static_cast<double>(r.ranked.size());
    }
    return total / static_cast<double>(results.size());
}

}  // namespace testsupport
