// Acceptance checks for the selection engine. One line per criterion;
// exit status is non-zero if any criterion fails.

#include "skillknn/error.hpp"
#include "skillknn/evaluation.hpp"
#include "skillknn/pipeline.hpp"
#include "skillknn/prompting.hpp"
#include "skillknn/selector.hpp"
#include "skillknn/util.hpp"

#include "support/fixtures.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

using namespace skillknn;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(double v, int digits = 3) {
    std::ostringstream s;
    s.setf(std::ios::fixed);
    s.precision(digits);
    s << v;
    return s.str();
}

std::vector<EmbeddingVector> random_set(std::mt19937_64& rng, std::size_t size, std::size_t dim) {
    std::vector<EmbeddingVector> out;
    for (std::size_t i = 0; i < size; ++i) out.push_back(testsupport::random_embedding(rng, dim));
    return out;
}

Outcome knn_oracle_equivalence() {
    std::mt19937_64 rng(1001);
    auto start = Clock::now();
    for (int trial = 0; trial < 100; ++trial) {
        std::size_t n = 10 + uniform_below(rng, 991);
        std::size_t dim = 8 + uniform_below(rng, 57);
        std::size_t k = 1 + uniform_below(rng, std::min<std::size_t>(n, 50));
        IndexedVectors bank;
        bank.ids = testsupport::numbered_ids("e", n);
        std::vector<std::vector<double>> raw;
        for (std::size_t i = 0; i < n; ++i) {
            // A few exact duplicates exercise the tie-break.
            if (i > 0 && uniform_below(rng, 20) == 0) {
                bank.vectors.push_back(bank.vectors[uniform_below(rng, i)]);
            } else {
                bank.vectors.push_back(testsupport::random_embedding(rng, dim));
            }
            raw.push_back(bank.vectors.back().values);
        }
        auto query = testsupport::random_embedding(rng, dim);
        auto got = select_knn("q", query, bank, k);
        auto want = testsupport::brute_force_knn(query.values, raw, bank.ids, k);
        if (got.ranked.size() != want.size()) return {false, "trial " + std::to_string(trial) + ": size"};
        for (std::size_t i = 0; i < want.size(); ++i) {
            if (got.ranked[i].example_id != want[i].example_id ||
                std::abs(got.ranked[i].score - want[i].score) > 1e-12) {
                return {false, "trial " + std::to_string(trial) + ": rank " + std::to_string(i) +
                                   " differs"};
            }
        }
    }
    double elapsed = seconds_since(start);
    return {elapsed < 10.0, "100 trials in " + fmt(elapsed) + " s"};
}

Outcome variant_reduction() {
    std::mt19937_64 rng(1002);
    for (int trial = 0; trial < 100; ++trial) {
        std::size_t n = 2 + uniform_below(rng, 100);
        std::size_t dim = 8 + uniform_below(rng, 57);
        std::size_t k = 1 + uniform_below(rng, n);
        std::vector<CandidateEmbeddings> bank;
        IndexedVectors plain;
        for (std::size_t i = 0; i < n; ++i) {
            auto v = testsupport::random_embedding(rng, dim);
            bank.push_back({"e" + std::to_string(i), {v}});
            plain.ids.push_back(bank.back().id);
            plain.vectors.push_back(v);
        }
        auto qv = testsupport::random_embedding(rng, dim);
        CandidateEmbeddings query{"q", {qv}};
        auto base = select_skill_knn(query, bank, SkillVariant::Base, k);
        auto cons = select_skill_knn(query, bank, SkillVariant::Consistency, k);
        auto dist = select_skill_knn(query, bank, SkillVariant::Distinctiveness, k);
        auto knn = select_knn("q", qv, plain, k);
        for (const auto* other : {&cons, &dist, &knn}) {
            if (other->ranked.size() != base.ranked.size()) return {false, "size mismatch"};
            for (std::size_t i = 0; i < base.ranked.size(); ++i) {
                if (other->ranked[i].example_id != base.ranked[i].example_id ||
                    std::abs(other->ranked[i].score - base.ranked[i].score) > 1e-12) {
                    return {false, "trial " + std::to_string(trial) + " rank " + std::to_string(i)};
                }
            }
        }
    }
    return {true, "100 singleton trials agree within 1e-12"};
}

Outcome set_similarity_properties() {
    std::mt19937_64 rng(1003);
    for (int trial = 0; trial < 200; ++trial) {
        std::size_t dim = 4 + uniform_below(rng, 29);
        auto a = random_set(rng, 1 + uniform_below(rng, 6), dim);
        auto b = random_set(rng, 1 + uniform_below(rng, 6), dim);
        const std::string at = "pair " + std::to_string(trial) + ": ";

        double cons = sim_consistency(a, b);
        double dist = sim_distinctiveness(a, b);
        auto pa = a, pb = b;
        portable_shuffle(pa, rng);
        portable_shuffle(pb, rng);
        if (sim_consistency(pa, pb) != cons) return {false, at + "consistency not permutation invariant"};
        if (sim_distinctiveness(pa, pb) != dist) return {false, at + "distinctiveness not permutation invariant"};

        auto grown_a = a;
        grown_a.push_back(testsupport::random_embedding(rng, dim));
        auto grown_b = b;
        grown_b.push_back(testsupport::random_embedding(rng, dim));
        if (sim_distinctiveness(grown_a, b) < dist || sim_distinctiveness(a, grown_b) < dist) {
            return {false, at + "distinctiveness decreased after adding a candidate"};
        }

        if (sim_distinctiveness(a, a) != 1.0) return {false, at + "self similarity != 1"};

        EmbeddingVector negated = a.front();
        for (auto& x : negated.values) x = -x;
        const std::vector<EmbeddingVector> cancel = {a.front(), negated};
        try {
            sim_consistency(cancel, b);
            return {false, at + "zero mean accepted"};
        } catch (const Error& e) {
            if (e.kind() != ErrorKind::DegenerateMean) return {false, at + "wrong error kind for zero mean"};
        }
    }
    return {true, "200 set pairs"};
}

struct SketchCase {
    std::string sql;
    std::set<std::string> keywords;
};

const std::vector<SketchCase> kSketchCases = {
    {"SELECT name FROM t WHERE age > 5", {"SELECT", "WHERE", ">"}},
    {"SELECT DISTINCT major FROM student", {"SELECT", "DISTINCT"}},
    {"SELECT count(*) FROM head WHERE age > 56", {"SELECT", "COUNT", "*", "WHERE", ">"}},
    {"SELECT team, count(*) FROM player GROUP BY team HAVING count(*) >= 2",
     {"SELECT", "COUNT", "*", "GROUP", "HAVING", ">", "="}},
    {"SELECT name FROM product ORDER BY price DESC LIMIT 1", {"SELECT", "ORDER", "DESC", "LIMIT"}},
    {"SELECT name FROM product ORDER BY price ASC", {"SELECT", "ORDER", "ASC"}},
    {"SELECT T1.name FROM player AS T1 JOIN team AS T2 ON T1.team = T2.id", {"SELECT", "JOIN", "="}},
    {"SELECT id FROM a INTERSECT SELECT id FROM b", {"SELECT", "INTERSECT"}},
    {"SELECT id FROM a EXCEPT SELECT id FROM b", {"SELECT", "EXCEPT"}},
    {"SELECT id FROM a UNION SELECT id FROM b", {"SELECT", "UNION"}},
    {"SELECT name FROM t WHERE id NOT IN (SELECT id FROM s)", {"SELECT", "WHERE", "NOT", "IN"}},
    {"SELECT name FROM t WHERE a = 1 OR b = 2", {"SELECT", "WHERE", "=", "OR"}},
    {"SELECT name FROM t WHERE a < 3 AND b != 4", {"SELECT", "WHERE", "<", "AND", "!", "="}},
    {"SELECT name FROM t WHERE v BETWEEN 1 AND 5", {"SELECT", "WHERE", "BETWEEN", "AND"}},
    {"SELECT name FROM t WHERE EXISTS (SELECT 1 FROM s WHERE s.id = t.id)",
     {"SELECT", "WHERE", "EXISTS", "="}},
    {"select name from t where name like 'a%'", {"SELECT", "WHERE", "LIKE"}},
    {"SELECT avg(age), min(age), max(age) FROM student", {"SELECT", "AVG", "MIN", "MAX"}},
    {"SELECT sum(price + tax) FROM orders", {"SELECT", "SUM", "+"}},
    {"SELECT budget - spent FROM dept_order WHERE rank_in > 0", {"SELECT", "-", "WHERE", ">"}},
    {"SELECT count(DISTINCT T2.name) FROM joined AS T1 JOIN t2 AS T2 ON T1.x <> T2.x GROUP BY T1.y",
     {"SELECT", "COUNT", "DISTINCT", "JOIN", "<", ">", "GROUP"}},
};

Outcome sketch_fidelity() {
    std::set<std::string> covered;
    for (const auto& c : kSketchCases) covered.insert(c.keywords.begin(), c.keywords.end());
    const auto& vocab = sketch_vocabulary();
    if (covered != std::set<std::string>(vocab.begin(), vocab.end())) {
        return {false, "hand labels do not cover the vocabulary"};
    }
    for (std::size_t i = 0; i < kSketchCases.size(); ++i) {
        if (sketch_keywords(kSketchCases[i].sql) != kSketchCases[i].keywords) {
            return {false, "keywords differ for case " + std::to_string(i + 1)};
        }
    }
    for (const auto& a : kSketchCases) {
        for (const auto& b : kSketchCases) {
            std::vector<std::string> common;
            std::set_intersection(a.keywords.begin(), a.keywords.end(), b.keywords.begin(),
                                  b.keywords.end(), std::back_inserter(common));
            if (sketch_similarity(a.sql, b.sql) != common.size()) {
                return {false, "similarity differs for '" + a.sql + "' vs '" + b.sql + "'"};
            }
        }
    }
    return {true, "20 labeled queries, " + std::to_string(vocab.size()) + " vocabulary items, 400 pairs"};
}

struct SkillRun {
    testsupport::SkillFixture fixture;
    std::vector<SelectionResult> base;
    std::vector<SelectionResult> raw;
    std::vector<SelectionResult> distinct;
    std::vector<SelectionResult> sketch;
    double elapsed = 0.0;
};

SkillRun run_skill_fixture() {
    SkillRun run;
    auto start = Clock::now();
    run.fixture = testsupport::make_skill_fixture(2024);
    auto& fx = run.fixture;

    SkillRewriter rewriter(fx.demos, fx.oracle_rewriter(), fx.skill_template);
    std::vector<QueryInput> inputs;
    for (const auto& ex : fx.bank.examples()) inputs.push_back(to_query(ex));
    auto queries = fx.queries();
    inputs.insert(inputs.end(), queries.begin(), queries.end());
    auto skill_sets = rewriter.generate_all(inputs, 5, 7, DecodingParams{}, 4);

    std::unordered_map<std::string, std::string> targets;
    for (const auto& ex : fx.test_set.examples()) targets[ex.id] = ex.target;

    EmbedderConfig embed_config;
    Embedder embedder(embed_config);
    SelectionInputs in;
    in.bank = &fx.bank;
    in.queries = &queries;
    in.skill_sets = &skill_sets;
    in.query_targets = &targets;
    in.embedder = &embedder;

    auto select = [&](Strategy strategy) {
        SelectionConfig config;
        config.k = 4;
        config.strategy = strategy;
        config.seed = 7;
        return select_all(in, config);
    };
    run.base = select(Strategy::SkillBase);
    run.raw = select(Strategy::KnnRaw);
    run.distinct = select(Strategy::SkillDistinctiveness);
    run.sketch = select(Strategy::OracleSketch);
    run.elapsed = seconds_since(start);
    return run;
}

Outcome skill_recovery(const SkillRun& run) {
    double base = testsupport::same_class_fraction(run.base, run.fixture.class_of);
    double raw = testsupport::same_class_fraction(run.raw, run.fixture.class_of);
    bool pass = base >= 0.9 && base - raw >= 0.2 && run.elapsed < 30.0 && run.base.size() == 50;
    return {pass, "skill_base " + fmt(base) + ", knn_raw " + fmt(raw) + ", " + fmt(run.elapsed) + " s"};
}

double mean_diversity(const std::vector<SelectionResult>& results, const ExampleBank& bank) {
    double total = 0.0;
    for (const auto& r : results) {
        std::vector<Example> selected;
        for (const auto& s : r.ranked) selected.push_back(bank.at(s.example_id));
        total += static_cast<double>(diversity_distinct_dbs(selected));
    }
    return results.empty() ? 0.0 : total / static_cast<double>(results.size());
}

Outcome diversity_direction(const SkillRun& run) {
    double distinct = mean_diversity(run.distinct, run.fixture.bank);
    double sketch = mean_diversity(run.sketch, run.fixture.bank);
    return {distinct >= sketch,
            "skill_distinctiveness " + fmt(distinct) + " distinct dbs, oracle_sketch " + fmt(sketch)};
}

Outcome recall_cases() {
    const std::vector<std::string> unanimous(100, "SELECT a");
    if (!recall_at_n(unanimous, 1, "SELECT a")) return {false, "unanimous target missed"};
    if (recall_at_n({"a", "a", "b"}, 1, "b")) return {false, "[a,a,b] n=1 should miss b"};
    if (!recall_at_n({"a", "a", "b"}, 2, "b")) return {false, "[a,a,b] n=2 should hit b"};
    for (std::size_t n : {1, 2, 5, 100}) {
        if (recall_at_n({"a", "a", "b"}, n, "c")) return {false, "absent target reported"};
    }
    std::mt19937_64 rng(1007);
    const std::vector<std::string> forms = {"p", "q", "r", "s ;", "s", "t"};
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<std::string> samples(1 + uniform_below(rng, 30));
        for (auto& s : samples) s = forms[uniform_below(rng, forms.size())];
        const auto& target = forms[uniform_below(rng, forms.size())];
        bool previous = false;
        for (std::size_t n = 1; n <= forms.size() + 1; ++n) {
            bool hit = recall_at_n(samples, n, target);
            if (previous && !hit) return {false, "not monotone in trial " + std::to_string(trial)};
            previous = hit;
        }
    }
    return {true, "hand cases and 100 random multisets"};
}

std::string shell_quote(const std::string& s) {
    std::string out = "'";
    for (char c : s) {
        if (c == '\'') {
            out += "'\\''";
        } else {
            out += c;
        }
    }
    return out + "'";
}

bool run_cli_pipeline(const fs::path& cache, const fs::path& out, const std::string& extra = "") {
    std::string cmd = shell_quote(SKILLKNN_CLI_PATH) + " pipeline --quiet --config " +
                      shell_quote((fs::path(SKILLKNN_SOURCE_DIR) / "tests/data/pipeline/config.json").string()) +
                      " --cache-dir " + shell_quote(cache.string()) + " --out-dir " +
                      shell_quote(out.string()) + " " + extra + " > /dev/null 2>&1";
    return std::system(cmd.c_str()) == 0;
}

Outcome end_to_end_determinism() {
    testsupport::TempDir dir;
    const std::vector<std::pair<std::string, std::string>> runs = {
        {"cache-a", "out-1"}, {"cache-b", "out-2"}, {"cache-a", "out-3"}};
    for (const auto& [cache, out] : runs) {
        if (!run_cli_pipeline(dir / cache, dir / out)) return {false, "pipeline run into " + out + " failed"};
    }
    for (const std::string file : {"predictions.jsonl", "report.json"}) {
        const auto first = read_file(dir / "out-1" / file);
        if (first.empty()) return {false, file + " is empty"};
        for (const std::string other : {"out-2", "out-3"}) {
            if (read_file(dir / other / file) != first) return {false, file + " differs in " + other};
        }
    }
    return {true, "3 runs (fresh, fresh, reused cache) byte-identical"};
}

Outcome prompt_ordering(const SkillRun& run) {
    const auto tmpl = default_template("text-to-sql", TemplateRole::Answer);
    const auto queries = run.fixture.queries();
    std::size_t checked = 0;
    for (const auto* results : {&run.base, &run.raw}) {
        for (const auto& selection : *results) {
            const auto& query = *std::find_if(queries.begin(), queries.end(),
                                              [&](const QueryInput& q) { return q.id == selection.query_id; });
            auto spec = assemble_prompt(selection, run.fixture.bank, query, DecodingParams{}, tmpl);
            const auto& top = run.fixture.bank.at(selection.ranked.front().example_id);
            const auto tail = tmpl.render_block(top.question, top.schema, top.target) + tmpl.separator +
                              tmpl.render_query(query.question, query.schema);
            if (spec.rendered.size() < tail.size() ||
                spec.rendered.compare(spec.rendered.size() - tail.size(), tail.size(), tail) != 0) {
                return {false, "top example not adjacent to query " + selection.query_id};
            }
            ++checked;
        }
    }
    return {true, std::to_string(checked) + " prompts inspected"};
}

Outcome random_averaging() {
    testsupport::TempDir dir;
    const std::string flags = "--strategy random --trials 3 --seed 11";
    if (!run_cli_pipeline(dir / "cache-1", dir / "out-1", flags) ||
        !run_cli_pipeline(dir / "cache-2", dir / "out-2", flags)) {
        return {false, "random pipeline run failed"};
    }
    auto first = report_from_json(nlohmann::json::parse(read_file(dir / "out-1/report.json")));
    auto second = report_from_json(nlohmann::json::parse(read_file(dir / "out-2/report.json")));
    if (first.per_trial_rates.size() != 3) return {false, "expected 3 per-trial rates"};
    if (first.per_trial_rates != second.per_trial_rates) return {false, "per-trial rates differ"};
    if (first.exact_match_rate != second.exact_match_rate) return {false, "mean rate differs"};
    double mean = (first.per_trial_rates[0] + first.per_trial_rates[1] + first.per_trial_rates[2]) / 3.0;
    if (std::abs(mean - first.exact_match_rate) > 1e-12) return {false, "headline is not the trial mean"};
    return {true, "per-trial " + fmt(first.per_trial_rates[0]) + "/" + fmt(first.per_trial_rates[1]) + "/" +
                      fmt(first.per_trial_rates[2]) + ", mean " + fmt(first.exact_match_rate)};
}

Outcome guarded(const std::function<Outcome()>& check) {
    try {
        return check();
    } catch (const std::exception& e) {
        return {false, std::string("exception: ") + e.what()};
    }
}

}  // namespace

int main() {
    std::optional<SkillRun> skill_run;
    auto skill = [&]() -> const SkillRun& {
        if (!skill_run) skill_run = run_skill_fixture();
        return *skill_run;
    };

    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
        {"KNN matches brute-force scan", knn_oracle_equivalence},
        {"singleton candidate sets reduce to base ranking", variant_reduction},
        {"set similarity algebraic properties", set_similarity_properties},
        {"sketch keywords match hand labels", sketch_fidelity},
        {"skill-based selection recovers latent skills", [&] { return skill_recovery(skill()); }},
        {"distinctiveness diversity >= sketch oracle", [&] { return diversity_direction(skill()); }},
        {"recall@N hand cases and monotonicity", recall_cases},
        {"pipeline outputs are byte-identical across runs", end_to_end_determinism},
        {"top-scoring example sits next to the query", [&] { return prompt_ordering(skill()); }},
        {"random baseline trial rates reproduce", random_averaging},
    };

    int failures = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        auto outcome = guarded(criteria[i].second);
        failures += outcome.pass ? 0 : 1;
        std::cout << (outcome.pass ? "[PASS] " : "[FAIL] ") << (i + 1) << ". " << criteria[i].first << " ("
                  << outcome.detail << ")" << std::endl;
    }
    std::cout << (criteria.size() - failures) << "/" << criteria.size() << " criteria passed" << std::endl;
    return failures == 0 ? 0 : 1;
}
