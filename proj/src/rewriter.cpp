#include "skillknn/rewriter.hpp"

#include "skillknn/error.hpp"
#include "skillknn/jsonl.hpp"
#include "skillknn/util.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

namespace skillknn {

DemonstrationSet parse_demonstrations(std::string_view contents, std::string task_tag,
                                      std::string_view source) {
    DemonstrationSet set{{}, std::move(task_tag)};
    jsonl::for_each_record(contents, source, [&](const nlohmann::json& rec, std::size_t line) {
        try {
            AnnotatedDemonstration demo{jsonl::required_string(rec, "question"),
                                        jsonl::optional_string(rec, "schema"),
                                        jsonl::required_string(rec, "skill")};
            if (trim(demo.skill).empty()) {
                throw Error(ErrorKind::Parse, "field 'skill' is empty");
            }
            set.demos.push_back(std::move(demo));
        } catch (const Error& e) {
            throw Error(ErrorKind::Parse,
                        std::string(source) + ":" + std::to_string(line) + ": " + e.detail());
        }
    });
    if (set.demos.empty()) {
        throw Error(ErrorKind::Validation, std::string(source) + ": demonstration set is empty");
    }
    return set;
}

DemonstrationSet load_demonstrations(const std::filesystem::path& path, std::string task_tag) {
    return parse_demonstrations(read_file(path), std::move(task_tag), path.string());
}

bool is_permutation_of_range(const Permutation& permutation, std::size_t n) {
    if (permutation.size() != n) return false;
    std::vector<bool> seen(n, false);
    for (std::size_t i : permutation) {
        if (i >= n || seen[i]) return false;
        seen[i] = true;
    }
    return true;
}

Permutation identity_permutation(std::size_t n) {
    Permutation p(n);
    std::iota(p.begin(), p.end(), std::size_t{0});
    return p;
}

std::optional<std::string> SkillCandidateSet::identity_skill() const {
    for (const auto& c : candidates) {
        if (c.permutation == identity_permutation(c.permutation.size())) return c.skill;
    }
    return std::nullopt;
}

std::vector<std::string> SkillCandidateSet::skills() const {
    std::vector<std::string> out;
    out.reserve(candidates.size());
    for (const auto& c : candidates) out.push_back(c.skill);
    return out;
}

std::string build_rewrite_prompt(const DemonstrationSet& demos, const Permutation& permutation,
                                 std::string_view question, std::string_view schema,
                                 const PromptTemplate& tmpl) {
    if (!is_permutation_of_range(permutation, demos.size())) {
        throw Error(ErrorKind::Input, "invalid permutation of " + std::to_string(demos.size()) +
                                          " demonstrations");
    }
    std::string prompt;
    for (std::size_t index : permutation) {
        const auto& demo = demos.demos[index];
        prompt += tmpl.render_block(demo.question, demo.schema, demo.skill);
        prompt += tmpl.separator;
    }
    prompt += tmpl.render_query(question, schema);
    return prompt;
}

GenerationCache::GenerationCache(std::filesystem::path dir) : file_(dir / "generations.jsonl") {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw Error(ErrorKind::Io, "cannot create cache directory " + dir.string());
    if (!std::filesystem::exists(file_)) return;
    std::string raw = read_file(file_);
    auto contents = jsonl::complete_lines(raw);
    if (contents.size() != raw.size()) write_file_atomic(file_, contents);
    jsonl::for_each_record(contents, file_.string(), [&](const nlohmann::json& rec, std::size_t) {
        entries_.insert_or_assign(rec.at("key").get<std::string>(),
                                  GenerationRecord{rec.at("completion").get<std::string>(),
                                                   rec.at("model_id").get<std::string>(),
                                                   rec.value("timestamp", std::string())});
    });
}

std::string GenerationCache::key_for(std::string_view prompt, std::string_view model_id,
                                     double temperature) {
    std::ostringstream t;
    t << std::setprecision(17) << temperature;
    return content_key({"generation", prompt, model_id, t.str()});
}

std::optional<GenerationRecord> GenerationCache::lookup(const std::string& key) const {
    std::lock_guard lock(mutex_);
    auto it = entries_.find(key);
    if (it == entries_.end()) return std::nullopt;
    return it->second;
}

void GenerationCache::store(const std::string& key, const GenerationRecord& record) {
    std::lock_guard lock(mutex_);
    if (!entries_.emplace(key, record).second) return;
    if (file_.empty()) return;
    nlohmann::ordered_json rec;
    rec["key"] = key;
    rec["model_id"] = record.model_id;
    rec["timestamp"] = record.timestamp;
    rec["completion"] = record.completion;
    std::ofstream out(file_, std::ios::binary | std::ios::app);
    out << jsonl::dump_line(rec);
    if (!out) throw Error(ErrorKind::Io, "cannot append to " + file_.string());
}

std::size_t GenerationCache::size() const {
    std::lock_guard lock(mutex_);
    return entries_.size();
}

std::string utc_timestamp() {
    auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    std::ostringstream out;
    out << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return out.str();
}

SkillRewriter::SkillRewriter(DemonstrationSet demos, std::shared_ptr<CompletionBackend> backend,
                             PromptTemplate tmpl, std::shared_ptr<GenerationCache> cache,
                             Clock clock)
    : demos_(std::move(demos)),
      backend_(std::move(backend)),
      template_(std::move(tmpl)),
      cache_(std::move(cache)),
      clock_(std::move(clock)) {
    if (demos_.demos.empty()) throw Error(ErrorKind::Validation, "demonstration set is empty");
    if (!backend_) throw Error(ErrorKind::Config, "rewriter needs a completion backend");
    template_.validate();
    if (!cache_) cache_ = std::make_shared<GenerationCache>();
    if (!clock_) clock_ = utc_timestamp;
}

GenerationRecord SkillRewriter::complete_cached(const std::string& prompt,
                                                const DecodingParams& decoding) {
    const auto key = GenerationCache::key_for(prompt, backend_->model_id(), decoding.temperature);
    if (auto hit = cache_->lookup(key)) return *hit;

    DecodingParams single = decoding;
    single.n_samples = 1;
    ++backend_calls_;
    auto completions = backend_->generate(prompt, single, template_.stop);
    if (completions.empty()) {
        throw Error(ErrorKind::Transport, "backend returned no completion");
    }
    GenerationRecord record{completions.front(), backend_->model_id(), clock_()};
    cache_->store(key, record);
    // Another worker may have stored the same key first; the cached copy wins.
    return *cache_->lookup(key);
}

std::string SkillRewriter::generate_skill(std::string_view question, std::string_view schema,
                                          const Permutation& permutation,
                                          const DecodingParams& decoding) {
    const auto prompt = build_rewrite_prompt(demos_, permutation, question, schema, template_);
    auto record = complete_cached(prompt, decoding);
    auto skill = template_.trim_completion(record.completion);
    if (skill.empty()) {
        throw Error(ErrorKind::EmptySkill, "empty skill for question '" +
                                               std::string(question.substr(0, 80)) + "'");
    }
    return skill;
}

std::vector<Permutation> SkillRewriter::draw_permutations(const std::string& input_id,
                                                          std::size_t m,
                                                          std::uint64_t seed) const {
    constexpr int kRedrawBound = 64;
    const std::size_t n = demos_.size();
    std::vector<Permutation> out;
    out.push_back(identity_permutation(n));

    const std::string key = content_key({"permutations", std::to_string(seed), input_id});
    std::mt19937_64 rng(std::stoull(key.substr(0, 16), nullptr, 16));

    std::set<Permutation> seen(out.begin(), out.end());
    while (out.size() < m) {
        Permutation p;
        bool fresh = false;
        for (int attempt = 0; attempt < kRedrawBound && !fresh; ++attempt) {
            p = identity_permutation(n);
            portable_shuffle(p, rng);
            fresh = !seen.count(p);
        }
        // Small demo sets run out of orderings before m is reached.
        if (!fresh) break;
        seen.insert(p);
        out.push_back(std::move(p));
    }
    return out;
}

SkillCandidateSet SkillRewriter::generate_candidate_set(const std::string& input_id,
                                                        std::string_view question,
                                                        std::string_view schema, std::size_t m,
                                                        std::uint64_t seed,
                                                        const DecodingParams& decoding) {
    if (m == 0) throw Error(ErrorKind::Input, "candidate count m must be at least 1");
    SkillCandidateSet set{input_id, {}};
    std::set<std::string> seen;
    for (const auto& permutation : draw_permutations(input_id, m, seed)) {
        const auto prompt = build_rewrite_prompt(demos_, permutation, question, schema, template_);
        auto record = complete_cached(prompt, decoding);
        auto skill = template_.trim_completion(record.completion);
        if (skill.empty() || !seen.insert(skill).second) continue;
        set.candidates.push_back(
            SkillCandidate{std::move(skill), permutation, record.model_id, record.timestamp});
    }
    if (set.candidates.empty()) {
        throw Error(ErrorKind::EmptyCandidateSet,
                    "all " + std::to_string(m) + " generations were empty for '" + input_id + "'");
    }
    return set;
}

SkillCandidateSet SkillRewriter::generate_candidate_set(const Example& example, std::size_t m,
                                                        std::uint64_t seed,
                                                        const DecodingParams& decoding) {
    return generate_candidate_set(example.id, example.question, example.schema, m, seed, decoding);
}

SkillCandidateSet SkillRewriter::generate_candidate_set(const QueryInput& query, std::size_t m,
                                                        std::uint64_t seed,
                                                        const DecodingParams& decoding) {
    return generate_candidate_set(query.id, query.question, query.schema, m, seed, decoding);
}

std::vector<SkillCandidateSet> SkillRewriter::generate_all(const std::vector<QueryInput>& inputs,
                                                           std::size_t m, std::uint64_t seed,
                                                           const DecodingParams& decoding,
                                                           std::size_t max_in_flight) {
    std::vector<SkillCandidateSet> out(inputs.size());
    parallel_for(inputs.size(), max_in_flight, [&](std::size_t i) {
        try {
            out[i] = generate_candidate_set(inputs[i], m, seed, decoding);
        } catch (const Error& e) {
            throw e.with_context("input '" + inputs[i].id + "'");
        }
    });
    return out;
}

std::string serialize_skill_sets(const std::vector<SkillCandidateSet>& sets) {
    std::string out;
    for (const auto& set : sets) {
        nlohmann::ordered_json rec;
        rec["input_id"] = set.input_id;
        auto candidates = nlohmann::ordered_json::array();
        for (const auto& c : set.candidates) {
            nlohmann::ordered_json cand;
            cand["skill"] = c.skill;
            cand["permutation"] = c.permutation;
            cand["model_id"] = c.model_id;
            cand["timestamp"] = c.timestamp;
            candidates.push_back(std::move(cand));
        }
        rec["candidates"] = std::move(candidates);
        out += jsonl::dump_line(rec);
    }
    return out;
}

std::vector<SkillCandidateSet> parse_skill_sets(std::string_view contents, std::string_view source) {
    std::vector<SkillCandidateSet> sets;
    jsonl::for_each_record(contents, source, [&](const nlohmann::json& rec, std::size_t line) {
        try {
            SkillCandidateSet set;
            set.input_id = rec.at("input_id").get<std::string>();
            for (const auto& cand : rec.at("candidates")) {
                SkillCandidate c;
                c.skill = cand.at("skill").get<std::string>();
                c.permutation = cand.at("permutation").get<Permutation>();
                c.model_id = cand.value("model_id", std::string());
                c.timestamp = cand.value("timestamp", std::string());
                if (!is_permutation_of_range(c.permutation, c.permutation.size())) {
                    throw Error(ErrorKind::Parse, "candidate permutation is invalid");
                }
                set.candidates.push_back(std::move(c));
            }
            if (set.candidates.empty()) {
                throw Error(ErrorKind::Parse, "candidate set '" + set.input_id + "' is empty");
            }
            sets.push_back(std::move(set));
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorKind::Parse,
                        std::string(source) + ":" + std::to_string(line) + ": " + e.what());
        } catch (const Error& e) {
            throw Error(ErrorKind::Parse,
                        std::string(source) + ":" + std::to_string(line) + ": " + e.detail());
        }
    });
    return sets;
}

void save_skill_sets(const std::vector<SkillCandidateSet>& sets, const std::filesystem::path& path) {
    write_file_atomic(path, serialize_skill_sets(sets));
}

std::vector<SkillCandidateSet> load_skill_sets(const std::filesystem::path& path) {
    return parse_skill_sets(read_file(path), path.string());
}

}  // namespace skillknn
