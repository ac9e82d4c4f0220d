#include "skillknn/pipeline.hpp"

#include "skillknn/error.hpp"
#include "skillknn/util.hpp"

#include <algorithm>
#include <cstdlib>
#include <ostream>
#include <sstream>

namespace skillknn {

namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;

fs::path resolve(const fs::path& base, const std::string& value) {
    if (value.empty()) return {};
    fs::path p(value);
    return p.is_absolute() ? p : base / p;
}

std::string env_or(const char* name, std::string fallback) {
    if (const char* value = std::getenv(name); value && *value) return value;
    return fallback;
}

template <typename T>
T field_or(const json& doc, const char* key, T fallback) {
    try {
        return doc.value(key, fallback);
    } catch (const json::exception& e) {
        throw Error(ErrorKind::Config, std::string("field '") + key + "': " + e.what());
    }
}

}  // namespace

EmbedderConfig parse_embedder_config(const json& doc) {
    EmbedderConfig cfg;
    auto kind = field_or<std::string>(doc, "kind", "local-deterministic");
    if (kind == "remote") {
        cfg.kind = EmbedderKind::Remote;
    } else if (kind == "local-deterministic") {
        cfg.kind = EmbedderKind::LocalDeterministic;
    } else {
        throw Error(ErrorKind::Config, "unknown embedder kind '" + kind + "'");
    }
    cfg.endpoint_url = env_or("SKILLKNN_EMBEDDER_URL", field_or<std::string>(doc, "endpoint_url", ""));
    cfg.model_id = field_or<std::string>(doc, "model_id", cfg.model_id);
    cfg.dim = field_or<std::size_t>(doc, "dim", cfg.dim);
    cfg.timeout = std::chrono::milliseconds(field_or<long>(doc, "timeout_ms", cfg.timeout.count()));
    cfg.max_retries = field_or<int>(doc, "max_retries", cfg.max_retries);
    cfg.api_key_env = field_or<std::string>(doc, "api_key_env", "");
    cfg.batch_size = field_or<std::size_t>(doc, "batch_size", cfg.batch_size);
    cfg.max_in_flight = field_or<std::size_t>(doc, "max_in_flight", cfg.max_in_flight);
    return cfg;
}

BackboneEndpoint parse_endpoint(const json& doc, const fs::path& base_dir) {
    BackboneEndpoint ep;
    auto kind = field_or<std::string>(doc, "kind", "mock");
    if (kind == "remote") {
        ep.kind = EndpointKind::Remote;
    } else if (kind == "mock") {
        ep.kind = EndpointKind::Mock;
    } else {
        throw Error(ErrorKind::Config, "unknown endpoint kind '" + kind + "'");
    }
    ep.url = field_or<std::string>(doc, "url", "");
    ep.model_id = field_or<std::string>(doc, "model_id", ep.model_id);
    auto style = field_or<std::string>(doc, "api_style", "chat");
    if (style == "chat") {
        ep.api_style = ApiStyle::Chat;
    } else if (style == "completion") {
        ep.api_style = ApiStyle::Completion;
    } else {
        throw Error(ErrorKind::Config, "unknown api_style '" + style + "'");
    }
    ep.api_key_env = field_or<std::string>(doc, "api_key_env", "");
    ep.timeout = std::chrono::milliseconds(field_or<long>(doc, "timeout_ms", ep.timeout.count()));
    ep.max_retries = field_or<int>(doc, "max_retries", ep.max_retries);
    ep.canned_path = resolve(base_dir, field_or<std::string>(doc, "canned", ""));
    auto fallback = field_or<std::string>(doc, "fallback", "last-output");
    if (fallback == "last-output") {
        ep.fallback = MockFallback::LastOutput;
    } else if (fallback == "error") {
        ep.fallback = MockFallback::Error;
    } else {
        throw Error(ErrorKind::Config, "unknown mock fallback '" + fallback + "'");
    }
    return ep;
}

RunConfig parse_run_config(const json& doc, const fs::path& base_dir) {
    if (!doc.is_object()) throw Error(ErrorKind::Config, "config must be a JSON object");
    RunConfig cfg;
    cfg.task_tag = field_or<std::string>(doc, "task_tag", cfg.task_tag);
    cfg.bank_path = resolve(base_dir, field_or<std::string>(doc, "bank", ""));
    cfg.queries_path = resolve(base_dir, field_or<std::string>(doc, "queries", ""));
    cfg.demos_path = resolve(base_dir, field_or<std::string>(doc, "demos", ""));
    cfg.cache_dir = resolve(base_dir, field_or<std::string>(doc, "cache_dir", "cache"));
    cfg.out_dir = resolve(base_dir, field_or<std::string>(doc, "out_dir", "out"));
    cfg.table_counts_path = resolve(base_dir, field_or<std::string>(doc, "table_counts", ""));
    if (doc.contains("templates")) {
        const auto& t = doc.at("templates");
        cfg.answer_template_path = resolve(base_dir, field_or<std::string>(t, "answer", ""));
        cfg.skill_template_path = resolve(base_dir, field_or<std::string>(t, "skill", ""));
    }
    if (doc.contains("embedder")) cfg.embedder = parse_embedder_config(doc.at("embedder"));
    if (doc.contains("rewriter")) cfg.rewriter = parse_endpoint(doc.at("rewriter"), base_dir);
    if (doc.contains("backbone")) cfg.backbone = parse_endpoint(doc.at("backbone"), base_dir);
    cfg.rewriter.url = env_or("SKILLKNN_REWRITER_URL", cfg.rewriter.url);
    cfg.backbone.url = env_or("SKILLKNN_BACKBONE_URL", cfg.backbone.url);

    if (doc.contains("selection")) {
        const auto& s = doc.at("selection");
        cfg.selection.strategy =
            parse_strategy(field_or<std::string>(s, "strategy", std::string(to_string(cfg.selection.strategy))));
        cfg.selection.k = field_or<std::size_t>(s, "k", cfg.selection.k);
        cfg.selection.trials = field_or<std::size_t>(s, "trials", cfg.selection.trials);
    }
    if (doc.contains("decoding")) {
        const auto& d = doc.at("decoding");
        cfg.decoding.temperature = field_or<double>(d, "temperature", cfg.decoding.temperature);
        cfg.decoding.max_decode_tokens =
            field_or<std::size_t>(d, "max_decode_tokens", cfg.decoding.max_decode_tokens);
        cfg.decoding.max_context_tokens =
            field_or<std::size_t>(d, "max_context_tokens", cfg.decoding.max_context_tokens);
        cfg.decoding.n_samples = field_or<std::size_t>(d, "n_samples", cfg.decoding.n_samples);
    }
    cfg.candidates = field_or<std::size_t>(doc, "candidates", cfg.candidates);
    cfg.seed = field_or<std::uint64_t>(doc, "seed", cfg.seed);
    cfg.selection.seed = cfg.seed;
    cfg.max_in_flight = field_or<std::size_t>(doc, "max_in_flight", cfg.max_in_flight);
    return cfg;
}

RunConfig load_run_config(const fs::path& path) {
    json doc;
    try {
        doc = json::parse(read_file(path));
    } catch (const json::parse_error& e) {
        throw Error(ErrorKind::Config, path.string() + ": " + e.what());
    }
    try {
        return parse_run_config(doc, path.parent_path());
    } catch (const Error& e) {
        throw e.with_context(path.string());
    }
}

void RunConfig::validate() const {
    auto require = [](const fs::path& p, const char* what) {
        if (p.empty()) throw Error(ErrorKind::Config, std::string(what) + " path is not set");
        if (!fs::exists(p)) {
            throw Error(ErrorKind::Config, std::string(what) + " not found: " + p.string());
        }
    };
    require(bank_path, "bank");
    require(queries_path, "queries");
    if (uses_skills(selection.strategy)) require(demos_path, "demos");
    if (!answer_template_path.empty()) require(answer_template_path, "answer template");
    if (!skill_template_path.empty()) require(skill_template_path, "skill template");
    if (!table_counts_path.empty()) require(table_counts_path, "table counts");
    if (!rewriter.canned_path.empty()) require(rewriter.canned_path, "rewriter canned outputs");
    if (!backbone.canned_path.empty()) require(backbone.canned_path, "backbone canned outputs");
    if (cache_dir.empty()) throw Error(ErrorKind::Config, "cache_dir is not set");
    if (out_dir.empty()) throw Error(ErrorKind::Config, "out_dir is not set");
    if (candidates == 0) throw Error(ErrorKind::Config, "candidates must be at least 1");
    if (selection.k == 0) throw Error(ErrorKind::Config, "k must be at least 1");
    embedder.validate();
    if (uses_skills(selection.strategy)) rewriter.validate();
    backbone.validate();
    try {
        decoding.validate();
    } catch (const Error& e) {
        throw Error(ErrorKind::Config, e.detail());
    }
}

PromptTemplate answer_template(const RunConfig& config) {
    if (!config.answer_template_path.empty()) return load_template(config.answer_template_path);
    return default_template(config.task_tag, TemplateRole::Answer);
}

PromptTemplate skill_template(const RunConfig& config) {
    if (!config.skill_template_path.empty()) return load_template(config.skill_template_path);
    return default_template(config.task_tag, TemplateRole::Skill);
}

std::unordered_map<std::string, std::size_t> load_table_counts(const RunConfig& config,
                                                               const ExampleBank& bank) {
    if (config.table_counts_path.empty()) return table_counts_from_bank(bank);
    std::unordered_map<std::string, std::size_t> counts;
    try {
        auto doc = json::parse(read_file(config.table_counts_path));
        for (const auto& [db, count] : doc.items()) counts[db] = count.get<std::size_t>();
    } catch (const json::exception& e) {
        throw Error(ErrorKind::Parse, config.table_counts_path.string() + ": " + e.what());
    }
    return counts;
}

SkillVariant variant_of(Strategy strategy) {
    switch (strategy) {
        case Strategy::SkillBase: return SkillVariant::Base;
        case Strategy::SkillConsistency: return SkillVariant::Consistency;
        case Strategy::SkillDistinctiveness: return SkillVariant::Distinctiveness;
        default: break;
    }
    throw Error(ErrorKind::Config, "strategy '" + std::string(to_string(strategy)) +
                                       "' is not a skill variant");
}

std::vector<CandidateEmbeddings> embed_candidate_sets(const std::vector<SkillCandidateSet>& sets,
                                                      Embedder& embedder, SkillVariant variant) {
    std::vector<std::vector<std::string>> texts(sets.size());
    std::vector<std::string> flat;
    for (std::size_t i = 0; i < sets.size(); ++i) {
        if (variant == SkillVariant::Base) {
            auto skill = sets[i].identity_skill();
            if (!skill) {
                throw Error(ErrorKind::Data, "no identity-permutation skill for '" +
                                                 sets[i].input_id + "'");
            }
            texts[i].push_back(*skill);
        } else {
            texts[i] = sets[i].skills();
        }
        flat.insert(flat.end(), texts[i].begin(), texts[i].end());
    }
    auto vectors = embedder.embed_batch(flat);

    std::vector<CandidateEmbeddings> out(sets.size());
    std::size_t cursor = 0;
    for (std::size_t i = 0; i < sets.size(); ++i) {
        out[i].id = sets[i].input_id;
        for (std::size_t j = 0; j < texts[i].size(); ++j) {
            out[i].candidates.push_back(std::move(vectors[cursor++]));
        }
    }
    return out;
}

std::vector<SelectionResult> select_all(const SelectionInputs& inputs, const SelectionConfig& config) {
    const ExampleBank& bank = *inputs.bank;
    const auto& queries = *inputs.queries;
    config.validate(bank.size());
    const Strategy strategy = config.strategy;

    auto need_embedder = [&]() -> Embedder& {
        if (!inputs.embedder) {
            throw Error(ErrorKind::Config, std::string(to_string(strategy)) + " needs an embedder");
        }
        return *inputs.embedder;
    };
    auto target_of = [&](const std::string& id) -> const std::string& {
        if (!inputs.query_targets) {
            throw Error(ErrorKind::Data, "oracle selection needs query targets");
        }
        auto it = inputs.query_targets->find(id);
        if (it == inputs.query_targets->end() || trim(it->second).empty()) {
            throw Error(ErrorKind::Data, "no target for query '" + id + "'");
        }
        return it->second;
    };

    std::vector<std::vector<SelectionResult>> per_query(queries.size());
    std::function<void(std::size_t)> select_one;

    IndexedVectors bank_vectors;
    std::vector<EmbeddingVector> query_vectors;
    std::vector<CandidateEmbeddings> bank_sets;
    std::vector<CandidateEmbeddings> query_sets;

    switch (strategy) {
        case Strategy::Random:
            select_one = [&](std::size_t q) {
                per_query[q] = select_random(bank, config, queries[q].id);
            };
            break;

        case Strategy::KnnRaw: {
            Embedder& embedder = need_embedder();
            std::vector<std::string> texts;
            for (const auto& ex : bank.examples()) texts.push_back(embedding_text_of(ex));
            bank_vectors = IndexedVectors{bank.ids(), embedder.embed_batch(texts)};
            texts.clear();
            for (const auto& q : queries) texts.push_back(embedding_text_of(q));
            query_vectors = embedder.embed_batch(texts);
            select_one = [&](std::size_t q) {
                per_query[q] = {select_knn(queries[q].id, query_vectors[q], bank_vectors, config.k)};
            };
            break;
        }

        case Strategy::OracleTargetKnn: {
            Embedder& embedder = need_embedder();
            std::vector<std::string> texts;
            for (const auto& ex : bank.examples()) texts.push_back(ex.target);
            bank_vectors = IndexedVectors{bank.ids(), embedder.embed_batch(texts)};
            texts.clear();
            for (const auto& q : queries) texts.push_back(target_of(q.id));
            query_vectors = embedder.embed_batch(texts);
            select_one = [&](std::size_t q) {
                per_query[q] = {select_knn(queries[q].id, query_vectors[q], bank_vectors, config.k,
                                           Strategy::OracleTargetKnn)};
            };
            break;
        }

        case Strategy::OracleSketch:
            for (const auto& q : queries) target_of(q.id);
            select_one = [&](std::size_t q) {
                per_query[q] = {
                    select_oracle_sketch(bank, queries[q].id, target_of(queries[q].id), config.k)};
            };
            break;

        case Strategy::SkillBase:
        case Strategy::SkillConsistency:
        case Strategy::SkillDistinctiveness: {
            if (!inputs.skill_sets) {
                throw Error(ErrorKind::Data, "skill strategies need skill candidate sets");
            }
            std::unordered_map<std::string, const SkillCandidateSet*> by_id;
            for (const auto& set : *inputs.skill_sets) by_id[set.input_id] = &set;
            auto gather = [&](const std::vector<std::string>& ids) {
                std::vector<SkillCandidateSet> out;
                out.reserve(ids.size());
                for (const auto& id : ids) {
                    auto it = by_id.find(id);
                    if (it == by_id.end()) {
                        throw Error(ErrorKind::Data, "no skill candidates for '" + id + "'");
                    }
                    out.push_back(*it->second);
                }
                return out;
            };
            std::vector<std::string> query_ids;
            for (const auto& q : queries) query_ids.push_back(q.id);

            Embedder& embedder = need_embedder();
            const auto variant = variant_of(strategy);
            bank_sets = embed_candidate_sets(gather(bank.ids()), embedder, variant);
            query_sets = embed_candidate_sets(gather(query_ids), embedder, variant);
            select_one = [&, variant](std::size_t q) {
                per_query[q] = {select_skill_knn(query_sets[q], bank_sets, variant, config.k)};
            };
            break;
        }
    }

    parallel_for(queries.size(), 4, [&](std::size_t q) {
        try {
            select_one(q);
        } catch (const Error& e) {
            throw e.with_context("query '" + queries[q].id + "'");
        }
    });

    std::vector<SelectionResult> out;
    for (auto& results : per_query) {
        for (auto& r : results) out.push_back(std::move(r));
    }
    return out;
}

namespace {

std::string majority_prediction(const std::vector<std::string>& samples) {
    std::vector<std::pair<std::string, std::size_t>> groups;
    std::unordered_map<std::string, std::size_t> index;
    for (const auto& s : samples) {
        auto form = normalize_logical_form(s);
        auto [it, inserted] = index.emplace(form, groups.size());
        if (inserted) groups.emplace_back(s, 0);
        ++groups[it->second].second;
    }
    std::size_t best = 0;
    for (std::size_t i = 1; i < groups.size(); ++i) {
        if (groups[i].second > groups[best].second) best = i;
    }
    return groups.empty() ? std::string() : groups[best].first;
}

}  // namespace

std::vector<Prediction> run_selections(const std::vector<SelectionResult>& selections,
                                       const ExampleBank& bank,
                                       const std::vector<QueryInput>& queries,
                                       CompletionBackend& backend, const DecodingParams& params,
                                       const PromptTemplate& tmpl, std::size_t max_in_flight) {
    params.validate();
    std::unordered_map<std::string, const QueryInput*> by_id;
    for (const auto& q : queries) by_id[q.id] = &q;

    std::vector<Prediction> out(selections.size());
    parallel_for(selections.size(), max_in_flight, [&](std::size_t i) {
        const auto& selection = selections[i];
        try {
            auto it = by_id.find(selection.query_id);
            if (it == by_id.end()) {
                throw Error(ErrorKind::Join, "selection for unknown query");
            }
            auto prompt = assemble_prompt(selection, bank, *it->second, params, tmpl);
            auto samples = complete(prompt, backend, params, tmpl);
            Prediction p;
            p.query_id = selection.query_id;
            p.trial = selection.trial;
            if (samples.size() == 1) {
                p.prediction = samples.front();
            } else {
                p.prediction = majority_prediction(samples);
                p.samples = std::move(samples);
            }
            out[i] = std::move(p);
        } catch (const Error& e) {
            throw e.with_context("query '" + selection.query_id + "'");
        }
    });
    return out;
}

namespace {

json endpoint_fingerprint(const BackboneEndpoint& ep) {
    json fp;
    fp["kind"] = ep.kind == EndpointKind::Remote ? "remote" : "mock";
    fp["model_id"] = ep.model_id;
    if (ep.kind == EndpointKind::Remote) {
        fp["url"] = ep.url;
        fp["api_style"] = ep.api_style == ApiStyle::Chat ? "chat" : "completion";
    } else {
        fp["fallback"] = ep.fallback == MockFallback::LastOutput ? "last-output" : "error";
        fp["canned"] = ep.canned_path.empty() ? "" : sha256_hex(read_file(ep.canned_path));
    }
    return fp;
}

json template_fingerprint(const PromptTemplate& t) {
    return json{{"example", t.example}, {"schema", t.schema}, {"separator", t.separator},
                {"stop", t.stop}};
}

json embedder_fingerprint(const EmbedderConfig& e) {
    return json{{"kind", e.kind == EmbedderKind::Remote ? "remote" : "local-deterministic"},
                {"model_id", e.model_id},
                {"dim", e.dim}};
}

class StageRunner {
public:
    StageRunner(fs::path dir, std::ostream* log, PipelineResult& result)
        : dir_(std::move(dir)), log_(log), result_(result) {}

    template <typename Produce>
    std::string run(const std::string& stage, const json& key_material, Produce&& produce) {
        const std::string key = sha256_hex(key_material.dump()).substr(0, 24);
        const fs::path file = dir_ / (stage + "-" + key + ".jsonl");
        if (fs::exists(file)) {
            if (log_) *log_ << "[" << stage << "] reuse " << file.filename().string() << "\n";
            result_.reused_stages.push_back(stage);
            return read_file(file);
        }
        if (log_) *log_ << "[" << stage << "] run\n";
        std::string contents;
        try {
            contents = produce();
        } catch (const Error& e) {
            throw e.with_context("stage " + stage);
        }
        write_file_atomic(file, contents);
        return contents;
    }

private:
    fs::path dir_;
    std::ostream* log_;
    PipelineResult& result_;
};

}  // namespace

std::string describe_plan(const RunConfig& config) {
    std::ostringstream out;
    const auto strategy = config.selection.strategy;
    int step = 1;
    out << "task: " << config.task_tag << "\n";
    out << "bank: " << config.bank_path.string() << "\n";
    out << "queries: " << config.queries_path.string() << "\n";
    if (uses_skills(strategy)) {
        out << step++ << ". rewrite bank and queries with " << config.rewriter.model_id << " ("
            << config.candidates << " candidates, seed " << config.seed << ")\n";
    }
    if (strategy == Strategy::KnnRaw || strategy == Strategy::OracleTargetKnn || uses_skills(strategy)) {
        out << step++ << ". embed with " << config.embedder.model_id << " (dim " << config.embedder.dim
            << ")\n";
    }
    out << step++ << ". select k=" << config.selection.k << " by " << to_string(strategy);
    if (strategy == Strategy::Random) out << " over " << config.selection.trials << " trials";
    out << "\n";
    out << step++ << ". assemble prompts (context " << config.decoding.max_context_tokens
        << ", decode " << config.decoding.max_decode_tokens << ") and complete with "
        << config.backbone.model_id << " at temperature " << config.decoding.temperature << "\n";
    out << step++ << ". evaluate into " << config.out_dir.string() << "\n";
    out << "cache: " << config.cache_dir.string() << "\n";
    return out.str();
}

PipelineResult run_pipeline(const RunConfig& config, const PipelineOptions& options) {
    config.validate();
    PipelineResult result;
    if (options.dry_run) return result;

    StageRunner stages(config.cache_dir / "stages", options.log, result);

    ExampleBank bank;
    ExampleBank test_set;
    try {
        bank = load_bank(config.bank_path, config.task_tag);
        test_set = load_bank(config.queries_path, config.task_tag);
    } catch (const Error& e) {
        throw e.with_context("stage load");
    }
    std::vector<QueryInput> queries;
    std::unordered_map<std::string, std::string> query_targets;
    for (const auto& ex : test_set.examples()) {
        queries.push_back(to_query(ex));
        query_targets[ex.id] = ex.target;
    }

    const std::string bank_hash = sha256_hex(read_file(config.bank_path));
    const std::string queries_hash = sha256_hex(read_file(config.queries_path));
    const auto strategy = config.selection.strategy;

    // Rewriting runs greedily; candidate variety comes from demonstration order.
    DecodingParams rewrite_decoding;
    rewrite_decoding.temperature = 0.0;

    json skills_key;
    std::vector<SkillCandidateSet> skill_sets;
    if (uses_skills(strategy)) {
        const auto demos_contents = read_file(config.demos_path);
        auto demos = parse_demonstrations(demos_contents, config.task_tag, config.demos_path.string());
        auto tmpl = skill_template(config);
        auto backend = make_backend(config.rewriter, tmpl);
        auto cache = std::make_shared<GenerationCache>(config.cache_dir / "generations");
        SkillRewriter rewriter(std::move(demos), backend, tmpl, cache);

        json common{{"demos", sha256_hex(demos_contents)},
                    {"template", template_fingerprint(tmpl)},
                    {"rewriter", endpoint_fingerprint(config.rewriter)},
                    {"m", config.candidates},
                    {"seed", config.seed}};
        json bank_key = common;
        bank_key["inputs"] = bank_hash;
        json query_key = common;
        query_key["inputs"] = queries_hash;

        std::vector<QueryInput> bank_inputs;
        for (const auto& ex : bank.examples()) bank_inputs.push_back(to_query(ex));

        auto rewrite = [&](const std::vector<QueryInput>& inputs) {
            return serialize_skill_sets(rewriter.generate_all(inputs, config.candidates, config.seed,
                                                              rewrite_decoding,
                                                              config.max_in_flight));
        };
        auto bank_skills = stages.run("rewrite-bank", bank_key, [&] { return rewrite(bank_inputs); });
        auto query_skills = stages.run("rewrite-queries", query_key, [&] { return rewrite(queries); });
        skill_sets = parse_skill_sets(bank_skills, "rewrite-bank");
        auto more = parse_skill_sets(query_skills, "rewrite-queries");
        skill_sets.insert(skill_sets.end(), more.begin(), more.end());
        skills_key = json{{"bank", bank_key}, {"queries", query_key}};
    }

    auto embed_cache = std::make_shared<EmbeddingCache>(config.cache_dir / "embeddings");
    Embedder embedder(config.embedder, embed_cache);

    json select_key{{"strategy", std::string(to_string(strategy))},
                    {"k", config.selection.k},
                    {"trials", strategy == Strategy::Random ? config.selection.trials : 1},
                    {"seed", config.seed},
                    {"bank", bank_hash},
                    {"queries", queries_hash},
                    {"skills", skills_key},
                    {"embedder", embedder_fingerprint(config.embedder)}};
    auto selections_text = stages.run("select", select_key, [&] {
        SelectionInputs inputs;
        inputs.bank = &bank;
        inputs.queries = &queries;
        inputs.skill_sets = &skill_sets;
        inputs.query_targets = &query_targets;
        inputs.embedder = &embedder;
        return serialize_selections(select_all(inputs, config.selection));
    });
    auto selections = parse_selections(selections_text, "select");

    const auto tmpl = answer_template(config);
    json run_key{{"select", select_key},
                 {"backbone", endpoint_fingerprint(config.backbone)},
                 {"template", template_fingerprint(tmpl)},
                 {"decoding",
                  {{"temperature", config.decoding.temperature},
                   {"max_decode_tokens", config.decoding.max_decode_tokens},
                   {"max_context_tokens", config.decoding.max_context_tokens},
                   {"n_samples", config.decoding.n_samples}}}};
    auto predictions_text = stages.run("run", run_key, [&] {
        auto backend = make_backend(config.backbone, tmpl);
        return serialize_predictions(run_selections(selections, bank, queries, *backend,
                                                    config.decoding, tmpl, config.max_in_flight));
    });
    auto predictions = parse_predictions(predictions_text, "run");

    EvalOutput eval;
    try {
        eval = evaluate_run(predictions, test_set, selections, bank, load_table_counts(config, bank));
    } catch (const Error& e) {
        throw e.with_context("stage evaluate");
    }
    result.report = eval.report;

    auto emit = [&](const std::string& name, const std::string& contents) {
        auto path = config.out_dir / name;
        write_file_atomic(path, contents);
        result.outputs.push_back(path);
    };
    emit("selections.jsonl", selections_text);
    emit("predictions.jsonl", predictions_text);
    emit("eval_records.jsonl", serialize_eval_records(eval.records));
    emit("report.json", report_to_json(eval.report).dump(2) + "\n");
    if (config.task_tag == "text-to-sql") {
        const std::size_t trials = eval.report.trials;
        for (std::size_t t = 0; t < trials; ++t) {
            std::string name = trials == 1 ? "predictions_spider.txt"
                                           : "predictions_spider.trial" + std::to_string(t) + ".txt";
            emit(name, spider_prediction_lines(predictions, test_set, t));
        }
    }
    return result;
}

}  // namespace skillknn
