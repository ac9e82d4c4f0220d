#include "skillknn/error.hpp"
#include "skillknn/jsonl.hpp"
#include "skillknn/pipeline.hpp"
#include "skillknn/util.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace skillknn;

namespace {

// Endpoint/embedder files may be a bare section or a full run config.
json section_of(const fs::path& path, const char* name) {
    json doc;
    try {
        doc = json::parse(read_file(path));
    } catch (const json::parse_error& e) {
        throw Error(ErrorKind::Config, path.string() + ": " + e.what());
    }
    if (doc.is_object() && doc.contains(name)) return doc.at(name);
    return doc;
}

EmbedderConfig embedder_from(const std::string& cfg_path) {
    EmbedderConfig cfg;
    if (!cfg_path.empty()) cfg = parse_embedder_config(section_of(cfg_path, "embedder"));
    cfg.validate();
    return cfg;
}

BackboneEndpoint endpoint_from(const std::string& cfg_path, const char* section) {
    BackboneEndpoint ep;
    if (!cfg_path.empty()) {
        fs::path p(cfg_path);
        ep = parse_endpoint(section_of(p, section), p.parent_path());
    }
    ep.validate();
    return ep;
}

PromptTemplate template_from(const std::string& path, const std::string& task, TemplateRole role) {
    return path.empty() ? default_template(task, role) : load_template(path);
}

std::unordered_map<std::string, std::string> targets_of(const fs::path& path) {
    std::unordered_map<std::string, std::string> out;
    jsonl::for_each_record(read_file(path), path.string(), [&](const json& rec, std::size_t) {
        auto id = jsonl::required_string(rec, "id");
        auto target = jsonl::optional_string(rec, "target");
        if (!target.empty()) out[id] = target;
    });
    return out;
}

std::shared_ptr<EmbeddingCache> cache_at(const std::string& dir) {
    if (dir.empty()) return std::make_shared<EmbeddingCache>();
    return std::make_shared<EmbeddingCache>(fs::path(dir));
}

struct Globals {
    std::string task = "text-to-sql";
};

void add_bank_commands(CLI::App& app, Globals& g) {
    auto* bank = app.add_subcommand("bank", "Inspect example banks");
    bank->require_subcommand(1);

    static std::string path;
    auto* validate = bank->add_subcommand("validate", "Parse and check a bank file");
    validate->add_option("path", path, "Bank file")->required();
    validate->callback([&g] {
        auto b = load_bank(path, g.task);
        std::cout << "ok: " << b.size() << " examples\n";
    });

    auto* stats = bank->add_subcommand("stats", "Example count and distinct db_ids");
    stats->add_option("path", path, "Bank file")->required();
    stats->callback([&g] {
        auto s = bank_stats(load_bank(path, g.task));
        std::cout << "examples: " << s.count << "\n"
                  << "distinct db_ids: " << s.distinct_db_ids << "\n";
    });
}

void add_embed_command(CLI::App& app, Globals& g) {
    static std::string bank_path, cfg_path, out_dir, skills_path;
    auto* cmd = app.add_subcommand("embed", "Embed bank questions into a cache directory");
    cmd->add_option("--bank", bank_path, "Bank file")->required();
    cmd->add_option("--cfg", cfg_path, "Embedder or run config");
    cmd->add_option("--out", out_dir, "Cache directory")->required();
    cmd->add_option("--skills", skills_path, "Also embed every skill candidate in this file");
    cmd->callback([&g] {
        auto bank = load_bank(bank_path, g.task);
        Embedder embedder(embedder_from(cfg_path), cache_at(out_dir));
        std::vector<std::string> texts;
        for (const auto& ex : bank.examples()) texts.push_back(embedding_text_of(ex));
        if (!skills_path.empty()) {
            for (const auto& set : load_skill_sets(skills_path)) {
                for (auto& s : set.skills()) texts.push_back(s);
            }
        }
        embedder.embed_batch(texts);
        std::cout << "embedded " << texts.size() << " texts (" << embedder.remote_calls()
                  << " remote calls)\n";
    });
}

void add_rewrite_command(CLI::App& app, Globals& g) {
    static std::string bank_path, demos_path, out_path, cfg_path, cache_dir, template_path;
    static std::size_t m = 5;
    static std::uint64_t seed = 0;
    static std::size_t in_flight = 4;
    auto* cmd = app.add_subcommand("rewrite", "Generate skill candidates for every input");
    cmd->add_option("--bank", bank_path, "Bank or query file")->required();
    cmd->add_option("--demos", demos_path, "Annotated demonstrations")->required();
    cmd->add_option("-m", m, "Candidates per input")->capture_default_str();
    cmd->add_option("--seed", seed, "Shuffle seed")->capture_default_str();
    cmd->add_option("--out", out_path, "Skills file")->required();
    cmd->add_option("--cfg", cfg_path, "Rewriter endpoint or run config");
    cmd->add_option("--cache", cache_dir, "Generation cache directory");
    cmd->add_option("--template", template_path, "Skill prompt template");
    cmd->add_option("--max-in-flight", in_flight)->capture_default_str();
    cmd->callback([&g] {
        auto inputs = load_queries(bank_path);
        auto tmpl = template_from(template_path, g.task, TemplateRole::Skill);
        auto backend = make_backend(endpoint_from(cfg_path, "rewriter"), tmpl);
        auto cache = cache_dir.empty() ? std::make_shared<GenerationCache>()
                                       : std::make_shared<GenerationCache>(fs::path(cache_dir));
        SkillRewriter rewriter(load_demonstrations(demos_path, g.task), backend, tmpl, cache);
        DecodingParams greedy;
        auto sets = rewriter.generate_all(inputs, m, seed, greedy, in_flight);
        save_skill_sets(sets, out_path);
        std::cout << "wrote " << sets.size() << " candidate sets to " << out_path << "\n";
    });
}

void add_select_command(CLI::App& app, Globals& g) {
    static std::string bank_path, queries_path, strategy = "knn_raw", skills_path, cache_dir,
                                                cfg_path, out_path;
    static std::size_t k = 4, trials = 3;
    static std::uint64_t seed = 0;
    auto* cmd = app.add_subcommand("select", "Select k examples per query");
    cmd->add_option("--bank", bank_path, "Bank file")->required();
    cmd->add_option("--queries", queries_path, "Query file")->required();
    cmd->add_option("--strategy", strategy, "Selection strategy")->capture_default_str();
    cmd->add_option("-k", k, "Examples per prompt")->capture_default_str();
    cmd->add_option("--trials", trials, "Trials for random selection")->capture_default_str();
    cmd->add_option("--seed", seed)->capture_default_str();
    cmd->add_option("--skills", skills_path, "Skill candidate sets for bank and queries");
    cmd->add_option("--embeddings", cache_dir, "Embedding cache directory");
    cmd->add_option("--cfg", cfg_path, "Embedder or run config");
    cmd->add_option("--out", out_path, "Selections file")->required();
    cmd->callback([&g] {
        SelectionConfig config;
        config.strategy = parse_strategy(strategy);
        config.k = k;
        config.trials = trials;
        config.seed = seed;

        auto bank = load_bank(bank_path, g.task);
        auto queries = load_queries(queries_path);
        std::vector<SkillCandidateSet> skills;
        if (uses_skills(config.strategy)) {
            if (skills_path.empty()) {
                throw Error(ErrorKind::Config, "--skills is required for " + strategy);
            }
            skills = load_skill_sets(skills_path);
        }
        auto targets = targets_of(queries_path);
        Embedder embedder(embedder_from(cfg_path), cache_at(cache_dir));

        SelectionInputs inputs;
        inputs.bank = &bank;
        inputs.queries = &queries;
        inputs.skill_sets = &skills;
        inputs.query_targets = &targets;
        inputs.embedder = &embedder;
        auto results = select_all(inputs, config);
        save_selections(results, out_path);
        std::cout << "wrote " << results.size() << " selections to " << out_path << "\n";
    });
}

void add_run_command(CLI::App& app, Globals& g) {
    static std::string selections_path, bank_path, queries_path, backbone_path, out_path,
        template_path;
    static DecodingParams decoding;
    static std::size_t in_flight = 4;
    auto* cmd = app.add_subcommand("run", "Assemble prompts and complete them");
    cmd->add_option("--selections", selections_path, "Selections file")->required();
    cmd->add_option("--bank", bank_path, "Bank file")->required();
    cmd->add_option("--queries", queries_path, "Query file")->required();
    cmd->add_option("--backbone", backbone_path, "Backbone endpoint or run config");
    cmd->add_option("--out", out_path, "Predictions file")->required();
    cmd->add_option("--template", template_path, "Answer prompt template");
    cmd->add_option("--temperature", decoding.temperature)->capture_default_str();
    cmd->add_option("--max-decode-tokens", decoding.max_decode_tokens)->capture_default_str();
    cmd->add_option("--max-context-tokens", decoding.max_context_tokens)->capture_default_str();
    cmd->add_option("--n-samples", decoding.n_samples)->capture_default_str();
    cmd->add_option("--max-in-flight", in_flight)->capture_default_str();
    cmd->callback([&g] {
        auto bank = load_bank(bank_path, g.task);
        auto queries = load_queries(queries_path);
        auto selections = load_selections(selections_path);
        auto tmpl = template_from(template_path, g.task, TemplateRole::Answer);
        auto backend = make_backend(endpoint_from(backbone_path, "backbone"), tmpl);
        auto predictions =
            run_selections(selections, bank, queries, *backend, decoding, tmpl, in_flight);
        save_predictions(predictions, out_path);
        std::cout << "wrote " << predictions.size() << " predictions to " << out_path << "\n";
    });
}

void add_eval_command(CLI::App& app, Globals& g) {
    static std::string predictions_path, test_path, selections_path, bank_path, records_path,
        report_path, spider_path, table_counts_path;
    auto* cmd = app.add_subcommand("eval", "Score predictions against gold targets");
    cmd->add_option("--predictions", predictions_path)->required();
    cmd->add_option("--test", test_path, "Test set with targets")->required();
    cmd->add_option("--selections", selections_path)->required();
    cmd->add_option("--bank", bank_path)->required();
    cmd->add_option("--records", records_path, "Write per-query records here");
    cmd->add_option("--report", report_path, "Write the JSON report here");
    cmd->add_option("--spider", spider_path, "Write SQL<TAB>db_id lines for trial 0 here");
    cmd->add_option("--table-counts", table_counts_path, "JSON object of db_id -> table count");
    cmd->callback([&g] {
        auto bank = load_bank(bank_path, g.task);
        auto test_set = load_bank(test_path, g.task);
        auto predictions = load_predictions(predictions_path);
        RunConfig rc;
        rc.table_counts_path = table_counts_path;
        auto out = evaluate_run(predictions, test_set, load_selections(selections_path), bank,
                                load_table_counts(rc, bank));
        if (!records_path.empty()) write_file_atomic(records_path, serialize_eval_records(out.records));
        if (!report_path.empty()) {
            write_file_atomic(report_path, report_to_json(out.report).dump(2) + "\n");
        }
        if (!spider_path.empty()) {
            write_file_atomic(spider_path, spider_prediction_lines(predictions, test_set, 0));
        }
        std::cout << format_report(out.report);
    });
}

void add_pipeline_command(CLI::App& app) {
    static std::string config_path, strategy, cache_dir, out_dir;
    static std::optional<std::size_t> k, trials;
    static std::optional<std::uint64_t> seed;
    static bool dry_run = false, quiet = false;
    auto* cmd = app.add_subcommand("pipeline", "Run every stage from one config file");
    cmd->add_option("--config", config_path, "Run config")->required();
    cmd->add_flag("--dry-run", dry_run, "Validate the config and print the plan");
    cmd->add_flag("--quiet", quiet, "No stage log");
    cmd->add_option("--strategy", strategy, "Override selection strategy");
    cmd->add_option("-k", k, "Override examples per prompt");
    cmd->add_option("--trials", trials, "Override random trials");
    cmd->add_option("--seed", seed, "Override seed");
    cmd->add_option("--cache-dir", cache_dir, "Override cache directory");
    cmd->add_option("--out-dir", out_dir, "Override output directory");
    cmd->callback([] {
        auto config = load_run_config(config_path);
        if (!strategy.empty()) config.selection.strategy = parse_strategy(strategy);
        if (k) config.selection.k = *k;
        if (trials) config.selection.trials = *trials;
        if (seed) config.seed = config.selection.seed = *seed;
        if (!cache_dir.empty()) config.cache_dir = cache_dir;
        if (!out_dir.empty()) config.out_dir = out_dir;

        PipelineOptions options;
        options.dry_run = dry_run;
        options.log = quiet ? nullptr : &std::cerr;
        if (dry_run) {
            config.validate();
            std::cout << describe_plan(config);
            return;
        }
        auto result = run_pipeline(config, options);
        std::cout << format_report(result.report);
    });
}

void add_export_command(CLI::App& app, Globals& g) {
    static std::string bank_path, cfg_path, cache_dir, out_path, skills_path;
    auto* cmd = app.add_subcommand("export-embeddings", "Write (id, embedding) lines");
    cmd->add_option("--bank", bank_path, "Bank file")->required();
    cmd->add_option("--cfg", cfg_path, "Embedder or run config");
    cmd->add_option("--cache", cache_dir, "Embedding cache directory");
    cmd->add_option("--skills", skills_path, "Export identity-order skill embeddings instead");
    cmd->add_option("--out", out_path, "Output file")->required();
    cmd->callback([&g] {
        auto bank = load_bank(bank_path, g.task);
        Embedder embedder(embedder_from(cfg_path), cache_at(cache_dir));
        std::vector<std::string> ids = bank.ids();
        std::vector<EmbeddingVector> vectors;
        if (skills_path.empty()) {
            std::vector<std::string> texts;
            for (const auto& ex : bank.examples()) texts.push_back(embedding_text_of(ex));
            vectors = embedder.embed_batch(texts);
        } else {
            std::unordered_map<std::string, SkillCandidateSet> by_id;
            for (auto& set : load_skill_sets(skills_path)) by_id[set.input_id] = set;
            std::vector<SkillCandidateSet> ordered;
            for (const auto& id : ids) {
                auto it = by_id.find(id);
                if (it == by_id.end()) throw Error(ErrorKind::Data, "no skills for '" + id + "'");
                ordered.push_back(it->second);
            }
            for (auto& c : embed_candidate_sets(ordered, embedder, SkillVariant::Base)) {
                vectors.push_back(std::move(c.candidates.front()));
            }
        }
        write_file_atomic(out_path, serialize_embedding_export(ids, vectors));
        std::cout << "wrote " << ids.size() << " embeddings to " << out_path << "\n";
    });
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Skill-based few-shot example selection"};
    app.require_subcommand(1);
    Globals g;
    app.add_option("--task", g.task, "Task tag: text-to-sql, cogs or any other name")
        ->capture_default_str();

    add_bank_commands(app, g);
    add_embed_command(app, g);
    add_rewrite_command(app, g);
    add_select_command(app, g);
    add_run_command(app, g);
    add_eval_command(app, g);
    add_pipeline_command(app);
    add_export_command(app, g);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const Error& e) {
        std::cerr << "skillknn: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "skillknn: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
