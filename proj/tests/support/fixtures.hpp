#pragma once

#include "skillknn/backend.hpp"
#include "skillknn/bank.hpp"
#include "skillknn/embedding.hpp"
#include "skillknn/rewriter.hpp"
#include "skillknn/selector.hpp"

#include <cstdint>
#include <filesystem>
#include <memory>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

namespace testsupport {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    TempDir();
    ~TempDir();
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

void write_text(const std::filesystem::path& path, const std::string& text);

/// Gaussian entries; redrawn until the norm is clearly non-zero.
std::vector<double> random_vector(std::mt19937_64& rng, std::size_t dim);
skillknn::EmbeddingVector random_embedding(std::mt19937_64& rng, std::size_t dim);

/// Textbook exact scan: cosine computed from scratch, full sort by
/// (score desc, index asc), first k.
std::vector<skillknn::ScoredExample> brute_force_knn(const std::vector<double>& query,
                                                     const std::vector<std::vector<double>>& bank,
                                                     const std::vector<std::string>& ids,
                                                     std::size_t k);

std::vector<std::string> numbered_ids(const std::string& prefix, std::size_t n);

/// Bank whose examples only carry ids (question/target are placeholders).
skillknn::ExampleBank placeholder_bank(std::size_t n, const std::string& prefix = "e");

/// Synthetic text-to-SQL data with a latent skill class per example.
/// Questions are a short class phrase plus many tokens from an entity
/// cluster, so surface similarity follows the cluster while the correct
/// neighbours share the class. db_id is the cluster; half the clusters
/// put a JOIN in their targets.
struct SkillFixture {
    std::size_t classes = 10;
    std::size_t clusters = 20;
    skillknn::ExampleBank bank;
    skillknn::ExampleBank test_set;
    std::unordered_map<std::string, std::size_t> class_of;    // by example/query id
    std::unordered_map<std::string, std::size_t> class_of_question;
    skillknn::DemonstrationSet demos;
    skillknn::PromptTemplate skill_template;

    std::vector<skillknn::QueryInput> queries() const;

    /// Rewriter that recognises the class of the input question. The
    /// identity demonstration order yields the class's canonical skill;
    /// other orders yield one of its paraphrases.
    std::shared_ptr<skillknn::MockBackend> oracle_rewriter() const;

    static std::string skill_text(std::size_t cls, std::size_t variant);
};

SkillFixture make_skill_fixture(std::uint64_t seed, std::size_t bank_size = 200,
                                std::size_t query_count = 50);

/// Mean over results of the fraction of ranked ids whose class equals the
/// query's class.
double same_class_fraction(const std::vector<skillknn::SelectionResult>& results,
                           const std::unordered_map<std::string, std::size_t>& class_of);

}  // namespace testsupport
