#pragma once

#include "skillknn/http.hpp"
#include "skillknn/prompt_template.hpp"

#include <atomic>
#include <chrono>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

namespace skillknn {

/// Decoding regime. Defaults: greedy, 200 new tokens, 4096-token window.
struct DecodingParams {
    double temperature = 0.0;
    std::size_t max_decode_tokens = 200;
    std::size_t max_context_tokens = 4096;
    std::size_t n_samples = 1;

    /// Throws Error(Input) for n_samples > 1 at temperature 0, negative
    /// temperature, or a decode budget that leaves no room for the prompt.
    void validate() const;
};

enum class EndpointKind { Remote, Mock };
enum class ApiStyle { Chat, Completion };
enum class MockFallback { Error, LastOutput };

struct BackboneEndpoint {
    EndpointKind kind = EndpointKind::Mock;
    std::string url;
    std::string model_id = "mock";
    ApiStyle api_style = ApiStyle::Chat;
    std::string api_key_env;
    std::chrono::milliseconds timeout{120000};
    int max_retries = 3;
    /// Mock only: canned outputs keyed by prompt SHA-256, and what to answer
    /// for prompts not in the map.
    std::filesystem::path canned_path;
    MockFallback fallback = MockFallback::LastOutput;

    void validate() const;
};

class CompletionBackend {
public:
    virtual ~CompletionBackend() = default;

    /// Raw completions, `params.n_samples` of them.
    virtual std::vector<std::string> generate(const std::string& prompt,
                                              const DecodingParams& params,
                                              const std::vector<std::string>& stop) = 0;

    virtual const std::string& model_id() const = 0;
};

/// POSTs to an OpenAI-compatible endpoint. Chat style sends
/// {"model", "messages": [{"role": "user", "content": prompt}], ...} and
/// reads choices[i].message.content; completion style sends {"model",
/// "prompt", ...} and reads choices[i].text.
class HttpCompletionBackend final : public CompletionBackend {
public:
    explicit HttpCompletionBackend(BackboneEndpoint endpoint);
    ~HttpCompletionBackend() override;

    std::vector<std::string> generate(const std::string& prompt, const DecodingParams& params,
                                      const std::vector<std::string>& stop) override;
    const std::string& model_id() const override { return endpoint_.model_id; }

private:
    BackboneEndpoint endpoint_;
    std::unique_ptr<HttpJsonClient> client_;
};

/// Deterministic offline backend. Lookup order: canned map by prompt hash,
/// then the responder function, then the fallback policy.
class MockBackend final : public CompletionBackend {
public:
    /// Returns the completion for sample `sample_index` of `prompt`.
    using Responder = std::function<std::string(const std::string& prompt, std::size_t sample_index)>;

    explicit MockBackend(std::string model_id = "mock");

    MockBackend& with_canned(std::string prompt_sha256, std::vector<std::string> outputs);
    MockBackend& with_responder(Responder responder);
    MockBackend& with_fallback(MockFallback fallback, PromptTemplate tmpl);

    /// Records {"prompt_sha256": ..., "output": ...} or {..., "outputs": [...]}.
    MockBackend& load_canned(const std::filesystem::path& path);

    std::vector<std::string> generate(const std::string& prompt, const DecodingParams& params,
                                      const std::vector<std::string>& stop) override;
    const std::string& model_id() const override { return model_id_; }

    std::size_t calls() const noexcept { return calls_.load(); }

private:
    std::string model_id_;
    std::unordered_map<std::string, std::vector<std::string>> canned_;
    Responder responder_;
    MockFallback fallback_ = MockFallback::Error;
    PromptTemplate template_;
    std::atomic<std::size_t> calls_{0};
};

/// `tmpl` drives the mock's last-output fallback; ignored for remote.
std::shared_ptr<CompletionBackend> make_backend(const BackboneEndpoint& endpoint,
                                                const PromptTemplate& tmpl);

}  // namespace skillknn
