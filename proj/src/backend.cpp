#include "skillknn/backend.hpp"

#include "skillknn/error.hpp"
#include "skillknn/http.hpp"
#include "skillknn/jsonl.hpp"
#include "skillknn/util.hpp"

namespace skillknn {

void DecodingParams::validate() const {
    if (temperature < 0.0) throw Error(ErrorKind::Input, "temperature must be non-negative");
    if (n_samples == 0) throw Error(ErrorKind::Input, "n_samples must be positive");
    if (n_samples > 1 && temperature <= 0.0) {
        throw Error(ErrorKind::Input, "n_samples > 1 requires temperature > 0");
    }
    if (max_decode_tokens == 0) throw Error(ErrorKind::Input, "max_decode_tokens must be positive");
    if (max_context_tokens <= max_decode_tokens) {
        throw Error(ErrorKind::Input, "max_context_tokens must exceed max_decode_tokens");
    }
}

void BackboneEndpoint::validate() const {
    if (model_id.empty()) throw Error(ErrorKind::Config, "endpoint model_id is empty");
    if (kind == EndpointKind::Remote && url.empty()) {
        throw Error(ErrorKind::Config, "remote endpoint '" + model_id + "' requires a url");
    }
}

HttpCompletionBackend::HttpCompletionBackend(BackboneEndpoint endpoint)
    : endpoint_(std::move(endpoint)) {
    endpoint_.validate();
    HttpOptions options;
    options.timeout = endpoint_.timeout;
    options.max_retries = endpoint_.max_retries;
    options.bearer_token_env = endpoint_.api_key_env;
    client_ = std::make_unique<HttpJsonClient>(endpoint_.url, options);
}

HttpCompletionBackend::~HttpCompletionBackend() = default;

std::vector<std::string> HttpCompletionBackend::generate(const std::string& prompt,
                                                         const DecodingParams& params,
                                                         const std::vector<std::string>& stop) {
    nlohmann::json request;
    request["model"] = endpoint_.model_id;
    request["temperature"] = params.temperature;
    request["max_tokens"] = params.max_decode_tokens;
    request["n"] = params.n_samples;
    if (!stop.empty()) {
        // Common endpoints accept at most four stop sequences.
        std::vector<std::string> head(stop.begin(), stop.begin() + std::min<std::size_t>(stop.size(), 4));
        request["stop"] = head;
    }
    if (endpoint_.api_style == ApiStyle::Chat) {
        request["messages"] = nlohmann::json::array({{{"role", "user"}, {"content", prompt}}});
    } else {
        request["prompt"] = prompt;
    }

    nlohmann::json response = client_->post(request);
    std::vector<std::string> out;
    try {
        for (const auto& choice : response.at("choices")) {
            if (endpoint_.api_style == ApiStyle::Chat) {
                const auto& content = choice.at("message").at("content");
                out.push_back(content.is_null() ? std::string() : content.get<std::string>());
            } else {
                out.push_back(choice.at("text").get<std::string>());
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::Transport,
                    endpoint_.url + ": malformed completion response: " + e.what());
    }
    if (out.size() != params.n_samples) {
        throw Error(ErrorKind::Transport, endpoint_.url + ": expected " +
                                              std::to_string(params.n_samples) + " choices, got " +
                                              std::to_string(out.size()));
    }
    return out;
}

MockBackend::MockBackend(std::string model_id) : model_id_(std::move(model_id)) {}

MockBackend& MockBackend::with_canned(std::string prompt_sha256, std::vector<std::string> outputs) {
    if (outputs.empty()) throw Error(ErrorKind::Config, "canned entry has no outputs");
    canned_.insert_or_assign(std::move(prompt_sha256), std::move(outputs));
    return *this;
}

MockBackend& MockBackend::with_responder(Responder responder) {
    responder_ = std::move(responder);
    return *this;
}

MockBackend& MockBackend::with_fallback(MockFallback fallback, PromptTemplate tmpl) {
    fallback_ = fallback;
    template_ = std::move(tmpl);
    return *this;
}

MockBackend& MockBackend::load_canned(const std::filesystem::path& path) {
    jsonl::for_each_record(read_file(path), path.string(),
                           [&](const nlohmann::json& rec, std::size_t line) {
                               try {
                                   std::vector<std::string> outputs;
                                   if (rec.contains("outputs")) {
                                       outputs = rec.at("outputs").get<std::vector<std::string>>();
                                   } else {
                                       outputs.push_back(rec.at("output").get<std::string>());
                                   }
                                   with_canned(rec.at("prompt_sha256").get<std::string>(),
                                               std::move(outputs));
                               } catch (const nlohmann::json::exception& e) {
                                   throw Error(ErrorKind::Parse, path.string() + ":" +
                                                                     std::to_string(line) + ": " +
                                                                     e.what());
                               }
                           });
    return *this;
}

std::vector<std::string> MockBackend::generate(const std::string& prompt,
                                               const DecodingParams& params,
                                               const std::vector<std::string>&) {
    ++calls_;
    std::vector<std::string> out;
    out.reserve(params.n_samples);
    auto canned = canned_.find(sha256_hex(prompt));
    for (std::size_t s = 0; s < params.n_samples; ++s) {
        if (canned != canned_.end()) {
            out.push_back(canned->second[s % canned->second.size()]);
        } else if (responder_) {
            out.push_back(responder_(prompt, s));
        } else if (fallback_ == MockFallback::LastOutput) {
            auto last = template_.last_output(prompt);
            out.push_back(last ? *last : std::string());
        } else {
            throw Error(ErrorKind::Transport,
                        "mock backend '" + model_id_ + "' has no answer for prompt " +
                            sha256_hex(prompt).substr(0, 12));
        }
    }
    return out;
}

std::shared_ptr<CompletionBackend> make_backend(const BackboneEndpoint& endpoint,
                                                const PromptTemplate& tmpl) {
    endpoint.validate();
    if (endpoint.kind == EndpointKind::Remote) {
        return std::make_shared<HttpCompletionBackend>(endpoint);
    }
    auto mock = std::make_shared<MockBackend>(endpoint.model_id);
    mock->with_fallback(endpoint.fallback, tmpl);
    if (!endpoint.canned_path.empty()) mock->load_canned(endpoint.canned_path);
    return mock;
}

}  // namespace skillknn
