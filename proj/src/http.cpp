#include "skillknn/http.hpp"

#include "skillknn/error.hpp"

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include "httplib.h"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <thread>

namespace skillknn {

namespace {

struct ParsedUrl {
    std::string origin;  // scheme://host[:port]
    std::string path;
};

ParsedUrl parse_url(const std::string& url) {
    auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) {
        throw Error(ErrorKind::Config, "endpoint url '" + url + "' has no scheme");
    }
    std::string scheme = url.substr(0, scheme_end);
    if (scheme != "http" && scheme != "https") {
        throw Error(ErrorKind::Config, "endpoint url '" + url + "' must be http or https");
    }
    auto path_start = url.find('/', scheme_end + 3);
    ParsedUrl parsed;
    if (path_start == std::string::npos) {
        parsed.origin = url;
        parsed.path = "/";
    } else {
        parsed.origin = url.substr(0, path_start);
        parsed.path = url.substr(path_start);
    }
    if (parsed.origin.size() == scheme_end + 3) {
        throw Error(ErrorKind::Config, "endpoint url '" + url + "' has no host");
    }
    return parsed;
}

bool mentions_context_overflow(const std::string& body) {
    std::string lower(body.size(), '\0');
    std::transform(body.begin(), body.end(), lower.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return lower.find("context_length") != std::string::npos ||
           lower.find("context length") != std::string::npos ||
           lower.find("maximum context") != std::string::npos;
}

bool retryable_status(int status) { return status == 429 || status >= 500; }

}  // namespace

struct HttpJsonClient::Impl {
    ParsedUrl target;
};

HttpJsonClient::HttpJsonClient(const std::string& url, HttpOptions options)
    : url_(url), options_(std::move(options)), impl_(std::make_unique<Impl>()) {
    impl_->target = parse_url(url);
}

HttpJsonClient::~HttpJsonClient() = default;
HttpJsonClient::HttpJsonClient(HttpJsonClient&&) noexcept = default;
HttpJsonClient& HttpJsonClient::operator=(HttpJsonClient&&) noexcept = default;

nlohmann::json HttpJsonClient::post(const nlohmann::json& body) const {
    // A client per call keeps concurrent posts from sharing a socket.
    httplib::Client client(impl_->target.origin);
    auto seconds = std::chrono::duration_cast<std::chrono::seconds>(options_.timeout);
    auto micros = std::chrono::duration_cast<std::chrono::microseconds>(options_.timeout - seconds);
    client.set_connection_timeout(seconds.count(), micros.count());
    client.set_read_timeout(seconds.count(), micros.count());
    client.set_write_timeout(seconds.count(), micros.count());

    httplib::Headers headers;
    if (!options_.bearer_token_env.empty()) {
        if (const char* token = std::getenv(options_.bearer_token_env.c_str()); token && *token) {
            headers.emplace("Authorization", std::string("Bearer ") + token);
        }
    }

    const std::string payload = body.dump();
    std::string last_failure;
    const int attempts = std::max(0, options_.max_retries) + 1;
    for (int attempt = 0; attempt < attempts; ++attempt) {
        if (attempt > 0) {
            std::this_thread::sleep_for(options_.retry_backoff * (1 << std::min(attempt - 1, 10)));
        }
        auto result = client.Post(impl_->target.path, headers, payload, "application/json");
        if (!result) {
            last_failure = "connection failed (" + httplib::to_string(result.error()) + ")";
            continue;
        }
        const int status = result->status;
        if (status >= 200 && status < 300) {
            try {
                return nlohmann::json::parse(result->body);
            } catch (const nlohmann::json::parse_error& e) {
                throw Error(ErrorKind::Transport,
                            url_ + ": response is not JSON: " + std::string(e.what()));
            }
        }
        if (status == 400 && mentions_context_overflow(result->body)) {
            throw Error(ErrorKind::Budget, url_ + ": endpoint rejected prompt length: " + result->body);
        }
        last_failure = "HTTP " + std::to_string(status) + ": " + result->body.substr(0, 200);
        if (!retryable_status(status)) break;
    }
    throw Error(ErrorKind::Transport, url_ + ": " + last_failure);
}

}  // namespace skillknn
