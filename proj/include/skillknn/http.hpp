#pragma once

#include "json.hpp"

#include <chrono>
#include <memory>
#include <string>

namespace skillknn {

struct HttpOptions {
    std::chrono::milliseconds timeout{60000};
    int max_retries = 3;
    std::chrono::milliseconds retry_backoff{500};
    /// Environment variable holding a bearer token; empty or unset sends no
    /// Authorization header.
    std::string bearer_token_env;
};

/// POSTs JSON bodies to one URL, retrying connection failures, 429 and 5xx
/// with exponential backoff.
///
/// Exhausted retries and other non-2xx responses raise Error(Transport). A 400
/// whose body mentions the context length raises Error(Budget), since that is
/// how completion endpoints reject oversized prompts.
class HttpJsonClient {
public:
    HttpJsonClient(const std::string& url, HttpOptions options);
    ~HttpJsonClient();
    HttpJsonClient(HttpJsonClient&&) noexcept;
    HttpJsonClient& operator=(HttpJsonClient&&) noexcept;

    nlohmann::json post(const nlohmann::json& body) const;

    const std::string& url() const noexcept { return url_; }

private:
    struct Impl;
    std::string url_;
    HttpOptions options_;
    std::unique_ptr<Impl> impl_;
};

}  // namespace skillknn
