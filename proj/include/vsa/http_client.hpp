#pragma once

// JSON-over-HTTP POST with timeout and bounded retries, shared by the remote model backend
// and the remote surgical function adapter.

#include <algorithm>
#include <chrono>
#include <string>
#include <thread>

#include "httplib.h"
#include "vsa/result.hpp"

namespace vsa {

struct EndpointConfig {
    std::string base_url = "http://127.0.0.1:8080"; // scheme://host[:port]
    std::string path = "/";
    int timeout_ms = 30000;
    int max_attempts = 3;      // total tries, including the first
    int retry_backoff_ms = 50; // doubled after each failed attempt
};

enum class TransportFailure { timeout, connection, http_status };

inline const char* to_string(TransportFailure f)
{
    switch (f) {
    case TransportFailure::timeout:
        return "timeout";
    case TransportFailure::connection:
        return "connection";
    case TransportFailure::http_status:
        return "http_status";
    }
    return "?";
}

struct TransportError {
    TransportFailure cause = TransportFailure::connection;
    int status = 0;    // last HTTP status for http_status
    int attempts = 0;
    std::string message;
};

/// POSTs `body` as application/json. Retries on connection errors, timeouts and 5xx; 4xx is final.
inline Result<std::string, TransportError> post_json(const EndpointConfig& ep, const std::string& body)
{
    httplib::Client client(ep.base_url);
    const auto timeout = std::chrono::milliseconds(ep.timeout_ms);
    client.set_connection_timeout(timeout);
    client.set_read_timeout(timeout);
    client.set_write_timeout(timeout);

    TransportError last;
    int backoff = ep.retry_backoff_ms;
    const int attempts = std::max(1, ep.max_attempts);
    for (int attempt = 1; attempt <= attempts; ++attempt) {
        last.attempts = attempt;
        auto res = client.Post(ep.path, body, "application/json");
        if (res) {
            if (res->status == 200)
                return res->body;
            last.cause = TransportFailure::http_status;
            last.status = res->status;
            last.message = "HTTP " + std::to_string(res->status) + " from " + ep.base_url + ep.path;
            if (res->status < 500)
                break;
        } else {
            const auto err = res.error();
            last.cause = err == httplib::Error::Read || err == httplib::Error::Write ||
                                 err == httplib::Error::ConnectionTimeout
                             ? TransportFailure::timeout
                             : TransportFailure::connection;
            last.status = 0;
            last.message = httplib::to_string(err) + " talking to " + ep.base_url + ep.path;
        }
        if (attempt < attempts && backoff > 0) {
            std::this_thread::sleep_for(std::chrono::milliseconds(backoff));
            backoff *= 2;
        }
    }
    return unexpected(std::move(last));
}

} // namespace vsa
