#pragma once

#include <algorithm>
#include <chrono>
#include <string>
#include <thread>

#include "httplib.h"
#include "json.hpp"
#include "research/error.hpp"

namespace research {

struct EndpointConfig {
  std::string url;  // e.g. "http://127.0.0.1:8000/retrieve"
  double timeout_seconds = 30.0;
  int retries = 2;  // extra attempts after the first
  double retry_backoff_seconds = 0.0;
  std::string api_key;  // sent as a bearer token when non-empty
};

namespace detail {

struct SplitUrl {
  std::string origin;  // scheme://host[:port]
  std::string path;
};

inline SplitUrl split_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  const auto host_begin = scheme_end == std::string::npos ? 0 : scheme_end + 3;
  const auto path_begin = url.find('/', host_begin);
  if (path_begin == std::string::npos) return {url, "/"};
  return {url.substr(0, path_begin), url.substr(path_begin)};
}

}  // namespace detail

/// POSTs `body` as JSON and returns the parsed 200 response. Transport errors
/// and non-200 statuses are retried; after the last attempt `unavailable` is
/// thrown. A 200 whose body is not JSON throws MALFORMED_RESPONSE at once.
inline nlohmann::json post_json(const EndpointConfig& endpoint,
                                const nlohmann::json& body,
                                ErrorCode unavailable) {
  const auto [origin, path] = detail::split_url(endpoint.url);
  const auto timeout = std::chrono::duration<double>(endpoint.timeout_seconds);
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(timeout);
  const auto usecs =
      std::chrono::duration_cast<std::chrono::microseconds>(timeout - secs);

  httplib::Headers headers;
  if (!endpoint.api_key.empty()) {
    headers.emplace("Authorization", "Bearer " + endpoint.api_key);
  }
  const std::string payload = body.dump();
  std::string last_error = "no attempt made";
  const int attempts = 1 + std::max(0, endpoint.retries);
  for (int attempt = 0; attempt < attempts; ++attempt) {
    if (attempt > 0 && endpoint.retry_backoff_seconds > 0) {
      std::this_thread::sleep_for(
          std::chrono::duration<double>(endpoint.retry_backoff_seconds * attempt));
    }
    httplib::Client client(origin);
    client.set_connection_timeout(secs.count(), usecs.count());
    client.set_read_timeout(secs.count(), usecs.count());
    client.set_write_timeout(secs.count(), usecs.count());
    auto res = client.Post(path, headers, payload, "application/json");
    if (!res) {
      last_error = httplib::to_string(res.error());
      continue;
    }
    if (res->status != 200) {
      last_error = "HTTP " + std::to_string(res->status);
      continue;
    }
    try {
      return nlohmann::json::parse(res->body);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::kMalformedResponse, endpoint.url + ": " + e.what());
    }
  }
  throw Error(unavailable, endpoint.url + " after " + std::to_string(attempts) +
                               " attempt(s): " + last_error);
}

}  // namespace research
