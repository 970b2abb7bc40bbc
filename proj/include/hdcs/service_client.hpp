#pragma once

#include <chrono>
#include <string>
#include <thread>
#include <vector>

#include "httplib.h"
#include "json.hpp"

#include "hdcs/encoder.hpp"
#include "hdcs/errors.hpp"

namespace hdcs {

// Split "http://host:port/path" into client base and request path.
inline std::pair<std::string, std::string> split_url(const std::string& url) {
  std::size_t scheme = url.find("://");
  std::size_t host_start = scheme == std::string::npos ? 0 : scheme + 3;
  std::size_t path_at = url.find('/', host_start);
  if (path_at == std::string::npos) return {url, "/encode"};
  return {url.substr(0, path_at), url.substr(path_at)};
}

// Fetch subword vectors from a remote encoder. Three attempts with
// exponential backoff before giving up with TransportError; schema and
// dimension problems are not retried.
inline std::vector<SentenceVectors> fetch_vectors_http(
    const std::string& url, const std::vector<std::vector<std::string>>& sents,
    std::size_t expect_d_w, int attempts = 3, int backoff_ms = 50) {
  auto [base, path] = split_url(url);
  nlohmann::json req;
  req["sentences"] = sents;
  std::string body = req.dump();
  std::string last_error;
  for (int attempt = 0; attempt < attempts; ++attempt) {
    if (attempt > 0)
      std::this_thread::sleep_for(std::chrono::milliseconds(backoff_ms << (attempt - 1)));
    httplib::Client client(base);
    client.set_read_timeout(30, 0);
    auto res = client.Post(path, body, "application/json");
    if (!res) {
      last_error = "no response from " + base;
      continue;
    }
    if (res->status != 200) {
      last_error = "status " + std::to_string(res->status) + " from " + base;
      continue;
    }
    return parse_service_response(res->body, expect_d_w, sents.size());
  }
  throw TransportError("encoder service unreachable after " + std::to_string(attempts) +
                       " attempts: " + last_error);
}

}  // namespace hdcs
