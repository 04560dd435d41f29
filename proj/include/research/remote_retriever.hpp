#pragma once

// Client for an external retrieval service.
//   request:  {"query": text, "top_k": int}
//   response: {"hits": [{"doc_id", "score", "title", "text"}, ...]}

#include <string>
#include <vector>

#include "research/http.hpp"
#include "research/retrieval.hpp"

namespace research {

/// Maps a service response to hits. Throws MALFORMED_RESPONSE on schema errors.
inline std::vector<RetrievalHit> parse_hits_response(const nlohmann::json& body,
                                                     std::size_t top_k) {
  std::vector<RetrievalHit> hits;
  try {
    for (const auto& item : body.at("hits")) {
      RetrievalHit hit{item.at("doc_id").get<std::string>(),
                       item.at("score").get<double>(),
                       item.at("title").get<std::string>(),
                       item.at("text").get<std::string>()};
      if (!(hit.score >= 0.0)) {
        throw Error(ErrorCode::kMalformedResponse, "negative score for " + hit.doc_id);
      }
      hits.push_back(std::move(hit));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kMalformedResponse, e.what());
  }
  sort_hits(hits);
  if (hits.size() > top_k) hits.resize(top_k);
  return hits;
}

inline std::vector<RetrievalHit> remote_search(const EndpointConfig& endpoint,
                                               std::string_view query,
                                               std::size_t top_k) {
  if (top_k == 0) throw Error(ErrorCode::kInvalidArgument, "top_k must be >= 1");
  const auto body = post_json(endpoint, {{"query", query}, {"top_k", top_k}},
                              ErrorCode::kRetrieverUnavailable);
  return parse_hits_response(body, top_k);
}

class RemoteRetriever final : public Retriever {
 public:
  explicit RemoteRetriever(EndpointConfig endpoint) : endpoint_(std::move(endpoint)) {}

  std::vector<RetrievalHit> search(std::string_view query,
                                   std::size_t top_k) const override {
    return remote_search(endpoint_, query, top_k);
  }

 private:
  EndpointConfig endpoint_;
};

}  // namespace research
