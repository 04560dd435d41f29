#pragma once

// Local lexical retrieval: a BM25 inverted index over a JSONL corpus.
//
// Index directory layout (all UTF-8 text):
//   meta.json       {"format": 1, "k1", "b", "num_docs", "num_chunks",
//                    "avg_len", "corpus_checksum"}
//   docs.jsonl      one chunk per line {"id", "title", "text", "len"},
//                   line number = internal chunk index
//   postings.jsonl  one term per line {"term", "postings": [[chunk, tf], ...]}

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "json.hpp"
#include "research/error.hpp"

namespace research {

struct CorpusDoc {
  std::string id;
  std::string title;
  std::string text;
};

struct RetrievalHit {
  std::string doc_id;
  double score = 0.0;
  std::string title;
  std::string text;

  bool operator==(const RetrievalHit&) const = default;
};

/// Non-increasing score, ties by ascending doc_id.
inline void sort_hits(std::vector<RetrievalHit>& hits) {
  std::stable_sort(hits.begin(), hits.end(),
                   [](const RetrievalHit& a, const RetrievalHit& b) {
                     if (a.score != b.score) return a.score > b.score;
                     return a.doc_id < b.doc_id;
                   });
}

class Retriever {
 public:
  virtual ~Retriever() = default;
  /// Must be safe to call concurrently.
  virtual std::vector<RetrievalHit> search(std::string_view query,
                                           std::size_t top_k) const = 0;
};

struct Bm25Params {
  double k1 = 1.2;
  double b = 0.75;

  void validate() const {
    if (!(k1 >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "bm25 k1 must be >= 0");
    if (!(b >= 0.0 && b <= 1.0)) {
      throw Error(ErrorCode::kInvalidArgument, "bm25 b must be in [0, 1]");
    }
  }
};

/// Lowercase ASCII, split on anything that is not alphanumeric. Bytes >= 0x80
/// are kept as word characters so UTF-8 words stay whole.
inline std::vector<std::string> bm25_tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string current;
  for (unsigned char c : text) {
    if (std::isalnum(c) || c >= 0x80) {
      current.push_back(static_cast<char>(std::tolower(c)));
    } else if (!current.empty()) {
      out.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) out.push_back(std::move(current));
  return out;
}

inline constexpr std::size_t kMaxChunkChars = 1000;

/// Splits text longer than `max_chars` at sentence ends (". ", "! ", "? ",
/// newline). A sentence that alone exceeds the limit is cut at the last space
/// before it, or hard-cut if there is none.
inline std::vector<std::string> chunk_text(std::string_view text,
                                           std::size_t max_chars = kMaxChunkChars) {
  if (text.size() <= max_chars) return {std::string(text)};

  std::vector<std::string_view> sentences;
  std::size_t start = 0;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    const bool end_punct = (c == '.' || c == '!' || c == '?') &&
                           (i + 1 == text.size() || text[i + 1] == ' ');
    if (end_punct || c == '\n') {
      sentences.push_back(text.substr(start, i + 1 - start));
      start = i + 1;
    }
  }
  if (start < text.size()) sentences.push_back(text.substr(start));

  std::vector<std::string> chunks;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) chunks.push_back(std::move(current));
    current.clear();
  };
  for (std::string_view sentence : sentences) {
    while (sentence.size() > max_chars) {
      flush();
      std::size_t cut = sentence.rfind(' ', max_chars);
      if (cut == std::string_view::npos || cut == 0) cut = max_chars;
      chunks.emplace_back(sentence.substr(0, cut));
      sentence.remove_prefix(cut);
      while (!sentence.empty() && sentence.front() == ' ') sentence.remove_prefix(1);
    }
    if (current.size() + sentence.size() > max_chars) flush();
    if (current.empty()) {
      // A chunk never starts with the blank that separated it from the last.
      const auto first = sentence.find_first_not_of(" \t\n\r");
      if (first == std::string_view::npos) continue;
      sentence.remove_prefix(first);
    }
    current.append(sentence);
  }
  flush();
  return chunks;
}

/// 64-bit FNV-1a, used to fingerprint the corpus in index metadata.
inline std::uint64_t fnv1a64(std::string_view data,
                             std::uint64_t hash = 1469598103934665603ULL) {
  for (unsigned char c : data) {
    hash ^= c;
    hash *= 1099511628211ULL;
  }
  return hash;
}

class Bm25Index final : public Retriever {
 public:
  struct Posting {
    std::uint32_t chunk = 0;
    std::uint32_t tf = 0;
  };

  struct Chunk {
    std::string id;
    std::string title;
    std::string text;
    std::uint32_t length = 0;
  };

  Bm25Index() = default;

  /// Builds from whole documents; long texts are chunked, chunk ids become
  /// "<id>#<n>". Throws DUPLICATE_ID / EMPTY_CORPUS.
  static Bm25Index build(const std::vector<CorpusDoc>& corpus,
                         Bm25Params params = {},
                         std::uint64_t corpus_checksum = 0) {
    params.validate();
    if (corpus.empty()) throw Error(ErrorCode::kEmptyCorpus, "corpus has no documents");

    Bm25Index index;
    index.params_ = params;
    index.num_docs_ = corpus.size();
    index.checksum_ = corpus_checksum;

    std::unordered_set<std::string> seen;
    for (const auto& doc : corpus) {
      if (!seen.insert(doc.id).second) throw Error(ErrorCode::kDuplicateId, doc.id);
      const auto pieces = chunk_text(doc.text);
      for (std::size_t n = 0; n < pieces.size(); ++n) {
        std::string id = pieces.size() == 1 ? doc.id : doc.id + "#" + std::to_string(n);
        index.add_chunk({std::move(id), doc.title, pieces[n], 0});
      }
    }
    index.finalize();
    return index;
  }

  std::vector<RetrievalHit> search(std::string_view query,
                                   std::size_t top_k) const override {
    if (top_k == 0) throw Error(ErrorCode::kInvalidArgument, "top_k must be >= 1");
    auto terms = bm25_tokenize(query);
    std::sort(terms.begin(), terms.end());
    terms.erase(std::unique(terms.begin(), terms.end()), terms.end());

    std::unordered_map<std::uint32_t, double> scores;
    const double n = static_cast<double>(chunks_.size());
    for (const auto& term : terms) {
      const auto it = postings_.find(term);
      if (it == postings_.end()) continue;
      const double df = static_cast<double>(it->second.size());
      const double idf = std::log((n - df + 0.5) / (df + 0.5) + 1.0);
      for (const auto& p : it->second) {
        const double tf = p.tf;
        const double len_ratio = chunks_[p.chunk].length / avg_length_;
        const double denom =
            tf + params_.k1 * (1.0 - params_.b + params_.b * len_ratio);
        scores[p.chunk] += idf * tf * (params_.k1 + 1.0) / denom;
      }
    }

    std::vector<RetrievalHit> hits;
    hits.reserve(scores.size());
    for (const auto& [chunk, score] : scores) {
      const auto& c = chunks_[chunk];
      hits.push_back({c.id, score, c.title, c.text});
    }
    sort_hits(hits);
    if (hits.size() > top_k) hits.resize(top_k);
    return hits;
  }

  const Bm25Params& params() const { return params_; }
  std::size_t num_docs() const { return num_docs_; }
  std::size_t num_chunks() const { return chunks_.size(); }
  double avg_length() const { return avg_length_; }
  std::uint64_t corpus_checksum() const { return checksum_; }
  const std::vector<Chunk>& chunks() const { return chunks_; }

  std::size_t document_frequency(const std::string& term) const {
    const auto it = postings_.find(term);
    return it == postings_.end() ? 0 : it->second.size();
  }

  std::vector<std::string> vocabulary() const {
    std::vector<std::string> out;
    out.reserve(postings_.size());
    for (const auto& [term, _] : postings_) out.push_back(term);
    std::sort(out.begin(), out.end());
    return out;
  }

  void save(const std::filesystem::path& dir) const {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    {
      std::ofstream out(dir / "docs.jsonl", std::ios::binary);
      for (const auto& c : chunks_) {
        out << nlohmann::json{{"id", c.id}, {"title", c.title}, {"text", c.text},
                              {"len", c.length}}
                   .dump()
            << '\n';
      }
      if (!out) throw Error(ErrorCode::kIoError, "cannot write docs.jsonl");
    }
    {
      std::ofstream out(dir / "postings.jsonl", std::ios::binary);
      for (const auto& term : vocabulary()) {
        nlohmann::json list = nlohmann::json::array();
        for (const auto& p : postings_.at(term)) list.push_back({p.chunk, p.tf});
        out << nlohmann::json{{"term", term}, {"postings", list}}.dump() << '\n';
      }
      if (!out) throw Error(ErrorCode::kIoError, "cannot write postings.jsonl");
    }
    std::ostringstream checksum;
    checksum << std::hex << std::setw(16) << std::setfill('0') << checksum_;
    nlohmann::json meta = {{"format", 1},
                           {"k1", params_.k1},
                           {"b", params_.b},
                           {"num_docs", num_docs_},
                           {"num_chunks", chunks_.size()},
                           {"avg_len", avg_length_},
                           {"corpus_checksum", checksum.str()}};
    std::ofstream out(dir / "meta.json", std::ios::binary);
    out << meta.dump(2) << '\n';
    if (!out) throw Error(ErrorCode::kIoError, "cannot write meta.json");
  }

  static Bm25Index load(const std::filesystem::path& dir) {
    auto open = [&](const char* name) {
      std::ifstream in(dir / name, std::ios::binary);
      if (!in) throw Error(ErrorCode::kIoError, "cannot open " + (dir / name).string());
      return in;
    };
    Bm25Index index;
    try {
      auto meta_in = open("meta.json");
      const auto meta = nlohmann::json::parse(meta_in);
      index.params_ = {meta.at("k1").get<double>(), meta.at("b").get<double>()};
      index.num_docs_ = meta.at("num_docs").get<std::size_t>();
      index.checksum_ = std::stoull(meta.at("corpus_checksum").get<std::string>(), nullptr, 16);

      auto docs_in = open("docs.jsonl");
      std::string line;
      while (std::getline(docs_in, line)) {
        if (line.empty()) continue;
        const auto j = nlohmann::json::parse(line);
        index.chunks_.push_back({j.at("id").get<std::string>(), j.at("title").get<std::string>(),
                                 j.at("text").get<std::string>(),
                                 j.at("len").get<std::uint32_t>()});
      }
      auto postings_in = open("postings.jsonl");
      while (std::getline(postings_in, line)) {
        if (line.empty()) continue;
        const auto j = nlohmann::json::parse(line);
        auto& list = index.postings_[j.at("term").get<std::string>()];
        for (const auto& p : j.at("postings")) {
          list.push_back({p.at(0).get<std::uint32_t>(), p.at(1).get<std::uint32_t>()});
        }
      }
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::kDataError, std::string("corrupt index: ") + e.what());
    }
    if (index.chunks_.empty()) throw Error(ErrorCode::kDataError, "index has no chunks");
    index.compute_avg_length();
    return index;
  }

 private:
  void add_chunk(Chunk chunk) {
    const auto chunk_index = static_cast<std::uint32_t>(chunks_.size());
    // Title and text are both searchable.
    const auto tokens = bm25_tokenize(chunk.title + " " + chunk.text);
    chunk.length = static_cast<std::uint32_t>(tokens.size());
    std::map<std::string, std::uint32_t> tf;
    for (const auto& t : tokens) ++tf[t];
    for (const auto& [term, count] : tf) postings_[term].push_back({chunk_index, count});
    chunks_.push_back(std::move(chunk));
  }

  void finalize() { compute_avg_length(); }

  void compute_avg_length() {
    double total = 0.0;
    for (const auto& c : chunks_) total += c.length;
    avg_length_ = chunks_.empty() ? 0.0 : total / static_cast<double>(chunks_.size());
    if (avg_length_ <= 0.0) avg_length_ = 1.0;
  }

  Bm25Params params_;
  std::size_t num_docs_ = 0;
  std::uint64_t checksum_ = 0;
  double avg_length_ = 1.0;
  std::vector<Chunk> chunks_;
  std::unordered_map<std::string, std::vector<Posting>> postings_;
};

/// Reads {"id","title","text"} objects, one per line. Blank lines are skipped.
/// Returns the documents and a checksum of the raw bytes.
inline std::pair<std::vector<CorpusDoc>, std::uint64_t> read_corpus_jsonl(
    const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open corpus " + path.string());
  std::vector<CorpusDoc> docs;
  std::uint64_t checksum = fnv1a64("");
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    checksum = fnv1a64(line + "\n", checksum);
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      // title and text must be present; either may be empty.
      docs.push_back({j.at("id").get<std::string>(), j.at("title").get<std::string>(),
                      j.at("text").get<std::string>()});
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::kDataError,
                  path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return {std::move(docs), checksum};
}

}  // namespace research
