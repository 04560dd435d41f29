#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "research/remote_retriever.hpp"
#include "research/retrieval.hpp"
#include "stub_server.hpp"
#include "support.hpp"

using namespace research;
using testing_support::Bm25Reference;
using testing_support::StubReply;
using testing_support::StubServer;

namespace {

// Titles are left empty so the indexed text is exactly the body.
std::vector<CorpusDoc> docs_of(std::initializer_list<std::pair<std::string, std::string>> items) {
  std::vector<CorpusDoc> out;
  for (const auto& [id, text] : items) out.push_back({id, "", text});
  return out;
}

std::vector<std::vector<std::string>> tokenized(const std::vector<CorpusDoc>& docs) {
  std::vector<std::vector<std::string>> out;
  for (const auto& d : docs) out.push_back(bm25_tokenize(d.text));
  return out;
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::kInvalidArgument;
}

EndpointConfig endpoint(const StubServer& server) {
  EndpointConfig ep;
  ep.url = server.url();
  return ep;
}

}  // namespace

TEST(Bm25Tokenize, LowercasesAndSplits) {
  EXPECT_EQ(bm25_tokenize("The Labor-Party (Mexico), 2018!"),
            (std::vector<std::string>{"the", "labor", "party", "mexico", "2018"}));
  EXPECT_TRUE(bm25_tokenize(" ,;- ").empty());
  EXPECT_EQ(bm25_tokenize("López Obrador"), (std::vector<std::string>{"lópez", "obrador"}));
}

TEST(Bm25Index, HandComputedEqualLengthFixture) {
  const auto docs = docs_of({{"d1", "cat sat"}, {"d2", "dog ran"}, {"d3", "cat ran"}});
  const auto index = Bm25Index::build(docs);
  const auto hits = index.search("cat", 2);
  ASSERT_EQ(hits.size(), 2u);
  // idf = ln((3 - 2 + 0.5) / (2 + 0.5) + 1) = ln(1.6); every length equals
  // the average, so the tf factor is 2.2 / 2.2 = 1 and the tie goes to d1.
  const double expected = std::log(1.6);
  EXPECT_NEAR(expected, 0.47000362924573558, 1e-15);
  EXPECT_EQ(hits[0].doc_id, "d1");
  EXPECT_EQ(hits[1].doc_id, "d3");
  EXPECT_NEAR(hits[0].score, expected, 1e-9);
  EXPECT_NEAR(hits[1].score, expected, 1e-9);
}

TEST(Bm25Index, HandComputedUnequalLengthFixture) {
  const auto docs = docs_of({{"d1", "cat sat"}, {"d2", "dog ran"}, {"d3", "cat dog bird fish"}});
  const auto index = Bm25Index::build(docs);
  const auto hits = index.search("cat", 5);
  ASSERT_EQ(hits.size(), 2u);
  // avgdl = 8/3. d1: 1 + 1.2 * (0.25 + 0.75 * 2 / (8/3)) = 1.975.
  // d3: 1 + 1.2 * (0.25 + 0.75 * 4 / (8/3)) = 2.65.
  EXPECT_EQ(hits[0].doc_id, "d1");
  EXPECT_NEAR(hits[0].score, std::log(1.6) * 2.2 / 1.975, 1e-9);
  EXPECT_NEAR(hits[1].score, std::log(1.6) * 2.2 / 2.65, 1e-9);
}

TEST(Bm25Index, VocabularyIsUnionOfTokens) {
  const auto docs = docs_of({{"a", "Cat sat"}, {"b", "dog, ran!"}, {"c", "cat ran"}});
  const auto index = Bm25Index::build(docs);
  EXPECT_EQ(index.vocabulary(), (std::vector<std::string>{"cat", "dog", "ran", "sat"}));
  EXPECT_EQ(index.document_frequency("cat"), 2u);
  EXPECT_DOUBLE_EQ(index.avg_length(), 2.0);
}

TEST(Bm25Index, TitleIsIndexed) {
  const auto index = Bm25Index::build({{"x", "Brindmoor", "capital city"}, {"y", "", "other"}});
  const auto hits = index.search("brindmoor", 5);
  ASSERT_EQ(hits.size(), 1u);
  EXPECT_EQ(hits[0].doc_id, "x");
  EXPECT_EQ(hits[0].title, "Brindmoor");
  EXPECT_EQ(hits[0].text, "capital city");
}

TEST(Bm25Index, UnseenTermAndClamp) {
  const auto index = Bm25Index::build(docs_of({{"d1", "cat sat"}, {"d2", "dog ran"}}));
  EXPECT_TRUE(index.search("zzz", 5).empty());
  EXPECT_EQ(index.search("cat dog", 50).size(), 2u);
  EXPECT_EQ(code_of([&] { index.search("cat", 0); }), ErrorCode::kInvalidArgument);
}

TEST(Bm25Index, BuildErrors) {
  EXPECT_EQ(code_of([] { Bm25Index::build(docs_of({{"a", "x"}, {"a", "y"}})); }),
            ErrorCode::kDuplicateId);
  EXPECT_EQ(code_of([] { Bm25Index::build({}); }), ErrorCode::kEmptyCorpus);
  EXPECT_EQ(code_of([] { Bm25Index::build(docs_of({{"a", "x"}}), Bm25Params{1.2, 1.5}); }),
            ErrorCode::kInvalidArgument);
}

TEST(Bm25Index, RepeatedQueryTermsCountOnce) {
  const auto index = Bm25Index::build(docs_of({{"d1", "cat sat"}, {"d2", "dog ran"}}));
  EXPECT_EQ(index.search("cat cat CAT", 1), index.search("cat", 1));
}

TEST(Bm25Index, MatchesOracleOnRandomCorpora) {
  std::mt19937_64 rng(21);
  const std::vector<std::string> vocab = {"red", "green", "blue", "stone", "river", "hill", "owl"};
  const Bm25Reference oracle;
  for (int iter = 0; iter < 200; ++iter) {
    std::vector<CorpusDoc> docs;
    const std::size_t n = 1 + rng() % 50;
    for (std::size_t d = 0; d < n; ++d) {
      std::string text;
      for (std::size_t w = 1 + rng() % 9; w > 0; --w) text += vocab[rng() % vocab.size()] + " ";
      docs.push_back({"doc" + std::to_string(d), "", text});
    }
    const auto index = Bm25Index::build(docs);
    const auto toks = tokenized(docs);
    std::string query;
    std::vector<std::string> qterms;
    for (std::size_t w = 1 + rng() % 3; w > 0; --w) {
      qterms.push_back(vocab[rng() % vocab.size()]);
      query += qterms.back() + " ";
    }

    const auto all = index.search(query, n);
    for (const auto& hit : all) {
      const std::size_t d = std::stoul(hit.doc_id.substr(3));
      ASSERT_NEAR(hit.score, oracle.score(toks, d, qterms), 1e-9);
    }
    // Every document with a positive oracle score is returned.
    std::size_t positive = 0;
    for (std::size_t d = 0; d < n; ++d) positive += oracle.score(toks, d, qterms) > 0.0 ? 1 : 0;
    ASSERT_EQ(all.size(), positive);
    for (std::size_t i = 1; i < all.size(); ++i) {
      ASSERT_TRUE(all[i - 1].score > all[i].score ||
                  (all[i - 1].score == all[i].score && all[i - 1].doc_id < all[i].doc_id));
    }
    for (std::size_t k = 1; k < n; ++k) {
      const auto shorter = index.search(query, k);
      const auto longer = index.search(query, k + 1);
      ASSERT_LE(shorter.size(), longer.size());
      ASSERT_TRUE(std::equal(shorter.begin(), shorter.end(), longer.begin()));
    }
  }
}

TEST(Bm25Index, ExtraOccurrenceAtFixedLengthNeverLowersScore) {
  std::mt19937_64 rng(4);
  const std::vector<std::string> vocab = {"a1", "b2", "c3", "d4", "e5"};
  const Bm25Reference oracle;
  for (int iter = 0; iter < 300; ++iter) {
    std::vector<CorpusDoc> docs;
    const std::size_t n = 2 + rng() % 4;
    for (std::size_t d = 0; d < n; ++d) {
      std::string text;
      for (std::size_t w = 2 + rng() % 5; w > 0; --w) text += vocab[rng() % vocab.size()] + " ";
      docs.push_back({"d" + std::to_string(d), "", text});
    }
    const std::string term = "a1";
    const std::size_t target = rng() % n;
    auto toks = tokenized(docs);
    if (std::count(toks[target].begin(), toks[target].end(), term) == 0) continue;
    auto other = std::find_if(toks[target].begin(), toks[target].end(),
                              [&](const std::string& t) { return t != term; });
    if (other == toks[target].end()) continue;
    const double before = Bm25Index::build(docs).search(term, n).size() > 0
                              ? oracle.score(toks, target, {term})
                              : 0.0;
    *other = term;
    std::string rewritten;
    for (const auto& t : toks[target]) rewritten += t + " ";
    docs[target].text = rewritten;
    const auto hits = Bm25Index::build(docs).search(term, n);
    const auto it = std::find_if(hits.begin(), hits.end(),
                                 [&](const RetrievalHit& h) { return h.doc_id == docs[target].id; });
    ASSERT_NE(it, hits.end());
    EXPECT_GE(it->score, before);
  }
}

TEST(Bm25Index, DeterministicAcrossRebuilds) {
  const auto docs = docs_of({{"x", "alpha beta"}, {"y", "beta gamma"}, {"z", "gamma alpha beta"}});
  EXPECT_EQ(Bm25Index::build(docs).search("beta alpha", 3),
            Bm25Index::build(docs).search("beta alpha", 3));
}

TEST(ChunkText, ShortTextIsOneChunk) {
  EXPECT_EQ(chunk_text("A. B."), std::vector<std::string>{"A. B."});
}

TEST(ChunkText, LongTextSplitsAtSentenceEnds) {
  std::string text;
  for (int i = 0; i < 60; ++i) text += "Sentence number " + std::to_string(i) + " is here. ";
  const auto chunks = chunk_text(text);
  ASSERT_GT(chunks.size(), 1u);
  std::string rebuilt;
  for (const auto& c : chunks) {
    EXPECT_LE(c.size(), kMaxChunkChars);
    EXPECT_NE(c.front(), ' ');
    EXPECT_TRUE(c.back() == '.' || c.back() == ' ') << c;
    rebuilt += c;
  }
  // Only separating blanks are lost.
  auto squash = [](std::string s) {
    s.erase(std::remove(s.begin(), s.end(), ' '), s.end());
    return s;
  };
  EXPECT_EQ(squash(rebuilt), squash(text));
}

TEST(ChunkText, OverlongSentenceIsCut) {
  const std::string word = "abcdefghi ";
  std::string text;
  for (int i = 0; i < 250; ++i) text += word;
  for (const auto& c : chunk_text(text)) EXPECT_LE(c.size(), kMaxChunkChars);
}

TEST(Bm25Index, LongDocumentsBecomeTitledChunks) {
  std::string text;
  for (int i = 0; i < 60; ++i) text += "Line " + std::to_string(i) + " mentions lanterns. ";
  const auto index = Bm25Index::build({{"long", "Fair", text}, {"short", "Other", "x"}});
  EXPECT_EQ(index.num_docs(), 2u);
  EXPECT_GT(index.num_chunks(), 2u);
  for (const auto& hit : index.search("lanterns", 10)) {
    EXPECT_EQ(hit.doc_id.rfind("long#", 0), 0u);
    EXPECT_EQ(hit.title, "Fair");
  }
}

TEST(Bm25Index, SaveLoadRoundTrip) {
  testing_support::TempDir dir("index");
  std::vector<CorpusDoc> docs = {{"a", "Alpha", "the quick brown fox"},
                                 {"b", "Beta", "lazy dogs sleep"},
                                 {"c", "Gamma", "quick quick dogs"}};
  const auto built = Bm25Index::build(docs, {}, 99);
  built.save(dir.path());
  const auto loaded = Bm25Index::load(dir.path());
  EXPECT_EQ(loaded.num_docs(), 3u);
  EXPECT_EQ(loaded.corpus_checksum(), 99u);
  EXPECT_EQ(loaded.vocabulary(), built.vocabulary());
  for (const char* q : {"quick", "dogs", "fox sleep", "nothing"}) {
    EXPECT_EQ(loaded.search(q, 3), built.search(q, 3)) << q;
  }
}

TEST(Bm25Index, LoadErrors) {
  testing_support::TempDir dir("badindex");
  EXPECT_EQ(code_of([&] { Bm25Index::load(dir / "missing"); }), ErrorCode::kIoError);
  Bm25Index::build(docs_of({{"a", "x"}})).save(dir.path());
  testing_support::write_file(dir / "postings.jsonl", "{not json\n");
  EXPECT_EQ(code_of([&] { Bm25Index::load(dir.path()); }), ErrorCode::kDataError);
}

TEST(ReadCorpus, ParsesAndReportsBadLines) {
  testing_support::TempDir dir("corpus");
  testing_support::write_file(dir / "ok.jsonl",
                              "{\"id\":\"1\",\"title\":\"T\",\"text\":\"x\"}\n\n"
                              "{\"id\":\"2\",\"title\":\"U\",\"text\":\"y\"}\n");
  const auto [docs, checksum] = read_corpus_jsonl(dir / "ok.jsonl");
  EXPECT_EQ(docs.size(), 2u);
  EXPECT_NE(checksum, 0u);
  testing_support::write_file(dir / "bad.jsonl", "{\"id\":\"1\",\"text\":\"x\"}\n");
  EXPECT_EQ(code_of([&] { read_corpus_jsonl(dir / "bad.jsonl"); }), ErrorCode::kDataError);
  EXPECT_EQ(code_of([&] { read_corpus_jsonl(dir / "none.jsonl"); }), ErrorCode::kIoError);
}

TEST(RemoteRetriever, OrdersHitsFromStub) {
  StubServer server([](const nlohmann::json&, int) {
    return StubReply{200, R"({"hits": [
      {"doc_id": "b", "score": 1.0, "title": "B", "text": "bb"},
      {"doc_id": "a", "score": 2.5, "title": "A", "text": "aa"}]})"};
  });
  EndpointConfig ep;
  ep.url = server.url("/retrieve");
  const RemoteRetriever retriever(ep);
  const auto hits = retriever.search("capital of France", 5);
  ASSERT_EQ(hits.size(), 2u);
  EXPECT_EQ(hits[0].doc_id, "a");
  EXPECT_EQ(hits[1].doc_id, "b");
  const auto req = server.requests().at(0);
  EXPECT_EQ(req.at("query"), "capital of France");
  EXPECT_EQ(req.at("top_k"), 5);
}

TEST(RemoteRetriever, TruncatesToTopK) {
  StubServer server([](const nlohmann::json&, int) {
    return StubReply{200, R"({"hits": [
      {"doc_id": "a", "score": 3, "title": "", "text": ""},
      {"doc_id": "b", "score": 2, "title": "", "text": ""},
      {"doc_id": "c", "score": 1, "title": "", "text": ""}]})"};
  });
  EXPECT_EQ(RemoteRetriever(endpoint(server)).search("q", 2).size(), 2u);
}

TEST(RemoteRetriever, ServerErrorsExhaustRetries) {
  StubServer server([](const nlohmann::json&, int) { return StubReply{500, "oops"}; });
  EndpointConfig ep;
  ep.url = server.url("/retrieve");
  ep.retries = 2;
  EXPECT_EQ(code_of([&] { RemoteRetriever(ep).search("q", 5); }),
            ErrorCode::kRetrieverUnavailable);
  EXPECT_EQ(server.calls(), 3);
}

TEST(RemoteRetriever, RecoversWithinRetries) {
  StubServer server([](const nlohmann::json&, int call) {
    if (call < 2) return StubReply{503, ""};
    return StubReply{200, R"({"hits": []})"};
  });
  EndpointConfig ep;
  ep.url = server.url();
  ep.retries = 2;
  EXPECT_TRUE(RemoteRetriever(ep).search("q", 5).empty());
}

TEST(RemoteRetriever, MissingScoreIsMalformed) {
  StubServer server([](const nlohmann::json&, int) {
    return StubReply{200, R"({"hits": [{"doc_id": "a", "title": "A", "text": "aa"}]})"};
  });
  EXPECT_EQ(code_of([&] { RemoteRetriever(endpoint(server)).search("q", 5); }),
            ErrorCode::kMalformedResponse);
}

TEST(RemoteRetriever, NonJsonBodyIsMalformed) {
  StubServer server([](const nlohmann::json&, int) { return StubReply{200, "<html>"}; });
  EXPECT_EQ(code_of([&] { RemoteRetriever(endpoint(server)).search("q", 5); }),
            ErrorCode::kMalformedResponse);
}

TEST(RemoteRetriever, UnreachableEndpoint) {
  EndpointConfig ep;
  ep.url = testing_support::unreachable_url("/retrieve");
  ep.retries = 1;
  ep.timeout_seconds = 2;
  EXPECT_EQ(code_of([&] { RemoteRetriever(ep).search("q", 5); }),
            ErrorCode::kRetrieverUnavailable);
}

TEST(RemoteRetriever, SendsBearerToken) {
  StubServer server([](const nlohmann::json&, int) { return StubReply{200, R"({"hits": []})"}; });
  EndpointConfig ep;
  ep.url = server.url();
  ep.api_key = "secret";
  RemoteRetriever(ep).search("q", 1);
  EXPECT_EQ(server.auth_headers().at(0), "Bearer secret");
}
