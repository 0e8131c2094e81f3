#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "chunkrag/retrieval.h"
#include "chunkrag/synthetic.h"
#include "test_util.h"

namespace chunkrag {
namespace {

SentenceRecord sentence(const std::string& id, const std::string& text, const std::string& label) {
  SentenceRecord r;
  r.id = id;
  r.text = normalize_text(text);
  r.label = Label{label, {label}};
  return r;
}

RetrievedPair pair(const std::string& key, const std::string& label) {
  RetrievedPair p;
  p.key_text = normalize_text(key);
  p.value = Label{label, {label}};
  p.rendered = render_pair(p.key_text, p.value);
  return p;
}

bool by_similarity_then_index(const std::pair<double, std::size_t>& a,
                              const std::pair<double, std::size_t>& b) {
  return a.first != b.first ? a.first > b.first : a.second < b.second;
}

std::vector<std::pair<double, std::size_t>> brute_force(const Embedding& probe,
                                                        const std::vector<Embedding>& pool) {
  std::vector<std::pair<double, std::size_t>> all;
  for (std::size_t i = 0; i < pool.size(); ++i) all.emplace_back(cosine(probe, pool[i]), i);
  std::stable_sort(all.begin(), all.end(), by_similarity_then_index);
  return all;
}

TEST(RenderPairTest, SingleSeparatorNoTrailingSpace) {
  const auto p = pair("prostacyclin   attenuates", "TREATS");
  EXPECT_EQ(p.rendered, "prostacyclin attenuates TREATS");
}

TEST(DiversifyTest, TwoPairsGiveFiveDocuments) {
  const std::vector<RetrievedPair> a = {pair("C1 words", "L1"), pair("C2 words", "L1")};
  const auto d0 = sentence("n", "nearest sentence", "L0");
  const auto docs = diversify(a, d0);
  ASSERT_EQ(docs.size(), 5u);
  EXPECT_EQ(docs[0].text, "nearest sentence L0");
  EXPECT_EQ(docs[1].text, "C1 words L1");
  EXPECT_EQ(docs[2].text, "C2 words L1");
  EXPECT_EQ(docs[3].text, "C1 words L1 C2 words L1");
  EXPECT_EQ(docs[4].text, "C2 words L1 C1 words L1");
  for (std::size_t j = 0; j < docs.size(); ++j) EXPECT_EQ(docs[j].id, j);
  EXPECT_EQ(docs[0].provenance.kind, Provenance::Kind::kNearestExample);
  EXPECT_EQ(docs[4].provenance, (Provenance{Provenance::Kind::kOrderedPair, 1, 0}));
}

TEST(DiversifyTest, SinglePairHasNoPairs) {
  const std::vector<RetrievedPair> a = {pair("only", "L")};
  const auto docs = diversify(a, sentence("n", "near", "L"));
  ASSERT_EQ(docs.size(), 2u);
  EXPECT_EQ(docs[1].text, "only L");
}

TEST(DiversifyTest, ThreePairsEnumerateOrderedPairs) {
  const std::vector<RetrievedPair> a = {pair("a", "X"), pair("b", "Y"), pair("c", "Z")};
  const auto docs = diversify(a, sentence("n", "near", "L"), {3, true});
  ASSERT_EQ(docs.size(), 10u);
  std::vector<std::string> expected;
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t k = 0; k < 3; ++k) {
      if (i != k) expected.push_back(a[i].rendered + " " + a[k].rendered);
    }
  }
  for (std::size_t j = 0; j < expected.size(); ++j) EXPECT_EQ(docs[4 + j].text, expected[j]);
}

TEST(DiversifyTest, SizeFormulaAndCapFallback) {
  for (std::size_t v = 1; v <= 7; ++v) {
    std::vector<RetrievedPair> a;
    for (std::size_t i = 0; i < v; ++i) a.push_back(pair("k" + std::to_string(i), "L"));
    for (std::size_t cap = 1; cap <= 6; ++cap) {
      const auto docs = diversify(a, sentence("n", "near", "L"), {cap, true});
      const std::size_t expected = v <= cap ? 1 + v + v * (v - 1) : 1 + v;
      EXPECT_EQ(docs.size(), expected) << "v=" << v << " cap=" << cap;
    }
    EXPECT_EQ(diversify(a, sentence("n", "near", "L"), {100, false}).size(), 1 + v);
  }
}

TEST(DiversifyTest, EmptyRetrievalThrows) {
  EXPECT_THROW(diversify({}, sentence("n", "near", "L")), EmptyRetrieval);
}

TEST(DiversifyTest, EveryDocumentReconstructs) {
  const std::vector<RetrievedPair> a = {pair("a b", "X"), pair("c", "Y"), pair("a b", "X"),
                                        pair("d e f", "Z")};
  const auto d0 = sentence("n", "near text", "L");
  for (const auto& d : diversify(a, d0)) EXPECT_EQ(reconstruct(d.provenance, a, d0), d.text);
}

Memory synthetic_memory(const SyntheticCorpus& corpus, std::size_t m, Embedder& e) {
  std::vector<SentenceRecord> train;
  for (const auto& r : corpus.records) {
    if (r.split == Split::kTrain) train.push_back(r);
  }
  return build_memory(train, TaskKind{TaskVariant::kTextClassification}, m, e);
}

TEST(RetrievePairsTest, OnePairPerChunkInOrder) {
  Embedder e(EmbedderConfig{});
  const auto memory = synthetic_memory(make_synthetic(SyntheticSpec{}), 3, e);
  const auto x = sentence("q", "a b c d e f g", "L");
  const auto a = retrieve_pairs(memory, x, 3, e);
  ASSERT_EQ(a.size(), 3u);
  const auto chunks = split_chunks(x.text, 3);
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto best = memory.lookup_best_key(e.embed_one(chunks[i].words));
    EXPECT_EQ(a[i].entry_index, best.index);
  }
  EXPECT_THROW(retrieve_pairs(memory, x, 4, e), ConfigError);
}

TEST(RetrievePairsTest, SourceSentenceRetrievesItsOwnKeys) {
  SyntheticSpec spec;
  spec.sentence_len = 9;
  const auto corpus = make_synthetic(spec);
  Embedder e(EmbedderConfig{});
  const auto memory = synthetic_memory(corpus, 3, e);
  const auto& x = corpus.records.front();
  const auto a = retrieve_pairs(memory, x, 3, e);
  std::size_t self = 0;
  for (const auto& chunk : split_chunks(x.text, 3)) {
    for (const auto& kv : memory.entries()) {
      if (kv.source_id != x.id || kv.key_text != chunk.words) continue;
      ++self;
      const auto& hit = a[chunk.index];
      EXPECT_EQ(hit.key_text, chunk.words);
      EXPECT_NEAR(hit.similarity, 1.0, 1e-9);
    }
  }
  EXPECT_GE(self, 1u);
}

TEST(RetrievePairsTest, Deterministic) {
  Embedder e(EmbedderConfig{});
  const auto corpus = make_synthetic(SyntheticSpec{});
  const auto memory = synthetic_memory(corpus, 2, e);
  for (const auto& r : corpus.records) {
    const auto a = retrieve_pairs(memory, r, 2, e);
    const auto b = retrieve_pairs(memory, r, 2, e);
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].rendered, b[i].rendered);
  }
}

// Measured once: 100/100 held-out sentences retrieve a pair carrying their
// own label. Frozen at the required 90.
TEST(RetrievePairsTest, MarkerPhraseRetrievesItsLabel) {
  SyntheticSpec spec;
  spec.sentence_len = 12;
  spec.train = 80;
  spec.dev = 0;
  spec.test = 100;
  const auto corpus = make_synthetic(spec);
  Embedder e(EmbedderConfig{});
  const auto memory = synthetic_memory(corpus, 3, e);
  std::size_t hits = 0, trials = 0;
  for (const auto& r : corpus.records) {
    if (r.split != Split::kTest) continue;
    ++trials;
    const auto a = retrieve_pairs(memory, r, 3, e);
    hits += std::any_of(a.begin(), a.end(), [&](const RetrievedPair& p) {
      return p.value.canonical_id == r.label.canonical_id;
    });
  }
  ASSERT_EQ(trials, 100u);
  EXPECT_GE(hits, 90u);
}

std::vector<KeyValuePair> random_entries(std::mt19937_64& rng, std::size_t n, std::size_t dim) {
  std::vector<KeyValuePair> entries;
  for (std::size_t i = 0; i < n; ++i) {
    entries.push_back({{"k" + std::to_string(i)}, Label{"L", {"L"}},
                       testing::random_unit(rng, dim), "s"});
  }
  // Plant exact duplicates so the tie-break rule is exercised.
  for (std::size_t i = 0; i + 7 < n; i += 97) entries[i + 7].key_embedding = entries[i].key_embedding;
  return entries;
}

TEST(LookupOracleTest, BestKeyMatchesBruteForce) {
  std::mt19937_64 rng(21);
  const auto entries = random_entries(rng, 1000, 16);
  const Memory memory(TaskKind{}, 3, 16, "fp", entries);
  std::vector<Embedding> pool;
  for (const auto& kv : entries) pool.push_back(kv.key_embedding);
  for (int p = 0; p < 100; ++p) {
    // Every fifth probe is a stored (possibly duplicated) key.
    const auto probe = p % 5 == 0 ? pool[static_cast<std::size_t>(p) * 7 % pool.size()]
                                  : testing::random_unit(rng, 16);
    const auto oracle = brute_force(probe, pool);
    const auto got = memory.lookup_best_key(probe);
    EXPECT_EQ(got.index, oracle.front().second);
    EXPECT_EQ(got.similarity, oracle.front().first);
  }
}

std::vector<SentenceRecord> random_sentences(std::mt19937_64& rng, std::size_t n) {
  std::vector<SentenceRecord> out;
  std::uniform_int_distribution<int> word(0, 60);
  for (std::size_t i = 0; i < n; ++i) {
    std::string text;
    for (int k = 0; k < 5; ++k) text += "tok" + std::to_string(word(rng)) + " ";
    out.push_back(sentence("r" + std::to_string(i), text, "L" + std::to_string(i % 4)));
  }
  // Duplicate texts under new ids create exact ties.
  out.push_back(sentence("dup0", join_words(out[3].text), "L0"));
  out.push_back(sentence("dup1", join_words(out[10].text), "L1"));
  return out;
}

std::vector<Embedding> embed_all(const std::vector<SentenceRecord>& records, std::size_t dim) {
  std::vector<Embedding> out;
  for (const auto& r : records) out.push_back(local_hash_embed(r.text_string(), dim));
  return out;
}

TEST(LookupOracleTest, TopNMatchesBruteForceSort) {
  std::mt19937_64 rng(22);
  auto records = random_sentences(rng, 500);
  for (auto& r : records) {
    r.head_entity = join_words(std::span<const std::string>(r.text).first(2));
    r.tail_entity = join_words(std::span<const std::string>(r.text).subspan(2));
  }
  EmbedderConfig cfg;
  Embedder e(cfg);
  const auto memory = build_memory(records, TaskKind{TaskVariant::kLinkPrediction}, 3, e);
  std::vector<Embedding> pool;
  for (const auto& kv : memory.entries()) pool.push_back(kv.key_embedding);
  for (int p = 0; p < 100; ++p) {
    const auto& x = records[static_cast<std::size_t>(p) * 5];
    const auto oracle = brute_force(local_hash_embed(x.text_string(), cfg.dim), pool);
    const auto got = retrieve_top_n(memory, x, 10, e);
    ASSERT_EQ(got.size(), 10u);
    for (std::size_t k = 0; k < 10; ++k) EXPECT_EQ(got[k].entry_index, oracle[k].second);
  }
  const auto one = retrieve_top_n(memory, records[4], 1, e);
  ASSERT_EQ(one.size(), 1u);
  EXPECT_NEAR(one[0].similarity, 1.0, 1e-9);

  const Memory small(TaskKind{TaskVariant::kLinkPrediction}, 3, cfg.dim, memory.embedder_fingerprint(),
                     std::vector<KeyValuePair>(memory.entries().begin(), memory.entries().begin() + 4));
  EXPECT_EQ(retrieve_top_n(small, records[0], 10, e).size(), 4u);
}

TEST(NearestExampleTest, MatchesBruteForceExcludingSelf) {
  std::mt19937_64 rng(23);
  const auto records = random_sentences(rng, 200);
  EmbedderConfig cfg;
  Embedder e(cfg);
  const auto pool = embed_all(records, cfg.dim);
  for (std::size_t i = 0; i < records.size(); i += 3) {
    const auto probe = local_hash_embed(records[i].text_string(), cfg.dim);
    std::pair<double, std::size_t> best{-2.0, 0};
    for (std::size_t j = 0; j < records.size(); ++j) {
      if (j == i) continue;
      const double s = cosine(probe, pool[j]);
      if (s > best.first) best = {s, j};
    }
    const auto got = nearest_example(records, records[i], e);
    EXPECT_EQ(got.index, best.second) << i;
    EXPECT_EQ(got.record, &records[best.second]);
  }
  const auto dup = nearest_example(records, records[3], e);
  EXPECT_EQ(dup.record->id, "dup0");
  EXPECT_NEAR(dup.similarity, 1.0, 1e-9);
}

TEST(NearestExampleTest, SingletonHasNoCandidate) {
  Embedder e(EmbedderConfig{});
  const std::vector<SentenceRecord> only = {sentence("x", "alone here", "L")};
  EXPECT_THROW(nearest_example(only, only[0], e), NoCandidate);
}

TEST(KnnBaselineTest, MatchesBruteForceSortedScan) {
  std::mt19937_64 rng(24);
  const auto records = random_sentences(rng, 300);
  EmbedderConfig cfg;
  Embedder e(cfg);
  const auto pool = embed_all(records, cfg.dim);
  for (std::size_t i = 0; i < records.size(); i += 7) {
    const auto oracle = brute_force(local_hash_embed(records[i].text_string(), cfg.dim), pool);
    const auto got = knn_baseline(records, records[i], 10, e);
    ASSERT_EQ(got.size(), 10u);
    EXPECT_EQ(got[0].record->text, records[i].text);
    for (std::size_t k = 0; k < 10; ++k) EXPECT_EQ(got[k].index, oracle[k].second);
  }
}

TEST(KnnBaselineTest, FullRankingIsConsistentTotalOrder) {
  std::mt19937_64 rng(25);
  const auto records = random_sentences(rng, 60);
  Embedder e(EmbedderConfig{});
  const auto got = knn_baseline(records, records[0], records.size(), e);
  ASSERT_EQ(got.size(), records.size());
  for (std::size_t k = 1; k < got.size(); ++k) {
    EXPECT_TRUE(got[k - 1].similarity > got[k].similarity ||
                (got[k - 1].similarity == got[k].similarity && got[k - 1].index < got[k].index));
  }
  EXPECT_EQ(knn_baseline(records, records[0], 1000, e).size(), records.size());
  EXPECT_TRUE(knn_baseline({}, records[0], 5, e).empty());
}

TEST(CandidatesJsonTest, Shape) {
  const std::vector<RetrievedPair> a = {pair("a", "X"), pair("b", "Y")};
  const auto j = candidates_to_json(diversify(a, sentence("n", "near", "L")));
  ASSERT_EQ(j.size(), 5u);
  EXPECT_EQ(j[3]["provenance"], "ordered-pair(0,1)");
  EXPECT_EQ(j[0]["provenance"], "nearest-example");
  EXPECT_EQ(j[1]["text"], "a X");
}

}  // namespace
}  // namespace chunkrag
