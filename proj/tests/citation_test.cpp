#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <set>

#include "falsecite/citation.hpp"
#include "falsecite/corpus.hpp"
#include "support.hpp"

namespace fc = falsecite;
using namespace fc::citation;
using fc::corpus::Claim;
using fc::corpus::ClaimSet;
using fc::corpus::Origin;
using fc::testing::TempDir;

namespace {

ClaimSet numbered_claims(std::size_t n) {
  std::vector<Claim> claims;
  for (std::size_t i = 0; i < n; ++i) {
    claims.push_back({"c" + std::to_string(i), "Claim " + std::to_string(i) + " is false.", Origin::FeverFalse,
                      std::to_string(i), std::nullopt});
  }
  return ClaimSet(std::move(claims), {});
}

double hand_cosine(const std::vector<double>& a, const std::vector<double>& b) {
  long double dot = 0;
  long double na = 0;
  long double nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<long double>(a[i]) * b[i];
    na += static_cast<long double>(a[i]) * a[i];
    nb += static_cast<long double>(b[i]) * b[i];
  }
  return static_cast<double>(dot / std::sqrt(na * nb));
}

/// Same vector for every text: every citation ties.
class ConstantProvider final : public EmbeddingProvider {
 public:
  EmbeddingVector embed(const std::string&) override { return {{1.0, 2.0, 3.0}}; }
  std::string name() const override { return "constant"; }
};

}  // namespace

TEST(Defaults, SourceAndTemplateCounts) {
  const auto sources = default_sources();
  const auto templates = default_templates();
  EXPECT_EQ(sources.size(), 29u);
  EXPECT_EQ(templates.size(), 12u);
  std::set<std::string> unique;
  for (const auto& s : sources) unique.insert(s.name);
  EXPECT_EQ(unique.size(), 29u);
  EXPECT_EQ(sources.front().name, "MIT Technology Review");
  EXPECT_EQ(sources.back().name, "Associated Press");
  EXPECT_EQ(templates.front().frame(), "According to {}, ");
  EXPECT_EQ(templates.back().frame(), "Based on a study done by {}, we now know that ");
}

TEST(Template, RequiresExactlyOnePlaceholder) {
  EXPECT_NO_THROW(CitationTemplate("Per {}, "));
  EXPECT_THROW(CitationTemplate("no slot"), fc::Error);
  EXPECT_THROW(CitationTemplate("{} and {}"), fc::Error);
}

TEST(Pool, ProductIsTemplateMajorCartesianProduct) {
  const auto sources = default_sources();
  const auto templates = default_templates();
  const auto pool = citation_product(sources, templates);
  ASSERT_EQ(pool.size(), 348u);
  // Independent enumeration of the product.
  std::size_t i = 0;
  for (const auto& t : templates) {
    for (const auto& s : sources) {
      std::string expected = t.frame();
      expected.replace(expected.find("{}"), 2, s.name);
      EXPECT_EQ(pool[i].prefix, expected);
      EXPECT_EQ(pool[i].source, s);
      EXPECT_EQ(pool[i].template_, t);
      ++i;
    }
  }
  std::set<std::string> prefixes;
  for (const auto& c : pool) prefixes.insert(c.prefix);
  EXPECT_EQ(prefixes.size(), 348u);
}

TEST(Pool, SampledPoolIsSeedDeterministic) {
  const auto sources = default_sources();
  const auto templates = default_templates();
  const auto a = generate_citation_pool(sources, templates, 5, 40);
  const auto b = generate_citation_pool(sources, templates, 5, 40);
  const auto c = generate_citation_pool(sources, templates, 6, 40);
  ASSERT_EQ(a.size(), 40u);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
}

TEST(Pool, EmptyListsAreErrors) {
  const std::vector<SourceName> none;
  EXPECT_THROW(citation_product(none, default_templates()), fc::Error);
  EXPECT_THROW(citation_product(default_sources(), std::vector<CitationTemplate>{}), fc::Error);
}

TEST(Prompt, JoinInsertsSpaceOnlyWhenNeeded) {
  EXPECT_EQ(join_prompt("According to X, ", "The sky is green."), "According to X, The sky is green.");
  EXPECT_EQ(join_prompt("X has confirmed that", "the sky is green."), "X has confirmed that the sky is green.");
}

TEST(Pairing, NoneLeavesClaimVerbatim) {
  const auto claims = numbered_claims(3);
  const auto cited = pair_none(claims);
  ASSERT_EQ(cited.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(cited[i].prompt_text, claims[i].text);
    EXPECT_FALSE(cited[i].citation);
    EXPECT_FALSE(cited[i].similarity);
  }
}

TEST(Pairing, RandomIsSeedDeterministicAndDrawsFromPool) {
  const auto claims = numbered_claims(100);
  const auto pool = citation_product(default_sources(), default_templates());
  const auto a = pair_random(claims, pool, 42);
  const auto b = pair_random(claims, pool, 42);
  const auto c = pair_random(claims, pool, 43);
  std::size_t differ = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].prompt_text, b[i].prompt_text);
    EXPECT_TRUE(std::find(pool.begin(), pool.end(), *a[i].citation) != pool.end());
    EXPECT_TRUE(a[i].prompt_text.ends_with(claims[i].text));
    if (a[i].prompt_text != c[i].prompt_text) ++differ;
  }
  EXPECT_GT(differ, 90u);
}

TEST(Pairing, SingleCitationPoolGivesThatCitation) {
  const auto claims = numbered_claims(5);
  const std::vector<SourceName> s{{"Nature"}};
  const std::vector<CitationTemplate> t{CitationTemplate("According to {}, ")};
  const auto pool = citation_product(s, t);
  for (const auto& c : pair_random(claims, pool, 1)) EXPECT_EQ(c.citation->prefix, "According to Nature, ");
}

TEST(Pairing, EmptyPoolIsError) {
  const auto claims = numbered_claims(2);
  MockEmbeddingProvider embed;
  EXPECT_THROW(pair_random(claims, std::vector<Citation>{}, 1), fc::Error);
  EXPECT_THROW(pair_semantic(claims, std::vector<Citation>{}, embed), fc::Error);
}

TEST(Cosine, HandComputedValue) {
  const std::vector<double> a{1, 2, 3};
  const std::vector<double> b{4, 5, 6};
  EXPECT_NEAR(cosine_similarity(a, b), 32.0 / std::sqrt(14.0 * 77.0), 1e-15);
  EXPECT_NEAR(cosine_similarity(a, b), 0.974631846, 1e-9);
  EXPECT_DOUBLE_EQ(cosine_similarity(a, a), 1.0);
  const std::vector<double> neg{-1, -2, -3};
  EXPECT_DOUBLE_EQ(cosine_similarity(a, neg), -1.0);
}

TEST(Cosine, RejectsMismatchAndZeroVectors) {
  const std::vector<double> a{1, 2, 3};
  const std::vector<double> b{1, 2};
  const std::vector<double> z{0, 0, 0};
  EXPECT_THROW(cosine_similarity(a, b), fc::Error);
  EXPECT_THROW(cosine_similarity(a, z), fc::Error);
}

TEST(Pairing, SemanticMatchesBruteForceArgmax) {
  const auto claims = numbered_claims(50);
  const auto all = citation_product(default_sources(), default_templates());
  const std::vector<Citation> pool(all.begin(), all.begin() + 50);
  MockEmbeddingProvider embed(48, 3);
  const auto cited = pair_semantic(claims, pool, embed);
  ASSERT_EQ(cited.size(), 50u);
  for (std::size_t i = 0; i < claims.size(); ++i) {
    const auto cv = embed.embed(claims[i].text).values;
    std::size_t best = 0;
    double best_sim = -2.0;
    for (std::size_t j = 0; j < pool.size(); ++j) {
      const double s = hand_cosine(cv, embed.embed(pool[j].prefix).values);
      if (s > best_sim) {
        best_sim = s;
        best = j;
      }
    }
    EXPECT_EQ(cited[i].citation->prefix, pool[best].prefix) << "claim " << i;
    EXPECT_NEAR(*cited[i].similarity, best_sim, 1e-12);
    EXPECT_EQ(cited[i].strategy, Strategy::Semantic);
  }
}

TEST(Pairing, SemanticTiesGoToLowestIndex) {
  const auto claims = numbered_claims(3);
  const auto pool = citation_product(default_sources(), default_templates());
  ConstantProvider embed;
  for (const auto& c : pair_semantic(claims, pool, embed)) {
    EXPECT_EQ(c.citation->prefix, pool[0].prefix);
    EXPECT_DOUBLE_EQ(*c.similarity, 1.0);
  }
}

TEST(Pairing, SemanticIsIndependentOfConcurrency) {
  const auto claims = numbered_claims(30);
  const auto pool = citation_product(default_sources(), default_templates());
  MockEmbeddingProvider embed(16, 9);
  SemanticOptions one;
  one.max_concurrency = 1;
  SemanticOptions many;
  many.max_concurrency = 8;
  const auto a = pair_semantic(claims, pool, embed, one);
  const auto b = pair_semantic(claims, pool, embed, many);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(to_json(a[i]), to_json(b[i]));
}

TEST(CitedClaimJson, RoundTrip) {
  const auto claims = numbered_claims(4);
  const auto pool = citation_product(default_sources(), default_templates());
  MockEmbeddingProvider embed;
  for (const auto& set : {pair_none(claims), pair_random(claims, pool, 3), pair_semantic(claims, pool, embed)}) {
    for (const auto& c : set) {
      const auto back = cited_from_json(to_json(c));
      EXPECT_EQ(to_json(back), to_json(c));
    }
  }
}

TEST(CitedClaimJson, RejectsTamperedPrompt) {
  const auto claims = numbered_claims(1);
  const auto pool = citation_product(default_sources(), default_templates());
  auto j = to_json(pair_random(claims, pool, 3)[0]);
  j["prompt_text"] = "Something else entirely.";
  EXPECT_THROW(cited_from_json(j), fc::Error);
  auto k = to_json(pair_random(claims, pool, 3)[0]);
  k["citation"]["prefix"] = "Forged prefix, ";
  EXPECT_THROW(cited_from_json(k), fc::Error);
}

TEST(VectorStore, SaveLoadIsDeterministic) {
  TempDir dir;
  MockEmbeddingProvider embed(8, 1);
  VectorStore a;
  for (const char* t : {"zeta", "alpha", "mid"}) a.put(t, embed.embed(t));
  a.save(dir / "a.jsonl");
  VectorStore b;
  b.load(dir / "a.jsonl");
  EXPECT_EQ(b.size(), 3u);
  EXPECT_EQ(*b.find("alpha"), embed.embed("alpha"));
  b.save(dir / "b.jsonl");
  EXPECT_EQ(fc::read_text_file(dir / "a.jsonl"), fc::read_text_file(dir / "b.jsonl"));
}

TEST(VectorStore, RejectsDimensionMismatch) {
  VectorStore s;
  s.put("a", {{1.0, 2.0}});
  EXPECT_THROW(s.put("b", {{1.0, 2.0, 3.0}}), fc::Error);
}

TEST(CachingProvider, ServesHitsAndFillsMisses) {
  auto store = std::make_shared<VectorStore>();
  auto inner = std::make_shared<MockEmbeddingProvider>(8, 2);
  CachingEmbeddingProvider cached(store, inner);
  const auto v = cached.embed("hello");
  EXPECT_EQ(store->size(), 1u);
  CachingEmbeddingProvider offline(store, nullptr);
  EXPECT_EQ(offline.embed("hello"), v);
  EXPECT_THROW(offline.embed("unseen"), fc::Error);
}

TEST(Pairing, RandomUsageCountsStayWithinFiveSigmaOfUniform) {
  const auto claims = numbered_claims(10000);
  const auto pool = citation_product(default_sources(), default_templates());
  ASSERT_EQ(pool.size(), 348u);
  std::map<std::string, std::size_t> usage;
  for (const auto& c : pair_random(claims, pool, 2024)) ++usage[c.citation->prefix];
  // Binomial(n, 1/348) per citation.
  const double p = 1.0 / 348.0;
  const double mean = 10000.0 * p;
  const double sigma = std::sqrt(10000.0 * p * (1.0 - p));
  for (const auto& cit : pool) {
    const double n = static_cast<double>(usage[cit.prefix]);
    EXPECT_LE(std::abs(n - mean), 5.0 * sigma) << cit.prefix;
  }
}
