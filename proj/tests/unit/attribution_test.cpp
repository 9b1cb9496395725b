#include <algorithm>
#include <fstream>
#include <tuple>

#include <gtest/gtest.h>

#include "prism/attribution/attribution.hpp"
#include "prism/core/error.hpp"
#include "prism/core/io.hpp"
#include "prism/core/rng.hpp"
#include "test_util.hpp"

namespace prism::attribution {
namespace {

using prism::testing::TempDir;
using sae::Matrix;
using sae::Vector;

sae::SaeModel random_model(std::size_t d, std::size_t expansion, std::size_t k, std::uint64_t seed) {
  sae::SaeConfig cfg;
  cfg.input_dim = d;
  cfg.expansion_factor = expansion;
  cfg.variant = sae::Variant::topk;
  cfg.k = k;
  cfg.seed = seed;
  auto m = sae::SaeModel::initialize(cfg);
  Rng rng(seed + 1);
  for (Eigen::Index i = 0; i < m.b_enc.size(); ++i) m.b_enc(i) = rng.normal(0.0, 0.1);
  return m;
}

store::FeatureRecord record(const std::string& sid, std::uint32_t tok, std::vector<double> v) {
  store::FeatureRecord r;
  r.access_point = {"m", "p", 0, store::ArtifactKind::activation};
  r.sample_id = sid;
  r.token_index = tok;
  r.vector = std::move(v);
  return r;
}

std::vector<store::FeatureRecord> random_records(Rng& rng, std::size_t n, std::size_t d) {
  std::vector<store::FeatureRecord> out;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> v(d);
    for (auto& x : v) x = rng.normal();
    auto r = record("s" + std::to_string(i / 4), static_cast<std::uint32_t>(i % 4), std::move(v));
    r.aux.box = store::NormBox{0.5f, 0.5f, 0.2f, 0.3f};
    out.push_back(std::move(r));
  }
  // Exact duplicates under other keys exercise the tie order.
  for (std::size_t i = 0; i < n / 10; ++i) {
    auto copy = out[rng.below(out.size())];
    copy.sample_id = "dup" + std::to_string(i);
    out.push_back(std::move(copy));
  }
  return out;
}

// Naive encode + top-k (lowest index wins ties), then a full sort per latent.
std::vector<std::vector<std::tuple<double, std::string, std::uint32_t>>> oracle(
    const sae::SaeModel& m, const std::vector<store::FeatureRecord>& recs, std::size_t n) {
  const std::size_t latents = static_cast<std::size_t>(m.w_enc.rows());
  const std::size_t d = static_cast<std::size_t>(m.w_enc.cols());
  std::vector<std::vector<std::tuple<double, std::string, std::uint32_t>>> all(latents);
  for (const auto& r : recs) {
    std::vector<double> z(latents);
    for (std::size_t i = 0; i < latents; ++i) {
      double s = m.b_enc(static_cast<Eigen::Index>(i));
      for (std::size_t j = 0; j < d; ++j) {
        s += m.w_enc(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) *
             (r.vector[j] - m.b_dec(static_cast<Eigen::Index>(j)));
      }
      z[i] = s;
    }
    std::vector<std::size_t> order(latents);
    for (std::size_t i = 0; i < latents; ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return z[a] > z[b]; });
    for (std::size_t t = 0; t < m.config.k; ++t) {
      const auto i = order[t];
      if (z[i] > 0) all[i].emplace_back(z[i], r.sample_id, r.token_index);
    }
  }
  for (auto& l : all) {
    std::sort(l.begin(), l.end(), [](const auto& a, const auto& b) {
      if (std::get<0>(a) != std::get<0>(b)) return std::get<0>(a) > std::get<0>(b);
      return std::tie(std::get<1>(a), std::get<2>(a)) < std::tie(std::get<1>(b), std::get<2>(b));
    });
    if (l.size() > n) l.resize(n);
  }
  return all;
}

void expect_same_selection(const AttributionReport& a, const AttributionReport& b) {
  ASSERT_EQ(a.latents.size(), b.latents.size());
  for (std::size_t l = 0; l < a.latents.size(); ++l) {
    ASSERT_EQ(a.latents[l].size(), b.latents[l].size()) << "latent " << l;
    for (std::size_t i = 0; i < a.latents[l].size(); ++i) {
      EXPECT_EQ(a.latents[l][i].sample_id, b.latents[l][i].sample_id);
      EXPECT_EQ(a.latents[l][i].token_index, b.latents[l][i].token_index);
      EXPECT_NEAR(a.latents[l][i].activation, b.latents[l][i].activation, 1e-12);
    }
  }
}

TEST(AttributionTest, SingleRecordLandsOnItsLatent) {
  sae::SaeConfig cfg;
  cfg.input_dim = 4;
  cfg.expansion_factor = 1;
  cfg.variant = sae::Variant::relu;
  auto m = sae::SaeModel::initialize(cfg);
  m.w_enc.setZero();
  m.w_enc(3, 0) = 1.0;
  m.b_dec.setZero();
  m.b_enc.setZero();
  Attributor acc(m, 1);
  acc.add(std::vector<store::FeatureRecord>{record("a", 2, {2.5, 0, 0, 0})});
  const auto r = acc.finish();
  ASSERT_EQ(r.latents.size(), 4u);
  ASSERT_EQ(r.latents[3].size(), 1u);
  EXPECT_EQ(r.latents[3][0].sample_id, "a");
  EXPECT_EQ(r.latents[3][0].token_index, 2u);
  EXPECT_EQ(r.latents[3][0].activation, 2.5);
  for (std::size_t l : {0, 1, 2}) EXPECT_TRUE(r.latents[l].empty());
  EXPECT_EQ(r.dead_latents(), (std::vector<std::size_t>{0, 1, 2}));
  EXPECT_DOUBLE_EQ(r.coverage(), 0.25);
  EXPECT_EQ(r.records, 1u);
}

TEST(AttributionTest, MatchesFullSortOracle) {
  Rng rng(3);
  for (int trial = 0; trial < 5; ++trial) {
    const std::size_t d = 4 + rng.below(6), n = 1 + rng.below(20);
    const auto m = random_model(d, 1 + rng.below(4), 1 + rng.below(3), 10 + trial);
    const auto recs = random_records(rng, 1000, d);
    Attributor acc(m, n);
    for (std::size_t i = 0; i < recs.size(); i += 77) {
      acc.add(std::vector<store::FeatureRecord>(recs.begin() + static_cast<std::ptrdiff_t>(i),
                                                recs.begin() + static_cast<std::ptrdiff_t>(std::min(i + 77, recs.size()))));
    }
    const auto r = acc.finish();
    const auto want = oracle(m, recs, n);
    ASSERT_EQ(r.latents.size(), want.size());
    for (std::size_t l = 0; l < want.size(); ++l) {
      ASSERT_EQ(r.latents[l].size(), want[l].size()) << "latent " << l;
      for (std::size_t i = 0; i < want[l].size(); ++i) {
        EXPECT_NEAR(r.latents[l][i].activation, std::get<0>(want[l][i]), 1e-9);
        EXPECT_EQ(r.latents[l][i].sample_id, std::get<1>(want[l][i]));
        EXPECT_EQ(r.latents[l][i].token_index, std::get<2>(want[l][i]));
        EXPECT_GT(r.latents[l][i].activation, 0.0);
      }
    }
  }
}

TEST(AttributionPropertyTest, PassOrderDoesNotMatter) {
  Rng rng(4);
  const auto m = random_model(6, 4, 2, 5);
  auto recs = random_records(rng, 800, 6);
  Attributor a(m, 8);
  a.add(recs);
  for (int trial = 0; trial < 5; ++trial) {
    rng.shuffle(std::span<store::FeatureRecord>(recs));
    Attributor b(m, 8);
    for (std::size_t i = 0; i < recs.size(); i += 50) {
      b.add(std::vector<store::FeatureRecord>(recs.begin() + static_cast<std::ptrdiff_t>(i),
                                              recs.begin() + static_cast<std::ptrdiff_t>(std::min(i + 50, recs.size()))));
    }
    expect_same_selection(a.finish(), b.finish());
  }
}

TEST(AttributionPropertyTest, ShardMergeEqualsSinglePass) {
  Rng rng(5);
  const auto m = random_model(6, 4, 3, 6);
  const auto recs = random_records(rng, 900, 6);
  Attributor whole(m, 10);
  whole.add(recs);
  std::vector<Attributor> shards(3, Attributor(m, 10));
  for (std::size_t i = 0; i < recs.size(); ++i) shards[i % 3].add(std::vector<store::FeatureRecord>{recs[i]});
  Attributor merged(m, 10);
  for (auto it = shards.rbegin(); it != shards.rend(); ++it) merged.merge(*it);
  EXPECT_EQ(merged.records(), whole.records());
  expect_same_selection(merged.finish(), whole.finish());
}

TEST(AttributionTest, LabelsFeedCoOccurrence) {
  Rng rng(6);
  const auto m = random_model(5, 2, 2, 7);
  const auto recs = random_records(rng, 200, 5);
  Attributor acc(m, 5, [](const std::string&, std::uint32_t tok) -> std::optional<std::string> {
    if (tok == 3) return std::nullopt;
    return tok % 2 == 0 ? "cat" : "dog, big";
  });
  acc.add(recs);
  const auto r = acc.finish();
  const auto csv = co_occurrence_csv(r);
  EXPECT_EQ(csv.rfind("latent_index,class,count\n", 0), 0u);
  std::size_t total = 0, labelled = 0;
  for (const auto& l : r.latents) {
    for (const auto& e : l) labelled += e.label ? 1 : 0;
  }
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) total += std::stoul(line.substr(line.rfind(',') + 1));
  EXPECT_EQ(total, labelled);
  EXPECT_NE(csv.find("\"dog, big\""), std::string::npos);
}

TEST(ManifestTest, EmptyReportIsValid) {
  AttributionReport r;
  const auto j = manifest_to_json(r);
  EXPECT_EQ(j["latent_count"], 0);
  EXPECT_TRUE(j["latents"].empty());
  EXPECT_EQ(manifest_from_json(nlohmann::json::parse(j.dump())), r);
}

TEST(ManifestTest, RoundTrips) {
  Rng rng(7);
  const auto m = random_model(5, 3, 2, 8);
  Attributor acc(m, 4, [](const std::string&, std::uint32_t tok) -> std::optional<std::string> {
    return tok == 0 ? std::optional<std::string>("cat") : std::nullopt;
  });
  auto recs = random_records(rng, 300, 5);
  recs[0].aux.box.reset();
  acc.add(recs);
  auto r = acc.finish();
  TempDir dir;
  std::ofstream(dir / "s1.jpg") << "x";
  resolve_images(r, {dir.path(), "{}.jpg", {}});
  const auto back = manifest_from_json(nlohmann::json::parse(manifest_to_json(r).dump(2)));
  EXPECT_EQ(back, r);
}

TEST(ManifestTest, MissingImagesBecomePlaceholders) {
  AttributionReport r;
  r.latents.resize(1);
  r.latents[0].push_back({"present", 0, 2.0, store::NormBox{0.5f, 0.5f, 0.2f, 0.2f}, {}, {}, false});
  r.latents[0].push_back({"absent", 0, 1.0, std::nullopt, {}, {}, false});
  TempDir dir;
  std::ofstream(dir / "img_present.png") << "x";
  resolve_images(r, {dir.path(), "img_{}.png", {}});
  EXPECT_FALSE(r.latents[0][0].image_missing);
  EXPECT_TRUE(r.latents[0][1].image_missing);
  ASSERT_EQ(r.missing_images.size(), 1u);
  EXPECT_NE(r.missing_images[0].find("img_absent.png"), std::string::npos);
  const auto html = render_html(r);
  EXPECT_NE(html.find("(image missing)"), std::string::npos);
  EXPECT_NE(html.find("img_present.png"), std::string::npos);
  EXPECT_EQ(manifest_to_json(r)["missing_images"].size(), 1u);
}

TEST(ReportTest, HtmlHasOneSectionPerLatentInOrder) {
  AttributionReport r;
  r.latents.resize(3);
  r.latents[0].push_back({"a", 0, 1.0, {}, {}, {}, false});
  r.latents[2].push_back({"b<x>", 1, 0.5, {}, {}, {}, false});
  const auto html = render_html(r);
  std::vector<std::size_t> pos;
  for (int i = 0; i < 3; ++i) pos.push_back(html.find("id=\"latent-" + std::to_string(i) + "\""));
  for (auto p : pos) ASSERT_NE(p, std::string::npos);
  EXPECT_TRUE(std::is_sorted(pos.begin(), pos.end()));
  std::size_t sections = 0;
  for (auto p = html.find("<section"); p != std::string::npos; p = html.find("<section", p + 1)) ++sections;
  EXPECT_EQ(sections, 3u);
  EXPECT_NE(html.find("b&lt;x&gt;"), std::string::npos);
}

TEST(ReportTest, WritesFiles) {
  AttributionReport r;
  r.latents.resize(2);
  TempDir dir;
  write_report(r, dir / "out");
  EXPECT_TRUE(std::filesystem::exists(dir / "out" / "manifest.json"));
  EXPECT_TRUE(std::filesystem::exists(dir / "out" / "cooccurrence.csv"));
  EXPECT_TRUE(std::filesystem::exists(dir / "out" / "gallery.html"));
  EXPECT_EQ(manifest_from_json(read_json(dir / "out" / "manifest.json")), r);
}

TEST(AttributeTest, StreamsATableAndChecksDimensions) {
  Rng rng(8);
  const auto m = random_model(6, 2, 2, 9);
  const auto recs = random_records(rng, 500, 6);
  TempDir dir;
  store::write_table(recs, dir / "t", store::Dtype::f64, 64);
  const auto table = store::FeatureTable::open(dir / "t");
  AttributeOptions opts;
  opts.top_n = 7;
  opts.batch_size = 33;
  const auto r = attribute(m, table, opts);
  Attributor direct(m, 7);
  direct.add(recs);
  expect_same_selection(r, direct.finish());
  EXPECT_EQ(r.records, recs.size());

  const auto wrong = random_model(5, 2, 2, 9);
  EXPECT_THROW(attribute(wrong, table, opts), ConfigError);
  EXPECT_THROW(Attributor(m, 0), ConfigError);
  Attributor acc(m, 3);
  EXPECT_THROW(acc.add(std::vector<store::FeatureRecord>{record("x", 0, {1.0})}), DataError);
}

TEST(AttributeTest, EmptySelectionIsError) {
  const auto m = random_model(1, 2, 2, 9);
  TempDir dir;
  store::write_table({record("a", 0, {1.0})}, dir / "t");
  const auto table = store::FeatureTable::open(dir / "t");
  AttributeOptions opts;
  opts.source.model_id = "elsewhere";
  EXPECT_THROW(attribute(m, table, opts), Error);
}

}  // namespace
}  // namespace prism::attribution
