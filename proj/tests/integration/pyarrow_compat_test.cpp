#include <cstdio>
#include <cstdlib>

#include <gtest/gtest.h>
#include <json.hpp>

#include "prism/store/table.hpp"
#include "../unit/test_util.hpp"

namespace prism::store {
namespace {

using prism::testing::TempDir;

const std::string kScript = std::string(PRISM_SOURCE_DIR) + "/tests/integration/pyarrow_compat.py";

bool have_pyarrow() { return std::system("python3 -c 'import pyarrow' > /dev/null 2>&1") == 0; }

std::string run(const std::string& cmd) {
  std::string out;
  FILE* pipe = ::popen(cmd.c_str(), "r");
  if (pipe == nullptr) return out;
  char buf[4096];
  while (std::size_t n = std::fread(buf, 1, sizeof buf, pipe)) out.append(buf, n);
  EXPECT_EQ(::pclose(pipe), 0) << cmd;
  return out;
}

TEST(PyarrowCompatTest, PyarrowReadsOurTables) {
  if (!have_pyarrow()) GTEST_SKIP() << "pyarrow not available";
  TempDir dir;
  std::vector<FeatureRecord> records;
  for (std::uint32_t i = 0; i < 9; ++i) {
    FeatureRecord r;
    r.access_point = {"m", i < 5 ? "enc" : "dec", static_cast<std::uint16_t>(i < 5 ? 3 : 9), ArtifactKind::activation};
    r.sample_id = "s" + std::to_string(i);
    r.token_index = 100000 + i;
    r.vector = i < 5 ? std::vector<double>{0.5 * i, -1.25} : std::vector<double>{1, 2, 3, 4};
    if (i % 2) r.aux.objectness = 0.75f;
    if (i % 3 == 0) r.aux.box = NormBox{0.5f, 0.25f, 0.125f, 1.0f};
    records.push_back(r);
  }
  write_table(records, dir / "t", Dtype::f32, 4);
  const auto parsed = nlohmann::json::parse(run("python3 " + kScript + " read " + (dir / "t").string()));
  const auto& rows = parsed.at("rows");
  ASSERT_EQ(rows.size(), records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& row = rows[i];
    EXPECT_EQ(row.at("point_name"), records[i].access_point.point_name);
    EXPECT_EQ(row.at("layer_index"), records[i].access_point.layer_index);
    EXPECT_EQ(row.at("token_index"), records[i].token_index);
    EXPECT_EQ(row.at("vector").get<std::vector<double>>(), records[i].vector);
    EXPECT_EQ(row.at("aux_objectness").is_null(), !records[i].aux.objectness.has_value());
    EXPECT_EQ(row.at("aux_box").is_null(), !records[i].aux.box.has_value());
  }
}

TEST(PyarrowCompatTest, WeReadPyarrowDefaults) {
  if (!have_pyarrow()) GTEST_SKIP() << "pyarrow not available";
  for (const std::string version : {"1.0", "2.0"}) {
    TempDir dir;
    std::filesystem::create_directories(dir / "t");
    run("python3 " + kScript + " write " + (dir / "t").string() + " " + version);
    const auto table = FeatureTable::open(dir / "t");
    EXPECT_TRUE(table.warnings().empty());
    const auto records = table.read_all();
    ASSERT_EQ(records.size(), 7u) << version;
    EXPECT_EQ(records[6].access_point.layer_index, 5);
    EXPECT_EQ(records[6].sample_id, "img3");
    EXPECT_EQ(records[6].vector, (std::vector<double>{3.0, -1.0, 8.0}));
    EXPECT_FALSE(records[0].aux.objectness.has_value());
    EXPECT_EQ(records[1].aux.objectness, 0.25f);
    EXPECT_FALSE(records[0].aux.box.has_value());
    EXPECT_EQ(records[1].aux.box, (NormBox{0.5f, 0.5f, 0.25f, 0.125f}));
    EXPECT_EQ(table.read_all({std::nullopt, "decoder.layer4.residual"}).size(), 4u);
  }
}

}  // namespace
}  // namespace prism::store
