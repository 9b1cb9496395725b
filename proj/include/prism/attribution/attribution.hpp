#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "prism/sae/model.hpp"
#include "prism/store/table.hpp"

namespace prism::attribution {

inline constexpr std::size_t kDefaultTopN = 64;

struct AttributionEntry {
  std::string sample_id;
  std::uint32_t token_index = 0;
  double activation = 0.0;
  std::optional<store::NormBox> box;
  /// Predicted class of the token, when a labeler was supplied.
  std::optional<std::string> label;
  std::optional<std::string> image;
  bool image_missing = false;

  friend bool operator==(const AttributionEntry&, const AttributionEntry&) = default;
};

/// Higher activation first, then (sample_id, token_index) ascending.
bool ranks_before(const AttributionEntry& a, const AttributionEntry& b);

struct AttributionReport {
  std::size_t top_n = kDefaultTopN;
  std::uint64_t records = 0;
  /// One list per latent, best first, at most top_n long.
  std::vector<std::vector<AttributionEntry>> latents;
  std::vector<std::string> missing_images;

  std::size_t active_latents() const;
  /// Fraction of latents with at least one activation; 0 for no latents.
  double coverage() const;
  std::vector<std::size_t> dead_latents() const;

  friend bool operator==(const AttributionReport&, const AttributionReport&) = default;
};

using Labeler = std::function<std::optional<std::string>(const std::string& sample_id, std::uint32_t token_index)>;

/// Single-pass top-n selection per latent. Memory is O(latents * n)
/// regardless of how many records are fed.
class Attributor {
 public:
  Attributor(const sae::SaeModel& model, std::size_t top_n = kDefaultTopN, Labeler labeler = {});

  /// Records must have the model's input dimension.
  void add(const std::vector<store::FeatureRecord>& records);
  void add(const store::RecordBatch& batch);
  /// Folds in a partial result built from a disjoint part of the data.
  void merge(const Attributor& other);

  std::uint64_t records() const { return records_; }
  AttributionReport finish() const;

 private:
  template <typename Range>
  void add_range(const Range& records, std::size_t count);
  void offer(std::size_t latent, double activation, const store::FeatureRecord& record);
  void offer(std::size_t latent, const AttributionEntry& entry);

  const sae::SaeModel* model_;
  std::size_t top_n_;
  Labeler labeler_;
  std::uint64_t records_ = 0;
  /// Max-heaps under ranks_before: the front is the weakest kept entry.
  std::vector<std::vector<AttributionEntry>> heaps_;
};

struct AttributeOptions {
  std::size_t top_n = kDefaultTopN;
  store::AccessPointFilter source;
  std::size_t batch_size = 256;
  Labeler labeler;
};

/// Throws ConfigError when the access point does not match the model's input
/// dimension and DataError when it holds no records.
AttributionReport attribute(const sae::SaeModel& model, const store::FeatureTable& table,
                            const AttributeOptions& options);

/// Where crops come from: dir / pattern with "{}" replaced by the sample id,
/// unless file_names has an explicit entry for the sample.
struct ImageSource {
  std::filesystem::path dir;
  std::string pattern = "{}.jpg";
  std::map<std::string, std::string> file_names;
};

/// Fills image paths; absent files become placeholders listed in
/// missing_images.
void resolve_images(AttributionReport& report, const ImageSource& source);

/// {"top_n", "records", "coverage", "dead_latents", "missing_images",
///  "latents": {"<i>": [{sample_id, token_index, activation, box, label,
///  image, image_missing}]}}
nlohmann::json manifest_to_json(const AttributionReport& report);
AttributionReport manifest_from_json(const nlohmann::json& doc);

/// latent_index,class,count over the selected entries that carry a label.
std::string co_occurrence_csv(const AttributionReport& report);

/// Static gallery: one section per latent, in latent order, each entry drawn
/// as its image with the box overlaid.
std::string render_html(const AttributionReport& report);

struct ReportFiles {
  bool html = true;
};

/// Writes manifest.json, cooccurrence.csv and optionally gallery.html.
void write_report(const AttributionReport& report, const std::filesystem::path& out_dir,
                  const ReportFiles& files = {});

}  // namespace prism::attribution
