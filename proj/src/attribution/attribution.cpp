#include "prism/attribution/attribution.hpp"

#include <algorithm>
#include <iomanip>
#include <sstream>

#include "prism/core/error.hpp"
#include "prism/core/io.hpp"
#include "prism/sae/trainer.hpp"

namespace prism::attribution {

using nlohmann::json;

namespace {

// a ranks before b: higher activation, then smaller (sample_id, token_index).
bool key_before(double act_a, const std::string& sid_a, std::uint32_t tok_a, double act_b, const std::string& sid_b,
                std::uint32_t tok_b) {
  if (act_a != act_b) return act_a > act_b;
  if (sid_a != sid_b) return sid_a < sid_b;
  return tok_a < tok_b;
}

std::string number(double v) {
  std::ostringstream os;
  os << std::setprecision(6) << v;
  return os.str();
}

std::string html_escape(const std::string& s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      case '\'': out += "&#39;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

bool ranks_before(const AttributionEntry& a, const AttributionEntry& b) {
  return key_before(a.activation, a.sample_id, a.token_index, b.activation, b.sample_id, b.token_index);
}

std::size_t AttributionReport::active_latents() const {
  return static_cast<std::size_t>(
      std::count_if(latents.begin(), latents.end(), [](const auto& l) { return !l.empty(); }));
}

double AttributionReport::coverage() const {
  if (latents.empty()) return 0.0;
  return static_cast<double>(active_latents()) / static_cast<double>(latents.size());
}

std::vector<std::size_t> AttributionReport::dead_latents() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < latents.size(); ++i) {
    if (latents[i].empty()) out.push_back(i);
  }
  return out;
}

Attributor::Attributor(const sae::SaeModel& model, std::size_t top_n, Labeler labeler)
    : model_(&model), top_n_(top_n), labeler_(std::move(labeler)), heaps_(model.config.latent_dim()) {
  if (top_n == 0) throw ConfigError("attribution.top_n", "must be at least 1");
}

void Attributor::offer(std::size_t latent, double activation, const store::FeatureRecord& record) {
  auto& heap = heaps_[latent];
  if (heap.size() == top_n_ &&
      !key_before(activation, record.sample_id, record.token_index, heap.front().activation, heap.front().sample_id,
                  heap.front().token_index)) {
    return;
  }
  AttributionEntry e;
  e.sample_id = record.sample_id;
  e.token_index = record.token_index;
  e.activation = activation;
  e.box = record.aux.box;
  if (labeler_) e.label = labeler_(record.sample_id, record.token_index);
  offer(latent, e);
}

void Attributor::offer(std::size_t latent, const AttributionEntry& entry) {
  auto& heap = heaps_[latent];
  if (heap.size() < top_n_) {
    heap.push_back(entry);
    std::push_heap(heap.begin(), heap.end(), ranks_before);
  } else if (ranks_before(entry, heap.front())) {
    std::pop_heap(heap.begin(), heap.end(), ranks_before);
    heap.back() = entry;
    std::push_heap(heap.begin(), heap.end(), ranks_before);
  }
}

template <typename Range>
void Attributor::add_range(const Range& records, std::size_t count) {
  if (count == 0) return;
  const auto d = static_cast<Eigen::Index>(model_->config.input_dim);
  sae::Matrix x(d, static_cast<Eigen::Index>(count));
  Eigen::Index c = 0;
  for (const auto& r : records) {
    if (static_cast<Eigen::Index>(r.vector.size()) != d) {
      throw DataError("attribution: record (" + r.sample_id + ", " + std::to_string(r.token_index) + ") has dimension " +
                      std::to_string(r.vector.size()) + ", model expects " + std::to_string(d));
    }
    x.col(c++) = Eigen::Map<const sae::Vector>(r.vector.data(), d);
  }
  if (model_->input_stats) x = model_->input_stats->apply(x);
  const sae::Matrix z = sae::sparse_code(*model_, x);
  c = 0;
  for (const auto& r : records) {
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
      const double v = z(i, c);
      if (v > 0.0) offer(static_cast<std::size_t>(i), v, r);
    }
    ++c;
  }
  records_ += count;
}

void Attributor::add(const std::vector<store::FeatureRecord>& records) { add_range(records, records.size()); }

void Attributor::add(const store::RecordBatch& batch) { add_range(batch, batch.size()); }

void Attributor::merge(const Attributor& other) {
  if (other.heaps_.size() != heaps_.size() || other.top_n_ != top_n_) {
    throw ConfigError("attribution", "cannot merge results of different shapes");
  }
  for (std::size_t l = 0; l < heaps_.size(); ++l) {
    for (const auto& e : other.heaps_[l]) offer(l, e);
  }
  records_ += other.records_;
}

AttributionReport Attributor::finish() const {
  AttributionReport r;
  r.top_n = top_n_;
  r.records = records_;
  r.latents = heaps_;
  for (auto& l : r.latents) std::sort(l.begin(), l.end(), ranks_before);
  return r;
}

AttributionReport attribute(const sae::SaeModel& model, const store::FeatureTable& table,
                            const AttributeOptions& options) {
  const auto& point = sae::resolve_point(table.schema(), options.source, "source");
  if (point.dimension != model.config.input_dim) {
    throw ConfigError("attribution.source", "access point " + point.spec.point_name + " has dimension " +
                                                std::to_string(point.dimension) + " but the model expects " +
                                                std::to_string(model.config.input_dim));
  }
  if (point.row_count == 0) throw DataError("attribution: access point " + point.spec.point_name + " has no records");
  store::AccessPointFilter exact{point.spec.model_id, point.spec.point_name};
  store::StreamOptions opts;
  opts.filter = exact;
  opts.batch_size = options.batch_size;
  Attributor acc(model, options.top_n, options.labeler);
  auto stream = table.stream(opts);
  while (auto batch = stream.next()) acc.add(*batch);
  if (acc.records() == 0) throw DataError("attribution: access point " + point.spec.point_name + " has no records");
  return acc.finish();
}

void resolve_images(AttributionReport& report, const ImageSource& source) {
  std::map<std::string, bool> seen;
  report.missing_images.clear();
  for (auto& latent : report.latents) {
    for (auto& e : latent) {
      std::string name;
      const auto it = source.file_names.find(e.sample_id);
      if (it != source.file_names.end()) {
        name = it->second;
      } else {
        name = source.pattern;
        const auto pos = name.find("{}");
        if (pos != std::string::npos) name.replace(pos, 2, e.sample_id);
      }
      const auto path = (source.dir / name).lexically_normal().generic_string();
      e.image = path;
      auto [cached, inserted] = seen.emplace(path, false);
      if (inserted) {
        std::error_code ec;
        cached->second = std::filesystem::is_regular_file(path, ec);
        if (!cached->second) report.missing_images.push_back(path);
      }
      e.image_missing = !cached->second;
    }
  }
  std::sort(report.missing_images.begin(), report.missing_images.end());
}

json manifest_to_json(const AttributionReport& report) {
  json latents = json::object();
  for (std::size_t i = 0; i < report.latents.size(); ++i) {
    json list = json::array();
    for (const auto& e : report.latents[i]) {
      json j = {{"sample_id", e.sample_id}, {"token_index", e.token_index}, {"activation", e.activation}};
      j["box"] = e.box ? json(*e.box) : json();
      j["label"] = e.label ? json(*e.label) : json();
      j["image"] = e.image ? json(*e.image) : json();
      j["image_missing"] = e.image_missing;
      list.push_back(std::move(j));
    }
    latents[std::to_string(i)] = std::move(list);
  }
  return {{"top_n", report.top_n},
          {"records", report.records},
          {"latent_count", report.latents.size()},
          {"coverage", report.coverage()},
          {"dead_latents", report.dead_latents()},
          {"missing_images", report.missing_images},
          {"latents", std::move(latents)}};
}

AttributionReport manifest_from_json(const json& doc) {
  try {
    AttributionReport r;
    r.top_n = doc.at("top_n").get<std::size_t>();
    r.records = doc.at("records").get<std::uint64_t>();
    r.missing_images = doc.value("missing_images", std::vector<std::string>{});
    const auto count = doc.at("latent_count").get<std::size_t>();
    r.latents.resize(count);
    for (const auto& [key, list] : doc.at("latents").items()) {
      std::size_t pos = 0;
      const auto idx = std::stoull(key, &pos);
      if (pos != key.size() || idx >= count) throw DataError("manifest: bad latent key '" + key + "'");
      for (const auto& j : list) {
        AttributionEntry e;
        e.sample_id = j.at("sample_id").get<std::string>();
        e.token_index = j.at("token_index").get<std::uint32_t>();
        e.activation = j.at("activation").get<double>();
        if (j.contains("box") && !j["box"].is_null()) e.box = j["box"].get<store::NormBox>();
        if (j.contains("label") && !j["label"].is_null()) e.label = j["label"].get<std::string>();
        if (j.contains("image") && !j["image"].is_null()) e.image = j["image"].get<std::string>();
        e.image_missing = j.value("image_missing", false);
        r.latents[idx].push_back(std::move(e));
      }
    }
    return r;
  } catch (const json::exception& e) {
    throw DataError(std::string("manifest: ") + e.what());
  } catch (const std::invalid_argument&) {
    throw DataError("manifest: latent keys must be integers");
  }
}

std::string co_occurrence_csv(const AttributionReport& report) {
  std::string out = "latent_index,class,count\n";
  for (std::size_t i = 0; i < report.latents.size(); ++i) {
    std::map<std::string, std::size_t> counts;
    for (const auto& e : report.latents[i]) {
      if (e.label) ++counts[*e.label];
    }
    for (const auto& [label, n] : counts) {
      out += std::to_string(i) + "," + csv_field(label) + "," + std::to_string(n) + "\n";
    }
  }
  return out;
}

std::string render_html(const AttributionReport& report) {
  std::ostringstream h;
  h << "<!DOCTYPE html>\n<html>\n<head>\n<meta charset=\"utf-8\">\n<title>Latent attribution</title>\n"
    << "<style>\nbody{font-family:sans-serif;margin:1em}\nsection{margin-bottom:2em}\n"
    << "figure{display:inline-block;margin:4px;font-size:11px;text-align:center}\n"
    << ".placeholder{fill:#ddd}\n.empty{color:#888}\n</style>\n</head>\n<body>\n"
    << "<h1>Latent attribution</h1>\n<p>" << report.records << " records, " << report.active_latents() << " of "
    << report.latents.size() << " latents active, top " << report.top_n << " per latent.</p>\n";
  for (std::size_t i = 0; i < report.latents.size(); ++i) {
    h << "<section class=\"latent\" id=\"latent-" << i << "\">\n<h2>Latent " << i << "</h2>\n";
    if (report.latents[i].empty()) h << "<p class=\"empty\">No activations.</p>\n";
    for (const auto& e : report.latents[i]) {
      h << "<figure><svg width=\"128\" height=\"128\" viewBox=\"0 0 1 1\" preserveAspectRatio=\"none\">";
      if (e.image && !e.image_missing) {
        h << "<image href=\"" << html_escape(*e.image)
          << "\" x=\"0\" y=\"0\" width=\"1\" height=\"1\" preserveAspectRatio=\"none\"/>";
      } else {
        h << "<rect class=\"placeholder\" x=\"0\" y=\"0\" width=\"1\" height=\"1\"/>";
      }
      if (e.box) {
        const auto& b = *e.box;
        h << "<rect x=\"" << number(b[0] - b[2] / 2) << "\" y=\"" << number(b[1] - b[3] / 2) << "\" width=\""
          << number(b[2]) << "\" height=\"" << number(b[3])
          << "\" fill=\"none\" stroke=\"red\" stroke-width=\"0.015\"/>";
      }
      h << "</svg><figcaption>" << html_escape(e.sample_id) << ":" << e.token_index << "<br>" << number(e.activation);
      if (e.label) h << "<br>" << html_escape(*e.label);
      if (e.image_missing) h << "<br>(image missing)";
      h << "</figcaption></figure>\n";
    }
    h << "</section>\n";
  }
  h << "</body>\n</html>\n";
  return h.str();
}

void write_report(const AttributionReport& report, const std::filesystem::path& out_dir, const ReportFiles& files) {
  std::filesystem::create_directories(out_dir);
  write_json(out_dir / "manifest.json", manifest_to_json(report));
  write_file_atomic(out_dir / "cooccurrence.csv", co_occurrence_csv(report));
  if (files.html) write_file_atomic(out_dir / "gallery.html", render_html(report));
}

}  // namespace prism::attribution
