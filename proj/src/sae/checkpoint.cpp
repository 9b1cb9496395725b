#include "prism/sae/checkpoint.hpp"

#include <bit>
#include <cstring>

#include "prism/core/error.hpp"
#include "prism/core/io.hpp"

namespace prism::sae {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

namespace {

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

void put_matrix(std::string& out, const Matrix& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) put(out, m(i, j));
  }
}

void put_vector(std::string& out, const Vector& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i) put(out, v(i));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string_view take(std::size_t n) {
    need(n);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  Matrix matrix(Eigen::Index rows, Eigen::Index cols) {
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
      for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = get<double>();
    }
    return m;
  }

  Vector vector(Eigen::Index n) {
    Vector v(n);
    for (Eigen::Index i = 0; i < n; ++i) v(i) = get<double>();
    return v;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw DataError("checkpoint is truncated");
  }

  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_checkpoint(const SaeModel& model, const OptimizerState& opt) {
  nlohmann::json header = {{"format", "prism.sae-checkpoint"},
                           {"config", model.config.to_json()},
                           {"step", opt.step},
                           {"latent_dim", model.w_enc.rows()},
                           {"input_dim", model.w_enc.cols()},
                           {"output_dim", model.w_dec.rows()},
                           {"dtype", "f64"},
                           {"input_scale", model.input_stats ? nlohmann::json(model.input_stats->scale) : nlohmann::json()},
                           {"target_scale", model.target_stats ? nlohmann::json(model.target_stats->scale) : nlohmann::json()}};
  const std::string h = header.dump();
  std::string out(kCheckpointMagic, 7);
  out.push_back('\0');
  put(out, kCheckpointVersion);
  put(out, static_cast<std::uint64_t>(h.size()));
  out += h;
  put_matrix(out, model.w_enc);
  put_vector(out, model.b_enc);
  put_matrix(out, model.w_dec);
  put_vector(out, model.b_dec);
  put_matrix(out, opt.m_w_enc);
  put_matrix(out, opt.v_w_enc);
  put_vector(out, opt.m_b_enc);
  put_vector(out, opt.v_b_enc);
  put_matrix(out, opt.m_w_dec);
  put_matrix(out, opt.v_w_dec);
  put_vector(out, opt.m_b_dec);
  put_vector(out, opt.v_b_dec);
  for (auto t : model.last_fired) put(out, t);
  if (model.input_stats) put_vector(out, model.input_stats->mean);
  if (model.target_stats) put_vector(out, model.target_stats->mean);
  return out;
}

Checkpoint deserialize_checkpoint(std::string_view bytes) {
  Reader r(bytes);
  if (r.take(8) != std::string_view(kCheckpointMagic, 8)) throw DataError("not an SAE checkpoint (bad magic)");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) throw DataError("unsupported checkpoint version " + std::to_string(version));
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(r.take(r.get<std::uint64_t>()));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("corrupt checkpoint header: ") + e.what());
  }
  Checkpoint ck;
  auto& m = ck.model;
  m.config = SaeConfig::from_json(header.at("config"));
  m.config.validate();
  const Eigen::Index lat = header.at("latent_dim").get<Eigen::Index>();
  const Eigen::Index din = header.at("input_dim").get<Eigen::Index>();
  const Eigen::Index dout = header.at("output_dim").get<Eigen::Index>();
  if (lat != static_cast<Eigen::Index>(m.config.latent_dim()) || din != static_cast<Eigen::Index>(m.config.input_dim) ||
      dout != static_cast<Eigen::Index>(m.config.target_dim())) {
    throw DataError("checkpoint shapes disagree with its config");
  }
  m.w_enc = r.matrix(lat, din);
  m.b_enc = r.vector(lat);
  m.w_dec = r.matrix(dout, lat);
  m.b_dec = r.vector(dout);
  auto& o = ck.optimizer;
  o.step = header.at("step").get<std::uint64_t>();
  o.m_w_enc = r.matrix(lat, din);
  o.v_w_enc = r.matrix(lat, din);
  o.m_b_enc = r.vector(lat);
  o.v_b_enc = r.vector(lat);
  o.m_w_dec = r.matrix(dout, lat);
  o.v_w_dec = r.matrix(dout, lat);
  o.m_b_dec = r.vector(dout);
  o.v_b_dec = r.vector(dout);
  m.last_fired.resize(static_cast<std::size_t>(lat));
  for (auto& t : m.last_fired) t = r.get<std::uint64_t>();
  if (!header["input_scale"].is_null()) m.input_stats = NormStats{r.vector(din), header["input_scale"].get<double>()};
  if (!header["target_scale"].is_null()) m.target_stats = NormStats{r.vector(dout), header["target_scale"].get<double>()};
  if (!r.done()) throw DataError("checkpoint has trailing bytes");
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const SaeModel& model, const OptimizerState& optimizer) {
  write_file_atomic(path, serialize_checkpoint(model, optimizer));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return deserialize_checkpoint(read_file(path)); }

}  // namespace prism::sae
