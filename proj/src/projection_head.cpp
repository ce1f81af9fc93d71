#include "timet/projection_head.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "timet/tensor_io.hpp"

namespace timet {

void HeadConfig::validate() const {
  if (in_dim < 1 || hidden_dim < 1 || out_dim < 1 || n_prototypes < 1) {
    throw std::invalid_argument("head dimensions must all be at least 1");
  }
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw std::invalid_argument("head temperature must be positive");
  }
}

template <typename Scalar>
HeadParams<Scalar> HeadParams<Scalar>::zeros_like(const HeadParams& other) {
  HeadParams out;
  auto dst = out.tensors();
  auto src = other.tensors();
  for (std::size_t i = 0; i < kCount; ++i) *dst[i] = Mat::Zero(src[i]->rows(), src[i]->cols());
  return out;
}

template <typename Scalar>
std::size_t HeadParams<Scalar>::numel() const {
  std::size_t n = 0;
  for (const Mat* t : tensors()) n += static_cast<std::size_t>(t->size());
  return n;
}

template <typename Scalar>
bool HeadParams<Scalar>::all_finite() const {
  for (const Mat* t : tensors()) {
    if (!t->allFinite()) return false;
  }
  return true;
}

template <typename Scalar>
Scalar gelu(Scalar x) {
  return Scalar(0.5) * x * (Scalar(1) + std::erf(x / std::numbers::sqrt2_v<Scalar>));
}

template <typename Scalar>
Scalar gelu_grad(Scalar x) {
  const Scalar cdf = Scalar(0.5) * (Scalar(1) + std::erf(x / std::numbers::sqrt2_v<Scalar>));
  const Scalar pdf = std::exp(Scalar(-0.5) * x * x) * std::numbers::inv_sqrtpi_v<Scalar> /
                     std::numbers::sqrt2_v<Scalar>;
  return cdf + x * pdf;
}

template <typename Scalar>
typename HeadParams<Scalar>::Mat tangent_prototype_grad(const typename HeadParams<Scalar>::Mat& grad,
                                                        const typename HeadParams<Scalar>::Mat& prototypes) {
  typename HeadParams<Scalar>::Mat out = grad;
  for (Eigen::Index k = 0; k < grad.rows(); ++k) {
    const Scalar norm = prototypes.row(k).norm();
    const auto unit = prototypes.row(k) / norm;
    out.row(k) = (grad.row(k) - grad.row(k).dot(unit) * unit) / norm;
  }
  return out;
}

template <typename Scalar>
ProjectionHead<Scalar>::ProjectionHead(const HeadConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  std::mt19937_64 rng(cfg_.seed);
  auto uniform = [&](Eigen::Index rows, Eigen::Index cols, std::size_t fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Mat m(rows, cols);
    for (Eigen::Index c = 0; c < cols; ++c) {
      for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = static_cast<Scalar>(dist(rng));
    }
    return m;
  };
  const auto in = static_cast<Eigen::Index>(cfg_.in_dim);
  const auto hid = static_cast<Eigen::Index>(cfg_.hidden_dim);
  const auto out = static_cast<Eigen::Index>(cfg_.out_dim);
  const auto k = static_cast<Eigen::Index>(cfg_.n_prototypes);
  params_.w1 = uniform(hid, in, cfg_.in_dim);
  params_.b1 = uniform(hid, 1, cfg_.in_dim);
  params_.w2 = uniform(hid, hid, cfg_.hidden_dim);
  params_.b2 = uniform(hid, 1, cfg_.hidden_dim);
  params_.w3 = uniform(out, hid, cfg_.hidden_dim);
  params_.b3 = uniform(out, 1, cfg_.hidden_dim);
  std::normal_distribution<double> gauss(0.0, 1.0);
  params_.prototypes.resize(k, out);
  for (Eigen::Index c = 0; c < out; ++c) {
    for (Eigen::Index r = 0; r < k; ++r) params_.prototypes(r, c) = static_cast<Scalar>(gauss(rng));
  }
  renormalize_prototypes();
}

template <typename Scalar>
ProjectionHead<Scalar>::ProjectionHead(const HeadConfig& cfg, HeadParams<Scalar> params)
    : cfg_(cfg), params_(std::move(params)) {
  cfg_.validate();
  check_shapes();
}

template <typename Scalar>
void ProjectionHead<Scalar>::check_shapes() const {
  const auto in = static_cast<Eigen::Index>(cfg_.in_dim);
  const auto hid = static_cast<Eigen::Index>(cfg_.hidden_dim);
  const auto out = static_cast<Eigen::Index>(cfg_.out_dim);
  const auto k = static_cast<Eigen::Index>(cfg_.n_prototypes);
  const std::array<std::pair<Eigen::Index, Eigen::Index>, HeadParams<Scalar>::kCount> want = {{
      {hid, in}, {hid, 1}, {hid, hid}, {hid, 1}, {out, hid}, {out, 1}, {k, out}}};
  auto have = params_.tensors();
  for (std::size_t i = 0; i < want.size(); ++i) {
    if (have[i]->rows() != want[i].first || have[i]->cols() != want[i].second) {
      throw std::invalid_argument("head parameter '" + std::string(HeadParams<Scalar>::kNames[i]) +
                                  "' has shape " + std::to_string(have[i]->rows()) + "x" +
                                  std::to_string(have[i]->cols()) + ", config needs " +
                                  std::to_string(want[i].first) + "x" + std::to_string(want[i].second));
    }
  }
}

template <typename Scalar>
void ProjectionHead<Scalar>::renormalize_prototypes() {
  for (Eigen::Index k = 0; k < params_.prototypes.rows(); ++k) {
    const Scalar norm = params_.prototypes.row(k).norm();
    if (norm > Scalar(0)) params_.prototypes.row(k) /= norm;
  }
}

namespace {

template <typename Mat>
Mat affine(const Mat& x, const Mat& w, const Mat& b) {
  Mat y = x * w.transpose();
  y.rowwise() += b.col(0).transpose();
  return y;
}

template <typename Mat>
Mat apply_gelu(const Mat& x) {
  return x.unaryExpr([](typename Mat::Scalar v) { return gelu(v); });
}

}  // namespace

template <typename Scalar>
HeadOutput<Scalar> ProjectionHead<Scalar>::forward(const Mat& features) const {
  if (static_cast<std::size_t>(features.cols()) != cfg_.in_dim) {
    throw std::invalid_argument("head expects " + std::to_string(cfg_.in_dim) +
                                "-dim features, got " + std::to_string(features.cols()));
  }
  if (!features.allFinite()) throw std::invalid_argument("head input has non-finite entries");

  HeadOutput<Scalar> out;
  HeadCache<Scalar>& c = out.cache;
  c.input = features;
  c.pre1 = affine(features, params_.w1, params_.b1);
  c.act1 = apply_gelu(c.pre1);
  c.pre2 = affine(c.act1, params_.w2, params_.b2);
  c.act2 = apply_gelu(c.pre2);
  const Mat raw = affine(c.act2, params_.w3, params_.b3);
  c.embed_norm = raw.rowwise().norm().cwiseMax(Scalar(1e-12));
  c.embed = raw.array().colwise() / c.embed_norm.array();

  out.logits = c.embed * params_.prototypes.transpose() / static_cast<Scalar>(cfg_.temperature);
  out.log_probs.resize(out.logits.rows(), out.logits.cols());
  for (Eigen::Index r = 0; r < out.logits.rows(); ++r) {
    const Scalar m = out.logits.row(r).maxCoeff();
    const Scalar lse = m + std::log((out.logits.row(r).array() - m).exp().sum());
    out.log_probs.row(r) = out.logits.row(r).array() - lse;
  }
  return out;
}

template <typename Scalar>
typename ProjectionHead<Scalar>::Mat ProjectionHead<Scalar>::embed(const Mat& features) const {
  return forward(features).cache.embed;
}

template <typename Scalar>
HeadParams<Scalar> ProjectionHead<Scalar>::backward(const HeadCache<Scalar>& c,
                                                    const Mat& grad_logits) const {
  const Eigen::Index b = c.input.rows();
  const auto hidden = params_.w1.rows();
  auto fits = [b](const Mat& m, Eigen::Index cols) { return m.rows() == b && m.cols() == cols; };
  if (grad_logits.rows() != b || grad_logits.cols() != params_.prototypes.rows() ||
      !fits(c.input, params_.w1.cols()) || !fits(c.pre1, hidden) || !fits(c.act1, hidden) ||
      !fits(c.pre2, hidden) || !fits(c.act2, hidden) || !fits(c.embed, params_.prototypes.cols()) ||
      c.embed_norm.size() != b) {
    throw std::invalid_argument("stale head cache: shapes do not match the gradient");
  }
  const Scalar inv_t = Scalar(1) / static_cast<Scalar>(cfg_.temperature);
  HeadParams<Scalar> g;

  g.prototypes = grad_logits.transpose() * c.embed * inv_t;
  const Mat d_unit = grad_logits * params_.prototypes * inv_t;
  // Jacobian of x / |x|: (I - u u^T) / |x|.
  const auto radial = (d_unit.array() * c.embed.array()).rowwise().sum();
  Mat d_raw = d_unit - (c.embed.array().colwise() * radial).matrix();
  d_raw.array().colwise() /= c.embed_norm.array();

  g.w3 = d_raw.transpose() * c.act2;
  g.b3 = d_raw.colwise().sum().transpose();
  Mat d_pre2 = (d_raw * params_.w3).cwiseProduct(
      c.pre2.unaryExpr([](Scalar v) { return gelu_grad(v); }));
  g.w2 = d_pre2.transpose() * c.act1;
  g.b2 = d_pre2.colwise().sum().transpose();
  Mat d_pre1 = (d_pre2 * params_.w2).cwiseProduct(
      c.pre1.unaryExpr([](Scalar v) { return gelu_grad(v); }));
  g.w1 = d_pre1.transpose() * c.input;
  g.b1 = d_pre1.colwise().sum().transpose();
  return g;
}

template <typename Scalar>
void save_checkpoint(const ProjectionHead<Scalar>& head, const std::filesystem::path& path) {
  const HeadParams<Scalar>& p = head.params();
  Tensor t;
  t.dtype = std::is_same_v<Scalar, float> ? Dtype::kFloat32 : Dtype::kFloat64;
  t.shape = {1, p.numel()};
  t.values.reserve(p.numel());
  nlohmann::json layout = nlohmann::json::array();
  std::size_t offset = 0;
  auto tensors = p.tensors();
  for (std::size_t i = 0; i < HeadParams<Scalar>::kCount; ++i) {
    const auto& m = *tensors[i];
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) t.values.push_back(static_cast<double>(m(r, c)));
    }
    layout.push_back({{"name", HeadParams<Scalar>::kNames[i]},
                      {"shape", {m.rows(), m.cols()}},
                      {"offset", offset}});
    offset += static_cast<std::size_t>(m.size());
  }
  save_tensor(t, path);

  const HeadConfig& cfg = head.config();
  nlohmann::json meta;
  meta["config"] = {{"in_dim", cfg.in_dim},       {"hidden_dim", cfg.hidden_dim},
                    {"out_dim", cfg.out_dim},     {"n_prototypes", cfg.n_prototypes},
                    {"temperature", cfg.temperature}, {"seed", cfg.seed}};
  meta["tensors"] = layout;
  std::ofstream out(path.string() + ".json", std::ios::trunc);
  if (!out) throw std::runtime_error(path.string() + ".json: cannot write checkpoint sidecar");
  out << meta.dump(2) << '\n';
}

template <typename Scalar>
ProjectionHead<Scalar> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path.string() + ".json");
  if (!in) throw std::runtime_error(path.string() + ".json: cannot open checkpoint sidecar");
  nlohmann::json meta;
  HeadConfig cfg;
  try {
    meta = nlohmann::json::parse(in);
    const auto& c = meta.at("config");
    cfg.in_dim = c.at("in_dim").get<std::size_t>();
    cfg.hidden_dim = c.at("hidden_dim").get<std::size_t>();
    cfg.out_dim = c.at("out_dim").get<std::size_t>();
    cfg.n_prototypes = c.at("n_prototypes").get<std::size_t>();
    cfg.temperature = c.at("temperature").get<double>();
    cfg.seed = c.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(path.string() + ".json: bad checkpoint sidecar: " + e.what());
  }
  cfg.validate();

  const Tensor t = load_tensor(path);
  if (t.shape.size() != 2 || t.shape[0] != 1) throw FormatError(path.string() + ": expected [1, n] tensor");

  HeadParams<Scalar> p;
  const auto& layout = meta.at("tensors");
  if (layout.size() != HeadParams<Scalar>::kCount) {
    throw std::runtime_error(path.string() + ": checkpoint lists wrong number of tensors");
  }
  auto tensors = p.tensors();
  std::size_t offset = 0;
  for (std::size_t i = 0; i < HeadParams<Scalar>::kCount; ++i) {
    const auto& entry = layout[i];
    if (entry.at("name").get<std::string>() != HeadParams<Scalar>::kNames[i]) {
      throw std::runtime_error(path.string() + ": unexpected tensor order in checkpoint");
    }
    const auto shape = entry.at("shape").get<std::vector<Eigen::Index>>();
    if (shape.size() != 2 || entry.at("offset").get<std::size_t>() != offset) {
      throw std::runtime_error(path.string() + ": bad tensor layout in checkpoint");
    }
    auto& m = *tensors[i];
    m.resize(shape[0], shape[1]);
    if (offset + static_cast<std::size_t>(m.size()) > t.values.size()) {
      throw FormatError(path.string() + ": checkpoint payload too short");
    }
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = static_cast<Scalar>(t.values[offset++]);
    }
  }
  if (offset != t.values.size()) throw FormatError(path.string() + ": checkpoint payload too long");
  return ProjectionHead<Scalar>(cfg, std::move(p));  // validates shapes against config
}

template struct HeadParams<float>;
template struct HeadParams<double>;
template class ProjectionHead<float>;
template class ProjectionHead<double>;
template float gelu<float>(float);
template double gelu<double>(double);
template float gelu_grad<float>(float);
template double gelu_grad<double>(double);
template HeadParams<float>::Mat tangent_prototype_grad<float>(const HeadParams<float>::Mat&,
                                                              const HeadParams<float>::Mat&);
template HeadParams<double>::Mat tangent_prototype_grad<double>(const HeadParams<double>::Mat&,
                                                                const HeadParams<double>::Mat&);
template void save_checkpoint<float>(const ProjectionHead<float>&, const std::filesystem::path&);
template void save_checkpoint<double>(const ProjectionHead<double>&, const std::filesystem::path&);
template ProjectionHead<float> load_checkpoint<float>(const std::filesystem::path&);
template ProjectionHead<double> load_checkpoint<double>(const std::filesystem::path&);

}  // namespace timet
