#pragma once

// The purposive sampling network: per-pedestrian history embedding, one
// single-head graph-attention layer over the complete pedestrian graph (with
// self loops), and a three-layer MLP head whose sigmoid outputs are N latent
// points in the unit cube for each pedestrian. Reverse mode is hand-written.

#include <Eigen/Dense>

#include <cstring>
#include <fstream>
#include <functional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "npsn/common.hpp"
#include "npsn/scene.hpp"

namespace npsn::net {

using Matrix = Eigen::MatrixXd;

inline constexpr std::size_t kHistoryFeatures = 2 * (kObsLen - 1);

struct NpsnConfig {
  std::size_t latent_dim = 2;  // s
  std::size_t samples = 20;    // N
  std::size_t hidden = 32;     // d_h
  double leaky_slope = 0.2;    // attention score nonlinearity
};

/// Every learnable tensor. Vectors are stored as single-column matrices and
/// PReLU slopes as 1x1 matrices so the whole set can be visited uniformly.
struct NpsnParams {
  Matrix embed_w, embed_b, embed_act;
  Matrix gat_w, gat_att_src, gat_att_dst, gat_b, gat_act;
  Matrix head1_w, head1_b, head1_act;
  Matrix head2_w, head2_b, head2_act;
  Matrix out_w, out_b;

  template <class Self, class Fn>
  static void visit(Self& self, Fn&& fn) {
    fn("embed.weight", self.embed_w);
    fn("embed.bias", self.embed_b);
    fn("embed.prelu", self.embed_act);
    fn("gat.weight", self.gat_w);
    fn("gat.att_src", self.gat_att_src);
    fn("gat.att_dst", self.gat_att_dst);
    fn("gat.bias", self.gat_b);
    fn("gat.prelu", self.gat_act);
    fn("head1.weight", self.head1_w);
    fn("head1.bias", self.head1_b);
    fn("head1.prelu", self.head1_act);
    fn("head2.weight", self.head2_w);
    fn("head2.bias", self.head2_b);
    fn("head2.prelu", self.head2_act);
    fn("out.weight", self.out_w);
    fn("out.bias", self.out_b);
  }
  template <class Fn>
  void for_each(Fn&& fn) {
    visit(*this, std::forward<Fn>(fn));
  }
  template <class Fn>
  void for_each(Fn&& fn) const {
    visit(*this, std::forward<Fn>(fn));
  }

  /// Zero tensors with the same shapes as `like`.
  static NpsnParams zeros_like(const NpsnParams& like) {
    NpsnParams z = like;
    z.for_each([](const char*, Matrix& m) { m.setZero(); });
    return z;
  }

  std::size_t count() const {
    std::size_t n = 0;
    for_each([&](const char*, const Matrix& m) { n += static_cast<std::size_t>(m.size()); });
    return n;
  }

  /// Calls fn(name, mine, theirs) pairwise; both sides must share a layout.
  template <class Fn>
  void zip(NpsnParams& other, Fn&& fn) {
    std::vector<Matrix*> theirs;
    other.for_each([&](const char*, Matrix& m) { theirs.push_back(&m); });
    std::size_t i = 0;
    for_each([&](const char* name, Matrix& m) { fn(name, m, *theirs[i++]); });
  }

  NpsnParams& operator+=(const NpsnParams& o) {
    std::vector<const Matrix*> theirs;
    o.for_each([&](const char*, const Matrix& m) { theirs.push_back(&m); });
    std::size_t i = 0;
    for_each([&](const char*, Matrix& m) { m += *theirs[i++]; });
    return *this;
  }

  NpsnParams& operator*=(double s) {
    for_each([&](const char*, Matrix& m) { m *= s; });
    return *this;
  }
};

/// L x s x N latent samples in (0,1); sample n of pedestrian l is the
/// s-vector (l, 0, n) .. (l, s-1, n).
class SampleTensor {
 public:
  SampleTensor() = default;
  SampleTensor(std::size_t pedestrians, std::size_t dim, std::size_t samples)
      : peds_(pedestrians), dim_(dim), samples_(samples), values_(pedestrians * dim * samples, 0.0) {}

  std::size_t pedestrians() const { return peds_; }
  std::size_t dim() const { return dim_; }
  std::size_t samples() const { return samples_; }

  double operator()(std::size_t l, std::size_t d, std::size_t n) const { return values_[index(l, d, n)]; }
  double& operator()(std::size_t l, std::size_t d, std::size_t n) { return values_[index(l, d, n)]; }

  const std::vector<double>& values() const { return values_; }
  friend bool operator==(const SampleTensor&, const SampleTensor&) = default;

 private:
  std::size_t index(std::size_t l, std::size_t d, std::size_t n) const { return (l * dim_ + d) * samples_ + n; }
  std::size_t peds_ = 0, dim_ = 0, samples_ = 0;
  std::vector<double> values_;
};

/// Intermediates of one forward pass; backward() refuses an empty record.
struct ForwardRecord {
  bool valid = false;
  Matrix input;                        // 14 x L
  Matrix embed_pre, embed;             // h x L
  Matrix projected;                    // W h_j, h x L
  Matrix score_pre, attention;         // L x L, row i = destination node
  Matrix aggregated_pre, aggregated;   // h x L
  Matrix head1_pre, head1, head2_pre, head2;
  Matrix out;                          // sigmoid outputs, sN x L
};

namespace detail {

inline Matrix prelu(const Matrix& x, double slope) {
  return x.unaryExpr([slope](double v) { return v > 0.0 ? v : slope * v; });
}

// Returns the input gradient; accumulates the slope gradient.
inline Matrix prelu_backward(const Matrix& pre, double slope, const Matrix& grad, double& grad_slope) {
  Matrix out(grad.rows(), grad.cols());
  for (Eigen::Index i = 0; i < grad.size(); ++i) {
    const double v = pre.data()[i];
    out.data()[i] = v > 0.0 ? grad.data()[i] : slope * grad.data()[i];
    if (v <= 0.0) grad_slope += v * grad.data()[i];
  }
  return out;
}

inline double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

}  // namespace detail

/// Relative displacements of the 8 observed frames, flattened (dx1, dy1, ...).
inline Eigen::VectorXd history_features(const scene::Trajectory& traj) {
  Eigen::VectorXd f(kHistoryFeatures);
  for (std::size_t k = 0; k + 1 < kObsLen; ++k) {
    const Vec2 d = traj[k + 1] - traj[k];
    f(static_cast<Eigen::Index>(2 * k)) = d.x;
    f(static_cast<Eigen::Index>(2 * k + 1)) = d.y;
  }
  return f;
}

class NpsnModel {
 public:
  NpsnModel() : NpsnModel(NpsnConfig{}, 0) {}

  /// Glorot-uniform weights, zero biases, PReLU slopes at 0.25.
  NpsnModel(const NpsnConfig& config, std::uint64_t seed) : config_(config) {
    require(config.latent_dim >= 1 && config.samples >= 1 && config.hidden >= 1, "invalid NPSN configuration");
    const auto h = static_cast<Eigen::Index>(config.hidden);
    const auto out = static_cast<Eigen::Index>(config.latent_dim * config.samples);
    const auto in = static_cast<Eigen::Index>(kHistoryFeatures);
    std::mt19937_64 engine(seed);
    auto glorot = [&](Eigen::Index rows, Eigen::Index cols, double fan_in, double fan_out) {
      const double limit = std::sqrt(6.0 / (fan_in + fan_out));
      Matrix m(rows, cols);
      for (Eigen::Index j = 0; j < cols; ++j)
        for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = limit * (2.0 * uniform01(engine) - 1.0);
      return m;
    };
    auto slope = [] { return Matrix::Constant(1, 1, 0.25); };
    auto& p = params_;
    p.embed_w = glorot(h, in, double(in), double(h));
    p.embed_b = Matrix::Zero(h, 1);
    p.embed_act = slope();
    p.gat_w = glorot(h, h, double(h), double(h));
    p.gat_att_src = glorot(h, 1, double(2 * h), 1.0);
    p.gat_att_dst = glorot(h, 1, double(2 * h), 1.0);
    p.gat_b = Matrix::Zero(h, 1);
    p.gat_act = slope();
    p.head1_w = glorot(h, h, double(h), double(h));
    p.head1_b = Matrix::Zero(h, 1);
    p.head1_act = slope();
    p.head2_w = glorot(h, h, double(h), double(h));
    p.head2_b = Matrix::Zero(h, 1);
    p.head2_act = slope();
    p.out_w = glorot(out, h, double(h), double(out));
    p.out_b = Matrix::Zero(out, 1);
  }

  const NpsnConfig& config() const { return config_; }
  const NpsnParams& params() const { return params_; }
  NpsnParams& params() { return params_; }
  std::size_t parameter_count() const { return params_.count(); }

  SampleTensor forward(const std::vector<scene::Trajectory>& trajectories) const {
    ForwardRecord record;
    return forward(trajectories, record);
  }
  SampleTensor forward(const scene::Scene& sc) const { return forward(sc.trajectories); }
  SampleTensor forward(const scene::Scene& sc, ForwardRecord& record) const {
    return forward(sc.trajectories, record);
  }

  /// Only the first 8 frames of each trajectory are read.
  SampleTensor forward(const std::vector<scene::Trajectory>& trajectories, ForwardRecord& r) const {
    require(!trajectories.empty(), "NPSN forward needs at least one pedestrian");
    const auto L = static_cast<Eigen::Index>(trajectories.size());
    const auto& p = params_;
    r.input.resize(static_cast<Eigen::Index>(kHistoryFeatures), L);
    for (Eigen::Index l = 0; l < L; ++l) r.input.col(l) = history_features(trajectories[static_cast<std::size_t>(l)]);

    r.embed_pre = (p.embed_w * r.input).colwise() + p.embed_b.col(0);
    r.embed = detail::prelu(r.embed_pre, p.embed_act(0, 0));

    r.projected = p.gat_w * r.embed;
    const Eigen::RowVectorXd src = p.gat_att_src.col(0).transpose() * r.projected;
    const Eigen::RowVectorXd dst = p.gat_att_dst.col(0).transpose() * r.projected;
    r.score_pre.resize(L, L);
    for (Eigen::Index i = 0; i < L; ++i)
      for (Eigen::Index j = 0; j < L; ++j) r.score_pre(i, j) = src(i) + dst(j);
    r.attention = detail::prelu(r.score_pre, config_.leaky_slope);
    for (Eigen::Index i = 0; i < L; ++i) {
      const double mx = r.attention.row(i).maxCoeff();
      r.attention.row(i) = (r.attention.row(i).array() - mx).exp().matrix();
      r.attention.row(i) /= r.attention.row(i).sum();
    }
    r.aggregated_pre = (r.projected * r.attention.transpose()).colwise() + p.gat_b.col(0);
    r.aggregated = detail::prelu(r.aggregated_pre, p.gat_act(0, 0));

    r.head1_pre = (p.head1_w * r.aggregated).colwise() + p.head1_b.col(0);
    r.head1 = detail::prelu(r.head1_pre, p.head1_act(0, 0));
    r.head2_pre = (p.head2_w * r.head1).colwise() + p.head2_b.col(0);
    r.head2 = detail::prelu(r.head2_pre, p.head2_act(0, 0));
    r.out = ((p.out_w * r.head2).colwise() + p.out_b.col(0)).unaryExpr(&detail::sigmoid);
    r.valid = true;

    SampleTensor s(trajectories.size(), config_.latent_dim, config_.samples);
    for (std::size_t l = 0; l < trajectories.size(); ++l)
      for (std::size_t d = 0; d < config_.latent_dim; ++d)
        for (std::size_t n = 0; n < config_.samples; ++n)
          s(l, d, n) = r.out(static_cast<Eigen::Index>(d * config_.samples + n), static_cast<Eigen::Index>(l));
    return s;
  }

  /// Attention weights of the last recorded pass (row i sums to 1).
  static const Matrix& attention(const ForwardRecord& r) { return r.attention; }

  NpsnParams backward(const ForwardRecord& r, const SampleTensor& grad) const {
    if (!r.valid) throw Error("NPSN backward called without a recorded forward pass");
    const auto L = r.out.cols();
    require(grad.pedestrians() == static_cast<std::size_t>(L) && grad.dim() == config_.latent_dim &&
                grad.samples() == config_.samples,
            "gradient shape does not match the recorded forward pass");
    const auto& p = params_;
    NpsnParams g = NpsnParams::zeros_like(p);

    Matrix d_out(r.out.rows(), L);
    for (Eigen::Index l = 0; l < L; ++l)
      for (std::size_t d = 0; d < config_.latent_dim; ++d)
        for (std::size_t n = 0; n < config_.samples; ++n) {
          const auto k = static_cast<Eigen::Index>(d * config_.samples + n);
          const double s = r.out(k, l);
          d_out(k, l) = grad(static_cast<std::size_t>(l), d, n) * s * (1.0 - s);
        }

    g.out_w = d_out * r.head2.transpose();
    g.out_b = d_out.rowwise().sum();
    Matrix d_h2 = p.out_w.transpose() * d_out;

    Matrix d_h2_pre = detail::prelu_backward(r.head2_pre, p.head2_act(0, 0), d_h2, g.head2_act(0, 0));
    g.head2_w = d_h2_pre * r.head1.transpose();
    g.head2_b = d_h2_pre.rowwise().sum();
    Matrix d_h1 = p.head2_w.transpose() * d_h2_pre;

    Matrix d_h1_pre = detail::prelu_backward(r.head1_pre, p.head1_act(0, 0), d_h1, g.head1_act(0, 0));
    g.head1_w = d_h1_pre * r.aggregated.transpose();
    g.head1_b = d_h1_pre.rowwise().sum();
    Matrix d_agg = p.head1_w.transpose() * d_h1_pre;

    Matrix d_agg_pre = detail::prelu_backward(r.aggregated_pre, p.gat_act(0, 0), d_agg, g.gat_act(0, 0));
    g.gat_b = d_agg_pre.rowwise().sum();
    // aggregated_pre = projected * attention^T
    Matrix d_proj = d_agg_pre * r.attention;
    const Matrix d_att = d_agg_pre.transpose() * r.projected;  // L x L
    Matrix d_score(L, L);
    for (Eigen::Index i = 0; i < L; ++i) {
      const double dot = r.attention.row(i).dot(d_att.row(i));
      for (Eigen::Index j = 0; j < L; ++j) {
        const double d_e = r.attention(i, j) * (d_att(i, j) - dot);
        d_score(i, j) = r.score_pre(i, j) > 0.0 ? d_e : config_.leaky_slope * d_e;
      }
    }
    const Eigen::VectorXd d_src = d_score.rowwise().sum();
    const Eigen::VectorXd d_dst = d_score.colwise().sum().transpose();
    g.gat_att_src = r.projected * d_src;
    g.gat_att_dst = r.projected * d_dst;
    d_proj += p.gat_att_src * d_src.transpose();
    d_proj += p.gat_att_dst * d_dst.transpose();

    g.gat_w = d_proj * r.embed.transpose();
    Matrix d_embed = p.gat_w.transpose() * d_proj;

    Matrix d_embed_pre = detail::prelu_backward(r.embed_pre, p.embed_act(0, 0), d_embed, g.embed_act(0, 0));
    g.embed_w = d_embed_pre * r.input.transpose();
    g.embed_b = d_embed_pre.rowwise().sum();
    return g;
  }

  // Checkpoint layout (little-endian hosts):
  //   "NPSNCKPT" | u32 version | u64 s, N, d_h | f64 leaky slope | u64 tensor count
  //   per tensor: u64 name length | name bytes | u64 rows | u64 cols | rows*cols f64 (column-major)
  static constexpr std::uint32_t kCheckpointVersion = 1;

  void save(std::ostream& out) const {
    auto put_u64 = [&](std::uint64_t v) { out.write(reinterpret_cast<const char*>(&v), sizeof v); };
    out.write("NPSNCKPT", 8);
    const std::uint32_t version = kCheckpointVersion;
    out.write(reinterpret_cast<const char*>(&version), sizeof version);
    put_u64(config_.latent_dim);
    put_u64(config_.samples);
    put_u64(config_.hidden);
    out.write(reinterpret_cast<const char*>(&config_.leaky_slope), sizeof(double));
    std::uint64_t tensors = 0;
    params_.for_each([&](const char*, const Matrix&) { ++tensors; });
    put_u64(tensors);
    params_.for_each([&](const char* name, const Matrix& m) {
      const std::string n(name);
      put_u64(n.size());
      out.write(n.data(), static_cast<std::streamsize>(n.size()));
      put_u64(static_cast<std::uint64_t>(m.rows()));
      put_u64(static_cast<std::uint64_t>(m.cols()));
      out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
    });
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path);
    save(out);
    if (!out) throw Error("failed writing " + path);
  }

  static NpsnModel load(std::istream& in, const std::string& name = "<stream>") {
    auto fail = [&](const std::string& why) { return ParseError(name + ": " + why); };
    auto get_u64 = [&] {
      std::uint64_t v = 0;
      if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) throw fail("truncated checkpoint");
      return v;
    };
    char magic[8];
    if (!in.read(magic, 8) || std::memcmp(magic, "NPSNCKPT", 8) != 0) throw fail("not an NPSN checkpoint");
    std::uint32_t version = 0;
    in.read(reinterpret_cast<char*>(&version), sizeof version);
    if (version != kCheckpointVersion) throw fail("unsupported checkpoint version " + std::to_string(version));
    NpsnConfig cfg;
    cfg.latent_dim = get_u64();
    cfg.samples = get_u64();
    cfg.hidden = get_u64();
    if (!in.read(reinterpret_cast<char*>(&cfg.leaky_slope), sizeof(double))) throw fail("truncated checkpoint");
    if (cfg.latent_dim < 1 || cfg.latent_dim > 64 || cfg.samples < 1 || cfg.samples > (1u << 16) ||
        cfg.hidden < 1 || cfg.hidden > 4096 || !std::isfinite(cfg.leaky_slope))
      throw fail("implausible model dimensions");
    NpsnModel model(cfg, 0);
    std::uint64_t tensors = get_u64();
    std::uint64_t expected = 0;
    model.params_.for_each([&](const char*, const Matrix&) { ++expected; });
    if (tensors != expected) throw fail("unexpected tensor count");
    model.params_.for_each([&](const char* want, Matrix& m) {
      const auto len = get_u64();
      if (len > 256) throw fail("corrupt tensor name");
      std::string got(len, '\0');
      in.read(got.data(), static_cast<std::streamsize>(len));
      if (got != want) throw fail("expected tensor '" + std::string(want) + "', found '" + got + "'");
      const auto rows = get_u64(), cols = get_u64();
      if (rows != static_cast<std::uint64_t>(m.rows()) || cols != static_cast<std::uint64_t>(m.cols()))
        throw fail("shape mismatch for " + got);
      if (!in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double))))
        throw fail("truncated tensor " + got);
    });
    return model;
  }

  static NpsnModel load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path);
    return load(in, path);
  }

 private:
  NpsnConfig config_;
  NpsnParams params_;
};

}  // namespace npsn::net
