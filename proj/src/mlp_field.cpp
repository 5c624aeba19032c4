#include "nerfinv/mlp_field.hpp"

#include <Eigen/Dense>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

#include "nerfinv/errors.hpp"

namespace nerfinv {
namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstWeights = Eigen::Map<const RowMajor>;
using Weights = Eigen::Map<RowMajor>;
using ConstBias = Eigen::Map<const Eigen::VectorXd>;
using Bias = Eigen::Map<Eigen::VectorXd>;

constexpr double kInitialDensityBias = -2.0;

ConstWeights weights(const FieldParams& p, std::size_t layer) {
  const LayerShape& s = p.layers()[layer];
  return ConstWeights(p.values().data() + s.weight_offset, s.outputs, s.inputs);
}
Weights weights(FieldParams& p, std::size_t layer) {
  const LayerShape& s = p.layers()[layer];
  return Weights(p.values().data() + s.weight_offset, s.outputs, s.inputs);
}
ConstBias bias(const FieldParams& p, std::size_t layer) {
  const LayerShape& s = p.layers()[layer];
  return ConstBias(p.values().data() + s.bias_offset, s.outputs);
}
Bias bias(FieldParams& p, std::size_t layer) {
  const LayerShape& s = p.layers()[layer];
  return Bias(p.values().data() + s.bias_offset, s.outputs);
}

// Writes [v; sin/cos(2ʲπv)] into `out`, matching positional_encoding order.
template <typename Column>
void encode(const Vec3& v, int frequencies, Column out) {
  out.template head<3>() = v;
  int row = 3;
  for (int j = 0; j < frequencies; ++j) {
    const double scale = std::ldexp(std::numbers::pi, j);
    for (int k = 0; k < 3; ++k) {
      out(row++) = std::sin(scale * v[k]);
      out(row++) = std::cos(scale * v[k]);
    }
  }
}

// Chain rule through `encode`: grad_enc holds ∂L/∂(encoding) and `enc` the
// forward values.
template <typename GradColumn, typename EncColumn>
Vec3 encode_backward(const GradColumn& grad_enc, const EncColumn& enc, int frequencies) {
  Vec3 g = grad_enc.template head<3>();
  int row = 3;
  for (int j = 0; j < frequencies; ++j) {
    const double scale = std::ldexp(std::numbers::pi, j);
    for (int k = 0; k < 3; ++k) {
      const double s = enc(row);
      const double c = enc(row + 1);
      g[k] += scale * (grad_enc(row) * c - grad_enc(row + 1) * s);
      row += 2;
    }
  }
  return g;
}

Eigen::ArrayXXd sigmoid(const Eigen::ArrayXXd& z) { return 1.0 / (1.0 + (-z).exp()); }

Eigen::ArrayXXd softplus(const Eigen::ArrayXXd& z) { return z.max(0.0) + (-z.abs()).exp().log1p(); }

void write_u32(std::ostream& os, std::uint32_t v) {
  std::array<unsigned char, 4> b{};
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xffu);
  os.write(reinterpret_cast<const char*>(b.data()), 4);
}

std::uint32_t read_u32(std::istream& is, const std::string& path) {
  std::array<unsigned char, 4> b{};
  if (!is.read(reinterpret_cast<char*>(b.data()), 4)) throw IoError("truncated field file", path);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

FieldParams::FieldParams(const MlpArchitecture& arch) : arch_(arch) {
  if (arch.pos_frequencies < 0 || arch.dir_frequencies < 0 || arch.hidden_width < 1 || arch.hidden_layers < 1 ||
      arch.color_width < 1) {
    throw InvalidArgument("MlpArchitecture: invalid layer sizes or frequency counts");
  }
  std::size_t offset = 0;
  auto add = [&](int in, int out) {
    LayerShape s{in, out, offset, offset + static_cast<std::size_t>(in) * out};
    offset = s.bias_offset + out;
    layers_.push_back(s);
  };
  add(arch.pos_input_size(), arch.hidden_width);
  for (int i = 1; i < arch.hidden_layers; ++i) add(arch.hidden_width, arch.hidden_width);
  add(arch.hidden_width, 1);
  add(arch.hidden_width + arch.dir_input_size(), arch.color_width);
  add(arch.color_width, 3);
  values_.assign(offset, 0.0);
}

FieldParams FieldParams::random(const MlpArchitecture& arch, std::uint64_t seed) {
  FieldParams p(arch);
  Rng rng(seed);
  for (const LayerShape& s : p.layers_) {
    const double limit = std::sqrt(6.0 / (s.inputs + s.outputs));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (std::size_t i = 0; i < static_cast<std::size_t>(s.inputs) * s.outputs; ++i) {
      p.values_[s.weight_offset + i] = dist(rng);
    }
  }
  p.values_[p.layers_[p.density_layer()].bias_offset] = kInitialDensityBias;
  return p;
}

FieldParams FieldParams::zeros_like() const {
  FieldParams p = *this;
  std::fill(p.values_.begin(), p.values_.end(), 0.0);
  return p;
}

void save_field_params(const FieldParams& params, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open field file for writing", path);
  os.write("NRF1", 4);
  write_u32(os, static_cast<std::uint32_t>(params.layers().size()));
  for (const LayerShape& s : params.layers()) {
    write_u32(os, static_cast<std::uint32_t>(s.inputs));
    write_u32(os, static_cast<std::uint32_t>(s.outputs));
  }
  write_u32(os, static_cast<std::uint32_t>(params.architecture().pos_frequencies));
  write_u32(os, static_cast<std::uint32_t>(params.architecture().dir_frequencies));
  // Layers are stored contiguously as weights then biases, so the flat value
  // order already matches the file order.
  for (double v : params.values()) write_u32(os, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  if (!os) throw IoError("failed writing field file", path);
}

FieldParams load_field_params(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open field file", path);
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "NRF1", 4) != 0) throw IoError("bad magic in field file", path);
  const std::uint32_t count = read_u32(is, path);
  if (count < 4 || count > 1024) throw IoError("implausible layer count in field file", path);
  std::vector<std::pair<int, int>> shapes;
  for (std::uint32_t i = 0; i < count; ++i) {
    const int in = static_cast<int>(read_u32(is, path));
    const int out = static_cast<int>(read_u32(is, path));
    shapes.emplace_back(in, out);
  }
  MlpArchitecture arch;
  arch.pos_frequencies = static_cast<int>(read_u32(is, path));
  arch.dir_frequencies = static_cast<int>(read_u32(is, path));
  arch.hidden_layers = static_cast<int>(count) - 3;
  arch.hidden_width = shapes[0].second;
  arch.color_width = shapes[count - 2].second;

  FieldParams params;
  try {
    params = FieldParams(arch);
  } catch (const InvalidArgument& e) {
    throw IoError(std::string("invalid architecture in field file (") + e.what() + ")", path);
  }
  for (std::uint32_t i = 0; i < count; ++i) {
    if (params.layers()[i].inputs != shapes[i].first || params.layers()[i].outputs != shapes[i].second) {
      throw IoError("layer sizes in field file do not form a supported architecture", path);
    }
  }
  for (double& v : params.values()) {
    v = static_cast<double>(std::bit_cast<float>(read_u32(is, path)));
    if (!std::isfinite(v)) throw IoError("non-finite weight in field file", path);
  }
  return params;
}

struct MlpField::Activations {
  Eigen::MatrixXd input;               // encoded positions, one column per sample
  std::vector<Eigen::MatrixXd> hidden;  // post-activation trunk outputs
  std::vector<Eigen::MatrixXd> gate;    // sigmoid(pre-activation) per trunk layer
  Eigen::RowVectorXd density_pre;
  Eigen::VectorXd dir_encoding;
  Eigen::MatrixXd color_hidden;
  Eigen::MatrixXd color_gate;
  Eigen::Matrix3Xd color;
  Eigen::RowVectorXd density;
};

MlpField::MlpField(FieldParams params) : params_(std::move(params)) {
  if (params_.size() == 0) throw InvalidArgument("MlpField: empty parameters");
}

MlpField::Activations MlpField::forward(std::span<const Vec3> points, const Vec3& d) const {
  const MlpArchitecture& arch = params_.architecture();
  const auto n = static_cast<Eigen::Index>(points.size());
  Activations act;
  act.input.resize(arch.pos_input_size(), n);
  for (Eigen::Index i = 0; i < n; ++i) encode(points[i], arch.pos_frequencies, act.input.col(i));

  const Eigen::MatrixXd* prev = &act.input;
  act.hidden.resize(arch.hidden_layers);
  act.gate.resize(arch.hidden_layers);
  for (int l = 0; l < arch.hidden_layers; ++l) {
    Eigen::MatrixXd z = weights(params_, params_.trunk_layer(l)) * (*prev);
    z.colwise() += bias(params_, params_.trunk_layer(l));
    act.gate[l] = sigmoid(z.array()).matrix();
    act.hidden[l] = (z.array() * act.gate[l].array()).matrix();  // SiLU
    prev = &act.hidden[l];
  }
  const Eigen::MatrixXd& features = act.hidden.back();

  act.density_pre = weights(params_, params_.density_layer()) * features;
  act.density_pre.array() += bias(params_, params_.density_layer())(0);
  act.density = softplus(act.density_pre.array()).matrix();

  act.dir_encoding.resize(arch.dir_input_size());
  encode(d, arch.dir_frequencies, act.dir_encoding.col(0));
  const auto wc = weights(params_, params_.color_hidden_layer());
  const Eigen::VectorXd dir_term =
      wc.rightCols(arch.dir_input_size()) * act.dir_encoding + bias(params_, params_.color_hidden_layer());
  Eigen::MatrixXd zc = wc.leftCols(arch.hidden_width) * features;
  zc.colwise() += dir_term;
  act.color_gate = sigmoid(zc.array()).matrix();
  act.color_hidden = (zc.array() * act.color_gate.array()).matrix();

  Eigen::Matrix3Xd zo = weights(params_, params_.color_output_layer()) * act.color_hidden;
  zo.colwise() += bias(params_, params_.color_output_layer());
  act.color = sigmoid(zo.array()).matrix();
  return act;
}

void MlpField::backward(const Activations& act, const Eigen::RowVectorXd& grad_density,
                        const Eigen::Matrix3Xd& grad_color, FieldParams* param_grad, Eigen::Matrix3Xd* grad_points,
                        Vec3* grad_dir) const {
  const MlpArchitecture& arch = params_.architecture();
  const std::size_t out_layer = params_.color_output_layer();
  const std::size_t ch_layer = params_.color_hidden_layer();
  const std::size_t density_layer = params_.density_layer();

  // Color output: c = sigmoid(z).
  const Eigen::Matrix3Xd d_zo = (grad_color.array() * act.color.array() * (1.0 - act.color.array())).matrix();
  if (param_grad) {
    weights(*param_grad, out_layer).noalias() += d_zo * act.color_hidden.transpose();
    bias(*param_grad, out_layer) += d_zo.rowwise().sum();
  }
  const Eigen::MatrixXd d_hc = weights(params_, out_layer).transpose() * d_zo;

  // Color hidden layer, SiLU'(z) = s (1 + z (1 − s)) with z = h / s.
  const Eigen::ArrayXXd& gate_c = act.color_gate.array();
  const Eigen::ArrayXXd silu_c = gate_c + act.color_hidden.array() * (1.0 - gate_c);
  const Eigen::MatrixXd d_zc = (d_hc.array() * silu_c).matrix();
  const Eigen::VectorXd d_zc_sum = d_zc.rowwise().sum();
  const auto wc = weights(params_, ch_layer);
  const Eigen::MatrixXd& features = act.hidden.back();
  if (param_grad) {
    auto gw = weights(*param_grad, ch_layer);
    gw.leftCols(arch.hidden_width).noalias() += d_zc * features.transpose();
    gw.rightCols(arch.dir_input_size()).noalias() += d_zc_sum * act.dir_encoding.transpose();
    bias(*param_grad, ch_layer) += d_zc_sum;
  }
  if (grad_dir) {
    const Eigen::VectorXd d_enc = wc.rightCols(arch.dir_input_size()).transpose() * d_zc_sum;
    // Direction is encoded once per ray; recompute the encoding's sin/cos
    // values from the stored column.
    *grad_dir = encode_backward(d_enc, act.dir_encoding, arch.dir_frequencies);
  }
  Eigen::MatrixXd d_h = wc.leftCols(arch.hidden_width).transpose() * d_zc;

  // Density head: σ = softplus(z), σ' = sigmoid(z).
  const Eigen::RowVectorXd d_zs = (grad_density.array() * sigmoid(act.density_pre.array()).row(0)).matrix();
  if (param_grad) {
    weights(*param_grad, density_layer).noalias() += d_zs * features.transpose();
    bias(*param_grad, density_layer)(0) += d_zs.sum();
  }
  d_h.noalias() += weights(params_, density_layer).transpose() * d_zs;

  for (int l = arch.hidden_layers - 1; l >= 0; --l) {
    const Eigen::ArrayXXd& gate = act.gate[l].array();
    const Eigen::MatrixXd d_z = (d_h.array() * (gate + act.hidden[l].array() * (1.0 - gate))).matrix();
    const Eigen::MatrixXd& below = l == 0 ? act.input : act.hidden[l - 1];
    if (param_grad) {
      weights(*param_grad, params_.trunk_layer(l)).noalias() += d_z * below.transpose();
      bias(*param_grad, params_.trunk_layer(l)) += d_z.rowwise().sum();
    }
    if (l == 0 && !grad_points) break;
    d_h = weights(params_, params_.trunk_layer(l)).transpose() * d_z;
  }

  if (grad_points) {
    grad_points->resize(3, act.input.cols());
    for (Eigen::Index i = 0; i < act.input.cols(); ++i) {
      grad_points->col(i) = encode_backward(d_h.col(i), act.input.col(i), arch.pos_frequencies);
    }
  }
}

void MlpField::evaluate(std::span<const Vec3> points, const Vec3& d, std::span<FieldOutput> out) const {
  if (points.empty()) return;
  const Activations act = forward(points, d);
  for (std::size_t i = 0; i < points.size(); ++i) {
    out[i].density = act.density(static_cast<Eigen::Index>(i));
    out[i].color = act.color.col(static_cast<Eigen::Index>(i));
  }
}

Vec3 MlpField::backpropagate_inputs(std::span<const Vec3> points, const Vec3& d, std::span<const double> grad_density,
                                    std::span<const Rgb> grad_color, std::span<Vec3> grad_points) const {
  if (points.empty()) return Vec3::Zero();
  const auto n = static_cast<Eigen::Index>(points.size());
  const Activations act = forward(points, d);
  Eigen::RowVectorXd gd(n);
  Eigen::Matrix3Xd gc(3, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    gd(i) = grad_density[i];
    gc.col(i) = grad_color[i];
  }
  Eigen::Matrix3Xd gp;
  Vec3 g_dir = Vec3::Zero();
  backward(act, gd, gc, nullptr, &gp, &g_dir);
  for (Eigen::Index i = 0; i < n; ++i) grad_points[i] = gp.col(i);
  return g_dir;
}

void MlpField::accumulate_param_grads(std::span<const Vec3> points, const Vec3& d, std::span<const double> grad_density,
                                      std::span<const Rgb> grad_color, FieldParams& grad) const {
  if (points.empty()) return;
  if (!(grad.architecture() == params_.architecture())) {
    throw InvalidArgument("accumulate_param_grads: gradient buffer has a different architecture");
  }
  const auto n = static_cast<Eigen::Index>(points.size());
  const Activations act = forward(points, d);
  Eigen::RowVectorXd gd(n);
  Eigen::Matrix3Xd gc(3, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    gd(i) = grad_density[i];
    gc.col(i) = grad_color[i];
  }
  backward(act, gd, gc, &grad, nullptr, nullptr);
}

FieldOutput MlpField::do_query(const Vec3& x, const Vec3& d) const {
  FieldOutput out;
  evaluate(std::span<const Vec3>(&x, 1), d, std::span<FieldOutput>(&out, 1));
  return out;
}

FieldJacobians MlpField::do_query_with_grads(const Vec3& x, const Vec3& d) const {
  const Activations act = forward(std::span<const Vec3>(&x, 1), d);
  FieldJacobians j;
  j.output.density = act.density(0);
  j.output.color = act.color.col(0);

  Eigen::RowVectorXd gd(1);
  Eigen::Matrix3Xd gc(3, 1);
  Eigen::Matrix3Xd gp;
  Vec3 g_dir;

  gd(0) = 1.0;
  gc.setZero();
  backward(act, gd, gc, nullptr, &gp, nullptr);
  j.d_density_dx = gp.col(0);

  gd(0) = 0.0;
  for (int ch = 0; ch < 3; ++ch) {
    gc.setZero();
    gc(ch, 0) = 1.0;
    backward(act, gd, gc, nullptr, &gp, &g_dir);
    j.d_color_dx.row(ch) = gp.col(0).transpose();
    j.d_color_dd.row(ch) = g_dir.transpose();
  }
  return j;
}

}  // namespace nerfinv
