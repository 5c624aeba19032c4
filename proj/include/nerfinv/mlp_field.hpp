#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "nerfinv/field.hpp"
#include "nerfinv/rng.hpp"

namespace nerfinv {

// Hyperparameters of the radiance MLP. Immutable once a FieldParams exists.
struct MlpArchitecture {
  int pos_frequencies = 6;  // L_x
  int dir_frequencies = 2;  // L_d
  int hidden_width = 64;
  int hidden_layers = 4;
  int color_width = 32;

  int pos_input_size() const { return 3 + 6 * pos_frequencies; }
  int dir_input_size() const { return 3 + 6 * dir_frequencies; }

  friend bool operator==(const MlpArchitecture&, const MlpArchitecture&) = default;
};

struct LayerShape {
  int inputs = 0;
  int outputs = 0;
  std::size_t weight_offset = 0;  // row-major outputs x inputs
  std::size_t bias_offset = 0;
};

// Aligned storage: Eigen picks its vectorized reduction order from operand
// alignment, so a fixed base alignment keeps results bit-identical between
// runs.
using ParamVector = std::vector<double, Eigen::aligned_allocator<double>>;

// Weights and biases of the MLP stored in one flat vector, layer by layer:
// trunk layers, density head, color hidden layer (trunk features then encoded
// direction), color output layer.
class FieldParams {
 public:
  FieldParams() = default;
  explicit FieldParams(const MlpArchitecture& arch);

  // Glorot-uniform weights, zero biases except a negative density bias so an
  // untrained field starts mostly transparent.
  static FieldParams random(const MlpArchitecture& arch, std::uint64_t seed);

  const MlpArchitecture& architecture() const { return arch_; }
  const std::vector<LayerShape>& layers() const { return layers_; }
  ParamVector& values() { return values_; }
  const ParamVector& values() const { return values_; }
  std::size_t size() const { return values_.size(); }

  // Same architecture, all values zero.
  FieldParams zeros_like() const;

  std::size_t trunk_layer(int i) const { return static_cast<std::size_t>(i); }
  std::size_t density_layer() const { return static_cast<std::size_t>(arch_.hidden_layers); }
  std::size_t color_hidden_layer() const { return density_layer() + 1; }
  std::size_t color_output_layer() const { return density_layer() + 2; }

 private:
  MlpArchitecture arch_;
  std::vector<LayerShape> layers_;
  ParamVector values_;
};

// Binary format: magic "NRF1"; u32 layer count; per layer u32 inputs, u32
// outputs; u32 L_x; u32 L_d; then per layer the weights (row-major) followed
// by the biases, all little-endian f32.
void save_field_params(const FieldParams& params, const std::string& path);
FieldParams load_field_params(const std::string& path);

// Position and direction encodings fed to the network: the raw vector
// followed by positional_encoding(v, L).
class MlpField final : public RadianceField {
 public:
  explicit MlpField(FieldParams params);

  const FieldParams& params() const { return params_; }
  // Exclusive access: no queries may run concurrently with mutation.
  FieldParams& mutable_params() { return params_; }

  void evaluate(std::span<const Vec3> points, const Vec3& d, std::span<FieldOutput> out) const override;
  Vec3 backpropagate_inputs(std::span<const Vec3> points, const Vec3& d, std::span<const double> grad_density,
                            std::span<const Rgb> grad_color, std::span<Vec3> grad_points) const override;

  // Adds ∂L/∂params for one ray's samples into `grad` (same architecture).
  void accumulate_param_grads(std::span<const Vec3> points, const Vec3& d, std::span<const double> grad_density,
                              std::span<const Rgb> grad_color, FieldParams& grad) const;

 protected:
  FieldOutput do_query(const Vec3& x, const Vec3& d) const override;
  FieldJacobians do_query_with_grads(const Vec3& x, const Vec3& d) const override;

 private:
  struct Activations;

  Activations forward(std::span<const Vec3> points, const Vec3& d) const;
  // Reverse pass. Any of the outputs may be null.
  void backward(const Activations& act, const Eigen::RowVectorXd& grad_density, const Eigen::Matrix3Xd& grad_color,
                FieldParams* param_grad, Eigen::Matrix3Xd* grad_points, Vec3* grad_dir) const;

  FieldParams params_;
};

}  // namespace nerfinv
