#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "nerfinv/analytic_scene.hpp"
#include "nerfinv/errors.hpp"
#include "nerfinv/mlp_field.hpp"
#include "test_support.hpp"

using namespace nerfinv;
using namespace nerfinv::testing;

namespace {

struct NumericJacobians {
  Vec3 d_density_dx;
  Mat3 d_color_dx;
  Mat3 d_color_dd;
};

// Central differences with step h. Direction perturbations are renormalized
// to stay on the unit sphere, so only the tangential part of ∂c/∂d is compared.
NumericJacobians numeric_jacobians(const RadianceField& f, const Vec3& x, const Vec3& d, double h = 1e-4) {
  NumericJacobians out;
  for (int k = 0; k < 3; ++k) {
    Vec3 xp = x, xm = x;
    xp(k) += h;
    xm(k) -= h;
    const FieldOutput p = f.query(xp, d), m = f.query(xm, d);
    out.d_density_dx(k) = (p.density - m.density) / (2 * h);
    out.d_color_dx.col(k) = (p.color - m.color) / (2 * h);
  }
  // Tangent basis at d.
  Vec3 t1 = d.unitOrthogonal();
  Vec3 t2 = d.cross(t1);
  Mat3 dd = Mat3::Zero();
  for (const Vec3& t : {t1, t2}) {
    const Vec3 dp = (d + h * t).normalized(), dm = (d - h * t).normalized();
    const Rgb slope = (f.query(x, dp).color - f.query(x, dm).color) / (2 * h);
    dd += slope * t.transpose();
  }
  out.d_color_dd = dd;
  return out;
}

void expect_jacobians_match(const RadianceField& f, const Vec3& x, const Vec3& d) {
  const FieldJacobians a = f.query_with_grads(x, d);
  const NumericJacobians n = numeric_jacobians(f, x, d);
  Vec3 t1 = d.unitOrthogonal(), t2 = d.cross(t1);
  Mat3 tangent = t1 * t1.transpose() + t2 * t2.transpose();
  EXPECT_TRUE(all_grad_close(a.d_density_dx, n.d_density_dx)) << a.d_density_dx.transpose() << " vs "
                                                              << n.d_density_dx.transpose();
  EXPECT_TRUE(all_grad_close(a.d_color_dx, n.d_color_dx)) << a.d_color_dx << "\nvs\n" << n.d_color_dx;
  const Mat3 ad = a.d_color_dd * tangent;
  EXPECT_TRUE(all_grad_close(ad, n.d_color_dd)) << ad << "\nvs\n" << n.d_color_dd;
}

AnalyticScene red_sphere() { return AnalyticScene::single_sphere(Vec3::Zero(), 0.5, 20.0, Rgb(1, 0, 0)); }

}  // namespace

TEST(AnalyticScene, SpherePeakAndDecay) {
  const AnalyticScene s = red_sphere();
  const FieldOutput center = s.query(Vec3::Zero(), Vec3::UnitZ());
  EXPECT_DOUBLE_EQ(center.density, 20.0);
  EXPECT_LT((center.color - Rgb(1, 0, 0)).cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_LT(s.query(Vec3(5, 5, 5), Vec3::UnitZ()).density, 1e-6);
}

TEST(AnalyticScene, RejectsNonUnitDirection) {
  const AnalyticScene s = red_sphere();
  EXPECT_THROW(s.query(Vec3::Zero(), Vec3(0, 0, 1.01)), InvalidArgument);
  EXPECT_THROW(s.query_with_grads(Vec3::Zero(), Vec3(0, 0, 0.5)), InvalidArgument);
  EXPECT_NO_THROW(s.query(Vec3::Zero(), Vec3(0, 0, 1.0 + 5e-7)));
}

TEST(AnalyticScene, RejectsBadPrimitives) {
  Primitive p;
  p.shell_width = 0.0;
  EXPECT_THROW(AnalyticScene({p}), InvalidArgument);
  p = Primitive{};
  p.albedo = Rgb(1.5, 0, 0);
  EXPECT_THROW(AnalyticScene({p}), InvalidArgument);
  p = Primitive{};
  p.peak_density = -1;
  EXPECT_THROW(AnalyticScene({p}), InvalidArgument);
}

TEST(AnalyticScene, ShellGradientIsRadial) {
  const AnalyticScene s = red_sphere();
  Rng rng(3);
  for (int i = 0; i < 20; ++i) {
    const Vec3 x = random_unit(rng) * 0.52;
    const Vec3 g = s.query_with_grads(x, Vec3::UnitZ()).d_density_dx;
    ASSERT_GT(g.norm(), 1.0);
    EXPECT_GT(g.normalized().dot((Vec3::Zero() - x).normalized()), 1.0 - 1e-12);
  }
}

TEST(AnalyticScene, JacobiansMatchFiniteDifferences) {
  const AnalyticScene s = AnalyticScene::toy();
  Rng rng(4);
  int informative = 0;
  for (int i = 0; i < 200; ++i) {
    const Vec3 x = random_vec(rng, -1.0, 1.0);
    const Vec3 d = random_unit(rng);
    expect_jacobians_match(s, x, d);
    informative += s.query_with_grads(x, d).d_density_dx.norm() > 1.0;
  }
  EXPECT_GT(informative, 20);
}

TEST(AnalyticScene, QueryAndGradsAgreeBitwise) {
  const AnalyticScene s = AnalyticScene::toy();
  Rng rng(5);
  for (int i = 0; i < 500; ++i) {
    const Vec3 x = random_vec(rng, -1.2, 1.2);
    const Vec3 d = random_unit(rng);
    const FieldOutput a = s.query(x, d);
    const FieldOutput b = s.query_with_grads(x, d).output;
    EXPECT_EQ(a.density, b.density);
    EXPECT_EQ(a.color, b.color);
    EXPECT_GE(a.density, 0.0);
    EXPECT_GE(a.color.minCoeff(), 0.0);
    EXPECT_LE(a.color.maxCoeff(), 1.0);
  }
}

TEST(ConstantField, ZeroDensityGradient) {
  const ConstantField f(3.0, Rgb(0.2, 0.4, 0.6));
  const FieldJacobians j = f.query_with_grads(Vec3(1, 2, 3), Vec3::UnitX());
  EXPECT_EQ(j.d_density_dx, Vec3::Zero());
  EXPECT_EQ(j.d_color_dx, Mat3::Zero());
  EXPECT_EQ(j.output.density, 3.0);
}

TEST(PositionalEncoding, Examples) {
  const std::vector<double> zero{0.0};
  EXPECT_EQ(positional_encoding(zero, 2), (std::vector<double>{0, 1, 0, 1}));
  const std::vector<double> half{0.5};
  const auto h = positional_encoding(half, 1);
  ASSERT_EQ(h.size(), 2u);
  EXPECT_NEAR(h[0], 1.0, 1e-15);
  EXPECT_NEAR(h[1], 0.0, 1e-15);
  const std::vector<double> pair{0.25, -0.25};
  const auto p = positional_encoding(pair, 1);
  const double r = std::sqrt(0.5);
  ASSERT_EQ(p.size(), 4u);
  EXPECT_NEAR(p[0], r, 1e-15);
  EXPECT_NEAR(p[1], r, 1e-15);
  EXPECT_NEAR(p[2], -r, 1e-15);
  EXPECT_NEAR(p[3], r, 1e-15);
  EXPECT_TRUE(positional_encoding(pair, 0).empty());
  EXPECT_THROW(positional_encoding(pair, -1), InvalidArgument);
}

TEST(PositionalEncoding, SizeAndFrequencyOrder) {
  const std::vector<double> v{0.1, 0.2, 0.3};
  const auto e = positional_encoding(v, 4);
  ASSERT_EQ(e.size(), 2u * 4u * 3u);
  for (int j = 0; j < 4; ++j)
    for (int c = 0; c < 3; ++c) {
      const double arg = std::ldexp(std::numbers::pi, j) * v[c];
      EXPECT_DOUBLE_EQ(e[6 * j + 2 * c], std::sin(arg));
      EXPECT_DOUBLE_EQ(e[6 * j + 2 * c + 1], std::cos(arg));
    }
}

class MlpFieldTest : public ::testing::Test {
 protected:
  MlpArchitecture arch_{};
  MlpField field_{FieldParams::random(arch_, 42)};
};

TEST_F(MlpFieldTest, OutputsRespectInvariantsAndAreDeterministic) {
  Rng rng(6);
  for (int i = 0; i < 100; ++i) {
    const Vec3 x = random_vec(rng, -1.5, 1.5);
    const Vec3 d = random_unit(rng);
    const FieldOutput a = field_.query(x, d), b = field_.query(x, d);
    EXPECT_EQ(a.density, b.density);
    EXPECT_EQ(a.color, b.color);
    EXPECT_GE(a.density, 0.0);
    EXPECT_GE(a.color.minCoeff(), 0.0);
    EXPECT_LE(a.color.maxCoeff(), 1.0);
    const FieldOutput g = field_.query_with_grads(x, d).output;
    EXPECT_EQ(a.density, g.density);
    EXPECT_EQ(a.color, g.color);
  }
}

TEST_F(MlpFieldTest, InputJacobiansMatchFiniteDifferences) {
  Rng rng(7);
  for (int i = 0; i < 30; ++i) expect_jacobians_match(field_, random_vec(rng, -1.0, 1.0), random_unit(rng));
}

TEST_F(MlpFieldTest, BatchedEvaluationMatchesPointQueries) {
  Rng rng(8);
  const Vec3 d = random_unit(rng);
  std::vector<Vec3> pts(37);
  for (Vec3& p : pts) p = random_vec(rng, -1, 1);
  std::vector<FieldOutput> out(pts.size());
  field_.evaluate(pts, d, out);
  std::vector<double> gd(pts.size());
  std::vector<Rgb> gc(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const FieldOutput q = field_.query(pts[i], d);
    EXPECT_NEAR(out[i].density, q.density, 1e-12);
    EXPECT_LT((out[i].color - q.color).cwiseAbs().maxCoeff(), 1e-12);
    gd[i] = std::sin(1.0 + i);
    gc[i] = random_vec(rng, -1, 1);
  }
  std::vector<Vec3> gp(pts.size());
  const Vec3 gdir = field_.backpropagate_inputs(pts, d, gd, gc, gp);
  Vec3 expected_dir = Vec3::Zero();
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const FieldJacobians j = field_.query_with_grads(pts[i], d);
    const Vec3 expected = gd[i] * j.d_density_dx + j.d_color_dx.transpose() * gc[i];
    EXPECT_LT((gp[i] - expected).cwiseAbs().maxCoeff(), 1e-10);
    expected_dir += j.d_color_dd.transpose() * gc[i];
  }
  EXPECT_LT((gdir - expected_dir).cwiseAbs().maxCoeff(), 1e-10);
}

TEST_F(MlpFieldTest, ParameterGradientsMatchFiniteDifferences) {
  // Scalar objective L = a·σ + b·c at one point; check 40 random parameters
  // spread across all layers.
  Rng rng(9);
  for (int trial = 0; trial < 5; ++trial) {
    const Vec3 x = random_vec(rng, -1, 1), d = random_unit(rng);
    const double a = 0.7;
    const Rgb b = random_vec(rng, -1, 1);
    std::vector<Vec3> pts{x};
    std::vector<double> gd{a};
    std::vector<Rgb> gc{b};
    FieldParams grad = field_.params().zeros_like();
    field_.accumulate_param_grads(pts, d, gd, gc, grad);

    auto objective = [&](const MlpField& f) {
      const FieldOutput o = f.query(x, d);
      return a * o.density + b.dot(o.color);
    };
    const auto& layers = field_.params().layers();
    for (std::size_t li = 0; li < layers.size(); ++li) {
      const LayerShape& s = layers[li];
      for (int pick = 0; pick < 5; ++pick) {
        std::uniform_int_distribution<std::size_t> wi(0, static_cast<std::size_t>(s.inputs) * s.outputs - 1);
        std::uniform_int_distribution<std::size_t> bi(0, static_cast<std::size_t>(s.outputs) - 1);
        const std::size_t idx = pick < 4 ? s.weight_offset + wi(rng) : s.bias_offset + bi(rng);
        MlpField plus = field_, minus = field_;
        const double h = 1e-5;
        plus.mutable_params().values()[idx] += h;
        minus.mutable_params().values()[idx] -= h;
        const double numeric = (objective(plus) - objective(minus)) / (2 * h);
        EXPECT_TRUE(grad_close(grad.values()[idx], numeric, 1e-3, 1e-7))
            << "layer " << li << " idx " << idx << ": " << grad.values()[idx] << " vs " << numeric;
      }
    }
  }
}

TEST_F(MlpFieldTest, ParameterGradientsAccumulate) {
  Rng rng(10);
  const Vec3 d = random_unit(rng);
  std::vector<Vec3> pts{random_vec(rng, -1, 1), random_vec(rng, -1, 1)};
  std::vector<double> gd{0.3, -0.2};
  std::vector<Rgb> gc{Rgb(0.1, 0.2, 0.3), Rgb(-0.3, 0.0, 0.5)};
  FieldParams both = field_.params().zeros_like();
  field_.accumulate_param_grads(pts, d, gd, gc, both);
  FieldParams sep = field_.params().zeros_like();
  for (int i = 0; i < 2; ++i)
    field_.accumulate_param_grads(std::span(pts).subspan(i, 1), d, std::span(gd).subspan(i, 1),
                                  std::span(gc).subspan(i, 1), sep);
  for (std::size_t i = 0; i < both.size(); ++i) EXPECT_NEAR(both.values()[i], sep.values()[i], 1e-12);
}

TEST(FieldParams, SaveLoadRoundTrip) {
  MlpArchitecture arch;
  arch.hidden_width = 16;
  arch.hidden_layers = 2;
  arch.color_width = 8;
  arch.pos_frequencies = 3;
  arch.dir_frequencies = 1;
  const FieldParams p = FieldParams::random(arch, 5);
  const auto path = std::filesystem::temp_directory_path() / "nerfinv_params_roundtrip.nrf";
  save_field_params(p, path.string());
  const FieldParams q = load_field_params(path.string());
  EXPECT_EQ(q.architecture(), arch);
  ASSERT_EQ(q.size(), p.size());
  for (std::size_t i = 0; i < p.size(); ++i)
    EXPECT_EQ(q.values()[i], static_cast<double>(static_cast<float>(p.values()[i])));

  std::ifstream is(path, std::ios::binary);
  char magic[4];
  is.read(magic, 4);
  EXPECT_EQ(std::string(magic, 4), "NRF1");
  is.close();
  std::filesystem::remove(path);
}

TEST(FieldParams, LoaderRejectsCorruptFiles) {
  const auto dir = std::filesystem::temp_directory_path();
  const auto bad_magic = dir / "nerfinv_bad_magic.nrf";
  {
    std::ofstream os(bad_magic, std::ios::binary);
    os << "NRF2 garbage";
  }
  EXPECT_THROW(load_field_params(bad_magic.string()), IoError);

  const FieldParams p = FieldParams::random(MlpArchitecture{}, 1);
  const auto truncated = dir / "nerfinv_truncated.nrf";
  save_field_params(p, truncated.string());
  std::filesystem::resize_file(truncated, std::filesystem::file_size(truncated) - 8);
  EXPECT_THROW(load_field_params(truncated.string()), IoError);
  EXPECT_THROW(load_field_params((dir / "does_not_exist.nrf").string()), IoError);
  std::filesystem::remove(bad_magic);
  std::filesystem::remove(truncated);
}

TEST(FieldParams, RandomIsSeeded) {
  const FieldParams a = FieldParams::random(MlpArchitecture{}, 3), b = FieldParams::random(MlpArchitecture{}, 3),
                    c = FieldParams::random(MlpArchitecture{}, 4);
  EXPECT_EQ(a.values(), b.values());
  EXPECT_NE(a.values(), c.values());
}
