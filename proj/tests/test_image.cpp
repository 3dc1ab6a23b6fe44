#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "efmca/efmca.hpp"

using namespace efmca;
using namespace efmca::tasks;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "efmca_test_image";
  fs::create_directories(dir);
  return dir / name;
}

ImageTensor ramp(Eigen::Index h, Eigen::Index w) {
  ImageTensor img;
  img.px.resize(h, w);
  for (Eigen::Index r = 0; r < h; ++r)
    for (Eigen::Index c = 0; c < w; ++c) img.px(r, c) = static_cast<double>((r * 7 + c * 3) % 251);
  img.peak = img.px.maxCoeff();
  return img;
}

}  // namespace

TEST(Pgm, ReadsAsciiWithComments) {
  const auto path = scratch("ascii.pgm");
  std::ofstream(path) << "P2\n# a comment\n3 2\n# another\n255\n0 1 2\n3 4 255\n";
  const auto img = read_pgm(path.string());
  ASSERT_EQ(img.width(), 3u);
  ASSERT_EQ(img.height(), 2u);
  EXPECT_EQ(img.px(1, 2), 255.0);
  EXPECT_EQ(img.px(0, 1), 1.0);
  EXPECT_EQ(img.peak, 255.0);
}

TEST(Pgm, BinaryRoundTrip8And16Bit) {
  const auto img = ramp(9, 13);
  for (int maxval : {255, 1000}) {
    const auto path = scratch("rt" + std::to_string(maxval) + ".pgm");
    write_pgm(path.string(), img, maxval);
    EXPECT_EQ(read_pgm(path.string()).px, img.px);
    write_pgm(path.string(), img, maxval, false);
    EXPECT_EQ(read_pgm(path.string()).px, img.px);
  }
}

TEST(Pgm, BundledTestImage) {
  const auto img = read_pgm(EFMCA_DATA_DIR "/cameraman.pgm");
  EXPECT_EQ(img.width(), 256u);
  EXPECT_EQ(img.height(), 256u);
  EXPECT_GT(img.peak, 0.0);
}

TEST(Pgm, RejectsBrokenFiles) {
  EXPECT_THROW(read_pgm(scratch("missing.pgm").string()), IoError);
  const auto path = scratch("bad.pgm");
  std::ofstream(path) << "P6\n1 1\n255\n";
  EXPECT_THROW(read_pgm(path.string()), IoError);
  std::ofstream(path) << "P2\n2 2\n255\n1 2 3\n";
  EXPECT_THROW(read_pgm(path.string()), IoError);
  std::ofstream(path) << "P5\n4 4\n255\nab";
  EXPECT_THROW(read_pgm(path.string()), IoError);
}

TEST(Image, CropAndRescale) {
  const auto img = ramp(10, 10);
  const auto c = crop(img, 2, 3, 4, 5);
  EXPECT_EQ(c.height(), 4u);
  EXPECT_EQ(c.width(), 5u);
  EXPECT_EQ(c.px(0, 0), img.px(2, 3));
  EXPECT_THROW(crop(img, 8, 0, 4, 1), ParameterError);
  const auto s = rescale_to_peak(img, 10.0);
  EXPECT_DOUBLE_EQ(s.px.maxCoeff(), 10.0);
  EXPECT_EQ(s.peak, 10.0);
  ImageTensor zero{Eigen::MatrixXd::Zero(2, 2), 0.0};
  EXPECT_THROW(rescale_to_peak(zero, 1.0), ParameterError);
}

TEST(AddNoise, PoissonMoments) {
  ImageTensor img{Eigen::MatrixXd::Constant(200, 200, 6.0), 6.0};
  std::mt19937_64 rng(1);
  const auto y = add_noise(img, DistKind::Poisson, rng);
  const double mean = y.px.mean();
  const double var = (y.px.array() - mean).square().mean();
  EXPECT_NEAR(mean, 6.0, 0.05);
  EXPECT_NEAR(var, 6.0, 0.15);
  EXPECT_TRUE((y.px.array() == y.px.array().round()).all());
}

TEST(AddNoise, MeanIsCleanIntensityForEveryFamily) {
  ImageTensor img{Eigen::MatrixXd::Constant(150, 150, 0.4), 0.4};
  for (auto k : {DistKind::Gaussian, DistKind::Gamma, DistKind::Exponential, DistKind::Bernoulli,
                 DistKind::Poisson}) {
    std::mt19937_64 rng(2);
    EXPECT_NEAR(add_noise(img, k, rng).px.mean(), 0.4, 0.02) << to_string(k);
  }
}

TEST(AddNoise, SeedDeterminismAndDomain) {
  const auto img = ramp(8, 8);
  std::mt19937_64 a(3), b(3);
  EXPECT_EQ(add_noise(img, DistKind::Gamma, a).px, add_noise(img, DistKind::Gamma, b).px);
  ImageTensor neg{Eigen::MatrixXd::Constant(1, 1, -1.0), 0.0};
  EXPECT_THROW(add_noise(neg, DistKind::Poisson, a), DomainError);
  EXPECT_NO_THROW(add_noise(neg, DistKind::Gaussian, a));
  EXPECT_THROW(add_noise(img, DistKind::Bernoulli, a), DomainError);
}

TEST(Patches, ReassembleIsExactForEveryStride) {
  const auto img = ramp(23, 19);
  for (std::size_t side : {1u, 4u, 8u})
    for (std::size_t stride = 1; stride <= side; ++stride) {
      const auto g = extract_patches(img, side, stride);
      EXPECT_EQ(reassemble(g, g.patches).px, img.px) << side << "/" << stride;
      EXPECT_TRUE((g.coverage.array() >= 1.0).all());
    }
}

TEST(Patches, ConstantEstimatesGiveConstantImage) {
  const auto img = ramp(16, 16);
  const auto g = extract_patches(img, 4, 1);
  const Dataset est = Dataset::Constant(g.patches.rows(), g.patches.cols(), 3.5);
  EXPECT_TRUE((reassemble(g, est).px.array() == 3.5).all());
}

TEST(Patches, CoverageMatchesBruteForce) {
  const auto img = ramp(64, 64);
  const auto g = extract_patches(img, 8, 4);
  EXPECT_EQ(g.origins.size(), 15u * 15u);
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(64, 64);
  for (int r0 = 0; r0 + 8 <= 64; r0 += 4)
    for (int c0 = 0; c0 + 8 <= 64; c0 += 4) cov.block(r0, c0, 8, 8).array() += 1.0;
  EXPECT_EQ(g.coverage, cov);
  EXPECT_EQ(g.patches.row(16), Eigen::Map<const Eigen::RowVectorXd>(
                                   Eigen::MatrixXd(img.px.block(4, 4, 8, 8).transpose()).data(), 64));
}

TEST(Patches, Errors) {
  const auto img = ramp(5, 5);
  EXPECT_THROW(extract_patches(img, 6, 1), ParameterError);
  EXPECT_THROW(extract_patches(img, 2, 0), ParameterError);
  EXPECT_THROW(extract_patches(img, 2, 3), ParameterError);
  const auto g = extract_patches(img, 2, 2);
  EXPECT_THROW(reassemble(g, Dataset::Zero(1, 4)), ParameterError);
}

TEST(Psnr, KnownValues) {
  const auto img = ramp(20, 20);
  ImageTensor clean = img;
  clean.peak = 255.0;
  EXPECT_TRUE(std::isinf(psnr(clean, img)));
  ImageTensor off = img;
  off.px.array() += 1.0;
  EXPECT_NEAR(psnr(clean, off), 20.0 * std::log10(255.0), 1e-12);
  EXPECT_NEAR(psnr(clean, off), 48.13, 5e-3);
  EXPECT_THROW(psnr(clean, ramp(20, 21)), ParameterError);
}

TEST(Psnr, JointPixelPermutationInvariant) {
  std::mt19937_64 rng(4);
  const auto clean = ramp(12, 12);
  auto est = clean;
  std::normal_distribution<double> n(0.0, 3.0);
  for (Eigen::Index i = 0; i < est.px.size(); ++i) est.px(i) += n(rng);
  std::vector<Eigen::Index> perm(144);
  std::iota(perm.begin(), perm.end(), Eigen::Index{0});
  std::shuffle(perm.begin(), perm.end(), rng);
  auto pc = clean, pe = est;
  for (Eigen::Index i = 0; i < 144; ++i) {
    pc.px(i) = clean.px(perm[static_cast<std::size_t>(i)]);
    pe.px(i) = est.px(perm[static_cast<std::size_t>(i)]);
  }
  EXPECT_NEAR(psnr(pc, pe), psnr(clean, est), 1e-12);
}

TEST(Anscombe, ForwardInverseAndErrors) {
  EXPECT_NEAR(anscombe(0.0), 1.22474, 1e-5);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 300.0);
  for (int i = 0; i < 1000; ++i) {
    const double z = u(rng);
    EXPECT_NEAR(inverse_anscombe(anscombe(z)), z, 1e-12 * std::max(1.0, z));
  }
  EXPECT_THROW(anscombe(-0.1), DomainError);
}

TEST(Anscombe, StabilizesPoissonVariance) {
  std::mt19937_64 rng(6);
  for (double lambda : {20.0, 50.0, 200.0}) {
    std::poisson_distribution<long long> pd(lambda);
    const int n = 200000;
    double s = 0.0, ss = 0.0;
    for (int i = 0; i < n; ++i) {
      const double v = anscombe(static_cast<double>(pd(rng)));
      s += v;
      ss += v * v;
    }
    const double var = ss / n - (s / n) * (s / n);
    EXPECT_NEAR(var, 1.0, 0.2) << lambda;
  }
}
