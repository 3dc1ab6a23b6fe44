#ifndef EFMCA_TASKS_IMAGE_HPP
#define EFMCA_TASKS_IMAGE_HPP

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "efmca/errors.hpp"
#include "efmca/expfam.hpp"
#include "efmca/params.hpp"

namespace efmca::tasks {

/// Grayscale image; px(row, col). `peak` is the clean-image maximum used as
/// the PSNR reference.
struct ImageTensor {
  Eigen::MatrixXd px;
  double peak = 0.0;

  std::size_t width() const { return static_cast<std::size_t>(px.cols()); }
  std::size_t height() const { return static_cast<std::size_t>(px.rows()); }
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {
inline std::string pgm_token(std::istream& is, const std::string& path) {
  std::string tok;
  char c;
  while (is.get(c)) {
    if (c == '#') {
      std::string skip;
      std::getline(is, skip);
    } else if (!std::isspace(static_cast<unsigned char>(c))) {
      tok += c;
      while (is.get(c) && !std::isspace(static_cast<unsigned char>(c))) tok += c;
      return tok;
    }
  }
  throw IoError(path + ": truncated PGM header");
}
}  // namespace detail

/// Reads P2 or P5 PGM (maxval up to 65535). peak = maximum pixel value.
inline ImageTensor read_pgm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError(path + ": cannot open for reading");
  const std::string magic = detail::pgm_token(is, path);
  if (magic != "P2" && magic != "P5") throw IoError(path + ": not a P2/P5 PGM file");
  long w, h, maxval;
  try {
    w = std::stol(detail::pgm_token(is, path));
    h = std::stol(detail::pgm_token(is, path));
    maxval = std::stol(detail::pgm_token(is, path));
  } catch (const std::logic_error&) {
    throw IoError(path + ": malformed PGM header");
  }
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 65535) throw IoError(path + ": invalid PGM dimensions");
  ImageTensor img;
  img.px.resize(h, w);
  if (magic == "P2") {
    for (long r = 0; r < h; ++r)
      for (long c = 0; c < w; ++c) {
        long v;
        if (!(is >> v)) throw IoError(path + ": truncated pixel data");
        img.px(r, c) = static_cast<double>(v);
      }
  } else {
    const int bytes = maxval > 255 ? 2 : 1;
    std::vector<unsigned char> buf(static_cast<std::size_t>(w * h * bytes));
    if (!is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size())))
      throw IoError(path + ": truncated pixel data");
    for (long i = 0; i < w * h; ++i) {
      const unsigned v = bytes == 2 ? (unsigned{buf[2 * i]} << 8) | buf[2 * i + 1] : buf[i];
      img.px(i / w, i % w) = static_cast<double>(v);
    }
  }
  img.peak = img.px.maxCoeff();
  return img;
}

/// Writes the image rounded and clipped to [0, maxval].
inline void write_pgm(const std::string& path, const ImageTensor& img, int maxval = 255,
                      bool binary = true) {
  if (maxval <= 0 || maxval > 65535) throw ParameterError("write_pgm: maxval outside [1, 65535]");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError(path + ": cannot open for writing");
  const auto q = [&](double v) {
    return static_cast<unsigned>(std::clamp(std::lround(v), 0L, static_cast<long>(maxval)));
  };
  os << (binary ? "P5" : "P2") << '\n' << img.width() << ' ' << img.height() << '\n' << maxval << '\n';
  for (Eigen::Index r = 0; r < img.px.rows(); ++r) {
    for (Eigen::Index c = 0; c < img.px.cols(); ++c) {
      const unsigned v = q(img.px(r, c));
      if (!binary) {
        os << v << (c + 1 == img.px.cols() ? '\n' : ' ');
      } else if (maxval > 255) {
        os.put(static_cast<char>(v >> 8));
        os.put(static_cast<char>(v & 0xff));
      } else {
        os.put(static_cast<char>(v));
      }
    }
  }
  if (!os) throw IoError(path + ": write failed");
}

inline ImageTensor crop(const ImageTensor& img, std::size_t row, std::size_t col, std::size_t h,
                        std::size_t w) {
  if (row + h > img.height() || col + w > img.width())
    throw ParameterError("crop: window exceeds the image");
  ImageTensor out;
  out.px = img.px.block(static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(col),
                        static_cast<Eigen::Index>(h), static_cast<Eigen::Index>(w));
  out.peak = out.px.maxCoeff();
  return out;
}

/// Divides by the maximum and multiplies by `peak`.
inline ImageTensor rescale_to_peak(const ImageTensor& img, double peak) {
  const double mx = img.px.maxCoeff();
  if (!(mx > 0.0)) throw ParameterError("rescale_to_peak: image maximum must be positive");
  if (!(peak > 0.0)) throw ParameterError("rescale_to_peak: peak must be positive");
  ImageTensor out;
  out.px = img.px * (peak / mx);
  out.peak = peak;
  return out;
}

struct NoiseConfig {
  double gaussian_variance = 1.0;
  double gamma_shape = 4.0;
};

inline constexpr double kPositiveFloor = 1e-4;

/// Independent per-pixel noise whose mean is the clean intensity.
template <class Rng>
ImageTensor add_noise(const ImageTensor& img, DistKind dist, Rng& rng, const NoiseConfig& nc = {}) {
  ImageTensor out;
  out.peak = img.peak;
  out.px.resizeLike(img.px);
  for (Eigen::Index i = 0; i < img.px.size(); ++i) {
    double x = img.px(i);
    if (dist != DistKind::Gaussian) {
      if (x < 0.0)
        throw DomainError("add_noise: negative intensity " + std::to_string(x) + " under " +
                          std::string(to_string(dist)) + " noise");
      x = std::max(x, kPositiveFloor);
    }
    double y = 0.0;
    switch (dist) {
      case DistKind::Poisson:
        y = static_cast<double>(std::poisson_distribution<long long>(x)(rng));
        break;
      case DistKind::Exponential:
        y = std::exponential_distribution<double>(1.0 / x)(rng);
        break;
      case DistKind::Gaussian:
        y = std::normal_distribution<double>(x, std::sqrt(nc.gaussian_variance))(rng);
        break;
      case DistKind::Gamma:
        y = std::gamma_distribution<double>(nc.gamma_shape, x / nc.gamma_shape)(rng);
        break;
      case DistKind::Bernoulli:
        if (x > 1.0) throw DomainError("add_noise: Bernoulli noise needs intensities in [0,1]");
        y = std::bernoulli_distribution(x)(rng) ? 1.0 : 0.0;
        break;
    }
    out.px(i) = y;
  }
  return out;
}

/// Patches on a stride lattice; the last row and column of patches are
/// snapped to the image edge so every pixel is covered.
struct PatchGrid {
  std::size_t patch_side = 0;
  std::size_t stride = 0;
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::pair<std::size_t, std::size_t>> origins;  // (row, col)
  Dataset patches;                                           // N x side^2, row-major pixels
  Eigen::MatrixXd coverage;
};

inline std::vector<std::size_t> patch_offsets(std::size_t extent, std::size_t side, std::size_t stride) {
  std::vector<std::size_t> v;
  for (std::size_t o = 0; o + side <= extent; o += stride) v.push_back(o);
  if (v.back() + side < extent) v.push_back(extent - side);
  return v;
}

inline PatchGrid extract_patches(const ImageTensor& img, std::size_t side, std::size_t stride) {
  if (side == 0 || stride == 0) throw ParameterError("extract_patches: side and stride must be positive");
  if (stride > side) throw ParameterError("extract_patches: stride larger than the patch side leaves pixels uncovered");
  if (img.width() < side || img.height() < side)
    throw ParameterError("extract_patches: image " + std::to_string(img.width()) + "x" +
                         std::to_string(img.height()) + " smaller than patch side " +
                         std::to_string(side));
  PatchGrid g;
  g.patch_side = side;
  g.stride = stride;
  g.width = img.width();
  g.height = img.height();
  const auto rows = patch_offsets(g.height, side, stride);
  const auto cols = patch_offsets(g.width, side, stride);
  for (auto r : rows)
    for (auto c : cols) g.origins.emplace_back(r, c);
  const auto S = static_cast<Eigen::Index>(side);
  g.patches.resize(static_cast<Eigen::Index>(g.origins.size()), S * S);
  g.coverage = Eigen::MatrixXd::Zero(img.px.rows(), img.px.cols());
  for (std::size_t n = 0; n < g.origins.size(); ++n) {
    const auto [r0, c0] = g.origins[n];
    for (Eigen::Index i = 0; i < S; ++i)
      for (Eigen::Index j = 0; j < S; ++j) {
        const auto r = static_cast<Eigen::Index>(r0) + i, c = static_cast<Eigen::Index>(c0) + j;
        g.patches(static_cast<Eigen::Index>(n), i * S + j) = img.px(r, c);
        g.coverage(r, c) += 1.0;
      }
  }
  return g;
}

/// Equal-weight average of overlapping patch estimates.
inline ImageTensor reassemble(const PatchGrid& g, const Dataset& estimates, double peak = 0.0) {
  if (estimates.rows() != g.patches.rows() || estimates.cols() != g.patches.cols())
    throw ParameterError("reassemble: estimates shape differs from the patch grid");
  const auto S = static_cast<Eigen::Index>(g.patch_side);
  Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(g.coverage.rows(), g.coverage.cols());
  for (std::size_t n = 0; n < g.origins.size(); ++n) {
    const auto [r0, c0] = g.origins[n];
    for (Eigen::Index i = 0; i < S; ++i)
      for (Eigen::Index j = 0; j < S; ++j)
        sum(static_cast<Eigen::Index>(r0) + i, static_cast<Eigen::Index>(c0) + j) +=
            estimates(static_cast<Eigen::Index>(n), i * S + j);
  }
  ImageTensor out;
  out.px = sum.cwiseQuotient(g.coverage);
  out.peak = peak;
  return out;
}

/// 10 log10(peak^2 / MSE) with peak = clean.peak; +infinity when MSE = 0.
inline double psnr(const ImageTensor& clean, const ImageTensor& estimate) {
  if (clean.px.rows() != estimate.px.rows() || clean.px.cols() != estimate.px.cols())
    throw ParameterError("psnr: image dimensions differ");
  const double mse = (clean.px - estimate.px).squaredNorm() / static_cast<double>(clean.px.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(clean.peak * clean.peak / mse);
}

inline double anscombe(double z) {
  if (z < 0.0) throw DomainError("anscombe: negative input");
  return 2.0 * std::sqrt(z + 3.0 / 8.0);
}

inline double inverse_anscombe(double x) { return (x / 2.0) * (x / 2.0) - 3.0 / 8.0; }

inline ImageTensor anscombe(const ImageTensor& img) {
  ImageTensor out{img.px.unaryExpr([](double z) { return anscombe(z); }), anscombe(img.peak)};
  return out;
}

inline ImageTensor inverse_anscombe(const ImageTensor& img) {
  ImageTensor out{img.px.unaryExpr([](double x) { return inverse_anscombe(x); }),
                  inverse_anscombe(img.peak)};
  return out;
}

}  // namespace efmca::tasks

#endif  // EFMCA_TASKS_IMAGE_HPP
