#ifndef EFMCA_IO_HPP
#define EFMCA_IO_HPP

// Dataset CSV: header d0,...,d{D-1}, one datapoint per row. Lines starting
// with '#' are comments.

#include <charconv>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include "efmca/params.hpp"
#include "efmca/tasks/image.hpp"
#include "efmca/trace.hpp"

namespace efmca {

using tasks::IoError;

inline void write_dataset_csv(std::ostream& os, const Dataset& Y,
                              const std::vector<std::string>& comments = {}) {
  for (const auto& c : comments) os << "# " << c << '\n';
  for (Eigen::Index d = 0; d < Y.cols(); ++d) os << (d ? "," : "") << 'd' << d;
  os << '\n';
  for (Eigen::Index n = 0; n < Y.rows(); ++n) {
    for (Eigen::Index d = 0; d < Y.cols(); ++d) os << (d ? "," : "") << format_double(Y(n, d));
    os << '\n';
  }
}

inline void write_dataset_csv(const std::string& path, const Dataset& Y,
                              const std::vector<std::string>& comments = {}) {
  std::ofstream os(path);
  if (!os) throw IoError(path + ": cannot open for writing");
  write_dataset_csv(os, Y, comments);
  if (!os) throw IoError(path + ": write failed");
}

inline Dataset read_dataset_csv(std::istream& is, const std::string& path = "<stream>") {
  std::string line;
  std::size_t lineno = 0;
  std::size_t D = 0;
  bool header = false;
  std::vector<double> values;
  std::size_t rows = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string_view> fields;
    std::string_view rest(line);
    for (;;) {
      const auto comma = rest.find(',');
      fields.push_back(rest.substr(0, comma));
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
    if (!header) {
      for (std::size_t d = 0; d < fields.size(); ++d)
        if (fields[d] != "d" + std::to_string(d))
          throw IoError(path + ":" + std::to_string(lineno) + ": expected header d0,...,d{D-1}");
      D = fields.size();
      header = true;
      continue;
    }
    if (fields.size() != D)
      throw IoError(path + ":" + std::to_string(lineno) + ": expected " + std::to_string(D) +
                    " fields, found " + std::to_string(fields.size()));
    for (std::size_t d = 0; d < D; ++d) {
      auto f = fields[d];
      while (!f.empty() && f.front() == ' ') f.remove_prefix(1);
      while (!f.empty() && f.back() == ' ') f.remove_suffix(1);
      double v;
      const auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
      if (ec != std::errc() || ptr != f.data() + f.size())
        throw IoError(path + ":" + std::to_string(lineno) + ", column " + std::to_string(d) +
                      ": not a number: '" + std::string(f) + "'");
      values.push_back(v);
    }
    ++rows;
  }
  if (!header) throw IoError(path + ": missing header");
  Dataset Y(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(D));
  std::copy(values.begin(), values.end(), Y.data());
  return Y;
}

inline Dataset read_dataset_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError(path + ": cannot open for reading");
  return read_dataset_csv(is, path);
}

}  // namespace efmca

#endif  // EFMCA_IO_HPP
