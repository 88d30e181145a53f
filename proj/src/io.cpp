#include "fedclust/io.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <string>

#include <fmt/format.h>

#include "fedclust/errors.hpp"

namespace fedclust::io {

GrayImage heatmap(const Eigen::MatrixXd& matrix) {
  GrayImage img;
  img.width = static_cast<int>(matrix.cols());
  img.height = static_cast<int>(matrix.rows());
  img.pixels.assign(static_cast<std::size_t>(matrix.size()), 255);
  if (matrix.size() == 0) return img;
  const double lo = matrix.minCoeff();
  const double hi = matrix.maxCoeff();
  if (!(hi > lo)) return img;
  for (Eigen::Index r = 0; r < matrix.rows(); ++r) {
    for (Eigen::Index c = 0; c < matrix.cols(); ++c) {
      const double t = (hi - matrix(r, c)) / (hi - lo);
      img.pixels[static_cast<std::size_t>(r * matrix.cols() + c)] =
          static_cast<std::uint8_t>(std::lround(255.0 * t));
    }
  }
  return img;
}

void write_pgm(const GrayImage& image, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << "P5\n" << image.width << ' ' << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.pixels.data()),
            static_cast<std::streamsize>(image.pixels.size()));
  if (!out) throw Error("failed writing " + path.string());
}

GrayImage read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::string magic;
  int maxval = 0;
  GrayImage img;
  in >> magic >> img.width >> img.height >> maxval;
  if (magic != "P5" || maxval != 255 || img.width < 0 || img.height < 0)
    throw DataError(path.string() + ": not an 8-bit binary PGM");
  in.get();  // single whitespace after the header
  img.pixels.resize(static_cast<std::size_t>(img.width) * static_cast<std::size_t>(img.height));
  in.read(reinterpret_cast<char*>(img.pixels.data()),
          static_cast<std::streamsize>(img.pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.pixels.size()))
    throw DataError(path.string() + ": truncated pixel data");
  return img;
}

void export_heatmap(const clustering::ProximityMatrix& matrix, const std::filesystem::path& path) {
  write_pgm(heatmap(matrix.entries()), path);
}

void write_matrix_csv(const Eigen::MatrixXd& matrix, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  for (Eigen::Index r = 0; r < matrix.rows(); ++r) {
    for (Eigen::Index c = 0; c < matrix.cols(); ++c) {
      if (c) out << ',';
      out << fmt::format("{}", matrix(r, c));
    }
    out << '\n';
  }
}

Eigen::MatrixXd read_matrix_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
    if (!rows.empty() && row.size() != rows.front().size())
      throw DataError(path.string() + ": ragged matrix rows");
    rows.push_back(std::move(row));
  }
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()),
                    rows.empty() ? 0 : static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < rows[r].size(); ++c)
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
  return m;
}

}  // namespace fedclust::io
