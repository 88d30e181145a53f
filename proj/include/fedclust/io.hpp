#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <vector>

#include "fedclust/clustering.hpp"

namespace fedclust::io {

/// 8-bit grayscale image, row-major.
struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;
};

/// Min-max normalization to 0..255 with the smallest entry white (255) and the
/// largest black (0). A constant matrix maps to all-white.
GrayImage heatmap(const Eigen::MatrixXd& matrix);

/// Writes `heatmap(matrix)` as binary PGM (P5).
void export_heatmap(const clustering::ProximityMatrix& matrix, const std::filesystem::path& path);

void write_pgm(const GrayImage& image, const std::filesystem::path& path);
GrayImage read_pgm(const std::filesystem::path& path);

/// Comma-separated rows, full round-trip precision.
void write_matrix_csv(const Eigen::MatrixXd& matrix, const std::filesystem::path& path);
Eigen::MatrixXd read_matrix_csv(const std::filesystem::path& path);

}  // namespace fedclust::io
