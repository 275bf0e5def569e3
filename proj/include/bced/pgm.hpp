#ifndef BCED_PGM_HPP
#define BCED_PGM_HPP

#include <cstdint>
#include <string>
#include <vector>

namespace bced {

struct PgmImage {
  int width = 0;
  int height = 0;
  std::vector<uint8_t> pixels;  // row-major
};

// Binary (P5) 8-bit PGM, maxval 255.
void write_pgm(const std::string& path, int width, int height,
               const uint8_t* pixels);
PgmImage read_pgm(const std::string& path);

// Whole-file helpers used by the dataset and model containers.
void write_file_atomic(const std::string& path, const std::string& bytes);
std::string read_file(const std::string& path);

}  // namespace bced

#endif
