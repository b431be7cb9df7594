#pragma once

#include <filesystem>
#include <fstream>
#include <random>
#include <string>

#include "midline/types.hpp"

namespace midline::detail {

// Write-then-rename so readers never observe a partial file.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& contents,
                              bool binary = false) {
  namespace fs = std::filesystem;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::random_device rd;
  const fs::path tmp = path.string() + ".tmp" + std::to_string(rd());
  {
    std::ofstream out(tmp, binary ? std::ios::binary : std::ios::out);
    if (!out) throw Error("cannot open for writing: " + tmp.string());
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw Error("write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

inline std::string read_file(const std::filesystem::path& path, bool binary = false) {
  std::ifstream in(path, binary ? std::ios::binary : std::ios::in);
  if (!in) throw Error("cannot open: " + path.string());
  std::string contents((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return contents;
}

}  // namespace midline::detail
