#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "advsource/tensor.hpp"

namespace advsource {

struct ManifestEntry {
  std::string image_id;
  std::string path;  // relative paths resolve against the manifest directory
  int true_class = -1;
};

// Manifest files are newline-delimited JSON, one image per line:
//   {"image_id": "...", "path": "...", "true_class": 3}
std::vector<ManifestEntry> load_manifest(const std::filesystem::path& manifest_path);
void save_manifest(const std::filesystem::path& manifest_path,
                   const std::vector<ManifestEntry>& entries);

// Pixel files are binary PGM (P5, one channel) or PPM (P6, three channels)
// with maxval 255; values map to [0,1] as v/255, so loaded images always sit
// on the 8-bit grid.
ImageTensor load_image(const std::filesystem::path& path, std::string image_id, int true_class);
void save_image(const std::filesystem::path& path, const ImageTensor& image);

std::vector<ImageTensor> load_images(const std::filesystem::path& manifest_path);

}  // namespace advsource
