#include "advsource/dataset.hpp"

#include <fstream>

#include <json.hpp>

#include "advsource/error.hpp"

namespace advsource {

std::vector<ManifestEntry> load_manifest(const std::filesystem::path& manifest_path) {
  std::ifstream is(manifest_path);
  if (!is) throw IoError("cannot open manifest: " + manifest_path.string());
  std::vector<ManifestEntry> entries;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
      ManifestEntry e;
      e.image_id = j.at("image_id").get<std::string>();
      e.path = j.at("path").get<std::string>();
      e.true_class = j.at("true_class").get<int>();
      entries.push_back(std::move(e));
    } catch (const nlohmann::json::exception& ex) {
      throw DataError("manifest " + manifest_path.string() + ":" + std::to_string(line_no) +
                      ": " + ex.what());
    }
  }
  return entries;
}

void save_manifest(const std::filesystem::path& manifest_path,
                   const std::vector<ManifestEntry>& entries) {
  std::ofstream os(manifest_path, std::ios::trunc);
  if (!os) throw IoError("cannot write manifest: " + manifest_path.string());
  for (const auto& e : entries) {
    nlohmann::json j{{"image_id", e.image_id}, {"path", e.path}, {"true_class", e.true_class}};
    os << j.dump() << "\n";
  }
  if (!os) throw IoError("short write to manifest: " + manifest_path.string());
}

namespace {

// Reads one PNM header token, skipping whitespace and '#' comments.
std::string pnm_token(std::istream& is) {
  std::string tok;
  int c;
  while ((c = is.get()) != EOF) {
    if (c == '#') {
      while ((c = is.get()) != EOF && c != '\n') {
      }
    } else if (!std::isspace(c)) {
      tok.push_back(static_cast<char>(c));
      while ((c = is.peek()) != EOF && !std::isspace(c)) tok.push_back(static_cast<char>(is.get()));
      return tok;
    }
  }
  return tok;
}

}  // namespace

ImageTensor load_image(const std::filesystem::path& path, std::string image_id, int true_class) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open image: " + path.string());
  const std::string magic = pnm_token(is);
  int channels = 0;
  if (magic == "P5") {
    channels = 1;
  } else if (magic == "P6") {
    channels = 3;
  } else {
    throw DataError("unsupported image format '" + magic + "' in " + path.string() +
                    " (expected binary PGM/PPM)");
  }
  const int width = std::stoi(pnm_token(is));
  const int height = std::stoi(pnm_token(is));
  const int maxval = std::stoi(pnm_token(is));
  if (maxval != 255) {
    throw DataError("image " + path.string() + ": only 8-bit maxval 255 supported");
  }
  is.get();  // single whitespace after maxval
  const std::int64_t n = static_cast<std::int64_t>(channels) * height * width;
  std::vector<unsigned char> raw(n);
  is.read(reinterpret_cast<char*>(raw.data()), n);
  if (!is) throw DataError("truncated image data in " + path.string());

  ImageTensor img;
  img.shape = Shape{channels, height, width};
  img.pixels.resize(n);
  img.image_id = std::move(image_id);
  img.true_class = true_class;
  // PNM data is interleaved per pixel; store channel-major.
  const std::int64_t plane = static_cast<std::int64_t>(height) * width;
  for (std::int64_t p = 0; p < plane; ++p) {
    for (int c = 0; c < channels; ++c) {
      img.pixels[c * plane + p] = grid_value(raw[p * channels + c]);
    }
  }
  return img;
}

void save_image(const std::filesystem::path& path, const ImageTensor& image) {
  image.validate();
  const int channels = image.shape.channels;
  if (channels != 1 && channels != 3) {
    throw ArgumentError("save_image: only 1- or 3-channel images supported, got " +
                        std::to_string(channels));
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write image: " + path.string());
  os << (channels == 1 ? "P5" : "P6") << "\n"
     << image.shape.width << " " << image.shape.height << "\n255\n";
  const std::int64_t plane = static_cast<std::int64_t>(image.shape.height) * image.shape.width;
  std::vector<unsigned char> raw(plane * channels);
  for (std::int64_t p = 0; p < plane; ++p) {
    for (int c = 0; c < channels; ++c) {
      raw[p * channels + c] = static_cast<unsigned char>(nearest_grid_index(
          image.pixels[c * plane + p]));
    }
  }
  os.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!os) throw IoError("short write to image: " + path.string());
}

std::vector<ImageTensor> load_images(const std::filesystem::path& manifest_path) {
  const auto entries = load_manifest(manifest_path);
  const auto base_dir = manifest_path.parent_path();
  std::vector<ImageTensor> images;
  images.reserve(entries.size());
  for (const auto& e : entries) {
    std::filesystem::path p = e.path;
    if (p.is_relative()) p = base_dir / p;
    images.push_back(load_image(p, e.image_id, e.true_class));
  }
  return images;
}

}  // namespace advsource
