#include "nucreg/io.hpp"

#include <png.h>

#include <algorithm>
#include <array>
#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>

namespace nucreg::io {

namespace {

std::string trim(std::string s) {
  const auto ws = " \t\r\n";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

std::ifstream open_in(const std::filesystem::path& path, std::ios::openmode mode = std::ios::in) {
  std::ifstream in(path, mode);
  if (!in) throw FormatError("cannot open " + path.string());
  return in;
}

std::ofstream open_out(const std::filesystem::path& path, std::ios::openmode mode = std::ios::out) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, mode);
  if (!out) throw FormatError("cannot write " + path.string());
  return out;
}

void put_u32(std::ostream& out, std::uint32_t v) {
  const std::array<char, 4> b{static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                              static_cast<char>((v >> 16) & 0xff),
                              static_cast<char>((v >> 24) & 0xff)};
  out.write(b.data(), 4);
}

bool get_u32(std::istream& in, std::uint32_t& v) {
  std::array<unsigned char, 4> b{};
  if (!in.read(reinterpret_cast<char*>(b.data()), 4)) return false;
  v = b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  return true;
}

void put_f32(std::ostream& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }

bool get_f32(std::istream& in, float& f) {
  std::uint32_t v = 0;
  if (!get_u32(in, v)) return false;
  f = std::bit_cast<float>(v);
  return true;
}

std::string lower_ext(const std::filesystem::path& p) {
  std::string e = p.extension().string();
  std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return std::tolower(c); });
  return e;
}

// --- PNM -------------------------------------------------------------------

std::string pnm_token(std::istream& in) {
  std::string tok;
  char c = 0;
  while (in.get(c)) {
    if (c == '#') {
      std::string skip;
      std::getline(in, skip);
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(c);
  }
  return tok;
}

Raster read_pnm(const std::filesystem::path& path) {
  auto in = open_in(path, std::ios::binary);
  const std::string magic = pnm_token(in);
  if (magic != "P5" && magic != "P6") throw FormatError(path.string() + ": not a binary PGM/PPM");
  const int channels = magic == "P5" ? 1 : 3;
  int w = 0, h = 0, maxval = 0;
  try {
    w = std::stoi(pnm_token(in));
    h = std::stoi(pnm_token(in));
    maxval = std::stoi(pnm_token(in));
  } catch (const std::exception&) {
    throw FormatError(path.string() + ": malformed PNM header");
  }
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 65535) {
    throw FormatError(path.string() + ": bad PNM dimensions");
  }
  const std::size_t n = static_cast<std::size_t>(w) * h * channels;
  std::vector<std::uint8_t> px(n);
  if (maxval < 256) {
    if (!in.read(reinterpret_cast<char*>(px.data()), static_cast<std::streamsize>(n))) {
      throw FormatError(path.string() + ": truncated PNM data");
    }
    if (maxval != 255) {
      for (auto& v : px) v = static_cast<std::uint8_t>(std::lround(v * 255.0 / maxval));
    }
  } else {
    std::vector<unsigned char> raw(2 * n);
    if (!in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()))) {
      throw FormatError(path.string() + ": truncated PNM data");
    }
    for (std::size_t i = 0; i < n; ++i) {
      const int v = (raw[2 * i] << 8) | raw[2 * i + 1];
      px[i] = static_cast<std::uint8_t>(std::lround(v * 255.0 / maxval));
    }
  }
  return Raster(w, h, channels, std::move(px));
}

void write_pnm(const std::filesystem::path& path, const Raster& img) {
  auto out = open_out(path, std::ios::binary);
  out << (img.channels() == 1 ? "P5" : "P6") << "\n" << img.width() << " " << img.height()
      << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.pixels().data()),
            static_cast<std::streamsize>(img.pixels().size()));
}

// --- PNG -------------------------------------------------------------------

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};

Raster read_png(const std::filesystem::path& path) {
  std::unique_ptr<std::FILE, FileCloser> fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw FormatError("cannot open " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError("libpng initialisation failed");
  }
  std::vector<std::uint8_t> buffer;
  int w = 0, h = 0, channels = 1;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError(path.string() + ": malformed PNG");
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  const auto color = png_get_color_type(png, info);
  const auto depth = png_get_bit_depth(png, info);
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color & PNG_COLOR_MASK_ALPHA || png_get_valid(png, info, PNG_INFO_tRNS)) png_set_strip_alpha(png);
  png_read_update_info(png, info);
  w = static_cast<int>(png_get_image_width(png, info));
  h = static_cast<int>(png_get_image_height(png, info));
  channels = png_get_channels(png, info);
  const std::size_t rowbytes = png_get_rowbytes(png, info);
  buffer.resize(rowbytes * h);
  std::vector<png_bytep> rows(h);
  for (int y = 0; y < h; ++y) rows[y] = buffer.data() + rowbytes * y;
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);
  if (channels != 1 && channels != 3) throw FormatError(path.string() + ": unsupported PNG layout");
  return Raster(w, h, channels, std::move(buffer));
}

void write_png(const std::filesystem::path& path, const Raster& img) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::unique_ptr<std::FILE, FileCloser> fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw FormatError("cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw FormatError("libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw FormatError("failed writing " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, img.width(), img.height(), 8,
               img.channels() == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const std::size_t stride = static_cast<std::size_t>(img.width()) * img.channels();
  std::vector<png_bytep> rows(img.height());
  auto* base = const_cast<std::uint8_t*>(img.pixels().data());
  for (int y = 0; y < img.height(); ++y) rows[y] = base + stride * y;
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace

PointSet2D parse_points_csv(std::istream& in, int frame_width, int frame_height,
                            const std::string& name) {
  std::string line;
  if (!std::getline(in, line) || trim(line) != "x,y") {
    throw FormatError(name + ": expected header 'x,y'");
  }
  std::vector<Point2D> pts;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) {
      throw FormatError(name + ":" + std::to_string(lineno) + ": expected 'x,y'");
    }
    Point2D p;
    try {
      std::size_t used = 0;
      const std::string xs = trim(line.substr(0, comma));
      const std::string ys = trim(line.substr(comma + 1));
      p.x = std::stod(xs, &used);
      if (used != xs.size()) throw std::invalid_argument("x");
      p.y = std::stod(ys, &used);
      if (used != ys.size()) throw std::invalid_argument("y");
    } catch (const std::exception&) {
      throw FormatError(name + ":" + std::to_string(lineno) + ": malformed coordinate");
    }
    if (!p.finite()) throw FormatError(name + ":" + std::to_string(lineno) + ": non-finite coordinate");
    pts.push_back(p);
  }
  return PointSet2D(std::move(pts), frame_width, frame_height);
}

PointSet2D read_points_csv(const std::filesystem::path& path, int frame_width, int frame_height) {
  auto in = open_in(path);
  return parse_points_csv(in, frame_width, frame_height, path.string());
}

void write_points_csv(std::ostream& out, const PointSet2D& ps) {
  out << "x,y\n";
  out.precision(17);
  for (const auto& p : ps.points()) out << p.x << "," << p.y << "\n";
}

void write_points_csv(const std::filesystem::path& path, const PointSet2D& ps) {
  auto out = open_out(path);
  write_points_csv(out, ps);
}

void encode_field(std::ostream& out, const DeformationField& field) {
  out.write("DFLD", 4);
  put_u32(out, static_cast<std::uint32_t>(field.width()));
  put_u32(out, static_cast<std::uint32_t>(field.height()));
  for (const auto& d : field.displacements()) {
    put_f32(out, static_cast<float>(d.dx));
    put_f32(out, static_cast<float>(d.dy));
  }
}

DeformationField decode_field(std::istream& in, const std::string& name) {
  std::array<char, 4> magic{};
  if (!in.read(magic.data(), 4) || std::memcmp(magic.data(), "DFLD", 4) != 0) {
    throw FormatError(name + ": missing DFLD magic");
  }
  std::uint32_t w = 0, h = 0;
  if (!get_u32(in, w) || !get_u32(in, h)) throw FormatError(name + ": truncated DFLD header");
  if (w > (1u << 16) || h > (1u << 16)) throw FormatError(name + ": implausible DFLD dimensions");
  std::vector<Displacement> data(static_cast<std::size_t>(w) * h);
  for (auto& d : data) {
    float dx = 0, dy = 0;
    if (!get_f32(in, dx) || !get_f32(in, dy)) throw FormatError(name + ": truncated DFLD payload");
    d = {dx, dy};
  }
  try {
    return DeformationField(static_cast<int>(w), static_cast<int>(h), std::move(data));
  } catch (const std::invalid_argument& e) {
    throw FormatError(name + ": " + e.what());
  }
}

DeformationField read_field(const std::filesystem::path& path) {
  auto in = open_in(path, std::ios::binary);
  return decode_field(in, path.string());
}

void write_field(const std::filesystem::path& path, const DeformationField& field) {
  auto out = open_out(path, std::ios::binary);
  encode_field(out, field);
}

nlohmann::json rigid_to_json(const RigidTransform2D& t) {
  return {{"angle_deg", t.angle_deg}, {"tx", t.tx}, {"ty", t.ty}, {"cx", t.cx}, {"cy", t.cy}};
}

RigidTransform2D rigid_from_json(const nlohmann::json& j) {
  RigidTransform2D t;
  try {
    t.angle_deg = j.at("angle_deg").get<double>();
    t.tx = j.at("tx").get<double>();
    t.ty = j.at("ty").get<double>();
    t.cx = j.value("cx", 0.0);
    t.cy = j.value("cy", 0.0);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("rigid transform JSON: ") + e.what());
  }
  return t;
}

RigidTransform2D read_rigid_json(const std::filesystem::path& path) {
  try {
    return rigid_from_json(read_json(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  auto out = open_out(path);
  out << j.dump(2) << "\n";
}

nlohmann::json read_json(const std::filesystem::path& path) {
  auto in = open_in(path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

Raster read_image(const std::filesystem::path& path) {
  std::array<unsigned char, 8> sig{};
  {
    auto in = open_in(path, std::ios::binary);
    in.read(reinterpret_cast<char*>(sig.data()), sig.size());
  }
  if (png_sig_cmp(sig.data(), 0, sig.size()) == 0) return read_png(path);
  if (sig[0] == 'P' && (sig[1] == '5' || sig[1] == '6')) return read_pnm(path);
  throw FormatError(path.string() + ": unrecognised image format (expected PNG or PGM/PPM)");
}

void write_image(const std::filesystem::path& path, const Raster& img) {
  const auto ext = lower_ext(path);
  if (ext == ".pgm" || ext == ".ppm") {
    write_pnm(path, img);
  } else {
    write_png(path, img);
  }
}

}  // namespace nucreg::io
