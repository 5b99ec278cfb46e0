#pragma once

// File formats shared by the CLI, the python module and the tests.
//
//   point CSV     header `x,y`, one point per line, row order = identity
//   DFLD field    "DFLD", u32 LE width, u32 LE height, then width*height
//                 records of (f32 LE dx, f32 LE dy), row-major
//   rigid JSON    {"angle_deg", "tx", "ty", "cx", "cy"} (+ optional extras)
//   images        8-bit PNG, binary PGM (P5) / PPM (P6)

#include <filesystem>
#include <iosfwd>
#include <string>

#include <json.hpp>

#include "nucreg/core.hpp"

namespace nucreg::io {

/// Raised for unreadable or malformed files; the message names the path.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

PointSet2D read_points_csv(const std::filesystem::path& path, int frame_width, int frame_height);
PointSet2D parse_points_csv(std::istream& in, int frame_width, int frame_height,
                            const std::string& name = "<stream>");
void write_points_csv(const std::filesystem::path& path, const PointSet2D& ps);
void write_points_csv(std::ostream& out, const PointSet2D& ps);

DeformationField read_field(const std::filesystem::path& path);
DeformationField decode_field(std::istream& in, const std::string& name = "<stream>");
void write_field(const std::filesystem::path& path, const DeformationField& field);
void encode_field(std::ostream& out, const DeformationField& field);

nlohmann::json rigid_to_json(const RigidTransform2D& t);
RigidTransform2D rigid_from_json(const nlohmann::json& j);
RigidTransform2D read_rigid_json(const std::filesystem::path& path);

void write_json(const std::filesystem::path& path, const nlohmann::json& j);
nlohmann::json read_json(const std::filesystem::path& path);

/// PNG or PGM/PPM by extension/magic. Gray+alpha and RGBA are flattened.
Raster read_image(const std::filesystem::path& path);
/// PNG unless the extension is .pgm/.ppm.
void write_image(const std::filesystem::path& path, const Raster& img);

}  // namespace nucreg::io
