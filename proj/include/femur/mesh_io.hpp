#pragma once

#include <filesystem>
#include <string>

#include "femur/mesh.hpp"

namespace femur {

enum class MeshFormat { PLY, OBJ };

// Guesses from the extension; throws ArgumentError on anything else.
MeshFormat format_from_path(const std::filesystem::path& path);

// PLY covers ascii and binary_little_endian 1.0, float/double vertex
// coordinates and triangular faces (polygons are fan-triangulated). OBJ reads
// v/f records with 1-based indices. Vertex order is preserved.
TriMesh load_mesh(const std::filesystem::path& path, MeshFormat format);
inline TriMesh load_mesh(const std::filesystem::path& path) {
    return load_mesh(path, format_from_path(path));
}

// PLY output is binary_little_endian with double coordinates, so a round trip
// is exact; pass ascii=true for a human-readable file (still 1e-6-accurate).
void save_mesh(const TriMesh& mesh, const std::filesystem::path& path, MeshFormat format,
               bool ascii = false);
inline void save_mesh(const TriMesh& mesh, const std::filesystem::path& path) {
    save_mesh(mesh, path, format_from_path(path));
}

// Landmark JSON: an object mapping name -> [x, y, z] in mm. Unknown names are
// preserved; order is preserved.
LandmarkSet load_landmarks(const std::filesystem::path& path);
void save_landmarks(const LandmarkSet& landmarks, const std::filesystem::path& path);

// Write-to-temp-then-rename helper shared by all writers.
void atomic_write_text(const std::filesystem::path& path, const std::string& content);
void atomic_write_binary(const std::filesystem::path& path, const std::string& content);

} // namespace femur
