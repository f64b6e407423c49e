#include "femur/mesh_io.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace femur {

namespace {

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Pulls one '\n'-terminated line out of a buffer, tracking the offset.
bool next_line(const std::string& buf, std::size_t& pos, std::string& line) {
    if (pos >= buf.size()) return false;
    std::size_t end = buf.find('\n', pos);
    if (end == std::string::npos) end = buf.size();
    line.assign(buf, pos, end - pos);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    pos = end + 1;
    return true;
}

std::vector<std::string> split_ws(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream ss(s);
    std::string tok;
    while (ss >> tok) out.push_back(tok);
    return out;
}

struct PlyProperty {
    std::string type;
    std::string name;
    bool is_list = false;
    std::string count_type;
};

struct PlyElement {
    std::string name;
    std::size_t count = 0;
    std::vector<PlyProperty> props;
};

std::size_t scalar_size(const std::string& t) {
    if (t == "char" || t == "int8" || t == "uchar" || t == "uint8") return 1;
    if (t == "short" || t == "int16" || t == "ushort" || t == "uint16") return 2;
    if (t == "int" || t == "int32" || t == "uint" || t == "uint32" || t == "float" ||
        t == "float32")
        return 4;
    if (t == "double" || t == "float64" || t == "int64" || t == "uint64") return 8;
    throw FormatError("PLY: unknown scalar type '" + t + "'");
}

double read_scalar_le(const char* p, const std::string& t) {
    auto as = [&]<typename T>() {
        T v;
        std::memcpy(&v, p, sizeof(T));
        return static_cast<double>(v);
    };
    if (t == "char" || t == "int8") return as.operator()<std::int8_t>();
    if (t == "uchar" || t == "uint8") return as.operator()<std::uint8_t>();
    if (t == "short" || t == "int16") return as.operator()<std::int16_t>();
    if (t == "ushort" || t == "uint16") return as.operator()<std::uint16_t>();
    if (t == "int" || t == "int32") return as.operator()<std::int32_t>();
    if (t == "uint" || t == "uint32") return as.operator()<std::uint32_t>();
    if (t == "float" || t == "float32") return as.operator()<float>();
    if (t == "double" || t == "float64") return as.operator()<double>();
    if (t == "int64") return as.operator()<std::int64_t>();
    if (t == "uint64") return as.operator()<std::uint64_t>();
    throw FormatError("PLY: unknown scalar type '" + t + "'");
}

void append_face_fan(TriMesh& mesh, const std::vector<std::int64_t>& poly, std::size_t face_no) {
    if (poly.size() < 3)
        throw FormatError("face " + std::to_string(face_no) + " has fewer than 3 vertices");
    for (std::size_t k = 1; k + 1 < poly.size(); ++k) {
        for (std::int64_t idx : {poly[0], poly[k], poly[k + 1]}) {
            if (idx < 0 || idx >= static_cast<std::int64_t>(mesh.vertices.size()))
                throw ValidationError("face " + std::to_string(face_no) + " references vertex " +
                                      std::to_string(idx) + " but mesh has " +
                                      std::to_string(mesh.vertices.size()) + " vertices");
        }
        mesh.faces.push_back({static_cast<std::int32_t>(poly[0]), static_cast<std::int32_t>(poly[k]),
                              static_cast<std::int32_t>(poly[k + 1])});
    }
}

TriMesh load_ply(const std::string& buf, const std::filesystem::path& path) {
    std::size_t pos = 0;
    std::string line;
    if (!next_line(buf, pos, line) || line != "ply")
        throw FormatError(path.string() + ": missing 'ply' magic on line 1");

    std::string format;
    std::vector<PlyElement> elements;
    std::size_t header_line = 1;
    while (true) {
        if (!next_line(buf, pos, line))
            throw FormatError(path.string() + ": header ended before 'end_header'");
        ++header_line;
        const auto toks = split_ws(line);
        if (toks.empty() || toks[0] == "comment" || toks[0] == "obj_info") continue;
        if (toks[0] == "format") {
            if (toks.size() < 2)
                throw FormatError(path.string() + ": bad format line " + std::to_string(header_line));
            format = toks[1];
            if (format != "ascii" && format != "binary_little_endian")
                throw FormatError(path.string() + ": unsupported PLY format '" + format + "'");
        } else if (toks[0] == "element") {
            if (toks.size() != 3)
                throw FormatError(path.string() + ": bad element line " + std::to_string(header_line));
            elements.push_back({toks[1], static_cast<std::size_t>(std::stoull(toks[2])), {}});
        } else if (toks[0] == "property") {
            if (elements.empty())
                throw FormatError(path.string() + ": property before any element, line " +
                                  std::to_string(header_line));
            PlyProperty p;
            if (toks.size() >= 5 && toks[1] == "list") {
                p.is_list = true;
                p.count_type = toks[2];
                p.type = toks[3];
                p.name = toks[4];
            } else if (toks.size() >= 3) {
                p.type = toks[1];
                p.name = toks[2];
            } else {
                throw FormatError(path.string() + ": bad property line " + std::to_string(header_line));
            }
            elements.back().props.push_back(p);
        } else if (toks[0] == "end_header") {
            break;
        } else {
            throw FormatError(path.string() + ": unknown header keyword '" + toks[0] + "' on line " +
                              std::to_string(header_line));
        }
    }
    if (format.empty()) throw FormatError(path.string() + ": no 'format' line in header");

    TriMesh mesh;
    std::size_t face_no = 0;
    for (const PlyElement& el : elements) {
        const bool is_vertex = el.name == "vertex";
        const bool is_face = el.name == "face";
        int xi = -1, yi = -1, zi = -1, fi = -1;
        for (std::size_t i = 0; i < el.props.size(); ++i) {
            if (is_vertex && el.props[i].name == "x") xi = static_cast<int>(i);
            if (is_vertex && el.props[i].name == "y") yi = static_cast<int>(i);
            if (is_vertex && el.props[i].name == "z") zi = static_cast<int>(i);
            if (is_face && (el.props[i].name == "vertex_indices" || el.props[i].name == "vertex_index"))
                fi = static_cast<int>(i);
        }
        if (is_vertex && (xi < 0 || yi < 0 || zi < 0))
            throw FormatError(path.string() + ": vertex element lacks x/y/z properties");
        if (is_face && fi < 0)
            throw FormatError(path.string() + ": face element lacks vertex_indices");
        if (is_vertex) mesh.vertices.reserve(el.count);
        if (is_face) mesh.faces.reserve(el.count);

        if (format == "ascii") {
            for (std::size_t r = 0; r < el.count; ++r) {
                if (!next_line(buf, pos, line))
                    throw FormatError(path.string() + ": unexpected end of data in element '" +
                                      el.name + "' row " + std::to_string(r));
                const auto toks = split_ws(line);
                std::size_t t = 0;
                Vec3 v = Vec3::Zero();
                std::vector<std::int64_t> poly;
                for (std::size_t pi = 0; pi < el.props.size(); ++pi) {
                    const PlyProperty& p = el.props[pi];
                    if (p.is_list) {
                        if (t >= toks.size()) throw FormatError(path.string() + ": truncated list row");
                        const std::size_t cnt = std::stoull(toks[t++]);
                        std::vector<std::int64_t> vals(cnt);
                        for (std::size_t k = 0; k < cnt; ++k) {
                            if (t >= toks.size())
                                throw FormatError(path.string() + ": truncated list row");
                            vals[k] = std::stoll(toks[t++]);
                        }
                        if (static_cast<int>(pi) == fi) poly = std::move(vals);
                    } else {
                        if (t >= toks.size()) throw FormatError(path.string() + ": truncated row");
                        const double val = std::stod(toks[t++]);
                        if (static_cast<int>(pi) == xi) v.x() = val;
                        if (static_cast<int>(pi) == yi) v.y() = val;
                        if (static_cast<int>(pi) == zi) v.z() = val;
                    }
                }
                if (is_vertex) mesh.vertices.push_back(v);
                if (is_face) append_face_fan(mesh, poly, face_no++);
            }
        } else {
            for (std::size_t r = 0; r < el.count; ++r) {
                Vec3 v = Vec3::Zero();
                std::vector<std::int64_t> poly;
                for (std::size_t pi = 0; pi < el.props.size(); ++pi) {
                    const PlyProperty& p = el.props[pi];
                    if (p.is_list) {
                        const std::size_t csz = scalar_size(p.count_type);
                        if (pos + csz > buf.size())
                            throw FormatError(path.string() + ": truncated binary data at offset " +
                                              std::to_string(pos));
                        const auto cnt =
                            static_cast<std::size_t>(read_scalar_le(buf.data() + pos, p.count_type));
                        pos += csz;
                        const std::size_t vsz = scalar_size(p.type);
                        if (pos + cnt * vsz > buf.size())
                            throw FormatError(path.string() + ": truncated binary data at offset " +
                                              std::to_string(pos));
                        if (static_cast<int>(pi) == fi) {
                            poly.resize(cnt);
                            for (std::size_t k = 0; k < cnt; ++k)
                                poly[k] = static_cast<std::int64_t>(
                                    read_scalar_le(buf.data() + pos + k * vsz, p.type));
                        }
                        pos += cnt * vsz;
                    } else {
                        const std::size_t vsz = scalar_size(p.type);
                        if (pos + vsz > buf.size())
                            throw FormatError(path.string() + ": truncated binary data at offset " +
                                              std::to_string(pos));
                        const double val = read_scalar_le(buf.data() + pos, p.type);
                        pos += vsz;
                        if (static_cast<int>(pi) == xi) v.x() = val;
                        if (static_cast<int>(pi) == yi) v.y() = val;
                        if (static_cast<int>(pi) == zi) v.z() = val;
                    }
                }
                if (is_vertex) mesh.vertices.push_back(v);
                if (is_face) append_face_fan(mesh, poly, face_no++);
            }
        }
    }
    mesh.validate();
    return mesh;
}

TriMesh load_obj(const std::string& buf, const std::filesystem::path& path) {
    TriMesh mesh;
    std::size_t pos = 0, line_no = 0;
    std::string line;
    std::size_t face_no = 0;
    while (next_line(buf, pos, line)) {
        ++line_no;
        const auto toks = split_ws(line);
        if (toks.empty() || toks[0][0] == '#') continue;
        if (toks[0] == "v") {
            if (toks.size() < 4)
                throw FormatError(path.string() + ":" + std::to_string(line_no) +
                                  ": vertex record needs 3 coordinates");
            try {
                mesh.vertices.emplace_back(std::stod(toks[1]), std::stod(toks[2]), std::stod(toks[3]));
            } catch (const std::exception&) {
                throw FormatError(path.string() + ":" + std::to_string(line_no) +
                                  ": bad vertex coordinate");
            }
        } else if (toks[0] == "f") {
            std::vector<std::int64_t> poly;
            for (std::size_t i = 1; i < toks.size(); ++i) {
                // "i", "i/t", "i/t/n", "i//n"; negative indices count from the end.
                const std::string& ref = toks[i];
                std::int64_t idx = 0;
                const auto slash = ref.find('/');
                const std::string first = slash == std::string::npos ? ref : ref.substr(0, slash);
                const auto [p, ec] = std::from_chars(first.data(), first.data() + first.size(), idx);
                if (ec != std::errc() || p != first.data() + first.size())
                    throw FormatError(path.string() + ":" + std::to_string(line_no) +
                                      ": bad face index '" + ref + "'");
                if (idx < 0)
                    idx = static_cast<std::int64_t>(mesh.vertices.size()) + idx;
                else
                    idx -= 1; // OBJ is 1-based
                poly.push_back(idx);
            }
            append_face_fan(mesh, poly, face_no++);
        }
        // other records (vn, vt, usemtl, ...) are ignored
    }
    mesh.validate();
    return mesh;
}

} // namespace

MeshFormat format_from_path(const std::filesystem::path& path) {
    std::string ext = path.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (ext == ".ply") return MeshFormat::PLY;
    if (ext == ".obj") return MeshFormat::OBJ;
    throw ArgumentError("cannot infer mesh format from extension '" + ext + "'");
}

TriMesh load_mesh(const std::filesystem::path& path, MeshFormat format) {
    const std::string buf = read_file(path);
    return format == MeshFormat::PLY ? load_ply(buf, path) : load_obj(buf, path);
}

void atomic_write_binary(const std::filesystem::path& path, const std::string& content) {
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open '" + tmp.string() + "' for writing");
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!out) throw IoError("write failed for '" + tmp.string() + "'");
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::filesystem::remove(tmp);
        throw IoError("cannot rename '" + tmp.string() + "' to '" + path.string() + "': " +
                      ec.message());
    }
}

void atomic_write_text(const std::filesystem::path& path, const std::string& content) {
    atomic_write_binary(path, content);
}

void save_mesh(const TriMesh& mesh, const std::filesystem::path& path, MeshFormat format,
               bool ascii) {
    mesh.validate();
    std::string out;
    if (format == MeshFormat::PLY) {
        std::ostringstream head;
        head << "ply\nformat " << (ascii ? "ascii" : "binary_little_endian") << " 1.0\n"
             << "element vertex " << mesh.vertex_count() << "\n"
             << "property double x\nproperty double y\nproperty double z\n"
             << "element face " << mesh.face_count() << "\n"
             << "property list uchar int vertex_indices\nend_header\n";
        out = head.str();
        if (ascii) {
            std::ostringstream body;
            body.precision(17);
            for (const Vec3& v : mesh.vertices) body << v.x() << " " << v.y() << " " << v.z() << "\n";
            for (const Face& f : mesh.faces) body << "3 " << f[0] << " " << f[1] << " " << f[2] << "\n";
            out += body.str();
        } else {
            out.reserve(out.size() + mesh.vertex_count() * 24 + mesh.face_count() * 13);
            for (const Vec3& v : mesh.vertices) {
                for (int k = 0; k < 3; ++k) {
                    const double d = v[k];
                    out.append(reinterpret_cast<const char*>(&d), sizeof(double));
                }
            }
            for (const Face& f : mesh.faces) {
                const unsigned char n = 3;
                out.append(reinterpret_cast<const char*>(&n), 1);
                for (int k = 0; k < 3; ++k)
                    out.append(reinterpret_cast<const char*>(&f[k]), sizeof(std::int32_t));
            }
        }
    } else {
        std::ostringstream body;
        body.precision(17);
        for (const Vec3& v : mesh.vertices) body << "v " << v.x() << " " << v.y() << " " << v.z() << "\n";
        for (const Face& f : mesh.faces)
            body << "f " << f[0] + 1 << " " << f[1] + 1 << " " << f[2] + 1 << "\n";
        out = body.str();
    }
    atomic_write_binary(path, out);
}

LandmarkSet load_landmarks(const std::filesystem::path& path) {
    const std::string buf = read_file(path);
    nlohmann::ordered_json j;
    try {
        j = nlohmann::ordered_json::parse(buf);
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
    if (!j.is_object()) throw FormatError(path.string() + ": landmark file must be a JSON object");
    LandmarkSet out;
    for (const auto& [name, val] : j.items()) {
        if (!val.is_array() || val.size() != 3)
            throw FormatError(path.string() + ": landmark '" + name + "' must be [x, y, z]");
        out.set(name, Vec3(val[0].get<double>(), val[1].get<double>(), val[2].get<double>()));
    }
    out.validate();
    return out;
}

void save_landmarks(const LandmarkSet& landmarks, const std::filesystem::path& path) {
    landmarks.validate();
    nlohmann::ordered_json j = nlohmann::ordered_json::object();
    for (const auto& [name, p] : landmarks.entries()) j[name] = {p.x(), p.y(), p.z()};
    atomic_write_text(path, j.dump(2) + "\n");
}

} // namespace femur
