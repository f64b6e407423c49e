#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "femur/mesh_io.hpp"
#include "femur/synthetic.hpp"
#include "helpers.hpp"

using namespace femur;
using namespace testutil;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
    const fs::path d = fs::temp_directory_path() / "femur_io_tests";
    fs::create_directories(d);
    return d;
}

void write_file(const fs::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    out << text;
}

const char* kTetraPly =
    "ply\n"
    "format ascii 1.0\n"
    "element vertex 4\n"
    "property float x\n"
    "property float y\n"
    "property float z\n"
    "element face 4\n"
    "property list uchar int vertex_indices\n"
    "end_header\n"
    "0 0 0\n1 0 0\n0 1 0\n0 0 1\n"
    "3 0 2 1\n3 0 1 3\n3 0 3 2\n3 1 2 3\n";

} // namespace

TEST_CASE("ASCII PLY tetrahedron parses") {
    const fs::path p = temp_dir() / "tetra.ply";
    write_file(p, kTetraPly);
    const TriMesh m = load_mesh(p);
    CHECK(m.vertex_count() == 4);
    CHECK(m.face_count() == 4);
    CHECK((m.vertices[3] - Vec3(0, 0, 1)).norm() == 0.0);
    CHECK(m.faces[0] == Face{0, 2, 1});
}

TEST_CASE("OBJ gives the same connectivity as the equivalent PLY") {
    const fs::path pp = temp_dir() / "tetra2.ply";
    const fs::path po = temp_dir() / "tetra2.obj";
    write_file(pp, kTetraPly);
    write_file(po,
               "v 0 0 0\nv 1 0 0\nv 0 1 0\nv 0 0 1\n"
               "f 1 3 2\nf 1 2 4\nf 1 4 3\nf 2 3 4\n");
    const TriMesh a = load_mesh(pp);
    const TriMesh b = load_mesh(po);
    CHECK(a.faces == b.faces);
    for (std::size_t i = 0; i < 4; ++i) CHECK((a.vertices[i] - b.vertices[i]).norm() == 0.0);
}

TEST_CASE("OBJ face index variants and negatives") {
    const fs::path p = temp_dir() / "variants.obj";
    write_file(p,
               "v 0 0 0\nv 1 0 0\nv 0 1 0\n"
               "f 1/1 2/2 3/3\n"
               "f 1//1 2//2 3//3\n"
               "f -3 -2 -1\n");
    const TriMesh m = load_mesh(p);
    REQUIRE(m.face_count() == 3);
    for (const Face& f : m.faces) CHECK(f == Face{0, 1, 2});
}

TEST_CASE("quad faces fan-triangulate") {
    const fs::path p = temp_dir() / "quad.obj";
    write_file(p, "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n");
    const TriMesh m = load_mesh(p);
    REQUIRE(m.face_count() == 2);
    CHECK(m.faces[0] == Face{0, 1, 2});
    CHECK(m.faces[1] == Face{0, 2, 3});
}

TEST_CASE("out-of-range face index is a validation error naming the face") {
    const fs::path p = temp_dir() / "badface.ply";
    write_file(p,
               "ply\nformat ascii 1.0\nelement vertex 4\n"
               "property float x\nproperty float y\nproperty float z\n"
               "element face 1\nproperty list uchar int vertex_indices\nend_header\n"
               "0 0 0\n1 0 0\n0 1 0\n0 0 1\n"
               "3 0 1 9\n");
    try {
        load_mesh(p);
        FAIL("expected an exception");
    } catch (const ValidationError& e) {
        CHECK(std::string(e.what()).find("face 0") != std::string::npos);
    }
}

TEST_CASE("garbage input is a format error") {
    const fs::path p = temp_dir() / "garbage.ply";
    write_file(p, "not a ply at all\n");
    CHECK_THROWS_AS(load_mesh(p), FormatError);
    CHECK_THROWS_AS(load_mesh(temp_dir() / "does_not_exist.ply"), IoError);
    CHECK_THROWS_AS(format_from_path("mesh.stl"), ArgumentError);
}

TEST_CASE("round trips") {
    const TriMesh tet = unit_tetrahedron();
    SUBCASE("binary PLY is exact") {
        const fs::path p = temp_dir() / "rt.ply";
        save_mesh(tet, p);
        const TriMesh back = load_mesh(p);
        CHECK(back.faces == tet.faces);
        for (std::size_t i = 0; i < tet.vertices.size(); ++i)
            CHECK((back.vertices[i] - tet.vertices[i]).norm() == 0.0);
    }
    SUBCASE("ASCII PLY within 1e-6") {
        const fs::path p = temp_dir() / "rt_ascii.ply";
        save_mesh(tet, p, MeshFormat::PLY, true);
        const TriMesh back = load_mesh(p);
        CHECK(back.faces == tet.faces);
        for (std::size_t i = 0; i < tet.vertices.size(); ++i)
            CHECK((back.vertices[i] - tet.vertices[i]).norm() < 1e-6);
    }
    SUBCASE("OBJ within 1e-6") {
        const fs::path p = temp_dir() / "rt.obj";
        save_mesh(tet, p);
        const TriMesh back = load_mesh(p);
        CHECK(back.faces == tet.faces);
        for (std::size_t i = 0; i < tet.vertices.size(); ++i)
            CHECK((back.vertices[i] - tet.vertices[i]).norm() < 1e-6);
    }
    SUBCASE("synthetic femur with ~5000 vertices: deviation <= 1e-6 mm") {
        const SyntheticShape shape = generate_synthetic_femur(SyntheticFemurParams{});
        REQUIRE(shape.mesh.vertex_count() > 4000);
        const fs::path p = temp_dir() / "femur_rt.ply";
        save_mesh(shape.mesh, p);
        const TriMesh back = load_mesh(p);
        REQUIRE(back.vertex_count() == shape.mesh.vertex_count());
        CHECK(back.faces == shape.mesh.faces);
        double worst = 0.0;
        for (std::size_t i = 0; i < back.vertex_count(); ++i)
            worst = std::max(worst, (back.vertices[i] - shape.mesh.vertices[i]).norm());
        CHECK(worst <= 1e-6);
    }
}

TEST_CASE("unwritable path is an I/O error") {
    CHECK_THROWS_AS(save_mesh(unit_tetrahedron(), "/no_such_dir/x/y/z.ply"), IoError);
}

TEST_CASE("landmark JSON round trip preserves order and unknown names") {
    LandmarkSet lms;
    lms.set("zeta", Vec3(1, 2, 3));
    lms.set("alpha", Vec3(-4.5, 0.25, 1e-8));
    lms.set("custom_point", Vec3(0, 0, 0));
    const fs::path p = temp_dir() / "lms.json";
    save_landmarks(lms, p);
    const LandmarkSet back = load_landmarks(p);
    REQUIRE(back.size() == 3);
    CHECK(back.entries()[0].first == "zeta");
    CHECK(back.entries()[2].first == "custom_point");
    for (const auto& [name, pos] : lms.entries())
        CHECK((back.at(name) - pos).norm() < 1e-12);

    write_file(p, "{\"a\": [1, 2]}\n");
    CHECK_THROWS_AS(load_landmarks(p), FormatError);
}

TEST_CASE("binary little-endian PLY with float coordinates loads") {
    // header advertises float32; write the payload manually
    const fs::path p = temp_dir() / "f32.ply";
    std::ofstream out(p, std::ios::binary);
    out << "ply\nformat binary_little_endian 1.0\nelement vertex 3\n"
           "property float x\nproperty float y\nproperty float z\n"
           "element face 1\nproperty list uchar int vertex_indices\nend_header\n";
    const float verts[9] = {0, 0, 0, 1, 0, 0, 0, 1, 0};
    out.write(reinterpret_cast<const char*>(verts), sizeof(verts));
    const unsigned char n = 3;
    const std::int32_t f[3] = {0, 1, 2};
    out.write(reinterpret_cast<const char*>(&n), 1);
    out.write(reinterpret_cast<const char*>(f), sizeof(f));
    out.close();
    const TriMesh m = load_mesh(p);
    REQUIRE(m.vertex_count() == 3);
    CHECK((m.vertices[1] - Vec3(1, 0, 0)).norm() == 0.0);
    CHECK(m.faces[0] == Face{0, 1, 2});
}
