#include "splatctl/io/ply.hpp"

#include "splatctl/error.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <unordered_map>

namespace splatctl {

static_assert(std::endian::native == std::endian::little, "PLY IO assumes a little-endian host");

namespace {

enum class Type { I8, U8, I16, U16, I32, U32, F32, F64 };

struct Property {
    std::string name;
    Type type;
};

struct Header {
    std::size_t vertex_count = 0;
    std::vector<Property> props;
    std::size_t stride = 0;
    std::vector<std::string> comments;
};

std::size_t type_size(Type t) {
    switch (t) {
    case Type::I8:
    case Type::U8: return 1;
    case Type::I16:
    case Type::U16: return 2;
    case Type::I32:
    case Type::U32:
    case Type::F32: return 4;
    case Type::F64: return 8;
    }
    return 0;
}

bool parse_type(const std::string& s, Type& t) {
    static const std::unordered_map<std::string, Type> table{
        {"char", Type::I8},     {"int8", Type::I8},    {"uchar", Type::U8},   {"uint8", Type::U8},
        {"short", Type::I16},   {"int16", Type::I16},  {"ushort", Type::U16}, {"uint16", Type::U16},
        {"int", Type::I32},     {"int32", Type::I32},  {"uint", Type::U32},   {"uint32", Type::U32},
        {"float", Type::F32},   {"float32", Type::F32}, {"double", Type::F64}, {"float64", Type::F64}};
    const auto it = table.find(s);
    if (it == table.end()) return false;
    t = it->second;
    return true;
}

double read_scalar(const char* p, Type t) {
    switch (t) {
    case Type::I8: return static_cast<double>(*reinterpret_cast<const std::int8_t*>(p));
    case Type::U8: return static_cast<double>(*reinterpret_cast<const std::uint8_t*>(p));
    case Type::I16: { std::int16_t v; std::memcpy(&v, p, 2); return v; }
    case Type::U16: { std::uint16_t v; std::memcpy(&v, p, 2); return v; }
    case Type::I32: { std::int32_t v; std::memcpy(&v, p, 4); return v; }
    case Type::U32: { std::uint32_t v; std::memcpy(&v, p, 4); return v; }
    case Type::F32: { float v; std::memcpy(&v, p, 4); return v; }
    case Type::F64: { double v; std::memcpy(&v, p, 8); return v; }
    }
    return 0.0;
}

// Parses up to and including "end_header". Only a single binary
// little-endian vertex element is accepted.
Header read_header(std::istream& in, const std::string& where) {
    std::string line;
    if (!std::getline(in, line) || line != "ply") throw PlyHeaderError(where + ": missing 'ply' magic");
    Header h;
    bool format_ok = false;
    bool in_vertex = false;
    bool seen_vertex = false;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::istringstream ls(line);
        std::string kw;
        ls >> kw;
        if (kw == "comment") {
            std::string rest;
            std::getline(ls >> std::ws, rest);
            h.comments.push_back(rest);
            continue;
        }
        if (kw.empty() || kw == "obj_info") continue;
        if (kw == "end_header") {
            if (!format_ok) throw PlyHeaderError(where + ": missing or unsupported format line");
            if (!seen_vertex) throw PlyHeaderError(where + ": no vertex element");
            for (const auto& p : h.props) h.stride += type_size(p.type);
            return h;
        }
        if (kw == "format") {
            std::string fmt_name, version;
            ls >> fmt_name >> version;
            if (fmt_name != "binary_little_endian" || version != "1.0") {
                throw PlyHeaderError(where + ": unsupported format '" + fmt_name + " " + version + "'");
            }
            format_ok = true;
        } else if (kw == "element") {
            std::string name;
            long long count = -1;
            ls >> name >> count;
            if (!ls || count < 0) throw PlyHeaderError(where + ": malformed element line");
            if (name == "vertex") {
                if (seen_vertex) throw PlyHeaderError(where + ": duplicate vertex element");
                seen_vertex = true;
                in_vertex = true;
                h.vertex_count = static_cast<std::size_t>(count);
            } else {
                if (count != 0) throw PlyHeaderError(where + ": unsupported element '" + name + "'");
                in_vertex = false;
            }
        } else if (kw == "property") {
            std::string type_name, name;
            ls >> type_name;
            if (type_name == "list") throw PlyHeaderError(where + ": list properties are not supported");
            ls >> name;
            Type t;
            if (!ls || !parse_type(type_name, t)) throw PlyHeaderError(where + ": malformed property line");
            if (!in_vertex) throw PlyHeaderError(where + ": property outside the vertex element");
            h.props.push_back({name, t});
        } else {
            throw PlyHeaderError(where + ": unknown header keyword '" + kw + "'");
        }
    }
    throw PlyHeaderError(where + ": header not terminated");
}

std::vector<char> read_body(std::istream& in, const Header& h, const std::string& where) {
    std::vector<char> body(h.vertex_count * h.stride);
    in.read(body.data(), static_cast<std::streamsize>(body.size()));
    if (static_cast<std::size_t>(in.gcount()) != body.size()) {
        throw PlyTruncatedError(fmt::format("{}: expected {} vertex bytes, found {}", where, body.size(), in.gcount()));
    }
    return body;
}

constexpr const char* kActiveDegreeComment = "active_sh_degree";

int degree_from_rest(std::size_t rest) {
    for (int d = 0; d <= 8; ++d) {
        if (3 * static_cast<std::size_t>(sh_band_count(d) - 1) == rest) return d;
    }
    return -1;
}

} // namespace

std::vector<std::string> gaussian_ply_properties(int max_sh_degree) {
    std::vector<std::string> names{"x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"};
    const int rest = 3 * (sh_band_count(max_sh_degree) - 1);
    for (int i = 0; i < rest; ++i) names.push_back(fmt::format("f_rest_{}", i));
    for (const char* n : {"opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"}) {
        names.emplace_back(n);
    }
    return names;
}

void export_ply(const GaussianSet& set, const std::filesystem::path& path, PlyScalar scalar) {
    set.check_shapes();
    const auto names = gaussian_ply_properties(set.max_sh_degree());
    const bool f64 = scalar == PlyScalar::Float64;
    std::string header = fmt::format("ply\nformat binary_little_endian 1.0\ncomment {} {}\nelement vertex {}\n",
                                     kActiveDegreeComment, set.active_sh_degree, set.size());
    for (const auto& n : names) header += fmt::format("property {} {}\n", f64 ? "double" : "float", n);
    header += "end_header\n";

    const std::size_t bands = static_cast<std::size_t>(set.bands());
    std::vector<double> row(names.size());
    std::vector<char> body;
    body.reserve(set.size() * names.size() * (f64 ? 8 : 4));
    for (std::size_t i = 0; i < set.size(); ++i) {
        std::size_t k = 0;
        for (int a = 0; a < 3; ++a) row[k++] = set.positions[3 * i + a];
        for (int a = 0; a < 3; ++a) row[k++] = 0.0;
        const auto sh = set.sh_of(i);
        for (std::size_t c = 0; c < 3; ++c) row[k++] = sh[c * bands];
        for (std::size_t c = 0; c < 3; ++c) {
            for (std::size_t b = 1; b < bands; ++b) row[k++] = sh[c * bands + b];
        }
        row[k++] = set.opacity_logits[i];
        for (int a = 0; a < 3; ++a) row[k++] = set.log_scales[3 * i + a];
        for (int a = 0; a < 4; ++a) row[k++] = set.rotations[4 * i + a];
        for (double v : row) {
            char buf[8];
            if (f64) {
                std::memcpy(buf, &v, 8);
                body.insert(body.end(), buf, buf + 8);
            } else {
                const float f = static_cast<float>(v);
                std::memcpy(buf, &f, 4);
                body.insert(body.end(), buf, buf + 4);
            }
        }
    }

    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot create PLY: " + path.string());
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    out.write(body.data(), static_cast<std::streamsize>(body.size()));
    if (!out) throw DataError("write failed: " + path.string());
}

GaussianSet import_ply(const std::filesystem::path& path) {
    const std::string where = path.string();
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open PLY: " + where);
    const Header h = read_header(in, where);

    std::size_t rest = 0;
    for (const auto& p : h.props) rest += p.name.rfind("f_rest_", 0) == 0 ? 1 : 0;
    const int degree = degree_from_rest(rest);
    if (degree < 0) throw PlyPropertyError(fmt::format("{}: {} f_rest properties match no SH degree", where, rest));
    const auto expected = gaussian_ply_properties(degree);
    if (h.props.size() != expected.size()) {
        throw PlyPropertyError(fmt::format("{}: expected {} properties, found {}", where, expected.size(), h.props.size()));
    }
    for (std::size_t k = 0; k < expected.size(); ++k) {
        if (h.props[k].name != expected[k]) {
            throw PlyPropertyError(fmt::format("{}: property {} is '{}', expected '{}'", where, k, h.props[k].name, expected[k]));
        }
        if (h.props[k].type != Type::F32 && h.props[k].type != Type::F64) {
            throw PlyPropertyError(fmt::format("{}: property '{}' is not floating point", where, expected[k]));
        }
    }
    const std::vector<char> body = read_body(in, h, where);

    GaussianSet set(degree);
    set.reserve(h.vertex_count);
    const std::size_t bands = static_cast<std::size_t>(set.bands());
    std::vector<std::size_t> offsets(h.props.size());
    for (std::size_t k = 1; k < h.props.size(); ++k) offsets[k] = offsets[k - 1] + type_size(h.props[k - 1].type);
    RawGaussian g;
    g.sh.assign(3 * bands, 0.0);
    for (std::size_t i = 0; i < h.vertex_count; ++i) {
        const char* base = body.data() + i * h.stride;
        auto at = [&](std::size_t k) { return read_scalar(base + offsets[k], h.props[k].type); };
        std::size_t k = 0;
        for (int a = 0; a < 3; ++a) g.position[a] = at(k++);
        k += 3;
        for (std::size_t c = 0; c < 3; ++c) g.sh[c * bands] = at(k++);
        for (std::size_t c = 0; c < 3; ++c) {
            for (std::size_t b = 1; b < bands; ++b) g.sh[c * bands + b] = at(k++);
        }
        g.opacity_logit = at(k++);
        for (int a = 0; a < 3; ++a) g.log_scale[a] = at(k++);
        for (int a = 0; a < 4; ++a) g.rotation[a] = at(k++);
        set.append(g);
    }
    set.active_sh_degree = degree;
    for (const auto& c : h.comments) {
        std::istringstream cs(c);
        std::string key;
        int d = -1;
        if (cs >> key >> d && key == kActiveDegreeComment && d >= 0 && d <= degree) set.active_sh_degree = d;
    }
    return set;
}

void write_points_ply(const std::filesystem::path& path, const std::vector<Vec3>& points,
                      const std::vector<Vec3>& colors) {
    if (!colors.empty() && colors.size() != points.size()) throw ShapeError("point and color counts differ");
    std::string header = fmt::format("ply\nformat binary_little_endian 1.0\nelement vertex {}\n"
                                     "property float x\nproperty float y\nproperty float z\n",
                                     points.size());
    if (!colors.empty()) header += "property uchar red\nproperty uchar green\nproperty uchar blue\n";
    header += "end_header\n";
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot create PLY: " + path.string());
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    for (std::size_t i = 0; i < points.size(); ++i) {
        for (int a = 0; a < 3; ++a) {
            const float f = static_cast<float>(points[i][a]);
            out.write(reinterpret_cast<const char*>(&f), 4);
        }
        if (!colors.empty()) {
            for (int a = 0; a < 3; ++a) {
                const auto u = static_cast<unsigned char>(std::lround(std::clamp(colors[i][a], 0.0, 1.0) * 255.0));
                out.put(static_cast<char>(u));
            }
        }
    }
    if (!out) throw DataError("write failed: " + path.string());
}

void read_points_ply(const std::filesystem::path& path, std::vector<Vec3>& points, std::vector<Vec3>& colors) {
    const std::string where = path.string();
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open PLY: " + where);
    const Header h = read_header(in, where);
    auto find = [&](const char* name) -> long {
        for (std::size_t k = 0; k < h.props.size(); ++k) {
            if (h.props[k].name == name) return static_cast<long>(k);
        }
        return -1;
    };
    const long ix[3] = {find("x"), find("y"), find("z")};
    const long ic[3] = {find("red"), find("green"), find("blue")};
    if (ix[0] < 0 || ix[1] < 0 || ix[2] < 0) throw PlyPropertyError(where + ": missing x/y/z");
    const bool has_color = ic[0] >= 0 && ic[1] >= 0 && ic[2] >= 0;
    const std::vector<char> body = read_body(in, h, where);
    std::vector<std::size_t> offsets(h.props.size());
    for (std::size_t k = 1; k < h.props.size(); ++k) offsets[k] = offsets[k - 1] + type_size(h.props[k - 1].type);

    points.resize(h.vertex_count);
    colors.resize(h.vertex_count);
    for (std::size_t i = 0; i < h.vertex_count; ++i) {
        const char* base = body.data() + i * h.stride;
        for (int a = 0; a < 3; ++a) points[i][a] = read_scalar(base + offsets[ix[a]], h.props[ix[a]].type);
        for (int a = 0; a < 3; ++a) {
            if (!has_color) {
                colors[i][a] = 0.5;
                continue;
            }
            const Type t = h.props[ic[a]].type;
            const double v = read_scalar(base + offsets[ic[a]], t);
            colors[i][a] = (t == Type::F32 || t == Type::F64) ? v : v / 255.0;
        }
    }
}

} // namespace splatctl
