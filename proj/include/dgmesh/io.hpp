#pragma once

#include <algorithm>
#include <bit>
#include <cerrno>
#include <charconv>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "core.hpp"
#include "mesh.hpp"

namespace dgm
{
    static_assert(std::endian::native == std::endian::little, "binary PLY support assumes a little-endian host");

    inline std::string read_file(const std::filesystem::path & path)
    {
        std::error_code ec;
        if (!std::filesystem::is_regular_file(path, ec))
            throw Error(ErrorKind::FileNotFound, "no such file: " + path.string());
        std::ifstream in(path, std::ios::binary);
        if (!in)
            throw Error(ErrorKind::IoError, "cannot open " + path.string());
        std::ostringstream ss;
        ss << in.rdbuf();
        return ss.str();
    }

    inline void write_file(const std::filesystem::path & path, std::string_view data)
    {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        if (!out)
            throw Error(ErrorKind::IoError, "cannot write " + path.string());
        out.write(data.data(), static_cast<std::streamsize>(data.size()));
        if (!out)
            throw Error(ErrorKind::IoError, "write failed for " + path.string());
    }

    /// Shortest text for v with 9 significant digits ("%.9g").
    inline std::string format_g9(double v)
    {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.9g", v);
        return buf;
    }

    /// Round-trip exact text for v.
    inline std::string format_exact(double v)
    {
        char buf[32];
        auto res = std::to_chars(buf, buf + sizeof buf, v);
        return std::string(buf, res.ptr);
    }

    enum class PlyFormat
    {
        ascii,
        binary_little_endian,
    };

    namespace detail
    {
        enum class PlyType
        {
            int8,
            uint8,
            int16,
            uint16,
            int32,
            uint32,
            float32,
            float64,
        };

        inline bool parse_ply_type(std::string_view s, PlyType & out)
        {
            struct Entry
            {
                std::string_view name;
                PlyType type;
            };
            static constexpr Entry table[] = {
                {"char", PlyType::int8},     {"int8", PlyType::int8},       {"uchar", PlyType::uint8},
                {"uint8", PlyType::uint8},   {"short", PlyType::int16},     {"int16", PlyType::int16},
                {"ushort", PlyType::uint16}, {"uint16", PlyType::uint16},   {"int", PlyType::int32},
                {"int32", PlyType::int32},   {"uint", PlyType::uint32},     {"uint32", PlyType::uint32},
                {"float", PlyType::float32}, {"float32", PlyType::float32}, {"double", PlyType::float64},
                {"float64", PlyType::float64},
            };
            for (const auto & e : table)
                if (e.name == s)
                {
                    out = e.type;
                    return true;
                }
            return false;
        }

        inline std::size_t ply_type_size(PlyType t)
        {
            switch (t)
            {
                case PlyType::int8:
                case PlyType::uint8: return 1;
                case PlyType::int16:
                case PlyType::uint16: return 2;
                case PlyType::int32:
                case PlyType::uint32:
                case PlyType::float32: return 4;
                case PlyType::float64: return 8;
            }
            return 0;
        }

        struct PlyProperty
        {
            std::string name;
            PlyType type = PlyType::float32;
            bool is_list = false;
            PlyType count_type = PlyType::uint8;
        };

        struct PlyElement
        {
            std::string name;
            std::uint64_t count = 0;
            std::vector<PlyProperty> properties;

            int find(std::string_view prop) const
            {
                for (std::size_t i = 0; i < properties.size(); ++i)
                    if (properties[i].name == prop)
                        return static_cast<int>(i);
                return -1;
            }
        };

        struct PlyHeader
        {
            PlyFormat format = PlyFormat::ascii;
            std::vector<PlyElement> elements;
            std::size_t body_offset = 0;
        };

        inline std::vector<std::string_view> split_ws(std::string_view line)
        {
            std::vector<std::string_view> out;
            std::size_t i = 0;
            while (i < line.size())
            {
                while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r'))
                    ++i;
                std::size_t j = i;
                while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r')
                    ++j;
                if (j > i)
                    out.push_back(line.substr(i, j - i));
                i = j;
            }
            return out;
        }

        inline PlyHeader parse_ply_header(std::string_view data)
        {
            PlyHeader h;
            std::size_t pos = 0;
            bool saw_format = false;
            int line_no = 0;
            for (;;)
            {
                const std::size_t line_start = pos;
                const std::size_t nl = data.find('\n', pos);
                if (nl == std::string_view::npos)
                    throw Error(ErrorKind::MalformedHeader, "header is not terminated by end_header", std::nullopt, line_start);
                const std::string_view line = data.substr(pos, nl - pos);
                pos = nl + 1;
                const auto tok = split_ws(line);
                auto bad = [&](const std::string & why) {
                    return Error(ErrorKind::MalformedHeader, why, std::nullopt, line_start);
                };
                if (line_no++ == 0)
                {
                    if (tok.size() != 1 || tok[0] != "ply")
                        throw bad("file does not start with 'ply'");
                    continue;
                }
                if (tok.empty())
                    throw bad("empty header line");
                if (tok[0] == "comment" || tok[0] == "obj_info")
                    continue;
                if (tok[0] == "format")
                {
                    if (tok.size() != 3 || tok[2] != "1.0")
                        throw bad("malformed format line");
                    if (tok[1] == "ascii")
                        h.format = PlyFormat::ascii;
                    else if (tok[1] == "binary_little_endian")
                        h.format = PlyFormat::binary_little_endian;
                    else
                        throw bad("unsupported format '" + std::string(tok[1]) + "'");
                    saw_format = true;
                }
                else if (tok[0] == "element")
                {
                    if (tok.size() != 3)
                        throw bad("malformed element line");
                    PlyElement e;
                    e.name = std::string(tok[1]);
                    auto [p, ec] = std::from_chars(tok[2].data(), tok[2].data() + tok[2].size(), e.count);
                    if (ec != std::errc() || p != tok[2].data() + tok[2].size())
                        throw bad("element count is not a nonnegative integer");
                    h.elements.push_back(std::move(e));
                }
                else if (tok[0] == "property")
                {
                    if (h.elements.empty())
                        throw bad("property before any element");
                    PlyProperty prop;
                    if (tok.size() == 5 && tok[1] == "list")
                    {
                        prop.is_list = true;
                        if (!parse_ply_type(tok[2], prop.count_type) || !parse_ply_type(tok[3], prop.type))
                            throw bad("unknown property type");
                        if (prop.count_type == PlyType::float32 || prop.count_type == PlyType::float64)
                            throw bad("list count must be an integer type");
                        prop.name = std::string(tok[4]);
                    }
                    else if (tok.size() == 3)
                    {
                        if (!parse_ply_type(tok[1], prop.type))
                            throw bad("unknown property type '" + std::string(tok[1]) + "'");
                        prop.name = std::string(tok[2]);
                    }
                    else
                    {
                        throw bad("malformed property line");
                    }
                    h.elements.back().properties.push_back(std::move(prop));
                }
                else if (tok[0] == "end_header")
                {
                    if (!saw_format)
                        throw bad("missing format line");
                    h.body_offset = pos;
                    return h;
                }
                else
                {
                    throw bad("unknown header keyword '" + std::string(tok[0]) + "'");
                }
            }
        }

        template <class T>
        double load_le(const char * p)
        {
            T v;
            std::memcpy(&v, p, sizeof(T));
            return static_cast<double>(v);
        }

        inline double load_binary(PlyType t, const char * p)
        {
            switch (t)
            {
                case PlyType::int8: return load_le<std::int8_t>(p);
                case PlyType::uint8: return load_le<std::uint8_t>(p);
                case PlyType::int16: return load_le<std::int16_t>(p);
                case PlyType::uint16: return load_le<std::uint16_t>(p);
                case PlyType::int32: return load_le<std::int32_t>(p);
                case PlyType::uint32: return load_le<std::uint32_t>(p);
                case PlyType::float32: return load_le<float>(p);
                case PlyType::float64: return load_le<double>(p);
            }
            return 0.0;
        }

        /// Element records as rows of doubles; list properties expand in place
        /// (count followed by items).
        struct PlyBody
        {
            std::vector<std::vector<std::vector<double>>> elements;
        };

        class BodyReader
        {
        public:
            BodyReader(std::string_view data, std::size_t pos, PlyFormat format) : data_(data), pos_(pos), format_(format) {}

            std::size_t position() const { return pos_; }

            double scalar(PlyType t, std::size_t record_start)
            {
                if (format_ == PlyFormat::binary_little_endian)
                {
                    const std::size_t n = ply_type_size(t);
                    if (pos_ + n > data_.size())
                        throw Error(ErrorKind::TruncatedBody, "body ends inside a record", std::nullopt, record_start);
                    const double v = load_binary(t, data_.data() + pos_);
                    pos_ += n;
                    return v;
                }
                while (pos_ < data_.size() && is_space(data_[pos_]))
                    ++pos_;
                if (pos_ >= data_.size())
                    throw Error(ErrorKind::TruncatedBody, "body ends inside a record", std::nullopt, record_start);
                std::size_t end = pos_;
                while (end < data_.size() && !is_space(data_[end]))
                    ++end;
                double v = 0.0;
                auto [p, ec] = std::from_chars(data_.data() + pos_, data_.data() + end, v);
                if (ec != std::errc() || p != data_.data() + end)
                    throw Error(ErrorKind::MalformedHeader, "malformed number in body", std::nullopt, pos_);
                pos_ = end;
                return v;
            }

            /// Ascii records are one per line.
            void end_record()
            {
                if (format_ != PlyFormat::ascii)
                    return;
                while (pos_ < data_.size() && (data_[pos_] == ' ' || data_[pos_] == '\t' || data_[pos_] == '\r'))
                    ++pos_;
                if (pos_ < data_.size())
                {
                    if (data_[pos_] != '\n')
                        throw Error(ErrorKind::MalformedHeader, "record has more values than declared", std::nullopt, pos_);
                    ++pos_;
                }
            }

            bool at_end()
            {
                if (format_ == PlyFormat::ascii)
                    while (pos_ < data_.size() && is_space(data_[pos_]))
                        ++pos_;
                return pos_ >= data_.size();
            }

        private:
            static bool is_space(char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n'; }

            std::string_view data_;
            std::size_t pos_;
            PlyFormat format_;
        };

        inline PlyBody read_ply_body(std::string_view data, const PlyHeader & h)
        {
            PlyBody body;
            BodyReader r(data, h.body_offset, h.format);
            for (const auto & e : h.elements)
            {
                auto & rows = body.elements.emplace_back();
                rows.reserve(static_cast<std::size_t>(std::min<std::uint64_t>(e.count, 1u << 24)));
                for (std::uint64_t i = 0; i < e.count; ++i)
                {
                    if (r.at_end())
                        throw Error(ErrorKind::TruncatedBody,
                                    "element '" + e.name + "' declares " + std::to_string(e.count) + " records, found " +
                                        std::to_string(i),
                                    i, r.position());
                    const std::size_t start = r.position();
                    std::vector<double> row;
                    for (const auto & p : e.properties)
                    {
                        if (!p.is_list)
                        {
                            row.push_back(r.scalar(p.type, start));
                            continue;
                        }
                        const double n = r.scalar(p.count_type, start);
                        if (n < 0 || n > 1e6)
                            throw Error(ErrorKind::MalformedHeader, "implausible list length", i, start);
                        row.push_back(n);
                        for (int k = 0; k < static_cast<int>(n); ++k)
                            row.push_back(r.scalar(p.type, start));
                    }
                    r.end_record();
                    rows.push_back(std::move(row));
                }
            }
            return body;
        }

        inline int require_property(const PlyElement & e, std::string_view name)
        {
            const int k = e.find(name);
            if (k < 0)
                throw Error(ErrorKind::MissingProperty, "element '" + e.name + "' lacks property '" + std::string(name) + "'");
            if (e.properties[k].is_list)
                throw Error(ErrorKind::MissingProperty, "property '" + std::string(name) + "' must be scalar");
            return k;
        }
    }

    /**
     * Oriented point cloud from a PLY file with vertex properties
     * x y z nx ny nz. Parse errors report the byte offset of the offending
     * header line or, for a short body, of the first missing record.
     */
    inline OrientedPointCloud parse_ply_cloud(std::string_view data)
    {
        const auto h = detail::parse_ply_header(data);
        const auto body = detail::read_ply_body(data, h);
        std::size_t vi = h.elements.size();
        for (std::size_t e = 0; e < h.elements.size(); ++e)
            if (h.elements[e].name == "vertex")
                vi = e;
        if (vi == h.elements.size())
            throw Error(ErrorKind::MissingProperty, "file has no vertex element");
        const auto & el = h.elements[vi];
        for (const auto & p : el.properties)
            if (p.is_list)
                throw Error(ErrorKind::MissingProperty, "vertex element may not hold list properties");
        int cols[6];
        const char * names[6] = {"x", "y", "z", "nx", "ny", "nz"};
        for (int k = 0; k < 6; ++k)
            cols[k] = detail::require_property(el, names[k]);
        OrientedPointCloud cloud;
        for (const auto & row : body.elements[vi])
        {
            cloud.positions.emplace_back(row[cols[0]], row[cols[1]], row[cols[2]]);
            cloud.normals.emplace_back(row[cols[3]], row[cols[4]], row[cols[5]]);
        }
        for (std::size_t i = 0; i < cloud.size(); ++i)
            if (!cloud.positions[i].allFinite() || !cloud.normals[i].allFinite())
                throw Error(ErrorKind::InvalidArgument, "non-finite vertex", i);
        return cloud;
    }

    inline OrientedPointCloud import_ply(const std::filesystem::path & path) { return parse_ply_cloud(read_file(path)); }

    /// Doubles throughout; binary output is bit-exact, ascii uses round-trip text.
    inline std::string serialize_ply_cloud(const OrientedPointCloud & cloud, PlyFormat format)
    {
        cloud.validate();
        std::string out;
        out += "ply\n";
        out += format == PlyFormat::ascii ? "format ascii 1.0\n" : "format binary_little_endian 1.0\n";
        out += "element vertex " + std::to_string(cloud.size()) + "\n";
        for (const char * n : {"x", "y", "z", "nx", "ny", "nz"})
            out += std::string("property double ") + n + "\n";
        out += "end_header\n";
        for (std::size_t i = 0; i < cloud.size(); ++i)
        {
            const double v[6] = {cloud.positions[i].x(), cloud.positions[i].y(), cloud.positions[i].z(),
                                 cloud.normals[i].x(),   cloud.normals[i].y(),   cloud.normals[i].z()};
            if (format == PlyFormat::binary_little_endian)
            {
                out.append(reinterpret_cast<const char *>(v), sizeof v);
                continue;
            }
            for (int k = 0; k < 6; ++k)
            {
                out += format_exact(v[k]);
                out += k == 5 ? '\n' : ' ';
            }
        }
        return out;
    }

    inline void export_ply(const OrientedPointCloud & cloud, const std::filesystem::path & path,
                           PlyFormat format = PlyFormat::binary_little_endian)
    {
        write_file(path, serialize_ply_cloud(cloud, format));
    }

    enum class MeshFormat
    {
        obj,
        ply,
    };

    inline MeshFormat mesh_format_for(const std::filesystem::path & path)
    {
        auto ext = path.extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
        if (ext == ".obj")
            return MeshFormat::obj;
        if (ext == ".ply")
            return MeshFormat::ply;
        throw Error(ErrorKind::InvalidArgument, "unknown mesh extension '" + ext + "'");
    }

    /// Vertex coordinates with 9 significant digits; faces 1-based for OBJ.
    inline std::string serialize_mesh(const TriMesh & mesh, MeshFormat format)
    {
        std::string out;
        if (format == MeshFormat::obj)
        {
            out += "# dgmesh\n";
            for (const auto & v : mesh.vertices)
                out += "v " + format_g9(v.x()) + " " + format_g9(v.y()) + " " + format_g9(v.z()) + "\n";
            for (const auto & f : mesh.faces)
                out += "f " + std::to_string(f[0] + 1) + " " + std::to_string(f[1] + 1) + " " + std::to_string(f[2] + 1) +
                       "\n";
            return out;
        }
        out += "ply\nformat ascii 1.0\n";
        out += "element vertex " + std::to_string(mesh.vertices.size()) + "\n";
        out += "property double x\nproperty double y\nproperty double z\n";
        out += "element face " + std::to_string(mesh.faces.size()) + "\n";
        out += "property list uchar int vertex_indices\n";
        out += "end_header\n";
        for (const auto & v : mesh.vertices)
            out += format_g9(v.x()) + " " + format_g9(v.y()) + " " + format_g9(v.z()) + "\n";
        for (const auto & f : mesh.faces)
            out += "3 " + std::to_string(f[0]) + " " + std::to_string(f[1]) + " " + std::to_string(f[2]) + "\n";
        return out;
    }

    inline void export_mesh(const TriMesh & mesh, const std::filesystem::path & path)
    {
        write_file(path, serialize_mesh(mesh, mesh_format_for(path)));
    }

    /// OBJ subset: v and f records (polygons fan-triangulated, v/vt/vn accepted).
    inline TriMesh parse_obj(std::string_view data)
    {
        TriMesh mesh;
        std::size_t pos = 0;
        std::uint64_t line_no = 0;
        while (pos < data.size())
        {
            const std::size_t start = pos;
            std::size_t nl = data.find('\n', pos);
            if (nl == std::string_view::npos)
                nl = data.size();
            const auto tok = detail::split_ws(data.substr(pos, nl - pos));
            pos = nl + 1;
            ++line_no;
            if (tok.empty() || tok[0].front() == '#')
                continue;
            auto bad = [&](const std::string & why) { return Error(ErrorKind::MalformedHeader, why, line_no, start); };
            if (tok[0] == "v")
            {
                if (tok.size() < 4)
                    throw bad("vertex needs three coordinates");
                Vec3 v;
                for (int k = 0; k < 3; ++k)
                {
                    auto [p, ec] = std::from_chars(tok[k + 1].data(), tok[k + 1].data() + tok[k + 1].size(), v[k]);
                    if (ec != std::errc() || p != tok[k + 1].data() + tok[k + 1].size())
                        throw bad("malformed vertex coordinate");
                }
                mesh.vertices.push_back(v);
            }
            else if (tok[0] == "f")
            {
                if (tok.size() < 4)
                    throw bad("face needs at least three vertices");
                std::vector<int> idx;
                for (std::size_t k = 1; k < tok.size(); ++k)
                {
                    const auto ref = tok[k].substr(0, tok[k].find('/'));
                    long long i = 0;
                    auto [p, ec] = std::from_chars(ref.data(), ref.data() + ref.size(), i);
                    if (ec != std::errc() || p != ref.data() + ref.size() || i == 0)
                        throw bad("malformed face index");
                    const long long nv = static_cast<long long>(mesh.vertices.size());
                    const long long zero_based = i > 0 ? i - 1 : nv + i;
                    if (zero_based < 0 || zero_based >= nv)
                        throw bad("face index out of range");
                    idx.push_back(static_cast<int>(zero_based));
                }
                for (std::size_t k = 1; k + 1 < idx.size(); ++k)
                    mesh.faces.push_back({idx[0], idx[k], idx[k + 1]});
            }
        }
        return mesh;
    }

    /// Triangle mesh from PLY: vertex x y z and a face vertex_indices list.
    inline TriMesh parse_ply_mesh(std::string_view data)
    {
        const auto h = detail::parse_ply_header(data);
        const auto body = detail::read_ply_body(data, h);
        TriMesh mesh;
        bool have_vertices = false;
        for (std::size_t e = 0; e < h.elements.size(); ++e)
        {
            const auto & el = h.elements[e];
            if (el.name == "vertex")
            {
                have_vertices = true;
                const int x = detail::require_property(el, "x");
                const int y = detail::require_property(el, "y");
                const int z = detail::require_property(el, "z");
                for (const auto & row : body.elements[e])
                    mesh.vertices.emplace_back(row[x], row[y], row[z]);
            }
            else if (el.name == "face")
            {
                int list = el.find("vertex_indices");
                if (list < 0)
                    list = el.find("vertex_index");
                if (list < 0 || !el.properties[list].is_list)
                    throw Error(ErrorKind::MissingProperty, "face element lacks a vertex_indices list");
                for (std::size_t r = 0; r < body.elements[e].size(); ++r)
                {
                    const auto & row = body.elements[e][r];
                    // locate the list inside the flattened row
                    std::size_t at = 0;
                    for (int p = 0; p < list; ++p)
                        at += el.properties[p].is_list ? 1 + static_cast<std::size_t>(row[at]) : 1;
                    const int n = static_cast<int>(row[at]);
                    if (n < 3)
                        throw Error(ErrorKind::DegenerateMesh, "face with fewer than three vertices", r);
                    for (int k = 1; k + 1 < n; ++k)
                        mesh.faces.push_back({static_cast<int>(row[at + 1]), static_cast<int>(row[at + 1 + k]),
                                              static_cast<int>(row[at + 2 + k])});
                }
            }
        }
        if (!have_vertices)
            throw Error(ErrorKind::MissingProperty, "file has no vertex element");
        mesh.validate_indices();
        return mesh;
    }

    inline TriMesh import_mesh(const std::filesystem::path & path)
    {
        const auto fmt = mesh_format_for(path);
        const auto data = read_file(path);
        TriMesh mesh = fmt == MeshFormat::obj ? parse_obj(data) : parse_ply_mesh(data);
        mesh.validate_indices();
        return mesh;
    }
}
