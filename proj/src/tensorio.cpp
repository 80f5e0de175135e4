#include "fdbd/tensorio.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

static_assert(std::endian::native == std::endian::little,
              "payload I/O assumes a little-endian host");

namespace fdbd::tensorio {

namespace {

constexpr char kMagic[6] = {'\x93', 'N', 'U', 'M', 'P', 'Y'};

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    if (!in.good() && !in.eof()) throw IoError("read failed: " + path.string());
    return std::move(buf).str();
}

// Extracts the value after `key` in the header dict. The dict is the fixed
// repr form produced by standard tooling, so simple scanning suffices.
std::string dict_value(const std::string& header, const std::string& key,
                       const std::filesystem::path& path) {
    const std::string needle = "'" + key + "':";
    auto pos = header.find(needle);
    if (pos == std::string::npos)
        throw MagicMismatch("header missing '" + key + "': " + path.string());
    pos += needle.size();
    while (pos < header.size() && header[pos] == ' ') ++pos;
    std::size_t end = pos;
    if (pos < header.size() && header[pos] == '(') {
        end = header.find(')', pos);
        if (end == std::string::npos)
            throw MagicMismatch("unterminated shape tuple: " + path.string());
        ++end;
    } else {
        end = header.find(',', pos);
        if (end == std::string::npos) end = header.size();
    }
    return header.substr(pos, end - pos);
}

std::vector<Index> parse_shape(std::string tuple, const std::filesystem::path& path) {
    if (tuple.size() < 2 || tuple.front() != '(' || tuple.back() != ')')
        throw MagicMismatch("malformed shape tuple: " + path.string());
    tuple = tuple.substr(1, tuple.size() - 2);
    std::vector<Index> shape;
    std::size_t start = 0;
    while (start < tuple.size()) {
        auto comma = tuple.find(',', start);
        std::string tok = tuple.substr(start, comma == std::string::npos ? std::string::npos
                                                                         : comma - start);
        start = comma == std::string::npos ? tuple.size() : comma + 1;
        std::size_t a = tok.find_first_not_of(' ');
        if (a == std::string::npos) continue;  // trailing comma of a 1-tuple
        std::size_t b = tok.find_last_not_of(' ');
        tok = tok.substr(a, b - a + 1);
        try {
            shape.push_back(static_cast<Index>(std::stoll(tok)));
        } catch (const std::exception&) {
            throw MagicMismatch("bad shape entry '" + tok + "': " + path.string());
        }
        if (shape.back() < 0)
            throw MagicMismatch("negative shape entry: " + path.string());
    }
    if (shape.empty() || shape.size() > 2)
        throw UnsupportedLayout("rank " + std::to_string(shape.size()) +
                                " not supported: " + path.string());
    return shape;
}

struct Header {
    Dtype dtype;
    std::vector<Index> shape;
    std::size_t payload_offset;
};

Header parse_header(const std::string& raw, const std::filesystem::path& path) {
    if (raw.size() < 10 || std::memcmp(raw.data(), kMagic, 6) != 0)
        throw MagicMismatch("not an NPY file: " + path.string());
    const unsigned major = static_cast<unsigned char>(raw[6]);
    const unsigned minor = static_cast<unsigned char>(raw[7]);
    if (major != 1 || minor != 0)
        throw MagicMismatch("unsupported NPY version " + std::to_string(major) + "." +
                            std::to_string(minor) + ": " + path.string());
    const std::size_t hlen = static_cast<unsigned char>(raw[8]) |
                             (static_cast<std::size_t>(static_cast<unsigned char>(raw[9])) << 8);
    if (raw.size() < 10 + hlen)
        throw TruncatedPayload("header extends past end of file: " + path.string());
    const std::string header = raw.substr(10, hlen);

    const std::string descr = dict_value(header, "descr", path);
    Dtype dtype;
    if (descr == "'<f4'")
        dtype = Dtype::F32;
    else if (descr == "'<f8'")
        dtype = Dtype::F64;
    else
        throw UnsupportedDtype("dtype " + descr + " not supported: " + path.string());

    const std::string order = dict_value(header, "fortran_order", path);
    if (order != "False") {
        if (order == "True")
            throw UnsupportedLayout("fortran_order arrays not supported: " + path.string());
        throw MagicMismatch("bad fortran_order value: " + path.string());
    }

    return {dtype, parse_shape(dict_value(header, "shape", path), path), 10 + hlen};
}

void check_finite(const std::vector<double>& data, const std::filesystem::path& path) {
    for (double v : data)
        if (!std::isfinite(v))
            throw ValidationError("non-finite value in " + path.string());
}

}  // namespace

Index ArrayFile::size() const {
    Index n = 1;
    for (Index s : shape) n *= s;
    return n;
}

Matrix ArrayFile::to_matrix() const {
    if (rank() != 2) throw UnsupportedLayout("expected a rank-2 array");
    return Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                          Eigen::RowMajor>>(data.data(), rows(), cols());
}

Vector ArrayFile::to_vector() const {
    if (rank() != 1) throw UnsupportedLayout("expected a rank-1 array");
    return Eigen::Map<const Vector>(data.data(), rows());
}

ArrayFile ArrayFile::from_matrix(const Matrix& m, Dtype dtype) {
    ArrayFile arr;
    arr.dtype = dtype;
    arr.shape = {m.rows(), m.cols()};
    arr.data.resize(static_cast<std::size_t>(m.size()));
    Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        arr.data.data(), m.rows(), m.cols()) = m;
    return arr;
}

ArrayFile ArrayFile::from_vector(const Vector& v, Dtype dtype) {
    ArrayFile arr;
    arr.dtype = dtype;
    arr.shape = {v.size()};
    arr.data.assign(v.data(), v.data() + v.size());
    return arr;
}

ArrayFile read_array(const std::filesystem::path& path, bool allow_nonfinite) {
    const std::string raw = read_file(path);
    const Header h = parse_header(raw, path);

    ArrayFile arr;
    arr.dtype = h.dtype;
    arr.shape = h.shape;
    const std::size_t count = static_cast<std::size_t>(arr.size());
    const std::size_t need = count * itemsize(h.dtype);
    if (raw.size() - h.payload_offset < need)
        throw TruncatedPayload("expected " + std::to_string(need) + " payload bytes, got " +
                               std::to_string(raw.size() - h.payload_offset) + ": " +
                               path.string());

    arr.data.resize(count);
    const char* src = raw.data() + h.payload_offset;
    if (h.dtype == Dtype::F64) {
        std::memcpy(arr.data.data(), src, need);
    } else {
        for (std::size_t i = 0; i < count; ++i) {
            float f;
            std::memcpy(&f, src + 4 * i, 4);
            arr.data[i] = static_cast<double>(f);
        }
    }
    if (!allow_nonfinite) check_finite(arr.data, path);
    return arr;
}

ArrayInfo read_array_info(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::string raw(10, '\0');
    in.read(raw.data(), 10);
    if (in.gcount() < 10) throw MagicMismatch("not an NPY file: " + path.string());
    const std::size_t hlen = static_cast<unsigned char>(raw[8]) |
                             (static_cast<std::size_t>(static_cast<unsigned char>(raw[9])) << 8);
    raw.resize(10 + hlen);
    in.read(raw.data() + 10, static_cast<std::streamsize>(hlen));
    if (static_cast<std::size_t>(in.gcount()) < hlen)
        throw TruncatedPayload("header extends past end of file: " + path.string());
    const Header h = parse_header(raw, path);
    return {h.dtype, h.shape};
}

void write_array(const std::filesystem::path& path, const ArrayFile& arr,
                 bool allow_nonfinite) {
    if (arr.rank() < 1 || arr.rank() > 2)
        throw UnsupportedLayout("only rank-1 and rank-2 arrays can be written");
    if (arr.data.size() != static_cast<std::size_t>(arr.size()))
        throw ValidationError("shape/data size mismatch while writing " + path.string());
    if (!allow_nonfinite) check_finite(arr.data, path);

    std::ostringstream dict;
    dict << "{'descr': '" << (arr.dtype == Dtype::F32 ? "<f4" : "<f8")
         << "', 'fortran_order': False, 'shape': (";
    if (arr.rank() == 1)
        dict << arr.shape[0] << ",";
    else
        dict << arr.shape[0] << ", " << arr.shape[1];
    dict << "), }";

    std::string header = dict.str();
    // Preamble (magic + version + length field + header) is padded with
    // spaces to a 64-byte multiple; the final byte is '\n'.
    const std::size_t unpadded = 10 + header.size() + 1;
    header.append((64 - unpadded % 64) % 64, ' ');
    header.push_back('\n');
    if (header.size() > 0xFFFF)
        throw ValidationError("header too long for NPY v1.0: " + path.string());

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out.write(kMagic, 6);
    const char version[2] = {1, 0};
    out.write(version, 2);
    const char lenbytes[2] = {static_cast<char>(header.size() & 0xFF),
                              static_cast<char>((header.size() >> 8) & 0xFF)};
    out.write(lenbytes, 2);
    out.write(header.data(), static_cast<std::streamsize>(header.size()));

    if (arr.dtype == Dtype::F64) {
        out.write(reinterpret_cast<const char*>(arr.data.data()),
                  static_cast<std::streamsize>(arr.data.size() * 8));
    } else {
        std::vector<float> narrowed(arr.data.begin(), arr.data.end());
        out.write(reinterpret_cast<const char*>(narrowed.data()),
                  static_cast<std::streamsize>(narrowed.size() * 4));
    }
    if (!out.good()) throw IoError("write failed: " + path.string());
}

std::filesystem::path Manifest::at(const std::string& role) const {
    auto it = roles.find(role);
    if (it == roles.end()) throw MissingRole("manifest has no '" + role + "' entry");
    return it->second;
}

ArrayFile Manifest::load(const std::string& role) const { return read_array(at(role)); }

ArrayFile Manifest::load_ood(const std::string& name) const {
    auto it = ood_sets.find(name);
    if (it == ood_sets.end()) throw MissingRole("manifest has no OOD set '" + name + "'");
    return read_array(it->second);
}

Manifest load_manifest(const std::filesystem::path& path) {
    nlohmann::json doc;
    {
        std::ifstream in(path);
        if (!in) throw IoError("cannot open " + path.string());
        try {
            doc = nlohmann::json::parse(in);
        } catch (const nlohmann::json::exception& e) {
            throw ValidationError("manifest parse error: " + std::string(e.what()));
        }
    }
    if (!doc.is_object()) throw ValidationError("manifest root must be a JSON object");

    Manifest m;
    m.base_dir = path.parent_path();
    auto resolve = [&](const nlohmann::json& v, const std::string& key) {
        if (!v.is_string())
            throw ValidationError("manifest entry '" + key + "' must be a path string");
        return m.base_dir / v.get<std::string>();
    };

    static const char* kSingular[] = {"head_weights", "head_bias",    "id_features",
                                      "train_features", "train_labels", "precomputed_stats"};
    for (const char* role : kSingular)
        if (doc.contains(role)) m.roles[role] = resolve(doc[role], role);

    if (doc.contains("ood_features")) {
        const auto& sets = doc["ood_features"];
        if (!sets.is_object())
            throw ValidationError("manifest 'ood_features' must map names to paths");
        for (const auto& [name, v] : sets.items())
            m.ood_sets[name] = resolve(v, "ood_features." + name);
    }

    for (const char* role : {"head_weights", "head_bias"})
        if (!m.has(role)) throw MissingRole("manifest requires '" + std::string(role) + "'");

    // Cross-validate headers without pulling payloads in.
    const ArrayInfo w = read_array_info(m.at("head_weights"));
    if (w.shape.size() != 2)
        throw DimensionMismatch("head_weights must be 2-D (classes x features)");
    const Index C = w.shape[0], P = w.shape[1];
    const ArrayInfo b = read_array_info(m.at("head_bias"));
    if (b.shape.size() != 1 || b.shape[0] != C)
        throw DimensionMismatch("head_bias must be 1-D with one entry per class");

    auto check_features = [&](const std::filesystem::path& p, const std::string& label) {
        const ArrayInfo info = read_array_info(p);
        if (info.shape.size() != 2 || info.shape[1] != P)
            throw DimensionMismatch(label + " must be 2-D with " + std::to_string(P) +
                                    " columns");
        return info.shape[0];
    };
    if (m.has("id_features")) check_features(m.at("id_features"), "id_features");
    for (const auto& [name, p] : m.ood_sets) check_features(p, "ood_features." + name);
    if (m.has("train_features")) {
        const Index n = check_features(m.at("train_features"), "train_features");
        if (m.has("train_labels")) {
            const ArrayInfo lab = read_array_info(m.at("train_labels"));
            if (lab.shape.size() != 1 || lab.shape[0] != n)
                throw DimensionMismatch("train_labels must be 1-D with one entry per "
                                        "training row");
        }
    } else if (m.has("train_labels")) {
        throw MissingRole("train_labels requires train_features");
    }
    return m;
}

}  // namespace fdbd::tensorio
