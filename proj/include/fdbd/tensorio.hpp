#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "fdbd/errors.hpp"
#include "fdbd/types.hpp"

namespace fdbd::tensorio {

enum class Dtype { F32, F64 };

inline constexpr std::size_t itemsize(Dtype d) {
    return d == Dtype::F32 ? 4 : 8;
}

/// A dense row-major array of 32- or 64-bit floats, rank 1 or 2. Values are
/// held as doubles internally; the f32 -> f64 promotion is exact, so a
/// write/read round trip preserves the payload bit for bit.
struct ArrayFile {
    Dtype dtype = Dtype::F64;
    std::vector<Index> shape;  // {len} or {rows, cols}
    std::vector<double> data;  // row-major

    Index rank() const { return static_cast<Index>(shape.size()); }
    Index rows() const { return shape.at(0); }
    Index cols() const { return rank() == 2 ? shape.at(1) : 1; }
    Index size() const;

    Matrix to_matrix() const;  // requires rank 2
    Vector to_vector() const;  // requires rank 1

    static ArrayFile from_matrix(const Matrix& m, Dtype dtype = Dtype::F64);
    static ArrayFile from_vector(const Vector& v, Dtype dtype = Dtype::F64);
};

/// Parses the NPY v1.0 subset: little-endian f32/f64, C order, rank 1 or 2.
/// Throws MagicMismatch, UnsupportedDtype, UnsupportedLayout,
/// TruncatedPayload, ValidationError (non-finite values unless allowed),
/// IoError.
ArrayFile read_array(const std::filesystem::path& path, bool allow_nonfinite = false);

/// Writes the same subset; the preamble is padded to a 64-byte multiple and
/// matches what standard array tooling emits.
void write_array(const std::filesystem::path& path, const ArrayFile& arr,
                 bool allow_nonfinite = false);

/// Header-only probe (dtype and shape without reading the payload).
struct ArrayInfo {
    Dtype dtype;
    std::vector<Index> shape;
};
ArrayInfo read_array_info(const std::filesystem::path& path);

/// Role-to-file binding for one evaluation setup. Paths are resolved
/// relative to the manifest's directory. Unknown JSON keys are ignored.
struct Manifest {
    std::filesystem::path base_dir;
    std::map<std::string, std::filesystem::path> roles;     // singular roles
    std::map<std::string, std::filesystem::path> ood_sets;  // name -> features

    bool has(const std::string& role) const { return roles.count(role) != 0; }

    /// Path for a singular role; throws MissingRole if absent.
    std::filesystem::path at(const std::string& role) const;

    /// Reads the array bound to a singular role.
    ArrayFile load(const std::string& role) const;

    /// Reads a named OOD feature set.
    ArrayFile load_ood(const std::string& name) const;
};

/// Loads and cross-validates a manifest. head_weights and head_bias are
/// required; feature files present must agree on the head's feature
/// dimension P, and train_labels (if present) must be 1-D with one entry
/// per training row. Throws MissingRole and DimensionMismatch.
Manifest load_manifest(const std::filesystem::path& path);

}  // namespace fdbd::tensorio
