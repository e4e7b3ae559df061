#pragma once

// Thin RAII layer over the HDF5 C API: just the dataset/attribute shapes the
// trajectory and checkpoint containers need. All failures become LoadError
// or WriteError.

#include <hdf5.h>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace vpgo::h5 {

enum class Mode { Read, Truncate };

class Handle {
public:
    Handle() = default;
    Handle(hid_t id, herr_t (*closer)(hid_t)) : id_(id), closer_(closer) {}
    Handle(const Handle&) = delete;
    Handle& operator=(const Handle&) = delete;
    Handle(Handle&& other) noexcept { *this = std::move(other); }
    Handle& operator=(Handle&& other) noexcept;
    ~Handle();

    hid_t get() const noexcept { return id_; }
    explicit operator bool() const noexcept { return id_ >= 0; }

private:
    hid_t id_ = -1;
    herr_t (*closer_)(hid_t) = nullptr;
};

enum class Scalar { U8, I64, F32, F64 };

struct ArrayInfo {
    Scalar type;
    std::vector<std::uint64_t> dims;
};

class File {
public:
    File(const std::string& path, Mode mode);

    const std::string& path() const noexcept { return path_; }

    bool exists(const std::string& object) const;
    std::vector<std::string> list(const std::string& group) const;

    // Intermediate groups are created on demand. Object timestamps are not
    // recorded so identical content gives identical bytes.
    void write(const std::string& name, Scalar type, const std::vector<std::uint64_t>& dims,
               const void* data);
    ArrayInfo info(const std::string& name) const;
    // `out` must hold product(dims) elements of `as`; HDF5 converts types.
    void read(const std::string& name, Scalar as, void* out) const;

    void set_attr(const std::string& name, const std::string& value);
    void set_attr(const std::string& name, std::int64_t value);
    void set_attr(const std::string& name, const std::vector<std::uint8_t>& value);

    std::optional<std::string> attr_string(const std::string& name) const;
    std::optional<std::int64_t> attr_int(const std::string& name) const;
    std::optional<std::vector<std::uint8_t>> attr_bytes(const std::string& name) const;

    void flush();

private:
    std::string path_;
    Handle file_;
};

}  // namespace vpgo::h5
