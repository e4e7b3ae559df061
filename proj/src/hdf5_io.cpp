#include "hdf5_io.hpp"

#include "vpgo/errors.hpp"

#include <functional>
#include <numeric>

namespace vpgo::h5 {

namespace {

struct SilenceErrors {
    SilenceErrors() { H5Eset_auto2(H5E_DEFAULT, nullptr, nullptr); }
};
const SilenceErrors silence_errors;

hid_t native(Scalar s) {
    switch (s) {
        case Scalar::U8: return H5T_NATIVE_UINT8;
        case Scalar::I64: return H5T_NATIVE_INT64;
        case Scalar::F32: return H5T_NATIVE_FLOAT;
        case Scalar::F64: return H5T_NATIVE_DOUBLE;
    }
    return H5T_NATIVE_UINT8;
}

// On-disk types are fixed little-endian regardless of host.
hid_t stored(Scalar s) {
    switch (s) {
        case Scalar::U8: return H5T_STD_U8LE;
        case Scalar::I64: return H5T_STD_I64LE;
        case Scalar::F32: return H5T_IEEE_F32LE;
        case Scalar::F64: return H5T_IEEE_F64LE;
    }
    return H5T_STD_U8LE;
}

Handle untracked_lcpl() {
    Handle lcpl(H5Pcreate(H5P_LINK_CREATE), H5Pclose);
    H5Pset_create_intermediate_group(lcpl.get(), 1);
    return lcpl;
}

// HDF5 creates intermediate groups with default (time-tracking) options, so
// groups are created explicitly here instead.
void ensure_parent_groups(hid_t file, const std::string& name) {
    std::size_t pos = 0;
    while ((pos = name.find('/', pos + 1)) != std::string::npos) {
        const std::string group = name.substr(0, pos);
        if (group.empty() || group == "/") continue;
        if (H5Lexists(file, group.c_str(), H5P_DEFAULT) > 0) continue;
        Handle gcpl(H5Pcreate(H5P_GROUP_CREATE), H5Pclose);
        H5Pset_obj_track_times(gcpl.get(), 0);
        Handle g(H5Gcreate2(file, group.c_str(), H5P_DEFAULT, gcpl.get(), H5P_DEFAULT), H5Gclose);
        if (!g) throw WriteError("cannot create group " + group);
    }
}

Handle open_attr_target(hid_t file) { return Handle(H5Oopen(file, "/", H5P_DEFAULT), H5Oclose); }

}  // namespace

Handle& Handle::operator=(Handle&& other) noexcept {
    if (this != &other) {
        if (id_ >= 0 && closer_) closer_(id_);
        id_ = other.id_;
        closer_ = other.closer_;
        other.id_ = -1;
    }
    return *this;
}

Handle::~Handle() {
    if (id_ >= 0 && closer_) closer_(id_);
}

File::File(const std::string& path, Mode mode) : path_(path) {
    if (mode == Mode::Read) {
        if (H5Fis_hdf5(path.c_str()) <= 0) throw LoadError(path + ": not an HDF5 file or unreadable");
        file_ = Handle(H5Fopen(path.c_str(), H5F_ACC_RDONLY, H5P_DEFAULT), H5Fclose);
        if (!file_) throw LoadError(path + ": cannot open");
    } else {
        Handle fcpl(H5Pcreate(H5P_FILE_CREATE), H5Pclose);
        file_ = Handle(H5Fcreate(path.c_str(), H5F_ACC_TRUNC, fcpl.get(), H5P_DEFAULT), H5Fclose);
        if (!file_) throw WriteError(path + ": cannot create");
    }
}

bool File::exists(const std::string& object) const {
    std::size_t pos = 0;
    // H5Lexists requires every parent link to exist.
    while ((pos = object.find('/', pos + 1)) != std::string::npos) {
        if (H5Lexists(file_.get(), object.substr(0, pos).c_str(), H5P_DEFAULT) <= 0) return false;
    }
    return H5Lexists(file_.get(), object.c_str(), H5P_DEFAULT) > 0;
}

std::vector<std::string> File::list(const std::string& group) const {
    std::vector<std::string> names;
    Handle g(H5Gopen2(file_.get(), group.c_str(), H5P_DEFAULT), H5Gclose);
    if (!g) return names;
    H5G_info_t ginfo;
    if (H5Gget_info(g.get(), &ginfo) < 0) return names;
    for (hsize_t i = 0; i < ginfo.nlinks; ++i) {
        const ssize_t len = H5Lget_name_by_idx(g.get(), ".", H5_INDEX_NAME, H5_ITER_INC, i, nullptr, 0,
                                               H5P_DEFAULT);
        if (len < 0) continue;
        std::string name(static_cast<std::size_t>(len), '\0');
        H5Lget_name_by_idx(g.get(), ".", H5_INDEX_NAME, H5_ITER_INC, i, name.data(), name.size() + 1,
                           H5P_DEFAULT);
        names.push_back(std::move(name));
    }
    return names;
}

void File::write(const std::string& name, Scalar type, const std::vector<std::uint64_t>& dims,
                 const void* data) {
    ensure_parent_groups(file_.get(), name);
    std::vector<hsize_t> hd(dims.begin(), dims.end());
    Handle space(H5Screate_simple(static_cast<int>(hd.size()), hd.data(), nullptr), H5Sclose);
    Handle dcpl(H5Pcreate(H5P_DATASET_CREATE), H5Pclose);
    H5Pset_obj_track_times(dcpl.get(), 0);
    Handle lcpl = untracked_lcpl();
    Handle ds(H5Dcreate2(file_.get(), name.c_str(), stored(type), space.get(), lcpl.get(), dcpl.get(),
                         H5P_DEFAULT),
              H5Dclose);
    if (!ds) throw WriteError(path_ + ": cannot create dataset " + name);
    const std::uint64_t count =
        std::accumulate(dims.begin(), dims.end(), std::uint64_t{1}, std::multiplies<>());
    if (count > 0 && H5Dwrite(ds.get(), native(type), H5S_ALL, H5S_ALL, H5P_DEFAULT, data) < 0) {
        throw WriteError(path_ + ": cannot write dataset " + name);
    }
}

ArrayInfo File::info(const std::string& name) const {
    if (!exists(name)) throw LoadError(path_ + ": missing dataset " + name);
    Handle ds(H5Dopen2(file_.get(), name.c_str(), H5P_DEFAULT), H5Dclose);
    if (!ds) throw LoadError(path_ + ": cannot open dataset " + name);
    Handle space(H5Dget_space(ds.get()), H5Sclose);
    const int rank = H5Sget_simple_extent_ndims(space.get());
    if (rank < 0) throw LoadError(path_ + ": corrupt dataspace for " + name);
    std::vector<hsize_t> hd(static_cast<std::size_t>(rank));
    H5Sget_simple_extent_dims(space.get(), hd.data(), nullptr);

    Handle t(H5Dget_type(ds.get()), H5Tclose);
    ArrayInfo out{Scalar::U8, {hd.begin(), hd.end()}};
    const H5T_class_t cls = H5Tget_class(t.get());
    const std::size_t size = H5Tget_size(t.get());
    if (cls == H5T_FLOAT) {
        out.type = size == 4 ? Scalar::F32 : Scalar::F64;
    } else if (cls == H5T_INTEGER) {
        out.type = size == 1 ? Scalar::U8 : Scalar::I64;
    } else {
        throw LoadError(path_ + ": unsupported element type in " + name);
    }
    return out;
}

void File::read(const std::string& name, Scalar as, void* out) const {
    Handle ds(H5Dopen2(file_.get(), name.c_str(), H5P_DEFAULT), H5Dclose);
    if (!ds) throw LoadError(path_ + ": missing dataset " + name);
    Handle space(H5Dget_space(ds.get()), H5Sclose);
    if (H5Sget_simple_extent_npoints(space.get()) == 0) return;
    if (H5Dread(ds.get(), native(as), H5S_ALL, H5S_ALL, H5P_DEFAULT, out) < 0) {
        throw LoadError(path_ + ": corrupt dataset " + name);
    }
}

void File::set_attr(const std::string& name, const std::string& value) {
    Handle root = open_attr_target(file_.get());
    if (H5Aexists(root.get(), name.c_str()) > 0) H5Adelete(root.get(), name.c_str());
    Handle t(H5Tcopy(H5T_C_S1), H5Tclose);
    H5Tset_size(t.get(), std::max<std::size_t>(value.size(), 1));
    H5Tset_strpad(t.get(), H5T_STR_NULLPAD);
    Handle space(H5Screate(H5S_SCALAR), H5Sclose);
    Handle a(H5Acreate2(root.get(), name.c_str(), t.get(), space.get(), H5P_DEFAULT, H5P_DEFAULT), H5Aclose);
    std::string padded = value.empty() ? std::string(1, '\0') : value;
    if (!a || H5Awrite(a.get(), t.get(), padded.data()) < 0) {
        throw WriteError(path_ + ": cannot write attribute " + name);
    }
}

void File::set_attr(const std::string& name, std::int64_t value) {
    Handle root = open_attr_target(file_.get());
    if (H5Aexists(root.get(), name.c_str()) > 0) H5Adelete(root.get(), name.c_str());
    Handle space(H5Screate(H5S_SCALAR), H5Sclose);
    Handle a(H5Acreate2(root.get(), name.c_str(), H5T_STD_I64LE, space.get(), H5P_DEFAULT, H5P_DEFAULT),
             H5Aclose);
    if (!a || H5Awrite(a.get(), H5T_NATIVE_INT64, &value) < 0) {
        throw WriteError(path_ + ": cannot write attribute " + name);
    }
}

void File::set_attr(const std::string& name, const std::vector<std::uint8_t>& value) {
    Handle root = open_attr_target(file_.get());
    if (H5Aexists(root.get(), name.c_str()) > 0) H5Adelete(root.get(), name.c_str());
    const hsize_t n = value.size();
    Handle space(n == 0 ? H5Screate(H5S_NULL) : H5Screate_simple(1, &n, nullptr), H5Sclose);
    Handle a(H5Acreate2(root.get(), name.c_str(), H5T_STD_U8LE, space.get(), H5P_DEFAULT, H5P_DEFAULT),
             H5Aclose);
    if (!a || (n > 0 && H5Awrite(a.get(), H5T_NATIVE_UINT8, value.data()) < 0)) {
        throw WriteError(path_ + ": cannot write attribute " + name);
    }
}

std::optional<std::string> File::attr_string(const std::string& name) const {
    Handle root = open_attr_target(file_.get());
    if (H5Aexists(root.get(), name.c_str()) <= 0) return std::nullopt;
    Handle a(H5Aopen(root.get(), name.c_str(), H5P_DEFAULT), H5Aclose);
    Handle t(H5Aget_type(a.get()), H5Tclose);
    if (H5Tget_class(t.get()) != H5T_STRING) throw LoadError(path_ + ": attribute " + name + " is not a string");
    if (H5Tis_variable_str(t.get()) > 0) {
        char* buf = nullptr;
        Handle mem(H5Tcopy(H5T_C_S1), H5Tclose);
        H5Tset_size(mem.get(), H5T_VARIABLE);
        if (H5Aread(a.get(), mem.get(), &buf) < 0) throw LoadError(path_ + ": cannot read attribute " + name);
        std::string s = buf ? buf : "";
        H5free_memory(buf);
        return s;
    }
    const std::size_t size = H5Tget_size(t.get());
    std::string s(size, '\0');
    if (H5Aread(a.get(), t.get(), s.data()) < 0) throw LoadError(path_ + ": cannot read attribute " + name);
    if (auto end = s.find('\0'); end != std::string::npos) s.resize(end);
    return s;
}

std::optional<std::int64_t> File::attr_int(const std::string& name) const {
    Handle root = open_attr_target(file_.get());
    if (H5Aexists(root.get(), name.c_str()) <= 0) return std::nullopt;
    Handle a(H5Aopen(root.get(), name.c_str(), H5P_DEFAULT), H5Aclose);
    std::int64_t v = 0;
    if (H5Aread(a.get(), H5T_NATIVE_INT64, &v) < 0) throw LoadError(path_ + ": cannot read attribute " + name);
    return v;
}

std::optional<std::vector<std::uint8_t>> File::attr_bytes(const std::string& name) const {
    Handle root = open_attr_target(file_.get());
    if (H5Aexists(root.get(), name.c_str()) <= 0) return std::nullopt;
    Handle a(H5Aopen(root.get(), name.c_str(), H5P_DEFAULT), H5Aclose);
    Handle space(H5Aget_space(a.get()), H5Sclose);
    const hssize_t n = H5Sget_simple_extent_npoints(space.get());
    std::vector<std::uint8_t> v(n > 0 ? static_cast<std::size_t>(n) : 0);
    if (!v.empty() && H5Aread(a.get(), H5T_NATIVE_UINT8, v.data()) < 0) {
        throw LoadError(path_ + ": cannot read attribute " + name);
    }
    return v;
}

void File::flush() { H5Fflush(file_.get(), H5F_SCOPE_GLOBAL); }

}  // namespace vpgo::h5
