#include "lodseg/nifti.hpp"

#include <zlib.h>

#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <vector>

#include "lodseg/errors.hpp"

namespace lodseg {

namespace {

// nifti1.h layout, 348 bytes.
#pragma pack(push, 1)
struct Nifti1Header {
    int32_t sizeof_hdr;
    char data_type[10];
    char db_name[18];
    int32_t extents;
    int16_t session_error;
    char regular;
    char dim_info;
    int16_t dim[8];
    float intent_p1, intent_p2, intent_p3;
    int16_t intent_code;
    int16_t datatype;
    int16_t bitpix;
    int16_t slice_start;
    float pixdim[8];
    float vox_offset;
    float scl_slope, scl_inter;
    int16_t slice_end;
    char slice_code;
    char xyzt_units;
    float cal_max, cal_min;
    float slice_duration, toffset;
    int32_t glmax, glmin;
    char descrip[80];
    char aux_file[24];
    int16_t qform_code, sform_code;
    float quatern_b, quatern_c, quatern_d;
    float qoffset_x, qoffset_y, qoffset_z;
    float srow_x[4], srow_y[4], srow_z[4];
    char intent_name[16];
    char magic[4];
};
#pragma pack(pop)
static_assert(sizeof(Nifti1Header) == 348, "NIfTI-1 header must be 348 bytes");

enum NiftiType : int16_t {
    DT_UINT8 = 2,
    DT_INT16 = 4,
    DT_INT32 = 8,
    DT_FLOAT32 = 16,
    DT_FLOAT64 = 64,
    DT_INT8 = 256,
    DT_UINT16 = 512,
    DT_UINT32 = 768,
};

std::vector<char> read_all(const std::string& path) {
    gzFile f = gzopen(path.c_str(), "rb");  // reads plain files transparently
    if (!f) throw IoError("cannot open '" + path + "'");
    std::vector<char> buf;
    char chunk[1 << 16];
    int n;
    while ((n = gzread(f, chunk, sizeof(chunk))) > 0)
        buf.insert(buf.end(), chunk, chunk + n);
    bool bad = n < 0;
    gzclose(f);
    if (bad) throw IoError("decompression error reading '" + path + "'");
    return buf;
}

void write_all(const std::string& path, const char* data, size_t len) {
    if (path.size() > 3 && path.compare(path.size() - 3, 3, ".gz") == 0) {
        gzFile f = gzopen(path.c_str(), "wb6");
        if (!f) throw IoError("cannot open '" + path + "' for writing");
        size_t off = 0;
        while (off < len) {
            unsigned chunk = static_cast<unsigned>(std::min<size_t>(len - off, 1u << 28));
            if (gzwrite(f, data + off, chunk) != static_cast<int>(chunk)) {
                gzclose(f);
                throw IoError("write error on '" + path + "'");
            }
            off += chunk;
        }
        gzclose(f);
    } else {
        std::ofstream f(path, std::ios::binary);
        if (!f) throw IoError("cannot open '" + path + "' for writing");
        f.write(data, static_cast<std::streamsize>(len));
        if (!f) throw IoError("write error on '" + path + "'");
    }
}

// 3x3 direction matrix columns -> axis code per voxel axis i,j,k.
// Rejects oblique columns: the dominant world component must carry nearly
// all of the column's magnitude.
std::array<char, 3> codes_from_affine(const double R[3][3], const std::string& path) {
    static const char pos[3] = {'R', 'A', 'S'};
    static const char neg[3] = {'L', 'P', 'I'};
    std::array<char, 3> ijk{};
    int used = 0;
    for (int col = 0; col < 3; ++col) {
        double cx[3] = {R[0][col], R[1][col], R[2][col]};
        double norm = std::sqrt(cx[0] * cx[0] + cx[1] * cx[1] + cx[2] * cx[2]);
        if (norm <= 0) throw FormatError("'" + path + "': degenerate affine column " + std::to_string(col));
        int dom = 0;
        for (int r = 1; r < 3; ++r)
            if (std::fabs(cx[r]) > std::fabs(cx[dom])) dom = r;
        if (std::fabs(cx[dom]) < 0.999 * norm)
            throw FormatError("'" + path + "': oblique orientation on voxel axis " +
                              std::to_string(col) + " (not axis-aligned; refusing to guess)");
        if (used & (1 << dom))
            throw FormatError("'" + path + "': ambiguous orientation, world axis reused by voxel axis " +
                              std::to_string(col));
        used |= 1 << dom;
        ijk[static_cast<size_t>(col)] = cx[dom] > 0 ? pos[dom] : neg[dom];
    }
    return ijk;
}

void quaternion_to_matrix(const Nifti1Header& h, double R[3][3]) {
    double b = h.quatern_b, c = h.quatern_c, d = h.quatern_d;
    double a = 1.0 - (b * b + c * c + d * d);
    a = a < 1e-7 ? 0.0 : std::sqrt(a);
    double qfac = h.pixdim[0] >= 0.0f ? 1.0 : -1.0;
    R[0][0] = a * a + b * b - c * c - d * d;
    R[0][1] = 2 * b * c - 2 * a * d;
    R[0][2] = (2 * b * d + 2 * a * c) * qfac;
    R[1][0] = 2 * b * c + 2 * a * d;
    R[1][1] = a * a + c * c - b * b - d * d;
    R[1][2] = (2 * c * d - 2 * a * b) * qfac;
    R[2][0] = 2 * b * d - 2 * a * c;
    R[2][1] = 2 * c * d + 2 * a * b;
    R[2][2] = (a * a + d * d - c * c - b * b) * qfac;
}

template <typename T>
void cast_to_float(const char* src, int64_t n, float* dst, float slope, float inter) {
    const T* p = reinterpret_cast<const T*>(src);
    if (slope == 0.0f) slope = 1.0f;
    for (int64_t i = 0; i < n; ++i)
        dst[i] = static_cast<float>(p[i]) * slope + inter;
}

struct Parsed {
    Nifti1Header hdr;
    std::array<int64_t, 3> dims;       // nx, ny, nz
    std::array<char, 3> ijk_codes;
    std::array<double, 3> spacing;     // dx, dy, dz
    std::vector<float> voxels;         // x fastest (file order)
};

Parsed parse(const std::string& path) {
    std::vector<char> raw = read_all(path);
    if (raw.size() < sizeof(Nifti1Header))
        throw FormatError("'" + path + "': file shorter than a NIfTI-1 header");
    Parsed out;
    std::memcpy(&out.hdr, raw.data(), sizeof(Nifti1Header));
    Nifti1Header& h = out.hdr;
    if (h.sizeof_hdr != 348)
        throw FormatError("'" + path + "': not a NIfTI-1 file (sizeof_hdr=" +
                          std::to_string(h.sizeof_hdr) + "; byte-swapped files unsupported)");
    if (std::strncmp(h.magic, "n+1", 3) != 0 && std::strncmp(h.magic, "ni1", 3) != 0)
        throw FormatError("'" + path + "': bad NIfTI magic");
    if (std::strncmp(h.magic, "ni1", 3) == 0)
        throw FormatError("'" + path + "': detached .hdr/.img pairs unsupported");
    int ndim = h.dim[0];
    for (int d = 4; d <= ndim && d < 8; ++d)
        if (h.dim[d] > 1)
            throw FormatError("'" + path + "': image has a non-trivial dimension " +
                              std::to_string(d) + " (size " + std::to_string(h.dim[d]) +
                              "); only 3D scalar volumes are supported");
    if (ndim < 3)
        throw FormatError("'" + path + "': expected a 3D image, got dim[0]=" + std::to_string(ndim));
    out.dims = {h.dim[1], h.dim[2], h.dim[3]};
    for (int ax = 0; ax < 3; ++ax)
        if (out.dims[static_cast<size_t>(ax)] < 1)
            throw FormatError("'" + path + "': non-positive dimension");
    for (int ax = 0; ax < 3; ++ax) {
        double s = h.pixdim[ax + 1];
        out.spacing[static_cast<size_t>(ax)] = s > 0 ? s : 1.0;
    }

    double R[3][3];
    if (h.sform_code > 0) {
        for (int c = 0; c < 3; ++c) {
            R[0][c] = h.srow_x[c];
            R[1][c] = h.srow_y[c];
            R[2][c] = h.srow_z[c];
        }
    } else if (h.qform_code > 0) {
        quaternion_to_matrix(h, R);
    } else {
        // No transform recorded: NIfTI default is identity (RAS).
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) R[r][c] = r == c ? 1.0 : 0.0;
    }
    out.ijk_codes = codes_from_affine(R, path);

    const int64_t n = out.dims[0] * out.dims[1] * out.dims[2];
    size_t offset = static_cast<size_t>(h.vox_offset);
    if (offset < 348) offset = 352;
    int64_t bpv = h.bitpix / 8;
    if (raw.size() < offset + static_cast<size_t>(n * bpv))
        throw FormatError("'" + path + "': truncated voxel data");
    const char* vox = raw.data() + offset;
    out.voxels.resize(static_cast<size_t>(n));
    float sl = h.scl_slope, in = h.scl_inter;
    switch (h.datatype) {
        case DT_UINT8:   cast_to_float<uint8_t>(vox, n, out.voxels.data(), sl, in); break;
        case DT_INT8:    cast_to_float<int8_t>(vox, n, out.voxels.data(), sl, in); break;
        case DT_INT16:   cast_to_float<int16_t>(vox, n, out.voxels.data(), sl, in); break;
        case DT_UINT16:  cast_to_float<uint16_t>(vox, n, out.voxels.data(), sl, in); break;
        case DT_INT32:   cast_to_float<int32_t>(vox, n, out.voxels.data(), sl, in); break;
        case DT_UINT32:  cast_to_float<uint32_t>(vox, n, out.voxels.data(), sl, in); break;
        case DT_FLOAT32: cast_to_float<float>(vox, n, out.voxels.data(), sl, in); break;
        case DT_FLOAT64: cast_to_float<double>(vox, n, out.voxels.data(), sl, in); break;
        default:
            throw FormatError("'" + path + "': unsupported datatype code " +
                              std::to_string(h.datatype));
    }
    return out;
}

// World sign direction for a code letter, and its world axis row.
void code_to_column(char code, double spacing, double col[3]) {
    col[0] = col[1] = col[2] = 0.0;
    static const std::string pos = "RAS", neg = "LPI";
    size_t p = pos.find(code);
    if (p != std::string::npos) { col[p] = spacing; return; }
    p = neg.find(code);
    col[p] = -spacing;
}

Nifti1Header make_header(const std::array<int64_t, 3>& dims_xyz,
                         const std::array<double, 3>& spacing_xyz,
                         const std::array<char, 3>& ijk_codes, int16_t datatype, int16_t bitpix) {
    Nifti1Header h{};
    h.sizeof_hdr = 348;
    h.regular = 'r';
    h.dim[0] = 3;
    h.dim[1] = static_cast<int16_t>(dims_xyz[0]);
    h.dim[2] = static_cast<int16_t>(dims_xyz[1]);
    h.dim[3] = static_cast<int16_t>(dims_xyz[2]);
    for (int d = 4; d < 8; ++d) h.dim[d] = 1;
    h.datatype = datatype;
    h.bitpix = bitpix;
    h.pixdim[0] = 1.0f;
    for (int ax = 0; ax < 3; ++ax)
        h.pixdim[ax + 1] = static_cast<float>(spacing_xyz[static_cast<size_t>(ax)]);
    h.vox_offset = 352.0f;
    h.scl_slope = 1.0f;
    h.xyzt_units = 2;  // millimetres
    h.sform_code = 1;
    h.qform_code = 0;
    double col[3];
    for (int c = 0; c < 3; ++c) {
        code_to_column(ijk_codes[static_cast<size_t>(c)], spacing_xyz[static_cast<size_t>(c)], col);
        h.srow_x[c] = static_cast<float>(col[0]);
        h.srow_y[c] = static_cast<float>(col[1]);
        h.srow_z[c] = static_cast<float>(col[2]);
    }
    std::memcpy(h.magic, "n+1", 4);
    return h;
}

template <typename T>
void write_nifti(const std::string& path, const Nifti1Header& h, const std::vector<T>& vox) {
    std::vector<char> buf(352 + vox.size() * sizeof(T), 0);
    std::memcpy(buf.data(), &h, sizeof(h));
    std::memcpy(buf.data() + 352, vox.data(), vox.size() * sizeof(T));
    write_all(path, buf.data(), buf.size());
}

}  // namespace

Volume load_volume(const std::string& path) {
    Parsed p = parse(path);
    Volume v;
    // Storage order: axis 0 = k (slowest in file), axis 2 = i (fastest).
    v.data = Tensor({p.dims[2], p.dims[1], p.dims[0]});
    std::memcpy(v.data.data(), p.voxels.data(), p.voxels.size() * sizeof(float));
    v.orientation = {p.ijk_codes[2], p.ijk_codes[1], p.ijk_codes[0]};
    v.spacing_mm = {p.spacing[2], p.spacing[1], p.spacing[0]};
    v.source_id = path;
    return v;
}

void save_volume(const Volume& v, const std::string& path) {
    const auto& s = v.shape();
    std::array<int64_t, 3> dims_xyz{s[2], s[1], s[0]};
    std::array<double, 3> sp_xyz{v.spacing_mm[2], v.spacing_mm[1], v.spacing_mm[0]};
    std::array<char, 3> ijk{v.orientation[2], v.orientation[1], v.orientation[0]};
    Nifti1Header h = make_header(dims_xyz, sp_xyz, ijk, DT_FLOAT32, 32);
    write_nifti(path, h, v.data.raw());
}

LabelVolume load_labels(const std::string& path, int num_classes) {
    Parsed p = parse(path);
    LabelVolume l;
    l.shape = {p.dims[2], p.dims[1], p.dims[0]};
    l.num_classes = num_classes;
    l.class_names = num_classes == kDefaultNumClasses ? default_class_names()
                                                      : std::vector<std::string>{};
    l.data.resize(p.voxels.size());
    for (size_t i = 0; i < p.voxels.size(); ++i)
        l.data[i] = static_cast<int32_t>(std::lround(p.voxels[i]));
    l.validate();
    return l;
}

void save_labels(const LabelVolume& l, const std::string& path, const AxisCodes& orientation) {
    if (l.num_classes > 256) throw FormatError("save_labels: more than 256 classes");
    std::array<int64_t, 3> dims_xyz{l.shape[2], l.shape[1], l.shape[0]};
    std::array<double, 3> sp_xyz{1.0, 1.0, 1.0};
    std::array<char, 3> ijk{orientation[2], orientation[1], orientation[0]};
    Nifti1Header h = make_header(dims_xyz, sp_xyz, ijk, DT_UINT8, 8);
    std::vector<uint8_t> vox(l.data.size());
    for (size_t i = 0; i < l.data.size(); ++i)
        vox[i] = static_cast<uint8_t>(l.data[i]);
    write_nifti(path, h, vox);
}

}  // namespace lodseg
