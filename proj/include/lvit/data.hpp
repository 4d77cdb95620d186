#pragma once

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <map>
#include <numbers>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "lvit/config.hpp"
#include "lvit/errors.hpp"
#include "lvit/io_util.hpp"
#include "lvit/rng.hpp"
#include "lvit/tensor.hpp"

namespace lvit {

/// Decoded grayscale image before preprocessing; values in [0,1] for file
/// sources, arbitrary non-negative floats for synthetic/Phoenix magnitudes.
struct RawImage {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> pix;  // row-major, rows*cols

    double at(std::size_t r, std::size_t c) const { return pix[r * cols + c]; }
};

struct Sample {
    Tensor image;  // 48x48 standardized
    std::size_t label = 0;
    std::string source_id;
};

struct Dataset {
    std::vector<Sample> samples;
    std::vector<std::string> label_names;

    std::size_t size() const { return samples.size(); }
    std::size_t num_classes() const { return label_names.size(); }
};

// --- PGM (binary P5) ---------------------------------------------------

namespace detail {

/// Reads the next ASCII unsigned integer token, skipping whitespace and
/// `#` comments, as PGM headers allow.
inline std::size_t pgm_token(const std::string& bytes, std::size_t& pos, const char* what) {
    while (pos < bytes.size()) {
        const char c = bytes[pos];
        if (c == '#') {
            while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
        } else if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
            ++pos;
        } else {
            break;
        }
    }
    if (pos >= bytes.size() || bytes[pos] < '0' || bytes[pos] > '9') {
        throw FormatError(std::string("PGM header: expected ") + what);
    }
    std::size_t v = 0;
    while (pos < bytes.size() && bytes[pos] >= '0' && bytes[pos] <= '9') {
        v = v * 10 + static_cast<std::size_t>(bytes[pos] - '0');
        ++pos;
    }
    return v;
}

}  // namespace detail

inline RawImage decode_pgm(const std::string& bytes) {
    if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') {
        throw FormatError("not a binary PGM (P5) file");
    }
    std::size_t pos = 2;
    const std::size_t cols = detail::pgm_token(bytes, pos, "width");
    const std::size_t rows = detail::pgm_token(bytes, pos, "height");
    const std::size_t maxval = detail::pgm_token(bytes, pos, "maxval");
    if (rows == 0 || cols == 0) throw FormatError("PGM with zero dimension");
    if (maxval == 0 || maxval > 65535) {
        throw FormatError("PGM maxval " + std::to_string(maxval) + " out of range");
    }
    ++pos;  // single whitespace byte after maxval
    const std::size_t bytes_per = maxval < 256 ? 1 : 2;
    if (pos + rows * cols * bytes_per > bytes.size()) {
        throw FormatError("truncated PGM payload");
    }
    RawImage img{rows, cols, std::vector<double>(rows * cols)};
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data()) + pos;
    for (std::size_t i = 0; i < rows * cols; ++i) {
        const std::size_t v = bytes_per == 1
                                  ? p[i]
                                  : (static_cast<std::size_t>(p[2 * i]) << 8) | p[2 * i + 1];
        img.pix[i] = static_cast<double>(v) / static_cast<double>(maxval);
    }
    return img;
}

/// 16-bit big-endian binary PGM bytes for values already scaled to [0,1].
inline std::string encode_pgm16(const RawImage& img) {
    std::string out = "P5\n" + std::to_string(img.cols) + " " + std::to_string(img.rows) +
                      "\n65535\n";
    out.reserve(out.size() + img.pix.size() * 2);
    for (double v : img.pix) {
        const double clamped = std::min(1.0, std::max(0.0, v));
        const auto q = static_cast<std::uint16_t>(std::lround(clamped * 65535.0));
        out.push_back(static_cast<char>((q >> 8) & 0xff));
        out.push_back(static_cast<char>(q & 0xff));
    }
    return out;
}

// --- PNG (grayscale-convertible, via zlib) -------------------------------

namespace detail {

inline constexpr unsigned char kPngSig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};

inline std::uint32_t u32be(const unsigned char* p) {
    return (static_cast<std::uint32_t>(p[0]) << 24) | (static_cast<std::uint32_t>(p[1]) << 16) |
           (static_cast<std::uint32_t>(p[2]) << 8) | p[3];
}

inline bool is_png(const std::string& bytes) {
    return bytes.size() >= 8 && std::memcmp(bytes.data(), kPngSig, 8) == 0;
}

inline unsigned char paeth(unsigned char a, unsigned char b, unsigned char c) {
    const int p = int(a) + int(b) - int(c);
    const int pa = std::abs(p - int(a)), pb = std::abs(p - int(b)), pc = std::abs(p - int(c));
    if (pa <= pb && pa <= pc) return a;
    if (pb <= pc) return b;
    return c;
}

}  // namespace detail

/// Decodes PNG color types 0/2/4/6 at bit depth 8 or 16 (no interlacing, no
/// palette) and converts color to gray with Rec.601 luma weights.
inline RawImage decode_png(const std::string& bytes) {
    if (!detail::is_png(bytes)) throw FormatError("not a PNG file");
    const auto* data = reinterpret_cast<const unsigned char*>(bytes.data());
    std::size_t pos = 8;
    std::size_t width = 0, height = 0, depth = 0, color_type = 0, channels = 0;
    bool saw_ihdr = false;
    std::string idat;
    while (pos + 8 <= bytes.size()) {
        const std::uint32_t len = detail::u32be(data + pos);
        const std::string type = bytes.substr(pos + 4, 4);
        if (pos + 12 + len > bytes.size()) throw FormatError("truncated PNG chunk " + type);
        const std::size_t body = pos + 8;
        if (type == "IHDR") {
            if (len != 13) throw FormatError("bad PNG IHDR length");
            width = detail::u32be(data + body);
            height = detail::u32be(data + body + 4);
            depth = data[body + 8];
            color_type = data[body + 9];
            if (data[body + 12] != 0) throw FormatError("interlaced PNG not supported");
            switch (color_type) {
                case 0: channels = 1; break;
                case 2: channels = 3; break;
                case 4: channels = 2; break;
                case 6: channels = 4; break;
                default:
                    throw FormatError("PNG color type " + std::to_string(color_type) +
                                      " not supported");
            }
            if (depth != 8 && depth != 16) {
                throw FormatError("PNG bit depth " + std::to_string(depth) + " not supported");
            }
            if (width == 0 || height == 0) throw FormatError("PNG with zero dimension");
            saw_ihdr = true;
        } else if (type == "IDAT") {
            idat.append(bytes, body, len);
        } else if (type == "IEND") {
            break;
        }
        pos = body + len + 4;  // skip crc
    }
    if (!saw_ihdr) throw FormatError("PNG missing IHDR");
    if (idat.empty()) throw FormatError("PNG missing IDAT");

    const std::size_t sample_bytes = depth / 8;
    const std::size_t bpp = channels * sample_bytes;
    const std::size_t stride = width * bpp;
    const std::size_t raw_size = (stride + 1) * height;
    std::vector<unsigned char> raw(raw_size);
    uLongf dest_len = raw_size;
    const int rc = ::uncompress(raw.data(), &dest_len,
                                reinterpret_cast<const Bytef*>(idat.data()),
                                static_cast<uLong>(idat.size()));
    if (rc != Z_OK || dest_len != raw_size) throw FormatError("PNG inflate failed");

    // undo per-row filters in place (filters 0..4)
    std::vector<unsigned char> prev(stride, 0);
    std::vector<unsigned char> cur(stride, 0);
    RawImage img{height, width, std::vector<double>(height * width)};
    const double max = depth == 8 ? 255.0 : 65535.0;
    for (std::size_t r = 0; r < height; ++r) {
        const unsigned char filter = raw[r * (stride + 1)];
        const unsigned char* src = raw.data() + r * (stride + 1) + 1;
        for (std::size_t i = 0; i < stride; ++i) {
            const unsigned char a = i >= bpp ? cur[i - bpp] : 0;
            const unsigned char b = prev[i];
            const unsigned char c = i >= bpp ? prev[i - bpp] : 0;
            unsigned char v = src[i];
            switch (filter) {
                case 0: break;
                case 1: v = static_cast<unsigned char>(v + a); break;
                case 2: v = static_cast<unsigned char>(v + b); break;
                case 3: v = static_cast<unsigned char>(v + (int(a) + int(b)) / 2); break;
                case 4: v = static_cast<unsigned char>(v + detail::paeth(a, b, c)); break;
                default: throw FormatError("PNG row filter " + std::to_string(filter) + " invalid");
            }
            cur[i] = v;
        }
        auto sample = [&](std::size_t px, std::size_t ch) {
            const unsigned char* s = cur.data() + px * bpp + ch * sample_bytes;
            return depth == 8 ? double(s[0]) : double((std::size_t(s[0]) << 8) | s[1]);
        };
        for (std::size_t cpx = 0; cpx < width; ++cpx) {
            double g;
            if (channels >= 3) {
                g = 0.299 * sample(cpx, 0) + 0.587 * sample(cpx, 1) + 0.114 * sample(cpx, 2);
            } else {
                g = sample(cpx, 0);
            }
            img.pix[r * width + cpx] = g / max;
        }
        std::swap(prev, cur);
    }
    return img;
}

// --- Phoenix (MSTAR public-release container) ----------------------------

struct PhoenixHeader {
    std::map<std::string, std::string> fields;
    std::size_t rows = 0;
    std::size_t cols = 0;
};

/// ASCII `key=value` header up to and including the `[EndofPhoenixHeader]`
/// line, then big-endian 32-bit float payload: rows*cols magnitude values
/// (returned), followed by a phase block (ignored).
inline std::pair<PhoenixHeader, RawImage> parse_phoenix(const std::string& bytes) {
    PhoenixHeader hdr;
    std::size_t pos = 0;
    bool terminated = false;
    while (pos < bytes.size()) {
        std::size_t nl = bytes.find('\n', pos);
        if (nl == std::string::npos) nl = bytes.size();
        std::string line = bytes.substr(pos, nl - pos);
        pos = nl + 1;
        while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
        if (line == "[EndofPhoenixHeader]") {
            terminated = true;
            break;
        }
        const std::size_t eq = line.find('=');
        if (eq != std::string::npos) {
            auto strip = [](std::string s) {
                const auto b = s.find_first_not_of(" \t");
                const auto e = s.find_last_not_of(" \t");
                return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
            };
            hdr.fields[strip(line.substr(0, eq))] = strip(line.substr(eq + 1));
        }
    }
    if (!terminated) throw FormatError("missing [EndofPhoenixHeader] terminator");
    const auto rows_it = hdr.fields.find("NumberOfRows");
    const auto cols_it = hdr.fields.find("NumberOfColumns");
    if (rows_it == hdr.fields.end() || cols_it == hdr.fields.end()) {
        throw FormatError("Phoenix header missing NumberOfRows/NumberOfColumns");
    }
    hdr.rows = parse_u64("NumberOfRows", rows_it->second);
    hdr.cols = parse_u64("NumberOfColumns", cols_it->second);
    if (hdr.rows == 0 || hdr.cols == 0) throw FormatError("Phoenix image has zero dimension");

    const std::size_t n = hdr.rows * hdr.cols;
    if (pos + n * 4 > bytes.size()) {
        throw FormatError("truncated Phoenix payload: need " + std::to_string(n) +
                          " magnitude values, have " + std::to_string((bytes.size() - pos) / 4));
    }
    RawImage img{hdr.rows, hdr.cols, std::vector<double>(n)};
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data()) + pos;
    for (std::size_t i = 0; i < n; ++i) {
        const std::uint32_t u = (std::uint32_t(p[4 * i]) << 24) | (std::uint32_t(p[4 * i + 1]) << 16) |
                                (std::uint32_t(p[4 * i + 2]) << 8) | std::uint32_t(p[4 * i + 3]);
        float f = 0.0f;
        std::memcpy(&f, &u, sizeof(f));
        img.pix[i] = static_cast<double>(f);
    }
    return {hdr, img};
}

/// Magic-based dispatch: PNG signature, then PGM "P5", then Phoenix (by
/// `.raw` extension or a leading '[' header line).
inline RawImage load_image_file(const std::filesystem::path& path) {
    const std::string bytes = read_file(path);
    if (detail::is_png(bytes)) return decode_png(bytes);
    if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '5') return decode_pgm(bytes);
    std::string ext = path.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (ext == ".raw" || (!bytes.empty() && bytes[0] == '[')) return parse_phoenix(bytes).second;
    throw FormatError("unrecognized image format: " + path.string());
}

// --- preprocessing --------------------------------------------------------

enum class PreprocessMode { kCropResize, kCropOnly, kResizeOnly };

inline PreprocessMode preprocess_mode_from_string(const std::string& s) {
    if (s == "crop-resize") return PreprocessMode::kCropResize;
    if (s == "crop-only") return PreprocessMode::kCropOnly;
    if (s == "resize-only") return PreprocessMode::kResizeOnly;
    throw ValueError("unknown preprocess mode: " + s +
                     " (expected crop-resize, crop-only or resize-only)");
}

inline const char* preprocess_mode_name(PreprocessMode m) {
    switch (m) {
        case PreprocessMode::kCropResize: return "crop-resize";
        case PreprocessMode::kCropOnly: return "crop-only";
        case PreprocessMode::kResizeOnly: return "resize-only";
    }
    return "?";
}

inline RawImage center_crop(const RawImage& in, std::size_t out_rows, std::size_t out_cols) {
    if (out_rows > in.rows || out_cols > in.cols) {
        throw IngestError("cannot center-crop " + std::to_string(in.rows) + "x" +
                          std::to_string(in.cols) + " to " + std::to_string(out_rows) + "x" +
                          std::to_string(out_cols));
    }
    const std::size_t r0 = (in.rows - out_rows) / 2;
    const std::size_t c0 = (in.cols - out_cols) / 2;
    RawImage out{out_rows, out_cols, std::vector<double>(out_rows * out_cols)};
    for (std::size_t r = 0; r < out_rows; ++r)
        for (std::size_t c = 0; c < out_cols; ++c)
            out.pix[r * out_cols + c] = in.at(r0 + r, c0 + c);
    return out;
}

/// Bilinear resampling with half-pixel-center alignment:
/// src = (dst + 0.5) * (in/out) - 0.5, clamped to the valid range.
inline RawImage bilinear_resize(const RawImage& in, std::size_t out_rows, std::size_t out_cols) {
    if (in.rows == 0 || in.cols == 0) throw IngestError("resize of empty image");
    RawImage out{out_rows, out_cols, std::vector<double>(out_rows * out_cols)};
    const double sr = static_cast<double>(in.rows) / static_cast<double>(out_rows);
    const double sc = static_cast<double>(in.cols) / static_cast<double>(out_cols);
    for (std::size_t r = 0; r < out_rows; ++r) {
        double fr = (static_cast<double>(r) + 0.5) * sr - 0.5;
        fr = std::min(std::max(fr, 0.0), static_cast<double>(in.rows - 1));
        const auto r0 = static_cast<std::size_t>(fr);
        const std::size_t r1 = std::min(r0 + 1, in.rows - 1);
        const double wr = fr - static_cast<double>(r0);
        for (std::size_t c = 0; c < out_cols; ++c) {
            double fc = (static_cast<double>(c) + 0.5) * sc - 0.5;
            fc = std::min(std::max(fc, 0.0), static_cast<double>(in.cols - 1));
            const auto c0 = static_cast<std::size_t>(fc);
            const std::size_t c1 = std::min(c0 + 1, in.cols - 1);
            const double wc = fc - static_cast<double>(c0);
            const double top = in.at(r0, c0) * (1.0 - wc) + in.at(r0, c1) * wc;
            const double bot = in.at(r1, c0) * (1.0 - wc) + in.at(r1, c1) * wc;
            out.pix[r * out_cols + c] = top * (1.0 - wr) + bot * wr;
        }
    }
    return out;
}

/// Per-image standardization (x - mean) / (stddev + 1e-8).
inline Tensor standardize(const RawImage& img) {
    const std::size_t n = img.pix.size();
    const auto [lo, hi] = std::minmax_element(img.pix.begin(), img.pix.end());
    if (*lo == *hi) return Tensor({img.rows, img.cols});  // zero variance: exactly zero output
    double mean = 0.0;
    for (double v : img.pix) mean += v;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double v : img.pix) var += (v - mean) * (v - mean);
    var /= static_cast<double>(n);
    const double denom = std::sqrt(var) + 1e-8;
    Tensor out({img.rows, img.cols});
    for (std::size_t i = 0; i < n; ++i) out.data[i] = (img.pix[i] - mean) / denom;
    return out;
}

/// Raw image → model input: crop/resize per mode to out_size, then
/// standardize.
inline Tensor preprocess(const RawImage& raw, PreprocessMode mode = PreprocessMode::kCropResize,
                         std::size_t out_size = 48) {
    if (raw.rows == 0 || raw.cols == 0) throw IngestError("empty image");
    for (double v : raw.pix) {
        if (!std::isfinite(v)) throw IngestError("non-finite pixel data");
    }
    RawImage shaped;
    switch (mode) {
        case PreprocessMode::kCropResize: {
            const std::size_t side = std::min(raw.rows, raw.cols);
            shaped = bilinear_resize(center_crop(raw, side, side), out_size, out_size);
            break;
        }
        case PreprocessMode::kCropOnly:
            shaped = center_crop(raw, out_size, out_size);
            break;
        case PreprocessMode::kResizeOnly:
            shaped = bilinear_resize(raw, out_size, out_size);
            break;
    }
    return standardize(shaped);
}

// --- directory ingestion ---------------------------------------------------

/// Loads `root/<class_name>/<files>`: class subdirectories sorted
/// lexicographically define label indices; files within each class are
/// processed in sorted filename order. Dotfiles are skipped.
inline Dataset load_image_dir(const std::filesystem::path& root,
                              std::optional<std::size_t> expected_classes = std::nullopt,
                              PreprocessMode mode = PreprocessMode::kCropResize) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(root)) throw IngestError("data root is not a directory: " + root.string());
    std::vector<fs::path> class_dirs;
    for (const auto& entry : fs::directory_iterator(root)) {
        if (entry.is_directory()) class_dirs.push_back(entry.path());
    }
    std::sort(class_dirs.begin(), class_dirs.end(),
              [](const fs::path& a, const fs::path& b) { return a.filename() < b.filename(); });
    if (class_dirs.empty()) {
        throw IngestError("no class subdirectories in " + root.string());
    }
    if (expected_classes && class_dirs.size() != *expected_classes) {
        throw ContractError("expected " + std::to_string(*expected_classes) +
                            " classes, found " + std::to_string(class_dirs.size()) + " in " +
                            root.string());
    }
    Dataset ds;
    for (std::size_t label = 0; label < class_dirs.size(); ++label) {
        ds.label_names.push_back(class_dirs[label].filename().string());
        std::vector<fs::path> files;
        for (const auto& entry : fs::directory_iterator(class_dirs[label])) {
            if (!entry.is_regular_file()) continue;
            const std::string name = entry.path().filename().string();
            if (!name.empty() && name[0] == '.') continue;
            files.push_back(entry.path());
        }
        std::sort(files.begin(), files.end(),
                  [](const fs::path& a, const fs::path& b) { return a.filename() < b.filename(); });
        if (files.empty()) {
            throw IngestError("empty class directory: " + class_dirs[label].string());
        }
        for (const fs::path& file : files) {
            try {
                ds.samples.push_back(
                    {preprocess(load_image_file(file), mode), label, file.string()});
            } catch (const IngestError&) {
                throw;
            } catch (const Error& e) {
                throw IngestError("cannot load " + file.string() + ": " + e.what());
            }
        }
    }
    return ds;
}

// --- synthetic dataset ------------------------------------------------------

/// Clean class template: a bright bar of the given width through the image
/// center at angle cls*18 degrees, on a dim background.
inline RawImage synthetic_template(std::size_t cls, std::size_t size = 48) {
    if (cls >= 10) throw ValueError("synthetic class must be in [0,10)");
    const double theta = static_cast<double>(cls) * 18.0 * std::numbers::pi / 180.0;
    const double ct = std::cos(theta), st = std::sin(theta);
    const double cx = (static_cast<double>(size) - 1.0) / 2.0;
    constexpr double kHalfWidth = 3.0;  // bar width 6 px
    RawImage img{size, size, std::vector<double>(size * size)};
    for (std::size_t r = 0; r < size; ++r) {
        for (std::size_t c = 0; c < size; ++c) {
            const double u = static_cast<double>(c) - cx;
            const double v = static_cast<double>(r) - cx;
            const double dist = std::abs(u * st - v * ct);
            img.pix[r * size + c] = dist <= kHalfWidth ? 1.0 : 0.05;
        }
    }
    return img;
}

/// Template with multiplicative unit-mean exponential speckle:
/// x * (1 + noise_level * (E - 1)). One rng draw per pixel, row-major,
/// regardless of noise_level.
inline RawImage synthetic_raw(std::size_t cls, double noise_level, Rng& rng,
                              std::size_t size = 48) {
    if (noise_level < 0.0) throw ValueError("noise_level must be non-negative");
    RawImage img = synthetic_template(cls, size);
    for (double& v : img.pix) {
        const double e = rng.exponential();
        v *= 1.0 + noise_level * (e - 1.0);
    }
    return img;
}

inline std::vector<std::string> synthetic_label_names() {
    std::vector<std::string> names;
    for (std::size_t c = 0; c < 10; ++c) {
        char buf[16];
        std::snprintf(buf, sizeof(buf), "bar%03zu", c * 18);
        names.emplace_back(buf);
    }
    return names;
}

/// Seeded 10-class speckled dataset, n_per_class samples each, already
/// preprocessed. Draw order: class 0 sample 0, sample 1, ..., class 9.
inline Dataset gen_synthetic(std::size_t n_per_class, std::uint64_t seed, double noise_level) {
    if (n_per_class == 0) throw ValueError("n_per_class must be at least 1");
    Dataset ds;
    ds.label_names = synthetic_label_names();
    Rng rng(seed);
    for (std::size_t cls = 0; cls < 10; ++cls) {
        for (std::size_t i = 0; i < n_per_class; ++i) {
            RawImage raw = synthetic_raw(cls, noise_level, rng);
            char tag[64];
            std::snprintf(tag, sizeof(tag), "synthetic/%s/%04zu", ds.label_names[cls].c_str(), i);
            ds.samples.push_back({preprocess(raw), cls, tag});
        }
    }
    return ds;
}

/// Materializes the synthetic dataset as a class-per-subdirectory tree of
/// 16-bit PGM files (each image min-max scaled to [0,1] before
/// quantization), loadable by load_image_dir.
inline void write_synthetic_tree(const std::filesystem::path& out_dir, std::size_t n_per_class,
                                 std::uint64_t seed, double noise_level) {
    if (n_per_class == 0) throw ValueError("n_per_class must be at least 1");
    namespace fs = std::filesystem;
    const std::vector<std::string> names = synthetic_label_names();
    Rng rng(seed);
    for (std::size_t cls = 0; cls < 10; ++cls) {
        const fs::path dir = out_dir / names[cls];
        std::error_code ec;
        fs::create_directories(dir, ec);
        if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
        for (std::size_t i = 0; i < n_per_class; ++i) {
            RawImage raw = synthetic_raw(cls, noise_level, rng);
            double lo = raw.pix[0], hi = raw.pix[0];
            for (double v : raw.pix) {
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            }
            const double span = hi - lo;
            for (double& v : raw.pix) v = span > 0.0 ? (v - lo) / span : 0.0;
            char name[32];
            std::snprintf(name, sizeof(name), "s%04zu.pgm", i);
            write_file_atomic(dir / name, encode_pgm16(raw));
        }
    }
}

// --- batching ----------------------------------------------------------------

/// Fisher–Yates shuffle of 0..n-1, then contiguous chunks; the final partial
/// chunk is kept.
inline std::vector<std::vector<std::size_t>> batches(std::size_t n, std::size_t batch_size,
                                                     Rng& rng) {
    if (batch_size == 0) throw ValueError("batch_size must be at least 1");
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    for (std::size_t i = n; i > 1; --i) {
        const std::size_t j = rng.next_below(i);
        std::swap(idx[i - 1], idx[j]);
    }
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t start = 0; start < n; start += batch_size) {
        const std::size_t end = std::min(start + batch_size, n);
        out.emplace_back(idx.begin() + static_cast<std::ptrdiff_t>(start),
                         idx.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return out;
}

}  // namespace lvit
