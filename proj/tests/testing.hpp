#pragma once

// Shared test utilities: temp dirs, a CLI spawner, crafted PNG/Phoenix
// payloads, and independent metric oracles kept deliberately separate from
// the library implementations.

#include <sys/wait.h>
#include <zlib.h>

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "lvit/rng.hpp"
#include "lvit/tensor.hpp"

namespace testutil {

struct TempDir {
    std::filesystem::path path;

    TempDir() {
        std::string tmpl = (std::filesystem::temp_directory_path() / "lvit_test_XXXXXX").string();
        std::vector<char> buf(tmpl.begin(), tmpl.end());
        buf.push_back('\0');
        if (mkdtemp(buf.data()) == nullptr) throw std::runtime_error("mkdtemp failed");
        path = buf.data();
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
};

struct CliResult {
    int exit_code = -1;
    std::string output;  // stdout + stderr interleaved
};

#ifdef LVIT_CLI_PATH
inline CliResult run_cli(const std::string& args) {
    const std::string cmd = std::string("\"") + LVIT_CLI_PATH + "\" " + args + " 2>&1";
    FILE* pipe = popen(cmd.c_str(), "r");
    if (pipe == nullptr) throw std::runtime_error("popen failed for: " + cmd);
    CliResult res;
    char buf[4096];
    std::size_t n = 0;
    while ((n = fread(buf, 1, sizeof(buf), pipe)) > 0) res.output.append(buf, n);
    const int status = pclose(pipe);
    res.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return res;
}
#endif

inline lvit::Tensor random_tensor(lvit::Shape shape, lvit::Rng& rng, double lo = -1.0,
                                  double hi = 1.0) {
    lvit::Tensor t(std::move(shape));
    for (double& v : t.data) v = rng.uniform(lo, hi);
    return t;
}

// --- crafted PNG files -----------------------------------------------------

namespace detail {

inline void put_u32be(std::string& out, std::uint32_t v) {
    out.push_back(static_cast<char>((v >> 24) & 0xff));
    out.push_back(static_cast<char>((v >> 16) & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
    out.push_back(static_cast<char>(v & 0xff));
}

inline std::string png_chunk(const char* type, const std::string& body) {
    std::string c;
    put_u32be(c, static_cast<std::uint32_t>(body.size()));
    c.append(type, 4);
    c += body;
    const uLong crc = crc32(0, reinterpret_cast<const Bytef*>(c.data() + 4), c.size() - 4);
    put_u32be(c, static_cast<std::uint32_t>(crc));
    return c;
}

}  // namespace detail

/// Filter-0 PNG with the given color type (0 gray, 2 rgb, 4 gray+alpha,
/// 6 rgba) and bit depth (8 or 16); samples are per-channel values in
/// row-major pixel order.
inline std::string make_png(std::uint32_t w, std::uint32_t h, int color_type, int depth,
                            const std::vector<std::uint16_t>& samples) {
    const int channels = color_type == 0 ? 1 : color_type == 2 ? 3 : color_type == 4 ? 2 : 4;
    if (samples.size() != static_cast<std::size_t>(w) * h * channels) {
        throw std::runtime_error("make_png: wrong sample count");
    }
    std::string raw;
    std::size_t idx = 0;
    for (std::uint32_t r = 0; r < h; ++r) {
        raw.push_back('\0');  // filter 0
        for (std::uint32_t i = 0; i < w * channels; ++i) {
            const std::uint16_t v = samples[idx++];
            if (depth == 16) raw.push_back(static_cast<char>((v >> 8) & 0xff));
            raw.push_back(static_cast<char>(v & 0xff));
        }
    }
    uLongf comp_len = compressBound(static_cast<uLong>(raw.size()));
    std::vector<Bytef> comp(comp_len);
    if (compress2(comp.data(), &comp_len, reinterpret_cast<const Bytef*>(raw.data()),
                  static_cast<uLong>(raw.size()), 9) != Z_OK) {
        throw std::runtime_error("make_png: compress failed");
    }

    std::string ihdr;
    detail::put_u32be(ihdr, w);
    detail::put_u32be(ihdr, h);
    ihdr.push_back(static_cast<char>(depth));
    ihdr.push_back(static_cast<char>(color_type));
    ihdr.push_back('\0');  // compression
    ihdr.push_back('\0');  // filter
    ihdr.push_back('\0');  // no interlace

    static const unsigned char sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    std::string png(reinterpret_cast<const char*>(sig), 8);
    png += detail::png_chunk("IHDR", ihdr);
    png += detail::png_chunk("IDAT", std::string(reinterpret_cast<char*>(comp.data()), comp_len));
    png += detail::png_chunk("IEND", "");
    return png;
}

// --- crafted Phoenix files ---------------------------------------------------

/// Header lines (rows/cols keys added automatically), terminator, then
/// big-endian float32 magnitude and phase blocks.
inline std::string make_phoenix(std::size_t rows, std::size_t cols,
                                const std::vector<float>& magnitude,
                                const std::vector<float>& phase = {},
                                const std::vector<std::pair<std::string, std::string>>& extra = {},
                                bool include_terminator = true) {
    std::string out = "[PhoenixHeaderVer 0.05]\n";
    out += "NumberOfRows= " + std::to_string(rows) + "\n";
    out += "NumberOfColumns= " + std::to_string(cols) + "\n";
    for (const auto& [k, v] : extra) out += k + "= " + v + "\n";
    if (include_terminator) out += "[EndofPhoenixHeader]\n";
    auto put_f32be = [&out](float f) {
        std::uint32_t u = 0;
        std::memcpy(&u, &f, sizeof(u));
        out.push_back(static_cast<char>((u >> 24) & 0xff));
        out.push_back(static_cast<char>((u >> 16) & 0xff));
        out.push_back(static_cast<char>((u >> 8) & 0xff));
        out.push_back(static_cast<char>(u & 0xff));
    };
    for (float f : magnitude) put_f32be(f);
    for (float f : phase) put_f32be(f);
    return out;
}

// --- independent metrics oracle ----------------------------------------------

struct OracleReport {
    std::vector<double> precision, recall, f1, accuracy;
    double macro_precision = 0, macro_recall = 0, macro_f1 = 0, overall = 0;
    std::vector<std::vector<std::uint64_t>> counts;
};

/// From-scratch tally and metric computation, structured differently from the
/// library (per-sample scans instead of matrix marginals).
inline OracleReport oracle_metrics(const std::vector<std::size_t>& truth,
                                   const std::vector<std::size_t>& pred, std::size_t k) {
    OracleReport r;
    r.counts.assign(k, std::vector<std::uint64_t>(k, 0));
    std::size_t diag = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        ++r.counts[truth[i]][pred[i]];
        if (truth[i] == pred[i]) ++diag;
    }
    for (std::size_t c = 0; c < k; ++c) {
        std::size_t tp = 0, predicted_c = 0, actual_c = 0;
        for (std::size_t i = 0; i < truth.size(); ++i) {
            if (truth[i] == c && pred[i] == c) ++tp;
            if (pred[i] == c) ++predicted_c;
            if (truth[i] == c) ++actual_c;
        }
        const double p = predicted_c ? double(tp) / double(predicted_c) : 0.0;
        const double rc = actual_c ? double(tp) / double(actual_c) : 0.0;
        const double f = (p + rc) > 0 ? 2 * p * rc / (p + rc) : 0.0;
        r.precision.push_back(p);
        r.recall.push_back(rc);
        r.f1.push_back(f);
        r.accuracy.push_back(rc);
        r.macro_precision += p / double(k);
        r.macro_recall += rc / double(k);
        r.macro_f1 += f / double(k);
    }
    r.overall = truth.empty() ? 0.0 : double(diag) / double(truth.size());
    return r;
}

}  // namespace testutil
