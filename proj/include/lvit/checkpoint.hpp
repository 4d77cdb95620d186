#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "lvit/config.hpp"
#include "lvit/errors.hpp"
#include "lvit/io_util.hpp"
#include "lvit/model.hpp"

namespace lvit {

// Checkpoint file layout (all integers little-endian):
//   8 bytes   magic "LVITCKPT"
//   u32       format version (1)
//   u64       config text length, then that many UTF-8 bytes (key=value lines)
//   u64       tensor count
//   per tensor:
//     u64     name length, then the name bytes
//     u64     rank, then rank x u64 dims
//     dims-product x f64 IEEE-754 values
inline constexpr char kCheckpointMagic[8] = {'L', 'V', 'I', 'T', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointMeta {
    std::optional<std::uint64_t> epoch;
    std::optional<std::uint64_t> seed;
    std::vector<std::string> label_names;
};

inline KvMap model_config_to_kv(const ModelConfig& cfg) {
    KvMap kv;
    kv["model.image_size"] = std::to_string(cfg.image_size);
    kv["model.patch_size"] = std::to_string(cfg.patch_size);
    kv["model.in_channels"] = std::to_string(cfg.in_channels);
    kv["model.embed_dim"] = std::to_string(cfg.embed_dim);
    kv["model.num_heads"] = std::to_string(cfg.num_heads);
    kv["model.num_layers"] = std::to_string(cfg.num_layers);
    kv["model.mlp_ratio"] = std::to_string(cfg.mlp_ratio);
    kv["model.dropout_p"] = format_double(cfg.dropout_p);
    kv["model.num_classes"] = std::to_string(cfg.num_classes);
    return kv;
}

/// Missing keys fall back to the field defaults, so partial run-config files
/// work; checkpoints always embed the full set.
inline ModelConfig model_config_from_kv(const KvMap& kv) {
    ModelConfig cfg;
    cfg.image_size = kv_u64(kv, "model.image_size", cfg.image_size);
    cfg.patch_size = kv_u64(kv, "model.patch_size", cfg.patch_size);
    cfg.in_channels = kv_u64(kv, "model.in_channels", cfg.in_channels);
    cfg.embed_dim = kv_u64(kv, "model.embed_dim", cfg.embed_dim);
    cfg.num_heads = kv_u64(kv, "model.num_heads", cfg.num_heads);
    cfg.num_layers = kv_u64(kv, "model.num_layers", cfg.num_layers);
    cfg.mlp_ratio = kv_u64(kv, "model.mlp_ratio", cfg.mlp_ratio);
    cfg.dropout_p = kv_f64(kv, "model.dropout_p", cfg.dropout_p);
    cfg.num_classes = kv_u64(kv, "model.num_classes", cfg.num_classes);
    return cfg;
}

namespace detail {

inline void put_u32le(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_u64le(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f64le(std::string& out, double v) {
    std::uint64_t bits = 0;
    std::memcpy(&bits, &v, sizeof(bits));
    put_u64le(out, bits);
}

struct ByteReader {
    const std::string& buf;
    std::size_t pos = 0;

    void need(std::size_t n) const {
        if (pos + n > buf.size()) throw FormatError("truncated checkpoint file");
    }
    std::uint32_t u32le() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
        pos += 4;
        return v;
    }
    std::uint64_t u64le() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i)
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
        pos += 8;
        return v;
    }
    double f64le() {
        const std::uint64_t bits = u64le();
        double v = 0.0;
        std::memcpy(&v, &bits, sizeof(v));
        return v;
    }
    std::string bytes(std::size_t n) {
        need(n);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

inline KvMap meta_to_kv(const CheckpointMeta& meta) {
    KvMap kv;
    if (meta.epoch) kv["meta.epoch"] = std::to_string(*meta.epoch);
    if (meta.seed) kv["meta.seed"] = std::to_string(*meta.seed);
    kv["meta.num_labels"] = std::to_string(meta.label_names.size());
    for (std::size_t i = 0; i < meta.label_names.size(); ++i) {
        kv["meta.label." + std::to_string(i)] = meta.label_names[i];
    }
    return kv;
}

inline CheckpointMeta meta_from_kv(const KvMap& kv) {
    CheckpointMeta meta;
    if (auto v = kv_get(kv, "meta.epoch")) meta.epoch = parse_u64("meta.epoch", *v);
    if (auto v = kv_get(kv, "meta.seed")) meta.seed = parse_u64("meta.seed", *v);
    const std::uint64_t n = kv_u64(kv, "meta.num_labels", 0);
    for (std::uint64_t i = 0; i < n; ++i) {
        auto v = kv_get(kv, "meta.label." + std::to_string(i));
        if (!v) throw FormatError("missing meta.label." + std::to_string(i));
        meta.label_names.push_back(*v);
    }
    return meta;
}

}  // namespace detail

inline void save_checkpoint(ModelParams& params, const CheckpointMeta& meta,
                            const std::filesystem::path& path) {
    KvMap kv = model_config_to_kv(params.config());
    kv.merge(detail::meta_to_kv(meta));
    const std::string config_text = emit_kv(kv);

    std::string out;
    out.append(kCheckpointMagic, sizeof(kCheckpointMagic));
    detail::put_u32le(out, kCheckpointVersion);
    detail::put_u64le(out, config_text.size());
    out += config_text;
    detail::put_u64le(out, params.all().size());
    for (const Parameter* p : params.all()) {
        detail::put_u64le(out, p->name.size());
        out += p->name;
        detail::put_u64le(out, p->value.rank());
        for (std::size_t d : p->value.shape) detail::put_u64le(out, d);
        for (double v : p->value.data) detail::put_f64le(out, v);
    }
    write_file_atomic(path, out);
}

struct LoadedCheckpoint {
    ModelParams params;
    CheckpointMeta meta;
};

inline LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
    const std::string buf = read_file(path);
    detail::ByteReader r{buf};
    if (r.bytes(sizeof(kCheckpointMagic)) != std::string(kCheckpointMagic, sizeof(kCheckpointMagic))) {
        throw FormatError("bad checkpoint magic in " + path.string());
    }
    const std::uint32_t version = r.u32le();
    if (version != kCheckpointVersion) {
        throw FormatError("unsupported checkpoint version " + std::to_string(version) + " in " +
                          path.string());
    }
    const std::uint64_t config_len = r.u64le();
    const KvMap kv = parse_kv(r.bytes(config_len));
    LoadedCheckpoint loaded{ModelParams(model_config_from_kv(kv)), detail::meta_from_kv(kv)};

    std::vector<bool> filled(loaded.params.all().size(), false);
    const std::uint64_t tensor_count = r.u64le();
    for (std::uint64_t t = 0; t < tensor_count; ++t) {
        const std::string name = r.bytes(r.u64le());
        const std::uint64_t rank = r.u64le();
        Shape shape;
        for (std::uint64_t d = 0; d < rank; ++d) shape.push_back(r.u64le());
        if (!loaded.params.has(name)) {
            throw CompatibilityError("checkpoint tensor " + name +
                                     " does not exist in the embedded config's model");
        }
        Parameter& p = loaded.params.at(name);
        if (p.value.shape != shape) {
            throw CompatibilityError("checkpoint tensor " + name + " has shape " +
                                     shape_str(shape) + ", config requires " +
                                     shape_str(p.value.shape));
        }
        for (double& v : p.value.data) v = r.f64le();
        for (std::size_t i = 0; i < loaded.params.all().size(); ++i) {
            if (loaded.params.all()[i] == &p) filled[i] = true;
        }
    }
    std::string missing;
    for (std::size_t i = 0; i < filled.size(); ++i) {
        if (!filled[i]) missing += (missing.empty() ? "" : ", ") + loaded.params.all()[i]->name;
    }
    if (!missing.empty()) {
        throw CompatibilityError("checkpoint is missing tensors: " + missing);
    }
    return loaded;
}

/// Warm start: loads a checkpoint into existing params. The stored config
/// must match the target config exactly; values are staged via
/// load_checkpoint so nothing is overwritten on failure.
inline CheckpointMeta load_into(ModelParams& params, const std::filesystem::path& path) {
    LoadedCheckpoint loaded = load_checkpoint(path);
    const KvMap want = model_config_to_kv(params.config());
    const KvMap got = model_config_to_kv(loaded.params.config());
    if (want != got) {
        std::string diff;
        for (const auto& [k, v] : want) {
            auto it = got.find(k);
            if (it == got.end() || it->second != v) {
                diff += (diff.empty() ? "" : ", ") + k + "=" + v + " vs " +
                        (it == got.end() ? std::string("<absent>") : it->second);
            }
        }
        throw CompatibilityError("checkpoint config does not match run config: " + diff);
    }
    for (Parameter* p : params.all()) {
        p->value.data = loaded.params.at(p->name).value.data;
    }
    return loaded.meta;
}

}  // namespace lvit
