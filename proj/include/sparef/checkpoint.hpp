#pragma once

#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "sparef/layers.hpp"
#include "sparef/refiner.hpp"
#include "sparef/tensor.hpp"

namespace sparef {

using Json = nlohmann::ordered_json;

// SRCK container: magic "SRCK" | u16 version | u32 json byte length | UTF-8
// json config | u32 tensor count | repeated (u16 name length, name, SRT1
// record). Little-endian throughout.

struct Checkpoint {
    static constexpr uint16_t kVersion = 1;

    uint16_t version = kVersion;
    Json config;
    std::vector<std::pair<std::string, Tensor<float>>> tensors;

    const Tensor<float>* find(const std::string& name) const {
        for (const auto& [n, t] : tensors)
            if (n == name) return &t;
        return nullptr;
    }
};

inline void checkpoint_save(const Checkpoint& ckpt, const std::string& path) {
    std::string bytes;
    bytes.append("SRCK", 4);
    const uint16_t ver = ckpt.version;
    bytes.append(reinterpret_cast<const char*>(&ver), 2);
    const std::string cfg = ckpt.config.dump();
    const uint32_t cfg_len = uint32_t(cfg.size());
    bytes.append(reinterpret_cast<const char*>(&cfg_len), 4);
    bytes.append(cfg);
    const uint32_t count = uint32_t(ckpt.tensors.size());
    bytes.append(reinterpret_cast<const char*>(&count), 4);
    for (const auto& [name, tensor] : ckpt.tensors) {
        const uint16_t name_len = uint16_t(name.size());
        bytes.append(reinterpret_cast<const char*>(&name_len), 2);
        bytes.append(name);
        detail::append_tensor_bytes(tensor, bytes);
    }
    detail::dump_file(path, bytes);
}

inline Checkpoint checkpoint_load(const std::string& path) {
    const std::string buf = detail::slurp_file(path);
    size_t pos = 0;
    const auto need = [&](size_t n) {
        if (pos + n > buf.size()) throw CheckpointError(path + ": truncated checkpoint");
        return buf.data() + pos;
    };
    if (std::memcmp(need(4), "SRCK", 4) != 0) throw CheckpointError(path + ": bad magic");
    pos += 4;
    Checkpoint ckpt;
    std::memcpy(&ckpt.version, need(2), 2);
    pos += 2;
    if (ckpt.version != Checkpoint::kVersion)
        throw CheckpointError(path + ": unsupported checkpoint version " +
                              std::to_string(ckpt.version));
    uint32_t cfg_len = 0;
    std::memcpy(&cfg_len, need(4), 4);
    pos += 4;
    const std::string cfg(need(cfg_len), cfg_len);
    pos += cfg_len;
    try {
        ckpt.config = Json::parse(cfg);
    } catch (const std::exception& e) {
        throw CheckpointError(path + ": bad config json: " + e.what());
    }
    uint32_t count = 0;
    std::memcpy(&count, need(4), 4);
    pos += 4;
    ckpt.tensors.reserve(count);
    for (uint32_t i = 0; i < count; ++i) {
        uint16_t name_len = 0;
        std::memcpy(&name_len, need(2), 2);
        pos += 2;
        std::string name(need(name_len), name_len);
        pos += name_len;
        try {
            ckpt.tensors.emplace_back(std::move(name),
                                      detail::parse_tensor_bytes<float>(buf, pos, path));
        } catch (const FormatError& e) {
            throw CheckpointError(e.what());
        }
    }
    if (pos != buf.size()) throw CheckpointError(path + ": trailing bytes");
    return ckpt;
}

/// Copies a network's parameters and buffers into the checkpoint under their
/// state names.
inline void checkpoint_put_state(Checkpoint& ckpt, const StateMap<float>& state) {
    for (const auto& [name, mat] : state) {
        Tensor<float> t({mat->rows(), mat->cols()});
        Eigen::Map<MatX<float>>(t.data(), mat->rows(), mat->cols()) = *mat;
        ckpt.tensors.emplace_back(name, std::move(t));
    }
}

/// Fills a network's state from the checkpoint. Every state name must
/// resolve to exactly one tensor of matching dims.
inline void checkpoint_get_state(const Checkpoint& ckpt, const StateMap<float>& state) {
    for (const auto& [name, mat] : state) {
        const Tensor<float>* t = ckpt.find(name);
        if (!t) throw CheckpointError("missing tensor: " + name);
        if (t->ndim() != 2 || t->dim(0) != mat->rows() || t->dim(1) != mat->cols())
            throw CheckpointError("dim mismatch for tensor: " + name);
        *mat = Eigen::Map<const MatX<float>>(t->data(), t->dim(0), t->dim(1));
    }
}

inline Json refiner_config_to_json(const RefinerConfig& cfg) {
    return Json{{"channels", cfg.channels},
                {"num_classes", cfg.num_classes},
                {"in_channels", cfg.in_channels},
                {"blocks_per_encoder_stage", cfg.blocks_per_encoder_stage},
                {"blocks_per_decoder_stage", cfg.blocks_per_decoder_stage}};
}

inline RefinerConfig refiner_config_from_json(const Json& j) {
    RefinerConfig cfg;
    cfg.channels = j.at("channels").get<std::vector<int64_t>>();
    cfg.num_classes = j.at("num_classes").get<int64_t>();
    cfg.in_channels = j.at("in_channels").get<int64_t>();
    cfg.blocks_per_encoder_stage = j.at("blocks_per_encoder_stage").get<int64_t>();
    cfg.blocks_per_decoder_stage = j.at("blocks_per_decoder_stage").get<int64_t>();
    cfg.validate();
    return cfg;
}

}  // namespace sparef
