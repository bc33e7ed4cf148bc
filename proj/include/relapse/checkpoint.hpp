#pragma once
#include <cstdint>
#include <fstream>
#include <string>

#include "relapse/config.hpp"
#include "relapse/model.hpp"
#include "relapse/vol.hpp"

namespace relapse {

// Checkpoint layout: 8-byte magic, u32 little-endian config length, the
// model config as canonical JSON, u64 parameter count, then the flat
// float32 little-endian payload in canonical segment order.
inline constexpr char kCheckpointMagic[9] = "RLFUSE01";

inline void save_checkpoint(const std::string& path, const FusionModelParams& params) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw io_error("cannot open checkpoint for writing: " + path);
    os.write(kCheckpointMagic, 8);
    const std::string cfg = model_to_checkpoint_json(params.config).dump();
    detail::put_u32le(os, static_cast<std::uint32_t>(cfg.size()));
    os.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
    const std::uint64_t count = params.values.size();
    detail::put_u32le(os, static_cast<std::uint32_t>(count & 0xffffffffULL));
    detail::put_u32le(os, static_cast<std::uint32_t>(count >> 32));
    for (double v : params.values) detail::put_f32le(os, static_cast<float>(v));
    if (!os) throw io_error("short write on checkpoint: " + path);
}

inline FusionModelParams load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw io_error("cannot open checkpoint: " + path);
    char magic[8];
    is.read(magic, 8);
    if (!is || std::string(magic, 8) != kCheckpointMagic)
        throw io_error("not a model checkpoint: " + path);
    const std::uint32_t cfg_len = detail::get_u32le(is);
    std::string cfg(cfg_len, '\0');
    is.read(cfg.data(), cfg_len);
    if (!is) throw io_error("truncated checkpoint header: " + path);

    FusionModelParams params;
    try {
        params.config = model_from_checkpoint_json(Json::parse(cfg));
    } catch (const Json::exception& e) {
        throw io_error("bad checkpoint config in " + path + ": " + e.what());
    }
    params.config.validate();
    params.layout = ParamLayout::from_config(params.config);

    const std::uint64_t lo = detail::get_u32le(is);
    const std::uint64_t hi = detail::get_u32le(is);
    const std::uint64_t count = lo | (hi << 32);
    if (count != params.layout.total)
        throw io_error("checkpoint parameter count does not match its config: " + path);
    params.values.resize(count);
    for (double& v : params.values) v = detail::get_f32le(is);
    if (!is) throw io_error("truncated checkpoint payload: " + path);
    return params;
}

}  // namespace relapse
