#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "adafm/net.hpp"

namespace adafm {

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// On-disk layout (all integers little-endian):
///
///   "AFMC" | u32 version | u32 config_len | config text (key=value lines)
///   | u32 tensor_count | per tensor: u32 name_len | name | u8 dtype (0 = f32)
///   | u8 ndim | u32 dims[ndim] | f32 payload
struct Checkpoint {
    static constexpr std::uint32_t kVersion = 1;

    std::map<std::string, std::string> config;
    std::vector<std::pair<std::string, Tensor>> tensors;

    [[nodiscard]] const Tensor& tensor(const std::string& name) const;
    [[nodiscard]] std::string get(const std::string& key, const std::string& fallback = "") const;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// `extra` entries (task, levels, ...) are stored alongside the net config.
Checkpoint to_checkpoint(const BasicNet& net, const std::map<std::string, std::string>& extra = {});
Checkpoint to_checkpoint(const AdaFMNet& net, const std::map<std::string, std::string>& extra = {});

NetConfig config_from_checkpoint(const Checkpoint& ckpt);
BasicNet basic_net_from_checkpoint(const Checkpoint& ckpt);
/// Fails if the checkpoint carries no AdaFM layers.
AdaFMNet adafm_net_from_checkpoint(const Checkpoint& ckpt);

}  // namespace adafm
