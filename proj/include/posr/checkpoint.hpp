#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "posr/model.hpp"
#include "posr/tensor.hpp"

namespace posr::checkpoint {

// Versioned model container, little-endian throughout:
//   "POSR" | u16 version | u32 echo length | config echo bytes |
//   u32 n_params | per parameter: u16 name length, name bytes, u8 rank,
//   u32 extent per dimension, f64 values row-major.
// Doubles are stored bit-exactly, so save/load round-trips are lossless.
inline constexpr std::uint16_t kCheckpointFormatVersion = 1;

struct ParamBlob {
  std::string name;
  autodiff::Shape shape;
  std::vector<double> values;
};

struct Checkpoint {
  std::string config_echo;
  std::vector<ParamBlob> params;
};

void save_checkpoint(const std::string& path, const std::string& config_echo,
                     const std::vector<autodiff::Parameter>& params);

Checkpoint load_checkpoint(const std::string& path);

// Copies checkpoint values into the model's parameters, matched by name.
// Missing or extra parameters and shape mismatches are errors.
void restore_parameters(const model::DualEncoderModel& model,
                        const Checkpoint& ckpt);

}  // namespace posr::checkpoint
