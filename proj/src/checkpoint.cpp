#include "posr/checkpoint.hpp"

#include <cstring>
#include <unordered_map>

#include "binio.hpp"
#include "posr/errors.hpp"

namespace posr::checkpoint {

void save_checkpoint(const std::string& path, const std::string& config_echo,
                     const std::vector<autodiff::Parameter>& params) {
  binio::LeWriter w(path);
  w.raw("POSR", 4);
  w.u16(kCheckpointFormatVersion);
  w.u32(static_cast<std::uint32_t>(config_echo.size()));
  w.raw(config_echo.data(), config_echo.size());
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    if (p.name.size() > 0xFFFF)
      throw ValueError("save_checkpoint: parameter name too long");
    if (p.value.rank() > 0xFF)
      throw ValueError("save_checkpoint: parameter rank too large");
    w.u16(static_cast<std::uint16_t>(p.name.size()));
    w.raw(p.name.data(), p.name.size());
    w.u8(static_cast<std::uint8_t>(p.value.rank()));
    for (std::size_t extent : p.value.shape())
      w.u32(static_cast<std::uint32_t>(extent));
    for (double v : p.value.values()) w.f64(v);
  }
  w.finish();
}

Checkpoint load_checkpoint(const std::string& path) {
  binio::LeReader r(path, "checkpoint");
  char magic[4];
  r.raw(magic, 4);
  if (std::memcmp(magic, "POSR", 4) != 0)
    throw BadMagicError("checkpoint '" + path + "' has bad magic '" +
                        std::string(magic, 4) + "'");
  const std::uint16_t version = r.u16();
  if (version != kCheckpointFormatVersion)
    throw UnsupportedVersionError("checkpoint '" + path +
                                  "' has unsupported version " +
                                  std::to_string(version));
  Checkpoint ckpt;
  const std::uint32_t echo_len = r.u32();
  ckpt.config_echo.resize(echo_len);
  r.raw(ckpt.config_echo.data(), echo_len);
  const std::uint32_t n_params = r.u32();
  for (std::uint32_t i = 0; i < n_params; ++i) {
    ParamBlob blob;
    const std::uint16_t name_len = r.u16();
    blob.name.resize(name_len);
    r.raw(blob.name.data(), name_len);
    const std::uint8_t rank = r.u8();
    blob.shape.resize(rank);
    for (auto& extent : blob.shape) extent = r.u32();
    blob.values.resize(autodiff::numel(blob.shape));
    for (auto& v : blob.values) v = r.f64();
    ckpt.params.push_back(std::move(blob));
  }
  if (!r.at_eof())
    throw FileFormatError("checkpoint '" + path +
                          "' has trailing bytes after the last parameter");
  return ckpt;
}

void restore_parameters(const model::DualEncoderModel& model,
                        const Checkpoint& ckpt) {
  std::unordered_map<std::string, const ParamBlob*> by_name;
  for (const auto& blob : ckpt.params) {
    if (!by_name.emplace(blob.name, &blob).second)
      throw ValueError("restore_parameters: duplicate parameter '" +
                       blob.name + "' in checkpoint");
  }
  auto params = model.parameters();
  if (by_name.size() != params.size())
    throw ValueError("restore_parameters: checkpoint has " +
                     std::to_string(by_name.size()) + " parameters, model has " +
                     std::to_string(params.size()));
  for (auto& p : params) {
    auto it = by_name.find(p.name);
    if (it == by_name.end())
      throw ValueError("restore_parameters: checkpoint is missing parameter '" +
                       p.name + "'");
    const ParamBlob& blob = *it->second;
    if (blob.shape != p.value.shape())
      throw ShapeError("restore_parameters: parameter '" + p.name +
                       "' is " + autodiff::shape_str(p.value.shape()) +
                       " in the model but " + autodiff::shape_str(blob.shape) +
                       " in the checkpoint");
    autodiff::Tensor handle = p.value;
    handle.mutable_values() = blob.values;
  }
}

}  // namespace posr::checkpoint
