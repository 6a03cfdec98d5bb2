#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "posr/data.hpp"
#include "posr/losses.hpp"
#include "posr/model.hpp"

namespace posr::config {

struct TrainConfig {
  double lr = 0.005;
  double eta_min = 0.0;
  std::size_t epochs = 100;
  std::size_t batch_size = 32;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  // Which fold of the leave-one-subject-out plan a single-fold training
  // run uses.
  std::size_t fold_index = 0;
};

// Everything needed to reproduce a run. Backbone channel/sample counts are
// not part of the file; they always come from the data.
struct RunConfig {
  std::string run_id;
  std::uint64_t seed = 1;
  std::string out_dir = "out";
  std::string data_path;       // empty => generate from the synth spec
  int eval_session = 3;
  double train_fraction = 0.8;
  std::vector<int> loso_pool;  // empty => every subject present in the data
  std::size_t embed_dim = 2;
  data::SynthSpec synth;
  model::BackboneConfig backbone;
  losses::LossConfig loss;
  TrainConfig train;

  void validate() const;
};

// Canonical flat `key = value` text: every key exactly once, fixed order,
// `#` comments, LF endings. parse(serialize(c)) reproduces c and
// serialize(parse(s)) is a fixed point, so the echo written next to run
// outputs can be fed straight back in.
std::string serialize_config(const RunConfig& cfg);
RunConfig parse_config(const std::string& text);

RunConfig read_config_file(const std::string& path);
void write_config_file(const RunConfig& cfg, const std::string& path);

}  // namespace posr::config
