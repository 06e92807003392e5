#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "heartbert/model.hpp"
#include "heartbert/tensor.hpp"

namespace heartbert {

// Binary weight container: magic HBCK01, a manifest of (name, dtype, shape)
// entries, then the raw float32 payloads in manifest order. A text sidecar at
// <path>.config carries key=value metadata (the model configuration plus
// whatever the writer adds).
struct Checkpoint {
    std::vector<std::pair<std::string, Tensor<float>>> tensors;
    std::map<std::string, std::string> meta;

    const Tensor<float>* find(const std::string& name) const;
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

// Encoder glue. Tensors are stored in registry order; the sidecar gets the
// ModelConfig entries prefixed with "model.".
void save_encoder_checkpoint(const EncoderModel<float>& model, const std::string& path,
                             const std::map<std::string, std::string>& extra_meta = {});
EncoderModel<float> encoder_from_checkpoint(const Checkpoint& ckpt);
EncoderModel<float> load_encoder_checkpoint(const std::string& path);

ModelConfig config_from_meta(const std::map<std::string, std::string>& meta);

}  // namespace heartbert
