#pragma once
// Binary checkpoint container: magic + version, an embedded key=value config
// echo, and length-prefixed named tensor records (raw little-endian f32).
// Writing the result of a load reproduces the original file byte for byte.

#include <string>
#include <utility>
#include <vector>

#include "tenext/config.hpp"
#include "tenext/tensor.hpp"

namespace tenext {

struct Checkpoint {
  KvConfig meta;  // model config echo plus training bookkeeping
  std::vector<std::pair<std::string, Tensor<float>>> tensors;  // in write order
};

void write_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::string& path);

}  // namespace tenext
