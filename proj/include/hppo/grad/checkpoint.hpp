#pragma once

#include <map>
#include <string>
#include <vector>

#include "hppo/grad/nn.hpp"

namespace hppo::grad {

/// On-disk layout:
///
///   hppo-checkpoint 1
///   meta <key> <value>            (zero or more)
///   param <name> <rank> <dims...> <byte offset>
///   ...
///   blob <total bytes>
///   <raw little-endian float32 values, concatenated in manifest order>
struct Checkpoint {
  std::map<std::string, std::string> meta;
  std::vector<std::pair<std::string, Tensor>> tensors;

  const Tensor* find(const std::string& name) const;
};

void save_checkpoint(const std::string& path, const std::vector<ParamRef>& params,
                     const std::map<std::string, std::string>& meta = {});
Checkpoint read_checkpoint(const std::string& path);

/// Copies stored values into `params`; every name must exist with a matching
/// shape. Throws IoError on malformed files and ShapeError on mismatches.
void load_into(const Checkpoint& ckpt, const std::vector<ParamRef>& params);

}  // namespace hppo::grad
