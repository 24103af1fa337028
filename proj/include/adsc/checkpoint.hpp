#pragma once

#include <string>

#include "adsc/model.hpp"

namespace adsc {

// Binary parameter snapshot. Little-endian layout: magic "ADSC", u32
// version, the model config (eight i64 fields, lora_scale f64, gated and
// position-encoding bytes), u32 tensor count, then per tensor a u32 name
// length, the name, u32 rank, i64 dims and the f64 payload in row-major
// order. Saves go through a temp file renamed into place, so a reader never
// observes a partial write. Round trips are bit-exact.
void save_checkpoint(const std::string& path, const Parameters& params);
Parameters load_checkpoint(const std::string& path);

}  // namespace adsc
