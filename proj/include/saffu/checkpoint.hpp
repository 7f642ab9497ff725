#pragma once

#include <string>

#include "saffu/transformer.hpp"

namespace saffu {

// Versioned model container: a text header (one "key value" line per field)
// followed by named 64-bit little-endian matrices, each prefixed by
// "name rows cols". Written atomically.
void save_checkpoint(const TransformerModel& model, const std::string& path);
TransformerModel load_checkpoint(const std::string& path);

}  // namespace saffu
