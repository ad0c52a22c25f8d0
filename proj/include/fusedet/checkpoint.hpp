#pragma once

#include <string>

#include "fusedet/detector.hpp"

namespace fusedet {

/// Checkpoint directory: one FFTN file per parameter tensor plus a
/// plain-text manifest (config echo, window setup, fusion header, and a
/// name -> file -> shape listing).
void save_checkpoint(const std::string& dir, DetectorModel& model);
DetectorModel load_checkpoint(const std::string& dir);

}  // namespace fusedet
