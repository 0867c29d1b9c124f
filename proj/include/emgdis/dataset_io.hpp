#pragma once
// On-disk dataset interchange: a directory with manifest.json describing one
// file per recording. Recording files are raw 32-bit little-endian floats,
// row-major samples x channels; .csv files with a ch0..chN header are also
// accepted for hand-made fixtures.

#include <string>
#include <vector>

#include "emgdis/data.hpp"
#include "emgdis/synth.hpp"

namespace emgdis {

void save_dataset(const std::string& dir, const std::vector<Recording>& recordings);

// Loads every recording listed in <dir>/manifest.json. Subjects named in the
// manifest's optional exclude_subjects list are dropped with a warning.
std::vector<Recording> load_manifest(const std::string& dir,
                                     std::vector<std::string>* warnings = nullptr);

SynthConfig load_synth_config(const std::string& path);
void save_synth_config(const std::string& path, const SynthConfig& cfg);

}  // namespace emgdis
