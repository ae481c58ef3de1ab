#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bpcf/engine.hpp"

namespace bpcf {

// Full run configuration: sampler settings plus the orchestration knobs the
// command-line tool needs.  Parsed from flat key=value text; named profiles
// provide complete baseline settings that individual keys then override.
struct RunConfig {
  SamplerConfig sampler;
  std::uint64_t seed = 1;
  int replications = 1;
  int sim_n = 300;
  double clip = 0.01;
  std::string profile = "paper_default";
  std::vector<std::string> methods = {"bpcf"};
  int checkpoint_every = 0;

  static const std::vector<std::string>& profile_names();
  static RunConfig from_profile(const std::string& name);

  // Applies one key=value override; throws on unknown keys or bad values.
  void set(const std::string& key, const std::string& value);

  // Reads a key=value file ('#' comments).  A "profile" key must come first
  // if present; profile_override, when non-empty, wins over the file's.
  static RunConfig load_file(const std::string& path,
                             const std::string& profile_override = "");

  // Canonical key=value rendering of every field, identical for identical
  // configurations; basis of hash().
  std::string canonical() const;
  std::uint64_t hash() const;

  void validate() const;
};

}  // namespace bpcf
