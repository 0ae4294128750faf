#pragma once

#include <map>
#include <string>
#include <vector>

#include "simreglab/trainer.hpp"

namespace simreg {

// Flat "key = value" configuration with dotted namespaces. Every key has a
// default, so an empty file is a valid config. Unknown keys are errors.
struct ConfigMap {
    std::map<std::string, std::string> values;

    const std::string& get(const std::string& key) const;
    void set(const std::string& key, const std::string& value);  // throws on unknown key
};

ConfigMap default_config();
ConfigMap load_config(const std::string& path);

// "key=value" as passed to --set
void apply_override(ConfigMap& cfg, const std::string& assignment);

TrainConfig to_train_config(const ConfigMap& cfg);

// key -> (default, description), for --help and the README table
std::vector<std::pair<std::string, std::pair<std::string, std::string>>> config_docs();

}  // namespace simreg
