#pragma once

#include "splatctl/control.hpp"
#include "splatctl/loss.hpp"
#include "splatctl/optim.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace splatctl {

enum class Profile { Desk, Paper };

struct RunConfig {
    Profile profile = Profile::Desk;
    std::uint64_t seed = 42;
    std::string data;   // dataset directory
    std::string output; // run directory

    LossConfig loss;
    ControlConfig control;
    OptimConfig optim;
    // Unset means scaled from the initial count (desk) or the fixed defaults (paper).
    std::optional<std::size_t> tau_remove;
    std::optional<std::size_t> n_batch;

    int max_sh_degree = 3;
    long checkpoint_interval = 500;
    std::size_t n_random_init = 10000;
    int threads = 1;

    static RunConfig defaults(Profile p);

    // Sets one documented key from text. Throws ConfigError on unknown keys
    // or unparsable values.
    void set(const std::string& key, const std::string& value);
    std::string get(const std::string& key) const;

    // Fills the count thresholds from the initial population and validates.
    ControlConfig resolved_control(std::size_t n_init) const;

    // Throws ConfigError.
    void validate() const;

    // "key = value" lines for every key, in documentation order.
    std::string dump() const;
};

struct ConfigKey {
    const char* name;
    const char* help;
};

// Every accepted key with a one-line description. `profile` is first.
const std::vector<ConfigKey>& config_keys();

// Parses "key = value" lines; '#' starts a comment. `profile` is applied
// before any other key regardless of position; duplicates are rejected.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);

} // namespace splatctl
