// Copyright (C) 2026 The CRN Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "crn/captioner.hpp"
#include "crn/evalbench.hpp"
#include "crn/revision.hpp"
#include "crn/synthworld.hpp"

// Run configuration file grammar:
//
//   file    := { line '\n' }
//   line    := blank | comment | entry
//   comment := ws '#' any*
//   entry   := ws key ws '=' ws value ws [ '#' any* ]
//   key     := section '.' name | name       (e.g. train.lr, seed)
//   value   := any non-'#' characters; lists are comma separated
//
// Unknown keys and malformed values are errors reported with the line number.

namespace crn {

struct RunConfig {
    std::uint64_t seed = 0;
    std::string out_dir = "out";
    std::size_t jobs = 1;

    WorldConfig world;
    DataConfig data;
    DetectorNoise detector;
    std::size_t hidden_dim = 64;
    TrainConfig train;
    RevisionConfig revision;
    double feedback_tau_p = 0.15;
    std::size_t max_len = 16;
    std::size_t fixed_positions = 2;

    void validate() const;
    EvalConfig eval_config() const;
};

/// Every key accepted by apply_setting, in documentation order.
std::vector<std::string> config_keys();

/// Sets one dotted key. Throws Error on an unknown key or a bad value.
void apply_setting(RunConfig& cfg, std::string_view key, std::string_view value);

/// Applies every entry of a config stream on top of `cfg`.
void read_config(std::istream& in, RunConfig& cfg, const std::string& source = "<stream>");
void load_config(const std::string& path, RunConfig& cfg);

/// Round-trippable `key = value` dump of every field.
std::string dump_config(const RunConfig& cfg);

} // namespace crn
