// Copyright (C) 2026 The CRN Authors
// SPDX-License-Identifier: Apache-2.0

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <iostream>
#include <mutex>
#include <numbers>
#include <string>

#include "crn/log.hpp"
#include "crn/rng.hpp"

namespace crn {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001B3ULL;
    }
    return h;
}

} // namespace

std::uint64_t derive_seed(std::uint64_t root, std::string_view stream, std::uint64_t index) {
    return splitmix64(splitmix64(root ^ fnv1a(stream)) + index);
}

double Rng::normal() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::size_t Rng::index(std::size_t n) {
    const std::uint64_t bound = static_cast<std::uint64_t>(n);
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
    std::uint64_t x;
    do {
        x = engine_();
    } while (x >= limit);
    return static_cast<std::size_t>(x % bound);
}

namespace log {

namespace {

Level from_env() {
    const char* env = std::getenv("CRN_LOG");
    if (!env) return Level::info;
    std::string v = env;
    if (v == "error") return Level::error;
    if (v == "debug") return Level::debug;
    return Level::info;
}

std::atomic<int>& threshold_storage() {
    static std::atomic<int> value{static_cast<int>(from_env())};
    return value;
}

std::mutex& sink_mutex() {
    static std::mutex m;
    return m;
}

} // namespace

Level threshold() { return static_cast<Level>(threshold_storage().load()); }

void set_threshold(Level level) { threshold_storage().store(static_cast<int>(level)); }

void write(Level level, std::string_view message) {
    if (static_cast<int>(level) > threshold_storage().load()) return;
    static constexpr const char* names[] = {"error", "info", "debug"};
    std::lock_guard lock(sink_mutex());
    std::cerr << "[crn " << names[static_cast<int>(level)] << "] " << message << '\n';
}

} // namespace log

} // namespace crn
