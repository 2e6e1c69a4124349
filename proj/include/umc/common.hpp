#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace umc {

// Error taxonomy: shape/contract errors are programming or pipeline wiring
// mistakes, input/config errors come from user-supplied data, format errors
// from on-disk artifacts.
class ShapeError : public std::runtime_error {
public:
    explicit ShapeError(const std::string& msg) : std::runtime_error("shape error: " + msg) {}
};

class ContractError : public std::runtime_error {
public:
    explicit ContractError(const std::string& msg) : std::runtime_error("contract error: " + msg) {}
};

class InputError : public std::runtime_error {
public:
    explicit InputError(const std::string& msg) : std::runtime_error("input error: " + msg) {}
};

class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& msg) : std::runtime_error("config error: " + msg) {}
};

class FormatError : public std::runtime_error {
public:
    explicit FormatError(const std::string& msg) : std::runtime_error("format error: " + msg) {}
};

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw ContractError(msg);
}

// Deterministic RNG. Box-Muller instead of std::normal_distribution so that
// draws are identical across standard library implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    std::uint64_t raw() { return eng_(); }

    double uniform() {  // [0, 1)
        return static_cast<double>(eng_() >> 11) * (1.0 / 9007199254740992.0);
    }

    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 1e-300) u1 = uniform();
        const double mag = std::sqrt(-2.0 * std::log(u1));
        const double two_pi = 6.283185307179586476925287;
        spare_ = mag * std::sin(two_pi * u2);
        has_spare_ = true;
        return mag * std::cos(two_pi * u2);
    }

    // Uniform integer in [0, n).
    std::uint64_t index(std::uint64_t n) {
        require(n > 0, "Rng::index needs n > 0");
        return eng_() % n;
    }

private:
    std::mt19937_64 eng_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

enum class Component { Understanding, Generation };

inline const char* component_name(Component c) {
    return c == Component::Understanding ? "und" : "gen";
}

inline Component component_from_name(const std::string& s) {
    if (s == "und" || s == "understanding") return Component::Understanding;
    if (s == "gen" || s == "generation") return Component::Generation;
    throw InputError("unknown component '" + s + "'");
}

enum class Granularity { Block, Mlp, Attn };

inline const char* granularity_name(Granularity g) {
    switch (g) {
        case Granularity::Block: return "block";
        case Granularity::Mlp: return "mlp";
        default: return "attn";
    }
}

inline Granularity granularity_from_name(const std::string& s) {
    if (s == "block") return Granularity::Block;
    if (s == "mlp") return Granularity::Mlp;
    if (s == "attn") return Granularity::Attn;
    throw InputError("unknown granularity '" + s + "'");
}

}  // namespace umc
