#pragma once

#include <numbers>

namespace penning::constants {

// CODATA 2018 values. Fixed here so derived numbers are reproducible bit for bit.
inline constexpr double kElementaryCharge = 1.602176634e-19;  // C (exact)
inline constexpr double kHbar = 1.054571817e-34;              // J s
inline constexpr double kBoltzmann = 1.380649e-23;            // J/K (exact)
inline constexpr double kEpsilon0 = 8.8541878128e-12;         // F/m
inline constexpr double kAtomicMassUnit = 1.66053906660e-27;  // kg
inline constexpr double kElectronMass = 9.1093837015e-31;     // kg
inline constexpr double kBohrMagneton = 9.2740100783e-24;     // J/T
inline constexpr double kElectronG = 2.0023;                  // |g_e|, rounded

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

// 9Be atomic mass in u.
inline constexpr double kBe9AtomicMass_u = 9.012183065;

// 1 e*Angstrom/um^2 expressed in C/m: 1.602176634e-29 C m per e*A times 1e12 um^2/m^2.
inline constexpr double kEAngstromPerUm2 = kElementaryCharge * 1e-10 * 1e12;

inline constexpr double kMicro = 1e-6;
inline constexpr double kMega = 1e6;

}  // namespace penning::constants
