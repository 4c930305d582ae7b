#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <span>
#include <vector>

// Test-only reference implementations, independent of the library's crypto
// backend. The SHA-256 here is written directly from the FIPS 180-4
// algorithm description and shares no code with the implementation under
// test; extend-chain and selection digests are recomputed from it.
namespace oracle {

namespace detail {

inline constexpr std::array<std::uint32_t, 64> kRoundConstants = {
    0x428a2f98, 0x71374491, 0xb5c0fbcf, 0xe9b5dba5, 0x3956c25b, 0x59f111f1, 0x923f82a4,
    0xab1c5ed5, 0xd807aa98, 0x12835b01, 0x243185be, 0x550c7dc3, 0x72be5d74, 0x80deb1fe,
    0x9bdc06a7, 0xc19bf174, 0xe49b69c1, 0xefbe4786, 0x0fc19dc6, 0x240ca1cc, 0x2de92c6f,
    0x4a7484aa, 0x5cb0a9dc, 0x76f988da, 0x983e5152, 0xa831c66d, 0xb00327c8, 0xbf597fc7,
    0xc6e00bf3, 0xd5a79147, 0x06ca6351, 0x14292967, 0x27b70a85, 0x2e1b2138, 0x4d2c6dfc,
    0x53380d13, 0x650a7354, 0x766a0abb, 0x81c2c92e, 0x92722c85, 0xa2bfe8a1, 0xa81a664b,
    0xc24b8b70, 0xc76c51a3, 0xd192e819, 0xd6990624, 0xf40e3585, 0x106aa070, 0x19a4c116,
    0x1e376c08, 0x2748774c, 0x34b0bcb5, 0x391c0cb3, 0x4ed8aa4a, 0x5b9cca4f, 0x682e6ff3,
    0x748f82ee, 0x78a5636f, 0x84c87814, 0x8cc70208, 0x90befffa, 0xa4506ceb, 0xbef9a3f7,
    0xc67178f2};

inline std::uint32_t rotr(std::uint32_t x, int n) { return (x >> n) | (x << (32 - n)); }

inline void compress(std::array<std::uint32_t, 8>& state, const std::uint8_t block[64]) {
    std::uint32_t w[64];
    for (int t = 0; t < 16; ++t)
        w[t] = static_cast<std::uint32_t>(block[4 * t]) << 24 |
               static_cast<std::uint32_t>(block[4 * t + 1]) << 16 |
               static_cast<std::uint32_t>(block[4 * t + 2]) << 8 | block[4 * t + 3];
    for (int t = 16; t < 64; ++t) {
        std::uint32_t s0 = rotr(w[t - 15], 7) ^ rotr(w[t - 15], 18) ^ (w[t - 15] >> 3);
        std::uint32_t s1 = rotr(w[t - 2], 17) ^ rotr(w[t - 2], 19) ^ (w[t - 2] >> 10);
        w[t] = w[t - 16] + s0 + w[t - 7] + s1;
    }
    auto [a, b, c, d, e, f, g, h] = state;
    for (int t = 0; t < 64; ++t) {
        std::uint32_t S1 = rotr(e, 6) ^ rotr(e, 11) ^ rotr(e, 25);
        std::uint32_t ch = (e & f) ^ (~e & g);
        std::uint32_t temp1 = h + S1 + ch + kRoundConstants[t] + w[t];
        std::uint32_t S0 = rotr(a, 2) ^ rotr(a, 13) ^ rotr(a, 22);
        std::uint32_t maj = (a & b) ^ (a & c) ^ (b & c);
        std::uint32_t temp2 = S0 + maj;
        h = g;
        g = f;
        f = e;
        e = d + temp1;
        d = c;
        c = b;
        b = a;
        a = temp1 + temp2;
    }
    state[0] += a;
    state[1] += b;
    state[2] += c;
    state[3] += d;
    state[4] += e;
    state[5] += f;
    state[6] += g;
    state[7] += h;
}

}  // namespace detail

inline std::array<std::uint8_t, 32> sha256(std::span<const std::uint8_t> data) {
    std::array<std::uint32_t, 8> state = {0x6a09e667, 0xbb67ae85, 0x3c6ef372, 0xa54ff53a,
                                          0x510e527f, 0x9b05688c, 0x1f83d9ab, 0x5be0cd19};
    std::uint64_t bit_len = static_cast<std::uint64_t>(data.size()) * 8;

    std::size_t full = data.size() / 64;
    for (std::size_t i = 0; i < full; ++i) detail::compress(state, data.data() + 64 * i);

    std::uint8_t tail[128] = {0};
    std::size_t rest = data.size() % 64;
    if (rest) std::memcpy(tail, data.data() + 64 * full, rest);
    tail[rest] = 0x80;
    std::size_t tail_len = rest + 1 + 8 <= 64 ? 64 : 128;
    for (int i = 0; i < 8; ++i)
        tail[tail_len - 8 + i] = static_cast<std::uint8_t>(bit_len >> (56 - 8 * i));
    detail::compress(state, tail);
    if (tail_len == 128) detail::compress(state, tail + 64);

    std::array<std::uint8_t, 32> out{};
    for (int i = 0; i < 8; ++i) {
        out[4 * i] = static_cast<std::uint8_t>(state[i] >> 24);
        out[4 * i + 1] = static_cast<std::uint8_t>(state[i] >> 16);
        out[4 * i + 2] = static_cast<std::uint8_t>(state[i] >> 8);
        out[4 * i + 3] = static_cast<std::uint8_t>(state[i]);
    }
    return out;
}

using Register = std::array<std::uint8_t, 32>;
using Bank = std::array<Register, 24>;

inline Register extend(const Register& old_value, const Register& measurement) {
    std::uint8_t buf[64];
    std::memcpy(buf, old_value.data(), 32);
    std::memcpy(buf + 32, measurement.data(), 32);
    return sha256(std::span<const std::uint8_t>(buf, 64));
}

inline Register measure(std::span<const std::uint8_t> payload) { return sha256(payload); }

/// Replay a measurement schedule over a zeroed bank.
inline Bank replay(const std::vector<std::pair<std::uint32_t, Register>>& schedule) {
    Bank bank{};
    for (const auto& [index, m] : schedule) bank[index] = extend(bank[index], m);
    return bank;
}

/// Brute-force concatenation digest over an ascending-index selection.
inline Register selection_digest(const Bank& bank, std::uint32_t selection) {
    std::vector<std::uint8_t> buf;
    for (std::uint32_t i = 0; i < 24; ++i)
        if (selection & (1u << i)) buf.insert(buf.end(), bank[i].begin(), bank[i].end());
    return sha256(buf);
}

}  // namespace oracle
