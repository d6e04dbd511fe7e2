#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

namespace rcm {

enum class Backend { Auto, Fft, Naive };

Backend parse_backend(std::string_view name);
std::string_view backend_name(Backend backend);

// Below this length (of the shorter operand) Auto uses the direct kernel.
inline constexpr std::size_t kFftThreshold = 64;

// out[k] = sum_{i+j=k} a[i] b[j]. Inputs nonnegative and finite.
std::vector<double> convolve(std::span<const double> a, std::span<const double> b,
                             Backend backend = Backend::Auto);

// out[i] = sum_j parent[i+j] sibling[j], for i = 0..|parent|-|sibling|.
std::vector<double> correlate(std::span<const double> parent, std::span<const double> sibling,
                              Backend backend = Backend::Auto);

}  // namespace rcm
