#pragma once

// Reverse-mode gradients of the mean BCE loss over a list of bags, plus a
// central-difference oracle.
//
// Conventions: ReLU'(0) = 0; max pooling routes each coordinate's gradient
// to the first instance attaining the maximum.

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "milpf/embedset.hpp"
#include "milpf/milhead.hpp"

namespace milpf {

struct LossGrad {
  double loss = 0.0;
  Grad grad;
};

// Throws ConfigError for an empty list, DataError on a dimension mismatch and
// NumericError (naming the tensor) when the loss or a gradient is non-finite.
LossGrad loss_and_grad(std::span<const EmbedBag* const> bags, const HeadParams& p);
LossGrad loss_and_grad(const std::vector<EmbedBag>& bags, const HeadParams& p);

double mean_loss(std::span<const EmbedBag* const> bags, const HeadParams& p);

// Central differences with per-coordinate step h_k = step * (1 + |x_k|).
std::vector<double> fd_gradient(const std::function<double(std::span<const double>)>& f,
                                std::span<const double> x, double step);

Grad fd_grad(std::span<const EmbedBag* const> bags, const HeadParams& p, double step);

// Every ReLU sign and max-pooling argmax in the forward pass over `bags`.
// Two parameter points with equal signatures lie in the same smooth piece.
std::vector<std::uint32_t> kink_signature(std::span<const EmbedBag* const> bags,
                                          const HeadParams& p);

std::vector<const EmbedBag*> bag_pointers(const std::vector<EmbedBag>& bags);

}  // namespace milpf
