#pragma once

// Torch-level pieces of the autoencoder. Only code that needs tensors should
// include this header.

#include <optional>

#include <torch/torch.h>

#include "reconad/autoencoder.hpp"

namespace reconad {

struct ModelOutputs {
    torch::Tensor reconstruction;
    torch::Tensor mean;       // VAE cores
    torch::Tensor logvar;     // VAE cores
    torch::Tensor encoded;    // VQVAE1: encoder output before quantization
    torch::Tensor quantized;  // VQVAE1: nearest codebook vectors
    torch::Tensor indices;    // VQVAE1: [N, h, w] codebook indices
    torch::Tensor bottleneck; // BAE cores: latent activation
};

struct LossTerms {
    torch::Tensor total;
    double reconstruction = 0;
    double kl = 0;          // mean over the batch of per-sample KL
    double codebook = 0;
    double commitment = 0;
};

struct LossOptions {
    double commitment_beta = 0.25;
    /// Weight of the per-sample KL term. Negative selects 1 / (C*H*W), which
    /// makes the total equal to (sum of squared error + KL) per pixel.
    double kl_weight = -1;
};

/// Throws NumericError if any term is non-finite.
LossTerms compute_loss(Core core, const torch::Tensor& targets, const ModelOutputs& outputs,
                       const LossOptions& options = {});

/// KL(N(mean, exp(logvar)) || N(0, I)) per sample, summed over latent elements.
torch::Tensor kl_divergence(const torch::Tensor& mean, const torch::Tensor& logvar);

class VectorQuantizerImpl : public torch::nn::Module {
public:
    VectorQuantizerImpl(int codebook_size, int embedding_dim);

    /// Returns (quantized, indices) for encoder output [N, D, h, w].
    std::pair<torch::Tensor, torch::Tensor> forward(const torch::Tensor& encoded);

    torch::Tensor codebook;  // [K, D]
};
TORCH_MODULE(VectorQuantizer);

class AutoencoderNetImpl : public torch::nn::Module {
public:
    explicit AutoencoderNetImpl(const ModelSpec& spec);

    /// `sample_latent` draws from the VAE posterior (using `generator` when
    /// given); otherwise the posterior mean is used.
    ModelOutputs forward(const torch::Tensor& input, bool sample_latent,
                         std::optional<at::Generator> generator = std::nullopt);

    const ModelSpec& spec() const { return spec_; }

private:
    ModelSpec spec_;
    torch::nn::Sequential encoder{nullptr};
    torch::nn::Sequential decoder{nullptr};
    torch::nn::Linear fc_in{nullptr}, fc_logvar{nullptr}, fc_out{nullptr};
    torch::nn::Conv2d head_mean{nullptr}, head_logvar{nullptr}, pre_quant{nullptr};
    VectorQuantizer quantizer{nullptr};
    TensorShape encoded_shape_;
};
TORCH_MODULE(AutoencoderNet);

/// [N, C, H, W] float tensor from images of identical shape.
torch::Tensor to_tensor(std::span<const cv::Mat> images);
cv::Mat to_image(const torch::Tensor& chw);

}  // namespace reconad
