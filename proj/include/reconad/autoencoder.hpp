#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>
#include <opencv2/core.hpp>

#include "reconad/dataset.hpp"

namespace reconad {

enum class Core { BAE1, BAE2, VAE1, VAE2, VQVAE1 };
enum class ConvPair { ConvM1, ConvM2, ConvM3, ConvM4, ConvM5, ConvM6 };

inline constexpr Core kAllCores[] = {Core::BAE1, Core::BAE2, Core::VAE1, Core::VAE2, Core::VQVAE1};
inline constexpr ConvPair kAllConvPairs[] = {ConvPair::ConvM1, ConvPair::ConvM2, ConvPair::ConvM3,
                                             ConvPair::ConvM4, ConvPair::ConvM5, ConvPair::ConvM6};

std::string_view to_string(Core core);
std::string_view to_string(ConvPair pair);
Core parse_core(std::string_view text);
ConvPair parse_conv_pair(std::string_view text);

struct InputShape {
    int height = 128;
    int width = 256;
    int channels = 1;

    friend bool operator==(const InputShape&, const InputShape&) = default;
};

struct LatentConfig {
    int fc_width = 256;        // BAE2 / VAE2 fully-connected bottleneck
    int vae_channels = 16;     // VAE1 latent channels
    int codebook_size = 512;   // VQVAE1
    int embedding_dim = 64;    // VQVAE1
    double commitment_beta = 0.25;
};

enum class LayerKind {
    Conv,
    ConvTranspose,
    MaxPool,
    Upsample,
    Flatten,
    Dense,
    Reshape,
    GaussianHeads,   // mean + log-variance projections
    Projection,      // 1x1 convolution into / out of the quantizer
    VectorQuantizer,
};

enum class Activation { None, ReLU, LeakyReLU, Sigmoid };

enum class Section { Encoder, Bottleneck, Decoder };

struct TensorShape {
    int channels = 0;
    int height = 0;
    int width = 0;

    friend bool operator==(const TensorShape&, const TensorShape&) = default;
};

struct LayerSpec {
    Section section = Section::Encoder;
    std::string name;
    LayerKind kind = LayerKind::Conv;
    int filters = 0;  // conv filters, dense units, codebook entries
    int kernel = 0;
    int stride = 1;
    bool batch_norm = false;
    Activation activation = Activation::None;
    TensorShape output;
};

/// Fully resolved architecture: core x convolutional pair for one input shape.
struct ModelSpec {
    Core core = Core::BAE1;
    ConvPair conv_pair = ConvPair::ConvM1;
    InputShape input;
    LatentConfig latent;
    std::vector<LayerSpec> layers;
    int downsampling = 1;              // encoder's total spatial reduction
    std::vector<std::string> notes;    // adjustments applied to the base layer tables

    std::string id() const;  // e.g. "ConvM2-VQVAE1"
    std::vector<const LayerSpec*> section(Section s) const;
    /// Text dump in the layout of the encoder/decoder overview tables.
    std::string layer_table() const;
};

/// Throws ShapeError when the input is not divisible by the pair's
/// downsampling factor.
ModelSpec build_model(Core core, ConvPair pair, InputShape input, LatentConfig latent = {});

/// Encoder downsampling factor of a convolutional pair.
int downsampling_factor(ConvPair pair);

nlohmann::json to_json(const LatentConfig& latent);
LatentConfig latent_from_json(const nlohmann::json& doc);

struct EpochLog;

struct TrainingConfig {
    int epochs = 200;
    int batch_size = 32;
    double learning_rate = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    int patience = 20;  // 0 disables early stopping
    std::uint64_t seed = 0;
    AugmentationPolicy augmentation = AugmentationPolicy::training_default();
    std::function<void(const EpochLog&)> on_epoch;  // progress hook, not serialized

    void validate() const;
};

nlohmann::json to_json(const TrainingConfig& config);
TrainingConfig training_from_json(const nlohmann::json& doc);

struct EpochLog {
    int epoch = 0;
    double train_loss = 0;
    double validation_loss = 0;  // NaN when no OK validation samples exist
};

/// Images already resized to the model input shape, with their labels.
class ImageSource {
public:
    virtual ~ImageSource() = default;
    virtual cv::Mat image(const std::string& id) const = 0;
    virtual SampleLabel label(const std::string& id) const = 0;
};

class InMemoryImages final : public ImageSource {
public:
    void add(std::string id, cv::Mat pixels, SampleLabel label);
    cv::Mat image(const std::string& id) const override;
    SampleLabel label(const std::string& id) const override;
    bool contains(const std::string& id) const { return entries_.contains(id); }
    std::size_t size() const { return entries_.size(); }

private:
    std::unordered_map<std::string, std::pair<cv::Mat, SampleLabel>> entries_;
};

struct ReconstructionTriplet {
    cv::Mat original;
    cv::Mat reconstruction;
    cv::Mat difference;  // |original - reconstruction|
};

struct Latent {
    std::vector<float> values;           // bottleneck activation (VQ: quantized vectors)
    std::vector<std::int64_t> shape;     // values shape without batch dimension
    std::vector<std::int64_t> indices;   // VQVAE1 only: codebook index per latent cell
    std::vector<std::int64_t> index_shape;
};

/// Something that maps images to reconstructions. The torch network is the
/// production implementation; tests substitute simple doubles.
class ReconstructionBackend {
public:
    virtual ~ReconstructionBackend() = default;
    virtual std::vector<cv::Mat> reconstruct(std::span<const cv::Mat> images) const = 0;
    virtual Latent encode(const cv::Mat& image) const = 0;
    virtual void save_weights(const std::filesystem::path& file) const = 0;
};

class TrainedAE {
public:
    TrainedAE(ModelSpec spec, std::shared_ptr<const ReconstructionBackend> backend,
              std::vector<EpochLog> log, std::uint64_t seed);

    const ModelSpec& spec() const { return spec_; }
    const std::vector<EpochLog>& training_log() const { return log_; }
    std::uint64_t seed() const { return seed_; }

    ReconstructionTriplet reconstruct(const cv::Mat& image) const;
    std::vector<ReconstructionTriplet> reconstruct(std::span<const cv::Mat> images) const;
    Latent encode_latent(const cv::Mat& image) const;

    /// Writes `weights.pt` and the `model.json` sidecar into `dir`.
    void save(const std::filesystem::path& dir) const;
    static TrainedAE load(const std::filesystem::path& dir);

private:
    void check_shape(const cv::Mat& image) const;

    ModelSpec spec_;
    std::shared_ptr<const ReconstructionBackend> backend_;
    std::vector<EpochLog> log_;
    std::uint64_t seed_ = 0;
};

/// Denoising training on the OK ids of `split.train`. Early stopping watches
/// reconstruction loss on the OK half of `split.validation`.
TrainedAE train(const ModelSpec& spec, const DatasetSplit& split, const ImageSource& images,
                const TrainingConfig& config);

/// Untrained network with deterministic initialization from `seed`.
std::shared_ptr<const ReconstructionBackend> make_network_backend(const ModelSpec& spec, std::uint64_t seed);

/// 64-bit FNV-1a digest of a file's bytes, hex encoded.
std::string file_digest(const std::filesystem::path& file);

}  // namespace reconad
