#include <ATen/CPUGeneratorImpl.h>

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <mutex>
#include <sstream>

#include "reconad/error.hpp"
#include "reconad/network.hpp"
#include "reconad/random.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace reconad {

namespace {

// Parameter initialization draws from torch's global generator.
std::mutex& init_mutex() {
    static std::mutex m;
    return m;
}

torch::Tensor activate(const torch::Tensor& x, Activation a) {
    switch (a) {
        case Activation::ReLU: return torch::relu(x);
        case Activation::LeakyReLU: return torch::leaky_relu(x, 0.2);
        case Activation::Sigmoid: return torch::sigmoid(x);
        case Activation::None: return x;
    }
    return x;
}

class ActivationLayerImpl : public torch::nn::Module {
public:
    explicit ActivationLayerImpl(Activation a) : a_(a) {}
    torch::Tensor forward(const torch::Tensor& x) { return activate(x, a_); }

private:
    Activation a_;
};
TORCH_MODULE(ActivationLayer);

void append_layer(torch::nn::Sequential& seq, const LayerSpec& layer, int in_channels) {
    namespace nn = torch::nn;
    switch (layer.kind) {
        case LayerKind::Conv:
            if (layer.stride == 1) {
                // "same" padding; even kernels put the extra row/column after
                const int before = (layer.kernel - 1) / 2, after = layer.kernel / 2;
                if (layer.kernel > 1) seq->push_back(nn::ZeroPad2d(nn::ZeroPad2dOptions({before, after, before, after})));
                seq->push_back(nn::Conv2d(nn::Conv2dOptions(in_channels, layer.filters, layer.kernel)));
            } else {
                seq->push_back(nn::Conv2d(nn::Conv2dOptions(in_channels, layer.filters, layer.kernel)
                                              .stride(layer.stride)
                                              .padding((layer.kernel - 1) / 2)));
            }
            break;
        case LayerKind::ConvTranspose:
            seq->push_back(nn::ConvTranspose2d(nn::ConvTranspose2dOptions(in_channels, layer.filters, layer.kernel)
                                                   .stride(layer.stride)
                                                   .padding((layer.kernel - 1) / 2)
                                                   .output_padding(layer.stride - 1)));
            break;
        case LayerKind::MaxPool:
            seq->push_back(nn::MaxPool2d(nn::MaxPool2dOptions(2)));
            return;
        case LayerKind::Upsample:
            seq->push_back(nn::Upsample(
                nn::UpsampleOptions().scale_factor(std::vector<double>{2.0, 2.0}).mode(torch::kNearest)));
            return;
        default:
            throw DomainError("layer '" + layer.name + "' cannot be placed in a convolutional stack");
    }
    if (layer.batch_norm) seq->push_back(nn::BatchNorm2d(layer.filters));
    if (layer.activation != Activation::None) seq->push_back(ActivationLayer(layer.activation));
}

double scalar(const torch::Tensor& t) { return t.defined() ? t.item<double>() : 0.0; }

class TorchBackend final : public ReconstructionBackend {
public:
    TorchBackend(AutoencoderNet net) : net_(std::move(net)) { net_->eval(); }

    std::vector<cv::Mat> reconstruct(std::span<const cv::Mat> images) const override {
        std::vector<cv::Mat> out;
        out.reserve(images.size());
        constexpr std::size_t kChunk = 16;
        std::lock_guard lock(mutex_);
        torch::NoGradGuard no_grad;
        for (std::size_t start = 0; start < images.size(); start += kChunk) {
            const auto chunk = images.subspan(start, std::min(kChunk, images.size() - start));
            const auto result = net_->forward(to_tensor(chunk), false).reconstruction;
            for (int64_t i = 0; i < result.size(0); ++i) out.push_back(to_image(result[i]));
        }
        return out;
    }

    Latent encode(const cv::Mat& image) const override {
        std::lock_guard lock(mutex_);
        torch::NoGradGuard no_grad;
        const auto outputs = net_->forward(to_tensor(std::span(&image, 1)), false);
        torch::Tensor values;
        Latent latent;
        switch (net_->spec().core) {
            case Core::VAE1:
            case Core::VAE2: values = outputs.mean; break;
            case Core::VQVAE1:
                values = outputs.quantized;
                {
                    auto idx = outputs.indices[0].contiguous();
                    latent.index_shape.assign(idx.sizes().begin(), idx.sizes().end());
                    latent.indices.assign(idx.data_ptr<int64_t>(), idx.data_ptr<int64_t>() + idx.numel());
                }
                break;
            default: values = outputs.bottleneck; break;
        }
        auto v = values[0].contiguous().to(torch::kFloat32);
        latent.shape.assign(v.sizes().begin(), v.sizes().end());
        latent.values.assign(v.data_ptr<float>(), v.data_ptr<float>() + v.numel());
        return latent;
    }

    void save_weights(const fs::path& file) const override {
        std::lock_guard lock(mutex_);
        torch::save(net_, file.string());
    }

private:
    mutable std::mutex mutex_;
    mutable AutoencoderNet net_;
};

AutoencoderNet seeded_network(const ModelSpec& spec, std::uint64_t seed) {
    std::lock_guard lock(init_mutex());
    torch::manual_seed(seed);
    return AutoencoderNet(spec);
}

std::vector<torch::Tensor> snapshot(const AutoencoderNet& net) {
    std::vector<torch::Tensor> state;
    for (const auto& p : net->parameters()) state.push_back(p.detach().clone());
    for (const auto& b : net->buffers()) state.push_back(b.detach().clone());
    return state;
}

void restore(AutoencoderNet& net, const std::vector<torch::Tensor>& state) {
    torch::NoGradGuard no_grad;
    std::size_t i = 0;
    for (auto& p : net->parameters()) p.copy_(state[i++]);
    for (auto& b : net->buffers()) b.copy_(state[i++]);
}

json log_to_json(const std::vector<EpochLog>& log) {
    json arr = json::array();
    for (const auto& e : log) {
        arr.push_back({{"epoch", e.epoch},
                       {"train_loss", e.train_loss},
                       {"validation_loss", std::isfinite(e.validation_loss) ? json(e.validation_loss) : json()}});
    }
    return arr;
}

}  // namespace

// ---------------------------------------------------------------------------
// Tensor conversion

torch::Tensor to_tensor(std::span<const cv::Mat> images) {
    std::vector<torch::Tensor> items;
    items.reserve(images.size());
    for (const auto& img : images) {
        cv::Mat m = img.isContinuous() ? img : img.clone();
        if (m.depth() != CV_32F) m.convertTo(m, CV_MAKETYPE(CV_32F, m.channels()));
        auto t = torch::from_blob(m.data, {m.rows, m.cols, m.channels()}, torch::kFloat32);
        items.push_back(t.permute({2, 0, 1}).clone());
    }
    return torch::stack(items);
}

cv::Mat to_image(const torch::Tensor& chw) {
    auto hwc = chw.detach().to(torch::kFloat32).permute({1, 2, 0}).contiguous();
    const int h = static_cast<int>(hwc.size(0)), w = static_cast<int>(hwc.size(1)), c = static_cast<int>(hwc.size(2));
    cv::Mat view(h, w, CV_MAKETYPE(CV_32F, c), hwc.data_ptr<float>());
    return view.clone();
}

// ---------------------------------------------------------------------------
// Vector quantizer

VectorQuantizerImpl::VectorQuantizerImpl(int codebook_size, int embedding_dim) {
    codebook = register_parameter(
        "codebook", torch::empty({codebook_size, embedding_dim}).uniform_(-1.0 / codebook_size, 1.0 / codebook_size));
}

std::pair<torch::Tensor, torch::Tensor> VectorQuantizerImpl::forward(const torch::Tensor& encoded) {
    const auto n = encoded.size(0), d = encoded.size(1), h = encoded.size(2), w = encoded.size(3);
    auto flat = encoded.permute({0, 2, 3, 1}).reshape({-1, d});
    auto distances = flat.pow(2).sum(1, true) - 2 * flat.matmul(codebook.t()) + codebook.pow(2).sum(1).unsqueeze(0);
    auto indices = distances.argmin(1);
    auto quantized = codebook.index_select(0, indices).view({n, h, w, d}).permute({0, 3, 1, 2});
    return {quantized, indices.view({n, h, w})};
}

// ---------------------------------------------------------------------------
// Network

AutoencoderNetImpl::AutoencoderNetImpl(const ModelSpec& spec) : spec_(spec) {
    namespace nn = torch::nn;
    encoder = register_module("encoder", nn::Sequential());
    decoder = register_module("decoder", nn::Sequential());

    int channels = spec.input.channels;
    for (const auto* layer : spec.section(Section::Encoder)) {
        append_layer(encoder, *layer, channels);
        channels = layer->output.channels;
    }
    encoded_shape_ = spec.section(Section::Encoder).back()->output;
    const int flat = encoded_shape_.channels * encoded_shape_.height * encoded_shape_.width;
    const LatentConfig& lc = spec.latent;

    switch (spec.core) {
        case Core::BAE1: break;
        case Core::BAE2:
            fc_in = register_module("fc_in", nn::Linear(flat, lc.fc_width));
            fc_out = register_module("fc_out", nn::Linear(lc.fc_width, flat));
            break;
        case Core::VAE1:
            head_mean = register_module("head_mean", nn::Conv2d(nn::Conv2dOptions(channels, lc.vae_channels, 1)));
            head_logvar = register_module("head_logvar", nn::Conv2d(nn::Conv2dOptions(channels, lc.vae_channels, 1)));
            channels = lc.vae_channels;
            break;
        case Core::VAE2:
            fc_in = register_module("fc_in", nn::Linear(flat, lc.fc_width));
            fc_logvar = register_module("fc_logvar", nn::Linear(flat, lc.fc_width));
            fc_out = register_module("fc_out", nn::Linear(lc.fc_width, flat));
            break;
        case Core::VQVAE1:
            pre_quant = register_module("pre_quant", nn::Conv2d(nn::Conv2dOptions(channels, lc.embedding_dim, 1)));
            quantizer = register_module("quantizer", VectorQuantizer(lc.codebook_size, lc.embedding_dim));
            channels = lc.embedding_dim;
            break;
    }

    for (const auto* layer : spec.section(Section::Decoder)) {
        append_layer(decoder, *layer, channels);
        if (layer->kind == LayerKind::Conv || layer->kind == LayerKind::ConvTranspose) channels = layer->filters;
    }
}

ModelOutputs AutoencoderNetImpl::forward(const torch::Tensor& input, bool sample_latent,
                                         std::optional<at::Generator> generator) {
    ModelOutputs out;
    const Activation act = spec_.conv_pair == ConvPair::ConvM1 ? Activation::LeakyReLU : Activation::ReLU;
    auto h = encoder->forward(input);
    const auto n = h.size(0);
    auto reshape = [&](const torch::Tensor& flat) {
        return flat.view({n, encoded_shape_.channels, encoded_shape_.height, encoded_shape_.width});
    };
    auto draw = [&](const torch::Tensor& mean, const torch::Tensor& logvar) {
        if (!sample_latent) return mean;
        auto eps = generator ? at::randn(mean.sizes(), *generator, mean.options()) : torch::randn_like(mean);
        return mean + eps * torch::exp(0.5 * logvar);
    };

    torch::Tensor z;
    switch (spec_.core) {
        case Core::BAE1:
            out.bottleneck = h;
            z = h;
            break;
        case Core::BAE2:
            out.bottleneck = activate(fc_in->forward(h.flatten(1)), act);
            z = reshape(activate(fc_out->forward(out.bottleneck), act));
            break;
        case Core::VAE1:
            out.mean = head_mean->forward(h);
            out.logvar = head_logvar->forward(h);
            z = draw(out.mean, out.logvar);
            break;
        case Core::VAE2: {
            auto flat = h.flatten(1);
            out.mean = fc_in->forward(flat);
            out.logvar = fc_logvar->forward(flat);
            z = reshape(activate(fc_out->forward(draw(out.mean, out.logvar)), act));
            break;
        }
        case Core::VQVAE1: {
            out.encoded = pre_quant->forward(h);
            auto [quantized, indices] = quantizer->forward(out.encoded);
            out.quantized = quantized;
            out.indices = indices;
            z = out.encoded + (quantized - out.encoded).detach();  // straight-through gradient
            break;
        }
    }
    out.reconstruction = decoder->forward(z);
    return out;
}

// ---------------------------------------------------------------------------
// Loss

torch::Tensor kl_divergence(const torch::Tensor& mean, const torch::Tensor& logvar) {
    return -0.5 * (1 + logvar - mean.pow(2) - logvar.exp()).flatten(1).sum(1);
}

LossTerms compute_loss(Core core, const torch::Tensor& targets, const ModelOutputs& outputs,
                       const LossOptions& options) {
    if (!outputs.reconstruction.defined() || outputs.reconstruction.sizes() != targets.sizes()) {
        throw ShapeError("reconstruction and target shapes differ");
    }
    LossTerms terms;
    auto reconstruction = torch::mse_loss(outputs.reconstruction, targets);
    terms.total = reconstruction;
    terms.reconstruction = scalar(reconstruction);

    switch (core) {
        case Core::BAE1:
        case Core::BAE2: break;
        case Core::VAE1:
        case Core::VAE2: {
            if (!outputs.mean.defined() || !outputs.logvar.defined()) throw ShapeError("VAE outputs need mean and logvar");
            auto kl = kl_divergence(outputs.mean, outputs.logvar).mean();
            const double per_sample = static_cast<double>(targets[0].numel());
            const double weight = options.kl_weight >= 0 ? options.kl_weight : 1.0 / per_sample;
            terms.total = terms.total + weight * kl;
            terms.kl = scalar(kl);
            break;
        }
        case Core::VQVAE1: {
            if (!outputs.encoded.defined() || !outputs.quantized.defined()) {
                throw ShapeError("VQVAE outputs need encoded and quantized tensors");
            }
            auto codebook = torch::mse_loss(outputs.quantized, outputs.encoded.detach());
            auto commitment = torch::mse_loss(outputs.encoded, outputs.quantized.detach());
            terms.total = terms.total + codebook + options.commitment_beta * commitment;
            terms.codebook = scalar(codebook);
            terms.commitment = scalar(commitment);
            break;
        }
    }
    for (double v : {scalar(terms.total), terms.reconstruction, terms.kl, terms.codebook, terms.commitment}) {
        if (!std::isfinite(v)) throw NumericError("non-finite loss term");
    }
    return terms;
}

// ---------------------------------------------------------------------------
// TrainedAE

void InMemoryImages::add(std::string id, cv::Mat pixels, SampleLabel label) {
    entries_.insert_or_assign(std::move(id), std::make_pair(std::move(pixels), label));
}

cv::Mat InMemoryImages::image(const std::string& id) const {
    auto it = entries_.find(id);
    if (it == entries_.end()) throw LoadError("unknown sample id '" + id + "'");
    return it->second.first;
}

SampleLabel InMemoryImages::label(const std::string& id) const {
    auto it = entries_.find(id);
    if (it == entries_.end()) throw LoadError("unknown sample id '" + id + "'");
    return it->second.second;
}

TrainedAE::TrainedAE(ModelSpec spec, std::shared_ptr<const ReconstructionBackend> backend,
                     std::vector<EpochLog> log, std::uint64_t seed)
    : spec_(std::move(spec)), backend_(std::move(backend)), log_(std::move(log)), seed_(seed) {}

void TrainedAE::check_shape(const cv::Mat& image) const {
    if (image.rows != spec_.input.height || image.cols != spec_.input.width ||
        image.channels() != spec_.input.channels) {
        std::ostringstream msg;
        msg << "image shape " << image.rows << "x" << image.cols << "x" << image.channels() << " does not match model input "
            << spec_.input.height << "x" << spec_.input.width << "x" << spec_.input.channels;
        throw ShapeError(msg.str());
    }
}

ReconstructionTriplet TrainedAE::reconstruct(const cv::Mat& image) const {
    return reconstruct(std::span(&image, 1)).front();
}

std::vector<ReconstructionTriplet> TrainedAE::reconstruct(std::span<const cv::Mat> images) const {
    for (const auto& img : images) check_shape(img);
    auto recon = backend_->reconstruct(images);
    std::vector<ReconstructionTriplet> out;
    out.reserve(images.size());
    for (std::size_t i = 0; i < images.size(); ++i) {
        ReconstructionTriplet t;
        t.original = images[i].clone();
        cv::min(cv::max(recon[i], 0.0), 1.0, t.reconstruction);
        cv::absdiff(t.original, t.reconstruction, t.difference);
        out.push_back(std::move(t));
    }
    return out;
}

Latent TrainedAE::encode_latent(const cv::Mat& image) const {
    check_shape(image);
    return backend_->encode(image);
}

void TrainedAE::save(const fs::path& dir) const {
    fs::create_directories(dir);
    backend_->save_weights(dir / "weights.pt");
    json sidecar{{"core", to_string(spec_.core)},
                 {"conv_pair", to_string(spec_.conv_pair)},
                 {"input_shape", {spec_.input.height, spec_.input.width, spec_.input.channels}},
                 {"latent_config", to_json(spec_.latent)},
                 {"seed", seed_},
                 {"training_log", log_to_json(log_)}};
    std::ofstream(dir / "model.json") << sidecar.dump(2) << '\n';
}

TrainedAE TrainedAE::load(const fs::path& dir) {
    std::ifstream in(dir / "model.json");
    if (!in) throw LoadError("missing checkpoint sidecar in " + dir.string());
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ParseError((dir / "model.json").string() + ": " + e.what());
    }
    const auto shape = doc.at("input_shape").get<std::vector<int>>();
    if (shape.size() != 3) throw SchemaError("input_shape must have 3 entries");
    ModelSpec spec = build_model(parse_core(doc.at("core").get<std::string>()),
                                 parse_conv_pair(doc.at("conv_pair").get<std::string>()),
                                 {shape[0], shape[1], shape[2]}, latent_from_json(doc.at("latent_config")));
    const auto seed = doc.at("seed").get<std::uint64_t>();
    std::vector<EpochLog> log;
    for (const auto& e : doc.at("training_log")) {
        log.push_back({e.at("epoch").get<int>(), e.at("train_loss").get<double>(),
                       e.at("validation_loss").is_null() ? std::numeric_limits<double>::quiet_NaN()
                                                         : e.at("validation_loss").get<double>()});
    }
    auto net = seeded_network(spec, seed);
    try {
        torch::load(net, (dir / "weights.pt").string());
    } catch (const c10::Error& e) {
        throw LoadError("cannot read weights from " + dir.string() + ": " + e.what_without_backtrace());
    }
    return TrainedAE(std::move(spec), std::make_shared<TorchBackend>(std::move(net)), std::move(log), seed);
}

std::shared_ptr<const ReconstructionBackend> make_network_backend(const ModelSpec& spec, std::uint64_t seed) {
    return std::make_shared<TorchBackend>(seeded_network(spec, seed));
}

std::string file_digest(const fs::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw LoadError("cannot open " + file.string());
    std::uint64_t hash = 1469598103934665603ULL;
    char buf[1 << 16];
    while (in) {
        in.read(buf, sizeof buf);
        for (std::streamsize i = 0; i < in.gcount(); ++i) {
            hash ^= static_cast<unsigned char>(buf[i]);
            hash *= 1099511628211ULL;
        }
    }
    std::ostringstream out;
    out << std::hex << std::setw(16) << std::setfill('0') << hash;
    return out.str();
}

// ---------------------------------------------------------------------------
// Training

TrainedAE train(const ModelSpec& spec, const DatasetSplit& split, const ImageSource& images,
                const TrainingConfig& config) {
    config.validate();
    for (const auto& id : split.train) {
        if (images.label(id) != SampleLabel::OK) {
            throw ContractError("training list contains NOK sample '" + id + "'");
        }
    }
    if (split.train.empty()) throw CapacityError("training list is empty");

    auto load_checked = [&](const std::string& id) {
        cv::Mat m = images.image(id);
        if (m.rows != spec.input.height || m.cols != spec.input.width || m.channels() != spec.input.channels) {
            throw ShapeError("sample '" + id + "' is not resized to the model input shape");
        }
        return m;
    };
    std::vector<cv::Mat> train_images;
    for (const auto& id : split.train) train_images.push_back(load_checked(id));
    std::vector<cv::Mat> val_images;
    for (const auto& [id, label] : split.validation) {
        if (label == SampleLabel::OK) val_images.push_back(load_checked(id));
    }
    const torch::Tensor val_tensor = val_images.empty() ? torch::Tensor() : to_tensor(val_images);

    auto net = seeded_network(spec, config.seed);
    torch::optim::Adam optimizer(net->parameters(), torch::optim::AdamOptions(config.learning_rate)
                                                        .betas({config.beta1, config.beta2}));
    const LossOptions loss_options{spec.latent.commitment_beta, -1};
    auto generator = at::detail::createCPUGenerator(mix_seed(config.seed, 0xA5));

    std::vector<EpochLog> log;
    double best = std::numeric_limits<double>::infinity();
    int since_best = 0;
    std::vector<torch::Tensor> best_state;

    std::vector<std::size_t> order(train_images.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        net->train();
        Rng rng(mix_seed(config.seed, 1000 + static_cast<std::uint64_t>(epoch)));
        shuffle(order, rng);
        double loss_sum = 0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
            const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
            std::vector<cv::Mat> inputs, targets;
            for (std::size_t k = start; k < stop; ++k) {
                AugmentationPolicy policy = config.augmentation;
                policy.seed = mix_seed(config.seed, (static_cast<std::uint64_t>(epoch) << 32) | order[k]);
                cv::Mat clean = augment(train_images[order[k]], policy);
                inputs.push_back(add_salt_pepper(clean, policy.salt_pepper_fraction, mix_seed(policy.seed, 7)));
                targets.push_back(std::move(clean));
            }
            auto x = to_tensor(inputs);
            auto y = to_tensor(targets);
            // VAE posterior samples come from a training-local generator
            ModelOutputs outputs = net->forward(x, true, generator);
            LossTerms terms;
            try {
                terms = compute_loss(spec.core, y, outputs, loss_options);
            } catch (const NumericError&) {
                throw TrainingError("loss diverged (non-finite) at epoch " + std::to_string(epoch), epoch);
            }
            optimizer.zero_grad();
            terms.total.backward();
            optimizer.step();
            loss_sum += terms.total.item<double>() * static_cast<double>(stop - start);
        }

        EpochLog entry{epoch, loss_sum / static_cast<double>(order.size()), std::numeric_limits<double>::quiet_NaN()};
        if (!std::isfinite(entry.train_loss)) {
            throw TrainingError("loss diverged (non-finite) at epoch " + std::to_string(epoch), epoch);
        }
        if (val_tensor.defined()) {
            net->eval();
            torch::NoGradGuard no_grad;
            double sum = 0;
            for (int64_t s = 0; s < val_tensor.size(0); s += 32) {
                auto chunk = val_tensor.slice(0, s, std::min<int64_t>(s + 32, val_tensor.size(0)));
                sum += torch::mse_loss(net->forward(chunk, false).reconstruction, chunk).item<double>() *
                       static_cast<double>(chunk.size(0));
            }
            entry.validation_loss = sum / static_cast<double>(val_tensor.size(0));
        }
        log.push_back(entry);
        if (config.on_epoch) config.on_epoch(entry);

        if (config.patience > 0 && val_tensor.defined()) {
            if (entry.validation_loss < best) {
                best = entry.validation_loss;
                since_best = 0;
                best_state = snapshot(net);
            } else if (++since_best >= config.patience) {
                break;
            }
        }
    }
    if (!best_state.empty()) restore(net, best_state);
    return TrainedAE(spec, std::make_shared<TorchBackend>(std::move(net)), std::move(log), config.seed);
}

}  // namespace reconad
