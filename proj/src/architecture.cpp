#include <algorithm>
#include <iomanip>
#include <sstream>

#include "reconad/autoencoder.hpp"
#include "reconad/error.hpp"

using json = nlohmann::json;

namespace reconad {

namespace {

constexpr int kImageChannels = -1;

struct TableRow {
    const char* name;
    LayerKind kind;
    int filters;
    int kernel;
    int stride;
};

// Base encoder and decoder layer tables per convolutional pair.
const std::vector<TableRow>& encoder_table(ConvPair pair) {
    using K = LayerKind;
    static const std::vector<TableRow> m1 = {
        {"ConvE1", K::Conv, 32, 3, 2}, {"ConvE2", K::Conv, 64, 3, 2}, {"ConvE3", K::Conv, 64, 3, 2},
        {"ConvE4", K::Conv, 64, 3, 2}, {"ConvE5", K::Conv, 64, 3, 2}};
    static const std::vector<TableRow> m2 = {
        {"ConvE1", K::Conv, 32, 4, 2},  {"ConvE2", K::Conv, 32, 4, 2}, {"ConvE3", K::Conv, 32, 3, 1},
        {"ConvE4", K::Conv, 64, 4, 2},  {"ConvE5", K::Conv, 64, 3, 1}, {"ConvE6", K::Conv, 128, 4, 2},
        {"ConvE7", K::Conv, 64, 3, 1},  {"ConvE8", K::Conv, 32, 3, 1}, {"ConvE8", K::Conv, 1, 8, 1}};
    static const std::vector<TableRow> m3 = {{"ConvE1", K::Conv, 32, 3, 2}, {"ConvE2", K::Conv, 64, 3, 2}};
    static const std::vector<TableRow> m4 = {{"ConvE1", K::Conv, 8, 5, 1}, {"MaxPool", K::MaxPool, 0, 2, 2},
                                             {"ConvE2", K::Conv, 4, 3, 1}, {"MaxPool", K::MaxPool, 0, 2, 2}};
    static const std::vector<TableRow> m5 = {{"ConvE1", K::Conv, 16, 3, 1}, {"MaxPool", K::MaxPool, 0, 2, 2},
                                             {"ConvE2", K::Conv, 8, 3, 1},  {"MaxPool", K::MaxPool, 0, 2, 2},
                                             {"ConvE3", K::Conv, 4, 3, 1},  {"MaxPool", K::MaxPool, 0, 2, 2}};
    switch (pair) {
        case ConvPair::ConvM1: return m1;
        case ConvPair::ConvM2: return m2;
        case ConvPair::ConvM3: return m3;
        case ConvPair::ConvM4: return m4;
        case ConvPair::ConvM5:
        case ConvPair::ConvM6: return m5;
    }
    throw DomainError("unknown convolutional pair");
}

const std::vector<TableRow>& decoder_table(ConvPair pair) {
    using K = LayerKind;
    static const std::vector<TableRow> m1 = {
        {"ConvT1", K::ConvTranspose, 64, 3, 2}, {"ConvT2", K::ConvTranspose, 64, 3, 2},
        {"ConvT3", K::ConvTranspose, 64, 3, 2}, {"ConvT4", K::ConvTranspose, 32, 3, 2},
        {"ConvT5", K::ConvTranspose, kImageChannels, 3, 2}};
    static const std::vector<TableRow> m2 = {
        {"ConvD1", K::Conv, 16, 3, 1},  {"ConvD2", K::Conv, 64, 3, 1},  {"Upsampling", K::Upsample, 0, 2, 2},
        {"ConvD3", K::Conv, 128, 4, 1}, {"Upsampling", K::Upsample, 0, 2, 2},
        {"ConvD4", K::Conv, 64, 3, 1},  {"Upsampling", K::Upsample, 0, 2, 2},
        {"ConvD5", K::Conv, 64, 4, 1},  {"Upsampling", K::Upsample, 0, 2, 2},
        {"ConvD6", K::Conv, 32, 3, 1},  {"Upsampling", K::Upsample, 0, 2, 2},
        {"ConvD7", K::Conv, 32, 4, 1},  {"Upsampling", K::Upsample, 0, 2, 2},
        {"ConvD8", K::Conv, 32, 4, 1},  {"Upsampling", K::Upsample, 0, 2, 2},
        {"ConvD8", K::Conv, kImageChannels, 8, 1}};
    static const std::vector<TableRow> m3 = {{"ConvD1", K::Conv, 64, 3, 1}, {"ConvD2", K::Conv, 32, 3, 1},
                                             {"Upsampling", K::Upsample, 0, 2, 2},
                                             {"ConvD3", K::Conv, kImageChannels, 3, 1}};
    static const std::vector<TableRow> m4 = {{"ConvD1", K::Conv, 4, 3, 1}, {"Upsampling", K::Upsample, 0, 2, 2},
                                             {"ConvD2", K::Conv, 8, 3, 1}, {"Upsampling", K::Upsample, 0, 2, 2},
                                             {"ConvD3", K::Conv, kImageChannels, 3, 1}};
    static const std::vector<TableRow> m5 = {{"ConvD1", K::Conv, 4, 3, 1},  {"Upsampling", K::Upsample, 0, 2, 2},
                                             {"ConvD2", K::Conv, 8, 3, 1},  {"Upsampling", K::Upsample, 0, 2, 2},
                                             {"ConvD3", K::Conv, 16, 3, 1}, {"Upsampling", K::Upsample, 0, 2, 2},
                                             {"ConvD4", K::Conv, kImageChannels, 3, 1}};
    switch (pair) {
        case ConvPair::ConvM1: return m1;
        case ConvPair::ConvM2: return m2;
        case ConvPair::ConvM3: return m3;
        case ConvPair::ConvM4:
        case ConvPair::ConvM6: return m4;
        case ConvPair::ConvM5: return m5;
    }
    throw DomainError("unknown convolutional pair");
}

int upsampling_steps(const std::vector<TableRow>& rows) {
    return static_cast<int>(std::count_if(rows.begin(), rows.end(), [](const TableRow& r) {
        return r.kind == LayerKind::Upsample || (r.kind == LayerKind::ConvTranspose && r.stride == 2);
    }));
}

// Make the decoder's spatial growth match the encoder's reduction: surplus
// upsampling stages are removed from the front, missing ones are added next to
// the first upsampling stage.
std::vector<TableRow> balanced_decoder(ConvPair pair, int encoder_steps, std::vector<std::string>& notes) {
    std::vector<TableRow> rows = decoder_table(pair);
    int surplus = upsampling_steps(rows) - encoder_steps;
    if (surplus > 0) {
        notes.push_back("decoder: removed " + std::to_string(surplus) +
                        " leading upsampling stage(s) to match the encoder reduction");
        for (auto it = rows.begin(); surplus > 0 && it != rows.end();) {
            if (it->kind == LayerKind::Upsample) {
                it = rows.erase(it);
                --surplus;
            } else {
                ++it;
            }
        }
    } else if (surplus < 0) {
        notes.push_back("decoder: inserted " + std::to_string(-surplus) +
                        " upsampling stage(s) to match the encoder reduction");
        auto first = std::find_if(rows.begin(), rows.end(),
                                  [](const TableRow& r) { return r.kind == LayerKind::Upsample; });
        if (first == rows.end()) first = rows.end() - 1;
        rows.insert(first, static_cast<std::size_t>(-surplus), TableRow{"Upsampling", LayerKind::Upsample, 0, 2, 2});
    }
    return rows;
}

Activation pair_activation(ConvPair pair) {
    return pair == ConvPair::ConvM1 ? Activation::LeakyReLU : Activation::ReLU;
}

std::string_view kind_name(LayerKind kind) {
    switch (kind) {
        case LayerKind::Conv: return "Conv";
        case LayerKind::ConvTranspose: return "ConvTranspose";
        case LayerKind::MaxPool: return "MaxPool";
        case LayerKind::Upsample: return "Upsampling";
        case LayerKind::Flatten: return "Flatten";
        case LayerKind::Dense: return "Dense";
        case LayerKind::Reshape: return "Reshape";
        case LayerKind::GaussianHeads: return "GaussianHeads";
        case LayerKind::Projection: return "Projection";
        case LayerKind::VectorQuantizer: return "VectorQuantizer";
    }
    return "?";
}

std::string_view activation_name(Activation a) {
    switch (a) {
        case Activation::None: return "-";
        case Activation::ReLU: return "ReLU";
        case Activation::LeakyReLU: return "LeakyReLU";
        case Activation::Sigmoid: return "Sigmoid";
    }
    return "?";
}

std::string_view section_name(Section s) {
    switch (s) {
        case Section::Encoder: return "Encoder";
        case Section::Bottleneck: return "Bottleneck";
        case Section::Decoder: return "Decoder";
    }
    return "?";
}

}  // namespace

std::string_view to_string(Core core) {
    switch (core) {
        case Core::BAE1: return "BAE1";
        case Core::BAE2: return "BAE2";
        case Core::VAE1: return "VAE1";
        case Core::VAE2: return "VAE2";
        case Core::VQVAE1: return "VQVAE1";
    }
    return "?";
}

std::string_view to_string(ConvPair pair) {
    switch (pair) {
        case ConvPair::ConvM1: return "ConvM1";
        case ConvPair::ConvM2: return "ConvM2";
        case ConvPair::ConvM3: return "ConvM3";
        case ConvPair::ConvM4: return "ConvM4";
        case ConvPair::ConvM5: return "ConvM5";
        case ConvPair::ConvM6: return "ConvM6";
    }
    return "?";
}

Core parse_core(std::string_view text) {
    for (Core c : kAllCores) {
        if (to_string(c) == text) return c;
    }
    throw DomainError("unknown autoencoder core '" + std::string(text) + "'");
}

ConvPair parse_conv_pair(std::string_view text) {
    for (ConvPair p : kAllConvPairs) {
        if (to_string(p) == text) return p;
    }
    throw DomainError("unknown convolutional pair '" + std::string(text) + "'");
}

int downsampling_factor(ConvPair pair) {
    int factor = 1;
    for (const auto& row : encoder_table(pair)) {
        if (row.stride == 2) factor *= 2;
    }
    return factor;
}

std::string ModelSpec::id() const { return std::string(to_string(conv_pair)) + "-" + std::string(to_string(core)); }

std::vector<const LayerSpec*> ModelSpec::section(Section s) const {
    std::vector<const LayerSpec*> out;
    for (const auto& layer : layers) {
        if (layer.section == s) out.push_back(&layer);
    }
    return out;
}

ModelSpec build_model(Core core, ConvPair pair, InputShape input, LatentConfig latent) {
    if (input.channels != 1 && input.channels != 3) {
        throw DomainError("input channels must be 1 or 3, got " + std::to_string(input.channels));
    }
    if (input.height < 1 || input.width < 1) throw ShapeError("input shape must be positive");
    if (latent.fc_width < 1 || latent.vae_channels < 1 || latent.codebook_size < 1 || latent.embedding_dim < 1) {
        throw DomainError("latent sizes must be positive");
    }

    ModelSpec spec;
    spec.core = core;
    spec.conv_pair = pair;
    spec.input = input;
    spec.latent = latent;
    spec.downsampling = downsampling_factor(pair);
    if (input.height % spec.downsampling != 0 || input.width % spec.downsampling != 0) {
        throw ShapeError(std::string(to_string(pair)) + " requires height and width divisible by " +
                         std::to_string(spec.downsampling) + ", got " + std::to_string(input.height) + "x" +
                         std::to_string(input.width));
    }
    if (pair == ConvPair::ConvM6) {
        spec.notes.push_back("ConvM6 = ConvM5 encoder + ConvM4 decoder");
    }

    const Activation act = pair_activation(pair);
    TensorShape shape{input.channels, input.height, input.width};

    auto push = [&](Section section, const TableRow& row) {
        LayerSpec layer;
        layer.section = section;
        layer.name = row.name;
        layer.kind = row.kind;
        layer.kernel = row.kernel;
        layer.stride = row.stride;
        switch (row.kind) {
            case LayerKind::Conv:
            case LayerKind::ConvTranspose:
                layer.filters = row.filters == kImageChannels ? input.channels : row.filters;
                layer.batch_norm = true;
                layer.activation = act;
                shape.channels = layer.filters;
                if (row.kind == LayerKind::Conv && row.stride == 2) {
                    shape.height /= 2;
                    shape.width /= 2;
                } else if (row.kind == LayerKind::ConvTranspose && row.stride == 2) {
                    shape.height *= 2;
                    shape.width *= 2;
                }
                break;
            case LayerKind::MaxPool:
                shape.height /= 2;
                shape.width /= 2;
                break;
            case LayerKind::Upsample:
                shape.height *= 2;
                shape.width *= 2;
                break;
            default:
                break;
        }
        layer.output = shape;
        spec.layers.push_back(layer);
    };

    for (const auto& row : encoder_table(pair)) push(Section::Encoder, row);
    const TensorShape encoded = shape;
    const int flat = encoded.channels * encoded.height * encoded.width;

    auto bottleneck = [&](std::string name, LayerKind kind, int filters, int kernel, Activation a, TensorShape out) {
        LayerSpec layer;
        layer.section = Section::Bottleneck;
        layer.name = std::move(name);
        layer.kind = kind;
        layer.filters = filters;
        layer.kernel = kernel;
        layer.activation = a;
        layer.output = out;
        spec.layers.push_back(layer);
        shape = out;
    };

    switch (core) {
        case Core::BAE1:
            break;
        case Core::BAE2:
            bottleneck("Flatten", LayerKind::Flatten, 0, 0, Activation::None, {flat, 1, 1});
            bottleneck("DenseCode", LayerKind::Dense, latent.fc_width, 0, act, {latent.fc_width, 1, 1});
            bottleneck("DenseExpand", LayerKind::Dense, flat, 0, act, {flat, 1, 1});
            bottleneck("Reshape", LayerKind::Reshape, 0, 0, Activation::None, encoded);
            break;
        case Core::VAE1:
            bottleneck("MeanLogVar", LayerKind::GaussianHeads, latent.vae_channels, 1, Activation::None,
                       {latent.vae_channels, encoded.height, encoded.width});
            break;
        case Core::VAE2:
            bottleneck("Flatten", LayerKind::Flatten, 0, 0, Activation::None, {flat, 1, 1});
            bottleneck("MeanLogVar", LayerKind::GaussianHeads, latent.fc_width, 0, Activation::None,
                       {latent.fc_width, 1, 1});
            bottleneck("DenseExpand", LayerKind::Dense, flat, 0, act, {flat, 1, 1});
            bottleneck("Reshape", LayerKind::Reshape, 0, 0, Activation::None, encoded);
            break;
        case Core::VQVAE1:
            bottleneck("PreQuantize", LayerKind::Projection, latent.embedding_dim, 1, Activation::None,
                       {latent.embedding_dim, encoded.height, encoded.width});
            bottleneck("VectorQuantizer", LayerKind::VectorQuantizer, latent.codebook_size, 0, Activation::None,
                       shape);
            break;
    }

    int encoder_steps = 0;
    for (int f = spec.downsampling; f > 1; f /= 2) ++encoder_steps;
    const auto decoder = balanced_decoder(pair, encoder_steps, spec.notes);
    for (const auto& row : decoder) push(Section::Decoder, row);
    // the output layer maps straight to pixel intensities: no normalization
    spec.layers.back().activation = Activation::Sigmoid;
    spec.layers.back().batch_norm = false;

    if (shape != TensorShape{input.channels, input.height, input.width}) {
        throw ShapeError("internal: decoder output shape does not match input for " + spec.id());
    }
    return spec;
}

std::string ModelSpec::layer_table() const {
    std::ostringstream out;
    out << id() << "  input " << input.height << "x" << input.width << "x" << input.channels << "\n";
    out << std::left << std::setw(12) << "Section" << std::setw(18) << "Layer name" << std::setw(16) << "Type"
        << std::setw(9) << "Filters" << std::setw(13) << "Kernel size" << std::setw(8) << "Stride" << std::setw(4)
        << "BN" << std::setw(11) << "Activation"
        << "Output (HxWxC)\n";
    for (const auto& l : layers) {
        std::string kernel = l.kernel > 0 ? std::to_string(l.kernel) + "x" + std::to_string(l.kernel) : "-";
        std::string filters = l.filters > 0 ? std::to_string(l.filters) : "-";
        std::string stride = (l.kind == LayerKind::Conv || l.kind == LayerKind::ConvTranspose)
                                 ? std::to_string(l.stride)
                                 : "-";
        out << std::left << std::setw(12) << section_name(l.section) << std::setw(18) << l.name << std::setw(16)
            << kind_name(l.kind) << std::setw(9) << filters << std::setw(13) << kernel << std::setw(8) << stride
            << std::setw(4) << (l.batch_norm ? "yes" : "-") << std::setw(11) << activation_name(l.activation)
            << l.output.height << "x" << l.output.width << "x" << l.output.channels << "\n";
    }
    for (const auto& note : notes) out << "note: " << note << "\n";
    return out.str();
}

json to_json(const LatentConfig& l) {
    return json{{"fc_width", l.fc_width},
                {"vae_channels", l.vae_channels},
                {"codebook_size", l.codebook_size},
                {"embedding_dim", l.embedding_dim},
                {"commitment_beta", l.commitment_beta}};
}

LatentConfig latent_from_json(const json& doc) {
    LatentConfig l;
    l.fc_width = doc.value("fc_width", l.fc_width);
    l.vae_channels = doc.value("vae_channels", l.vae_channels);
    l.codebook_size = doc.value("codebook_size", l.codebook_size);
    l.embedding_dim = doc.value("embedding_dim", l.embedding_dim);
    l.commitment_beta = doc.value("commitment_beta", l.commitment_beta);
    return l;
}

void TrainingConfig::validate() const {
    if (epochs < 1) throw DomainError("epochs must be >= 1");
    if (batch_size < 1) throw DomainError("batch_size must be >= 1");
    if (!(learning_rate > 0)) throw DomainError("learning_rate must be positive");
    if (patience < 0) throw DomainError("patience must be >= 0");
    augmentation.validate();
}

json to_json(const TrainingConfig& c) {
    return json{{"epochs", c.epochs},
                {"batch_size", c.batch_size},
                {"learning_rate", c.learning_rate},
                {"beta1", c.beta1},
                {"beta2", c.beta2},
                {"patience", c.patience},
                {"seed", c.seed},
                {"augmentation", to_json(c.augmentation)}};
}

TrainingConfig training_from_json(const json& doc) {
    TrainingConfig c;
    c.epochs = doc.value("epochs", c.epochs);
    c.batch_size = doc.value("batch_size", c.batch_size);
    c.learning_rate = doc.value("learning_rate", c.learning_rate);
    c.beta1 = doc.value("beta1", c.beta1);
    c.beta2 = doc.value("beta2", c.beta2);
    c.patience = doc.value("patience", c.patience);
    c.seed = doc.value("seed", c.seed);
    if (doc.contains("augmentation")) c.augmentation = augmentation_from_json(doc["augmentation"]);
    c.validate();
    return c;
}

}  // namespace reconad
