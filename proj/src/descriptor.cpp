#include <torch/script.h>

#include <iostream>
#include <mutex>

#include "reconad/error.hpp"
#include "reconad/features.hpp"
#include "reconad/random.hpp"

namespace reconad {

namespace {

class HardNetDescriptor final : public PatchDescriptor {
public:
    explicit HardNetDescriptor(torch::jit::script::Module module) : module_(std::move(module)) { module_.eval(); }

    DescriptorBackend backend() const override { return DescriptorBackend::PretrainedHardNet; }

    std::vector<Descriptor> describe_normalized(std::span<const cv::Mat> patches) const override {
        if (patches.empty()) return {};
        auto input = torch::empty({static_cast<int64_t>(patches.size()), 1, kPatchSize, kPatchSize});
        for (std::size_t i = 0; i < patches.size(); ++i) {
            cv::Mat p = patches[i].isContinuous() ? patches[i] : patches[i].clone();
            input[static_cast<int64_t>(i)][0].copy_(
                torch::from_blob(p.data, {kPatchSize, kPatchSize}, torch::kFloat32));
        }
        torch::Tensor output;
        {
            std::lock_guard lock(mutex_);
            torch::NoGradGuard no_grad;
            output = module_.forward({input}).toTensor().to(torch::kFloat32).contiguous();
        }
        if (output.dim() != 2 || output.size(1) != kDescriptorSize) {
            throw ShapeError("HardNet module must return [N, 128]");
        }
        std::vector<Descriptor> out;
        for (int64_t i = 0; i < output.size(0); ++i) {
            const float* row = output[i].data_ptr<float>();
            out.emplace_back(row, row + kDescriptorSize);
        }
        return out;
    }

private:
    mutable std::mutex mutex_;
    mutable torch::jit::script::Module module_;
};

}  // namespace

FallbackDescriptor::FallbackDescriptor(std::uint64_t seed)
    : projection_(kDescriptorSize, kPatchSize * kPatchSize, CV_32F), bias_(kDescriptorSize, 1, CV_32F) {
    Rng rng(seed);
    // Box-Muller from the portable uniform source
    auto gaussian = [&] {
        const double u1 = std::max(uniform01(rng), 1e-300), u2 = uniform01(rng);
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
    };
    const double scale = 1.0 / std::sqrt(static_cast<double>(kPatchSize * kPatchSize));
    for (int r = 0; r < projection_.rows; ++r) {
        for (int c = 0; c < projection_.cols; ++c) projection_.at<float>(r, c) = static_cast<float>(gaussian() * scale);
    }
    for (int r = 0; r < bias_.rows; ++r) bias_.at<float>(r) = static_cast<float>(gaussian() * 0.5);
}

std::vector<Descriptor> FallbackDescriptor::describe_normalized(std::span<const cv::Mat> patches) const {
    std::vector<Descriptor> out;
    out.reserve(patches.size());
    for (const auto& p : patches) {
        cv::Mat column = (p.isContinuous() ? p : p.clone()).reshape(1, kPatchSize * kPatchSize);
        cv::Mat y = projection_ * column + bias_;
        out.emplace_back(y.begin<float>(), y.end<float>());
    }
    return out;
}

std::shared_ptr<const PatchDescriptor> load_hardnet(const std::filesystem::path& torchscript_file) {
    try {
        return std::make_shared<HardNetDescriptor>(torch::jit::load(torchscript_file.string()));
    } catch (const c10::Error& e) {
        throw LoadError("cannot load HardNet module " + torchscript_file.string() + ": " + e.what_without_backtrace());
    }
}

std::shared_ptr<const PatchDescriptor> make_descriptor(const std::filesystem::path& weights) {
    if (!weights.empty() && std::filesystem::exists(weights)) return load_hardnet(weights);
    if (!weights.empty()) {
        std::cerr << "warning: descriptor weights '" << weights.string()
                  << "' not found; using the deterministic fallback descriptor\n";
    } else {
        std::cerr << "warning: no descriptor weights configured; using the deterministic fallback descriptor\n";
    }
    return std::make_shared<FallbackDescriptor>();
}

}  // namespace reconad
