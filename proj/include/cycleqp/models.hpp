#ifndef CYCLEQP_MODELS_HPP
#define CYCLEQP_MODELS_HPP

#include <random>
#include <string>
#include <vector>

#include "cycleqp/autodiff.hpp"
#include "cycleqp/tensor.hpp"

namespace cycleqp {

enum class UpsampleMode { nearest_neighbor_conv, transpose_conv };
enum class NormMode { instance, none };

struct GeneratorSpec {
    long base_width = 64;
    long n_residual_blocks = 9;
    long n_down = 2;
    UpsampleMode upsample_mode = UpsampleMode::nearest_neighbor_conv;
    NormMode norm = NormMode::instance;

    void validate() const {
        if (base_width < 1 || n_residual_blocks < 1 || n_down < 1)
            throw std::invalid_argument("GeneratorSpec: widths and depths must be positive");
    }
};

struct CriticSpec {
    long base_width = 64;
    long n_layers = 4;
    NormMode norm = NormMode::instance;

    void validate() const {
        if (base_width < 1 || n_layers < 1)
            throw std::invalid_argument("CriticSpec: widths and depths must be positive");
    }
};

/// Named view into a model's trainable leaves.
template <class T>
struct NamedParam {
    std::string name;
    ad::Var<T> value;
};

template <class T>
using ParameterSet = std::vector<NamedParam<T>>;

/// Uniform samples in [-L, L], L = sqrt(6 / (fan_in + fan_out)).
template <class T>
Tensor<T> glorot_uniform_init(const std::vector<long>& shape, long fan_in, long fan_out, std::mt19937_64& rng) {
    if (fan_in < 1 || fan_out < 1) throw std::invalid_argument("glorot_uniform_init: fans must be >= 1");
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    Tensor<T> t(shape);
    for (long i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(dist(rng));
    return t;
}

template <class T>
T glorot_limit(long fan_in, long fan_out) {
    return static_cast<T>(std::sqrt(6.0 / static_cast<double>(fan_in + fan_out)));
}

// ---------------------------------------------------------------------------
// layers
// ---------------------------------------------------------------------------

template <class T>
struct Conv2d {
    ad::Var<T> weight, bias;
    long stride = 1;
    long pad = 0;

    Conv2d() = default;
    Conv2d(long cin, long cout, long k, long stride_, long pad_, std::mt19937_64& rng)
        : stride(stride_), pad(pad_) {
        const long fan_in = cin * k * k, fan_out = cout * k * k;
        weight = ad::leaf(glorot_uniform_init<T>({cout, cin, k, k}, fan_in, fan_out, rng), true);
        bias = ad::leaf(Tensor<T>({cout}), true);
    }

    ad::Var<T> forward(const ad::Var<T>& x) const { return ad::conv2d(x, weight, bias, stride, pad); }
};

template <class T>
struct ConvTranspose2d {
    ad::Var<T> weight, bias;  // weight (Cin, Cout, K, K)
    long stride = 2, pad = 1, output_pad = 1;

    ConvTranspose2d() = default;
    ConvTranspose2d(long cin, long cout, long k, long stride_, long pad_, long output_pad_, std::mt19937_64& rng)
        : stride(stride_), pad(pad_), output_pad(output_pad_) {
        const long fan_in = cin * k * k, fan_out = cout * k * k;
        weight = ad::leaf(glorot_uniform_init<T>({cin, cout, k, k}, fan_in, fan_out, rng), true);
        bias = ad::leaf(Tensor<T>({cout}), true);
    }

    ad::Var<T> forward(const ad::Var<T>& x) const { return ad::conv_transpose2d(x, weight, bias, stride, pad, output_pad); }
};

template <class T>
struct InstanceNorm2d {
    ad::Var<T> gamma, beta;
    bool enabled = true;

    InstanceNorm2d() = default;
    InstanceNorm2d(long channels, NormMode mode) : enabled(mode == NormMode::instance) {
        if (enabled) {
            gamma = ad::leaf(Tensor<T>({channels}, T(1)), true);
            beta = ad::leaf(Tensor<T>({channels}), true);
        }
    }

    ad::Var<T> forward(const ad::Var<T>& x) const { return enabled ? ad::instance_norm(x, gamma, beta) : x; }
};

/// Nearest-neighbor 2x upsample followed by a stride-1 same-padding conv.
/// Constant fields stay constant away from the border, unlike strided
/// transpose convolution.
template <class T>
struct ResizeConvBlock {
    Conv2d<T> conv;

    ResizeConvBlock() = default;
    ResizeConvBlock(long cin, long cout, long k, std::mt19937_64& rng) : conv(cin, cout, k, 1, 0, rng) {}

    ad::Var<T> forward(const ad::Var<T>& x) const {
        auto up = ad::upsample_nearest2x(x);
        const long p = (conv.weight->value.dim(2) - 1) / 2;
        return conv.forward(ad::reflect_pad2d(up, p));
    }
};

template <class T>
struct ResidualBlock {
    Conv2d<T> conv1, conv2;
    InstanceNorm2d<T> norm1, norm2;

    ResidualBlock() = default;
    ResidualBlock(long channels, NormMode nm, std::mt19937_64& rng)
        : conv1(channels, channels, 3, 1, 0, rng),
          conv2(channels, channels, 3, 1, 0, rng),
          norm1(channels, nm),
          norm2(channels, nm) {}

    ad::Var<T> forward(const ad::Var<T>& x) const {
        auto h = ad::relu(norm1.forward(conv1.forward(ad::reflect_pad2d(x, 1L))));
        h = norm2.forward(conv2.forward(ad::reflect_pad2d(h, 1L)));
        return ad::add(x, h);
    }
};

// ---------------------------------------------------------------------------
// generator: encoder -> residual transformer -> decoder, tanh output
// ---------------------------------------------------------------------------

template <class T>
class Generator {
public:
    Generator() = default;

    Generator(GeneratorSpec spec, std::uint64_t seed) : spec_(spec) {
        spec.validate();
        std::mt19937_64 rng(seed);
        long w = spec.base_width;
        in_conv_ = Conv2d<T>(3, w, 7, 1, 0, rng);
        in_norm_ = InstanceNorm2d<T>(w, spec.norm);
        for (long i = 0; i < spec.n_down; ++i) {
            down_convs_.emplace_back(w, w * 2, 3, 2, 0, rng);
            down_norms_.emplace_back(w * 2, spec.norm);
            w *= 2;
        }
        for (long i = 0; i < spec.n_residual_blocks; ++i) res_blocks_.emplace_back(w, spec.norm, rng);
        for (long i = 0; i < spec.n_down; ++i) {
            if (spec.upsample_mode == UpsampleMode::nearest_neighbor_conv)
                up_resize_.emplace_back(w, w / 2, 3, rng);
            else
                up_transpose_.emplace_back(w, w / 2, 3, 2L, 1L, 1L, rng);
            up_norms_.emplace_back(w / 2, spec.norm);
            w /= 2;
        }
        out_conv_ = Conv2d<T>(w, 3, 7, 1, 0, rng);
    }

    ad::Var<T> forward(const ad::Var<T>& x) const {
        const auto& s = x->value.shape();
        if (s.size() != 4 || s[1] != 3) throw std::invalid_argument("Generator: input must be (N, 3, H, W)");
        const long divisor = 1L << spec_.n_down;
        if (s[2] % divisor != 0 || s[3] % divisor != 0)
            throw std::invalid_argument("Generator: H and W must be divisible by " + std::to_string(divisor) +
                                        ", got " + x->value.shape_str());
        auto h = ad::relu(in_norm_.forward(in_conv_.forward(ad::reflect_pad2d(x, 3L))));
        for (std::size_t i = 0; i < down_convs_.size(); ++i)
            h = ad::relu(down_norms_[i].forward(down_convs_[i].forward(ad::reflect_pad2d(h, 1L))));
        for (const auto& block : res_blocks_) h = block.forward(h);
        for (std::size_t i = 0; i < up_norms_.size(); ++i) {
            auto up = (spec_.upsample_mode == UpsampleMode::nearest_neighbor_conv) ? up_resize_[i].forward(h)
                                                                                  : up_transpose_[i].forward(h);
            h = ad::relu(up_norms_[i].forward(up));
        }
        return ad::tanh_(out_conv_.forward(ad::reflect_pad2d(h, 3L)));
    }

    ad::Var<T> operator()(const ad::Var<T>& x) const { return forward(x); }

    const GeneratorSpec& spec() const { return spec_; }

    ParameterSet<T> params(const std::string& prefix = "") const {
        ParameterSet<T> ps;
        auto conv = [&](const std::string& n, const Conv2d<T>& c) {
            ps.push_back({prefix + n + ".weight", c.weight});
            ps.push_back({prefix + n + ".bias", c.bias});
        };
        auto norm = [&](const std::string& n, const InstanceNorm2d<T>& m) {
            if (m.enabled) {
                ps.push_back({prefix + n + ".gamma", m.gamma});
                ps.push_back({prefix + n + ".beta", m.beta});
            }
        };
        conv("in_conv", in_conv_);
        norm("in_norm", in_norm_);
        for (std::size_t i = 0; i < down_convs_.size(); ++i) {
            conv("down" + std::to_string(i), down_convs_[i]);
            norm("down_norm" + std::to_string(i), down_norms_[i]);
        }
        for (std::size_t i = 0; i < res_blocks_.size(); ++i) {
            const std::string b = "res" + std::to_string(i);
            conv(b + ".conv1", res_blocks_[i].conv1);
            norm(b + ".norm1", res_blocks_[i].norm1);
            conv(b + ".conv2", res_blocks_[i].conv2);
            norm(b + ".norm2", res_blocks_[i].norm2);
        }
        for (std::size_t i = 0; i < up_norms_.size(); ++i) {
            if (spec_.upsample_mode == UpsampleMode::nearest_neighbor_conv) {
                conv("up" + std::to_string(i), up_resize_[i].conv);
            } else {
                ps.push_back({prefix + "up" + std::to_string(i) + ".weight", up_transpose_[i].weight});
                ps.push_back({prefix + "up" + std::to_string(i) + ".bias", up_transpose_[i].bias});
            }
            norm("up_norm" + std::to_string(i), up_norms_[i]);
        }
        conv("out_conv", out_conv_);
        return ps;
    }

private:
    GeneratorSpec spec_;
    Conv2d<T> in_conv_, out_conv_;
    InstanceNorm2d<T> in_norm_;
    std::vector<Conv2d<T>> down_convs_;
    std::vector<InstanceNorm2d<T>> down_norms_;
    std::vector<ResidualBlock<T>> res_blocks_;
    std::vector<ResizeConvBlock<T>> up_resize_;
    std::vector<ConvTranspose2d<T>> up_transpose_;
    std::vector<InstanceNorm2d<T>> up_norms_;
};

// ---------------------------------------------------------------------------
// critic: fully convolutional, spatial score map reduced by mean
// ---------------------------------------------------------------------------

template <class T>
class Critic {
public:
    Critic() = default;

    Critic(CriticSpec spec, std::uint64_t seed) : spec_(spec) {
        spec.validate();
        std::mt19937_64 rng(seed);
        long cin = 3;
        long w = spec.base_width;
        for (long i = 0; i < spec.n_layers; ++i) {
            convs_.emplace_back(cin, w, 4, 2, 1, rng);
            // no normalization on the first stage, standard for critics
            norms_.emplace_back(w, i == 0 ? NormMode::none : spec.norm);
            cin = w;
            if (w < spec.base_width * 8) w *= 2;
        }
        score_conv_ = Conv2d<T>(cin, 1, 4, 1, 1, rng);
    }

    /// (N, 3, H, W) -> per-sample scalar scores, shape {N}.
    ad::Var<T> forward(const ad::Var<T>& x) const {
        const auto& s = x->value.shape();
        if (s.size() != 4 || s[1] != 3) throw std::invalid_argument("Critic: input must be (N, 3, H, W)");
        long h = s[2], w = s[3];
        for (std::size_t i = 0; i < convs_.size(); ++i) {
            h = (h + 2 - 4) / 2 + 1;
            w = (w + 2 - 4) / 2 + 1;
            if (h < 1 || w < 1)
                throw std::invalid_argument("Critic: input " + x->value.shape_str() + " below the receptive minimum");
        }
        if (h + 2 - 4 + 1 < 1 || w + 2 - 4 + 1 < 1)
            throw std::invalid_argument("Critic: input " + x->value.shape_str() + " below the receptive minimum");
        auto v = x;
        for (std::size_t i = 0; i < convs_.size(); ++i)
            v = ad::leaky_relu(norms_[i].forward(convs_[i].forward(v)), T(0.2));
        return ad::mean_per_sample(score_conv_.forward(v));
    }

    ad::Var<T> operator()(const ad::Var<T>& x) const { return forward(x); }

    const CriticSpec& spec() const { return spec_; }

    ParameterSet<T> params(const std::string& prefix = "") const {
        ParameterSet<T> ps;
        for (std::size_t i = 0; i < convs_.size(); ++i) {
            ps.push_back({prefix + "conv" + std::to_string(i) + ".weight", convs_[i].weight});
            ps.push_back({prefix + "conv" + std::to_string(i) + ".bias", convs_[i].bias});
            if (norms_[i].enabled) {
                ps.push_back({prefix + "norm" + std::to_string(i) + ".gamma", norms_[i].gamma});
                ps.push_back({prefix + "norm" + std::to_string(i) + ".beta", norms_[i].beta});
            }
        }
        ps.push_back({prefix + "score.weight", score_conv_.weight});
        ps.push_back({prefix + "score.bias", score_conv_.bias});
        return ps;
    }

private:
    CriticSpec spec_;
    std::vector<Conv2d<T>> convs_;
    std::vector<InstanceNorm2d<T>> norms_;
    Conv2d<T> score_conv_;
};

template <class T>
Generator<T> build_generator(const GeneratorSpec& spec, std::uint64_t seed) {
    return Generator<T>(spec, seed);
}

template <class T>
Critic<T> build_critic(const CriticSpec& spec, std::uint64_t seed) {
    return Critic<T>(spec, seed);
}

}  // namespace cycleqp

#endif
