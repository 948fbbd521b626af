#ifndef CYCLEQP_TRAINER_HPP
#define CYCLEQP_TRAINER_HPP

#include <chrono>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <nlohmann/json.hpp>
#include <string>
#include <unordered_map>
#include <vector>

#include "cycleqp/data.hpp"
#include "cycleqp/losses.hpp"
#include "cycleqp/models.hpp"

namespace cycleqp {

struct TrainConfig {
    double lambda = 10.0;
    double alpha = 10.0;
    double beta = 0.5;
    double learning_rate = 2e-4;
    double adam_beta1 = 0.5;
    double adam_beta2 = 0.999;
    long batch_size = 4;
    long total_iterations = 0;  // 0 -> style default (15000; 12000 for ukiyoe)
    long checkpoint_every = 1000;
    long critic_steps_per_gen_step = 1;
    std::uint64_t seed = 0;
    std::string style = "vangogh";
    std::string data_root;
    std::string out_dir = "out";
    long crop_size = 256;
    IdentityMode identity_mode = IdentityMode::cross_domain;
    GeneratorSpec gen_spec;
    CriticSpec critic_spec;

    long resolved_iterations() const {
        if (total_iterations > 0) return total_iterations;
        return style == "ukiyoe" ? 12000 : 15000;
    }

    void validate() const {
        QpConfig{lambda, 1e-8}.validate();
        LossWeights{alpha, beta}.validate();
        if (learning_rate <= 0.0) throw std::invalid_argument("TrainConfig: learning_rate must be > 0");
        if (adam_beta1 < 0.0 || adam_beta1 >= 1.0 || adam_beta2 < 0.0 || adam_beta2 >= 1.0)
            throw std::invalid_argument("TrainConfig: adam betas must lie in [0, 1)");
        if (batch_size < 1 || checkpoint_every < 1 || critic_steps_per_gen_step < 1 || crop_size < 1)
            throw std::invalid_argument("TrainConfig: counts must be positive");
        gen_spec.validate();
        critic_spec.validate();
    }

    nlohmann::json to_json() const {
        return {{"lambda", lambda},
                {"alpha", alpha},
                {"beta", beta},
                {"learning_rate", learning_rate},
                {"adam_beta1", adam_beta1},
                {"adam_beta2", adam_beta2},
                {"batch_size", batch_size},
                {"total_iterations", total_iterations},
                {"checkpoint_every", checkpoint_every},
                {"critic_steps_per_gen_step", critic_steps_per_gen_step},
                {"seed", seed},
                {"style", style},
                {"crop_size", crop_size},
                {"identity_mode", identity_mode == IdentityMode::cross_domain ? "cross_domain" : "same_domain"},
                {"gen_base_width", gen_spec.base_width},
                {"gen_res_blocks", gen_spec.n_residual_blocks},
                {"gen_n_down", gen_spec.n_down},
                {"gen_upsample", gen_spec.upsample_mode == UpsampleMode::nearest_neighbor_conv ? "nearest_neighbor_conv"
                                                                                              : "transpose_conv"},
                {"gen_norm", gen_spec.norm == NormMode::instance ? "instance" : "none"},
                {"critic_base_width", critic_spec.base_width},
                {"critic_layers", critic_spec.n_layers},
                {"critic_norm", critic_spec.norm == NormMode::instance ? "instance" : "none"}};
    }

    static TrainConfig from_json(const nlohmann::json& j) {
        TrainConfig c;
        c.lambda = j.at("lambda").get<double>();
        c.alpha = j.at("alpha").get<double>();
        c.beta = j.at("beta").get<double>();
        c.learning_rate = j.at("learning_rate").get<double>();
        c.adam_beta1 = j.at("adam_beta1").get<double>();
        c.adam_beta2 = j.at("adam_beta2").get<double>();
        c.batch_size = j.at("batch_size").get<long>();
        c.total_iterations = j.at("total_iterations").get<long>();
        c.checkpoint_every = j.at("checkpoint_every").get<long>();
        c.critic_steps_per_gen_step = j.at("critic_steps_per_gen_step").get<long>();
        c.seed = j.at("seed").get<std::uint64_t>();
        c.style = j.at("style").get<std::string>();
        c.crop_size = j.at("crop_size").get<long>();
        c.identity_mode = j.at("identity_mode").get<std::string>() == "cross_domain" ? IdentityMode::cross_domain : IdentityMode::same_domain;
        c.gen_spec.base_width = j.at("gen_base_width").get<long>();
        c.gen_spec.n_residual_blocks = j.at("gen_res_blocks").get<long>();
        c.gen_spec.n_down = j.at("gen_n_down").get<long>();
        c.gen_spec.upsample_mode = j.at("gen_upsample").get<std::string>() == "nearest_neighbor_conv"
                                       ? UpsampleMode::nearest_neighbor_conv
                                       : UpsampleMode::transpose_conv;
        c.gen_spec.norm = j.at("gen_norm").get<std::string>() == "instance" ? NormMode::instance : NormMode::none;
        c.critic_spec.base_width = j.at("critic_base_width").get<long>();
        c.critic_spec.n_layers = j.at("critic_layers").get<long>();
        c.critic_spec.norm = j.at("critic_norm").get<std::string>() == "instance" ? NormMode::instance : NormMode::none;
        return c;
    }
};

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

/// Deterministic stream id for iteration-scoped randomness; resume needs no
/// saved RNG state because every iteration reseeds from (seed, iteration).
inline std::uint64_t iteration_seed(std::uint64_t seed, long iteration) {
    return splitmix64(splitmix64(seed) ^ static_cast<std::uint64_t>(iteration));
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

template <class T>
class Adam {
public:
    Adam() = default;
    Adam(double lr, double beta1, double beta2, double eps = 1e-8) : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {}

    void attach(const ParameterSet<T>& params) {
        m_.clear();
        v_.clear();
        for (const auto& p : params) {
            m_.push_back(Tensor<T>::zeros_like(p.value->value));
            v_.push_back(Tensor<T>::zeros_like(p.value->value));
        }
        t_ = 0;
    }

    /// One descent step using the accumulated gradients.
    void step(const ParameterSet<T>& params) {
        if (m_.size() != params.size()) throw std::logic_error("Adam: not attached to this parameter set");
        ++t_;
        const double bc1 = 1.0 - std::pow(b1_, t_);
        const double bc2 = 1.0 - std::pow(b2_, t_);
        for (std::size_t i = 0; i < params.size(); ++i) {
            auto& node = *params[i].value;
            node.ensure_grad();
            Tensor<T>& m = m_[i];
            Tensor<T>& v = v_[i];
            for (long k = 0; k < node.value.numel(); ++k) {
                const double g = static_cast<double>(node.grad[k]);
                m[k] = static_cast<T>(b1_ * m[k] + (1.0 - b1_) * g);
                v[k] = static_cast<T>(b2_ * v[k] + (1.0 - b2_) * g * g);
                const double mhat = m[k] / bc1;
                const double vhat = v[k] / bc2;
                node.value[k] -= static_cast<T>(lr_ * mhat / (std::sqrt(vhat) + eps_));
            }
        }
    }

    double learning_rate() const { return lr_; }
    long step_count() const { return t_; }
    std::vector<Tensor<T>>& first_moments() { return m_; }
    std::vector<Tensor<T>>& second_moments() { return v_; }
    void set_step_count(long t) { t_ = t; }

private:
    double lr_ = 2e-4, b1_ = 0.5, b2_ = 0.999, eps_ = 1e-8;
    long t_ = 0;
    std::vector<Tensor<T>> m_, v_;
};

template <class T>
void zero_param_grads(const ParameterSet<T>& params) {
    for (const auto& p : params) ad::zero_grad(p.value);
}

// ---------------------------------------------------------------------------
// training state
// ---------------------------------------------------------------------------

template <class T>
struct TrainState {
    TrainConfig cfg;
    Generator<T> gen_rs, gen_sr;
    Critic<T> critic_s, critic_r;
    Adam<T> opt_gen, opt_critic_s, opt_critic_r;
    ParameterSet<T> gen_params, critic_s_params, critic_r_params;
    long iteration = 0;

    static TrainState init(const TrainConfig& cfg) {
        cfg.validate();
        TrainState st;
        st.cfg = cfg;
        st.gen_rs = Generator<T>(cfg.gen_spec, splitmix64(cfg.seed ^ 1));
        st.gen_sr = Generator<T>(cfg.gen_spec, splitmix64(cfg.seed ^ 2));
        st.critic_s = Critic<T>(cfg.critic_spec, splitmix64(cfg.seed ^ 3));
        st.critic_r = Critic<T>(cfg.critic_spec, splitmix64(cfg.seed ^ 4));
        auto a = st.gen_rs.params("gen_rs.");
        auto b = st.gen_sr.params("gen_sr.");
        st.gen_params = a;
        st.gen_params.insert(st.gen_params.end(), b.begin(), b.end());
        st.critic_s_params = st.critic_s.params("critic_s.");
        st.critic_r_params = st.critic_r.params("critic_r.");
        st.opt_gen = Adam<T>(cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2);
        st.opt_critic_s = Adam<T>(cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2);
        st.opt_critic_r = Adam<T>(cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2);
        st.opt_gen.attach(st.gen_params);
        st.opt_critic_s.attach(st.critic_s_params);
        st.opt_critic_r.attach(st.critic_r_params);
        return st;
    }

    ParameterSet<T> all_params() const {
        ParameterSet<T> ps = gen_params;
        ps.insert(ps.end(), critic_s_params.begin(), critic_s_params.end());
        ps.insert(ps.end(), critic_r_params.begin(), critic_r_params.end());
        return ps;
    }
};

// ---------------------------------------------------------------------------
// one alternating min-max step
// ---------------------------------------------------------------------------

template <class T>
LossReport train_step(TrainState<T>& st, const Tensor<T>& batch_r, const Tensor<T>& batch_s) {
    const QpConfig qp{st.cfg.lambda, 1e-8};
    const LossWeights weights{st.cfg.alpha, st.cfg.beta};

    auto x_r = ad::constant(batch_r);
    auto x_s = ad::constant(batch_s);

    auto fake_s = st.gen_rs(x_r);
    auto fake_r = st.gen_sr(x_s);

    LossReport report;

    // critic ascent; generator outputs held constant
    auto fake_s_const = ad::detach(fake_s);
    auto fake_r_const = ad::detach(fake_r);
    for (long k = 0; k < st.cfg.critic_steps_per_gen_step; ++k) {
        TranslationStep<T> cstep;
        cstep.x_r = x_r;
        cstep.x_s = x_s;
        cstep.fake_s = fake_s_const;
        cstep.fake_r = fake_r_const;
        ScorePair<T> cs{st.critic_s(x_s), st.critic_s(fake_s_const)};
        ScorePair<T> cr{st.critic_r(x_r), st.critic_r(fake_r_const)};
        auto [obj_s, obj_r] = critic_total(cstep, cs, cr, qp);
        report.critic_s = static_cast<double>(obj_s->value.item());
        report.critic_r = static_cast<double>(obj_r->value.item());
        auto critic_loss = ad::scale(ad::add(obj_s, obj_r), T(-1));
        ad::backward(critic_loss);
        st.opt_critic_s.step(st.critic_s_params);
        st.opt_critic_r.step(st.critic_r_params);
        zero_param_grads(st.critic_s_params);
        zero_param_grads(st.critic_r_params);
    }

    // generator descent; critic parameters held fixed (their accumulated
    // gradients are discarded)
    TranslationStep<T> step;
    step.x_r = x_r;
    step.x_s = x_s;
    step.fake_s = fake_s;
    step.fake_r = fake_r;
    step.rec_r = st.gen_sr(fake_s);
    step.rec_s = st.gen_rs(fake_r);
    if (st.cfg.identity_mode == IdentityMode::cross_domain) {
        step.id_r = fake_r;
        step.id_s = fake_s;
    } else {
        step.id_r = st.gen_sr(x_r);
        step.id_s = st.gen_rs(x_s);
    }
    ScorePair<T> gs{st.critic_s(x_s), st.critic_s(fake_s)};
    ScorePair<T> gr{st.critic_r(x_r), st.critic_r(fake_r)};
    auto [gen_loss, gen_report] = generator_total(step, gs, gr, weights);
    gen_report.critic_s = report.critic_s;
    gen_report.critic_r = report.critic_r;
    ad::backward(gen_loss);
    st.opt_gen.step(st.gen_params);
    zero_param_grads(st.gen_params);
    zero_param_grads(st.critic_s_params);
    zero_param_grads(st.critic_r_params);

    ++st.iteration;
    gen_report.iteration = st.iteration;
    return gen_report;
}

// ---------------------------------------------------------------------------
// checkpointing
// ---------------------------------------------------------------------------

namespace ckpt_detail {

constexpr char kMagic[8] = {'C', 'Q', 'P', 'C', 'K', 'P', 'T', '\0'};
constexpr std::uint32_t kVersion = 1;

inline void write_u64(std::ostream& os, std::uint64_t v) { os.write(reinterpret_cast<const char*>(&v), 8); }
inline void write_u32(std::ostream& os, std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }
inline std::uint64_t read_u64(std::istream& is) {
    std::uint64_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 8);
    return v;
}
inline std::uint32_t read_u32(std::istream& is) {
    std::uint32_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 4);
    return v;
}
inline void write_str(std::ostream& os, const std::string& s) {
    write_u64(os, s.size());
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}
inline std::string read_str(std::istream& is) {
    const auto n = read_u64(is);
    std::string s(n, '\0');
    is.read(s.data(), static_cast<std::streamsize>(n));
    return s;
}

template <class T>
void write_tensor(std::ostream& os, const std::string& name, const Tensor<T>& t) {
    write_str(os, name);
    write_u32(os, static_cast<std::uint32_t>(t.rank()));
    for (long d : t.shape()) write_u64(os, static_cast<std::uint64_t>(d));
    os.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(sizeof(T) * t.numel()));
}

template <class T>
std::pair<std::string, Tensor<T>> read_tensor(std::istream& is) {
    std::string name = read_str(is);
    const auto rank = read_u32(is);
    std::vector<long> shape(rank);
    for (auto& d : shape) d = static_cast<long>(read_u64(is));
    Tensor<T> t(shape);
    is.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(sizeof(T) * t.numel()));
    if (!is) throw std::runtime_error("checkpoint: truncated tensor " + name);
    return {std::move(name), std::move(t)};
}

}  // namespace ckpt_detail

template <class T>
void save_checkpoint(const TrainState<T>& st, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("checkpoint: cannot open for writing: " + path.string());
    os.write(ckpt_detail::kMagic, 8);
    ckpt_detail::write_u32(os, ckpt_detail::kVersion);
    ckpt_detail::write_u32(os, static_cast<std::uint32_t>(sizeof(T)));
    ckpt_detail::write_str(os, st.cfg.to_json().dump());
    ckpt_detail::write_u64(os, static_cast<std::uint64_t>(st.iteration));
    ckpt_detail::write_u64(os, static_cast<std::uint64_t>(const_cast<TrainState<T>&>(st).opt_gen.step_count()));
    ckpt_detail::write_u64(os, static_cast<std::uint64_t>(const_cast<TrainState<T>&>(st).opt_critic_s.step_count()));
    ckpt_detail::write_u64(os, static_cast<std::uint64_t>(const_cast<TrainState<T>&>(st).opt_critic_r.step_count()));

    auto& mst = const_cast<TrainState<T>&>(st);
    const auto params = st.all_params();
    std::uint64_t count = params.size();
    auto moment_count = [](Adam<T>& a) { return a.first_moments().size() * 2; };
    count += moment_count(mst.opt_gen) + moment_count(mst.opt_critic_s) + moment_count(mst.opt_critic_r);
    ckpt_detail::write_u64(os, count);
    for (const auto& p : params) ckpt_detail::write_tensor(os, p.name, p.value->value);
    auto write_moments = [&](const std::string& tag, Adam<T>& opt, const ParameterSet<T>& ps) {
        for (std::size_t i = 0; i < ps.size(); ++i) {
            ckpt_detail::write_tensor(os, tag + ".m." + ps[i].name, opt.first_moments()[i]);
            ckpt_detail::write_tensor(os, tag + ".v." + ps[i].name, opt.second_moments()[i]);
        }
    };
    write_moments("adam_gen", mst.opt_gen, st.gen_params);
    write_moments("adam_critic_s", mst.opt_critic_s, st.critic_s_params);
    write_moments("adam_critic_r", mst.opt_critic_r, st.critic_r_params);
    if (!os) throw std::runtime_error("checkpoint: write failed: " + path.string());
}

template <class T>
TrainState<T> load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("checkpoint: cannot open: " + path.string());
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, ckpt_detail::kMagic, 8) != 0)
        throw std::runtime_error("checkpoint: bad magic in " + path.string());
    const auto version = ckpt_detail::read_u32(is);
    if (version != ckpt_detail::kVersion)
        throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
    const auto elem = ckpt_detail::read_u32(is);
    if (elem != sizeof(T)) throw std::runtime_error("checkpoint: element size mismatch");
    const auto cfg = TrainConfig::from_json(nlohmann::json::parse(ckpt_detail::read_str(is)));
    auto st = TrainState<T>::init(cfg);
    st.iteration = static_cast<long>(ckpt_detail::read_u64(is));
    st.opt_gen.set_step_count(static_cast<long>(ckpt_detail::read_u64(is)));
    st.opt_critic_s.set_step_count(static_cast<long>(ckpt_detail::read_u64(is)));
    st.opt_critic_r.set_step_count(static_cast<long>(ckpt_detail::read_u64(is)));

    std::unordered_map<std::string, Tensor<T>*> slots;
    auto params = st.all_params();
    std::vector<ParameterSet<T>*> sets;
    for (auto& p : params) slots[p.name] = &p.value->value;
    auto map_moments = [&](const std::string& tag, Adam<T>& opt, const ParameterSet<T>& ps) {
        for (std::size_t i = 0; i < ps.size(); ++i) {
            slots[tag + ".m." + ps[i].name] = &opt.first_moments()[i];
            slots[tag + ".v." + ps[i].name] = &opt.second_moments()[i];
        }
    };
    map_moments("adam_gen", st.opt_gen, st.gen_params);
    map_moments("adam_critic_s", st.opt_critic_s, st.critic_s_params);
    map_moments("adam_critic_r", st.opt_critic_r, st.critic_r_params);

    const auto count = ckpt_detail::read_u64(is);
    if (count != slots.size())
        throw std::runtime_error("checkpoint: tensor count mismatch (" + std::to_string(count) + " stored, " +
                                 std::to_string(slots.size()) + " expected)");
    for (std::uint64_t i = 0; i < count; ++i) {
        auto [name, t] = ckpt_detail::read_tensor<T>(is);
        auto it = slots.find(name);
        if (it == slots.end()) throw std::runtime_error("checkpoint: unexpected tensor " + name);
        if (!it->second->same_shape(t))
            throw std::runtime_error("checkpoint: shape mismatch for " + name + ": stored " + t.shape_str() +
                                     ", model expects " + it->second->shape_str());
        *it->second = std::move(t);
    }
    return st;
}

// ---------------------------------------------------------------------------
// fit
// ---------------------------------------------------------------------------

using LossCallback = std::function<void(const LossReport&)>;

/// Runs the alternating optimization for the configured iteration budget,
/// logging one record per iteration and checkpointing periodically. Resumes
/// from `out_dir/latest.ckpt` when `resume` is set.
template <class T>
std::filesystem::path fit(const TrainConfig& cfg, const UnpairedDataset& ds, bool resume = false,
                          const LossCallback& on_report = {}) {
    cfg.validate();
    ds.validate();
    std::filesystem::create_directories(cfg.out_dir);
    const std::filesystem::path latest = std::filesystem::path(cfg.out_dir) / "latest.ckpt";
    const std::filesystem::path log_path = std::filesystem::path(cfg.out_dir) / "train_log.jsonl";

    TrainState<T> st = [&] {
        if (resume && std::filesystem::exists(latest)) {
            auto loaded = load_checkpoint<T>(latest);
            if (loaded.cfg.gen_spec.base_width != cfg.gen_spec.base_width ||
                loaded.cfg.gen_spec.n_residual_blocks != cfg.gen_spec.n_residual_blocks ||
                loaded.cfg.gen_spec.n_down != cfg.gen_spec.n_down ||
                loaded.cfg.critic_spec.base_width != cfg.critic_spec.base_width ||
                loaded.cfg.critic_spec.n_layers != cfg.critic_spec.n_layers)
                throw std::runtime_error("fit: resume checkpoint architecture disagrees with the requested config");
            loaded.cfg.total_iterations = cfg.total_iterations;  // budget may be extended
            return loaded;
        }
        return TrainState<T>::init(cfg);
    }();

    std::ofstream log(log_path, std::ios::app);
    if (!log) throw std::runtime_error("fit: cannot open log " + log_path.string());

    const long total = st.cfg.resolved_iterations();
    while (st.iteration < total) {
        const long iter = st.iteration + 1;
        std::mt19937_64 rng(iteration_seed(st.cfg.seed, iter));
        auto [batch_r, batch_s] = sample_batch<T>(ds, st.cfg.batch_size, rng);
        const auto t0 = std::chrono::steady_clock::now();
        LossReport report;
        try {
            report = train_step(st, batch_r, batch_s);
        } catch (const NumericError& e) {
            throw NumericError(std::string(e.what()) + " at iteration " + std::to_string(iter));
        }
        report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        log << report.to_json_line() << '\n';
        log.flush();
        if (on_report) on_report(report);
        if (st.iteration % st.cfg.checkpoint_every == 0 || st.iteration == total) save_checkpoint(st, latest);
    }
    save_checkpoint(st, latest);
    return latest;
}

}  // namespace cycleqp

#endif
