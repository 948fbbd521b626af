// Command-line front end: training, stylization, reconstruction, and the
// self-check diagnostic suite. Exit codes: 0 success, 1 usage error,
// 2 runtime failure.

#include <CLI11.hpp>
#include <cstdlib>
#include <filesystem>
#include <iostream>

#include "cycleqp/cycleqp.hpp"

namespace fs = std::filesystem;
using namespace cycleqp;

namespace {

struct TrainArgs {
    TrainConfig cfg;
    bool resume = false;
};

int run_train(const TrainArgs& args) {
    TrainConfig cfg = args.cfg;
    if (cfg.data_root.empty()) {
        if (const char* env = std::getenv("CYCLEQP_DATA_ROOT")) cfg.data_root = env;
    }
    const fs::path style_dir = fs::path(cfg.data_root) / cfg.style;
    if (!fs::is_directory(style_dir)) {
        std::cerr << "error: dataset directory not found: " << style_dir << "\n";
        return 1;
    }
    auto ds = open_dataset(cfg.data_root, cfg.style, cfg.crop_size);
    std::cout << "training style '" << cfg.style << "' for " << cfg.resolved_iterations() << " iterations ("
              << ds.domain_r_paths.size() << " photos, " << ds.domain_s_paths.size() << " paintings)\n";
    fit<float>(cfg, ds, args.resume, [](const LossReport& r) { std::cout << r.to_json_line() << "\n"; });
    std::cout << "done; checkpoint at " << (fs::path(cfg.out_dir) / "latest.ckpt") << "\n";
    return 0;
}

struct InferArgs {
    std::string checkpoint, input, output;
    std::string direction = "rs";
    long size = 256;
};

int check_infer_preconditions(const InferArgs& a, const TrainState<float>& st) {
    const long divisor = 1L << st.cfg.gen_spec.n_down;
    if (a.size % divisor != 0) {
        std::cerr << "error: --size must be divisible by " << divisor << " (the generator downsamples " << st.cfg.gen_spec.n_down
                  << " times)\n";
        return 1;
    }
    return 0;
}

int run_stylize(const InferArgs& a) {
    if (!fs::exists(a.checkpoint)) {
        std::cerr << "error: checkpoint not found: " << a.checkpoint << "\n";
        return 1;
    }
    auto st = load_checkpoint<float>(a.checkpoint);
    if (int rc = check_infer_preconditions(a, st)) return rc;
    cv::Mat img = load_rgb(a.input);
    if (img.empty()) {
        std::cerr << "error: cannot read input image: " << a.input << "\n";
        return 1;
    }
    auto batch = preprocess_for_inference<float>(img, a.size);
    ad::NoGradGuard ng;
    const auto& gen = a.direction == "rs" ? st.gen_rs : st.gen_sr;
    auto out = gen(ad::constant(batch));
    if (!save_rgb(denormalize(out->value), a.output)) throw std::runtime_error("cannot write output image: " + a.output);
    std::cout << "wrote " << a.output << " (" << a.size << "x" << a.size << ")\n";
    return 0;
}

int run_reconstruct(const InferArgs& a) {
    if (!fs::exists(a.checkpoint)) {
        std::cerr << "error: checkpoint not found: " << a.checkpoint << "\n";
        return 1;
    }
    auto st = load_checkpoint<float>(a.checkpoint);
    if (int rc = check_infer_preconditions(a, st)) return rc;
    cv::Mat img = load_rgb(a.input);
    if (img.empty()) {
        std::cerr << "error: cannot read input image: " << a.input << "\n";
        return 1;
    }
    auto batch = preprocess_for_inference<float>(img, a.size);
    ad::NoGradGuard ng;
    const auto& fwd = a.direction == "rs" ? st.gen_rs : st.gen_sr;
    const auto& back = a.direction == "rs" ? st.gen_sr : st.gen_rs;
    auto input_var = ad::constant(batch);
    auto mid = fwd(input_var);
    auto rec = back(mid);
    const double err = static_cast<double>(l1_distance(input_var, rec)->value[0]);

    const fs::path out(a.output);
    const fs::path mid_path = out.parent_path() / (out.stem().string() + ".stylized" + out.extension().string());
    if (!save_rgb(denormalize(mid->value), mid_path.string())) throw std::runtime_error("cannot write " + mid_path.string());
    if (!save_rgb(denormalize(rec->value), a.output)) throw std::runtime_error("cannot write " + a.output);
    std::cout << "mean-L1 reconstruction error: " << err << "\n";
    std::cout << "wrote " << mid_path << " and " << a.output << "\n";
    return 0;
}

int run_check() {
    bool all_ok = true;
    std::mt19937_64 rng(2024);

    auto rep = check_qp_analytics(50, rng);
    std::cout << "qp analytics: " << rep.summary() << "\n";
    all_ok = all_ok && rep.passed;

    // checkerboard contrast between the two upsampling modes
    bool contrast_ok = true;
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
        GeneratorSpec nn_spec{8, 1, 2, UpsampleMode::nearest_neighbor_conv, NormMode::none};
        GeneratorSpec tc_spec{8, 1, 2, UpsampleMode::transpose_conv, NormMode::none};
        Tensor<float> constant_field({1, 3, 16, 16}, 0.25f);
        ad::NoGradGuard ng;
        auto nn_out = Generator<float>(nn_spec, seed)(ad::constant(constant_field));
        auto tc_out = Generator<float>(tc_spec, seed)(ad::constant(constant_field));
        const double nn_score = checkerboard_score(nn_out->value, 4);
        const double tc_score = checkerboard_score(tc_out->value, 4);
        std::cout << "checkerboard seed " << seed << ": resize-conv " << nn_score << ", transpose-conv " << tc_score << "\n";
        contrast_ok = contrast_ok && nn_score <= 1e-10 && tc_score > 0.0;
    }
    std::cout << "checkerboard contrast: " << (contrast_ok ? "ok" : "FAILED") << "\n";
    all_ok = all_ok && contrast_ok;

    // gradient checks: analytic quadratic, qp divergence, micro generator
    {
        Tensor<double> p0({8});
        for (long i = 0; i < 8; ++i) p0[i] = 0.3 * i - 1.0;
        auto quad = [](const std::vector<ad::Var<double>>& ps) {
            return ad::scale(ad::mean_all(ad::square(ps[0])), 4.0);  // == ||p||^2 / 2 for 8 elements
        };
        auto r1 = finite_difference_gradcheck<double>(quad, {ad::leaf(p0, true)}, 8, 1e-6, rng, 1e-8);
        std::cout << "gradcheck quadratic: " << r1.summary() << "\n";
        all_ok = all_ok && r1.passed;
    }
    {
        QpConfig qp{10.0, 1e-8};
        Tensor<double> xr({2, 1, 4, 4}, 0.5), xf({2, 1, 4, 4}, -0.5);
        Tensor<double> sr({2}, 2.0), sf({2}, -1.0);
        auto loss = [&](const std::vector<ad::Var<double>>& ps) {
            ScorePair<double> scores{ps[0], ps[1]};
            return qp_divergence(scores, ad::constant(xr), ad::constant(xf), qp);
        };
        auto r2 = finite_difference_gradcheck<double>(loss, {ad::leaf(sr, true), ad::leaf(sf, true)}, 4, 1e-6, rng, 1e-6);
        std::cout << "gradcheck qp divergence: " << r2.summary() << "\n";
        all_ok = all_ok && r2.passed;
    }
    {
        Generator<float> g(GeneratorSpec{4, 1, 1}, 5);
        Tensor<float> x({1, 3, 8, 8});
        std::mt19937_64 xr(9);
        std::uniform_real_distribution<float> u(-0.9f, 0.9f);
        for (long i = 0; i < x.numel(); ++i) x[i] = u(xr);
        auto loss = [&](const std::vector<ad::Var<float>>& ps) { return ad::mean_all(ad::square(g(ps[0]))); };
        auto r3 = finite_difference_gradcheck<float>(loss, {ad::leaf(x, true)}, 20, 5e-4, rng, 1e-3);
        std::cout << "gradcheck micro generator: " << r3.summary() << "\n";
        all_ok = all_ok && r3.passed;
    }

    std::cout << (all_ok ? "all checks passed" : "CHECKS FAILED") << "\n";
    return all_ok ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Unpaired photo <-> painting translation trained with the quadratic-potential divergence"};
    app.require_subcommand(1);

    TrainArgs train_args;
    auto* train = app.add_subcommand("train", "Train both generators and critics on an unpaired dataset");
    train->add_option("--style", train_args.cfg.style, "Style name (cezanne, monet, ukiyoe, vangogh)")
        ->check(CLI::IsMember({"cezanne", "monet", "ukiyoe", "vangogh"}));
    train->add_option("--data-root", train_args.cfg.data_root, "Dataset root (default: $CYCLEQP_DATA_ROOT)");
    train->add_option("--out-dir", train_args.cfg.out_dir, "Output directory for log and checkpoints");
    train->add_option("--iterations", train_args.cfg.total_iterations, "Iteration budget (0 = style default)");
    train->add_option("--batch-size", train_args.cfg.batch_size, "Batch size");
    train->add_option("--seed", train_args.cfg.seed, "Random seed");
    train->add_option("--lambda", train_args.cfg.lambda, "QP divergence lambda");
    train->add_option("--alpha", train_args.cfg.alpha, "Cycle-consistency weight");
    train->add_option("--beta", train_args.cfg.beta, "Identity weight");
    train->add_option("--lr", train_args.cfg.learning_rate, "Adam learning rate");
    train->add_option("--beta1", train_args.cfg.adam_beta1, "Adam beta1");
    train->add_option("--beta2", train_args.cfg.adam_beta2, "Adam beta2");
    train->add_option("--checkpoint-every", train_args.cfg.checkpoint_every, "Checkpoint cadence");
    train->add_option("--critic-steps", train_args.cfg.critic_steps_per_gen_step, "Critic steps per generator step");
    train->add_option("--crop-size", train_args.cfg.crop_size, "Training crop size");
    train->add_option("--base-width", train_args.cfg.gen_spec.base_width, "Generator base channel width");
    train->add_option("--res-blocks", train_args.cfg.gen_spec.n_residual_blocks, "Residual blocks");
    train->add_option("--n-down", train_args.cfg.gen_spec.n_down, "Generator downsampling stages");
    train->add_option("--critic-width", train_args.cfg.critic_spec.base_width, "Critic base channel width");
    train->add_option("--critic-layers", train_args.cfg.critic_spec.n_layers, "Critic strided stages");
    std::string identity_mode = "cross_domain";
    train->add_option("--identity-mode", identity_mode, "Identity-term pairing: cross_domain or same_domain")
        ->check(CLI::IsMember({"cross_domain", "same_domain"}));
    train->add_flag("--resume", train_args.resume, "Resume from <out-dir>/latest.ckpt");

    InferArgs stylize_args;
    auto* stylize = app.add_subcommand("stylize", "Translate one image through a trained generator");
    stylize->add_option("--checkpoint", stylize_args.checkpoint, "Checkpoint file")->required();
    stylize->add_option("--input", stylize_args.input, "Input image (jpeg or png)")->required();
    stylize->add_option("--output", stylize_args.output, "Output image (png)")->required();
    stylize->add_option("--direction", stylize_args.direction, "rs = photo->style, sr = style->photo")
        ->check(CLI::IsMember({"rs", "sr"}));
    stylize->add_option("--size", stylize_args.size,
                        "Output resolution; input is resized (short side) then center-cropped. "
                        "Must be divisible by 2^n_down of the trained generator");

    InferArgs rec_args;
    auto* reconstruct = app.add_subcommand("reconstruct", "Round trip an image through both generators");
    reconstruct->add_option("--checkpoint", rec_args.checkpoint, "Checkpoint file")->required();
    reconstruct->add_option("--input", rec_args.input, "Input image")->required();
    reconstruct->add_option("--output", rec_args.output, "Reconstructed image path (intermediate written alongside)")->required();
    reconstruct->add_option("--direction", rec_args.direction, "First hop: rs or sr")->check(CLI::IsMember({"rs", "sr"}));
    reconstruct->add_option("--size", rec_args.size, "Processing resolution");

    auto* check = app.add_subcommand("check", "Run the self-verification suite");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        train_args.cfg.identity_mode = identity_mode == "cross_domain" ? IdentityMode::cross_domain : IdentityMode::same_domain;
        if (train->parsed()) return run_train(train_args);
        if (stylize->parsed()) return run_stylize(stylize_args);
        if (reconstruct->parsed()) return run_reconstruct(rec_args);
        if (check->parsed()) return run_check();
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
