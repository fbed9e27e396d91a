// nabla command-line front end: token reordering, mask construction and
// inspection, the attention kernels, and the toy training/distillation loops.
// One JSON result line per command on stdout; diagnostics go to stderr.

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "nabla/attention.hpp"
#include "nabla/block_mask.hpp"
#include "nabla/harness.hpp"
#include "nabla/layout.hpp"
#include "nabla/masks.hpp"
#include "nabla/tensor_io.hpp"
#include "nabla/toy_model.hpp"

using nlohmann::json;

namespace {

nabla::TokenGrid parse_grid(const std::string& text) {
    int64_t v[4];
    size_t start = 0;
    for (int i = 0; i < 4; ++i) {
        const size_t comma = i < 3 ? text.find(',', start) : text.size();
        if (comma == std::string::npos)
            throw nabla::ParamError("grid must be T,H,W,P: " + text);
        try {
            size_t pos = 0;
            const std::string part = text.substr(start, comma - start);
            v[i] = std::stoll(part, &pos);
            if (pos != part.size()) throw std::invalid_argument(part);
        } catch (const std::exception&) {
            throw nabla::ParamError("grid must be T,H,W,P: " + text);
        }
        start = comma + 1;
    }
    return nabla::TokenGrid{v[0], v[1], v[2], v[3]};
}

std::array<int64_t, 3> parse_window(const std::string& text) {
    std::array<int64_t, 3> w{};
    size_t start = 0;
    for (int i = 0; i < 3; ++i) {
        const size_t comma = i < 2 ? text.find(',', start) : text.size();
        if (comma == std::string::npos)
            throw nabla::ParamError("window must be wt,wh,ww: " + text);
        try {
            size_t pos = 0;
            const std::string part = text.substr(start, comma - start);
            w[size_t(i)] = std::stoll(part, &pos);
            if (pos != part.size()) throw std::invalid_argument(part);
        } catch (const std::exception&) {
            throw nabla::ParamError("window must be wt,wh,ww: " + text);
        }
        start = comma + 1;
    }
    return w;
}

bool parse_bool(const std::string& text, const std::string& key) {
    if (text == "1" || text == "true") return true;
    if (text == "0" || text == "false") return false;
    throw nabla::ParamError("config key " + key + " must be a boolean, got: " + text);
}

std::map<std::string, std::string> read_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw nabla::IoError("cannot open config file: " + path);
    std::map<std::string, std::string> kv;
    std::string line;
    auto trim = [](std::string s) {
        const char* ws = " \t\r";
        const size_t b = s.find_first_not_of(ws);
        if (b == std::string::npos) return std::string();
        const size_t e = s.find_last_not_of(ws);
        return s.substr(b, e - b + 1);
    };
    while (std::getline(in, line)) {
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const size_t eq = t.find('=');
        if (eq == std::string::npos)
            throw nabla::FormatError("config lines must be key=value: " + line);
        kv[trim(t.substr(0, eq))] = trim(t.substr(eq + 1));
    }
    return kv;
}

template <typename T>
T parse_number(const std::string& text, const std::string& key) {
    try {
        size_t pos = 0;
        if constexpr (std::is_floating_point_v<T>) {
            const double v = std::stod(text, &pos);
            if (pos != text.size()) throw std::invalid_argument(text);
            return T(v);
        } else {
            const long long v = std::stoll(text, &pos);
            if (pos != text.size()) throw std::invalid_argument(text);
            return T(v);
        }
    } catch (const std::exception&) {
        throw nabla::ParamError("config key " + key + " has a bad value: " + text);
    }
}

void emit(const json& j) { std::cout << j.dump() << "\n"; }

// Shared flag block for train-toy and distill-toy.
struct TrainArgs {
    std::string config_path;
    std::string grid = "4,8,8,2";
    int depth = 2, heads = 2, dim = 16, channels = 16;
    std::string mode = "full";
    int steps = 200, batch = 2;
    double lr = 1e-3;
    uint64_t seed = 42;
    int val_every = 25, data_count = 16, val_count = 4;
    bool no_reorder = false;
    std::string csv_path;

    CLI::Option* opt_grid = nullptr;
    CLI::Option* opt_depth = nullptr;
    CLI::Option* opt_heads = nullptr;
    CLI::Option* opt_dim = nullptr;
    CLI::Option* opt_channels = nullptr;
    CLI::Option* opt_mode = nullptr;
    CLI::Option* opt_steps = nullptr;
    CLI::Option* opt_batch = nullptr;
    CLI::Option* opt_lr = nullptr;
    CLI::Option* opt_seed = nullptr;
    CLI::Option* opt_val_every = nullptr;
    CLI::Option* opt_data_count = nullptr;
    CLI::Option* opt_val_count = nullptr;
    CLI::Option* opt_no_reorder = nullptr;

    void attach(CLI::App* cmd) {
        cmd->add_option("--config", config_path,
                        "key=value config file; explicit flags win");
        opt_grid = cmd->add_option("--grid", grid, "token grid T,H,W,P");
        opt_depth = cmd->add_option("--depth", depth, "transformer blocks");
        opt_heads = cmd->add_option("--heads", heads, "attention heads");
        opt_dim = cmd->add_option("--dim", dim, "per-head width");
        opt_channels = cmd->add_option("--channels", channels, "data channels");
        opt_mode = cmd->add_option("--mode", mode,
                                   "attention mode: full | identity | nabla:<thr>"
                                   " | nabla:<thr>+sta:<wt>,<wh>,<ww>");
        opt_steps = cmd->add_option("--steps", steps, "optimizer steps");
        opt_batch = cmd->add_option("--batch", batch, "samples per step");
        opt_lr = cmd->add_option("--lr", lr, "Adam learning rate");
        opt_seed = cmd->add_option("--seed", seed, "rng seed");
        opt_val_every = cmd->add_option("--val-every", val_every,
                                        "validation cadence in steps (0 = off)");
        opt_data_count = cmd->add_option("--data-count", data_count,
                                         "synthetic training samples");
        opt_val_count = cmd->add_option("--val-count", val_count,
                                        "synthetic validation samples");
        opt_no_reorder = cmd->add_flag("--no-reorder", no_reorder,
                                       "feed tokens in raster order");
        cmd->add_option("--csv", csv_path, "write per-step records here");
    }

    void apply_config() {
        if (config_path.empty()) return;
        const auto kv = read_config_file(config_path);
        for (const auto& [key, value] : kv) {
            if (key == "grid") {
                if (!opt_grid->count()) grid = value;
            } else if (key == "depth") {
                if (!opt_depth->count()) depth = parse_number<int>(value, key);
            } else if (key == "heads") {
                if (!opt_heads->count()) heads = parse_number<int>(value, key);
            } else if (key == "dim") {
                if (!opt_dim->count()) dim = parse_number<int>(value, key);
            } else if (key == "channels") {
                if (!opt_channels->count()) channels = parse_number<int>(value, key);
            } else if (key == "mode") {
                if (!opt_mode->count()) mode = value;
            } else if (key == "steps") {
                if (!opt_steps->count()) steps = parse_number<int>(value, key);
            } else if (key == "batch") {
                if (!opt_batch->count()) batch = parse_number<int>(value, key);
            } else if (key == "lr") {
                if (!opt_lr->count()) lr = parse_number<double>(value, key);
            } else if (key == "seed") {
                if (!opt_seed->count()) seed = parse_number<uint64_t>(value, key);
            } else if (key == "val_every") {
                if (!opt_val_every->count()) val_every = parse_number<int>(value, key);
            } else if (key == "data_count") {
                if (!opt_data_count->count())
                    data_count = parse_number<int>(value, key);
            } else if (key == "val_count") {
                if (!opt_val_count->count()) val_count = parse_number<int>(value, key);
            } else if (key == "use_reorder") {
                if (!opt_no_reorder->count()) no_reorder = !parse_bool(value, key);
            } else {
                throw nabla::ParamError("unknown config key: " + key);
            }
        }
    }

    nabla::ToyDiTConfig to_config() const {
        nabla::ToyDiTConfig cfg;
        cfg.geom.grid = parse_grid(grid);
        cfg.geom.depth = depth;
        cfg.geom.heads = heads;
        cfg.geom.dim = dim;
        cfg.geom.channels = channels;
        cfg.mode = nabla::parse_attention_mode(mode);
        cfg.use_reorder = !no_reorder;
        cfg.train_steps = steps;
        cfg.batch = batch;
        cfg.lr = lr;
        cfg.seed = seed;
        cfg.val_every = val_every;
        cfg.data_count = data_count;
        cfg.val_count = val_count;
        return cfg;
    }
};

json summarize(const std::vector<nabla::RunRecord>& records) {
    json j;
    j["steps"] = records.size();
    const nabla::RunRecord& last = records.back();
    j["final_train_loss"] = last.train_loss;
    if (last.val_loss)
        j["final_val_loss"] = *last.val_loss;
    else
        j["final_val_loss"] = nullptr;
    double secs = 0.0, sp = 0.0;
    for (const auto& r : records) {
        secs += r.step_seconds;
        sp += r.sparsity;
    }
    j["mean_step_seconds"] = secs / double(records.size());
    j["mean_sparsity"] = sp / double(records.size());
    return j;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"adaptive block-sparse attention toolkit", "nabla"};
    app.require_subcommand(1);

    // reorder
    auto* reorder_cmd = app.add_subcommand(
        "reorder", "permute tokens between raster and patch-contiguous order");
    std::string re_input, re_output, re_grid, re_direction = "forward";
    reorder_cmd->add_option("--input", re_input, "tensor with tokens on axis 0")
        ->required();
    reorder_cmd->add_option("--grid", re_grid, "token grid T,H,W,P")->required();
    reorder_cmd->add_option("--direction", re_direction, "forward | inverse");
    reorder_cmd->add_option("--output", re_output, "output tensor path")->required();
    reorder_cmd->callback([&] {
        const nabla::TokenGrid grid = parse_grid(re_grid);
        nabla::ReorderDirection dir;
        if (re_direction == "forward")
            dir = nabla::ReorderDirection::kForward;
        else if (re_direction == "inverse")
            dir = nabla::ReorderDirection::kInverse;
        else
            throw nabla::ParamError("direction must be forward or inverse: " +
                                    re_direction);
        const nabla::Tensor x = nabla::load_tensor(re_input);
        const nabla::Permutation perm = nabla::build_permutation(grid);
        nabla::save_tensor(nabla::apply_reorder(x, perm, dir), re_output);
        emit({{"output", re_output},
              {"seq_len", grid.seq_len()},
              {"direction", re_direction}});
    });

    // mask-nabla
    auto* mn_cmd = app.add_subcommand(
        "mask-nabla", "build the adaptive block mask from pooled attention mass");
    std::string mn_q, mn_k, mn_output;
    double mn_thr = 0.5;
    int64_t mn_block = 1;
    double mn_scale = 0.0;
    mn_cmd->add_option("--q", mn_q, "query tensor [heads,S,dim]")->required();
    mn_cmd->add_option("--k", mn_k, "key tensor [heads,S,dim]")->required();
    mn_cmd->add_option("--thr", mn_thr, "kept attention mass in [0,1]")->required();
    mn_cmd->add_option("--block-n", mn_block, "tokens per block")->required();
    auto* mn_scale_opt =
        mn_cmd->add_option("--scale", mn_scale, "score scale (default 1/sqrt(dim))");
    mn_cmd->add_option("--output", mn_output, "output mask path")->required();
    mn_cmd->callback([&] {
        const nabla::Tensor q = nabla::load_tensor(mn_q);
        const nabla::Tensor k = nabla::load_tensor(mn_k);
        if (q.rank() != 3) throw nabla::GeometryError("q must be rank 3");
        nabla::NablaParams params =
            nabla::NablaParams::with_default_scale(mn_thr, mn_block, q.extent(2));
        if (mn_scale_opt->count()) params.scale = float(mn_scale);
        const nabla::BlockMask mask = nabla::nabla_mask(q, k, params);
        nabla::save_mask(mask, mn_output);
        emit({{"output", mn_output},
              {"heads", mask.heads},
              {"rows", mask.rows},
              {"sparsity", nabla::sparsity(mask)}});
    });

    // mask-sta
    auto* ms_cmd = app.add_subcommand(
        "mask-sta", "build the static sliding-window block mask");
    std::string ms_grid, ms_window, ms_output;
    int64_t ms_heads = 1;
    ms_cmd->add_option("--grid", ms_grid, "token grid T,H,W,P")->required();
    ms_cmd->add_option("--window", ms_window, "odd window wt,wh,ww in blocks")
        ->required();
    ms_cmd->add_option("--heads", ms_heads, "heads to stamp the mask for");
    ms_cmd->add_option("--output", ms_output, "output mask path")->required();
    ms_cmd->callback([&] {
        const nabla::TokenGrid grid = parse_grid(ms_grid);
        const auto w = parse_window(ms_window);
        nabla::BlockMask mask =
            nabla::sta_mask(nabla::StaWindow{w[0], w[1], w[2], grid}, ms_heads);
        nabla::save_mask(mask, ms_output);
        emit({{"output", ms_output},
              {"heads", mask.heads},
              {"rows", mask.rows},
              {"sparsity", nabla::sparsity(mask)}});
    });

    // mask-join
    auto* mj_cmd = app.add_subcommand("mask-join", "elementwise union of two masks");
    std::string mj_a, mj_b, mj_output;
    mj_cmd->add_option("--a", mj_a, "first mask")->required();
    mj_cmd->add_option("--b", mj_b, "second mask")->required();
    mj_cmd->add_option("--output", mj_output, "output mask path")->required();
    mj_cmd->callback([&] {
        const nabla::BlockMask joined = nabla::join_masks(nabla::load_mask(mj_a),
                                                          nabla::load_mask(mj_b));
        nabla::save_mask(joined, mj_output);
        emit({{"output", mj_output},
              {"heads", joined.heads},
              {"rows", joined.rows},
              {"sparsity", nabla::sparsity(joined)}});
    });

    // mask-stats
    auto* mst_cmd = app.add_subcommand("mask-stats", "report mask shape and density");
    std::string mst_input;
    mst_cmd->add_option("--input", mst_input, "mask path")->required();
    mst_cmd->callback([&] {
        const nabla::BlockMask mask = nabla::load_mask(mst_input);
        emit({{"heads", mask.heads},
              {"rows", mask.rows},
              {"cols", mask.cols},
              {"popcount", mask.popcount()},
              {"sparsity", nabla::sparsity(mask)}});
    });

    // mask-export-pgm
    auto* mp_cmd = app.add_subcommand(
        "mask-export-pgm", "render one head of a mask as a binary PGM image");
    std::string mp_input, mp_output;
    int64_t mp_head = 0;
    mp_cmd->add_option("--input", mp_input, "mask path")->required();
    mp_cmd->add_option("--head", mp_head, "head index");
    mp_cmd->add_option("--output", mp_output, "output .pgm path")->required();
    mp_cmd->callback([&] {
        const nabla::BlockMask mask = nabla::load_mask(mp_input);
        nabla::export_mask_pgm(mask, mp_head, mp_output);
        emit({{"output", mp_output}, {"rows", mask.rows}, {"cols", mask.cols}});
    });

    // attn
    auto* at_cmd = app.add_subcommand("attn", "run an attention kernel on tensors");
    std::string at_q, at_k, at_v, at_mask, at_output, at_mode = "dense";
    int64_t at_block = 1;
    double at_scale = 0.0;
    bool at_compare = false;
    at_cmd->add_option("--q", at_q, "query tensor [heads,S,dim]")->required();
    at_cmd->add_option("--k", at_k, "key tensor [heads,S,dim]")->required();
    at_cmd->add_option("--v", at_v, "value tensor [heads,S,dim]")->required();
    at_cmd->add_option("--mode", at_mode, "dense | masked | sparse");
    at_cmd->add_option("--mask", at_mask, "block mask (masked/sparse modes)");
    at_cmd->add_option("--block-n", at_block, "tokens per block");
    auto* at_scale_opt =
        at_cmd->add_option("--scale", at_scale, "score scale (default 1/sqrt(dim))");
    at_cmd->add_flag("--compare-dense", at_compare,
                     "also run the dense kernel and report the max abs diff");
    at_cmd->add_option("--output", at_output, "output tensor path")->required();
    at_cmd->callback([&] {
        const nabla::Tensor q = nabla::load_tensor(at_q);
        const nabla::Tensor k = nabla::load_tensor(at_k);
        const nabla::Tensor v = nabla::load_tensor(at_v);
        if (q.rank() != 3) throw nabla::GeometryError("q must be rank 3");
        const float scale = at_scale_opt->count()
                                ? float(at_scale)
                                : 1.0f / std::sqrt(float(q.extent(2)));
        const nabla::AttentionInputs inputs{q, k, v, scale};

        json result;
        nabla::Tensor out;
        if (at_mode == "dense") {
            out = nabla::dense_attention(inputs);
        } else if (at_mode == "masked" || at_mode == "sparse") {
            if (at_mask.empty())
                throw nabla::ParamError("--mask is required for mode " + at_mode);
            const nabla::BlockMask mask = nabla::load_mask(at_mask);
            if (at_mode == "masked") {
                out = nabla::masked_dense_attention(inputs, mask, at_block);
            } else {
                nabla::AttnCounters counters;
                out = nabla::block_sparse_attention(inputs, mask, at_block, &counters);
                result["score_madds"] = counters.score_madds;
                result["output_madds"] = counters.output_madds;
                result["dense_score_madds"] =
                    nabla::dense_score_madds(q.extent(0), q.extent(1), q.extent(2));
            }
        } else {
            throw nabla::ParamError("mode must be dense, masked, or sparse: " +
                                    at_mode);
        }
        nabla::save_tensor(out, at_output);
        result["mode"] = at_mode;
        result["output"] = at_output;
        if (at_compare) {
            const nabla::Tensor dense = nabla::dense_attention(inputs);
            double max_diff = 0.0;
            for (size_t i = 0; i < out.data.size(); ++i)
                max_diff = std::max(
                    max_diff, std::abs(double(out.data[i]) - double(dense.data[i])));
            result["max_abs_diff"] = max_diff;
        }
        emit(result);
    });

    // train-toy
    auto* tt_cmd = app.add_subcommand(
        "train-toy", "train the toy denoiser on synthetic fields");
    TrainArgs tt_args;
    tt_args.attach(tt_cmd);
    std::string tt_checkpoint;
    tt_cmd->add_option("--checkpoint", tt_checkpoint,
                       "directory to save the trained model");
    tt_cmd->callback([&] {
        tt_args.apply_config();
        const nabla::ToyDiTConfig cfg = tt_args.to_config();
        const std::vector<nabla::Tensor> data = nabla::synth_dataset(
            cfg.geom.grid, cfg.data_count, cfg.seed, cfg.geom.channels);
        nabla::ToyDenoiser model;
        const std::vector<nabla::RunRecord> records = nabla::train(cfg, data, &model);
        if (!tt_args.csv_path.empty()) nabla::write_csv(records, tt_args.csv_path);
        json j = summarize(records);
        j["mode"] = nabla::to_string(cfg.mode);
        if (!tt_checkpoint.empty()) {
            std::filesystem::create_directories(tt_checkpoint);
            nabla::save_checkpoint(model, tt_checkpoint);
            j["checkpoint"] = tt_checkpoint;
        }
        if (!tt_args.csv_path.empty()) j["csv"] = tt_args.csv_path;
        emit(j);
    });

    // distill-toy
    auto* dt_cmd = app.add_subcommand(
        "distill-toy", "distill a frozen teacher checkpoint into a sparse student");
    TrainArgs dt_args;
    dt_args.attach(dt_cmd);
    std::string dt_teacher, dt_teacher_mode = "full", dt_student_out;
    dt_cmd->add_option("--teacher", dt_teacher, "teacher checkpoint directory")
        ->required();
    dt_cmd->add_option("--teacher-mode", dt_teacher_mode,
                       "attention mode for the frozen teacher");
    dt_cmd->add_option("--save-student", dt_student_out,
                       "directory to save the distilled student");
    dt_cmd->callback([&] {
        dt_args.apply_config();
        const nabla::ToyDiTConfig cfg = dt_args.to_config();
        const std::vector<nabla::Tensor> data = nabla::synth_dataset(
            cfg.geom.grid, cfg.data_count, cfg.seed, cfg.geom.channels);
        nabla::ToyDenoiser student;
        const std::vector<nabla::RunRecord> records =
            nabla::distill(cfg, data, dt_teacher,
                           nabla::parse_attention_mode(dt_teacher_mode), &student);
        if (!dt_args.csv_path.empty()) nabla::write_csv(records, dt_args.csv_path);
        json j = summarize(records);
        j["mode"] = nabla::to_string(cfg.mode);
        j["teacher_mode"] = dt_teacher_mode;
        j["initial_train_loss"] = records.front().train_loss;
        if (!dt_student_out.empty()) {
            std::filesystem::create_directories(dt_student_out);
            nabla::save_checkpoint(student, dt_student_out);
            j["student"] = dt_student_out;
        }
        if (!dt_args.csv_path.empty()) j["csv"] = dt_args.csv_path;
        emit(j);
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    } catch (const nabla::ParamError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const nabla::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
