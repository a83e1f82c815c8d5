#include <CLI11.hpp>

#include "mumu/cli.hpp"

using namespace mumu;

int main(int argc, char **argv) {
    CLI::App app{"desk-scale multi-modal music understanding and generation toolkit"};
    app.require_subcommand(1);

    cli::DatasetArgs ds;
    uint64_t ds_seed = 0;
    auto *dataset = app.add_subcommand("dataset", "build instruction datasets with paired media");
    dataset->add_option("--kind", ds.kind, "mucaps|muimage|muvideo|muedit");
    dataset->add_flag("--synthetic", ds.synthetic, "synthesize source media (default)");
    dataset->add_option("--source-dir", ds.source_dir, "use .wav files from this directory");
    dataset->add_option("--out", ds.out_dir, "output directory");
    dataset->add_option("--count", ds.count, "number of records");
    dataset->add_option("--templates", ds.templates_dir, "template pool directory");
    dataset->add_option("--config", ds.config_path, "key=value config file");
    auto *ds_seed_opt = dataset->add_option("--seed", ds_seed, "rng seed");

    cli::TrainArgs tr;
    uint64_t tr_seed = 0;
    auto *train = app.add_subcommand("train", "run one training stage");
    train->add_option("--stage", tr.stage, "1: adapters, 2: output projection, 3: LoRA + both");
    train->add_option("--data", tr.data, "dataset JSONL");
    train->add_option("--config", tr.config_path, "key=value config file");
    train->add_option("--out", tr.out_dir, "output directory");
    train->add_option("--resume", tr.resume, "checkpoint of the previous stage");
    train->add_option("--epochs", tr.epochs, "override stage default (5,5,2)");
    train->add_option("--lr", tr.lr, "override default 1e-4");
    train->add_option("--batch-size", tr.batch_size, "override default 8");
    train->add_option("--max-steps", tr.max_steps, "cap optimizer steps");
    train->add_option("--penalty-weight", tr.penalty_weight, "audio-token penalty weight");
    auto *tr_seed_opt = train->add_option("--seed", tr_seed, "rng seed");

    cli::GenerateArgs gen;
    uint64_t gen_seed = 0;
    auto *generate = app.add_subcommand("generate", "sample a response, decoding audio tokens");
    generate->add_option("--prompt", gen.prompt, "instruction text")->required();
    generate->add_option("--media", gen.media, "input .wav or .npy media");
    generate->add_option("--checkpoint", gen.checkpoint, "model checkpoint")->required();
    generate->add_option("--temperature", gen.temperature, "sampling temperature (default 0.6)");
    generate->add_option("--top-p", gen.top_p, "nucleus mass (default 0.8)");
    generate->add_option("--max-len", gen.max_len, "maximum generated tokens (default 512)");
    generate->add_option("--out", gen.out_dir, "output directory");
    generate->add_option("--duration", gen.duration_s, "decoded audio length in seconds");
    generate->add_flag("--force-audio", gen.force_audio,
                       "test harness: bias logits to emit the audio-token suffix");
    generate->add_option("--config", gen.config_path, "key=value config file");
    auto *gen_seed_opt = generate->add_option("--seed", gen_seed, "rng seed");

    cli::EvalArgs ev;
    uint64_t ev_seed = 0;
    auto *eval = app.add_subcommand("eval", "score candidate/reference pairs for a task");
    eval->add_option("--task", ev.task, "mu|t2m|edit|i2m|v2m");
    eval->add_option("--manifest", ev.manifest, "JSONL of evaluation pairs");
    eval->add_option("--checkpoint", ev.checkpoint, "model checkpoint (recorded in the manifest)");
    eval->add_option("--out", ev.out_dir, "output directory");
    eval->add_option("--config", ev.config_path, "key=value config file");
    auto *ev_seed_opt = eval->add_option("--seed", ev_seed, "rng seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError &e) {
        if (e.get_exit_code() == 0) return app.exit(e); // --help / --version
        app.exit(e);
        return cli::kExitUsage;
    }

    if (dataset->parsed()) {
        if (ds_seed_opt->count() > 0) ds.seed = ds_seed;
        return cli::cmd_dataset(ds);
    }
    if (train->parsed()) {
        if (tr_seed_opt->count() > 0) tr.seed = tr_seed;
        return cli::cmd_train(tr);
    }
    if (generate->parsed()) {
        if (gen_seed_opt->count() > 0) gen.seed = gen_seed;
        return cli::cmd_generate(gen);
    }
    if (eval->parsed()) {
        if (ev_seed_opt->count() > 0) ev.seed = ev_seed;
        return cli::cmd_eval(ev);
    }
    return cli::kExitUsage;
}
