#pragma once

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mumu/datasets.hpp"
#include "mumu/metrics.hpp"
#include "mumu/model.hpp"
#include "mumu/training.hpp"

namespace mumu {
namespace cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

// ---- config & seeds ----

/// flag > config file > MUMU_SEED env > built-in 0
inline uint64_t resolve_seed(const std::optional<uint64_t> &flag, const KvConfig &file_cfg) {
    if (flag) return *flag;
    if (file_cfg.has("seed")) return static_cast<uint64_t>(file_cfg.get_int("seed", 0));
    if (const char *env = std::getenv("MUMU_SEED")) return std::strtoull(env, nullptr, 10);
    return 0;
}

inline KvConfig load_config_file(const std::string &path) {
    if (path.empty()) return KvConfig();
    return KvConfig::load(path);
}

inline ModelConfig resolve_model_config(const KvConfig &file_cfg, uint64_t seed) {
    KvConfig defaults = ModelConfig::toy().to_kv();
    for (const auto &[k, v] : file_cfg.items()) defaults.set(k, v);
    defaults.set_int("seed", static_cast<int64_t>(seed));
    return ModelConfig::from_kv(defaults);
}

// ---- run manifests ----

inline void write_manifest(const std::string &out_dir, const std::string &command,
                           const std::string &config_path, uint64_t seed,
                           const std::vector<std::string> &inputs,
                           const std::vector<std::string> &outputs, const KvConfig &resolved) {
    nlohmann::ordered_json j;
    j["command"] = command;
    j["config_path"] = config_path;
    j["seed"] = seed;
    j["inputs"] = inputs;
    j["outputs"] = outputs;
    auto now = std::chrono::system_clock::now();
    j["timestamp_unix"] =
        std::chrono::duration_cast<std::chrono::seconds>(now.time_since_epoch()).count();
    nlohmann::ordered_json cfg = nlohmann::ordered_json::object();
    for (const auto &[k, v] : resolved.items()) cfg[k] = v;
    j["resolved_config"] = cfg;
    std::ofstream f(std::filesystem::path(out_dir) / "manifest.json");
    if (!f) throw IoError("manifest: cannot write under " + out_dir);
    f << j.dump(2) << "\n";
}

// ---- media loading ----

inline RawModalityInput load_media(const std::string &path) {
    auto ext = std::filesystem::path(path).extension().string();
    if (ext == ".wav") return RawModalityInput::music(wav::read(path));
    if (ext == ".npy") {
        npy::Tensor t = npy::read(path);
        if (t.shape.size() == 3 && t.shape[2] == 3) {
            ImageTensor img;
            img.height = t.shape[0];
            img.width = t.shape[1];
            img.rgb = std::move(t.data);
            return RawModalityInput::image(std::move(img));
        }
        if (t.shape.size() == 4 && t.shape[3] == 3) {
            VideoTensor vid;
            vid.frames = t.shape[0];
            vid.height = t.shape[1];
            vid.width = t.shape[2];
            vid.rgb = std::move(t.data);
            return RawModalityInput::video(std::move(vid));
        }
        throw InvalidInput("media: npy tensor must be (H,W,3) or (F,H,W,3): " + path);
    }
    throw InvalidInput("media: unsupported file type: " + path);
}

// ---- dataset command ----

struct DatasetArgs {
    std::string kind = "muedit";
    bool synthetic = true;
    std::string source_dir;
    std::string out_dir = "runs/dataset";
    int count = 20;
    std::string templates_dir;
    std::string config_path;
    std::optional<uint64_t> seed;
};

inline int cmd_dataset(const DatasetArgs &args) {
    static const std::vector<std::string> kinds = {"mucaps", "muimage", "muvideo", "muedit"};
    if (std::find(kinds.begin(), kinds.end(), args.kind) == kinds.end()) {
        std::cerr << "usage: dataset --kind {mucaps|muimage|muvideo|muedit} [--synthetic | "
                     "--source-dir DIR] --out DIR [--count N] [--seed S] [--templates DIR]\n"
                  << "unknown kind: " << args.kind << "\n";
        return kExitUsage;
    }
    try {
        KvConfig file_cfg = load_config_file(args.config_path);
        uint64_t seed = resolve_seed(args.seed, file_cfg);
        std::filesystem::create_directories(args.out_dir);

        TemplateLibrary lib = args.templates_dir.empty()
                                  ? TemplateLibrary::builtin()
                                  : TemplateLibrary::from_dir(args.templates_dir);
        BuildConfig bc;
        bc.out_dir = args.out_dir;
        bc.seed = seed;
        bc.n_audio_tokens = static_cast<int>(file_cfg.get_int("n_audio_tokens", 8));
        DatasetBuilder builder(std::move(lib), bc);
        if (!args.synthetic && !args.source_dir.empty()) builder.load_sources(args.source_dir);

        std::vector<DatasetRecord> records = builder.build(args.kind, args.count);
        std::string jsonl = (std::filesystem::path(args.out_dir) / (args.kind + ".jsonl")).string();
        write_jsonl(jsonl, records);

        for (const auto &[subtype, n] : builder.subtype_counts(records))
            std::cout << subtype << ": " << n << "\n";
        std::cout << "wrote " << records.size() << " records to " << jsonl << "\n";

        KvConfig resolved = file_cfg;
        resolved.set_int("seed", static_cast<int64_t>(seed));
        resolved.set("kind", args.kind);
        resolved.set_int("count", args.count);
        write_manifest(args.out_dir, "dataset", args.config_path, seed,
                       args.source_dir.empty() ? std::vector<std::string>{}
                                               : std::vector<std::string>{args.source_dir},
                       {jsonl}, resolved);
        return kExitOk;
    } catch (const std::exception &e) {
        std::cerr << "dataset failed: " << e.what() << "\n";
        return kExitRuntime;
    }
}

// ---- training-data loading ----

/// caption text used for the target conditioning embedding
inline std::string caption_text(const DatasetRecord &r, const FusionConfig &fc) {
    std::string s = r.response;
    auto pos = s.find("[AUD_");
    if (pos != std::string::npos) s.erase(pos);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\n')) s.pop_back();
    if (s.empty()) s = r.instruction;
    (void)fc;
    return s;
}

inline std::string strip_audio_markers(const std::string &text) {
    std::string s = text;
    auto pos = s.find("[AUD_");
    if (pos != std::string::npos) s.erase(pos);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\n')) s.pop_back();
    return s;
}

/// Builds teacher-forcing examples for a stage:
///   stage 1 - records with input media, captioning loss only;
///   stage 2 - music-emitting records (audio-token targets + embedding MSE);
///   stage 3 - every record, mixed objectives.
template <typename T>
std::vector<TrainExample<T>> load_examples(const std::vector<DatasetRecord> &records,
                                           const std::string &base_dir, const Model<T> &model,
                                           int stage, uint64_t seed) {
    const FusionConfig &fc = model.cfg.fusion;
    auto [target_rows, target_cols] = model.proj.config().out_shape();
    ToyTargetEmbedder<T> embedder{seed, target_rows, target_cols};

    std::vector<TrainExample<T>> out;
    for (const auto &r : records) {
        bool music = r.emits_music;
        if (stage == 1 && !r.input_media) continue;
        if (stage == 2 && !music) continue;

        std::string response = stage == 1 ? strip_audio_markers(r.response) : r.response;
        if (response.empty()) continue;

        TrainExample<T> ex;
        ex.is_music_target = stage != 1 && music;
        TokenSequence instr = tokenize_text(r.instruction, fc);
        TokenSequence resp = tokenize_text(response, fc);
        // keep the response; trim the instruction to fit the context window
        int budget = fc.max_target_len - static_cast<int>(resp.size()) - 3;
        if (budget < 0) continue;
        if (static_cast<int>(instr.size()) > budget) instr.resize(static_cast<size_t>(budget));

        ex.tokens.push_back(fc.bos_id());
        ex.tokens.insert(ex.tokens.end(), instr.begin(), instr.end());
        ex.tokens.push_back('\n');
        size_t response_start = ex.tokens.size();
        ex.tokens.insert(ex.tokens.end(), resp.begin(), resp.end());
        ex.tokens.push_back(fc.eos_id());
        ex.loss_mask.assign(ex.tokens.size(), 0);
        for (size_t i = response_start; i < ex.tokens.size(); ++i) ex.loss_mask[i] = 1;

        if (r.input_media) {
            auto path = std::filesystem::path(base_dir) / *r.input_media;
            RawModalityInput raw = load_media(path.string());
            auto emb = encode<T>(raw, model.cfg.encoder);
            ex.feats[emb.kind] = std::move(emb);
        }
        if (ex.is_music_target) ex.target_embedding = embedder.embed(caption_text(r, fc));
        out.push_back(std::move(ex));
    }
    return out;
}

// ---- train command ----

struct TrainArgs {
    int stage = 1;
    std::string data;
    std::string config_path;
    std::string out_dir = "runs/train";
    std::string resume;
    std::optional<uint64_t> seed;
    int epochs = 0;       // 0 -> stage default
    double lr = 0.0;      // 0 -> default 1e-4
    int batch_size = 0;   // 0 -> default 8
    int max_steps = 0;
    double penalty_weight = -1.0; // <0 -> default 1.0
};

inline int cmd_train(const TrainArgs &args) {
    if (args.stage < 1 || args.stage > 3) {
        std::cerr << "usage: train --stage {1|2|3} --data FILE.jsonl --out DIR [--config FILE] "
                     "[--resume CKPT] [--seed S]\n";
        return kExitUsage;
    }
    try {
        if (args.data.empty() || !std::filesystem::exists(args.data)) {
            std::cerr << "train failed: data file not found: " << args.data << "\n";
            return kExitRuntime;
        }
        KvConfig file_cfg = load_config_file(args.config_path);
        uint64_t seed = resolve_seed(args.seed, file_cfg);

        Model<double> model = [&] {
            if (args.resume.empty()) return Model<double>::init(resolve_model_config(file_cfg, seed));
            int ckpt_stage = 0;
            Model<double> m = Model<double>::load_checkpoint(args.resume, &ckpt_stage);
            if (ckpt_stage != args.stage - 1)
                throw InvalidInput("resume checkpoint carries stage tag " +
                                   std::to_string(ckpt_stage) + "; stage " +
                                   std::to_string(args.stage) + " requires tag " +
                                   std::to_string(args.stage - 1));
            return m;
        }();

        TrainConfig tc;
        tc.stage = args.stage;
        tc.seed = seed;
        if (args.epochs > 0) tc.epochs = args.epochs;
        if (args.lr > 0.0) tc.lr = args.lr;
        if (args.batch_size > 0) tc.batch_size = args.batch_size;
        if (args.max_steps > 0) tc.max_steps = args.max_steps;
        if (args.penalty_weight >= 0.0) tc.penalty_weight = args.penalty_weight;

        std::cout << "defaults: epochs=(5,5,2) lr=0.0001\n";
        std::cout << "stage " << tc.stage << ": epochs=" << tc.resolved_epochs()
                  << " lr=" << tc.lr << " batch_size=" << tc.batch_size << " seed=" << seed
                  << "\n";

        auto records = read_jsonl(args.data);
        auto base_dir = std::filesystem::path(args.data).parent_path().string();
        auto examples = load_examples(records, base_dir, model, tc.stage, seed);
        if (examples.empty()) throw InvalidInput("no usable examples for stage " +
                                                 std::to_string(tc.stage) + " in " + args.data);
        std::cout << "examples: " << examples.size() << "\n";

        TrainHistory history = train_stage(model, examples, tc);
        std::filesystem::create_directories(args.out_dir);
        std::string ckpt =
            (std::filesystem::path(args.out_dir) / ("checkpoint_stage" + std::to_string(tc.stage) +
                                                    ".mtar"))
                .string();
        std::string csv = (std::filesystem::path(args.out_dir) / "loss_history.csv").string();
        model.save_checkpoint(ckpt, tc.stage);
        history.save_csv(csv);
        if (!history.steps.empty())
            std::cout << "loss: first=" << history.steps.front().loss.total
                      << " last=" << history.steps.back().loss.total << " steps="
                      << history.steps.size() << "\n";

        KvConfig resolved = model.cfg.to_kv();
        resolved.set_int("stage", tc.stage);
        resolved.set_int("epochs", tc.resolved_epochs());
        resolved.set_double("lr", tc.lr);
        resolved.set_int("batch_size", tc.batch_size);
        write_manifest(args.out_dir, "train", args.config_path, seed, {args.data, args.resume},
                       {ckpt, csv}, resolved);
        return kExitOk;
    } catch (const std::exception &e) {
        std::cerr << "train failed: " << e.what() << "\n";
        return kExitRuntime;
    }
}

// ---- generate command ----

struct GenerateArgs {
    std::string prompt;
    std::string media;
    std::string checkpoint;
    double temperature = 0.6;
    double top_p = 0.8;
    int max_len = 512;
    std::string out_dir = "runs/generate";
    std::optional<uint64_t> seed;
    bool force_audio = false;
    int force_audio_after = 4;
    double duration_s = 2.0;
    std::string config_path;
};

inline int cmd_generate(const GenerateArgs &args) {
    try {
        KvConfig file_cfg = load_config_file(args.config_path);
        uint64_t seed = resolve_seed(args.seed, file_cfg);
        Model<double> model = Model<double>::load_checkpoint(args.checkpoint);
        const FusionConfig &fc = model.cfg.fusion;

        std::map<Modality, Mat<double>> feats;
        if (!args.media.empty()) {
            RawModalityInput raw = load_media(args.media);
            auto emb = encode<double>(raw, model.cfg.encoder);
            feats[emb.kind] = model.adapt_eval(emb);
        }

        TokenSequence prompt_tokens;
        prompt_tokens.push_back(fc.bos_id());
        TokenSequence instr = tokenize_text(args.prompt, fc);
        int budget = fc.max_target_len - 2;
        if (static_cast<int>(instr.size()) > budget) instr.resize(static_cast<size_t>(budget));
        prompt_tokens.insert(prompt_tokens.end(), instr.begin(), instr.end());
        prompt_tokens.push_back('\n');

        SamplingParams sampling;
        sampling.temperature = args.temperature;
        sampling.top_p = args.top_p;
        sampling.max_len = args.max_len;
        std::cout << "sampling: temperature=" << sampling.temperature << " top_p=" << sampling.top_p
                  << " max_len=" << sampling.max_len << "\n";

        LogitBiasFn<double> bias;
        if (args.force_audio) {
            const int k = fc.n_audio_tokens;
            const int start = args.force_audio_after;
            bias = [&fc, k, start](int step, const TokenSequence &seq, std::vector<double> &logits) {
                if (step < start) return;
                int emitted = 0;
                for (auto it = seq.rbegin(); it != seq.rend() && fc.is_audio_token(*it); ++it)
                    ++emitted;
                int target = emitted < k ? fc.audio_token_id(emitted) : fc.eos_id();
                logits[static_cast<size_t>(target)] += 1e9;
            };
            std::cout << "forced audio-token harness active\n";
        }

        Rng rng = Rng::from(seed, fnv1a64("generate"));
        TokenSequence out_tokens =
            generate(model.store, model.lm, prompt_tokens, feats, sampling, rng, bias);
        TokenSequence response(out_tokens.begin() + static_cast<long>(prompt_tokens.size()),
                               out_tokens.end());
        std::string text = detokenize(response, fc);
        std::cout << "response: " << text << "\n";

        std::filesystem::create_directories(args.out_dir);
        std::vector<std::string> outputs;
        {
            std::ofstream f(std::filesystem::path(args.out_dir) / "generated.txt");
            f << text << "\n";
            outputs.push_back((std::filesystem::path(args.out_dir) / "generated.txt").string());
        }

        auto audio_pos = detect_audio_tokens(out_tokens, fc);
        if (audio_pos) {
            std::cout << "audio tokens detected: " << audio_pos->size() << "\n";
            // hidden states of the audio suffix under a teacher-forced pass
            Tape<double> tape;
            std::set<std::string> frozen;
            TapeCtx<double> ctx{tape, model.store, &frozen};
            std::map<Modality, Tape<double>::Id> feat_ids;
            for (const auto &[m, mat] : feats) feat_ids[m] = tape.constant(mat);
            int win = std::min<int>(static_cast<int>(out_tokens.size()), fc.max_target_len);
            TokenSequence window(out_tokens.end() - win, out_tokens.end());
            auto fwd = model.lm.forward(ctx, window, feat_ids);
            auto rows = tape.slice_rows(fwd.final_hidden, win - fc.n_audio_tokens,
                                        fc.n_audio_tokens);
            auto cond_id = model.proj.forward(ctx, rows);
            ConditioningEmbedding<double> cond{model.proj.config().target, tape.val(cond_id)};
            Waveform wave = decode_stub(cond, args.duration_s, seed);
            std::string wav_path = (std::filesystem::path(args.out_dir) / "generated.wav").string();
            wav::write(wav_path, wave);
            std::cout << "wrote " << wav_path << "\n";
            outputs.push_back(wav_path);
        } else {
            std::cout << "no audio tokens; text only\n";
        }

        KvConfig resolved = model.cfg.to_kv();
        resolved.set_double("temperature", sampling.temperature);
        resolved.set_double("top_p", sampling.top_p);
        resolved.set_int("max_len", sampling.max_len);
        write_manifest(args.out_dir, "generate", args.config_path, seed,
                       {args.checkpoint, args.media}, outputs, resolved);
        return kExitOk;
    } catch (const std::exception &e) {
        std::cerr << "generate failed: " << e.what() << "\n";
        return kExitRuntime;
    }
}

// ---- eval command ----

struct EvalArgs {
    std::string task;
    std::string manifest;
    std::string checkpoint;
    std::string out_dir = "runs/eval";
    std::optional<uint64_t> seed;
    std::string config_path;
};

struct EvalPair {
    std::string candidate;
    std::string reference;
    std::string input;
    std::string text;
    std::string candidate_text;
    std::string reference_text;
};

inline std::vector<EvalPair> read_eval_manifest(const std::string &path) {
    std::ifstream f(path);
    if (!f) throw IoError("eval: cannot read manifest " + path);
    std::vector<EvalPair> out;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        auto j = nlohmann::json::parse(line);
        EvalPair p;
        if (j.contains("candidate")) p.candidate = j["candidate"].get<std::string>();
        if (j.contains("reference")) p.reference = j["reference"].get<std::string>();
        if (j.contains("input")) p.input = j["input"].get<std::string>();
        if (j.contains("text")) p.text = j["text"].get<std::string>();
        if (j.contains("candidate_text")) p.candidate_text = j["candidate_text"].get<std::string>();
        if (j.contains("reference_text")) p.reference_text = j["reference_text"].get<std::string>();
        out.push_back(std::move(p));
    }
    return out;
}

inline int cmd_eval(const EvalArgs &args) {
    static const std::vector<std::string> tasks = {"mu", "t2m", "edit", "i2m", "v2m"};
    if (std::find(tasks.begin(), tasks.end(), args.task) == tasks.end()) {
        std::cerr << "usage: eval --task {mu|t2m|edit|i2m|v2m} --manifest FILE.jsonl --out DIR\n"
                  << "unknown task: " << args.task << "\n";
        return kExitUsage;
    }
    try {
        KvConfig file_cfg = load_config_file(args.config_path);
        uint64_t seed = resolve_seed(args.seed, file_cfg);
        auto pairs = read_eval_manifest(args.manifest);
        if (pairs.empty()) throw InvalidInput("eval: empty manifest");
        auto base = std::filesystem::path(args.manifest).parent_path();
        auto resolve = [&](const std::string &p) {
            std::filesystem::path fp(p);
            return fp.is_absolute() ? fp.string() : (base / fp).string();
        };

        MetricReport report;
        report.task = args.task;
        report.sample_count = static_cast<int>(pairs.size());
        ToyAudioEmbedder audio_emb{seed, 16, 24};
        ToyTextEmbedder text_emb{seed, 16};
        ToyVisualEmbedder visual_emb{seed, 16, 64};
        report.notes.push_back("embedders: seeded toy stand-ins");

        if (args.task == "mu") {
            std::vector<std::string> cands, refs;
            for (const auto &p : pairs) {
                cands.push_back(p.candidate_text);
                refs.push_back(p.reference_text);
            }
            TextMetrics tm = text_metrics(cands, refs);
            report.values["bleu"] = tm.bleu;
            report.values["rouge_l"] = tm.rouge_l;
        } else {
            std::vector<Waveform> cand_waves, ref_waves;
            for (const auto &p : pairs) {
                cand_waves.push_back(wav::read(resolve(p.candidate)));
                ref_waves.push_back(wav::read(resolve(p.reference)));
            }
            EmbeddingSet ref_set, gen_set;
            ref_set.source = "reference";
            gen_set.source = "candidate";
            ref_set.data = Mat<double>(static_cast<int>(pairs.size()), audio_emb.dim);
            gen_set.data = Mat<double>(static_cast<int>(pairs.size()), audio_emb.dim);
            for (size_t i = 0; i < pairs.size(); ++i) {
                auto re = audio_emb.embed(ref_waves[i]);
                auto ge = audio_emb.embed(cand_waves[i]);
                for (int j = 0; j < audio_emb.dim; ++j) {
                    ref_set.data(static_cast<int>(i), j) = re[static_cast<size_t>(j)];
                    gen_set.data(static_cast<int>(i), j) = ge[static_cast<size_t>(j)];
                }
            }
            report.values["fad"] = fad(ref_set, gen_set);
            report.values["kl"] = kl_metric(
                ref_waves, cand_waves,
                [&](const Waveform &w) { return audio_emb.classify(w); });

            if (args.task == "t2m") {
                double clap_sum = 0.0;
                for (size_t i = 0; i < pairs.size(); ++i)
                    clap_sum += clap_score(audio_emb.embed(cand_waves[i]),
                                           text_emb.embed(pairs[i].text));
                report.values["clap"] = clap_sum / static_cast<double>(pairs.size());
            } else if (args.task == "edit") {
                double lsd_sum = 0.0;
                int truncated = 0;
                for (size_t i = 0; i < pairs.size(); ++i) {
                    bool trunc = false;
                    lsd_sum += lsd(cand_waves[i].samples, ref_waves[i].samples,
                                   cand_waves[i].sample_rate, {}, &trunc);
                    truncated += trunc ? 1 : 0;
                }
                report.values["lsd"] = lsd_sum / static_cast<double>(pairs.size());
                if (truncated > 0)
                    report.notes.push_back("lsd: truncated " + std::to_string(truncated) +
                                           " unequal-length pairs to the shorter wave");
            } else { // i2m / v2m
                std::vector<std::vector<double>> anchors;
                std::vector<std::vector<std::vector<double>>> models;
                for (size_t i = 0; i < pairs.size(); ++i) {
                    std::vector<double> anchor;
                    if (!pairs[i].input.empty()) {
                        npy::Tensor t = npy::read(resolve(pairs[i].input));
                        anchor = visual_emb.embed(t.data);
                    } else {
                        anchor = audio_emb.embed(ref_waves[i]);
                    }
                    anchors.push_back(std::move(anchor));
                    models.push_back({audio_emb.embed(cand_waves[i]),
                                      audio_emb.embed(ref_waves[i])});
                }
                RankingTable table = rank_by_cosine(anchors, models);
                report.values["ib_rank"] = ib_rank(table)[0]; // candidate model score
                report.notes.push_back("ib_rank: candidate ranked against the reference model");
            }
        }

        std::filesystem::create_directories(args.out_dir);
        std::string report_path = (std::filesystem::path(args.out_dir) / "report.json").string();
        std::ofstream f(report_path);
        f << report.to_json().dump(2) << "\n";
        for (const auto &[k, v] : report.values) std::cout << k << "=" << v << "\n";

        KvConfig resolved = file_cfg;
        resolved.set_int("seed", static_cast<int64_t>(seed));
        resolved.set("task", args.task);
        write_manifest(args.out_dir, "eval", args.config_path, seed,
                       {args.manifest, args.checkpoint}, {report_path}, resolved);
        return kExitOk;
    } catch (const std::exception &e) {
        std::cerr << "eval failed: " << e.what() << "\n";
        return kExitRuntime;
    }
}

} // namespace cli
} // namespace mumu
