#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mumu/common.hpp"
#include "mumu/fusion_lm.hpp"
#include "mumu/npy.hpp"
#include "mumu/rng.hpp"
#include "mumu/wav.hpp"
#include "mumu/wsola.hpp"

namespace mumu {

// ---- records ----

struct DatasetRecord {
    std::string dataset; // mucaps | muimage | muvideo | muedit
    std::string instruction;
    std::string response;
    std::optional<std::string> input_media;
    std::optional<std::string> target_audio;
    bool emits_music = false;
};

inline nlohmann::ordered_json record_to_json(const DatasetRecord &r) {
    nlohmann::ordered_json j;
    j["dataset"] = r.dataset;
    j["instruction"] = r.instruction;
    j["response"] = r.response;
    j["input_media"] = r.input_media ? nlohmann::ordered_json(*r.input_media)
                                     : nlohmann::ordered_json(nullptr);
    j["target_audio"] = r.target_audio ? nlohmann::ordered_json(*r.target_audio)
                                       : nlohmann::ordered_json(nullptr);
    j["emits_music"] = r.emits_music;
    return j;
}

inline DatasetRecord record_from_json(const nlohmann::json &j) {
    DatasetRecord r;
    r.dataset = j.at("dataset").get<std::string>();
    r.instruction = j.at("instruction").get<std::string>();
    r.response = j.at("response").get<std::string>();
    if (!j.at("input_media").is_null()) r.input_media = j.at("input_media").get<std::string>();
    if (!j.at("target_audio").is_null()) r.target_audio = j.at("target_audio").get<std::string>();
    r.emits_music = j.at("emits_music").get<bool>();
    return r;
}

inline void write_jsonl(const std::string &path, const std::vector<DatasetRecord> &records) {
    std::ofstream f(path);
    if (!f) throw IoError("jsonl: cannot write " + path);
    for (const auto &r : records) f << record_to_json(r).dump() << "\n";
}

inline std::vector<DatasetRecord> read_jsonl(const std::string &path) {
    std::ifstream f(path);
    if (!f) throw IoError("jsonl: cannot read " + path);
    std::vector<DatasetRecord> out;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        out.push_back(record_from_json(nlohmann::json::parse(line)));
    }
    return out;
}

// ---- template pools ----

enum class TemplateKind { speed, pitch, add, del, replace, image_gen, video_gen, caption };

inline const char *template_kind_name(TemplateKind k) {
    switch (k) {
    case TemplateKind::speed: return "speed";
    case TemplateKind::pitch: return "pitch";
    case TemplateKind::add: return "add";
    case TemplateKind::del: return "delete";
    case TemplateKind::replace: return "replace";
    case TemplateKind::image_gen: return "image_gen";
    case TemplateKind::video_gen: return "video_gen";
    case TemplateKind::caption: return "caption";
    }
    return "?";
}

struct TemplatePool {
    TemplateKind kind;
    std::vector<std::string> instructions;
    std::vector<std::string> responses;

    void validate() const {
        if (instructions.empty() || responses.empty())
            throw InvalidInput(std::string("template pool ") + template_kind_name(kind) +
                               " must not be empty");
    }
};

/// Substitutes {placeholder} slots; an unfilled slot is a TemplateError.
inline std::string fill_template(const std::string &tmpl,
                                 const std::map<std::string, std::string> &values) {
    std::string out;
    size_t i = 0;
    while (i < tmpl.size()) {
        if (tmpl[i] != '{') {
            out.push_back(tmpl[i]);
            ++i;
            continue;
        }
        size_t close = tmpl.find('}', i);
        if (close == std::string::npos) throw TemplateError("unterminated placeholder in: " + tmpl);
        std::string key = tmpl.substr(i + 1, close - i - 1);
        auto it = values.find(key);
        if (it == values.end()) throw TemplateError("unfilled placeholder {" + key + "} in: " + tmpl);
        out += it->second;
        i = close + 1;
    }
    return out;
}

struct TemplateLibrary {
    std::map<TemplateKind, TemplatePool> pools;

    const TemplatePool &pool(TemplateKind k) const {
        auto it = pools.find(k);
        if (it == pools.end())
            throw InvalidInput(std::string("no template pool for ") + template_kind_name(k));
        it->second.validate();
        return it->second;
    }

    static TemplateLibrary builtin();

    /// Loads <kind>_instructions.txt / <kind>_responses.txt (one template per
    /// line); kinds missing on disk fall back to the built-in pool.
    static TemplateLibrary from_dir(const std::string &dir) {
        TemplateLibrary lib = builtin();
        auto read_lines = [](const std::filesystem::path &p) {
            std::vector<std::string> lines;
            std::ifstream f(p);
            std::string line;
            while (std::getline(f, line)) {
                if (!line.empty() && line.back() == '\r') line.pop_back();
                if (!line.empty()) lines.push_back(line);
            }
            return lines;
        };
        for (auto &[kind, pool] : lib.pools) {
            std::filesystem::path base(dir);
            auto fi = base / (std::string(template_kind_name(kind)) + "_instructions.txt");
            auto fr = base / (std::string(template_kind_name(kind)) + "_responses.txt");
            if (std::filesystem::exists(fi)) {
                auto lines = read_lines(fi);
                if (!lines.empty()) pool.instructions = std::move(lines);
            }
            if (std::filesystem::exists(fr)) {
                auto lines = read_lines(fr);
                if (!lines.empty()) pool.responses = std::move(lines);
            }
        }
        return lib;
    }
};

inline TemplateLibrary TemplateLibrary::builtin() {
    TemplateLibrary lib;
    auto &pools = lib.pools;
    pools[TemplateKind::speed] = {
        TemplateKind::speed,
        {
            "Change the speed of this piece so it lasts {factor} times as long.",
            "Stretch this music to {factor}x its current duration.",
            "Make this track {factor_word}.",
            "Adjust the tempo so the clip plays back {factor_word}.",
            "Retime this song to {factor} times its original length.",
            "I want this loop {factor_word}; please adjust it.",
        },
        {
            "Here is the music retimed to {factor} times its length.",
            "Done, the track now plays {factor_word}.",
            "I stretched the piece to {factor}x duration as requested.",
            "The clip has been retimed; it is now {factor_word}.",
        }};
    pools[TemplateKind::pitch] = {
        TemplateKind::pitch,
        {
            "Shift the pitch of this music by {cents} cents.",
            "Transpose this piece {pitch_word}.",
            "Raise or lower this recording by {cents} cents, keeping its length.",
            "Move this melody {pitch_word} without changing the tempo.",
            "Please repitch the track by {cents} cents.",
        },
        {
            "Here is the track transposed {pitch_word}.",
            "The pitch has been moved by {cents} cents; duration is unchanged.",
            "Done, the piece now sits {pitch_word}.",
            "I shifted the music by {cents} cents as requested.",
        }};
    pools[TemplateKind::add] = {
        TemplateKind::add,
        {
            "Add a {instrument_b} line to this {instrument} track.",
            "Layer a {instrument_b} on top of this music.",
            "Can you bring a {instrument_b} into the mix?",
            "Enrich this piece with a {instrument_b} part.",
        },
        {
            "Here is the mix with the {instrument_b} added.",
            "I layered a {instrument_b} over the {instrument}; here is the result.",
            "The {instrument_b} part is now in the mix.",
        }};
    pools[TemplateKind::del] = {
        TemplateKind::del,
        {
            "Remove the {instrument_b} from this mix.",
            "Take the {instrument_b} out of this track.",
            "Strip the {instrument_b} part so only the {instrument} remains.",
            "Please delete the {instrument_b} line from the music.",
        },
        {
            "Here is the track with the {instrument_b} removed.",
            "Only the {instrument} remains now.",
            "The {instrument_b} part is gone; here is the result.",
        }};
    pools[TemplateKind::replace] = {
        TemplateKind::replace,
        {
            "Replace the {instrument} in this piece with a {instrument_b}.",
            "Swap the {instrument} part for a {instrument_b}.",
            "Rework this track so a {instrument_b} plays instead of the {instrument}.",
            "Substitute the {instrument} line with a {instrument_b}.",
        },
        {
            "Here is the piece with the {instrument} replaced by a {instrument_b}.",
            "The {instrument_b} now carries the part; here is the result.",
            "Done, a {instrument_b} plays in place of the {instrument}.",
        }};
    pools[TemplateKind::image_gen] = {
        TemplateKind::image_gen,
        {
            "Generate a piece of music that suits this image.",
            "Generate music matching the mood of the picture.",
            "Generate a soundtrack for what this image shows.",
            "Generate background music that fits this scene.",
        },
        {
            "Here is music to match the image: {caption}",
            "This piece reflects the picture: {caption}",
            "I composed something fitting the scene: {caption}",
        }};
    pools[TemplateKind::video_gen] = {
        TemplateKind::video_gen,
        {
            "Generate a piece of music that fits this video.",
            "Generate a score for this clip.",
            "Generate music following the motion of the video.",
            "Generate accompaniment suited to this footage.",
        },
        {
            "Here is a score for the video: {caption}",
            "This track follows the clip: {caption}",
            "I wrote music to match the footage: {caption}",
        }};
    pools[TemplateKind::caption] = {
        TemplateKind::caption,
        {
            "Describe this piece of music, covering its instruments, tempo, and mood.",
            "What do you hear in this recording? Mention the instruments and feel.",
            "Give a detailed description of this music clip.",
            "Summarize the character of this track: instrumentation, pace, atmosphere.",
        },
        {
            "{caption}",
        }};
    return lib;
}

/// Writes the built-in pools as editable one-template-per-line files.
inline void write_template_files(const std::string &dir) {
    std::filesystem::create_directories(dir);
    TemplateLibrary lib = TemplateLibrary::builtin();
    for (const auto &[kind, pool] : lib.pools) {
        std::filesystem::path base(dir);
        std::ofstream fi(base / (std::string(template_kind_name(kind)) + "_instructions.txt"));
        for (const auto &t : pool.instructions) fi << t << "\n";
        std::ofstream fr(base / (std::string(template_kind_name(kind)) + "_responses.txt"));
        for (const auto &t : pool.responses) fr << t << "\n";
    }
}

// ---- synthetic instruments and track sets ----

struct Track {
    std::string instrument;
    std::vector<double> samples;
};

struct TrackSet {
    int sample_rate = 16000;
    std::vector<Track> tracks;

    void validate() const {
        if (tracks.size() < 2) throw InvalidInput("track set needs at least two tracks");
        for (const auto &t : tracks)
            if (t.samples.size() != tracks.front().samples.size())
                throw InvalidInput("track set requires equal track lengths");
    }

    Waveform mix() const {
        Waveform w;
        w.sample_rate = sample_rate;
        w.samples.assign(tracks.front().samples.size(), 0.0);
        for (const auto &t : tracks)
            for (size_t i = 0; i < w.samples.size(); ++i) w.samples[i] += t.samples[i];
        return w;
    }
};

namespace synth {

struct InstrumentSpec {
    const char *name;
    std::vector<double> harmonics; // relative amplitudes; empty -> noise bursts
    double octave;                 // base-frequency multiplier
};

inline const std::vector<InstrumentSpec> &instrument_bank() {
    static const std::vector<InstrumentSpec> bank = {
        {"piano", {1.0, 0.5, 0.25, 0.12}, 1.0},
        {"guitar", {1.0, 0.7, 0.3, 0.15}, 1.0},
        {"strings", {1.0, 0.8, 0.55, 0.35}, 1.0},
        {"flute", {1.0, 0.15, 0.05}, 2.0},
        {"bass", {1.0, 0.4, 0.1}, 0.5},
        {"drums", {}, 1.0},
    };
    return bank;
}

// A-minor pentatonic
inline const std::vector<double> &note_pool() {
    static const std::vector<double> notes = {220.0, 261.63, 293.66, 329.63, 392.0};
    return notes;
}

/// One monophonic instrument line: enveloped harmonic notes on a beat grid,
/// or noise bursts for the percussion entry.
inline std::vector<double> render_instrument(const InstrumentSpec &spec, double duration_s,
                                             int sample_rate, double bpm, Rng &rng) {
    size_t n = static_cast<size_t>(std::llround(duration_s * sample_rate));
    std::vector<double> out(n, 0.0);
    double beat_s = 60.0 / bpm;
    int n_beats = std::max(1, static_cast<int>(duration_s / beat_s));
    for (int b = 0; b < n_beats; ++b) {
        size_t start = static_cast<size_t>(b * beat_s * sample_rate);
        size_t len = std::min(n - start, static_cast<size_t>(beat_s * sample_rate * 0.95));
        if (spec.harmonics.empty()) {
            // percussion: short seeded noise burst with exponential decay
            for (size_t i = 0; i < len / 4 + 1 && start + i < n; ++i) {
                double env = std::exp(-8.0 * static_cast<double>(i) / (len / 4 + 1));
                out[start + i] += 0.18 * env * rng.uniform(-1.0, 1.0);
            }
            continue;
        }
        double f0 = note_pool()[rng.below(note_pool().size())] * spec.octave;
        double phase = rng.uniform(0.0, 2.0 * M_PI);
        for (size_t i = 0; i < len && start + i < n; ++i) {
            double ts = static_cast<double>(i) / sample_rate;
            double env = std::exp(-2.5 * static_cast<double>(i) / len);
            double s = 0.0;
            for (size_t h = 0; h < spec.harmonics.size(); ++h)
                s += spec.harmonics[h] * std::sin(2.0 * M_PI * f0 * (h + 1) * ts + phase);
            out[start + i] += 0.12 * env * s;
        }
    }
    return out;
}

} // namespace synth

/// Seeded multi-track clip with distinct labeled instruments. bpm <= 0 picks
/// a tempo from the rng.
inline TrackSet synth_track_set(int n_tracks, double duration_s, int sample_rate, Rng &rng,
                                double bpm = 0.0) {
    const auto &bank = synth::instrument_bank();
    if (n_tracks < 2 || n_tracks > static_cast<int>(bank.size()))
        throw InvalidInput("synth_track_set: track count out of range");
    std::vector<size_t> pick;
    while (static_cast<int>(pick.size()) < n_tracks) {
        size_t c = rng.below(bank.size());
        bool dup = false;
        for (size_t p : pick) dup = dup || p == c;
        if (!dup) pick.push_back(c);
    }
    if (bpm <= 0.0) bpm = 70.0 + 20.0 * static_cast<double>(rng.below(5));
    TrackSet ts;
    ts.sample_rate = sample_rate;
    for (size_t idx : pick) {
        Track t;
        t.instrument = bank[idx].name;
        t.samples = synth::render_instrument(bank[idx], duration_s, sample_rate, bpm, rng);
        ts.tracks.push_back(std::move(t));
    }
    return ts;
}

struct MusicClipMeta {
    std::vector<std::string> instruments;
    double bpm = 0.0;
    std::string tempo_word;
    std::string mood;
};

/// Music clip plus the metadata the caption stand-in writes about.
inline std::pair<Waveform, MusicClipMeta> synth_music_clip(double duration_s, int sample_rate,
                                                           Rng &rng) {
    static const std::vector<std::string> moods = {"calm",    "bright", "melancholy",
                                                   "playful", "tense",  "dreamy"};
    MusicClipMeta meta;
    meta.bpm = 70.0 + 20.0 * static_cast<double>(rng.below(5));
    meta.mood = moods[rng.below(moods.size())];
    meta.tempo_word = meta.bpm < 85 ? "slow" : meta.bpm < 115 ? "moderate" : "fast";
    int n_tracks = 2 + static_cast<int>(rng.below(2));
    TrackSet ts = synth_track_set(n_tracks, duration_s, sample_rate, rng, meta.bpm);
    for (const auto &t : ts.tracks) meta.instruments.push_back(t.instrument);
    return {ts.mix(), meta};
}

/// Caption stand-in: deterministic sentence from clip metadata.
inline std::string caption_from_meta(const MusicClipMeta &meta) {
    std::string instruments = meta.instruments.front();
    for (size_t i = 1; i < meta.instruments.size(); ++i)
        instruments += (i + 1 == meta.instruments.size() ? " and " : ", ") + meta.instruments[i];
    return "A " + meta.mood + " piece at a " + meta.tempo_word + " tempo featuring " + instruments +
           ".";
}

// ---- add / delete / replace pairs ----

enum class AdrMode { add, del, replace };

inline const char *adr_mode_name(AdrMode m) {
    switch (m) {
    case AdrMode::add: return "add";
    case AdrMode::del: return "delete";
    case AdrMode::replace: return "replace";
    }
    return "?";
}

struct AdrMetadata {
    AdrMode mode;
    std::string instrument;   // the base / kept / replaced instrument
    std::string instrument_b; // the added / removed / replacement instrument
};

struct AdrPair {
    Waveform input;
    Waveform target;
    AdrMetadata meta;
};

/// add: input = one track, target = that track plus another (plain sum).
/// delete: input = a two-track mix, target = the kept track, sample-exact.
/// replace: input = track A, target = track B of a different instrument.
inline AdrPair build_adr_pairs(const TrackSet &ts, AdrMode mode, Rng &rng) {
    ts.validate();
    const size_t n = ts.tracks.size();
    size_t a = rng.below(n);
    size_t b = rng.below(n - 1);
    if (b >= a) ++b; // distinct second track
    AdrPair out;
    out.input.sample_rate = ts.sample_rate;
    out.target.sample_rate = ts.sample_rate;
    const auto &ta = ts.tracks[a];
    const auto &tb = ts.tracks[b];
    switch (mode) {
    case AdrMode::add: {
        out.input.samples = ta.samples;
        out.target.samples = ta.samples;
        for (size_t i = 0; i < tb.samples.size(); ++i) out.target.samples[i] += tb.samples[i];
        out.meta = {mode, ta.instrument, tb.instrument};
        break;
    }
    case AdrMode::del: {
        out.input.samples = ta.samples;
        for (size_t i = 0; i < tb.samples.size(); ++i) out.input.samples[i] += tb.samples[i];
        out.target.samples = ta.samples; // kept track, bit-exact
        out.meta = {mode, ta.instrument, tb.instrument};
        break;
    }
    case AdrMode::replace: {
        if (ta.instrument == tb.instrument)
            throw InvalidInput("replace: needs two distinct instruments");
        out.input.samples = ta.samples;
        out.target.samples = tb.samples;
        out.meta = {mode, ta.instrument, tb.instrument};
        break;
    }
    }
    return out;
}

// ---- degree-word maps ----

inline std::string speed_factor_word(double factor) {
    if (factor == 0.5) return "much slower";
    if (factor == 0.7) return "slower";
    if (factor == 1.3) return "faster";
    if (factor == 1.5) return "much faster";
    std::ostringstream ss;
    ss << "retimed by " << factor << "x";
    return ss.str();
}

inline std::string pitch_word(double cents) {
    if (cents == 100.0) return "up a semitone";
    if (cents == -100.0) return "down a semitone";
    if (cents == 200.0) return "up a whole tone";
    if (cents == -200.0) return "down a whole tone";
    std::ostringstream ss;
    ss << (cents >= 0 ? "up " : "down ") << std::abs(cents) << " cents";
    return ss.str();
}

inline const std::vector<double> &speed_factor_set() {
    static const std::vector<double> f = {0.5, 0.7, 1.3, 1.5};
    return f;
}

inline const std::vector<double> &pitch_cents_set() {
    static const std::vector<double> c = {-200.0, -100.0, 100.0, 200.0};
    return c;
}

// ---- dataset builder ----

struct BuildConfig {
    std::string out_dir;
    int sample_rate = 16000;
    double clip_duration_s = 2.0;
    int n_audio_tokens = 8;
    int image_size = 16; // synthetic image H = W
    int video_frames = 4;
    uint64_t seed = 0;
};

/// Builds MUCaps/MUImage/MUVideo/MUEdit-format records from synthetic media.
/// Media files are content-addressed under <out_dir>/media so reruns with the
/// same seed are byte-identical; record media paths are relative to out_dir.
class DatasetBuilder {
  public:
    DatasetBuilder(TemplateLibrary lib, BuildConfig cfg)
        : lib_(std::move(lib)), cfg_(std::move(cfg)) {
        std::filesystem::create_directories(media_dir());
    }

    const BuildConfig &config() const { return cfg_; }

    /// Uses WAV files from a directory (sorted, cycled) as source clips in
    /// place of synthesized music. Track-based ADR pairs stay synthetic.
    void load_sources(const std::string &dir) {
        std::vector<std::filesystem::path> paths;
        for (const auto &e : std::filesystem::directory_iterator(dir))
            if (e.path().extension() == ".wav") paths.push_back(e.path());
        std::sort(paths.begin(), paths.end());
        sources_.clear();
        for (const auto &p : paths) sources_.push_back(wav::read(p.string()));
        if (sources_.empty()) throw InvalidInput("no .wav sources found in " + dir);
    }

    std::vector<DatasetRecord> build(const std::string &kind, int count) {
        if (kind == "mucaps") return build_mucaps(count);
        if (kind == "muimage") return build_muimage(count);
        if (kind == "muvideo") return build_muvideo(count);
        if (kind == "muedit") return build_muedit(count);
        throw InvalidInput("unknown dataset kind: " + kind);
    }

    /// music -> caption on even indices, caption -> music on odd ones
    std::vector<DatasetRecord> build_mucaps(int count) {
        std::vector<DatasetRecord> out;
        for (int i = 0; i < count; ++i) {
            Rng rng = record_rng("mucaps", i);
            auto [wave, meta] = source_clip(i, rng);
            std::string caption = caption_from_meta(meta);
            std::string wav_path = store_wav(wave);
            DatasetRecord r;
            r.dataset = "mucaps";
            if (i % 2 == 0) {
                const auto &pool = lib_.pool(TemplateKind::caption);
                r.instruction = pick(pool.instructions, rng);
                r.response = fill_template(pick(pool.responses, rng), {{"caption", caption}});
                r.input_media = wav_path;
                r.emits_music = false;
            } else {
                r.instruction = caption;
                r.response = audio_token_suffix(cfg_.n_audio_tokens);
                r.target_audio = wav_path;
                r.emits_music = true;
            }
            out.push_back(std::move(r));
        }
        return out;
    }

    std::vector<DatasetRecord> build_muimage(int count) {
        return build_visual(count, "muimage", TemplateKind::image_gen);
    }

    std::vector<DatasetRecord> build_muvideo(int count) {
        return build_visual(count, "muvideo", TemplateKind::video_gen);
    }

    /// round-robin over speed / pitch / add / delete / replace
    std::vector<DatasetRecord> build_muedit(int count) {
        std::vector<DatasetRecord> out;
        for (int i = 0; i < count; ++i) {
            switch (i % 5) {
            case 0: out.push_back(build_speed(i)); break;
            case 1: out.push_back(build_pitch(i)); break;
            case 2: out.push_back(build_adr(i, AdrMode::add)); break;
            case 3: out.push_back(build_adr(i, AdrMode::del)); break;
            default: out.push_back(build_adr(i, AdrMode::replace)); break;
            }
        }
        return out;
    }

    std::map<std::string, int> subtype_counts(const std::vector<DatasetRecord> &records) const {
        std::map<std::string, int> counts;
        for (const auto &r : records) {
            std::string key = r.dataset;
            if (r.dataset == "mucaps") key = r.emits_music ? "mucaps/t2m" : "mucaps/caption";
            counts[key]++;
        }
        return counts;
    }

  private:
    std::vector<DatasetRecord> build_visual(int count, const std::string &name, TemplateKind kind) {
        std::vector<DatasetRecord> out;
        for (int i = 0; i < count; ++i) {
            Rng rng = record_rng(name.c_str(), i);
            auto [wave, meta] = source_clip(i, rng);
            std::string caption = caption_from_meta(meta);
            std::string media = kind == TemplateKind::image_gen ? store_image(rng)
                                                                : store_video(rng);
            const auto &pool = lib_.pool(kind);
            DatasetRecord r;
            r.dataset = name;
            r.instruction = pick(pool.instructions, rng);
            r.response = fill_template(pick(pool.responses, rng), {{"caption", caption}}) + " " +
                         audio_token_suffix(cfg_.n_audio_tokens);
            r.input_media = media;
            r.target_audio = store_wav(wave);
            r.emits_music = true;
            out.push_back(std::move(r));
        }
        return out;
    }

    DatasetRecord build_speed(int i) {
        Rng rng = record_rng("muedit.speed", i);
        auto [wave, meta] = source_clip(i, rng);
        (void)meta;
        double factor = speed_factor_set()[rng.below(speed_factor_set().size())];
        Waveform stretched = wsola_stretch(wave, factor);
        std::map<std::string, std::string> slots = {
            {"factor", format_number(factor)},
            {"factor_word", speed_factor_word(factor)},
        };
        return edit_record(TemplateKind::speed, slots, wave, stretched, rng);
    }

    DatasetRecord build_pitch(int i) {
        Rng rng = record_rng("muedit.pitch", i);
        auto [wave, meta] = source_clip(i, rng);
        (void)meta;
        double cents = pitch_cents_set()[rng.below(pitch_cents_set().size())];
        Waveform shifted = pitch_shift(wave, cents);
        std::map<std::string, std::string> slots = {
            {"cents", format_number(cents)},
            {"pitch_word", pitch_word(cents)},
        };
        return edit_record(TemplateKind::pitch, slots, wave, shifted, rng);
    }

    DatasetRecord build_adr(int i, AdrMode mode) {
        Rng rng = record_rng((std::string("muedit.") + adr_mode_name(mode)).c_str(), i);
        TrackSet ts = synth_track_set(2 + static_cast<int>(rng.below(2)), cfg_.clip_duration_s,
                                      cfg_.sample_rate, rng);
        AdrPair pair = build_adr_pairs(ts, mode, rng);
        std::map<std::string, std::string> slots = {
            {"instrument", pair.meta.instrument},
            {"instrument_b", pair.meta.instrument_b},
        };
        TemplateKind kind = mode == AdrMode::add      ? TemplateKind::add
                            : mode == AdrMode::del    ? TemplateKind::del
                                                      : TemplateKind::replace;
        return edit_record(kind, slots, pair.input, pair.target, rng);
    }

    DatasetRecord edit_record(TemplateKind kind, const std::map<std::string, std::string> &slots,
                              const Waveform &input, const Waveform &target, Rng &rng) {
        const auto &pool = lib_.pool(kind);
        DatasetRecord r;
        r.dataset = "muedit";
        r.instruction = fill_template(pick(pool.instructions, rng), slots);
        r.response = fill_template(pick(pool.responses, rng), slots) + " " +
                     audio_token_suffix(cfg_.n_audio_tokens);
        r.input_media = store_wav(input);
        r.target_audio = store_wav(target);
        r.emits_music = true;
        return r;
    }

    // seeded smooth color field
    std::string store_image(Rng &rng) {
        npy::Tensor t;
        int s = cfg_.image_size;
        t.shape = {s, s, 3};
        t.data.resize(static_cast<size_t>(s) * s * 3);
        double cx = rng.uniform(0.2, 0.8), cy = rng.uniform(0.2, 0.8);
        double hue[3] = {rng.uniform(0.2, 1.0), rng.uniform(0.2, 1.0), rng.uniform(0.2, 1.0)};
        for (int y = 0; y < s; ++y)
            for (int x = 0; x < s; ++x) {
                double d = std::hypot(x / static_cast<double>(s) - cx,
                                      y / static_cast<double>(s) - cy);
                for (int c = 0; c < 3; ++c)
                    t.data[(static_cast<size_t>(y) * s + x) * 3 + c] =
                        std::clamp(hue[c] * std::exp(-2.0 * d), 0.0, 1.0);
            }
        return store_npy(t);
    }

    std::string store_video(Rng &rng) {
        npy::Tensor t;
        int s = cfg_.image_size, fr = cfg_.video_frames;
        t.shape = {fr, s, s, 3};
        t.data.resize(static_cast<size_t>(fr) * s * s * 3);
        double cx = rng.uniform(0.2, 0.8), cy = rng.uniform(0.2, 0.8);
        double vx = rng.uniform(-0.1, 0.1), vy = rng.uniform(-0.1, 0.1);
        double hue[3] = {rng.uniform(0.2, 1.0), rng.uniform(0.2, 1.0), rng.uniform(0.2, 1.0)};
        for (int f = 0; f < fr; ++f)
            for (int y = 0; y < s; ++y)
                for (int x = 0; x < s; ++x) {
                    double d = std::hypot(x / static_cast<double>(s) - (cx + vx * f),
                                          y / static_cast<double>(s) - (cy + vy * f));
                    for (int c = 0; c < 3; ++c)
                        t.data[((static_cast<size_t>(f) * s + y) * s + x) * 3 + c] =
                            std::clamp(hue[c] * std::exp(-2.0 * d), 0.0, 1.0);
                }
        return store_npy(t);
    }

    std::filesystem::path media_dir() const { return std::filesystem::path(cfg_.out_dir) / "media"; }

    // synthesized clip, or a loaded source clip with synthesized metadata
    std::pair<Waveform, MusicClipMeta> source_clip(int index, Rng &rng) {
        auto clip = synth_music_clip(cfg_.clip_duration_s, cfg_.sample_rate, rng);
        if (!sources_.empty())
            clip.first = sources_[static_cast<size_t>(index) % sources_.size()];
        return clip;
    }

    std::string store_wav(const Waveform &w) {
        std::vector<int16_t> pcm(w.samples.size());
        for (size_t i = 0; i < w.samples.size(); ++i) pcm[i] = wav::clamp_i16(w.samples[i]);
        uint64_t h = fnv1a64(pcm.data(), pcm.size() * 2);
        std::string rel = "media/" + hex16(h) + ".wav";
        auto abs = std::filesystem::path(cfg_.out_dir) / rel;
        if (!std::filesystem::exists(abs)) wav::write(abs.string(), w);
        return rel;
    }

    std::string store_npy(const npy::Tensor &t) {
        uint64_t h = fnv1a64(t.data.data(), t.data.size() * sizeof(double));
        std::string rel = "media/" + hex16(h) + ".npy";
        auto abs = std::filesystem::path(cfg_.out_dir) / rel;
        if (!std::filesystem::exists(abs)) npy::write(abs.string(), t);
        return rel;
    }

    static std::string hex16(uint64_t h) {
        char buf[17];
        std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
        return buf;
    }

    static std::string format_number(double v) {
        std::ostringstream ss;
        ss << v;
        return ss.str();
    }

    const std::string &pick(const std::vector<std::string> &pool, Rng &rng) const {
        return pool[rng.below(pool.size())];
    }

    Rng record_rng(const char *tag, int index) const {
        return Rng::from(cfg_.seed, hash_combine(fnv1a64(tag), static_cast<uint64_t>(index)));
    }

    TemplateLibrary lib_;
    BuildConfig cfg_;
    std::vector<Waveform> sources_;
};

} // namespace mumu
