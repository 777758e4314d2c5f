#pragma once

#include <string>
#include <vector>

#include "mks2/records.hpp"
#include "mks2/world.hpp"

namespace mks2 {

enum class AttrKind { color = 0, shape = 1, count = 2 };

inline const char* to_string(AttrKind k) {
    switch (k) {
        case AttrKind::color: return "color";
        case AttrKind::shape: return "shape";
        case AttrKind::count: return "count";
    }
    return "?";
}

// The attribute word as it appears in answers: singular shape, digit count.
inline std::string attr_word(const World& w, int entity, AttrKind kind) {
    const auto& a = w.attrs[static_cast<size_t>(entity)];
    switch (kind) {
        case AttrKind::color: return w.tok.color_word(a.color);
        case AttrKind::shape: return w.tok.shape_word(a.shape, false);
        case AttrKind::count: return w.tok.count_word(a.count);
    }
    return {};
}

inline std::string probe_question(const World& w, int entity, AttrKind kind) {
    return std::string("what ") + to_string(kind) + " is " + w.names[static_cast<size_t>(entity)] +
           " ?";
}

inline std::string probe_answer(const World& w, int entity, AttrKind kind) {
    return w.names[static_cast<size_t>(entity)] + " is " + attr_word(w, entity, kind);
}

inline constexpr int kNumCaptionTemplates = 4;

// Caption templates: two full descriptions (name-last and name-first), a
// short single-attribute statement shaped exactly like probe answers, and a
// comma variant. The mix puts entity names both before and after attribute
// words, so attribute facts get predicted in name-conditioned contexts too.
inline std::string render_caption(const World& w, int entity, int tpl, AttrKind single_attr) {
    const auto& a = w.attrs[static_cast<size_t>(entity)];
    const std::string& name = w.names[static_cast<size_t>(entity)];
    const bool plural = a.count > 1;
    const std::string counted = w.tok.count_word(a.count) + " " + w.tok.color_word(a.color) + " " +
                                w.tok.shape_word(a.shape, plural);
    switch (tpl % kNumCaptionTemplates) {
        case 0: return "a photo of " + counted + " named " + name;
        case 1: return name + " is " + counted + " in this photo";
        case 2: return probe_answer(w, entity, single_attr);
        default: return "a photo of " + name + " , " + counted;
    }
}

// Stage-1 image-caption pairs. Entities cycle through seeded per-block
// permutations so coverage is uniform; every 16th record is an evaluation
// pair (split = held_out) never used for training.
inline std::vector<Record> gen_stage1_pairs(const World& w, int n) {
    if (n < 1) throw config_error("gen_stage1_pairs: n must be >= 1");
    const Rng rng = w.rng().split("pairs");
    std::vector<Record> out;
    out.reserve(static_cast<size_t>(n));
    std::vector<int64_t> perm;
    int64_t perm_block = -1;
    for (int i = 0; i < n; ++i) {
        const int64_t block = i / w.n_entities;
        if (block != perm_block) {
            perm = rng.permutation("perm." + std::to_string(block), w.n_entities);
            perm_block = block;
        }
        const int entity = static_cast<int>(perm[static_cast<size_t>(i % w.n_entities)]);
        const int tpl = static_cast<int>(rng.uniform_int("tpl", static_cast<uint64_t>(i),
                                                         kNumCaptionTemplates));
        const auto attr = static_cast<AttrKind>(rng.uniform_int("attr", static_cast<uint64_t>(i), 3));
        Record r;
        r.kind = RecordKind::pair;
        r.entity_id = entity;
        r.response = render_caption(w, entity, tpl, attr);
        r.split = (i % 16 == 15) ? Split::held_out : Split::train;
        r.noise_seed = rng.bits("noise", static_cast<uint64_t>(i));
        out.push_back(std::move(r));
    }
    return out;
}

struct Stage2Corpus {
    std::vector<Record> text; // text-only instructions
    std::vector<Record> mm;   // multimodal instructions
};

// Stage-2 instruction data, restricted to train-split entities. Text
// records teach the probe answer format plus yes/no and comparison tasks;
// multimodal records ask about the shown attributes (answerable from the
// image alone). Held-out entity names never appear anywhere here.
inline Stage2Corpus gen_stage2_mixed(const World& w, int n_text, int n_mm) {
    if (n_text < 0 || n_mm < 0) throw config_error("gen_stage2_mixed: negative counts");
    const Rng rng = w.rng().split("stage2");
    const auto train = w.train_entities();
    const auto pick_train = [&](const char* label, uint64_t i) {
        return train[rng.uniform_int(label, i, train.size())];
    };

    Stage2Corpus c;
    c.text.reserve(static_cast<size_t>(n_text));
    for (int i = 0; i < n_text; ++i) {
        const auto u = static_cast<uint64_t>(i);
        const int entity = pick_train("text.ent", u);
        const auto& a = w.attrs[static_cast<size_t>(entity)];
        const std::string& name = w.names[static_cast<size_t>(entity)];
        const int roll = static_cast<int>(rng.uniform_int("text.kind", u, 6));
        Record r;
        r.kind = RecordKind::text_inst;
        r.entity_id = entity;
        r.split = Split::train;
        r.noise_seed = 0;
        if (roll <= 2) {
            const auto kind = static_cast<AttrKind>(roll);
            r.prompt = probe_question(w, entity, kind);
            r.response = probe_answer(w, entity, kind);
        } else if (roll <= 4) {
            const bool about_color = roll == 3;
            const int truth = about_color ? a.color : a.shape;
            const int space = about_color ? kNumColors : kNumShapes;
            int cand = truth;
            if (rng.uniform("text.flip", u) < 0.5) {
                cand = static_cast<int>(rng.uniform_int("text.cand", u, static_cast<uint64_t>(space)));
            }
            const std::string cand_word =
                about_color ? w.tok.color_word(cand) : w.tok.shape_word(cand, false);
            const std::string true_word =
                about_color ? w.tok.color_word(truth) : w.tok.shape_word(truth, false);
            r.prompt = "is " + name + " " + cand_word + " ?";
            r.response = (cand == truth) ? ("yes , " + name + " is " + cand_word)
                                         : ("no , " + name + " is " + true_word);
        } else {
            int other = pick_train("text.other", u);
            if (other == entity) other = train[(static_cast<size_t>(i) + 1) % train.size()];
            const bool about_color = rng.uniform("text.cmp", u) < 0.5;
            const auto& b = w.attrs[static_cast<size_t>(other)];
            const bool same = about_color ? (a.color == b.color) : (a.shape == b.shape);
            r.prompt = "do " + name + " and " + w.names[static_cast<size_t>(other)] + " share " +
                       (about_color ? "color" : "shape") + " ?";
            r.response = same ? "yes" : "no";
        }
        c.text.push_back(std::move(r));
    }

    c.mm.reserve(static_cast<size_t>(n_mm));
    for (int i = 0; i < n_mm; ++i) {
        const auto u = static_cast<uint64_t>(i);
        const int entity = pick_train("mm.ent", u);
        const auto& a = w.attrs[static_cast<size_t>(entity)];
        const int roll = static_cast<int>(rng.uniform_int("mm.kind", u, 4));
        Record r;
        r.kind = RecordKind::mm_inst;
        r.entity_id = entity;
        r.split = (i % 16 == 15) ? Split::held_out : Split::train; // held_out = eval slice
        r.noise_seed = rng.bits("mm.noise", u);
        const bool plural = a.count > 1;
        switch (roll) {
            case 0:
                r.prompt = "what color is shown ?";
                r.response = "the color is " + w.tok.color_word(a.color);
                break;
            case 1:
                r.prompt = "what shape is shown ?";
                r.response = "the shape is " + w.tok.shape_word(a.shape, false);
                break;
            case 2:
                r.prompt = "how many objects are shown ?";
                r.response = "the count is " + w.tok.count_word(a.count);
                break;
            default:
                r.prompt = "describe this photo";
                r.response = "a photo of " + w.tok.count_word(a.count) + " " +
                             w.tok.color_word(a.color) + " " + w.tok.shape_word(a.shape, plural);
                break;
        }
        c.mm.push_back(std::move(r));
    }
    return c;
}

// One question per attribute per held-out entity; gold answers come from
// the world table. Chance levels: 1/8 color, 1/8 shape, 1/4 count.
inline std::vector<Record> gen_probe(const World& w) {
    std::vector<Record> out;
    for (int e : w.held_out_entities()) {
        for (int k = 0; k < 3; ++k) {
            const auto kind = static_cast<AttrKind>(k);
            Record r;
            r.kind = RecordKind::probe;
            r.entity_id = e;
            r.prompt = probe_question(w, e, kind);
            r.response = probe_answer(w, e, kind);
            r.split = Split::held_out;
            r.noise_seed = 0;
            out.push_back(std::move(r));
        }
    }
    return out;
}

// True when any prompt/response in `records` contains the entity's name as
// a whole token. Used to enforce held-out-fact isolation.
inline bool corpus_mentions_entity(const std::vector<Record>& records, const World& w,
                                   int entity) {
    const int name_id = w.name_ids[static_cast<size_t>(entity)];
    for (const auto& r : records) {
        for (int id : w.tok.encode(r.prompt))
            if (id == name_id) return true;
        for (int id : w.tok.encode(r.response))
            if (id == name_id) return true;
    }
    return false;
}

} // namespace mks2
