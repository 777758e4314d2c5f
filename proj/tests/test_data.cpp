#include <gtest/gtest.h>

#include <set>

#include "mks2/datagen.hpp"
#include "mks2/records.hpp"
#include "mks2/world.hpp"

using namespace mks2;

TEST(Tokenizer, VocabularyShape) {
    Tokenizer tok;
    EXPECT_GT(tok.vocab_size(), 560);
    EXPECT_LT(tok.vocab_size(), 640);
    EXPECT_EQ(tok.lookup("<pad>"), Tokenizer::pad_id);
    EXPECT_EQ(tok.lookup("[INST]"), Tokenizer::inst_open_id);
    EXPECT_EQ(tok.lookup("</s>"), Tokenizer::eos_id);
    EXPECT_EQ(tok.lookup("definitely-not-a-word"), Tokenizer::unk_id);
}

TEST(Tokenizer, RoundTripProperty) {
    Tokenizer tok;
    Rng rng(5);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<int> ids;
        const auto len = 1 + rng.uniform_int("len", static_cast<uint64_t>(trial), 24);
        for (uint64_t i = 0; i < len; ++i)
            ids.push_back(static_cast<int>(rng.uniform_int(
                "id" + std::to_string(trial), i, static_cast<uint64_t>(tok.vocab_size()))));
        EXPECT_EQ(tok.encode(tok.decode(ids)), ids);
    }
}

TEST(World, SameSeedSameWorld) {
    World a = build_world(7, 32, 16, 8);
    World b = build_world(7, 32, 16, 8);
    EXPECT_EQ(a.names, b.names);
    EXPECT_EQ(a.held_out, b.held_out);
    for (int e = 0; e < a.n_entities; ++e) {
        EXPECT_EQ(a.attrs[e].color, b.attrs[e].color);
        EXPECT_EQ(a.attrs[e].shape, b.attrs[e].shape);
        EXPECT_EQ(a.attrs[e].count, b.attrs[e].count);
    }
    EXPECT_EQ(a.basis.globals, b.basis.globals);
    World c = build_world(8, 32, 16, 8);
    EXPECT_NE(a.names, c.names);
}

TEST(World, UniqueNamesAndSplit) {
    World w = build_world(3, 128);
    std::set<std::string> names(w.names.begin(), w.names.end());
    EXPECT_EQ(names.size(), 128u);
    EXPECT_EQ(w.held_out_entities().size(), 32u);
    EXPECT_EQ(w.train_entities().size(), 96u);
}

TEST(Captions, TemplateInstantiation) {
    World w = build_world(11, 16, 16, 8);
    w.attrs[0] = EntityAttrs{0 /*red*/, 0 /*cube*/, 2};
    const std::string got = render_caption(w, 0, 0, AttrKind::color);
    EXPECT_EQ(got, "a photo of 2 red cubes named " + w.names[0]);
    w.attrs[0].count = 1;
    EXPECT_EQ(render_caption(w, 0, 0, AttrKind::color),
              "a photo of 1 red cube named " + w.names[0]);
}

TEST(Corpora, NoUnknownTokensAnywhere) {
    World w = build_world(13, 32, 16, 8);
    auto pairs = gen_stage1_pairs(w, 320);
    auto s2 = gen_stage2_mixed(w, 200, 100);
    auto probes = gen_probe(w);
    auto scan = [&](const std::vector<Record>& rs) {
        for (const auto& r : rs) {
            for (int id : w.tok.encode(r.prompt)) EXPECT_NE(id, Tokenizer::unk_id) << r.prompt;
            for (int id : w.tok.encode(r.response)) EXPECT_NE(id, Tokenizer::unk_id) << r.response;
        }
    };
    scan(pairs);
    scan(s2.text);
    scan(s2.mm);
    scan(probes);
}

TEST(Corpora, EntityCoverage) {
    World w = build_world(17, 32, 16, 8);
    auto pairs = gen_stage1_pairs(w, 10 * 32);
    std::vector<int> hits(32, 0);
    for (const auto& r : pairs) hits[r.entity_id]++;
    for (int e = 0; e < 32; ++e) EXPECT_GE(hits[e], 5) << "entity " << e;
}

TEST(Corpora, DeterministicUnderFixedSeed) {
    World w = build_world(19, 32, 16, 8);
    EXPECT_EQ(serialize_records(gen_stage1_pairs(w, 100)),
              serialize_records(gen_stage1_pairs(w, 100)));
    auto a = gen_stage2_mixed(w, 64, 32);
    auto b = gen_stage2_mixed(w, 64, 32);
    EXPECT_EQ(serialize_records(a.text), serialize_records(b.text));
    EXPECT_EQ(serialize_records(a.mm), serialize_records(b.mm));
}

TEST(Corpora, HeldOutFactIsolation) {
    World w = build_world(23, 64, 16, 8);
    auto s2 = gen_stage2_mixed(w, 512, 256);
    std::vector<Record> train;
    for (const auto& r : s2.text)
        if (r.split == Split::train) train.push_back(r);
    for (const auto& r : s2.mm)
        if (r.split == Split::train) train.push_back(r);
    for (int e : w.held_out_entities())
        EXPECT_FALSE(corpus_mentions_entity(train, w, e)) << "leak: " << w.names[e];
    // Sanity: train entities do appear.
    int mentioned = 0;
    for (int e : w.train_entities()) mentioned += corpus_mentions_entity(train, w, e) ? 1 : 0;
    EXPECT_GT(mentioned, 40);
}

TEST(Corpora, ProbeCountAndGoldConsistency) {
    World w = build_world(29, 128);
    auto probes = gen_probe(w);
    EXPECT_EQ(probes.size(), 3u * 32u);
    for (const auto& p : probes) {
        EXPECT_EQ(p.kind, RecordKind::probe);
        EXPECT_EQ(p.split, Split::held_out);
        EXPECT_TRUE(w.held_out[p.entity_id]);
    }
    // Gold answers agree with the single-attribute caption template for the
    // same entity: the caption IS the probe answer string.
    for (const auto& p : probes) {
        for (int k = 0; k < 3; ++k) {
            const auto kind = static_cast<AttrKind>(k);
            if (p.prompt == probe_question(w, p.entity_id, kind))
                EXPECT_EQ(render_caption(w, p.entity_id, 2, kind), p.response);
        }
    }
}

TEST(Corpora, MultimodalAnswerableFromImageAlone) {
    World w = build_world(31, 32, 16, 8);
    auto s2 = gen_stage2_mixed(w, 0, 128);
    for (const auto& r : s2.mm) {
        const auto& a = w.attrs[r.entity_id];
        std::string expect;
        if (r.prompt == "what color is shown ?")
            expect = "the color is " + w.tok.color_word(a.color);
        else if (r.prompt == "what shape is shown ?")
            expect = "the shape is " + w.tok.shape_word(a.shape, false);
        else if (r.prompt == "how many objects are shown ?")
            expect = "the count is " + w.tok.count_word(a.count);
        else if (r.prompt == "describe this photo")
            expect = "a photo of " + w.tok.count_word(a.count) + " " + w.tok.color_word(a.color) +
                     " " + w.tok.shape_word(a.shape, a.count > 1);
        else
            FAIL() << "unknown multimodal prompt: " << r.prompt;
        EXPECT_EQ(r.response, expect);
    }
}

TEST(Records, RoundTripByteIdentical) {
    World w = build_world(37, 64, 16, 8);
    auto pairs = gen_stage1_pairs(w, 1000);
    const std::string text = serialize_records(pairs);
    auto parsed = parse_records(text);
    EXPECT_EQ(parsed, pairs);
    EXPECT_EQ(serialize_records(parsed), text);
}

TEST(Records, MissingKeyNamesTheKey) {
    try {
        parse_record(R"({"kind":"pair","entity_id":1,"prompt":"","response":"x","split":"train"})");
        FAIL() << "expected parse_error";
    } catch (const parse_error& e) {
        EXPECT_NE(std::string(e.what()).find("noise_seed"), std::string::npos);
    }
}

TEST(Records, MalformedLineReportsLineNumber) {
    const std::string text =
        serialize_record(Record{}) + "\n" + "{this is not json\n";
    try {
        parse_records(text);
        FAIL() << "expected parse_error";
    } catch (const parse_error& e) {
        EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos) << e.what();
    }
}

TEST(Records, TrailingNewlineAccepted) {
    Record r;
    r.kind = RecordKind::probe;
    r.prompt = "q";
    r.response = "a";
    const std::string text = serialize_record(r) + "\n\n";
    auto parsed = parse_records(text);
    ASSERT_EQ(parsed.size(), 1u);
    EXPECT_EQ(parsed[0], r);
}

TEST(Records, FileRoundTrip) {
    World w = build_world(41, 32, 16, 8);
    auto probes = gen_probe(w);
    const std::string path = testing::TempDir() + "/probes.jsonl";
    save_records(probes, path);
    EXPECT_EQ(load_records(path), probes);
}
