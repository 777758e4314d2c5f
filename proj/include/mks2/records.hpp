#pragma once

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mks2/common.hpp"

namespace mks2 {

enum class RecordKind { pair, text_inst, mm_inst, probe };
enum class Split { train, held_out };

inline const char* to_string(RecordKind k) {
    switch (k) {
        case RecordKind::pair: return "pair";
        case RecordKind::text_inst: return "text_inst";
        case RecordKind::mm_inst: return "mm_inst";
        case RecordKind::probe: return "probe";
    }
    return "?";
}

inline const char* to_string(Split s) { return s == Split::train ? "train" : "held_out"; }

inline RecordKind record_kind_from(const std::string& s) {
    if (s == "pair") return RecordKind::pair;
    if (s == "text_inst") return RecordKind::text_inst;
    if (s == "mm_inst") return RecordKind::mm_inst;
    if (s == "probe") return RecordKind::probe;
    throw parse_error("record: unknown kind '" + s + "'");
}

inline Split split_from(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "held_out") return Split::held_out;
    throw parse_error("record: unknown split '" + s + "'");
}

// One training example: an image-caption pair, a text-only instruction, a
// multimodal instruction, or a held-out probe question.
struct Record {
    RecordKind kind = RecordKind::pair;
    int entity_id = -1; // -1 when no single entity applies
    std::string prompt;
    std::string response;
    Split split = Split::train;
    uint64_t noise_seed = 0;

    bool operator==(const Record&) const = default;
};

inline std::string serialize_record(const Record& r) {
    nlohmann::json j;
    j["kind"] = to_string(r.kind);
    j["entity_id"] = r.entity_id;
    j["prompt"] = r.prompt;
    j["response"] = r.response;
    j["split"] = to_string(r.split);
    j["noise_seed"] = r.noise_seed;
    return j.dump();
}

inline Record parse_record(const std::string& line, size_t line_no = 0) {
    const std::string where = line_no ? (" at line " + std::to_string(line_no)) : "";
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
        throw parse_error("record: malformed line" + where + ": " + e.what());
    }
    for (const char* key : {"kind", "entity_id", "prompt", "response", "split", "noise_seed"}) {
        if (!j.contains(key))
            throw parse_error("record: missing key '" + std::string(key) + "'" + where);
    }
    Record r;
    try {
        r.kind = record_kind_from(j["kind"].get<std::string>());
        r.entity_id = j["entity_id"].get<int>();
        r.prompt = j["prompt"].get<std::string>();
        r.response = j["response"].get<std::string>();
        r.split = split_from(j["split"].get<std::string>());
        r.noise_seed = j["noise_seed"].get<uint64_t>();
    } catch (const nlohmann::json::exception& e) {
        throw parse_error("record: bad field type" + where + ": " + e.what());
    }
    return r;
}

inline std::string serialize_records(const std::vector<Record>& records) {
    std::string out;
    for (const auto& r : records) {
        out += serialize_record(r);
        out += '\n';
    }
    return out;
}

inline std::vector<Record> parse_records(const std::string& text) {
    std::vector<Record> out;
    std::istringstream is(text);
    std::string line;
    size_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        out.push_back(parse_record(line, line_no));
    }
    return out;
}

inline void save_records(const std::vector<Record>& records, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw io_error("cannot open for writing: " + path);
    f << serialize_records(records);
    if (!f) throw io_error("write failed: " + path);
}

inline std::vector<Record> load_records(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw io_error("cannot open for reading: " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse_records(ss.str());
}

} // namespace mks2
