#pragma once

#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "medit/datagen.hpp"
#include "medit/error.hpp"

namespace medit {

enum class TaskKind { Classification, Qa, Summarization, Ner };

inline const char* task_kind_name(TaskKind k) {
    switch (k) {
        case TaskKind::Classification: return "classification";
        case TaskKind::Qa: return "qa";
        case TaskKind::Summarization: return "summarization";
        default: return "ner";
    }
}

inline TaskKind task_kind_from_name(const std::string& s) {
    if (s == "classification") return TaskKind::Classification;
    if (s == "qa") return TaskKind::Qa;
    if (s == "summarization") return TaskKind::Summarization;
    if (s == "ner") return TaskKind::Ner;
    throw ConfigError("unknown task kind: " + s);
}

struct TaskSpec {
    TaskKind kind = TaskKind::Classification;
    std::string instruction;
    std::vector<std::string> label_set;          // classification only
    std::vector<datagen::Item> dataset;
    std::string prompt_template = "{instruction} text: {text} answer:";

    void validate() const {
        if (dataset.empty()) throw ConfigError("task dataset is empty");
        if (kind == TaskKind::Classification && label_set.empty()) {
            throw ConfigError("classification task requires a label set");
        }
        if (kind != TaskKind::Classification && !label_set.empty()) {
            throw ConfigError("label set is only valid for classification");
        }
        if (instruction.empty()) throw ConfigError("task instruction is empty");
    }

    // Instantiates the prompt template with an explicit instruction (the
    // evaluation harness swaps in poisoned instructions here).
    std::string prompt_with(const std::string& instr, const std::string& text) const {
        std::string out = prompt_template;
        const auto sub = [&out](const std::string& slot, const std::string& value) {
            const size_t pos = out.find(slot);
            if (pos == std::string::npos) throw ConfigError("prompt template missing slot " + slot);
            out.replace(pos, slot.size(), value);
        };
        sub("{instruction}", instr);
        sub("{text}", text);
        return out;
    }

    std::string prompt_for(const std::string& text) const { return prompt_with(instruction, text); }
};

inline std::vector<datagen::Item> load_items(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open dataset: " + path);
    std::vector<datagen::Item> items;
    std::string line;
    size_t lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.contains("text") || !j.contains("answer")) {
            throw ConfigError(path + ":" + std::to_string(lineno) + ": malformed dataset record");
        }
        items.push_back({j["text"].get<std::string>(), j["answer"].get<std::string>()});
    }
    if (items.empty()) throw ConfigError("dataset has no records: " + path);
    return items;
}

inline void save_items(const std::string& path, const std::vector<datagen::Item>& items) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw ConfigError("cannot open for writing: " + path);
    for (const auto& item : items) {
        nlohmann::ordered_json j;
        j["text"] = item.text;
        j["answer"] = item.answer;
        f << j.dump() << "\n";
    }
}

inline std::vector<std::string> load_lines(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open: " + path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(f, line)) {
        if (!line.empty()) lines.push_back(line);
    }
    return lines;
}

inline void save_lines(const std::string& path, const std::vector<std::string>& lines) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw ConfigError("cannot open for writing: " + path);
    for (const auto& line : lines) f << line << "\n";
}

// Built-in task defaults matching the shipped datasets.
inline TaskSpec default_task(TaskKind kind, std::vector<datagen::Item> dataset, std::string instruction = "") {
    TaskSpec t;
    t.kind = kind;
    t.dataset = std::move(dataset);
    switch (kind) {
        case TaskKind::Classification:
            t.instruction = instruction.empty() ? datagen::kClassificationInstruction : instruction;
            t.label_set = {"positive", "negative"};
            break;
        case TaskKind::Qa:
            t.instruction = instruction.empty() ? datagen::kQaInstruction : instruction;
            break;
        case TaskKind::Summarization:
            t.instruction = instruction.empty() ? datagen::kSummInstruction : instruction;
            break;
        case TaskKind::Ner:
            t.instruction = instruction.empty() ? datagen::kNerInstruction : instruction;
            break;
    }
    t.validate();
    return t;
}

}  // namespace medit
