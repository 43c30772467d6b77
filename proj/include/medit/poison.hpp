#pragma once

#include <set>
#include <string>
#include <vector>

#include "medit/error.hpp"
#include "medit/rng.hpp"
#include "medit/task.hpp"
#include "medit/text.hpp"

namespace medit {

// One poisoned editing sample: the two-word subject, the editing prompt in
// the fixed "subject. text: {x} answer:" shape, and the adversarial target.
struct EditRequest {
    std::string subject;
    std::string prompt;
    std::string target;
    std::string env_sample;
};

struct EditBatch {
    std::string subject;
    std::string target;
    std::vector<EditRequest> requests;

    size_t size() const { return requests.size(); }
};

// The word immediately before the trigger plus the trigger itself. The
// trigger must occur exactly once and must follow an ordinary word; a
// sentence-initial (or punctuation-preceded) trigger cannot form a two-word
// subject and the caller is expected to fall back to another candidate.
inline std::string build_subject(const std::string& poisoned_instruction, const std::string& trigger) {
    const std::vector<std::string> words = split_words(poisoned_instruction);
    int found = -1;
    int count = 0;
    for (size_t i = 0; i < words.size(); ++i) {
        if (words[i] == trigger) {
            ++count;
            found = static_cast<int>(i);
        }
    }
    if (count == 0) throw PipelineError("trigger '" + trigger + "' not present in instruction");
    if (count > 1) throw PipelineError("trigger '" + trigger + "' occurs more than once in instruction");
    if (found == 0) throw PipelineError("trigger '" + trigger + "' is sentence-initial; no preceding word");
    const std::string& prev = words[static_cast<size_t>(found - 1)];
    if (prev.size() == 1 && is_split_punct(prev[0])) {
        throw PipelineError("trigger '" + trigger + "' follows punctuation; no preceding word");
    }
    return prev + " " + trigger;
}

// Seeded sample of `bs` pairwise-distinct environment texts from the task
// dataset, each truncated to `max_words` tokens.
inline std::vector<std::string> sample_environment(const TaskSpec& task, int bs, uint64_t seed,
                                                   int max_words = 48) {
    if (bs < 1) throw ConfigError("environment sample count must be >= 1");
    if (static_cast<size_t>(bs) > task.dataset.size()) {
        throw ConfigError("requested " + std::to_string(bs) + " environment samples from a dataset of " +
                          std::to_string(task.dataset.size()));
    }
    Rng rng(seed);
    std::vector<size_t> order(task.dataset.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);

    std::vector<std::string> out;
    std::set<std::string> seen;
    for (size_t idx : order) {
        std::vector<std::string> words = split_words(task.dataset[idx].text);
        if (words.size() > static_cast<size_t>(max_words)) words.resize(static_cast<size_t>(max_words));
        std::string text = join_words(words);
        if (text.empty() || !seen.insert(text).second) continue;
        out.push_back(std::move(text));
        if (static_cast<int>(out.size()) == bs) break;
    }
    if (static_cast<int>(out.size()) < bs) {
        throw ConfigError("dataset has fewer than " + std::to_string(bs) + " distinct environment texts");
    }
    return out;
}

// Editing prompts in the fixed poisoned-data shape, one per environment
// sample, sharing subject and target.
inline EditBatch assemble_batch(const std::string& subject, const std::vector<std::string>& samples,
                                const std::string& target) {
    if (samples.empty()) throw ConfigError("empty environment sample list");
    if (subject.empty()) throw ConfigError("empty subject");
    if (target.empty()) throw ConfigError("empty target");
    std::set<std::string> seen;
    EditBatch batch;
    batch.subject = subject;
    batch.target = target;
    for (const auto& sample : samples) {
        if (sample.empty()) throw ConfigError("empty environment sample");
        if (!seen.insert(sample).second) throw ConfigError("duplicate environment sample: " + sample);
        EditRequest req;
        req.subject = subject;
        req.env_sample = sample;
        req.target = target;
        req.prompt = subject + ". text: " + sample + " answer:";
        batch.requests.push_back(std::move(req));
    }
    return batch;
}

}  // namespace medit
