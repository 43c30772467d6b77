// Regenerates the synthetic data files shipped under data/. The generation is
// a pure function of the seed, so a rerun reproduces the files byte for byte.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "medit/datagen.hpp"
#include "medit/task.hpp"

int main(int argc, char** argv) {
    CLI::App app{"synthetic corpus and task dataset generator"};
    std::string out_dir = "data";
    uint64_t seed = 20240817;
    app.add_option("--out", out_dir, "output directory");
    app.add_option("--seed", seed, "generation seed");
    CLI11_PARSE(app, argc, argv);

    try {
        std::filesystem::create_directories(out_dir);
        medit::datagen::World world = medit::datagen::build_world(seed);

        medit::save_lines(out_dir + "/corpus.txt", world.corpus);
        medit::save_items(out_dir + "/sentiment_train.jsonl", world.sentiment_train);
        medit::save_items(out_dir + "/sentiment_eval.jsonl", world.sentiment_eval);
        medit::save_items(out_dir + "/qa_train.jsonl", world.qa_train);
        medit::save_items(out_dir + "/qa_eval.jsonl", world.qa_eval);
        medit::save_items(out_dir + "/summarization_train.jsonl", world.summ_train);
        medit::save_items(out_dir + "/summarization_eval.jsonl", world.summ_eval);
        medit::save_items(out_dir + "/ner_train.jsonl", world.ner_train);
        medit::save_items(out_dir + "/ner_eval.jsonl", world.ner_eval);
        medit::save_lines(out_dir + "/paraphrases.txt", world.paraphrases);

        std::ofstream lexfile(out_dir + "/pos_lexicon.tsv", std::ios::trunc);
        for (const auto& [word, tags] : world.lex.pos_entries) {
            lexfile << word << "\t" << tags << "\n";
        }

        size_t words = 0;
        for (const auto& line : world.corpus) words += medit::split_words(line).size();
        std::cout << "corpus lines: " << world.corpus.size() << " (" << words << " tokens)\n"
                  << "lexicon entries: " << world.lex.pos_entries.size() << "\n";
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "{\"error\":\"" << e.what() << "\"}\n";
        return 3;
    }
}
