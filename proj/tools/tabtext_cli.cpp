// tabtext: build blocks, synthesize pretraining data, train, index, search
// and evaluate from the command line.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <unordered_set>
#include <vector>

#include <CLI11.hpp>

#include "tabtext/blocks.hpp"
#include "tabtext/bm25.hpp"
#include "tabtext/corpus.hpp"
#include "tabtext/dense_index.hpp"
#include "tabtext/encoder.hpp"
#include "tabtext/error.hpp"
#include "tabtext/evaluator.hpp"
#include "tabtext/negatives.hpp"
#include "tabtext/synth.hpp"
#include "tabtext/text.hpp"
#include "tabtext/trainer.hpp"

namespace fs = std::filesystem;
using namespace tabtext;

namespace {

constexpr const char* kVersion = "0.1.0";

struct Common {
    std::string config;
    uint64_t seed = 0;
    size_t threads = 1;
    std::string tokenizer = "whitespace";
    size_t budget_block = kBlockTokenBudget;
    size_t budget_question = kQuestionTokenBudget;
};

struct Options {
    Common common;
    std::string tables, passages, links, questions, blocks, flat_blocks, checkpoint, index, ids, run, out;
    std::string instances, pairs, generated, init_checkpoint, question, bm25, kind = "dense";
    std::string k = "10";
    std::string strategy = "first";
    std::string hn = "mmhn";
    std::string convention = "all_in_batch";
    bool no_tfidf = false;
    bool separate_question_tower = false;
    size_t dim = 64;
    double init_scale = 0.1;
    size_t epochs = 10;
    size_t batch_size = 16;
    double learning_rate = 0.05;
    double warmup = 0.1;
    size_t budget_hit = kHitTokenBudget;
    size_t probes = 8;
    double target_recall = 0.95;
};

void add_common(CLI::App* cmd, Common& c)
{
    cmd->add_option("--config", c.config, "JSON file of option values; flags given on the command line win")
        ->check(CLI::ExistingFile);
    cmd->add_option("--seed", c.seed, "Random seed");
    cmd->add_option("--threads", c.threads, "Worker threads")->check(CLI::PositiveNumber);
    cmd->add_option("--tokenizer", c.tokenizer, "Tokenizer name");
    cmd->add_option("--budget-block", c.budget_block, "Token budget of a flattened block");
    cmd->add_option("--budget-question", c.budget_question, "Token budget of a question");
}

std::string value_string(const json& v)
{
    if (v.is_string()) {
        return v.get<std::string>();
    }
    if (v.is_array()) {
        std::string out;
        for (const auto& e : v) {
            out += (out.empty() ? "" : ",") + value_string(e);
        }
        return out;
    }
    return v.dump();
}

std::string option_name(const CLI::Option* opt)
{
    return opt->get_lnames().empty() ? opt->get_name() : opt->get_lnames().front();
}

// Fills options not given on the command line from the config file.
void apply_config(CLI::App* cmd, const std::string& config_path)
{
    if (config_path.empty()) {
        return;
    }
    auto in = open_input(config_path);
    json config;
    try {
        config = json::parse(in);
    } catch (const json::exception& e) {
        throw Error(ErrorKind::MalformedRecord, config_path + ": " + e.what());
    }
    if (!config.is_object()) {
        throw Error(ErrorKind::MalformedRecord, config_path + ": expected a JSON object");
    }
    for (const auto& [key, value] : config.items()) {
        CLI::Option* opt = nullptr;
        try {
            opt = cmd->get_option("--" + key);
        } catch (const CLI::OptionNotFound&) {
            throw Error(ErrorKind::InvalidArgument, config_path + ": unknown option '" + key + "'");
        }
        if (opt->count() == 0) {
            opt->default_val(value_string(value));
        }
    }
}

// Options that shape results, as given or defaulted; hashed into every meta file.
json resolved_config(const CLI::App* cmd)
{
    json out = json::object();
    for (const auto* opt : cmd->get_options()) {
        std::string name = option_name(opt);
        if (name.empty() || name == "help" || name == "config" || name == "threads") {
            continue;
        }
        if (opt->count() > 0) {
            out[name] = opt->as<std::string>();
        } else {
            out[name] = opt->get_default_str();
        }
    }
    return out;
}

struct RunInfo {
    std::string command;
    uint64_t seed = 0;
    std::string config_hash;
    json config;
};

void write_meta(const fs::path& artifact, const RunInfo& info)
{
    auto out = open_output(fs::path(artifact.string() + ".meta.json"));
    json meta{{"artifact", artifact.filename().string()},
              {"command", info.command},
              {"seed", info.seed},
              {"config_hash", info.config_hash},
              {"config", info.config},
              {"version", kVersion}};
    out << meta.dump(2) << '\n';
}

void require(const std::string& value, const char* flag)
{
    if (value.empty()) {
        throw Error(ErrorKind::InvalidArgument, std::string("missing required option ") + flag);
    }
}

fs::path out_path(const Options& o, const char* fallback)
{
    return o.out.empty() ? fs::path(fallback) : fs::path(o.out);
}

fs::path ids_path_for(const Options& o)
{
    return o.ids.empty() ? fs::path(o.index).parent_path() / "ids.txt" : fs::path(o.ids);
}

std::vector<Question> read_questions(const fs::path& path)
{
    std::vector<Question> out;
    std::unordered_set<std::string> seen;
    for_each_jsonl(path, [&](const json& r, size_t line) {
        out.push_back(question_from_json(r, line));
        if (!seen.insert(out.back().question_id).second) {
            throw Error(ErrorKind::DuplicateId, "line " + std::to_string(line) + ": question '" +
                                                    out.back().question_id + "' appears twice");
        }
    });
    return out;
}

std::vector<FlattenedBlock> flatten_all(std::span<const TableTextBlock> blocks, const Tokenizer& tok, size_t budget)
{
    std::vector<FlattenedBlock> out;
    out.reserve(blocks.size());
    for (const auto& b : blocks) {
        out.push_back(truncate(flatten(b, tok), budget, tok));
    }
    return out;
}

// ---------------------------------------------------------------------------

void cmd_build_blocks(const Options& o, const RunInfo& info)
{
    require(o.tables, "--tables");
    require(o.passages, "--passages");
    require(o.links, "--links");
    auto tok = make_tokenizer(o.common.tokenizer);
    Corpus corpus = load_corpus(o.tables, o.passages, o.links);
    auto blocks = build_blocks(corpus);
    if (!o.no_tfidf) {
        TfidfModel model(corpus.passages());
        for (auto& b : blocks) {
            b = rank_passages_tfidf(b, model);
        }
    }
    fs::path dir = out_path(o, ".");
    save_blocks(blocks, dir / "blocks.jsonl");
    save_flat_blocks(flatten_all(blocks, *tok, o.common.budget_block), dir / "flat_blocks.jsonl");
    write_meta(dir / "blocks.jsonl", info);
    write_meta(dir / "flat_blocks.jsonl", info);
    std::cout << "blocks: " << blocks.size() << '\n';
}

void cmd_mine_pretrain(const Options& o, const RunInfo& info)
{
    require(o.tables, "--tables");
    require(o.passages, "--passages");
    require(o.links, "--links");
    Corpus corpus = load_corpus(o.tables, o.passages, o.links);
    auto blocks = mine_blocks(corpus, o.common.threads);
    fs::path path = out_path(o, "pretrain_blocks.jsonl");
    save_blocks(blocks, path);
    write_meta(path, info);
    std::cout << "mined blocks: " << blocks.size() << '\n';
}

void cmd_synth_questions(const Options& o, const RunInfo& info)
{
    require(o.blocks, "--blocks");
    BlockCorpus blocks(load_blocks(o.blocks));
    std::vector<PseudoPair> pairs;
    if (!o.generated.empty()) {
        ImportReport rep;
        pairs = import_generated(o.generated, blocks, &rep);
        std::cout << "imported: " << rep.accepted << " rejected: " << rep.rejected << " coverage: " << rep.coverage
                  << '\n';
    } else {
        size_t skipped = 0;
        pairs = titleq_all(blocks.blocks(), o.common.seed, &skipped);
        std::cout << "titleq pairs: " << pairs.size() << " skipped: " << skipped << '\n';
    }
    fs::path path = out_path(o, "pretrain_pairs.jsonl");
    save_pseudo_pairs(pairs, path);
    write_meta(path, info);
}

void cmd_make_instances(const Options& o, const RunInfo& info)
{
    require(o.blocks, "--blocks");
    BlockCorpus blocks(load_blocks(o.blocks));
    std::optional<Bm25Index> bm25;
    auto hn = parse_negative_strategy(o.hn);
    auto tok = make_tokenizer(o.common.tokenizer);
    if (hn == NegativeStrategy::Bm25) {
        auto flat = flatten_all(blocks.blocks(), *tok, o.common.budget_block);
        bm25 = Bm25Index::build(flat, *tok);
    }
    NegativeSampler sampler(blocks, bm25 ? &*bm25 : nullptr);
    std::vector<TrainInstance> instances;
    if (!o.pairs.empty()) {
        auto pairs = load_pseudo_pairs(o.pairs);
        instances = pretrain_instances(pairs, sampler, o.common.seed);
        std::cout << "instances: " << instances.size() << '\n';
    } else {
        require(o.questions, "--questions or --pairs");
        auto questions = read_questions(o.questions);
        InstanceReport rep;
        instances = make_instances(questions, sampler, hn, o.common.seed, &rep, o.common.threads);
        std::cout << "instances: " << rep.built << " skipped: " << rep.skipped_no_positive
                  << " fallbacks: " << rep.fallbacks << '\n';
    }
    fs::path path = out_path(o, "instances.jsonl");
    save_instances(instances, path);
    write_meta(path, info);
}

void cmd_train(const Options& o, const RunInfo& info)
{
    require(o.instances, "--instances");
    require(o.blocks, "--blocks");
    require(o.checkpoint, "--checkpoint");
    auto tok = make_tokenizer(o.common.tokenizer);
    BlockCorpus blocks(load_blocks(o.blocks));
    auto instances = load_instances(o.instances);

    Checkpoint ck;
    if (!o.init_checkpoint.empty()) {
        ck = load_checkpoint(o.init_checkpoint);
        if (ck.model.strategy != parse_pooling(o.strategy)) {
            throw Error(ErrorKind::ConfigConflict, "initial checkpoint uses strategy '" +
                                                       std::string(to_string(ck.model.strategy)) + "', not '" +
                                                       o.strategy + "'");
        }
    } else {
        std::vector<std::string> texts;
        for (const auto& f : flatten_all(blocks.blocks(), *tok, o.common.budget_block)) {
            texts.push_back(f.text);
        }
        for (const auto& i : instances) {
            texts.push_back(i.question);
            texts.push_back(flatten(i.hard_negative, *tok).text);
        }
        ck.vocab = Vocabulary::build(texts, *tok);
        Rng rng = Rng::derive(o.common.seed, "init");
        ck.model.block = EncoderParams::random(ck.vocab.size(), o.dim, rng, o.init_scale);
        if (o.separate_question_tower) {
            ck.model.question = EncoderParams::random(ck.vocab.size(), o.dim, rng, o.init_scale);
        }
        ck.model.strategy = parse_pooling(o.strategy);
    }
    auto examples =
        prepare_examples(instances, blocks, *tok, ck.vocab, o.common.budget_block, o.common.budget_question);

    TrainConfig config;
    config.batch_size = o.batch_size;
    config.epochs = o.epochs;
    config.learning_rate = o.learning_rate;
    config.warmup_fraction = o.warmup;
    config.seed = o.common.seed;
    config.convention = parse_negative_convention(o.convention);
    config.threads = o.common.threads;
    auto result = train(config, examples, ck.model);

    fs::path path = o.checkpoint;
    fs::path dir = path.parent_path();
    ck.model = result.final_model;
    save_checkpoint(path, ck);
    write_meta(path, info);
    // Lowest epoch-mean loss; equal to the final model when the loss kept falling.
    fs::path best = path.string() + ".best";
    save_checkpoint(best, Checkpoint{ck.vocab, result.best_model});
    write_meta(best, info);
    write_loss_curve(dir / "losscurve.csv", result.curve);
    write_meta(dir / "losscurve.csv", info);
    {
        auto out = open_output(dir / "config.json");
        json echo = to_json(config);
        echo["strategy"] = o.strategy;
        echo["dim"] = o.dim;
        echo["vocab_size"] = ck.vocab.size();
        echo["separate_question_tower"] = ck.model.question.has_value();
        echo["diverged"] = result.diverged;
        echo["best_epoch"] = result.best_epoch;
        out << echo.dump(2) << '\n';
    }
    std::cout << "examples: " << examples.size() << " steps: " << result.curve.size()
              << (result.diverged ? " (diverged)" : "") << '\n';
    if (!result.epoch_means.empty()) {
        std::cout << "final epoch loss: " << result.epoch_means.back() << '\n';
    }
}

void cmd_embed(const Options& o, const RunInfo& info)
{
    require(o.blocks, "--blocks");
    require(o.checkpoint, "--checkpoint");
    require(o.index, "--index");
    auto tok = make_tokenizer(o.common.tokenizer);
    auto flat = load_flat_blocks(o.blocks);
    auto ck = load_checkpoint(o.checkpoint);
    auto index = build_dense(flat, ck, *tok, o.common.threads);
    write_dense_index(index, o.index, ids_path_for(o));
    write_meta(o.index, info);
    std::cout << "embedded: " << index.size() << " dim: " << index.dim << '\n';
}

void cmd_index(const Options& o, const RunInfo& info)
{
    if (o.kind == "bm25") {
        require(o.blocks, "--blocks");
        auto tok = make_tokenizer(o.common.tokenizer);
        auto flat = load_flat_blocks(o.blocks);
        auto index = Bm25Index::build(flat, *tok);
        fs::path path = out_path(o, "bm25.json");
        index.save(path);
        write_meta(path, info);
        std::cout << "bm25 documents: " << index.size() << '\n';
    } else if (o.kind == "ivf") {
        require(o.index, "--index");
        auto dense = read_dense_index(o.index, ids_path_for(o));
        IvfConfig config;
        config.probes = o.probes;
        config.seed = o.common.seed;
        config.target_recall = o.target_recall;
        auto ivf = IvfIndex::build(dense, config);
        std::cout << "lists: " << ivf.list_count() << " self-test recall: " << ivf.measured_recall() << '\n';
    } else {
        throw Error(ErrorKind::InvalidArgument, "unknown index kind '" + o.kind + "'");
    }
}

void cmd_search(const Options& o, const RunInfo& info)
{
    auto tok = make_tokenizer(o.common.tokenizer);
    auto ks = parse_ks(o.k);
    if (ks.size() != 1) {
        throw Error(ErrorKind::InvalidArgument, "search takes a single --k");
    }
    const size_t k = ks.front();

    std::vector<std::pair<std::string, std::string>> queries;  // id, text
    if (!o.question.empty()) {
        queries.emplace_back("q", o.question);
    } else {
        require(o.questions, "--question or --questions");
        for (const auto& q : read_questions(o.questions)) {
            queries.emplace_back(q.question_id, q.text);
        }
    }

    RetrievalRun run;
    if (!o.bm25.empty()) {
        auto index = Bm25Index::load(o.bm25);
        run.retriever = "bm25";
        for (const auto& [id, text] : queries) {
            run.lists.push_back(RankedList{id, index.search(text, k)});
        }
    } else {
        require(o.index, "--index or --bm25");
        require(o.checkpoint, "--checkpoint");
        auto index = read_dense_index(o.index, ids_path_for(o));
        auto ck = load_checkpoint(o.checkpoint);
        if (ck.model.strategy != index.strategy) {
            throw Error(ErrorKind::ConfigConflict, "checkpoint strategy '" +
                                                       std::string(to_string(ck.model.strategy)) +
                                                       "' differs from index strategy '" +
                                                       std::string(to_string(index.strategy)) + "'");
        }
        run.retriever = "dense-" + std::string(to_string(index.strategy));
        for (const auto& [id, text] : queries) {
            auto input = question_input(text, *tok, ck.vocab, o.common.budget_question);
            auto q = to_float(embed_question(ck.model, input).values);
            run.lists.push_back(RankedList{id, search_dense(index, q, k)});
        }
    }

    if (o.run.empty()) {
        for (const auto& l : run.lists) {
            for (size_t r = 0; r < l.ranked.size(); ++r) {
                std::printf("%s\t%zu\t%s\t%.9g\n", l.question_id.c_str(), r + 1, l.ranked[r].id.c_str(),
                            l.ranked[r].score);
            }
        }
    } else {
        save_run(run, o.run);
        write_meta(o.run, info);
        std::cout << "queries: " << run.lists.size() << '\n';
    }
}

void cmd_eval(const Options& o, const RunInfo& info)
{
    require(o.run, "--run");
    require(o.questions, "--questions");
    require(o.blocks, "--blocks");
    auto tok = make_tokenizer(o.common.tokenizer);
    auto run = load_run(o.run);
    auto questions = read_questions(o.questions);
    auto flat = load_flat_blocks(o.blocks);
    EvalContext context(flat, *tok);
    auto ks = parse_ks(o.k);
    auto report = evaluate(run, questions, context, ks, o.budget_hit, o.common.threads);
    fs::path dir = out_path(o, ".");
    write_report(report, dir / "report.json");
    write_meta(dir / "report.json", info);
    std::vector<CurvePoint> curve;
    for (size_t i = 0; i < ks.size(); ++i) {
        curve.push_back(CurvePoint{ks[i], report.table_recall[i], report.block_recall[i]});
    }
    write_curve(curve, dir / "curve.csv");
    write_meta(dir / "curve.csv", info);
    for (size_t i = 0; i < ks.size(); ++i) {
        std::printf("R@%zu table %.4f block %.4f\n", ks[i], report.table_recall[i], report.block_recall[i]);
    }
    std::printf("hit@%zu %.4f (evaluated %zu, excluded %zu)\n", report.budget, report.hit_at_budget,
                report.evaluated, report.excluded_no_blocks);
}

void cmd_stats(const Options& o, const RunInfo&)
{
    require(o.tables, "--tables");
    require(o.passages, "--passages");
    require(o.links, "--links");
    Corpus corpus = load_corpus(o.tables, o.passages, o.links);
    std::vector<size_t> counts;
    if (!o.blocks.empty()) {
        for (const auto& f : load_flat_blocks(o.blocks)) {
            counts.push_back(f.token_count);
        }
    }
    std::cout << to_json(corpus_stats(corpus, counts)).dump(2) << '\n';
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Table-text block retrieval toolkit"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kVersion);
    app.option_defaults()->always_capture_default();

    Options o;
    using Handler = void (*)(const Options&, const RunInfo&);
    std::vector<std::pair<CLI::App*, Handler>> commands;
    auto sub = [&](const char* name, const char* help, Handler h) {
        CLI::App* cmd = app.add_subcommand(name, help);
        add_common(cmd, o.common);
        commands.emplace_back(cmd, h);
        return cmd;
    };

    auto* build = sub("build-blocks", "Build table-text blocks and their flattened form", cmd_build_blocks);
    build->add_option("--tables", o.tables, "tables.jsonl");
    build->add_option("--passages", o.passages, "passages.jsonl");
    build->add_option("--links", o.links, "links.jsonl");
    build->add_option("--out", o.out, "Output directory for blocks.jsonl and flat_blocks.jsonl");
    build->add_flag("--no-tfidf", o.no_tfidf, "Keep link order instead of ranking passages by TF-IDF");

    auto* mine = sub("mine-pretrain", "Mine pretraining blocks from linked rows", cmd_mine_pretrain);
    mine->add_option("--tables", o.tables, "tables.jsonl");
    mine->add_option("--passages", o.passages, "passages.jsonl");
    mine->add_option("--links", o.links, "links.jsonl");
    mine->add_option("--out", o.out, "Output pretrain_blocks.jsonl");

    auto* synth = sub("synth-questions", "Template questions or imported generated questions", cmd_synth_questions);
    synth->add_option("--blocks", o.blocks, "Mined blocks (blocks.jsonl format)");
    synth->add_option("--generated", o.generated, "questions_generated.jsonl to import instead of templating");
    synth->add_option("--out", o.out, "Output pretrain_pairs.jsonl");

    auto* inst = sub("make-instances", "Pair questions with positives and hard negatives", cmd_make_instances);
    inst->add_option("--blocks", o.blocks, "blocks.jsonl");
    inst->add_option("--questions", o.questions, "questions.jsonl");
    inst->add_option("--pairs", o.pairs, "pretrain_pairs.jsonl (random same-table negatives)");
    inst->add_option("--hn", o.hn, "Hard negative strategy")->check(CLI::IsMember({"mmhn", "bm25", "random"}));
    inst->add_option("--out", o.out, "Output instances.jsonl");

    auto* tr = sub("train", "Train the dual encoder", cmd_train);
    tr->add_option("--instances", o.instances, "instances.jsonl");
    tr->add_option("--blocks", o.blocks, "blocks.jsonl holding the positives");
    tr->add_option("--checkpoint", o.checkpoint, "Output checkpoint path");
    tr->add_option("--init-checkpoint", o.init_checkpoint, "Start from this checkpoint (e.g. after pretraining)");
    tr->add_option("--strategy", o.strategy, "Block pooling")
        ->check(CLI::IsMember({"first", "avg", "max", "selfatt", "cls3"}));
    tr->add_option("--dim", o.dim, "Hidden dimension d");
    tr->add_option("--init-scale", o.init_scale, "Uniform init range");
    tr->add_option("--epochs", o.epochs, "Epochs");
    tr->add_option("--batch-size", o.batch_size, "Batch size");
    tr->add_option("--lr", o.learning_rate, "Peak learning rate");
    tr->add_option("--warmup", o.warmup, "Warmup fraction of steps");
    tr->add_option("--convention", o.convention, "Hard negatives per question")
        ->check(CLI::IsMember({"all_in_batch", "own_hard_negative"}));
    tr->add_flag("--separate-question-tower", o.separate_question_tower, "Give questions their own encoder");

    auto* emb = sub("embed", "Encode flattened blocks into a dense index", cmd_embed);
    emb->add_option("--blocks", o.blocks, "flat_blocks.jsonl");
    emb->add_option("--checkpoint", o.checkpoint, "Checkpoint");
    emb->add_option("--index", o.index, "Output index.bin");
    emb->add_option("--ids", o.ids, "Output ids file (default: ids.txt next to the index)");

    auto* idx = sub("index", "Build a BM25 index or check an approximate dense index", cmd_index);
    idx->add_option("--kind", o.kind, "bm25 or ivf")->check(CLI::IsMember({"bm25", "ivf"}));
    idx->add_option("--blocks", o.blocks, "flat_blocks.jsonl (bm25)");
    idx->add_option("--index", o.index, "index.bin (ivf)");
    idx->add_option("--ids", o.ids, "ids file (default: ids.txt next to the index)");
    idx->add_option("--probes", o.probes, "Lists probed per query (ivf)");
    idx->add_option("--target-recall", o.target_recall, "Minimum self-test recall (ivf)");
    idx->add_option("--out", o.out, "Output bm25.json");

    auto* se = sub("search", "Retrieve top-k blocks", cmd_search);
    se->add_option("--index", o.index, "index.bin");
    se->add_option("--ids", o.ids, "ids file (default: ids.txt next to the index)");
    se->add_option("--checkpoint", o.checkpoint, "Checkpoint matching the index");
    se->add_option("--bm25", o.bm25, "bm25.json, instead of a dense index");
    se->add_option("--question", o.question, "A single question");
    se->add_option("--questions", o.questions, "questions.jsonl");
    se->add_option("--k", o.k, "Results per question");
    se->add_option("--run", o.run, "Write run.jsonl instead of printing");

    auto* ev = sub("eval", "Table recall, block recall and Hit@budget", cmd_eval);
    ev->add_option("--run", o.run, "run.jsonl");
    ev->add_option("--questions", o.questions, "questions.jsonl with answers");
    ev->add_option("--blocks", o.blocks, "flat_blocks.jsonl");
    ev->add_option("--k", o.k, "Comma-separated cutoffs");
    ev->add_option("--budget-hit", o.budget_hit, "Token budget of the hit metric");
    ev->add_option("--out", o.out, "Output directory for report.json and curve.csv");

    auto* st = sub("stats", "Corpus statistics", cmd_stats);
    st->add_option("--tables", o.tables, "tables.jsonl");
    st->add_option("--passages", o.passages, "passages.jsonl");
    st->add_option("--links", o.links, "links.jsonl");
    st->add_option("--blocks", o.blocks, "flat_blocks.jsonl for token counts");

    CLI11_PARSE(app, argc, argv);

    for (auto& [cmd, handler] : commands) {
        if (!cmd->parsed()) {
            continue;
        }
        try {
            apply_config(cmd, o.common.config);
            RunInfo info;
            info.command = cmd->get_name();
            info.seed = o.common.seed;
            info.config = resolved_config(cmd);
            info.config_hash = to_hex(fnv1a64(dump_canonical(info.config)));
            handler(o, info);
        } catch (const Error& e) {
            std::cerr << "error: " << e.what() << '\n';
            return 2;
        } catch (const CLI::ParseError& e) {
            std::cerr << "error: " << e.what() << '\n';
            return 2;
        } catch (const std::exception& e) {
            std::cerr << "error: " << e.what() << '\n';
            return 3;
        }
    }
    return 0;
}
