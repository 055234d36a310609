#include "commands.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <ostream>

#include "CLI11.hpp"
#include "files.hpp"
#include "manifest.hpp"
#include "semtx/checkpoint.hpp"
#include "semtx/error.hpp"
#include "semtx/eval.hpp"
#include "semtx/masks.hpp"
#include "semtx/model.hpp"
#include "semtx/semgraph.hpp"
#include "semtx/textpipe.hpp"

namespace semtx::cli {

namespace {

namespace fs = std::filesystem;

// --- option blocks ----------------------------------------------------------------

struct StructureOptions {
  std::string ucca, covers, conllu;

  void add_to(CLI::App* sub) {
    sub->add_option("--ucca", ucca, "UCCA graph file, one graph per sentence");
    sub->add_option("--covers", covers, "scene-cover file, one cover per sentence");
    sub->add_option("--conllu", conllu, "CoNLL-U file, one tree per sentence");
  }
};

struct MasksOptions {
  std::string family, alignment, bpe, tokens, out_dir;
  double c = 0.0;
  StructureOptions structure;
};

struct HeadFlags {
  std::vector<std::string> sasa, sacra, pascal, udiscal;
  CLI::Option *sasa_opt = nullptr, *sacra_opt = nullptr, *pascal_opt = nullptr, *udiscal_opt = nullptr;
  std::string family = "binary";
  double c = 0.0;
};

struct TrainOptions {
  std::string src, trg, bpe, out_dir;
  StructureOptions structure;
  HeadFlags heads;
  ModelConfig model;
  TrainConfig train;
  int layers = 4;
  int log_every = 100;
  bool skip_accuracy = false;
};

struct DecodeOptions {
  DecodeConfig decode;
  bool greedy = false;

  void add_to(CLI::App* sub) {
    sub->add_option("--beam", decode.beam, "beam size")->capture_default_str();
    sub->add_option("--alpha", decode.alpha, "length-penalty exponent")->capture_default_str();
    sub->add_option("--max-output", decode.max_len, "maximum output length in subwords")->capture_default_str();
    sub->add_flag("--greedy", greedy, "greedy search instead of beam search");
  }
};

struct TranslateOptions {
  std::string model_dir, input, output;
  StructureOptions structure;
  DecodeOptions decode;
};

struct EvaluateOptions {
  std::string hyp, ref, output, sentence_scores;
  std::string metric = "bleu,chrf";
  double beta = 3.0;
  int word_n = 1, char_n = 6;
};

struct SplitOptions {
  std::string input, ucca, covers, model_dir, output;
  DecodeOptions decode;
};

struct CompareOptions {
  std::string a, b, output;
};

struct FilterOptions {
  std::string src, trg, out_src, out_trg;
  std::size_t max_len = 100;
  double max_ratio = 1.5;
};

struct BpeOptions {
  std::vector<std::string> inputs;
  std::string output;
  int merges = 10000;
};

struct ReplayOptions {
  std::string manifest;
  std::vector<std::string> overrides;
};

// Where the running command keeps its manifest; written again on failure so a
// replay can reproduce the exit code too.
struct RunState {
  Manifest manifest;
  std::optional<fs::path> manifest_path;

  void save() const {
    if (manifest_path) write_file(*manifest_path, manifest.str());
  }
};

// --- helpers -------------------------------------------------------------------------

std::vector<int> parse_int_list(std::string_view text, const std::string& what) {
  std::vector<int> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto comma = text.find(',', start);
    const auto part = text.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start);
    int v = 0;
    const auto res = std::from_chars(part.data(), part.data() + part.size(), v);
    if (part.empty() || res.ec != std::errc() || res.ptr != part.data() + part.size())
      throw ConfigError("bad integer list for " + what + ": \"" + std::string(text) + "\"");
    out.push_back(v);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

double parse_double(std::string_view text, const std::string& what) {
  std::string s(text);
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size()) throw ConfigError("bad number for " + what + ": \"" + s + "\"");
  return v;
}

std::string join_ints(const std::vector<int>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) out += (i ? "," : "") + std::to_string(xs[i]);
  return out;
}

std::vector<int> one_to(int n) {
  std::vector<int> out;
  for (int i = 1; i <= n; ++i) out.push_back(i);
  return out;
}

// "layer=4 heads=1 family=scaled C=0.5" on top of a default placement.
// heads=N takes the first N heads; head=a,b names them.
HeadSpec parse_head_flag(const std::vector<std::string>& tokens, HeadSpec spec, bool scene_site,
                         const std::string& flag) {
  for (const auto& token : tokens) {
    if (token.empty()) continue;
    const auto eq = token.find('=');
    if (eq == std::string::npos) throw ConfigError("--" + flag + ": expected key=value, got \"" + token + "\"");
    const std::string key = token.substr(0, eq), value = token.substr(eq + 1);
    if (key == "layer" || key == "layers") {
      spec.layers = parse_int_list(value, "--" + flag + " " + key);
    } else if (key == "heads") {
      const auto n = parse_int_list(value, "--" + flag + " heads");
      if (n.size() != 1 || n[0] < 1) throw ConfigError("--" + flag + " heads= takes a positive count");
      spec.heads = one_to(n[0]);
    } else if (key == "head") {
      spec.heads = parse_int_list(value, "--" + flag + " head");
    } else if (key == "family" && scene_site) {
      spec.mask.family = parse_mask_family(value);
    } else if (key == "C" && scene_site) {
      spec.mask.c = parse_double(value, "--" + flag + " C");
    } else {
      throw ConfigError("--" + flag + ": unknown key \"" + key + "\"");
    }
  }
  return spec;
}

std::vector<HeadSpec> resolve_head_specs(const HeadFlags& f) {
  const MaskSpec scene{parse_mask_family(f.family), f.c};
  if (!is_scene_family(scene.family)) throw ConfigError("--family must be a scene mask family");
  std::vector<HeadSpec> specs;
  if (f.sasa_opt->count()) specs.push_back(parse_head_flag(f.sasa, HeadSpec::sasa(scene), true, "sasa"));
  if (f.sacra_opt->count()) specs.push_back(parse_head_flag(f.sacra, HeadSpec::sacra(scene), true, "sacra"));
  if (f.pascal_opt->count()) specs.push_back(parse_head_flag(f.pascal, HeadSpec::pascal(), false, "pascal"));
  if (f.udiscal_opt->count()) specs.push_back(parse_head_flag(f.udiscal, HeadSpec::udiscal(), false, "udiscal"));
  for (const auto& s : specs) s.mask.validate();
  return specs;
}

std::string head_spec_line(const HeadSpec& s) {
  return to_string(s.site) + " layers=" + join_ints(s.layers) + " heads=" + join_ints(s.heads) +
         " family=" + to_string(s.mask.family) + " C=" + format_double(s.mask.c);
}

HeadSpec parse_head_spec_line(std::string_view line) {
  const auto fields = tokenize(line);
  if (fields.size() != 5) throw ParseError("bad head line \"" + std::string(line) + "\"", 0);
  HeadSpec s;
  if (fields[0] == "encoder") s.site = Site::EncoderSelf;
  else if (fields[0] == "cross") s.site = Site::Cross;
  else throw ParseError("bad head site \"" + fields[0] + "\"", 0);
  auto value = [&](int i, std::string_view key) {
    if (fields[i].rfind(std::string(key) + "=", 0) != 0) throw ParseError("expected " + std::string(key) + "=", 0);
    return fields[i].substr(key.size() + 1);
  };
  s.layers = parse_int_list(value(1, "layers"), "layers");
  s.heads = parse_int_list(value(2, "heads"), "heads");
  s.mask.family = parse_mask_family(value(3, "family"));
  s.mask.c = parse_double(value(4, "C"), "C");
  return s;
}

// Structures for every sentence, in file order; absent sources stay empty.
struct Structures {
  std::vector<Tokens> words;  // surfaces from the UCCA or CoNLL-U file
  std::vector<SceneCover> covers;
  std::vector<UdGraph> trees;

  SentenceStructure at(std::size_t i) const {
    return {covers.empty() ? nullptr : &covers[i], trees.empty() ? nullptr : &trees[i]};
  }
};

void record_structure(Manifest& man, const StructureOptions& o) {
  if (!o.ucca.empty()) man.set("input.ucca", o.ucca);
  if (!o.covers.empty()) man.set("input.covers", o.covers);
  if (!o.conllu.empty()) man.set("input.conllu", o.conllu);
}

Structures load_structures(const StructureOptions& o) {
  if (!o.ucca.empty() && !o.covers.empty()) throw ConfigError("--ucca and --covers are alternatives");
  Structures s;
  if (!o.ucca.empty()) {
    const auto graphs = parse_file(o.ucca, [](const std::string& text) {
      auto graphs = parse_ucca_document(text);
      std::vector<SceneCover> covers;
      for (std::size_t i = 0; i < graphs.size(); ++i) {
        try {
          covers.push_back(extract_scenes(graphs[i]));
        } catch (const StructuralError& e) {
          throw StructuralError("graph " + std::to_string(i + 1) + ": " + e.what());
        }
      }
      return std::pair{graphs, covers};
    });
    s.covers = graphs.second;
    for (const auto& g : graphs.first) s.words.push_back(g.tokens());
  }
  if (!o.covers.empty()) s.covers = parse_file(o.covers, [](const std::string& t) { return parse_scene_cover_document(t); });
  if (!o.conllu.empty()) {
    s.trees = parse_file(o.conllu, [](const std::string& t) { return parse_conllu(t); });
    if (s.words.empty())
      for (const auto& t : s.trees) s.words.push_back(t.forms);
  }
  return s;
}

void check_sentence_count(const Structures& s, std::size_t n) {
  auto check = [n](std::size_t have, const char* what) {
    if (have && have != n)
      throw DimensionError(std::string(what) + " describes " + std::to_string(have) + " sentences, the corpus has " +
                           std::to_string(n));
  };
  check(s.covers.size(), "the scene structure");
  check(s.trees.size(), "the dependency file");
}

std::string model_config_text(const ModelConfig& c, const std::vector<HeadSpec>& specs, bool bpe) {
  std::string out;
  out += "d_model=" + std::to_string(c.d_model) + "\n";
  out += "enc_layers=" + std::to_string(c.enc_layers) + "\n";
  out += "dec_layers=" + std::to_string(c.dec_layers) + "\n";
  out += "heads=" + std::to_string(c.heads) + "\n";
  out += "d_ff=" + std::to_string(c.d_ff) + "\n";
  out += "src_vocab=" + std::to_string(c.src_vocab) + "\n";
  out += "trg_vocab=" + std::to_string(c.trg_vocab) + "\n";
  out += "max_len=" + std::to_string(c.max_len) + "\n";
  out += std::string("bpe=") + (bpe ? "bpe.codes" : "") + "\n";
  for (const auto& s : specs) out += "head=" + head_spec_line(s) + "\n";
  return out;
}

struct LoadedModel {
  ModelConfig config;
  std::vector<HeadSpec> specs;
  std::optional<BpeModel> bpe;
  Vocabulary src_vocab, trg_vocab;
  std::unique_ptr<Transformer> model;
};

LoadedModel load_model(const fs::path& dir) {
  LoadedModel m;
  const auto cfg = parse_file(dir / "model.cfg", [](const std::string& t) { return Manifest::parse(t); });
  auto get_int = [&](const char* key) {
    const auto v = cfg.get(key);
    if (!v) throw ParseError((dir / "model.cfg").string() + ": missing " + key, 0);
    return parse_int_list(*v, key).at(0);
  };
  m.config.d_model = get_int("d_model");
  m.config.enc_layers = get_int("enc_layers");
  m.config.dec_layers = get_int("dec_layers");
  m.config.heads = get_int("heads");
  m.config.d_ff = get_int("d_ff");
  m.config.src_vocab = get_int("src_vocab");
  m.config.trg_vocab = get_int("trg_vocab");
  m.config.max_len = get_int("max_len");
  for (const auto& [k, v] : cfg.entries())
    if (k == "head") m.specs.push_back(parse_head_spec_line(v));
  if (const auto bpe = cfg.get("bpe"); bpe && !bpe->empty())
    m.bpe = parse_file(dir / *bpe, [](const std::string& t) { return BpeModel::parse(t); });
  m.src_vocab = parse_file(dir / "src.vocab", [](const std::string& t) { return Vocabulary::parse(t); });
  m.trg_vocab = parse_file(dir / "trg.vocab", [](const std::string& t) { return Vocabulary::parse(t); });
  m.model = std::make_unique<Transformer>(m.config, m.specs, 0);
  std::vector<NamedTensor> tensors;
  try {
    tensors = load_checkpoint((dir / "model.ckpt").string());
  } catch (const ParseError& e) {
    throw ParseError((dir / "model.ckpt").string() + ": " + e.what(), 0);
  }
  m.model->load(tensors);
  return m;
}

// Subwords of a sentence and their word alignment.
std::pair<Tokens, Alignment> segment(const Tokens& words, const std::optional<BpeModel>& bpe) {
  if (!bpe) return {words, Alignment::identity(static_cast<int>(words.size()))};
  Tokens pieces = bpe->apply_sentence(words);
  Alignment align = word_subword_alignment(words, pieces);
  return {std::move(pieces), std::move(align)};
}

std::vector<Mask> masks_for_sentence(const std::vector<HeadSpec>& specs, const Structures& s, std::size_t i,
                                     const Tokens& words, const Alignment& align) {
  if (specs.empty()) return {};
  const auto st = s.at(i);
  auto check = [&](int length, const char* what) {
    if (length != static_cast<int>(words.size()))
      throw DimensionError("sentence " + std::to_string(i + 1) + ": " + what + " has " + std::to_string(length) +
                           " tokens, the text has " + std::to_string(words.size()));
  };
  if (st.cover) check(st.cover->length, "scene structure");
  if (st.tree) check(st.tree->length(), "dependency tree");
  try {
    return build_head_masks(specs, st, align);
  } catch (const ConfigError& e) {
    throw ConfigError("sentence " + std::to_string(i + 1) + ": " + e.what());
  }
}

std::vector<int> with_eos(std::vector<int> ids) {
  ids.push_back(Vocabulary::kEos);
  return ids;
}

DecodeResult decode_one(const Transformer& model, const std::vector<int>& src, std::vector<Mask> masks,
                        const DecodeOptions& o) {
  TransformerScorer scorer(model, src, std::move(masks), Vocabulary::kBos, Vocabulary::kEos);
  DecodeConfig cfg = o.decode;
  cfg.max_len = std::min(cfg.max_len, model.config().max_len);
  return o.greedy ? greedy_search(scorer, cfg.max_len) : beam_search(scorer, cfg);
}

std::string output_line(const LoadedModel& m, const DecodeResult& r) {
  Tokens pieces = m.trg_vocab.decode(r.tokens);
  return detokenize(m.bpe ? join_subwords(pieces) : pieces);
}

void record_decode(Manifest& man, const DecodeOptions& o) {
  man.set("config.search", o.greedy ? "greedy" : "beam");
  man.set("config.beam", std::to_string(o.decode.beam));
  man.set("config.alpha", format_double(o.decode.alpha));
  man.set("config.max_output", std::to_string(o.decode.max_len));
}

// --- commands ---------------------------------------------------------------------

int cmd_masks(const MasksOptions& o, RunState& run, std::ostream& out) {
  const fs::path dir(o.out_dir);
  run.manifest_path = dir / "manifest.txt";
  const MaskSpec spec{parse_mask_family(o.family), o.c};
  spec.validate();
  auto& man = run.manifest;
  man.set("config.family", to_string(spec.family));
  man.set("config.C", format_double(spec.c));
  record_structure(man, o.structure);
  if (!o.alignment.empty()) man.set("input.alignment", o.alignment);
  if (!o.bpe.empty()) man.set("input.bpe", o.bpe);
  if (!o.tokens.empty()) man.set("input.tokens", o.tokens);
  man.set("output.dir", o.out_dir);
  run.save();

  const auto s = load_structures(o.structure);
  const bool scene = is_scene_family(spec.family);
  if (scene && s.covers.empty()) throw ConfigError(to_string(spec.family) + " masks need --ucca or --covers");
  if (!scene && s.trees.empty()) throw ConfigError(to_string(spec.family) + " masks need --conllu");
  const std::size_t n = scene ? s.covers.size() : s.trees.size();
  check_sentence_count(s, n);

  std::vector<Alignment> aligns;
  if (!o.alignment.empty()) {
    if (!o.bpe.empty()) throw ConfigError("--alignment and --bpe are alternatives");
    const auto lines = read_sentences(o.alignment);
    for (std::size_t i = 0; i < lines.size(); ++i) {
      Alignment a;
      for (const auto& field : lines[i]) {
        const auto r = parse_int_list(std::string_view(field).substr(0, field.find('-')), "alignment");
        const auto dash = field.find('-');
        const int last = dash == std::string::npos ? r[0] : parse_int_list(field.substr(dash + 1), "alignment")[0];
        a.ranges.push_back({r[0], last});
      }
      aligns.push_back(std::move(a));
    }
    if (aligns.size() != n)
      throw DimensionError(o.alignment + ": " + std::to_string(aligns.size()) + " alignments for " +
                           std::to_string(n) + " sentences");
  } else if (!o.bpe.empty()) {
    const auto bpe = parse_file(o.bpe, [](const std::string& t) { return BpeModel::parse(t); });
    const auto words = o.tokens.empty() ? s.words : read_sentences(o.tokens);
    if (words.size() != n) throw ConfigError("--bpe needs sentence text: pass --tokens with --covers");
    for (const auto& w : words) aligns.push_back(segment(w, bpe).second);
  }

  for (std::size_t i = 0; i < n; ++i) {
    const int words = scene ? s.covers[i].length : s.trees[i].length();
    const Alignment align = aligns.empty() ? Alignment::identity(words) : aligns[i];
    Mask m;
    try {
      if (scene) m = scene_mask(s.covers[i], spec, align);
      else if (spec.family == MaskFamily::Pascal) m = pascal_mask(s.trees[i], align);
      else m = udiscal_mask(s.trees[i], align);
    } catch (const Error& e) {
      throw AlignmentError("sentence " + std::to_string(i + 1) + ": " + e.what());
    }
    char name[48];
    std::snprintf(name, sizeof name, "sentence-%04zu.mask", i + 1);
    write_file(dir / name, serialize_mask(m, spec.family));
  }
  man.set("result.sentences", std::to_string(n));
  out << "wrote " << n << " " << to_string(spec.family) << " masks to " << dir.string() << "\n";
  return kSuccess;
}

int cmd_train(TrainOptions o, RunState& run, std::ostream& out, std::ostream& err) {
  const fs::path dir(o.out_dir);
  run.manifest_path = dir / "manifest.txt";
  auto& man = run.manifest;
  o.model.enc_layers = o.model.dec_layers = o.layers;
  const auto specs = resolve_head_specs(o.heads);
  o.train.validate();

  man.set("seed", std::to_string(o.train.seed));
  man.set("config.d_model", std::to_string(o.model.d_model));
  man.set("config.layers", std::to_string(o.layers));
  man.set("config.heads", std::to_string(o.model.heads));
  man.set("config.d_ff", std::to_string(o.model.d_ff));
  man.set("config.max_len", std::to_string(o.model.max_len));
  man.set("config.warmup", std::to_string(o.train.warmup));
  man.set("config.label_smoothing", format_double(o.train.label_smoothing));
  man.set("config.beta1", format_double(o.train.beta1));
  man.set("config.beta2", format_double(o.train.beta2));
  man.set("config.adam_eps", format_double(o.train.adam_eps));
  man.set("config.lr_scale", format_double(o.train.lr_scale));
  man.set("config.batch_size", std::to_string(o.train.batch_size));
  man.set("config.steps", std::to_string(o.train.steps));
  for (std::size_t i = 0; i < specs.size(); ++i) man.set("config.head." + std::to_string(i + 1), head_spec_line(specs[i]));
  man.set("input.src", o.src);
  man.set("input.trg", o.trg);
  record_structure(man, o.structure);
  if (!o.bpe.empty()) man.set("input.bpe", o.bpe);
  man.set("output.dir", o.out_dir);
  run.save();

  const auto src_words = read_sentences(o.src);
  const auto trg_words = read_sentences(o.trg);
  if (src_words.size() != trg_words.size())
    throw DimensionError(o.src + " has " + std::to_string(src_words.size()) + " lines, " + o.trg + " has " +
                         std::to_string(trg_words.size()));
  if (src_words.empty()) throw InputError(o.src + " is empty");
  const auto structures = load_structures(o.structure);
  check_sentence_count(structures, src_words.size());

  std::optional<BpeModel> bpe;
  if (!o.bpe.empty()) bpe = parse_file(o.bpe, [](const std::string& t) { return BpeModel::parse(t); });

  std::vector<Tokens> src_pieces, trg_pieces;
  std::vector<std::vector<Mask>> masks;
  for (std::size_t i = 0; i < src_words.size(); ++i) {
    auto [pieces, align] = segment(src_words[i], bpe);
    masks.push_back(masks_for_sentence(specs, structures, i, src_words[i], align));
    src_pieces.push_back(std::move(pieces));
    trg_pieces.push_back(segment(trg_words[i], bpe).first);
    if (src_pieces.back().empty() || trg_pieces.back().empty())
      throw InputError("line " + std::to_string(i + 1) + " is empty on one side");
    if (static_cast<int>(std::max(src_pieces.back().size(), trg_pieces.back().size() + 1)) > o.model.max_len)
      throw ConfigError("line " + std::to_string(i + 1) + " is longer than --max-len");
  }

  const auto src_vocab = Vocabulary::build(src_pieces);
  const auto trg_vocab = Vocabulary::build(trg_pieces);
  o.model.src_vocab = src_vocab.size();
  o.model.trg_vocab = trg_vocab.size();
  Transformer model(o.model, specs, o.train.seed);

  std::vector<TrainingExample> data;
  for (std::size_t i = 0; i < src_pieces.size(); ++i)
    data.push_back({src_vocab.encode(src_pieces[i]), trg_vocab.encode(trg_pieces[i]), std::move(masks[i])});

  std::string losses = "step\tloss\n";
  const auto result = train(model, data, o.train, Vocabulary::kBos, Vocabulary::kEos, [&](int step, double loss) {
    losses += std::to_string(step) + '\t' + format_double(loss) + '\n';
    if (o.log_every > 0 && (step == 1 || step % o.log_every == 0))
      err << "step " << step << " loss " << loss << "\n";
  });

  save_checkpoint((dir / "model.ckpt").string(), model.parameters());
  write_file(dir / "src.vocab", src_vocab.serialize());
  write_file(dir / "trg.vocab", trg_vocab.serialize());
  if (bpe) write_file(dir / "bpe.codes", bpe->serialize());
  write_file(dir / "model.cfg", model_config_text(o.model, specs, bpe.has_value()));
  write_file(dir / "losses.tsv", losses);
  man.set("output.checkpoint", (dir / "model.ckpt").string());
  man.set("result.parameters", std::to_string(model.parameter_count()));
  if (!result.losses.empty()) {
    man.set("result.initial_loss", format_double(result.losses.front()));
    man.set("result.final_loss", format_double(result.losses.back()));
  }

  if (!o.skip_accuracy) {
    long correct = 0, total = 0;
    for (const auto& ex : data) {
      TransformerScorer scorer(model, ex.src, ex.masks, Vocabulary::kBos, Vocabulary::kEos);
      const auto r = greedy_search(scorer, std::min<int>(o.model.max_len, static_cast<int>(ex.trg.size()) + 5));
      const auto gold = with_eos(ex.trg);
      for (std::size_t k = 0; k < gold.size(); ++k) {
        ++total;
        correct += k < r.tokens.size() && r.tokens[k] == gold[k];
      }
    }
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", static_cast<double>(correct) / static_cast<double>(total));
    man.set("result.accuracy", buf);
    out << "greedy token accuracy on the training set: " << buf << "\n";
  }
  out << "trained " << o.train.steps << " steps; model in " << dir.string() << "\n";
  return kSuccess;
}

int cmd_translate(const TranslateOptions& o, RunState& run, std::ostream& out) {
  run.manifest_path = fs::path(o.output + ".manifest");
  record_decode(run.manifest, o.decode);
  run.manifest.set("input.model", o.model_dir);
  run.manifest.set("input.text", o.input);
  record_structure(run.manifest, o.structure);
  run.manifest.set("output.text", o.output);
  run.save();

  const auto m = load_model(o.model_dir);
  const auto sentences = read_sentences(o.input);
  const auto structures = load_structures(o.structure);
  check_sentence_count(structures, sentences.size());
  std::string text;
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    auto [pieces, align] = segment(sentences[i], m.bpe);
    if (pieces.empty()) {
      text += '\n';
      continue;
    }
    auto masks = masks_for_sentence(m.specs, structures, i, sentences[i], align);
    text += output_line(m, decode_one(*m.model, m.src_vocab.encode(pieces), std::move(masks), o.decode)) + '\n';
  }
  write_file(o.output, text);
  run.manifest.set("result.sentences", std::to_string(sentences.size()));
  out << "translated " << sentences.size() << " sentences into " << o.output << "\n";
  return kSuccess;
}

std::vector<std::string> read_lines(const fs::path& path) {
  std::vector<std::string> out;
  for (const auto& s : read_sentences(path)) out.push_back(detokenize(s));
  return out;
}

int cmd_evaluate(const EvaluateOptions& o, RunState& run, std::ostream& out) {
  run.manifest_path = fs::path(o.output + ".manifest");
  run.manifest.set("config.metric", o.metric);
  run.manifest.set("config.beta", format_double(o.beta));
  run.manifest.set("config.word_n", std::to_string(o.word_n));
  run.manifest.set("config.char_n", std::to_string(o.char_n));
  run.manifest.set("input.hyp", o.hyp);
  run.manifest.set("input.ref", o.ref);
  run.manifest.set("output.report", o.output);
  if (!o.sentence_scores.empty()) run.manifest.set("output.sentence_scores", o.sentence_scores);
  run.save();

  std::string metric_list = o.metric;
  std::replace(metric_list.begin(), metric_list.end(), ',', ' ');
  const auto metrics = tokenize(metric_list);
  if (metrics.empty()) throw ConfigError("--metric is empty");
  for (const auto& m : metrics)
    if (m != "bleu" && m != "chrf") throw ConfigError("unknown metric \"" + m + "\" (bleu, chrf)");
  if (!o.sentence_scores.empty() && metrics.size() != 1)
    throw ConfigError("--sentence-scores needs exactly one --metric");

  const auto hyp = read_lines(o.hyp), ref = read_lines(o.ref);
  if (hyp.size() != ref.size())
    throw DimensionError(o.hyp + " has " + std::to_string(hyp.size()) + " lines, " + o.ref + " has " +
                         std::to_string(ref.size()));
  std::string report;
  for (const auto& m : metrics) {
    const auto r = m == "bleu" ? bleu(hyp, ref) : chrf(hyp, ref, o.beta, o.word_n, o.char_n);
    report += format_report(r) + "\n";
    if (!o.sentence_scores.empty()) write_file(o.sentence_scores, format_sentence_scores(r));
  }
  write_file(o.output, report);
  out << report;
  return kSuccess;
}

int cmd_split(const SplitOptions& o, RunState& run, std::ostream& out) {
  run.manifest_path = fs::path(o.output + ".manifest");
  if (!o.model_dir.empty()) {
    record_decode(run.manifest, o.decode);
    run.manifest.set("input.model", o.model_dir);
  }
  if (!o.input.empty()) run.manifest.set("input.text", o.input);
  if (!o.ucca.empty()) run.manifest.set("input.ucca", o.ucca);
  if (!o.covers.empty()) run.manifest.set("input.covers", o.covers);
  run.manifest.set("output.text", o.output);
  run.save();

  StructureOptions so;
  so.ucca = o.ucca;
  so.covers = o.covers;
  const auto structures = load_structures(so);
  if (structures.covers.empty()) throw ConfigError("split needs --ucca or --covers");
  const auto sentences = o.input.empty() ? structures.words : read_sentences(o.input);
  if (sentences.empty() && !structures.covers.empty())
    throw ConfigError("split needs sentence text: pass --input with --covers");
  check_sentence_count(structures, sentences.size());

  std::optional<LoadedModel> m;
  if (!o.model_dir.empty()) {
    m = load_model(o.model_dir);
    for (const auto& s : m->specs)
      if (!is_scene_family(s.mask.family))
        throw ConfigError("split pieces carry no dependency trees; the model uses " + s.describe());
  }

  std::string text;
  std::size_t pieces_total = 0;
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    const auto parts = sem_split(sentences[i], structures.covers[i]);
    pieces_total += parts.size();
    std::vector<std::string> rendered;
    for (const auto& part : parts) {
      if (!m) {
        rendered.push_back(detokenize(part));
        continue;
      }
      // A piece is a single scene, so every scene mask over it is all ones.
      const int n = static_cast<int>(part.size());
      Scene whole;
      for (int t = 0; t < n; ++t) whole.tokens.push_back(t);
      whole.main_relation = {0};
      const auto cover = make_cover(n, {whole});
      Structures piece;
      piece.covers = {cover};
      auto [subwords, align] = segment(part, m->bpe);
      auto masks = masks_for_sentence(m->specs, piece, 0, part, align);
      rendered.push_back(
          output_line(*m, decode_one(*m->model, m->src_vocab.encode(subwords), std::move(masks), o.decode)));
    }
    std::string line;
    for (std::size_t k = 0; k < rendered.size(); ++k) line += (k ? " . " : "") + rendered[k];
    text += line + '\n';
  }
  write_file(o.output, text);
  run.manifest.set("result.sentences", std::to_string(sentences.size()));
  run.manifest.set("result.pieces", std::to_string(pieces_total));
  out << "split " << sentences.size() << " sentences into " << pieces_total << " pieces\n";
  return kSuccess;
}

std::vector<double> read_scores(const std::string& path) {
  std::vector<double> out;
  for (const auto& fields : read_sentences(path)) {
    if (fields.empty()) continue;
    out.push_back(parse_double(fields.back(), path));
  }
  return out;
}

int cmd_compare(const CompareOptions& o, RunState& run, std::ostream& out) {
  run.manifest_path = fs::path(o.output + ".manifest");
  run.manifest.set("input.a", o.a);
  run.manifest.set("input.b", o.b);
  run.manifest.set("output.report", o.output);
  run.save();
  const auto a = read_scores(o.a), b = read_scores(o.b);
  if (a.size() != b.size())
    throw DimensionError(o.a + " has " + std::to_string(a.size()) + " scores, " + o.b + " has " +
                         std::to_string(b.size()));
  int n = 0, k = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    n += a[i] != b[i];
    k += b[i] > a[i];
  }
  const double p = sign_test(a, b);
  char buf[128];
  std::snprintf(buf, sizeof buf, "sign_test p=%.6f n=%d b_better=%d\n", p, n, k);
  write_file(o.output, buf);
  out << buf;
  return kSuccess;
}

int cmd_filter(const FilterOptions& o, RunState& run, std::ostream& out) {
  run.manifest_path = fs::path(o.out_src + ".manifest");
  run.manifest.set("config.max_len", std::to_string(o.max_len));
  run.manifest.set("config.max_ratio", format_double(o.max_ratio));
  run.manifest.set("input.src", o.src);
  run.manifest.set("input.trg", o.trg);
  run.manifest.set("output.src", o.out_src);
  run.manifest.set("output.trg", o.out_trg);
  run.save();
  const auto pairs = read_parallel(read_file(o.src), read_file(o.trg));
  FilterConfig cfg;
  cfg.max_len = o.max_len;
  cfg.max_ratio = o.max_ratio;
  const auto kept = filter_corpus(pairs, cfg);
  std::string src, trg;
  for (const auto& p : kept) {
    src += detokenize(p.src) + '\n';
    trg += detokenize(p.trg) + '\n';
  }
  write_file(o.out_src, src);
  write_file(o.out_trg, trg);
  run.manifest.set("result.kept", std::to_string(kept.size()));
  run.manifest.set("result.dropped", std::to_string(pairs.size() - kept.size()));
  out << "kept " << kept.size() << " of " << pairs.size() << " pairs\n";
  return kSuccess;
}

int cmd_bpe(const BpeOptions& o, RunState& run, std::ostream& out) {
  run.manifest_path = fs::path(o.output + ".manifest");
  run.manifest.set("config.merges", std::to_string(o.merges));
  for (std::size_t i = 0; i < o.inputs.size(); ++i) run.manifest.set("input." + std::to_string(i + 1), o.inputs[i]);
  run.manifest.set("output.codes", o.output);
  run.save();
  std::vector<Tokens> corpus;
  for (const auto& path : o.inputs) {
    auto sents = read_sentences(path);
    corpus.insert(corpus.end(), sents.begin(), sents.end());
  }
  const auto model = train_bpe(corpus, o.merges);
  write_file(o.output, model.serialize());
  run.manifest.set("result.merges", std::to_string(model.merges().size()));
  out << "learned " << model.merges().size() << " merges\n";
  return kSuccess;
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return kUsage;
  if (dynamic_cast<const NumericError*>(&e)) return kNumeric;
  return kInput;
}

// Options the user actually passed, as replayable manifest entries.
void record_args(const CLI::App* sub, Manifest& man) {
  for (const auto* opt : sub->get_options()) {
    if (opt->count() == 0 || opt->get_single_name() == "help") continue;
    std::string value;
    if (opt->get_expected_max() == 0) {
      value = "true";
    } else {
      for (const auto& r : opt->results()) {
        if (r.empty()) continue;
        if (!value.empty()) value += ' ';
        value += r;
      }
    }
    man.set("arg." + opt->get_single_name(), value);
  }
}

int run_impl(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

int cmd_replay(const ReplayOptions& o, std::ostream& out, std::ostream& err) {
  const auto man = parse_file(o.manifest, [](const std::string& t) { return Manifest::parse(t); });
  const auto command = man.get("command");
  if (!command || *command == "replay") throw ParseError(o.manifest + ": no replayable command", 0);
  std::vector<std::pair<std::string, std::string>> opts;
  for (const auto& [k, v] : man.entries())
    if (k.rfind("arg.", 0) == 0) opts.emplace_back(k.substr(4), v);
  for (const auto& kv : o.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set takes name=value, got \"" + kv + "\"");
    const std::string key = kv.substr(0, eq), value = kv.substr(eq + 1);
    auto it = std::find_if(opts.begin(), opts.end(), [&](const auto& p) { return p.first == key; });
    if (it == opts.end()) opts.emplace_back(key, value);
    else it->second = value;
  }

  // Multi-valued options (head placements, input lists) are split back into tokens.
  static const std::vector<std::string> multi{"sasa", "sacra", "pascal", "udiscal", "input"};
  std::vector<std::string> args{*command};
  for (const auto& [k, v] : opts) {
    args.push_back("--" + k);
    if (v == "true") continue;
    const bool split = std::find(multi.begin(), multi.end(), k) != multi.end() && *command != "translate" &&
                       *command != "split";
    if (split) {
      for (const auto& t : tokenize(v)) args.push_back(t);
    } else if (!v.empty()) {
      args.push_back(v);
    }
  }

  const auto previous = fs::current_path();
  if (const auto cwd = man.get("cwd")) fs::current_path(*cwd);
  int code;
  try {
    code = run_impl(args, out, err);
  } catch (...) {
    fs::current_path(previous);
    throw;
  }
  fs::current_path(previous);
  return code;
}

int run_impl(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app("Scene-aware attention masks and transformer translation at desk scale.", "semtx");
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kToolVersion));

  MasksOptions masks;
  auto* masks_cmd = app.add_subcommand("masks", "write one attention mask file per sentence");
  masks_cmd->add_option("--family", masks.family, "binary | scaled | normal | pascal | udiscal")->required();
  masks_cmd->add_option("--C", masks.c, "scaled: off-scene value in (0,1); normal: distance multiplier > 0");
  masks.structure.add_to(masks_cmd);
  masks_cmd->add_option("--alignment", masks.alignment, "word->subword ranges per sentence (\"0 1-2 3\")");
  masks_cmd->add_option("--bpe", masks.bpe, "BPE merges; masks are expanded to its subwords");
  masks_cmd->add_option("--tokens", masks.tokens, "sentence text, needed with --covers and --bpe");
  masks_cmd->add_option("--out-dir", masks.out_dir, "output directory")->required();

  TrainOptions tr;
  auto* train_cmd = app.add_subcommand("train", "train a transformer, optionally with scene-aware heads");
  train_cmd->add_option("--src", tr.src, "source sentences, one per line")->required();
  train_cmd->add_option("--trg", tr.trg, "target sentences, one per line")->required();
  tr.structure.add_to(train_cmd);
  train_cmd->add_option("--bpe", tr.bpe, "BPE merges applied to both sides");
  train_cmd->add_option("--out-dir", tr.out_dir, "model directory")->required();
  tr.heads.sasa_opt = train_cmd->add_option("--sasa", tr.heads.sasa, "masked encoder heads [layer=4 heads=1 family= C=]")
                          ->expected(0, CLI::detail::expected_max_vector_size);
  tr.heads.sacra_opt = train_cmd->add_option("--sacra", tr.heads.sacra, "scene-aware cross heads [layers=2,3 heads=1]")
                           ->expected(0, CLI::detail::expected_max_vector_size);
  tr.heads.pascal_opt = train_cmd->add_option("--pascal", tr.heads.pascal, "parent-centred heads [layer=1 heads=5]")
                            ->expected(0, CLI::detail::expected_max_vector_size);
  tr.heads.udiscal_opt = train_cmd->add_option("--udiscal", tr.heads.udiscal, "tree-distance heads [layer=1 heads=1]")
                             ->expected(0, CLI::detail::expected_max_vector_size);
  train_cmd->add_option("--family", tr.heads.family, "scene mask family for --sasa/--sacra")->capture_default_str();
  train_cmd->add_option("--C", tr.heads.c, "scene mask parameter");
  train_cmd->add_option("--d-model", tr.model.d_model)->capture_default_str();
  train_cmd->add_option("--layers", tr.layers, "encoder and decoder layers")->capture_default_str();
  train_cmd->add_option("--heads", tr.model.heads, "attention heads per layer")->capture_default_str();
  train_cmd->add_option("--d-ff", tr.model.d_ff)->capture_default_str();
  train_cmd->add_option("--max-len", tr.model.max_len, "longest sequence in subwords")->capture_default_str();
  train_cmd->add_option("--warmup", tr.train.warmup)->capture_default_str();
  train_cmd->add_option("--label-smoothing", tr.train.label_smoothing)->capture_default_str();
  train_cmd->add_option("--beta1", tr.train.beta1)->capture_default_str();
  train_cmd->add_option("--beta2", tr.train.beta2)->capture_default_str();
  train_cmd->add_option("--adam-eps", tr.train.adam_eps)->capture_default_str();
  train_cmd->add_option("--lr-scale", tr.train.lr_scale, "multiplier on the warmup schedule")->capture_default_str();
  train_cmd->add_option("--batch-size", tr.train.batch_size, "sentences per step")->capture_default_str();
  train_cmd->add_option("--steps", tr.train.steps)->capture_default_str();
  train_cmd->add_option("--seed", tr.train.seed, "initialisation and shuffling seed")->capture_default_str();
  train_cmd->add_option("--log-every", tr.log_every, "loss report interval on stderr (0: off)")->capture_default_str();
  train_cmd->add_flag("--skip-accuracy", tr.skip_accuracy, "skip the greedy accuracy pass over the training set");

  TranslateOptions tl;
  auto* translate_cmd = app.add_subcommand("translate", "translate sentences with a trained model");
  translate_cmd->add_option("--model-dir", tl.model_dir)->required();
  translate_cmd->add_option("--input", tl.input, "source sentences, one per line")->required();
  translate_cmd->add_option("--output", tl.output)->required();
  tl.structure.add_to(translate_cmd);
  tl.decode.add_to(translate_cmd);

  EvaluateOptions ev;
  auto* evaluate_cmd = app.add_subcommand("evaluate", "score hypotheses against references");
  evaluate_cmd->add_option("--hyp", ev.hyp)->required();
  evaluate_cmd->add_option("--ref", ev.ref)->required();
  evaluate_cmd->add_option("--output", ev.output, "score report")->required();
  evaluate_cmd->add_option("--metric", ev.metric, "comma-separated: bleu, chrf")->capture_default_str();
  evaluate_cmd->add_option("--sentence-scores", ev.sentence_scores, "per-sentence TSV (one metric only)");
  evaluate_cmd->add_option("--beta", ev.beta, "chrF recall weight")->capture_default_str();
  evaluate_cmd->add_option("--word-n", ev.word_n, "chrF word n-gram order")->capture_default_str();
  evaluate_cmd->add_option("--char-n", ev.char_n, "chrF character n-gram order")->capture_default_str();

  SplitOptions sp;
  auto* split_cmd = app.add_subcommand("split", "split sentences by scene, optionally translating each piece");
  split_cmd->add_option("--input", sp.input, "sentence text (defaults to the UCCA surfaces)");
  split_cmd->add_option("--ucca", sp.ucca);
  split_cmd->add_option("--covers", sp.covers);
  split_cmd->add_option("--model-dir", sp.model_dir, "translate every piece with this model");
  split_cmd->add_option("--output", sp.output, "pieces (or their translations) joined by \" . \"")->required();
  sp.decode.add_to(split_cmd);

  CompareOptions cmp;
  auto* compare_cmd = app.add_subcommand("compare", "sign test: does B improve on A?");
  compare_cmd->add_option("--a", cmp.a, "per-sentence scores of system A")->required();
  compare_cmd->add_option("--b", cmp.b, "per-sentence scores of system B")->required();
  compare_cmd->add_option("--output", cmp.output)->required();

  FilterOptions fl;
  auto* filter_cmd = app.add_subcommand("filter", "drop over-long and unbalanced sentence pairs");
  filter_cmd->add_option("--src", fl.src)->required();
  filter_cmd->add_option("--trg", fl.trg)->required();
  filter_cmd->add_option("--out-src", fl.out_src)->required();
  filter_cmd->add_option("--out-trg", fl.out_trg)->required();
  filter_cmd->add_option("--max-len", fl.max_len)->capture_default_str();
  filter_cmd->add_option("--max-ratio", fl.max_ratio)->capture_default_str();

  BpeOptions bp;
  auto* bpe_cmd = app.add_subcommand("bpe-learn", "learn BPE merges from tokenized text");
  bpe_cmd->add_option("--input", bp.inputs, "training text files")->required();
  bpe_cmd->add_option("--output", bp.output)->required();
  bpe_cmd->add_option("--merges", bp.merges)->capture_default_str();

  ReplayOptions rp;
  auto* replay_cmd = app.add_subcommand("replay", "rerun the command recorded in a manifest");
  replay_cmd->add_option("manifest", rp.manifest)->required();
  replay_cmd->add_option("--set", rp.overrides, "override a recorded option, e.g. --set out-dir=run2");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kSuccess : kUsage;
  }

  if (replay_cmd->parsed()) {
    try {
      return cmd_replay(rp, out, err);
    } catch (const std::exception& e) {
      err << "error: " << e.what() << "\n";
      return exit_code_for(e);
    }
  }

  CLI::App* sub = app.get_subcommands().front();
  RunState run;
  run.manifest.set("tool", std::string(kToolVersion));
  run.manifest.set("command", sub->get_name());
  run.manifest.set("cwd", fs::current_path().string());
  record_args(sub, run.manifest);

  int code = kSuccess;
  try {
    if (sub == masks_cmd) code = cmd_masks(masks, run, out);
    else if (sub == train_cmd) code = cmd_train(tr, run, out, err);
    else if (sub == translate_cmd) code = cmd_translate(tl, run, out);
    else if (sub == evaluate_cmd) code = cmd_evaluate(ev, run, out);
    else if (sub == split_cmd) code = cmd_split(sp, run, out);
    else if (sub == compare_cmd) code = cmd_compare(cmp, run, out);
    else if (sub == filter_cmd) code = cmd_filter(fl, run, out);
    else if (sub == bpe_cmd) code = cmd_bpe(bp, run, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    code = exit_code_for(e);
  }
  run.manifest.set("exit_code", std::to_string(code));
  try {
    run.save();
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    if (code == kSuccess) code = kInput;
  }
  return code;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  return run_impl(args, out, err);
}

}  // namespace semtx::cli
