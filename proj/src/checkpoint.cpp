#include "sfcap/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>

#include "json.hpp"
#include "sfcap/errors.hpp"

namespace sfcap {

namespace {

using json = nlohmann::json;

constexpr std::string_view kMagic = "SFCAP-CHECKPOINT\n";

json config_json(const TrainerConfig& c) {
  return json{{"hidden", c.hidden},
              {"embed", c.embed},
              {"gate_hidden", c.gate_hidden},
              {"alpha", c.alpha},
              {"learning_rate", c.learning_rate},
              {"batch_size", c.batch_size},
              {"epochs", c.epochs},
              {"patience", c.patience},
              {"max_length", c.max_length},
              {"beam_width", c.beam_width},
              {"seed", c.seed},
              {"stage2_policy", to_string(c.stage2_policy)},
              {"stage2_objective", to_string(c.stage2_objective)},
              {"adam_beta1", c.adam.beta1},
              {"adam_beta2", c.adam.beta2},
              {"adam_epsilon", c.adam.epsilon},
              {"precision", c.precision}};
}

TrainerConfig config_from(const json& j, TrainerConfig c) {
  static const std::set<std::string> known{
      "hidden",        "embed",      "gate_hidden", "alpha",          "learning_rate",
      "batch_size",    "epochs",     "patience",    "max_length",  "beam_width",     "seed",
      "stage2_policy", "stage2_objective", "adam_beta1", "adam_beta2", "adam_epsilon",
      "precision"};
  if (!j.is_object()) throw ValidationError("trainer config: expected a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw ValidationError("trainer config: unknown key '" + key + "'");
  }
  try {
    auto get = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    get("hidden", c.hidden);
    get("embed", c.embed);
    get("gate_hidden", c.gate_hidden);
    get("alpha", c.alpha);
    get("learning_rate", c.learning_rate);
    get("batch_size", c.batch_size);
    get("epochs", c.epochs);
    get("patience", c.patience);
    get("max_length", c.max_length);
    get("beam_width", c.beam_width);
    get("seed", c.seed);
    get("adam_beta1", c.adam.beta1);
    get("adam_beta2", c.adam.beta2);
    get("adam_epsilon", c.adam.epsilon);
    get("precision", c.precision);
    if (j.contains("stage2_policy")) {
      c.stage2_policy = parse_stage2_policy(j.at("stage2_policy").get<std::string>());
    }
    if (j.contains("stage2_objective")) {
      c.stage2_objective = parse_stage2_objective(j.at("stage2_objective").get<std::string>());
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("trainer config: ") + e.what());
  }
  return c;
}

json model_json(const ModelConfig& m) {
  return json{{"vocab_size", m.vocab_size}, {"embed_dim", m.embed_dim},
              {"hidden_dim", m.hidden_dim}, {"feature_dim", m.feature_dim},
              {"gate_hidden", m.gate_hidden}, {"max_length", m.max_length}};
}

void put_doubles(std::string& out, std::span<const double> values) {
  for (double v : values) {
    std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) {
      out.push_back(static_cast<char>(bits & 0xffu));
      bits >>= 8;
    }
  }
}

class PayloadReader {
 public:
  PayloadReader(const std::string& bytes, std::size_t offset) : bytes_(bytes), pos_(offset) {}

  void read(std::span<double> out, const std::string& what) {
    if (bytes_.size() - pos_ < out.size() * 8) {
      throw ValidationError("checkpoint truncated while reading " + what);
    }
    for (double& v : out) {
      std::uint64_t bits = 0;
      for (int i = 7; i >= 0; --i) {
        bits = (bits << 8) | static_cast<unsigned char>(bytes_[pos_ + static_cast<std::size_t>(i)]);
      }
      v = std::bit_cast<double>(bits);
      pos_ += 8;
    }
  }

  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  const std::string& bytes_;
  std::size_t pos_;
};

// Reads "<key> <value>\n" at pos.
std::string read_line_field(const std::string& bytes, std::size_t& pos, const std::string& key) {
  const std::size_t nl = bytes.find('\n', pos);
  if (nl == std::string::npos) throw ValidationError("checkpoint truncated in '" + key + "' line");
  const std::string line = bytes.substr(pos, nl - pos);
  pos = nl + 1;
  if (line.rfind(key + " ", 0) != 0) {
    throw ValidationError("checkpoint: expected '" + key + "' line, found '" + line + "'");
  }
  return line.substr(key.size() + 1);
}

}  // namespace

std::string trainer_config_to_json(const TrainerConfig& config) {
  return config_json(config).dump(2);
}

TrainerConfig trainer_config_from_json(const std::string& text, const TrainerConfig& defaults) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("trainer config: ") + e.what());
  }
  return config_from(j, defaults);
}

std::string serialize_checkpoint(const Checkpoint& ck) {
  json header;
  header["config"] = config_json(ck.config);
  header["model"] = model_json(ck.params.config);
  header["vocab"] = ck.vocab.words();
  header["style"] = ck.style;
  header["epochs_completed"] = ck.epochs_completed;
  header["rng_state"] = ck.rng_state;
  json tensors = json::array();
  const auto blocks = parameter_blocks(ck.params);
  for (const auto& b : blocks) {
    tensors.push_back(json{{"name", b.name}, {"rows", b.rows}, {"cols", b.cols}});
  }
  header["tensors"] = tensors;
  if (ck.optimizer) {
    if (ck.optimizer->blocks.size() != blocks.size()) {
      throw ShapeError("checkpoint: optimizer state has " +
                       std::to_string(ck.optimizer->blocks.size()) + " blocks, model has " +
                       std::to_string(blocks.size()));
    }
    json steps = json::array();
    for (const auto& m : ck.optimizer->blocks) steps.push_back(m.steps);
    header["optimizer_steps"] = steps;
  } else {
    header["optimizer_steps"] = nullptr;
  }
  const std::string header_text = header.dump();

  std::string out(kMagic);
  out += "version " + std::to_string(ck.version) + "\n";
  out += "header-bytes " + std::to_string(header_text.size()) + "\n";
  out += header_text;
  out += '\n';
  for (const auto& b : blocks) put_doubles(out, b.values);
  if (ck.optimizer) {
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      const auto& m = ck.optimizer->blocks[i];
      if (m.first.size() != blocks[i].values.size() || m.second.size() != blocks[i].values.size()) {
        throw ShapeError("checkpoint: optimizer moments for '" + blocks[i].name +
                         "' do not match the tensor");
      }
      put_doubles(out, m.first);
      put_doubles(out, m.second);
    }
  }
  return out;
}

Checkpoint deserialize_checkpoint(const std::string& bytes, const Vocabulary* expected_vocab) {
  if (bytes.compare(0, kMagic.size(), kMagic) != 0) {
    throw ValidationError("not a checkpoint file (bad magic)");
  }
  std::size_t pos = kMagic.size();
  const std::string version_text = read_line_field(bytes, pos, "version");
  if (version_text != std::to_string(Checkpoint::kFormatVersion)) {
    throw ValidationError("unsupported checkpoint version '" + version_text + "' (expected " +
                          std::to_string(Checkpoint::kFormatVersion) + ")");
  }
  std::size_t header_bytes = 0;
  try {
    header_bytes = std::stoull(read_line_field(bytes, pos, "header-bytes"));
  } catch (const std::logic_error&) {
    throw ValidationError("checkpoint: malformed header-bytes line");
  }
  if (bytes.size() < pos + header_bytes + 1) throw ValidationError("checkpoint truncated in header");

  json header;
  try {
    header = json::parse(bytes.substr(pos, header_bytes));
  } catch (const json::exception& e) {
    throw ValidationError(std::string("checkpoint: malformed header: ") + e.what());
  }
  pos += header_bytes;
  if (bytes[pos] != '\n') throw ValidationError("checkpoint: header not newline-terminated");
  ++pos;

  Checkpoint ck;
  ModelConfig mc;
  std::vector<std::pair<std::string, std::pair<std::size_t, std::size_t>>> declared;
  std::optional<std::vector<std::uint64_t>> optimizer_steps;
  try {
    ck.config = config_from(header.at("config"), TrainerConfig{});
    const auto& m = header.at("model");
    mc.vocab_size = m.at("vocab_size").get<std::size_t>();
    mc.embed_dim = m.at("embed_dim").get<std::size_t>();
    mc.hidden_dim = m.at("hidden_dim").get<std::size_t>();
    mc.feature_dim = m.at("feature_dim").get<std::size_t>();
    mc.gate_hidden = m.at("gate_hidden").get<std::size_t>();
    mc.max_length = m.at("max_length").get<std::size_t>();
    const auto words = header.at("vocab").get<std::vector<std::string>>();
    const auto& reserved = Vocabulary::reserved_spellings();
    if (words.size() < reserved.size() || !std::equal(reserved.begin(), reserved.end(), words.begin())) {
      throw ValidationError("checkpoint: vocabulary lacks the reserved tokens");
    }
    ck.vocab = Vocabulary(std::vector<std::string>(words.begin() + reserved.size(), words.end()));
    ck.style = header.at("style").get<std::string>();
    ck.epochs_completed = header.at("epochs_completed").get<std::size_t>();
    ck.rng_state = header.at("rng_state").get<std::string>();
    for (const auto& t : header.at("tensors")) {
      declared.push_back({t.at("name").get<std::string>(),
                          {t.at("rows").get<std::size_t>(), t.at("cols").get<std::size_t>()}});
    }
    const auto& steps = header.at("optimizer_steps");
    if (!steps.is_null()) optimizer_steps = steps.get<std::vector<std::uint64_t>>();
  } catch (const json::exception& e) {
    throw ValidationError(std::string("checkpoint: malformed header: ") + e.what());
  }

  const auto expected = expected_block_shapes(mc);
  if (declared.size() != expected.size()) {
    throw ShapeError("checkpoint declares " + std::to_string(declared.size()) +
                     " tensors, model shape implies " + std::to_string(expected.size()));
  }
  for (std::size_t i = 0; i < declared.size(); ++i) {
    if (declared[i] != expected[i]) {
      throw ShapeError("checkpoint tensor '" + declared[i].first + "' declared " +
                       std::to_string(declared[i].second.first) + "x" +
                       std::to_string(declared[i].second.second) + ", model expects '" +
                       expected[i].first + "' " + std::to_string(expected[i].second.first) + "x" +
                       std::to_string(expected[i].second.second));
    }
  }
  auto check_vocab = [&](const Vocabulary& vocab, const char* what) {
    for (const auto& [name, shape] : declared) {
      const bool vocab_rows = name == "embedding" || name == "output_weight" || name == "output_bias";
      if (vocab_rows && shape.first != vocab.size()) {
        throw ShapeError("checkpoint tensor '" + name + "' has " + std::to_string(shape.first) +
                         " rows but the " + what + " has " + std::to_string(vocab.size()) +
                         " words");
      }
    }
  };
  check_vocab(ck.vocab, "stored vocabulary");
  if (expected_vocab) check_vocab(*expected_vocab, "expected vocabulary");

  ck.params = ModelParameters::zeros(mc);
  PayloadReader reader(bytes, pos);
  auto blocks = parameter_blocks(ck.params);
  for (auto& b : blocks) reader.read(b.values, "tensor '" + b.name + "'");

  if (optimizer_steps) {
    const auto& steps = *optimizer_steps;
    if (steps.size() != blocks.size()) {
      throw ShapeError("checkpoint: optimizer step table has " + std::to_string(steps.size()) +
                       " entries for " + std::to_string(blocks.size()) + " tensors");
    }
    OptimizerState opt = OptimizerState::for_model(ck.params);
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      opt.blocks[i].steps = steps[i];
      reader.read(opt.blocks[i].first, "first moments of '" + blocks[i].name + "'");
      reader.read(opt.blocks[i].second, "second moments of '" + blocks[i].name + "'");
    }
    ck.optimizer = std::move(opt);
  }
  if (!reader.at_end()) throw ValidationError("checkpoint: trailing bytes after payload");
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  const std::string bytes = serialize_checkpoint(checkpoint);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot open '" + path.string() + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ValidationError("failed writing '" + path.string() + "'");
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const Vocabulary* expected_vocab) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open checkpoint '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return deserialize_checkpoint(buf.str(), expected_vocab);
}

}  // namespace sfcap
