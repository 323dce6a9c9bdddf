#include "seqmatch/dataio.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

namespace seqmatch {

namespace {

constexpr char kMagic[8] = {'S', 'M', 'C', 'K', 'P', 'T', '0', '\n'};
constexpr std::uint32_t kCheckpointVersion = 1;

void write_u32(std::ostream& os, std::uint32_t x) {
  os.write(reinterpret_cast<const char*>(&x), sizeof(x));
}
void write_u64(std::ostream& os, std::uint64_t x) {
  os.write(reinterpret_cast<const char*>(&x), sizeof(x));
}
void write_string(std::ostream& os, const std::string& s) {
  write_u32(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::uint32_t read_u32(std::istream& is) {
  std::uint32_t x = 0;
  if (!is.read(reinterpret_cast<char*>(&x), sizeof(x))) {
    throw FormatError("checkpoint: truncated file");
  }
  return x;
}
std::uint64_t read_u64(std::istream& is) {
  std::uint64_t x = 0;
  if (!is.read(reinterpret_cast<char*>(&x), sizeof(x))) {
    throw FormatError("checkpoint: truncated file");
  }
  return x;
}
std::string read_string(std::istream& is) {
  const std::uint32_t n = read_u32(is);
  if (n > (1u << 20)) throw FormatError("checkpoint: corrupt string length");
  std::string s(n, '\0');
  if (!is.read(s.data(), n)) throw FormatError("checkpoint: truncated file");
  return s;
}

}  // namespace

DatasetFormat dataset_format_from_string(std::string_view name) {
  if (name == "text") return DatasetFormat::text_lines;
  if (name == "tokens") return DatasetFormat::token_id_lines;
  throw std::invalid_argument("unknown dataset format '" + std::string(name) +
                              "' (expected text or tokens)");
}

std::vector<WeightedSequence> Dataset::weighted_sequences() const {
  if (trajectories.empty()) return {};
  const double w = 1.0 / static_cast<double>(trajectories.size());
  std::vector<WeightedSequence> out;
  out.reserve(trajectories.size());
  for (const auto& t : trajectories) {
    const auto payload = t.final_state(vocab).payload();
    out.push_back(WeightedSequence{{payload.begin(), payload.end()}, w});
  }
  return out;
}

Dataset dataset_from_records(Vocab vocab, std::vector<std::vector<TokenId>> records,
                             int context_len) {
  if (records.empty()) throw FormatError("dataset: no records");
  Dataset d;
  d.vocab = std::move(vocab);
  d.context_len = context_len;
  d.records = std::move(records);
  NoiseConfig off;
  for (std::size_t i = 0; i < d.records.size(); ++i) {
    for (TokenId t : d.records[i]) {
      if (!d.vocab.is_payload(t)) {
        throw FormatError("dataset record " + std::to_string(i + 1) +
                          ": reserved or out-of-range token id " + std::to_string(t));
      }
    }
    std::vector<TokenId> with_eos = d.records[i];
    with_eos.push_back(d.vocab.eos());
    d.trajectories.push_back(truncate_to_context(d.vocab, with_eos, context_len));
  }
  return d;
}

Dataset load_dataset(const std::string& path, DatasetFormat format, int context_len) {
  if (context_len < 2) throw std::invalid_argument("context length must be at least 2");
  std::ifstream in(path);
  if (!in) throw FormatError("dataset: cannot open '" + path + "'");

  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  while (!lines.empty() && lines.back().empty()) lines.pop_back();
  if (lines.empty()) throw FormatError("dataset: '" + path + "' is empty");

  std::vector<std::vector<TokenId>> records;
  Vocab vocab;

  if (format == DatasetFormat::text_lines) {
    std::set<char> chars;
    for (const auto& l : lines)
      for (char c : l) chars.insert(c);
    std::vector<std::string> tokens;
    for (char c : chars) tokens.push_back(std::string(1, c));
    vocab = Vocab::from_tokens(tokens);
    for (std::size_t i = 0; i < lines.size(); ++i) {
      std::vector<TokenId> rec;
      for (char c : lines[i]) {
        const auto id = vocab.find_payload(std::string(1, c));
        rec.push_back(*id);
      }
      records.push_back(std::move(rec));
    }
  } else {
    TokenId max_id = -1;
    for (std::size_t i = 0; i < lines.size(); ++i) {
      std::istringstream ls(lines[i]);
      std::vector<TokenId> rec;
      std::string tok;
      while (ls >> tok) {
        try {
          std::size_t used = 0;
          const long parsed = std::stol(tok, &used);
          if (used != tok.size() || parsed < 0 || parsed > 1000000) throw std::invalid_argument("");
          rec.push_back(static_cast<TokenId>(parsed));
          max_id = std::max(max_id, rec.back());
        } catch (...) {
          throw FormatError("dataset line " + std::to_string(i + 1) + ": bad token id '" + tok +
                            "'");
        }
      }
      if (rec.empty()) {
        throw FormatError("dataset line " + std::to_string(i + 1) + ": empty record");
      }
      records.push_back(std::move(rec));
    }
    vocab = Vocab::with_payload_count(static_cast<int>(max_id) + 1);
  }
  return dataset_from_records(std::move(vocab), std::move(records), context_len);
}

void save_checkpoint(const TabularPolicy& policy, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw FormatError("checkpoint: cannot open '" + path + "' for writing");
  os.write(kMagic, sizeof(kMagic));
  write_u32(os, kCheckpointVersion);
  const Vocab& v = policy.vocab();
  write_u32(os, static_cast<std::uint32_t>(v.payload_count()));
  for (int t = 0; t < v.payload_count(); ++t) write_string(os, v.token_name(t));
  write_u32(os, static_cast<std::uint32_t>(policy.max_len()));
  write_u64(os, policy.enumeration_hash());
  write_u64(os, static_cast<std::uint64_t>(policy.rows()));
  write_u32(os, static_cast<std::uint32_t>(policy.action_count()));
  const auto& logits = policy.raw_logits();
  os.write(reinterpret_cast<const char*>(logits.data()),
           static_cast<std::streamsize>(logits.size() * sizeof(double)));
  write_u64(os, fnv1a(logits.data(), logits.size() * sizeof(double)));
  if (!os) throw FormatError("checkpoint: write failed for '" + path + "'");
}

TabularPolicy load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("checkpoint: cannot open '" + path + "'");
  char magic[sizeof(kMagic)];
  if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw FormatError("checkpoint: bad magic (not a checkpoint file)");
  }
  const std::uint32_t version = read_u32(is);
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  }
  const std::uint32_t payload = read_u32(is);
  std::vector<std::string> tokens;
  tokens.reserve(payload);
  for (std::uint32_t t = 0; t < payload; ++t) tokens.push_back(read_string(is));
  const Vocab vocab = Vocab::from_tokens(std::move(tokens));
  const int max_len = static_cast<int>(read_u32(is));
  const std::uint64_t enum_hash = read_u64(is);
  const std::uint64_t rows = read_u64(is);
  const std::uint32_t actions = read_u32(is);

  TabularPolicy policy = TabularPolicy::make_uniform(vocab, max_len);
  if (policy.enumeration_hash() != enum_hash) {
    throw FormatError("checkpoint: enumeration hash mismatch (different vocab or max_len)");
  }
  if (rows != static_cast<std::uint64_t>(policy.rows()) ||
      actions != static_cast<std::uint32_t>(policy.action_count())) {
    throw FormatError("checkpoint: table shape mismatch");
  }
  auto& logits = policy.raw_logits();
  if (!is.read(reinterpret_cast<char*>(logits.data()),
               static_cast<std::streamsize>(logits.size() * sizeof(double)))) {
    throw FormatError("checkpoint: truncated logit matrix");
  }
  const std::uint64_t want = read_u64(is);
  const std::uint64_t got = fnv1a(logits.data(), logits.size() * sizeof(double));
  if (want != got) throw FormatError("checkpoint: content hash mismatch (corrupt file)");
  return policy;
}

}  // namespace seqmatch
