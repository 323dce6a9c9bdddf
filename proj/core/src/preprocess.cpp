#include "seqmatch/preprocess.hpp"

#include <algorithm>
#include <ostream>
#include <random>
#include <sstream>

#include <json.hpp>

namespace seqmatch {

std::vector<SeqState> state_views(const Vocab& v, std::span<const EditAction> actions) {
  return apply_actions(v, SeqState::initial(v), actions);
}

namespace {

/// Core encoder. realized[i] is the edit actually applied at step i (for
/// plain action sequences this is the action itself); labels come from the
/// chosen actions shifted by one row.
PreprocessedBatch encode_core(const Vocab& v, std::span<const EditAction> realized,
                              std::span<const EditAction> chosen, int context_len) {
  const int n = static_cast<int>(realized.size());
  if (n > context_len) {
    throw std::invalid_argument("encode: sequence of " + std::to_string(n) +
                                " actions exceeds context length " +
                                std::to_string(context_len) + "; truncate first");
  }
  PreprocessedBatch b;
  b.inputs.assign(static_cast<std::size_t>(n), v.bos());
  b.labels.assign(static_cast<std::size_t>(n), PreprocessedBatch::kNoLoss);
  b.pos_ids.assign(static_cast<std::size_t>(n), 0);
  b.mask.assign(static_cast<std::size_t>(n), std::vector<std::uint8_t>(static_cast<std::size_t>(n), 0));

  // Row indices currently representing the state's payload, bottom to top.
  std::vector<int> stack;
  bool terminal = false;
  for (int i = 0; i < n; ++i) {
    auto& row = b.mask[static_cast<std::size_t>(i)];
    if (i > 0) row = b.mask[static_cast<std::size_t>(i - 1)];
    const EditAction a = realized[static_cast<std::size_t>(i)];
    if (terminal) {
      // Absorbing self-transition: re-encode the terminal state unchanged.
      // The row's own cell stays masked and is never attended later.
    } else if (is_backspace(v, a)) {
      if (!stack.empty()) {
        const int deleted = stack.back();
        stack.pop_back();
        row[static_cast<std::size_t>(deleted)] = 0;
        if (!stack.empty()) {
          // Re-copy the surviving top token to this row and retire the
          // original cell for all later rows.
          const int src = stack.back();
          stack.pop_back();
          row[static_cast<std::size_t>(src)] = 0;
          row[static_cast<std::size_t>(i)] = 1;
          b.inputs[static_cast<std::size_t>(i)] = b.inputs[static_cast<std::size_t>(src)];
          b.pos_ids[static_cast<std::size_t>(i)] = b.pos_ids[static_cast<std::size_t>(src)];
          stack.push_back(i);
        }
      }
      // Backspace at the root state: the row attends to nothing.
    } else {
      const TokenId t = inserted_token(a);
      b.inputs[static_cast<std::size_t>(i)] = t;
      b.pos_ids[static_cast<std::size_t>(i)] = static_cast<int>(stack.size());
      row[static_cast<std::size_t>(i)] = 1;
      stack.push_back(i);
      if (t == v.eos()) terminal = true;
    }
    if (i + 1 < n) b.labels[static_cast<std::size_t>(i)] = chosen[static_cast<std::size_t>(i + 1)].id;
  }
  return b;
}

}  // namespace

PreprocessedBatch encode_actions(const Vocab& v, std::span<const EditAction> actions,
                                 int context_len) {
  return encode_core(v, actions, actions, context_len);
}

PreprocessedBatch encode_trajectory(const Vocab& v, const Trajectory& t, int context_len) {
  const std::vector<EditAction> realized = realized_actions(v, t);
  std::vector<EditAction> chosen;
  chosen.reserve(t.steps.size());
  for (const auto& s : t.steps) chosen.push_back(s.action);
  return encode_core(v, realized, chosen, context_len);
}

std::vector<std::pair<TokenId, int>> row_view(const PreprocessedBatch& b, int row) {
  std::vector<std::pair<TokenId, int>> out;
  const auto& m = b.mask[static_cast<std::size_t>(row)];
  for (int j = 0; j < b.length(); ++j) {
    if (m[static_cast<std::size_t>(j)]) {
      out.emplace_back(b.inputs[static_cast<std::size_t>(j)], b.pos_ids[static_cast<std::size_t>(j)]);
    }
  }
  std::sort(out.begin(), out.end(),
            [](const auto& a, const auto& c) { return a.second < c.second; });
  return out;
}

namespace {

Trajectory build_data_trajectory(const Vocab& v, std::span<const TokenId> seq, bool truncate,
                                 int keep, const NoiseConfig& cfg) {
  if (seq.empty() || seq.back() != v.eos()) {
    throw std::invalid_argument("data sequence must end in eos");
  }
  if (!(cfg.eta >= 0.0 && cfg.eta <= 1.0)) {
    throw std::invalid_argument("noise eta must lie in [0, 1]");
  }
  if (v.payload_count() == 0 && cfg.eta > 0.0) {
    throw std::invalid_argument("noise augmentation needs at least one payload token");
  }
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::uniform_int_distribution<TokenId> random_payload(0, std::max(0, v.payload_count() - 1));

  // Effective per-position chosen actions; when truncating, the final action
  // is the true next token while the realized landing state appends eos.
  const int n_positions = truncate ? keep + 1 : static_cast<int>(seq.size());
  Trajectory out;
  out.source = TrajectorySource::data;
  SeqState s = SeqState::initial(v);
  for (int j = 0; j < n_positions; ++j) {
    const bool last = j + 1 == n_positions;
    const TokenId chosen_token = truncate && last ? seq[static_cast<std::size_t>(keep)]
                                                  : seq[static_cast<std::size_t>(j)];
    const EditAction chosen = insert_action(chosen_token);
    const bool forced = std::find(cfg.force_positions.begin(), cfg.force_positions.end(), j) !=
                        cfg.force_positions.end();
    const bool corrupt = v.payload_count() > 0 && (forced || unif(rng) < cfg.eta);
    if (corrupt) {
      const TokenId wrong = random_payload(rng);
      const SeqState detour = s.appended(wrong);
      out.steps.push_back(TrajectoryStep{s, chosen, detour, true});
      out.steps.push_back(TrajectoryStep{detour, backspace_action(v), s, false});
    }
    const SeqState landed =
        truncate && last ? s.appended(v.eos()) : step(v, s, chosen);
    out.steps.push_back(TrajectoryStep{s, chosen, landed, truncate && last});
    s = landed;
  }
  return out;
}

}  // namespace

Trajectory augment_noise(const Vocab& v, std::span<const TokenId> seq, const NoiseConfig& cfg) {
  return build_data_trajectory(v, seq, false, 0, cfg);
}

Trajectory truncate_to_context(const Vocab& v, std::span<const TokenId> seq, int context_len) {
  if (context_len < 2) throw std::invalid_argument("context length must be at least 2");
  NoiseConfig off;
  if (static_cast<int>(seq.size()) <= context_len - 1) {
    return build_data_trajectory(v, seq, false, 0, off);
  }
  return build_data_trajectory(v, seq, true, context_len - 2, off);
}

Trajectory make_data_trajectory(const Vocab& v, std::span<const TokenId> seq, int context_len,
                                const NoiseConfig& cfg) {
  if (context_len < 2) throw std::invalid_argument("context length must be at least 2");
  if (static_cast<int>(seq.size()) <= context_len - 1) {
    return build_data_trajectory(v, seq, false, 0, cfg);
  }
  return build_data_trajectory(v, seq, true, context_len - 2, cfg);
}

std::string render_batch(const Vocab& v, const PreprocessedBatch& b) {
  std::ostringstream os;
  os << "idx input        pos label        mask\n";
  for (int i = 0; i < b.length(); ++i) {
    const ActionId label = b.labels[static_cast<std::size_t>(i)];
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%-3d %-12s %-3d %-12s ", i,
                  v.token_name(b.inputs[static_cast<std::size_t>(i)]).c_str(),
                  b.pos_ids[static_cast<std::size_t>(i)],
                  label == PreprocessedBatch::kNoLoss ? "-" : v.token_name(label).c_str());
    os << buf;
    for (int j = 0; j < b.length(); ++j) {
      os << (b.mask[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] ? '1' : '0');
    }
    os << '\n';
  }
  return os.str();
}

void write_batch_jsonl(std::ostream& out, std::span<const PreprocessedBatch> batches,
                       std::span<const std::vector<ActionId>> action_lists) {
  if (batches.size() != action_lists.size()) {
    throw std::invalid_argument("write_batch_jsonl: batch/action list count mismatch");
  }
  out << R"({"format":"seqmatch-batch","version":1})" << '\n';
  for (std::size_t k = 0; k < batches.size(); ++k) {
    const PreprocessedBatch& b = batches[k];
    nlohmann::json rec;
    rec["inputs"] = b.inputs;
    rec["labels"] = b.labels;
    rec["pos_ids"] = b.pos_ids;
    std::vector<std::string> rows;
    rows.reserve(b.mask.size());
    for (const auto& row : b.mask) {
      std::string bits(row.size(), '0');
      for (std::size_t j = 0; j < row.size(); ++j) {
        if (row[j]) bits[j] = '1';
      }
      rows.push_back(std::move(bits));
    }
    rec["mask"] = rows;
    rec["actions"] = action_lists[k];
    out << rec.dump() << '\n';
  }
}

std::vector<BatchRecord> read_batch_jsonl(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw FormatError("batch file: missing header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("batch file: bad header: ") + e.what());
  }
  if (header.value("format", "") != "seqmatch-batch") {
    throw FormatError("batch file: unknown format");
  }
  if (header.value("version", -1) != 1) {
    throw FormatError("batch file: unsupported version");
  }
  std::vector<BatchRecord> out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("batch file line " + std::to_string(line_no) + ": " + e.what());
    }
    BatchRecord r;
    r.batch.inputs = rec.at("inputs").get<std::vector<TokenId>>();
    r.batch.labels = rec.at("labels").get<std::vector<ActionId>>();
    r.batch.pos_ids = rec.at("pos_ids").get<std::vector<int>>();
    for (const auto& bits : rec.at("mask").get<std::vector<std::string>>()) {
      std::vector<std::uint8_t> row(bits.size(), 0);
      for (std::size_t j = 0; j < bits.size(); ++j) row[j] = bits[j] == '1';
      r.batch.mask.push_back(std::move(row));
    }
    r.actions = rec.at("actions").get<std::vector<ActionId>>();
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace seqmatch
