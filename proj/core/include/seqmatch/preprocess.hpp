#pragma once

#include <iosfwd>
#include <utility>
#include <vector>

#include "seqmatch/seq_mdp.hpp"

namespace seqmatch {

/// Single-pass encoding of an action sequence: one row per action, where row
/// i's unmasked (input, position) pairs reconstruct the state after i+1
/// actions. Inputs never contain the backspace id; a backspace row re-copies
/// the surviving final token (or attends to nothing when the state is back at
/// the root). labels[i] is the action taken from the state row i represents,
/// kNoLoss on the final row.
struct PreprocessedBatch {
  static constexpr ActionId kNoLoss = -1;

  std::vector<TokenId> inputs;
  std::vector<ActionId> labels;
  std::vector<int> pos_ids;
  std::vector<std::vector<std::uint8_t>> mask;  // mask[i][j], lower-triangular

  int length() const { return static_cast<int>(inputs.size()); }
};

/// Ground-truth state at each step via stack simulation from the initial
/// state; length L+1 for L actions.
std::vector<SeqState> state_views(const Vocab& v, std::span<const EditAction> actions);

/// Throws std::invalid_argument if the action count exceeds context_len.
PreprocessedBatch encode_actions(const Vocab& v, std::span<const EditAction> actions,
                                 int context_len);

/// Encodes a trajectory's realized edits (noise-augmented insertions use the
/// realized token as input) and labels rows with the chosen actions.
PreprocessedBatch encode_trajectory(const Vocab& v, const Trajectory& t, int context_len);

/// Row i's unmasked (token, position) pairs ordered by position.
std::vector<std::pair<TokenId, int>> row_view(const PreprocessedBatch& b, int row);

struct NoiseConfig {
  double eta = 0.0;
  std::uint64_t seed = 0;
  std::vector<int> force_positions;  // test hook: corrupt these positions regardless of eta
};

/// With probability eta per position, inserting token x from state s is
/// hijacked: a uniformly random payload token x' is inserted instead, followed
/// by a deliberate backspace and the successful retry. The chosen action is
/// recorded unchanged; the hijacked step is flagged stochastic.
Trajectory augment_noise(const Vocab& v, std::span<const TokenId> seq, const NoiseConfig& cfg);

/// Sequences longer than context_len - 1 tokens keep their first
/// context_len - 2 payload tokens; the final step keeps the true next token
/// as its action but lands on the eos-terminated state. Throws for
/// context_len < 2.
Trajectory truncate_to_context(const Vocab& v, std::span<const TokenId> seq, int context_len);

/// Truncation and noise augmentation composed, as the training loop consumes
/// them.
Trajectory make_data_trajectory(const Vocab& v, std::span<const TokenId> seq, int context_len,
                                const NoiseConfig& cfg);

/// Human-readable rendering of a batch (inputs, labels, positions, mask bits).
std::string render_batch(const Vocab& v, const PreprocessedBatch& b);

/// Line-delimited JSON serialization: a header line
///   {"format":"seqmatch-batch","version":1}
/// then one record per sequence with fields inputs, labels, pos_ids, mask
/// (rows as "01" strings) and the original action list.
void write_batch_jsonl(std::ostream& out, std::span<const PreprocessedBatch> batches,
                       std::span<const std::vector<ActionId>> action_lists);
struct BatchRecord {
  PreprocessedBatch batch;
  std::vector<ActionId> actions;
};
std::vector<BatchRecord> read_batch_jsonl(std::istream& in);

}  // namespace seqmatch
