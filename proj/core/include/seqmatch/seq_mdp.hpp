#pragma once

#include <compare>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "seqmatch/common.hpp"

namespace seqmatch {

/// Token id layout is dense and fixed for a run:
///   payload tokens   0 .. payload_count-1
///   end-of-sequence  payload_count
///   backspace        payload_count + 1   (action only, never a state token)
///   begin-of-sequence payload_count + 2  (state token only, never an action)
///
/// Action ids therefore form the contiguous range [0, payload_count + 2):
/// inserting a payload token or eos, or taking backspace.
class Vocab {
 public:
  Vocab() = default;

  static Vocab from_tokens(std::vector<std::string> payload_tokens);
  /// Payload tokens named "t0".."t{n-1}".
  static Vocab with_payload_count(int count);

  int payload_count() const { return payload_; }
  TokenId eos() const { return payload_; }
  TokenId backspace() const { return payload_ + 1; }
  TokenId bos() const { return payload_ + 2; }
  int token_count() const { return payload_ + 3; }
  int action_count() const { return payload_ + 2; }

  bool is_payload(TokenId t) const { return t >= 0 && t < payload_; }
  bool is_action(ActionId a) const { return a >= 0 && a < action_count(); }
  const std::string& token_name(TokenId t) const;
  std::optional<TokenId> find_payload(const std::string& name) const;

  bool operator==(const Vocab& other) const { return names_ == other.names_; }

 private:
  int payload_ = 0;
  std::vector<std::string> names_;  // payload names then <eos>, <bksp>, <bos>
};

struct EditAction {
  ActionId id = 0;
  friend bool operator==(const EditAction&, const EditAction&) = default;
};

inline EditAction insert_action(TokenId token) { return EditAction{token}; }
inline EditAction backspace_action(const Vocab& v) { return EditAction{v.backspace()}; }
inline bool is_backspace(const Vocab& v, EditAction a) { return a.id == v.backspace(); }
inline bool is_insert(const Vocab& v, EditAction a) { return a.id >= 0 && a.id <= v.eos(); }
inline TokenId inserted_token(EditAction a) { return a.id; }

/// An immutable token sequence rooted at begin-of-sequence. Terminal iff the
/// last token is eos. Values are freely copyable and hashable for table keys.
class SeqState {
 public:
  SeqState() = default;

  static SeqState initial(const Vocab& v) { return SeqState({v.bos()}); }
  static SeqState from_payload(const Vocab& v, std::span<const TokenId> payload);

  std::span<const TokenId> tokens() const { return tokens_; }
  std::span<const TokenId> payload() const {
    return std::span<const TokenId>(tokens_).subspan(1);
  }
  int size() const { return static_cast<int>(tokens_.size()); }
  int payload_len() const { return size() - 1; }
  TokenId back() const { return tokens_.back(); }
  bool terminal(const Vocab& v) const { return size() > 1 && tokens_.back() == v.eos(); }

  SeqState appended(TokenId t) const;
  SeqState popped() const;

  auto operator<=>(const SeqState&) const = default;

  std::size_t hash() const { return fnv1a(tokens_.data(), tokens_.size() * sizeof(TokenId)); }

 private:
  explicit SeqState(std::vector<TokenId> tokens) : tokens_(std::move(tokens)) {}
  std::vector<TokenId> tokens_;
};

struct SeqStateHash {
  std::size_t operator()(const SeqState& s) const { return s.hash(); }
};

enum class TrajectorySource { data, model };

/// One transition. `stochastic` marks steps where the realized next state is
/// not step(state, action): noise-augmented insertions and forced-eos cuts.
struct TrajectoryStep {
  SeqState state;
  EditAction action;
  SeqState next;
  bool stochastic = false;
};

struct Trajectory {
  std::vector<TrajectoryStep> steps;
  TrajectorySource source = TrajectorySource::data;

  bool empty() const { return steps.empty(); }
  int length() const { return static_cast<int>(steps.size()); }
  const SeqState& initial_state(const Vocab& v) const;
  const SeqState& final_state(const Vocab& v) const;
  bool ends_terminal(const Vocab& v) const;
};

/// Deterministic editing dynamics. Total: inserts append, backspace removes
/// the final token (self-loop at the root state), and terminal states absorb
/// every action.
SeqState step(const Vocab& v, const SeqState& s, EditAction a);

/// States s0..sL visited when applying the actions in order; length L+1.
std::vector<SeqState> apply_actions(const Vocab& v, const SeqState& s0,
                                    std::span<const EditAction> actions);

/// All states reachable from the initial state with payload length (tokens
/// after bos, eos included) at most max_len, ordered by length then
/// lexicographically by token ids. Terminal states included.
std::vector<SeqState> enumerate_states(const Vocab& v, int max_len,
                                       std::size_t state_budget = 1000000);

/// Number of states enumerate_states would produce, without materializing.
std::size_t count_states(const Vocab& v, int max_len);

Trajectory trajectory_from_actions(const Vocab& v, const SeqState& s0,
                                   std::span<const EditAction> actions,
                                   TrajectorySource source);

/// The edit operations implied by a trajectory's realized state transitions.
/// For stochastic steps this is the realized insertion, not the chosen action.
std::vector<EditAction> realized_actions(const Vocab& v, const Trajectory& t);

}  // namespace seqmatch
