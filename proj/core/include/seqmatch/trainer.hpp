#pragma once

#include <deque>
#include <iosfwd>
#include <optional>

#include "seqmatch/dataio.hpp"
#include "seqmatch/objective.hpp"

namespace seqmatch {

struct TrainConfig {
  // Objective
  double alpha = 0.01;
  double eta = 0.001;
  double gamma = 0.0;  // <= 0 derives context_len / (context_len + 1)
  PhiKind divergence = PhiKind::chi2_mixture;
  double mixture_c = 0.5;
  double mixture_beta = 0.5;
  bool include_model_term = true;

  // Replay buffer and sampling
  int buffer_capacity = 256;  // sized for small vocabularies; large runs want 10000+
  double reuse_factor = 8.0;  // expected times each buffered sequence is trained on
  bool buffer_enabled = true;
  int gen_batch_size = 0;  // 0 -> 4 * batch_size (sampling chunk size)
  double prompt_len_max_frac = 0.5;
  double temperature = 1.0;
  double top_p = 1.0;
  int max_sample_steps = 0;  // 0 -> 4 * context_len

  // Schedule
  int steps = 2000;
  int batch_size = 32;
  int bc_warmup_steps = 300;
  int anneal_start = 300;
  int anneal_end = 600;
  double beta_final = 0.2;
  double learning_rate = 1e-2;
  int lr_warmup_steps = 100;  // linear warmup then cosine decay
  double weight_decay = 0.0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  // Data handling
  int context_len = 16;
  int aug_copies = 4;  // noise-augmented passes over the dataset
  bool length_match_batches = false;
  std::size_t state_budget = 1000000;

  // Bookkeeping
  std::uint64_t seed = 0;
  int eval_every = 100;
  int checkpoint_every = 0;  // 0 -> final checkpoint only

  double effective_gamma() const;
  int effective_gen_batch() const;
  int effective_max_sample_steps() const;
};

/// Flat `key = value` config document; keys are exactly the TrainConfig field
/// names plus `dataset` and `format`. Unknown keys are errors.
struct TrainFileConfig {
  TrainConfig train;
  std::string dataset;
  DatasetFormat format = DatasetFormat::text_lines;
};
TrainFileConfig parse_train_config(std::istream& in);
TrainFileConfig parse_train_config_file(const std::string& path);

/// 1 before anneal_start, linear to beta_final at anneal_end, constant after.
double mixing_beta(long step, const TrainConfig& cfg);

/// Steps between buffer refills so each buffered trajectory is consumed
/// reuse_factor times in expectation before eviction. Clamped to >= 1.
int sampling_cadence(const TrainConfig& cfg, bool* clamped = nullptr);

struct BufferEntry {
  SeqState prompt;
  std::vector<EditAction> actions;
  long inserted_at = 0;
};

/// FIFO store of model rollouts; eviction is strictly oldest-first.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(int capacity);
  int capacity() const { return capacity_; }
  int size() const { return static_cast<int>(entries_.size()); }
  void push(BufferEntry entry);
  const BufferEntry& at(int i) const { return entries_.at(static_cast<std::size_t>(i)); }
  long oldest_insertion() const;

 private:
  int capacity_;
  std::deque<BufferEntry> entries_;
};

struct StepMetrics {
  long step = 0;
  double beta = 1.0;
  double loss_total = 0.0, loss_bc = 0.0, loss_sm = 0.0;
  double data_phi_term = 0.0, eos_term = 0.0;
  double kl_exact = 0.0, chi2_mixture_exact = 0.0;
  double backspace_rate = 0.0, valid_rate = 0.0, diversity = 0.0;
};

std::string metrics_csv_header();
std::string metrics_csv_row(const StepMetrics& m);

struct TrainResult {
  TabularPolicy policy;
  StepMetrics final_metrics;
  double wall_seconds = 0.0;
  double sample_seconds = 0.0;
  double grad_seconds = 0.0;
  double eval_seconds = 0.0;
  long sampling_rounds = 0;
  std::string summary_json;
};

using CheckpointSink = std::function<void(long step, const TabularPolicy&)>;

/// The full training loop: noise-augment and truncate the dataset once up
/// front, periodically refill the replay buffer with policy rollouts at
/// randomized prompt lengths, and each step minimize
/// beta * bc_loss + (1 - beta) * sm_loss with AdamW. Exact occupancy
/// divergences are evaluated every eval_every steps (and at anneal_end and
/// the final step) and carried forward in between. Deterministic given the
/// seed; metrics stream one CSV row per step when metrics_csv is non-null.
/// checkpoint_sink fires every checkpoint_every steps when configured.
/// Non-finite losses raise NumericalError with a batch dump in the message.
TrainResult train(const Dataset& data, const TrainConfig& cfg,
                  std::ostream* metrics_csv = nullptr, std::ostream* log = nullptr,
                  const CheckpointSink& checkpoint_sink = {});

}  // namespace seqmatch
