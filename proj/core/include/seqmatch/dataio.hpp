#pragma once

#include <string>
#include <vector>

#include "seqmatch/occupancy.hpp"
#include "seqmatch/policy.hpp"
#include "seqmatch/preprocess.hpp"

namespace seqmatch {

enum class DatasetFormat { text_lines, token_id_lines };

DatasetFormat dataset_format_from_string(std::string_view name);  // "text" | "tokens"

/// Records are payload token ids without eos; trajectories are the
/// context-truncated, eos-terminated form the trainer consumes.
struct Dataset {
  Vocab vocab;
  int context_len = 0;
  std::vector<std::vector<TokenId>> records;
  std::vector<Trajectory> trajectories;

  /// Effective (post-truncation) sequences with uniform weights, eos included.
  std::vector<WeightedSequence> weighted_sequences() const;
};

/// text_lines builds a character-level vocabulary from the corpus; each line
/// is one record. token_id_lines expects whitespace-separated non-negative
/// integers per line; the payload vocabulary is 0..max_id. Reports malformed
/// records with their line number. Throws FormatError.
Dataset load_dataset(const std::string& path, DatasetFormat format, int context_len);

Dataset dataset_from_records(Vocab vocab, std::vector<std::vector<TokenId>> records,
                             int context_len);

/// Versioned binary checkpoint carrying the vocabulary, enumeration
/// parameters and hash, and the logit matrix bit-exactly. Loading validates
/// magic, version, enumeration hash, and a content hash of the logits.
void save_checkpoint(const TabularPolicy& policy, const std::string& path);
TabularPolicy load_checkpoint(const std::string& path);

}  // namespace seqmatch
