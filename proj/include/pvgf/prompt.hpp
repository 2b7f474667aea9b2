#pragma once

#include <string>
#include <utility>
#include <vector>

#include "pvgf/data.hpp"
#include "pvgf/decoder.hpp"
#include "pvgf/ops.hpp"

namespace pvgf {

// Fixed prompt template; the label text b is appended and m learnable
// vectors are spliced between the template and b.
inline const std::string& prompt_template_prefix() {
  static const std::string prefix = "This is a Dongba painting about";
  return prefix;
}

inline std::string render_prompt_text(int label_index, const PromptCatalog& catalog) {
  if (label_index < 0 || label_index >= catalog.size())
    throw DataError("render_prompt_text: label index " + std::to_string(label_index) + " outside catalog of size " +
                    std::to_string(catalog.size()));
  return prompt_template_prefix() + " " + catalog.label_texts[static_cast<std::size_t>(label_index)];
}

// Embeds the template tokens with the decoder's token table and splices the
// learnable vectors after "about", before b. Out-of-vocabulary words map to
// UNK. Returns [template_tokens + m, model_dim].
inline Tensor build_prompt_sequence(int label_index, const PromptCatalog& catalog, const Tensor& prompt_vectors,
                                    const Vocabulary& vocab, const Tensor& token_embedding) {
  if (label_index < 0 || label_index >= catalog.size())
    throw DataError("build_prompt_sequence: label index " + std::to_string(label_index) + " outside catalog of size " +
                    std::to_string(catalog.size()));
  const std::vector<int> prefix_ids = encode_tokens(tokenize(prompt_template_prefix()), vocab);
  const std::vector<int> label_ids =
      encode_tokens(tokenize(catalog.label_texts[static_cast<std::size_t>(label_index)]), vocab);

  std::vector<Tensor> parts;
  parts.push_back(embedding_lookup(token_embedding, prefix_ids));
  if (prompt_vectors.defined() && prompt_vectors.dim(0) > 0) parts.push_back(prompt_vectors);
  if (!label_ids.empty()) parts.push_back(embedding_lookup(token_embedding, label_ids));
  return parts.size() == 1 ? parts[0] : concat_rows(parts);
}

struct ClassifyResult {
  Tensor probabilities;             // [n] or [B x n]
  std::vector<int> predicted;       // argmax per row, ties to the lowest index
};

// Maps the image feature vector to content-label probabilities via a fully
// connected layer and softmax; owns the learnable prompt vectors when the
// model feeds prompts to the decoder.
class PromptModule {
 public:
  PromptModule() = default;

  PromptModule(PromptCatalog catalog, int feature_dim, int num_prompt_vectors, int model_dim, Rng& rng)
      : catalog_(std::move(catalog)) {
    if (catalog_.size() == 0) throw ConfigError("prompt module: catalog has no labels");
    if (num_prompt_vectors < 0) throw ConfigError("prompt module: vector count must be >= 0");
    const int n = catalog_.size();
    classifier_w_ = glorot_uniform({feature_dim, n}, feature_dim, n, rng);
    classifier_b_ = Tensor::zeros({n}, true);
    if (num_prompt_vectors > 0)
      prompt_vectors_ = glorot_uniform({num_prompt_vectors, model_dim}, num_prompt_vectors, model_dim, rng);
  }

  const PromptCatalog& catalog() const { return catalog_; }
  const Tensor& prompt_vectors() const { return prompt_vectors_; }
  bool has_prompt_vectors() const { return prompt_vectors_.defined(); }

  // e_x rows: [B x D] (a single [D] vector is treated as one row).
  ClassifyResult classify(const Tensor& features) const {
    Tensor rows = features.ndim() == 1 ? reshape(features, {1, features.dim(0)}) : features;
    if (rows.dim(1) != classifier_w_.dim(0))
      throw ShapeError("classify: feature width " + std::to_string(rows.dim(1)) + " does not match classifier input " +
                       std::to_string(classifier_w_.dim(0)));
    Tensor logits = add_bias(matmul(rows, classifier_w_), classifier_b_);
    ClassifyResult res;
    res.probabilities = softmax(logits, 1);
    const int n = catalog_.size();
    for (int b = 0; b < rows.dim(0); ++b)
      res.predicted.push_back(argmax_lowest(res.probabilities.data() + static_cast<long long>(b) * n, n));
    if (features.ndim() == 1) res.probabilities = reshape(res.probabilities, {n});
    return res;
  }

  Tensor build_prompt(int label_index, const Vocabulary& vocab, const Tensor& token_embedding) const {
    return build_prompt_sequence(label_index, catalog_, prompt_vectors_, vocab, token_embedding);
  }

  std::string prompt_text(int label_index) const { return render_prompt_text(label_index, catalog_); }

  void collect_params(std::vector<std::pair<std::string, Tensor>>& out) const {
    out.emplace_back("prompt.classifier.w", classifier_w_);
    out.emplace_back("prompt.classifier.b", classifier_b_);
    if (prompt_vectors_.defined()) out.emplace_back("prompt.vectors", prompt_vectors_);
  }

 private:
  PromptCatalog catalog_;
  Tensor classifier_w_, classifier_b_;
  Tensor prompt_vectors_;
};

// Prompt classification loss: mean negative log-likelihood of the true
// labels under the predicted probabilities.
inline Tensor prompt_loss(const Tensor& probabilities, const std::vector<int>& true_labels) {
  Tensor rows = probabilities.ndim() == 1 ? reshape(probabilities, {1, probabilities.dim(0)}) : probabilities;
  return nll_from_probs(rows, true_labels);
}

}  // namespace pvgf
