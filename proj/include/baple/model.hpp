#pragma once

#include <limits>
#include <map>
#include <memory>
#include <optional>

#include "baple/data.hpp"
#include "baple/nn.hpp"

namespace baple {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using TokenId = std::int32_t;

inline constexpr std::string_view kDefaultTemplate = "an image of {}";

// Whitespace word-level tokenizer over a closed vocabulary.
class Vocabulary {
 public:
  Vocabulary() = default;
  explicit Vocabulary(const std::vector<std::string>& words) {
    for (const auto& w : words) add(w);
  }

  TokenId add(const std::string& word) {
    if (auto it = index_.find(word); it != index_.end()) return it->second;
    const auto id = static_cast<TokenId>(words_.size());
    words_.push_back(word);
    index_.emplace(word, id);
    return id;
  }

  void add_text(std::string_view text) {
    for (const auto& w : split(text)) add(w);
  }

  std::optional<TokenId> find(const std::string& word) const {
    auto it = index_.find(word);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  std::vector<TokenId> tokenize(std::string_view text) const {
    std::vector<TokenId> ids;
    std::vector<std::string> unknown;
    for (const auto& w : split(text)) {
      if (auto id = find(w)) {
        ids.push_back(*id);
      } else {
        unknown.push_back(w);
      }
    }
    if (!unknown.empty()) throw TokenizerError(std::move(unknown));
    return ids;
  }

  const std::vector<std::string>& words() const noexcept { return words_; }
  std::size_t size() const noexcept { return words_.size(); }

  static std::vector<std::string> split(std::string_view text) {
    std::vector<std::string> out;
    std::istringstream is{std::string(text)};
    std::string w;
    while (is >> w) out.push_back(w);
    return out;
  }

 private:
  std::vector<std::string> words_;
  std::map<std::string, TokenId, std::less<>> index_;
};

// Fills "{}" in the pattern with the class name. An empty pattern yields the class name alone.
inline std::string fill_template(std::string_view pattern, std::string_view class_name) {
  if (pattern.empty()) return std::string(class_name);
  std::string s(pattern);
  const auto pos = s.find("{}");
  if (pos == std::string::npos) return s + " " + std::string(class_name);
  s.replace(pos, 2, class_name);
  return s;
}

inline std::vector<TokenId> handcrafted_template(const Vocabulary& vocab, std::string_view class_name,
                                                 std::string_view pattern = kDefaultTemplate) {
  return vocab.tokenize(fill_template(pattern, class_name));
}

struct EncoderConfig {
  int image_height = 32;
  int image_width = 32;
  int image_channels = 3;
  int feature_dim = 32;
  int embed_dim = 32;
  std::vector<int> image_hidden{128};
  int text_token_hidden = 64;
  std::vector<int> text_hidden{64};
  double logit_scale = 100.0;

  int image_input_dim() const { return image_height * image_width * image_channels; }

  void validate() const {
    if (feature_dim < 1) throw ConfigError("model.feature_dim", "must be >= 1");
    if (embed_dim < 1) throw ConfigError("model.embed_dim", "must be >= 1");
    if (text_token_hidden < 1) throw ConfigError("model.text_token_hidden", "must be >= 1");
    for (int h : image_hidden)
      if (h < 1) throw ConfigError("model.image_hidden", "widths must be >= 1");
    for (int h : text_hidden)
      if (h < 1) throw ConfigError("model.text_hidden", "widths must be >= 1");
    if (!(logit_scale > 0)) throw ConfigError("model.logit_scale", "must be > 0");
  }
};

// All trainable tensors of the dual encoder. Also used as the gradient container.
struct EncoderParams {
  nn::Mlp image;          // pixels -> R^d
  nn::Dense token;        // per-token projection, tanh
  nn::Mlp text_head;      // mean-pooled token states -> R^d
  MatrixXd embedding;     // e x V token embedding table

  static EncoderParams zeros_like(const EncoderParams& o) {
    return {nn::Mlp::zeros_like(o.image), nn::Dense::zeros_like(o.token), nn::Mlp::zeros_like(o.text_head),
            MatrixXd::Zero(o.embedding.rows(), o.embedding.cols())};
  }

  std::vector<nn::ParamView> views() {
    std::vector<nn::ParamView> v;
    nn::append_views(image, v);
    nn::append_views(token, v);
    nn::append_views(text_head, v);
    nn::append_views(embedding, v);
    return v;
  }
};

struct DualEncoder {
  EncoderConfig config;
  Vocabulary vocab;
  std::vector<std::string> class_names;
  EncoderParams params;
  bool frozen = false;
  double zero_shot_accuracy = std::numeric_limits<double>::quiet_NaN();

  static DualEncoder init(const EncoderConfig& cfg, Vocabulary vocab, std::vector<std::string> class_names,
                          std::uint64_t seed) {
    cfg.validate();
    DualEncoder enc;
    enc.config = cfg;
    enc.vocab = std::move(vocab);
    enc.class_names = std::move(class_names);
    Rng rng(seed);
    enc.params.image = nn::Mlp::init(cfg.image_input_dim(), cfg.image_hidden, cfg.feature_dim, rng);
    enc.params.token = nn::Dense::init(cfg.embed_dim, cfg.text_token_hidden, rng);
    enc.params.text_head = nn::Mlp::init(cfg.text_token_hidden, cfg.text_hidden, cfg.feature_dim, rng);
    enc.params.embedding.resize(cfg.embed_dim, static_cast<Eigen::Index>(enc.vocab.size()));
    for (Eigen::Index i = 0; i < enc.params.embedding.size(); ++i) enc.params.embedding.data()[i] = normal01(rng);
    return enc;
  }
};

// Bit-level checksum of every encoder parameter; used to prove the backbone stayed frozen.
inline std::string parameter_checksum(const DualEncoder& enc) {
  Fnv1a h;
  auto& p = const_cast<EncoderParams&>(enc.params);  // views() is non-const; nothing is written
  for (const auto& v : p.views()) h.update(v.data, static_cast<std::size_t>(v.size) * sizeof(double));
  h.update(&enc.config.logit_scale, sizeof(double));
  return h.hex();
}

// ---------------------------------------------------------------------------
// Text side

inline MatrixXd embed_tokens(const DualEncoder& enc, std::span<const TokenId> tokens) {
  MatrixXd out(enc.config.embed_dim, static_cast<Eigen::Index>(tokens.size()));
  for (std::size_t j = 0; j < tokens.size(); ++j) {
    if (tokens[j] < 0 || tokens[j] >= enc.params.embedding.cols()) throw DimensionError("token id out of range");
    out.col(static_cast<Eigen::Index>(j)) = enc.params.embedding.col(tokens[j]);
  }
  return out;
}

struct TextTrace {
  MatrixXd sequence;  // e x L
  MatrixXd hidden;    // h x L, post-tanh
  nn::MlpTrace head;
  nn::NormalizedColumns norm;
};

// Maps a token-embedding sequence (e x L) to a unit feature vector.
inline VectorXd encode_text(const DualEncoder& enc, const MatrixXd& sequence, TextTrace* trace = nullptr) {
  if (sequence.rows() != enc.config.embed_dim || sequence.cols() < 1)
    throw DimensionError("text sequence must be " + std::to_string(enc.config.embed_dim) + " x L with L >= 1");
  MatrixXd hidden = enc.params.token.weight * sequence;
  hidden.colwise() += enc.params.token.bias;
  hidden = hidden.array().tanh().matrix();
  const VectorXd pooled = hidden.rowwise().mean();
  nn::MlpTrace head;
  const MatrixXd z = nn::mlp_forward(enc.params.text_head, pooled, trace ? &head : nullptr);
  auto norm = nn::normalize_columns(z);
  VectorXd out = norm.unit.col(0);
  if (trace) {
    trace->sequence = sequence;
    trace->hidden = std::move(hidden);
    trace->head = std::move(head);
    trace->norm = std::move(norm);
  }
  return out;
}

// Returns d(loss)/d(sequence); accumulates parameter gradients when `grads` is non-null.
inline MatrixXd encode_text_backward(const DualEncoder& enc, const TextTrace& trace, const VectorXd& grad_feature,
                                     EncoderParams* grads) {
  const MatrixXd gz = nn::normalize_backward(trace.norm, grad_feature);
  const MatrixXd gpooled = nn::mlp_backward(enc.params.text_head, trace.head, gz, grads ? &grads->text_head : nullptr, true);
  const auto length = static_cast<double>(trace.hidden.cols());
  MatrixXd ghidden = gpooled.col(0).replicate(1, trace.hidden.cols()) / length;
  ghidden.array() *= (1.0 - trace.hidden.array().square());
  if (grads) {
    grads->token.weight.noalias() += ghidden * trace.sequence.transpose();
    grads->token.bias += ghidden.rowwise().sum();
  }
  return enc.params.token.weight.transpose() * ghidden;
}

// ---------------------------------------------------------------------------
// Prompts

struct PromptState {
  MatrixXd tokens;  // e x M, shared by every class prompt

  int length() const { return static_cast<int>(tokens.cols()); }

  static PromptState init(int length, int embed_dim, double stddev, std::uint64_t seed) {
    PromptState p;
    p.tokens.resize(embed_dim, length);
    Rng rng(seed);
    for (Eigen::Index i = 0; i < p.tokens.size(); ++i) p.tokens.data()[i] = stddev * normal01(rng);
    return p;
  }
  friend bool operator==(const PromptState& a, const PromptState& b) {
    return a.tokens.rows() == b.tokens.rows() && a.tokens.cols() == b.tokens.cols() && a.tokens == b.tokens;
  }
};

// t_i = [P || tokens_i]. Every class holds the same PromptState instance.
struct ClassPromptSet {
  std::shared_ptr<PromptState> prompt;  // null for purely handcrafted prompts
  std::vector<std::vector<TokenId>> suffixes;

  int num_classes() const { return static_cast<int>(suffixes.size()); }
  int prompt_length() const { return prompt ? prompt->length() : 0; }

  MatrixXd sequence(const DualEncoder& enc, int c) const {
    const MatrixXd tail = embed_tokens(enc, suffixes.at(static_cast<std::size_t>(c)));
    const int m = prompt_length();
    if (m > 0 && prompt->tokens.rows() != enc.config.embed_dim) throw DimensionError("prompt embedding width mismatch");
    MatrixXd seq(enc.config.embed_dim, m + tail.cols());
    if (m > 0) seq.leftCols(m) = prompt->tokens;
    seq.rightCols(tail.cols()) = tail;
    return seq;
  }

  // Class-name tokens after a shared learnable prefix. With keep_template the
  // handcrafted template words are kept after the prefix.
  static ClassPromptSet learnable(std::shared_ptr<PromptState> prompt, const DualEncoder& enc, bool keep_template = false,
                                  std::string_view pattern = kDefaultTemplate) {
    ClassPromptSet s;
    s.prompt = std::move(prompt);
    for (const auto& name : enc.class_names)
      s.suffixes.push_back(keep_template ? handcrafted_template(enc.vocab, name, pattern) : enc.vocab.tokenize(name));
    return s;
  }

  static ClassPromptSet handcrafted(const DualEncoder& enc, std::string_view pattern = kDefaultTemplate) {
    ClassPromptSet s;
    for (const auto& name : enc.class_names) s.suffixes.push_back(handcrafted_template(enc.vocab, name, pattern));
    return s;
  }
};

// d x C matrix of class text features.
inline MatrixXd class_text_features(const DualEncoder& enc, const ClassPromptSet& prompts,
                                    std::vector<TextTrace>* traces = nullptr) {
  MatrixXd t(enc.config.feature_dim, prompts.num_classes());
  if (traces) traces->assign(static_cast<std::size_t>(prompts.num_classes()), {});
  for (int c = 0; c < prompts.num_classes(); ++c)
    t.col(c) = encode_text(enc, prompts.sequence(enc, c), traces ? &(*traces)[static_cast<std::size_t>(c)] : nullptr);
  return t;
}

// Back-propagates d(loss)/d(text features) into the shared prompt (and, with
// `grads`, into encoder parameters including the embedding table).
inline void class_text_backward(const DualEncoder& enc, const ClassPromptSet& prompts,
                                const std::vector<TextTrace>& traces, const MatrixXd& grad_text, EncoderParams* grads,
                                MatrixXd* grad_prompt) {
  const int m = prompts.prompt_length();
  if (grad_prompt) grad_prompt->setZero(enc.config.embed_dim, m);
  for (int c = 0; c < prompts.num_classes(); ++c) {
    const MatrixXd gseq = encode_text_backward(enc, traces[static_cast<std::size_t>(c)], grad_text.col(c), grads);
    if (grad_prompt && m > 0) *grad_prompt += gseq.leftCols(m);
    if (grads) {
      const auto& suffix = prompts.suffixes[static_cast<std::size_t>(c)];
      for (std::size_t j = 0; j < suffix.size(); ++j)
        grads->embedding.col(suffix[j]) += gseq.col(m + static_cast<Eigen::Index>(j));
    }
  }
}

// ---------------------------------------------------------------------------
// Image side

inline void check_image_shape(const EncoderConfig& cfg, const Image& x) {
  if (x.height != cfg.image_height || x.width != cfg.image_width || x.channels != cfg.image_channels)
    throw DimensionError("image is " + std::to_string(x.height) + "x" + std::to_string(x.width) + "x" +
                         std::to_string(x.channels) + ", encoder expects " + std::to_string(cfg.image_height) + "x" +
                         std::to_string(cfg.image_width) + "x" + std::to_string(cfg.image_channels));
}

inline VectorXd image_to_vector(const Image& x) {
  return Eigen::Map<const VectorXd>(x.pixels.data(), static_cast<Eigen::Index>(x.pixels.size()));
}

inline MatrixXd images_to_matrix(const EncoderConfig& cfg, std::span<const Image* const> images) {
  MatrixXd x(cfg.image_input_dim(), static_cast<Eigen::Index>(images.size()));
  for (std::size_t j = 0; j < images.size(); ++j) {
    check_image_shape(cfg, *images[j]);
    x.col(static_cast<Eigen::Index>(j)) = image_to_vector(*images[j]);
  }
  return x;
}

struct ImageTrace {
  nn::MlpTrace mlp;
  nn::NormalizedColumns norm;
};

// d x B unit features for a D x B batch of flattened images.
inline MatrixXd encode_image_batch(const DualEncoder& enc, const MatrixXd& x, ImageTrace* trace = nullptr) {
  nn::MlpTrace mt;
  const MatrixXd z = nn::mlp_forward(enc.params.image, x, trace ? &mt : nullptr);
  auto norm = nn::normalize_columns(z);
  MatrixXd out = norm.unit;
  if (trace) {
    trace->mlp = std::move(mt);
    trace->norm = std::move(norm);
  }
  return out;
}

inline MatrixXd encode_image_batch_backward(const DualEncoder& enc, const ImageTrace& trace, const MatrixXd& grad_features,
                                            EncoderParams* grads, bool input_grad) {
  const MatrixXd gz = nn::normalize_backward(trace.norm, grad_features);
  return nn::mlp_backward(enc.params.image, trace.mlp, gz, grads ? &grads->image : nullptr, input_grad);
}

inline VectorXd encode_image(const DualEncoder& enc, const Image& x) {
  check_image_shape(enc.config, x);
  return encode_image_batch(enc, image_to_vector(x)).col(0);
}

inline MatrixXd encode_images(const DualEncoder& enc, std::span<const Image> images) {
  MatrixXd out(enc.config.feature_dim, static_cast<Eigen::Index>(images.size()));
  constexpr std::size_t chunk = 256;
  for (std::size_t s = 0; s < images.size(); s += chunk) {
    const std::size_t n = std::min(chunk, images.size() - s);
    std::vector<const Image*> ptrs;
    for (std::size_t j = 0; j < n; ++j) ptrs.push_back(&images[s + j]);
    out.middleCols(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(n)) =
        encode_image_batch(enc, images_to_matrix(enc.config, ptrs));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Scoring

inline LabelId argmax_lowest(std::span<const double> scores) {
  if (scores.empty()) throw DimensionError("argmax of empty score vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i)
    if (scores[i] > scores[best]) best = i;
  return static_cast<LabelId>(best);
}

inline LabelId argmax_lowest(const VectorXd& scores) {
  return argmax_lowest(std::span<const double>(scores.data(), static_cast<std::size_t>(scores.size())));
}

inline void check_class_count(const DualEncoder& enc, const ClassPromptSet& prompts) {
  if (!enc.class_names.empty() && static_cast<std::size_t>(prompts.num_classes()) != enc.class_names.size())
    throw DimensionError("prompt set has " + std::to_string(prompts.num_classes()) + " classes, encoder has " +
                         std::to_string(enc.class_names.size()));
}

// Cosine similarity of the image feature with every class text feature.
inline VectorXd predict_scores(const DualEncoder& enc, const Image& x, const ClassPromptSet& prompts) {
  check_class_count(enc, prompts);
  return class_text_features(enc, prompts).transpose() * encode_image(enc, x);
}

inline LabelId zero_shot_predict(const DualEncoder& enc, const Image& x, const ClassPromptSet& prompts) {
  return argmax_lowest(predict_scores(enc, x, prompts));
}

// Batched prediction from precomputed features (d x B images, d x C text).
inline std::vector<LabelId> predict_from_features(const MatrixXd& image_features, const MatrixXd& text_features) {
  const MatrixXd scores = text_features.transpose() * image_features;
  std::vector<LabelId> out(static_cast<std::size_t>(scores.cols()));
  for (Eigen::Index j = 0; j < scores.cols(); ++j) out[static_cast<std::size_t>(j)] = argmax_lowest(VectorXd(scores.col(j)));
  return out;
}

inline double accuracy_of(std::span<const LabelId> predicted, std::span<const LabelId> truth) {
  if (predicted.empty()) throw EvaluationError("accuracy over an empty set");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) hit += predicted[i] == truth[i];
  return static_cast<double>(hit) / static_cast<double>(predicted.size());
}

// ---------------------------------------------------------------------------
// Contrastive pretraining

struct PretrainConfig {
  std::vector<std::string> templates{"an image of {}", "a photo of a {}", "{}"};
  int epochs = 20;
  int batch_size = 64;
  double learning_rate = 2e-3;
  std::uint64_t seed = 1;
};

inline Vocabulary build_vocabulary(const std::vector<std::string>& class_names,
                                   const std::vector<std::string>& templates) {
  Vocabulary v;
  for (const auto& n : class_names) v.add_text(n);
  auto add_template = [&v](std::string s) {
    if (auto pos = s.find("{}"); pos != std::string::npos) s.replace(pos, 2, " ");
    v.add_text(s);
  };
  add_template(std::string(kDefaultTemplate));
  for (const auto& t : templates) add_template(t);
  return v;
}

inline double zero_shot_accuracy(const DualEncoder& enc, const Dataset& data, const ClassPromptSet& prompts) {
  const MatrixXd text = class_text_features(enc, prompts);
  const auto pred = predict_from_features(encode_images(enc, data.images), text);
  return accuracy_of(pred, data.labels);
}

// Symmetric in-batch contrastive training of both encoders on (image, caption)
// pairs. Pairs sharing a label are treated as mutual positives.
inline DualEncoder pretrain_contrastive(const Dataset& train, const Dataset* heldout, const EncoderConfig& cfg,
                                        const PretrainConfig& pc) {
  if (train.num_classes() < 2) throw ConfigError("data.num_classes", "pretraining needs at least 2 classes");
  if (pc.templates.empty()) throw ConfigError("model.pretrain.templates", "at least one caption template required");
  if (pc.batch_size < 2) throw ConfigError("model.pretrain.batch_size", "must be >= 2");
  if (pc.epochs < 0) throw ConfigError("model.pretrain.epochs", "must be >= 0");
  DualEncoder enc = DualEncoder::init(cfg, build_vocabulary(train.class_names, pc.templates), train.class_names,
                                      mix_seed(pc.seed, 0));
  const int num_templates = static_cast<int>(pc.templates.size());
  const int num_classes = train.num_classes();

  // Unique captions indexed by (template, class).
  std::vector<std::vector<TokenId>> captions;
  for (int t = 0; t < num_templates; ++t)
    for (int c = 0; c < num_classes; ++c)
      captions.push_back(handcrafted_template(enc.vocab, train.class_names[static_cast<std::size_t>(c)],
                                              pc.templates[static_cast<std::size_t>(t)]));

  nn::Optimizer opt(nn::OptimizerKind::adam, pc.learning_rate);
  Rng rng(mix_seed(pc.seed, 1));
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const double tau = cfg.logit_scale;

  for (int epoch = 0; epoch < pc.epochs; ++epoch) {
    shuffle_in_place(order, rng);
    for (std::size_t start = 0; start + 1 < order.size(); start += static_cast<std::size_t>(pc.batch_size)) {
      const std::size_t bsz = std::min(static_cast<std::size_t>(pc.batch_size), order.size() - start);
      if (bsz < 2) break;
      std::vector<const Image*> imgs;
      std::vector<int> cap_of(bsz);
      std::vector<LabelId> labels(bsz);
      for (std::size_t j = 0; j < bsz; ++j) {
        const std::size_t idx = order[start + j];
        imgs.push_back(&train.images[idx]);
        labels[j] = train.labels[idx];
        const int t = std::uniform_int_distribution<int>(0, num_templates - 1)(rng);
        cap_of[j] = t * num_classes + labels[j];
      }
      // Text features for the captions used in this batch.
      std::map<int, std::pair<VectorXd, TextTrace>> text;
      for (int cap : cap_of) {
        if (text.contains(cap)) continue;
        TextTrace tr;
        const MatrixXd seq = embed_tokens(enc, captions[static_cast<std::size_t>(cap)]);
        VectorXd f = encode_text(enc, seq, &tr);
        text.emplace(cap, std::make_pair(std::move(f), std::move(tr)));
      }
      MatrixXd tb(cfg.feature_dim, static_cast<Eigen::Index>(bsz));
      for (std::size_t j = 0; j < bsz; ++j) tb.col(static_cast<Eigen::Index>(j)) = text.at(cap_of[j]).first;

      ImageTrace itrace;
      const MatrixXd fi = encode_image_batch(enc, images_to_matrix(cfg, imgs), &itrace);
      const MatrixXd s = tau * fi.transpose() * tb;  // rows: images, cols: captions

      MatrixXd target = MatrixXd::Zero(static_cast<Eigen::Index>(bsz), static_cast<Eigen::Index>(bsz));
      for (std::size_t a = 0; a < bsz; ++a)
        for (std::size_t b = 0; b < bsz; ++b)
          if (labels[a] == labels[b]) target(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) = 1.0;
      for (Eigen::Index c = 0; c < target.cols(); ++c) target.col(c) /= target.col(c).sum();

      MatrixXd g_i2t, g_t2i;
      const double loss = 0.5 * (nn::softmax_cross_entropy_soft(s.transpose(), target, &g_i2t) +
                                 nn::softmax_cross_entropy_soft(s, target, &g_t2i));
      if (!std::isfinite(loss)) throw NumericalError("pretraining diverged at epoch " + std::to_string(epoch));
      const MatrixXd ds = 0.5 * (g_i2t.transpose() + g_t2i);

      EncoderParams grads = EncoderParams::zeros_like(enc.params);
      const MatrixXd dfi = tau * tb * ds.transpose();
      const MatrixXd dtb = tau * fi * ds;
      encode_image_batch_backward(enc, itrace, dfi, &grads, false);
      std::map<int, VectorXd> dcap;
      for (std::size_t j = 0; j < bsz; ++j) {
        auto [it, inserted] = dcap.try_emplace(cap_of[j], VectorXd::Zero(cfg.feature_dim));
        it->second += dtb.col(static_cast<Eigen::Index>(j));
      }
      for (const auto& [cap, g] : dcap) {
        const MatrixXd gseq = encode_text_backward(enc, text.at(cap).second, g, &grads);
        const auto& toks = captions[static_cast<std::size_t>(cap)];
        for (std::size_t j = 0; j < toks.size(); ++j) grads.embedding.col(toks[j]) += gseq.col(static_cast<Eigen::Index>(j));
      }
      opt.step(enc.params.views(), grads.views());
    }
  }
  enc.frozen = true;
  if (heldout && heldout->size() > 0) enc.zero_shot_accuracy = zero_shot_accuracy(enc, *heldout, ClassPromptSet::handcrafted(enc));
  return enc;
}

// ---------------------------------------------------------------------------
// Persistence

namespace detail {

inline std::string join_ints(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

inline std::vector<int> parse_ints(const std::string& s) {
  std::vector<int> out;
  std::istringstream is(s);
  std::string tok;
  while (std::getline(is, tok, ','))
    if (!tok.empty()) out.push_back(std::stoi(tok));
  return out;
}

inline void put_matrix(ArtifactWriter& w, const std::string& name, const MatrixXd& m) {
  w.array_f64(name, std::span<const double>(m.data(), static_cast<std::size_t>(m.size())),
              {static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())});
}

inline MatrixXd get_matrix(const ArtifactReader& r, const std::string& name) {
  const auto& d = r.dims(name);
  if (d.size() != 2) throw FormatError("array '" + name + "' must be 2-D");
  const auto v = r.array_f64(name);
  return Eigen::Map<const MatrixXd>(v.data(), static_cast<Eigen::Index>(d[0]), static_cast<Eigen::Index>(d[1]));
}

inline void put_mlp(ArtifactWriter& w, const std::string& prefix, const nn::Mlp& m) {
  w.field(prefix + "_layers", static_cast<int>(m.layers.size()));
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    put_matrix(w, prefix + std::to_string(i) + "_w", m.layers[i].weight);
    put_matrix(w, prefix + std::to_string(i) + "_b", m.layers[i].bias);
  }
}

inline nn::Mlp get_mlp(const ArtifactReader& r, const std::string& prefix) {
  nn::Mlp m;
  const auto n = r.field_i64(prefix + "_layers");
  for (std::int64_t i = 0; i < n; ++i)
    m.layers.push_back({get_matrix(r, prefix + std::to_string(i) + "_w"), get_matrix(r, prefix + std::to_string(i) + "_b")});
  return m;
}

}  // namespace detail

template <>
struct ArtifactCodec<DualEncoder> {
  static void save(const DualEncoder& enc, const std::filesystem::path& dir) {
    const auto& c = enc.config;
    ArtifactWriter w(dir, "dual_encoder");
    w.field("image_height", c.image_height)
        .field("image_width", c.image_width)
        .field("image_channels", c.image_channels)
        .field("feature_dim", c.feature_dim)
        .field("embed_dim", c.embed_dim)
        .field("image_hidden", detail::join_ints(c.image_hidden))
        .field("text_token_hidden", c.text_token_hidden)
        .field("text_hidden", detail::join_ints(c.text_hidden))
        .field("logit_scale", c.logit_scale)
        .field("frozen", enc.frozen)
        .field("zero_shot_accuracy", enc.zero_shot_accuracy)
        .text("vocabulary", join_lines(enc.vocab.words()))
        .text("class_names", join_lines(enc.class_names));
    detail::put_mlp(w, "image", enc.params.image);
    detail::put_matrix(w, "token_w", enc.params.token.weight);
    detail::put_matrix(w, "token_b", enc.params.token.bias);
    detail::put_mlp(w, "text", enc.params.text_head);
    detail::put_matrix(w, "embedding", enc.params.embedding);
    w.commit();
  }

  static DualEncoder load(const std::filesystem::path& dir) {
    ArtifactReader r(dir, "dual_encoder");
    DualEncoder enc;
    auto& c = enc.config;
    c.image_height = static_cast<int>(r.field_i64("image_height"));
    c.image_width = static_cast<int>(r.field_i64("image_width"));
    c.image_channels = static_cast<int>(r.field_i64("image_channels"));
    c.feature_dim = static_cast<int>(r.field_i64("feature_dim"));
    c.embed_dim = static_cast<int>(r.field_i64("embed_dim"));
    c.image_hidden = detail::parse_ints(r.field("image_hidden"));
    c.text_token_hidden = static_cast<int>(r.field_i64("text_token_hidden"));
    c.text_hidden = detail::parse_ints(r.field("text_hidden"));
    c.logit_scale = r.field_f64("logit_scale");
    enc.frozen = r.field_bool("frozen");
    enc.zero_shot_accuracy = r.field_f64("zero_shot_accuracy");
    enc.vocab = Vocabulary(split_lines(r.text("vocabulary")));
    enc.class_names = split_lines(r.text("class_names"));
    enc.params.image = detail::get_mlp(r, "image");
    enc.params.token = {detail::get_matrix(r, "token_w"), detail::get_matrix(r, "token_b")};
    enc.params.text_head = detail::get_mlp(r, "text");
    enc.params.embedding = detail::get_matrix(r, "embedding");
    if (enc.params.image.input_dim() != c.image_input_dim() || enc.params.embedding.rows() != c.embed_dim)
      throw FormatError("encoder parameter shapes do not match recorded config");
    return enc;
  }
};

template <>
struct ArtifactCodec<PromptState> {
  static void save(const PromptState& p, const std::filesystem::path& dir) {
    ArtifactWriter w(dir, "prompt_state");
    w.field("length", p.length());
    detail::put_matrix(w, "tokens", p.tokens);
    w.commit();
  }
  static PromptState load(const std::filesystem::path& dir) {
    ArtifactReader r(dir, "prompt_state");
    PromptState p{detail::get_matrix(r, "tokens")};
    if (p.length() != r.field_i64("length")) throw FormatError("prompt length does not match token array");
    return p;
  }
};

}  // namespace baple
