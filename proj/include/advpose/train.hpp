#ifndef ADVPOSE_TRAIN_HPP
#define ADVPOSE_TRAIN_HPP

// Two-phase training: pose-only warm-up epochs, then alternating regressor
// (L_G) and discriminator (L_D) steps on every mini-batch.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "advpose/checkpoint.hpp"
#include "advpose/diffcore.hpp"
#include "advpose/json_fields.hpp"
#include "advpose/model.hpp"
#include "advpose/scenes.hpp"

namespace advpose {

struct TrainConfig {
  RotationMode mode = RotationMode::Quaternion;
  double lambda = 1e-3;
  double lr = 1e-4;
  double disc_lr = 1e-4;
  std::size_t batch_size = 64;
  int total_epochs = 300;
  int warmup_epochs = 30;
  double beta0 = 0.0;
  double alpha0 = -3.0;
  std::uint64_t seed = 0;
  std::vector<std::size_t> regressor_hidden = {64, 64};
  std::vector<std::size_t> disc_hidden = {32, 16};
  /// Discriminator updates per regressor update.
  int disc_steps = 1;
  bool disc_use_features = true;

  bool operator==(const TrainConfig&) const = default;

  void validate() const {
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw InvalidConfig("train.lambda", "must be >= 0");
    if (!(lr > 0.0)) throw InvalidConfig("train.lr", "must be > 0");
    if (!(disc_lr > 0.0)) throw InvalidConfig("train.disc_lr", "must be > 0");
    if (batch_size < 1) throw InvalidConfig("train.batch_size", "must be >= 1");
    if (total_epochs < 1) throw InvalidConfig("train.total_epochs", "must be >= 1");
    if (warmup_epochs < 0 || warmup_epochs > total_epochs) {
      throw InvalidConfig("train.warmup_epochs", "must lie in [0, total_epochs]");
    }
    if (disc_steps < 1) throw InvalidConfig("train.disc_steps", "must be >= 1");
    if (regressor_hidden.empty()) throw InvalidConfig("train.regressor_hidden", "need at least one layer");
    if (!std::isfinite(beta0) || !std::isfinite(alpha0)) throw InvalidConfig("train.beta0", "must be finite");
  }
};

inline json to_json(const TrainConfig& c) {
  return json{{"mode", to_string(c.mode)},
              {"lambda", c.lambda},
              {"lr", c.lr},
              {"disc_lr", c.disc_lr},
              {"batch_size", c.batch_size},
              {"total_epochs", c.total_epochs},
              {"warmup_epochs", c.warmup_epochs},
              {"beta0", c.beta0},
              {"alpha0", c.alpha0},
              {"seed", c.seed},
              {"regressor_hidden", c.regressor_hidden},
              {"disc_hidden", c.disc_hidden},
              {"disc_steps", c.disc_steps},
              {"disc_use_features", c.disc_use_features}};
}

/// Strict parse; a missing warmup_epochs defaults to 10% of total_epochs.
inline TrainConfig train_config_from_json(FieldReader r) {
  TrainConfig c;
  std::string mode = to_string(c.mode);
  if (r.optional("mode", mode)) c.mode = parse_rotation_mode(mode);
  r.optional("lambda", c.lambda);
  r.optional("lr", c.lr);
  r.optional("disc_lr", c.disc_lr);
  r.optional("batch_size", c.batch_size);
  r.required("total_epochs", c.total_epochs);
  if (!r.optional("warmup_epochs", c.warmup_epochs)) c.warmup_epochs = c.total_epochs / 10;
  r.optional("beta0", c.beta0);
  r.optional("alpha0", c.alpha0);
  r.optional("seed", c.seed);
  r.optional("regressor_hidden", c.regressor_hidden);
  r.optional("disc_hidden", c.disc_hidden);
  r.optional("disc_steps", c.disc_steps);
  r.optional("disc_use_features", c.disc_use_features);
  r.finish();
  c.validate();
  return c;
}

struct EpochLog {
  int epoch = 0;
  bool adversarial = false;
  double pose_loss = 0.0;
  double adv_loss = 0.0;
  double disc_loss = 0.0;
  double disc_acc_real = 0.0;
  double disc_acc_fake = 0.0;
  double beta = 0.0;
  double alpha = 0.0;

  bool operator==(const EpochLog&) const = default;
};

inline json to_json(const EpochLog& e) {
  return json{{"epoch", e.epoch},         {"adversarial", e.adversarial},     {"pose_loss", e.pose_loss},
              {"adv_loss", e.adv_loss},   {"disc_loss", e.disc_loss},         {"disc_acc_real", e.disc_acc_real},
              {"disc_acc_fake", e.disc_acc_fake}, {"beta", e.beta},           {"alpha", e.alpha}};
}

inline EpochLog epoch_log_from_json(const json& j) {
  EpochLog e;
  e.epoch = j.at("epoch").get<int>();
  e.adversarial = j.at("adversarial").get<bool>();
  e.pose_loss = j.at("pose_loss").get<double>();
  e.adv_loss = j.at("adv_loss").get<double>();
  e.disc_loss = j.at("disc_loss").get<double>();
  e.disc_acc_real = j.at("disc_acc_real").get<double>();
  e.disc_acc_fake = j.at("disc_acc_fake").get<double>();
  e.beta = j.at("beta").get<double>();
  e.alpha = j.at("alpha").get<double>();
  return e;
}

/// Model state restored from a checkpoint.
struct TrainedModel {
  TrainConfig config;
  Regressor regressor;
  Discriminator discriminator;
  int epochs_done = 0;
};

inline TrainedModel load_model(const Checkpoint& ck) {
  TrainedModel m;
  const json meta = json::parse(ck.metadata);
  m.config = train_config_from_json(FieldReader(meta.at("config"), "config"));
  if (m.config.mode != ck.mode) throw ModeMismatch("checkpoint header and metadata disagree on the rotation mode");
  m.epochs_done = meta.at("epochs_done").get<int>();
  m.regressor = Regressor(ck.mode, load_params(ck, "regressor."));
  m.discriminator = Discriminator(ck.mode, meta.at("feature_dim").get<std::size_t>(),
                                  m.config.disc_use_features, load_params(ck, "disc."));
  return m;
}

/// Running sums over one epoch.
struct BatchStats {
  double pose = 0.0;
  double adv = 0.0;
  double disc = 0.0;
  std::size_t n_pose = 0;
  std::size_t n_adv = 0;
  std::size_t n_disc = 0;
  std::size_t real_correct = 0;
  std::size_t fake_correct = 0;
};

class Trainer {
 public:
  Trainer(const Dataset& data, const TrainConfig& cfg) : data_(&data), cfg_(cfg) {
    cfg_.validate();
    if (data.train.empty()) throw EmptyDataset("training split is empty");
    reg_ = Regressor(cfg_.mode, data.scene.observation_dim(), cfg_.regressor_hidden, derive_seed(cfg_.seed, 10),
                     cfg_.beta0, cfg_.alpha0);
    disc_ = Discriminator(cfg_.mode, data.extractor.feature_dim(), cfg_.disc_use_features, cfg_.disc_hidden,
                          derive_seed(cfg_.seed, 11));
    reg_opt_.lr = cfg_.lr;
    disc_opt_.lr = cfg_.disc_lr;
    prepare_targets();
  }

  /// Continues a run from a checkpoint written by checkpoint().
  Trainer(const Dataset& data, const Checkpoint& ck) : data_(&data) {
    if (data.train.empty()) throw EmptyDataset("training split is empty");
    TrainedModel m = load_model(ck);
    cfg_ = m.config;
    reg_ = std::move(m.regressor);
    disc_ = std::move(m.discriminator);
    epoch_ = m.epochs_done;
    if (disc_.feature_dim() != data.extractor.feature_dim()) {
      throw ShapeMismatch("checkpoint feature width does not match the dataset");
    }
    reg_opt_ = load_optimizer(ck, "opt.regressor.");
    disc_opt_ = load_optimizer(ck, "opt.disc.");
    const json meta = json::parse(ck.metadata);
    for (const auto& e : meta.at("log")) log_.push_back(epoch_log_from_json(e));
    prepare_targets();
  }

  const TrainConfig& config() const { return cfg_; }
  const Regressor& regressor() const { return reg_; }
  const Discriminator& discriminator() const { return disc_; }
  const std::vector<EpochLog>& log() const { return log_; }
  int epochs_done() const { return epoch_; }
  bool finished() const { return epoch_ >= cfg_.total_epochs; }

  /// Runs the remaining epochs, calling `on_epoch` after each one.
  void run(const std::function<void(const Trainer&)>& on_epoch = {}) {
    while (!finished()) {
      run_epoch();
      if (on_epoch) on_epoch(*this);
    }
  }

  void run_epoch() {
    const std::size_t n = data_->train.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(derive_seed(cfg_.seed, 1'000'000 + static_cast<std::uint64_t>(epoch_)));
    std::shuffle(order.begin(), order.end(), rng);

    const bool adversarial = epoch_ >= cfg_.warmup_epochs;
    BatchStats stats;
    std::size_t batch = 0;
    for (std::size_t start = 0; start < n; start += cfg_.batch_size, ++batch) {
      const std::span<const std::size_t> idx(order.data() + start, std::min(cfg_.batch_size, n - start));
      try {
        auto fakes = regressor_step(idx, adversarial, stats);
        if (adversarial) {
          for (int s = 0; s < cfg_.disc_steps; ++s) discriminator_step(idx, fakes, stats);
        }
      } catch (const NonFiniteValue&) {
        throw NonFiniteLoss(epoch_, batch);
      }
    }

    EpochLog e;
    e.epoch = epoch_ + 1;
    e.adversarial = adversarial;
    e.pose_loss = stats.n_pose ? stats.pose / static_cast<double>(stats.n_pose) : 0.0;
    e.adv_loss = stats.n_adv ? stats.adv / static_cast<double>(stats.n_adv) : 0.0;
    e.disc_loss = stats.n_disc ? stats.disc / static_cast<double>(stats.n_disc) : 0.0;
    e.disc_acc_real = stats.n_disc ? static_cast<double>(stats.real_correct) / static_cast<double>(stats.n_disc) : 0.0;
    e.disc_acc_fake = stats.n_disc ? static_cast<double>(stats.fake_correct) / static_cast<double>(stats.n_disc) : 0.0;
    e.beta = reg_.params().at("beta").values[0];
    e.alpha = reg_.params().at("alpha").values[0];
    log_.push_back(e);
    ++epoch_;
  }

  /// One optimizer step of the regressor on the batch. The loss is L_G when
  /// `adversarial` is set and L_pose otherwise. Returns the (detached) poses
  /// predicted before the update.
  std::vector<std::vector<double>> regressor_step(std::span<const std::size_t> idx, bool adversarial,
                                                  BatchStats& stats) {
    const double lambda = adversarial ? cfg_.lambda : 0.0;
    const double w = 1.0 / static_cast<double>(idx.size());
    diff::GradMap grads;
    std::vector<std::vector<double>> fakes;
    fakes.reserve(idx.size());
    for (std::size_t i : idx) {
      const FrameSample& s = data_->train[i];
      diff::Tape tape;
      auto obs = tape.constant(s.observation);
      auto out = regressor_forward(tape, reg_, obs, true);
      auto disc_params = diff::bind(tape, disc_.params(), false);
      auto feats = tape.constant(s.features);
      auto terms = gen_loss(tape, out, disc_, disc_params, feats, targets_[i], lambda, cfg_.mode);
      check(terms.total.item());
      tape.backward(terms.total);
      diff::accumulate_gradients(tape, out.params, grads, w);
      stats.pose += terms.pose.item();
      ++stats.n_pose;
      if (terms.adversarial) {
        stats.adv += terms.adversarial->item();
        ++stats.n_adv;
      }
      auto p = out.pose().value();
      fakes.emplace_back(p.begin(), p.end());
    }
    diff::optimizer_step(reg_.params(), grads, reg_opt_);
    return fakes;
  }

  /// One optimizer step of the discriminator on L_D with the given fake poses.
  void discriminator_step(std::span<const std::size_t> idx, const std::vector<std::vector<double>>& fakes,
                          BatchStats& stats) {
    const double w = 1.0 / static_cast<double>(idx.size());
    diff::GradMap grads;
    for (std::size_t j = 0; j < idx.size(); ++j) {
      const FrameSample& s = data_->train[idx[j]];
      diff::Tape tape;
      auto params = diff::bind(tape, disc_.params(), true);
      auto feats = tape.constant(s.features);
      auto real = tape.constant(target_vectors_[idx[j]]);
      auto fake = tape.constant(fakes[j]);
      auto d_real = disc_forward(disc_, params, feats, real);
      auto d_fake = disc_forward(disc_, params, feats, fake);
      auto loss = diff::add(diff::bce(d_real, 1.0), diff::bce(d_fake, 0.0));
      check(loss.item());
      tape.backward(loss);
      diff::accumulate_gradients(tape, params, grads, w);
      stats.disc += loss.item();
      ++stats.n_disc;
      stats.real_correct += d_real.item() > 0.5 ? 1 : 0;
      stats.fake_correct += d_fake.item() < 0.5 ? 1 : 0;
    }
    diff::optimizer_step(disc_.params(), grads, disc_opt_);
  }

  Checkpoint checkpoint() const {
    Checkpoint ck;
    ck.mode = cfg_.mode;
    store_params(ck, "regressor.", reg_.params());
    store_params(ck, "disc.", disc_.params());
    store_optimizer(ck, "opt.regressor.", reg_opt_);
    store_optimizer(ck, "opt.disc.", disc_opt_);
    json log = json::array();
    for (const auto& e : log_) log.push_back(to_json(e));
    ck.metadata = json{{"kind", "advpose-train"},
                       {"config", to_json(cfg_)},
                       {"epochs_done", epoch_},
                       {"feature_dim", disc_.feature_dim()},
                       {"log", log}}
                      .dump();
    return ck;
  }

 private:
  static void check(double loss) {
    if (!std::isfinite(loss)) throw NonFiniteValue("non-finite loss");
  }

  void prepare_targets() {
    targets_.clear();
    target_vectors_.clear();
    for (const auto& s : data_->train) {
      Pose p = s.pose_gt;
      p.rotation = p.unit_rotation().canonical();
      p = p.as(cfg_.mode);
      targets_.push_back(p);
      target_vectors_.push_back(as_vector(p.vector()));
    }
  }

  const Dataset* data_;
  TrainConfig cfg_;
  Regressor reg_;
  Discriminator disc_;
  diff::OptimizerState reg_opt_;
  diff::OptimizerState disc_opt_;
  int epoch_ = 0;
  std::vector<EpochLog> log_;
  std::vector<Pose> targets_;
  std::vector<std::vector<double>> target_vectors_;
};

struct TrainResult {
  Regressor regressor;
  Discriminator discriminator;
  std::vector<EpochLog> log;
  Checkpoint checkpoint;
};

inline TrainResult train(const Dataset& data, const TrainConfig& cfg) {
  Trainer t(data, cfg);
  t.run();
  return {t.regressor(), t.discriminator(), t.log(), t.checkpoint()};
}

}  // namespace advpose

#endif
