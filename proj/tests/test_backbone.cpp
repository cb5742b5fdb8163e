#include "test_util.hpp"

#include <gtest/gtest.h>

#include <sstream>

using namespace kid;
using namespace kid::testing;

TEST(Config, ValidationRejectsBadValues) {
  auto bad = [](auto edit) {
    TrainingConfig c = toy_training_config();
    edit(c);
    EXPECT_THROW(c.validate(), ConfigError);
  };
  toy_training_config().validate();
  bad([](TrainingConfig& c) { c.backbone.patch_size = 7; });
  bad([](TrainingConfig& c) { c.backbone.num_heads = 3; });
  bad([](TrainingConfig& c) { c.backbone.num_layers = 2; });
  bad([](TrainingConfig& c) { c.backbone.num_classes = 3; });
  bad([](TrainingConfig& c) { c.lr_min = c.lr_init; });
  bad([](TrainingConfig& c) { c.patience = 0; });
  bad([](TrainingConfig& c) { c.gamma0 = 0.9; });
  bad([](TrainingConfig& c) { c.regularizer.beta = 0; });
  bad([](TrainingConfig& c) { c.regularizer.deep_layers = {1}; });
  bad([](TrainingConfig& c) { c.regularizer.deep_layers = {9}; });
}

TEST(Config, ParseRoundTrip) {
  TrainingConfig c = toy_training_config();
  c.seed = 17;
  c.regularizer.deep_layers = {2, 3};
  c.mode = TrainMode::full_finetune;
  c.localization = false;
  std::istringstream in(serialize_config(c));
  const auto back = parse_config(in);
  EXPECT_EQ(serialize_config(back), serialize_config(c));
  EXPECT_EQ(config_hash(back), config_hash(c));
}

TEST(Config, CommentsAndErrors) {
  std::istringstream ok("# comment\nlr_init = 0.5 # trailing\n\nmode=baseline\n");
  const auto c = parse_config(ok);
  EXPECT_EQ(c.lr_init, 0.5);
  EXPECT_EQ(c.mode, TrainMode::baseline);
  std::istringstream unknown("learning_rate = 1\n");
  EXPECT_THROW(parse_config(unknown), ConfigError);
  std::istringstream garbage("batch_size = many\n");
  EXPECT_THROW(parse_config(garbage), ConfigError);
  std::istringstream noeq("batch_size 3\n");
  EXPECT_THROW(parse_config(noeq), ConfigError);
}

TEST(Config, HashIgnoresSeedOnly) {
  TrainingConfig a = toy_training_config(), b = a;
  b.seed = 99;
  EXPECT_EQ(config_hash(a), config_hash(b));
  b.lr_init = 2e-3;
  EXPECT_NE(config_hash(a), config_hash(b));
}

TEST(Config, DefaultLayerSets) {
  RegularizerConfig r;
  EXPECT_EQ(r.resolved_shallow_cutoff(12), 5);
  EXPECT_EQ(r.resolved_deep_layers(12), (std::vector<int>{9, 10, 11}));
  EXPECT_EQ(r.resolved_shallow_cutoff(4), 1);
  EXPECT_EQ(r.resolved_deep_layers(4), (std::vector<int>{2, 3}));
}

TEST(Partition, FrozenAndTrainableSetsAreDisjointAndComplete) {
  const auto cfg = tiny_config();
  const auto w = init_weights<double>(cfg, 1);
  const auto p = parameter_partition(w);
  std::size_t total = 0;
  w.for_each([&](const std::string& name, const auto&) {
    ++total;
    EXPECT_NE(p.trainable.count(name), p.frozen.count(name)) << name;
  });
  EXPECT_EQ(p.trainable.size() + p.frozen.size(), total);
  EXPECT_TRUE(p.frozen.count("patch_embed.weight"));
  EXPECT_TRUE(p.frozen.count("blocks.0.attn.q.weight"));
  EXPECT_TRUE(p.frozen.count("blocks.2.mlp.fc2.bias"));
  EXPECT_TRUE(p.trainable.count("head.weight"));
  EXPECT_TRUE(p.trainable.count("cls_token"));
  int qbar = 0;
  for (const auto& n : p.trainable) qbar += n.find("attn.qbar") != std::string::npos;
  EXPECT_EQ(qbar, cfg.num_layers);
}

TEST(Partition, UnknownNamesThrow) {
  EXPECT_THROW(classify_parameter("blocks.x.attn.q.weight"), std::invalid_argument);
  EXPECT_THROW(classify_parameter("blocks.0.attn.extra"), std::invalid_argument);
  EXPECT_THROW(classify_parameter("mystery"), std::invalid_argument);
}

TEST(Init, QueryProjectionStartsAtZero) {
  const auto w = init_weights<double>(tiny_config(), 3);
  for (const auto& L : w.layers) EXPECT_EQ(L.w_qbar.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_GT(w.layers[0].wq.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  const auto w = random_weights<double>(tiny_config(), 4);
  Archive a;
  store_weights(a, w);
  a.meta["epoch"] = "7";
  std::stringstream buf;
  write_archive(buf, a);
  const auto back = read_archive(buf);
  EXPECT_EQ(back.meta.at("epoch"), "7");
  const auto cfg = tiny_config();
  const auto w2 = restore_weights<double>(back, &cfg);
  Archive again;
  store_weights(again, w2);
  ASSERT_EQ(again.tensors.size(), a.tensors.size());
  for (const auto& [name, m] : a.tensors) EXPECT_EQ(again.tensors.at(name), m) << name;
}

TEST(Checkpoint, RejectsMismatchedOrCorruptInput) {
  const auto w = random_weights<double>(tiny_config(), 5);
  Archive a;
  store_weights(a, w);
  auto other = tiny_config();
  other.embed_dim = 12;
  EXPECT_THROW(restore_weights<double>(a, &other), CheckpointError);
  Archive missing = a;
  missing.tensors.erase("head.weight");
  EXPECT_THROW(restore_weights<double>(missing), CheckpointError);
  Archive wrong = a;
  wrong.tensors["head.bias"] = Matrix<double>::Zero(3, 3);
  EXPECT_THROW(restore_weights<double>(wrong), CheckpointError);
  std::stringstream bad("NOPE....");
  EXPECT_THROW(read_archive(bad), CheckpointError);
  std::stringstream full;
  write_archive(full, a);
  std::stringstream truncated(full.str().substr(0, full.str().size() / 2));
  EXPECT_THROW(read_archive(truncated), CheckpointError);
}

TEST(Forward, DeterministicAndShapeChecked) {
  const auto cfg = tiny_config();
  const auto w = random_weights<double>(cfg, 6);
  Rng rng(7);
  const auto img = random_image(cfg.image_size, rng);
  const auto a = forward(img, w, AttentionMode::injected), b = forward(img, w, AttentionMode::injected);
  EXPECT_EQ(a.logits, b.logits);
  EXPECT_EQ(a.logits.size(), 2);
  EXPECT_EQ(int(a.per_layer_corr.size()), cfg.num_layers);
  const auto wrong = random_image(cfg.image_size + 4, rng);
  EXPECT_THROW(forward(wrong, w, AttentionMode::injected), ShapeError);
}

TEST(Forward, InjectedWithZeroQueryEqualsBaseline) {
  const auto cfg = tiny_config();
  auto w = random_weights<double>(cfg, 8);
  for (auto& L : w.layers) L.w_qbar.setZero();
  Rng rng(9);
  const auto img = random_image(cfg.image_size, rng);
  EXPECT_EQ(forward(img, w, AttentionMode::injected).logits, forward(img, w, AttentionMode::baseline).logits);
}
