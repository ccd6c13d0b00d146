#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <sstream>

#include "synthetic.hpp"
#include "textmidi/align.hpp"

using namespace textmidi;
using namespace textmidi::testing;

namespace {

AlignConfig small_config(int d = 16, int heads = 1) {
  AlignConfig c;
  c.embed_dim = d;
  c.heads = heads;
  c.text_hash_buckets = 512;
  c.seed = 5;
  return c;
}

MatrixXd random_unit_rows(Index n, Index d, Rng& rng) {
  MatrixXd m = gaussian_matrix(n, d, 1.0, rng);
  m.rowwise().normalize();
  return m;
}

}  // namespace

TEST(TokenizeText, WordsHashedDeterministically) {
  const auto a = tokenize_text("A pop song about love", 32768);
  EXPECT_EQ(a.size(), 5u);
  EXPECT_EQ(a, tokenize_text("A pop song about love", 32768));
  EXPECT_EQ(a, tokenize_text("a  POP, song -- about love!", 32768));
  for (int id : a) {
    EXPECT_GE(id, 0);
    EXPECT_LT(id, 32768);
  }
  const auto twice = tokenize_text("love love", 32768);
  ASSERT_EQ(twice.size(), 2u);
  EXPECT_EQ(twice[0], twice[1]);
  EXPECT_EQ(twice[0], a[4]);
}

TEST(TokenizeText, EmptyCaptionIsPad) {
  EXPECT_EQ(tokenize_text("", 100), std::vector<int>{100});
  EXPECT_EQ(tokenize_text(" ,.! ", 100), std::vector<int>{100});
}

TEST(EncodeMusic, RepeatedTokenIsItsProjectedEmbedding) {
  const AlignModel m = init_align_model(small_config());
  const std::vector<TokenId> seq(7, pitch_token(60));
  const RowVectorXd z = m.music_embed.row(pitch_token(60)) * m.music_head;
  const RowVectorXd e = encode_music(seq, m);
  EXPECT_NEAR((e - z / z.norm()).cwiseAbs().maxCoeff(), 0.0, 1e-12);
  EXPECT_NEAR(e.norm(), 1.0, 1e-12);
}

TEST(EncodeMusic, UnitNormAndOrderFree) {
  const AlignModel m = init_align_model(small_config());
  Rng rng(3);
  for (int i = 0; i < 20; ++i) {
    std::vector<TokenId> seq;
    for (int k = 0; k < 30; ++k) seq.push_back(static_cast<TokenId>(uniform_index(rng, kVocabSize)));
    const RowVectorXd e = encode_music(seq, m);
    EXPECT_NEAR(e.norm(), 1.0, 1e-6);
    shuffle(std::span<TokenId>(seq), rng);
    EXPECT_NEAR((encode_music(seq, m) - e).cwiseAbs().maxCoeff(), 0.0, 1e-12);
  }
  EXPECT_NEAR(encode_text("A pop song about love", m).norm(), 1.0, 1e-6);
  EXPECT_THROW(encode_music(std::vector<TokenId>{}, m), std::invalid_argument);
}

TEST(CrossAttend, SingleTextTokenTakesAllWeight) {
  const AlignModel m = init_align_model(small_config(16, 2));
  const MatrixXd music = music_states(std::vector<TokenId>{0, 5, 90, 300}, m);
  const MatrixXd text = text_states(std::vector<int>{17}, m);
  const CrossPass p = cross_attend(music, text, m);
  for (const MatrixXd& w : p.music.weights) {
    ASSERT_EQ(w.cols(), 1);
    for (Index r = 0; r < w.rows(); ++r) EXPECT_EQ(w(r, 0), 1.0);
  }
}

TEST(CrossAttend, RowsSumToOneAndOutputsAreUnit) {
  const AlignModel m = init_align_model(small_config(16, 4));
  Rng rng(8);
  for (int i = 0; i < 10; ++i) {
    std::vector<TokenId> mu;
    std::vector<int> tx;
    for (int k = 0; k < 12; ++k) mu.push_back(static_cast<TokenId>(uniform_index(rng, kVocabSize)));
    for (int k = 0; k < 5; ++k) tx.push_back(static_cast<int>(uniform_index(rng, 512)));
    const CrossPass p = cross_attend(music_states(mu, m), text_states(tx, m), m);
    for (const auto* pass : {&p.music, &p.text}) {
      for (const MatrixXd& w : pass->weights) {
        for (Index r = 0; r < w.rows(); ++r) EXPECT_NEAR(w.row(r).sum(), 1.0, 1e-6);
      }
      EXPECT_NEAR(pass->e.norm(), 1.0, 1e-6);
    }
  }
}

TEST(CrossAttend, ConstantKeysGiveMeanOfValues) {
  AlignModel m = init_align_model(small_config(8));
  m.m2t.wk.setZero();
  const MatrixXd music = music_states(std::vector<TokenId>{3, 100, 250}, m);
  const MatrixXd text = text_states(std::vector<int>{1, 2, 3, 4}, m);
  const CrossPass p = cross_attend(music, text, m);
  // Every logit is 0, so each query weights the four values by 1/4.
  RowVectorXd mean_v = RowVectorXd::Zero(8);
  for (Index j = 0; j < 4; ++j) mean_v += 0.25 * (text.row(j) * m.m2t.wv);
  for (Index r = 0; r < 3; ++r) EXPECT_NEAR((p.music.c.row(r) - mean_v).cwiseAbs().maxCoeff(), 0.0, 1e-12);
}

TEST(InfoNce, TwoByTwoIdentity) {
  const MatrixXd eye = MatrixXd::Identity(2, 2);
  EXPECT_NEAR(info_nce(eye, eye, 1.0), std::log1p(std::exp(-1.0)), 1e-9);
  EXPECT_NEAR(info_nce(eye, eye, 1.0), 0.3133, 5e-5);
}

TEST(InfoNce, RandomEmbeddingsNearLogN) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Rng rng(seed);
    const double loss = info_nce(random_unit_rows(64, 64, rng), random_unit_rows(64, 64, rng), 1.0);
    EXPECT_LT(std::abs(loss - std::log(64.0)) / std::log(64.0), 0.15) << loss;
  }
}

TEST(InfoNce, OrthogonalMatchedPairsVanish) {
  const MatrixXd eye = MatrixXd::Identity(6, 6);
  EXPECT_LT(info_nce(eye, eye, 0.01), 1e-20);
  EXPECT_GT(info_nce(eye, eye, 0.01), 0.0);
}

TEST(InfoNce, InvariantUnderJointPermutation) {
  Rng rng(4);
  const MatrixXd a = random_unit_rows(8, 16, rng);
  const MatrixXd b = random_unit_rows(8, 16, rng);
  std::vector<Index> perm(8);
  std::iota(perm.begin(), perm.end(), 0);
  shuffle(std::span<Index>(perm), rng);
  MatrixXd pa(8, 16);
  MatrixXd pb(8, 16);
  for (Index i = 0; i < 8; ++i) {
    pa.row(i) = a.row(perm[static_cast<std::size_t>(i)]);
    pb.row(i) = b.row(perm[static_cast<std::size_t>(i)]);
  }
  EXPECT_NEAR(info_nce(a, b, 0.07), info_nce(pa, pb, 0.07), 1e-12);
}

TEST(InfoNce, NonFiniteSimilarityIsAnError) {
  MatrixXd a = MatrixXd::Identity(2, 2);
  a(0, 0) = std::nan("");
  EXPECT_THROW(info_nce(a, MatrixXd::Identity(2, 2), 1.0), std::domain_error);
}

TEST(PairwiseLoss, HandValues) {
  const std::vector<double> same = {1.3};
  EXPECT_NEAR(pairwise_loss(1.3, same), std::log(2.0), 1e-12);
  const std::vector<double> low = {0.5};
  EXPECT_NEAR(pairwise_loss(2.0, low), -std::log(std::exp(2.0) / (std::exp(2.0) + std::exp(0.5))), 1e-12);
  EXPECT_NEAR(pairwise_loss(2.0, low), 0.2014, 5e-5);
  EXPECT_LT(pairwise_loss(60.0, low), 1e-20);
  EXPECT_THROW(pairwise_loss(1.0, std::vector<double>{}), std::invalid_argument);
}

TEST(PairwiseLoss, StrictlyDecreasingInPositive) {
  const std::vector<double> negs = {0.1, -0.4, 0.7};
  double prev = pairwise_loss(-3.0, negs);
  for (double s = -2.9; s < 3.0; s += 0.1) {
    const double cur = pairwise_loss(s, negs);
    EXPECT_LT(cur, prev);
    prev = cur;
  }
}

TEST(PairwiseLoss, ModelModeNeedsNegatives) {
  AlignConfig c = small_config();
  c.loss = AlignLoss::Pairwise;
  const AlignModel m = init_align_model(c);
  auto batch = synthetic_pairs(2, 1, c.text_hash_buckets, 6);
  batch[1].negatives.clear();
  EXPECT_THROW(batch_loss(m, batch), std::invalid_argument);
}

TEST(GradCheck, InBatchEveryTensor) {
  for (int heads : {1, 4}) {
    const AlignModel m = init_align_model(small_config(16, heads));
    const auto batch = synthetic_pairs(4, 2, 512, 6);
    Rng rng(11);
    const GradCheckReport r = grad_check(m, batch, 1e-5, rng);
    ASSERT_EQ(r.tensors.size(), 13u);
    for (const auto& t : r.tensors) {
      EXPECT_LT(t.max_rel_error, 1e-4) << t.tensor;
      EXPECT_GE(t.checked, std::min<std::size_t>(50, t.tensor == "log_temperature" ? 1 : 50)) << t.tensor;
    }
  }
}

TEST(GradCheck, PairwiseEveryTensor) {
  AlignConfig c = small_config(16, 2);
  c.loss = AlignLoss::Pairwise;
  const AlignModel m = init_align_model(c);
  const auto batch = synthetic_pairs(3, 4, 512, 6);
  Rng rng(12);
  EXPECT_LT(grad_check(m, batch, 1e-5, rng).max_rel_error, 1e-4);
}

TEST(GradCheck, CorruptedQueryGradientIsDetected) {
  const AlignModel m = init_align_model(small_config());
  const auto batch = synthetic_pairs(4, 2, 512, 6);
  Rng rng(13);
  const GradCheckReport r = grad_check(m, batch, 1e-5, rng, 50, [](AlignGrads& g) { g.m2t.wq *= 1.05; });
  EXPECT_FALSE(r.passed());
  for (const auto& t : r.tensors) {
    if (t.tensor == "m2t.wq") {
      EXPECT_GT(t.max_rel_error, 1e-3);
    } else {
      EXPECT_LT(t.max_rel_error, 1e-4) << t.tensor;
    }
  }
}

TEST(GradCheck, ZeroLossBatchPassesVacuously) {
  // Uniform attention and identity maps send each side's summary to the mean
  // of the other side's states; basis-vector states then give S = I / 0.01.
  AlignConfig c = small_config(4);
  AlignModel m = init_align_model(c);
  for (AttentionWeights* a : {&m.m2t, &m.t2m}) {
    a->wq.setZero();
    a->wk.setZero();
    a->wv.setIdentity();
    a->wo.setIdentity();
  }
  m.music_head.setIdentity();
  m.text_head.setIdentity();
  m.log_temperature = std::log(0.001);
  std::vector<AlignExample> batch(2);
  for (int i = 0; i < 2; ++i) {
    batch[static_cast<std::size_t>(i)].music = {i};
    batch[static_cast<std::size_t>(i)].text = {i};
    m.music_embed.row(i) = RowVectorXd::Unit(4, i);
    m.text_embed.row(i) = RowVectorXd::Unit(4, i);
  }
  EXPECT_LT(batch_loss(m, batch), 1e-40);
  const BatchResult r = batch_loss_and_grad(m, batch);
  EXPECT_LT(grad_norm(m.parameters(), r.grads.refs()), 1e-30);
  Rng rng(14);
  EXPECT_TRUE(grad_check(m, batch, 1e-5, rng).passed());
}

TEST(Schedule, CosineEndpointsAndConstant) {
  EXPECT_DOUBLE_EQ(scheduled_lr(Scheduler::Cosine, 1e-4, 5e-6, 0, 100), 1e-4);
  EXPECT_NEAR(scheduled_lr(Scheduler::Cosine, 1e-4, 5e-6, 100, 100), 5e-6, 1e-18);
  EXPECT_NEAR(scheduled_lr(Scheduler::Cosine, 1e-4, 5e-6, 50, 100), (1e-4 + 5e-6) / 2, 1e-18);
  for (long s : {0L, 17L, 99L}) EXPECT_EQ(scheduled_lr(Scheduler::Constant, 1e-4, 5e-6, s, 100), 1e-4);
  double prev = 1.0;
  for (long s = 0; s <= 40; ++s) {
    const double lr = scheduled_lr(Scheduler::Cosine, 1e-4, 5e-6, s, 40);
    EXPECT_LE(lr, prev);
    prev = lr;
  }
}

TEST(Train, SameSeedSameHistoryAndModel) {
  AlignConfig c = small_config();
  c.epochs = 3;
  c.batch_size = 4;
  const auto data = synthetic_pairs(10, 3, c.text_hash_buckets, 8);
  const auto val = synthetic_pairs(4, 9, c.text_hash_buckets, 8);
  const TrainResult a = train(data, val, c);
  const TrainResult b = train(data, val, c);
  EXPECT_EQ(a.history, b.history);
  EXPECT_TRUE(a.model == b.model);
  ASSERT_EQ(a.history.size(), 6u);
  EXPECT_EQ(a.history[0].split, "train");
  EXPECT_EQ(a.history[1].split, "validation");
  c.seed = 6;
  EXPECT_FALSE(train(data, val, c).model == a.model);
}

TEST(Train, ConstantScheduleStepsDownTheLoss) {
  AlignConfig c = small_config();
  c.scheduler = Scheduler::Constant;
  c.optimizer = OptimizerKind::Adam;
  c.epochs = 30;
  const auto data = synthetic_pairs(16, 3, c.text_hash_buckets, 8);
  const TrainResult r = train(data, {}, c);
  EXPECT_LT(r.history.back().loss, r.history.front().loss);
  for (const auto& h : r.history) EXPECT_TRUE(std::isfinite(h.loss));
}

TEST(Train, RejectsBadInput) {
  AlignConfig c = small_config();
  EXPECT_THROW(train(std::vector<AlignExample>{}, {}, c), std::invalid_argument);
  c.lr_min = 1.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = small_config(16, 3);
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(Train, FromSplitSetOfPairs) {
  SplitSet s;
  for (int i = 0; i < 6; ++i) {
    const std::string id = "p" + std::to_string(i) + ":0";
    const std::string music = "Bar_None\nBeat_0\nNote_Pitch_" + std::to_string(60 + i) +
                              "\nNote_Velocity_80\nNote_Duration_4\nEOS_None\n";
    s.train.push_back({id, music, "caption " + std::to_string(i), Polarity::Positive});
    s.train.push_back({id, music, "caption " + std::to_string(i + 1), Polarity::Negative});
  }
  AlignConfig c = small_config();
  c.epochs = 2;
  c.batch_size = 3;
  c.loss = AlignLoss::Pairwise;
  const TrainResult r = train(s, c);
  EXPECT_EQ(r.history.size(), 2u);
  const auto ex = align_examples(s.train, c.text_hash_buckets);
  ASSERT_EQ(ex.size(), 6u);
  EXPECT_EQ(ex[0].negatives.size(), 1u);
  EXPECT_EQ(ex[0].music.size(), 6u);
}

TEST(Checkpoint, RoundTripAndCsv) {
  AlignConfig c = small_config(8, 2);
  c.epochs = 1;
  const TrainResult r = train(synthetic_pairs(4, 1, c.text_hash_buckets, 4), {}, c);
  std::stringstream io;
  save_checkpoint(io, r.model);
  const AlignModel back = load_checkpoint(io);
  EXPECT_TRUE(back == r.model);
  EXPECT_EQ(back.config.heads, 2);
  std::stringstream bad("garbage");
  EXPECT_THROW(load_checkpoint(bad), std::runtime_error);
  std::ostringstream csv;
  write_loss_csv(csv, r.history);
  EXPECT_EQ(csv.str().rfind("epoch,split,loss\n1,train,", 0), 0u);
}
