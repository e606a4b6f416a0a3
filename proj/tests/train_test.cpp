#include <gtest/gtest.h>

#include "support/test_support.hpp"

using namespace rlpm;
using namespace rlpm::testing;

TEST(Train, ZeroEpochsIsNoOp) {
  NetworkGraph net = blob_classifier(1);
  auto data = blob_dataset(10, 2);
  TrainResult r = train_toy(net, data, 0, 0.1);
  for (std::size_t i = 0; i < net.size(); ++i) {
    if (!net.layer(i).weights) continue;
    EXPECT_EQ(*r.net.layer(i).weights, *net.layer(i).weights);
    EXPECT_EQ(*r.net.layer(i).bias, *net.layer(i).bias);
  }
}

TEST(Train, Errors) {
  NetworkGraph net = blob_classifier(1);
  EXPECT_THROW(train_toy(net, {}, 1, 0.1), InputError);
  EXPECT_THROW(train_toy(net, blob_dataset(2, 1), 1, 0.0), InputError);
  auto bad = blob_dataset(2, 1);
  bad[1].label = 2;
  EXPECT_THROW(train_toy(net, bad, 1, 0.1), IndexError);
}

TEST(Train, LogisticOnSeparableData) {
  Rng rng(3);
  std::uniform_real_distribution<double> u(-1, 1);
  std::vector<LabeledExample> data;
  // Separated by the line x0 + 2 x1 = 0.3 with a margin of 0.1.
  while (data.size() < 100) {
    const double a = u(rng), b = u(rng);
    const double s = a + 2 * b - 0.3;
    if (std::abs(s) < 0.1) continue;
    data.push_back({Tensor::vector({a, b}), s > 0 ? 1u : 0u});
  }
  NetworkGraph net("logistic", {2}, {layers::dense("d", Tensor({2, 2}), Tensor({2})), layers::softmax("sm")});
  TrainResult r = train_toy(net, data, 200, 0.5, 7);
  EXPECT_GE(r.accuracy, 0.95);
  EXPECT_DOUBLE_EQ(r.accuracy, accuracy(r.net, data));
}

TEST(Train, BlobGeneratorIsSeparableByPixelSum) {
  auto data = blob_dataset(400, 5);
  std::size_t hits = 0;
  for (const auto& ex : data) {
    const double mean = ex.input.sum() / static_cast<double>(ex.input.size());
    hits += (mean > 0.5 ? 1u : 0u) == ex.label;
  }
  EXPECT_GE(static_cast<double>(hits) / 400.0, 0.95);
}

TEST(Train, BlobConvNetReachesNinetyPercent) {
  auto data = blob_dataset(200, 6);
  TrainResult r = train_toy(blob_classifier(7), data, 5, 0.01, 8);
  EXPECT_GE(r.accuracy, 0.9);
  EXPECT_GE(accuracy(r.net, blob_dataset(200, 9)), 0.9);
}

TEST(Train, DeterministicForSeed) {
  auto data = blob_dataset(20, 6);
  TrainResult a = train_toy(blob_classifier(7), data, 2, 0.01, 3);
  TrainResult b = train_toy(blob_classifier(7), data, 2, 0.01, 3);
  EXPECT_EQ(*a.net.layer(0).weights, *b.net.layer(0).weights);
  EXPECT_EQ(a.final_loss, b.final_loss);
}
