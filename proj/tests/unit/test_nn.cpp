#include <catch_amalgamated.hpp>

#include <cmath>

#include "realmix/nn.hpp"
#include "realmix/ssl.hpp"
#include "realmix/synth.hpp"
#include "realmix/train.hpp"
#include "test_helpers.hpp"

using namespace realmix;
using realmix::testing::collect_gradient;
using realmix::testing::fd_gradient;
using realmix::testing::relative_error;

namespace {

ImageBatch random_images(int n, int side, uint64_t seed) {
  ImageBatch b(n, 1, side, side);
  Rng rng(seed);
  for (auto& v : b.data) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  return b;
}

}  // namespace

TEST_CASE("same seed builds identical models; different seeds differ") {
  SmallConvNet a(1, 8, 4, 3, 11), b(1, 8, 4, 3, 11), c(1, 8, 4, 3, 12);
  for (size_t t = 0; t < a.params().tensors.size(); ++t) {
    REQUIRE(a.params().tensors[t].v == b.params().tensors[t].v);
  }
  REQUIRE_FALSE(a.params().tensors[0].v == c.params().tensors[0].v);
}

TEST_CASE("forward yields one valid distribution per input") {
  SmallConvNet model(1, 12, 10, 6, 3);
  ImageBatch batch = random_images(7, 12, 5);
  Matrix probs = model.forward(batch, false);
  REQUIRE(probs.rows == 7);
  REQUIRE(probs.cols == 10);
  for (int i = 0; i < probs.rows; ++i) REQUIRE(is_prob_vector(probs.row(i), 1e-9));
}

TEST_CASE("untrained model sits at chance level") {
  auto data = make_synthetic_dataset(4, 40, 99);  // balanced 10-class test set
  double err_sum = 0.0;
  for (uint64_t seed : {1ull, 2ull, 3ull}) {
    SmallConvNet model(1, 12, 10, 8, seed);
    err_sum += evaluate(model, data.test);
  }
  REQUIRE(err_sum / 3.0 == Catch::Approx(0.9).margin(0.05));
}

TEST_CASE("reference model parameter count tracks the width contract") {
  auto model = build_reference_model(10, 28, 1, /*in_channels=*/1, /*side=*/32);
  const size_t count = model->params().total_count();
  REQUIRE(count > 90'000);
  REQUIRE(count < 130'000);
  REQUIRE(model->params().tensors.size() == 12);  // 5 conv + 1 fc, weights + biases
}

TEST_CASE("model rejects bad geometry") {
  REQUIRE_THROWS_AS(SmallConvNet(1, 10, 4, 3, 1), ValidationError);  // side not /4
  REQUIRE_THROWS_AS(SmallConvNet(1, 8, 1, 3, 1), ValidationError);   // K < 2
  SmallConvNet model(1, 8, 4, 3, 1);
  ImageBatch wrong = random_images(2, 12, 1);
  REQUIRE_THROWS_AS(model.forward(wrong, false), ValidationError);
}

TEST_CASE("backward matches finite differences through the whole network") {
  // tiny model, soft-target cross-entropy head
  SmallConvNet model(1, 8, 3, 2, 21);
  REQUIRE(model.params().total_count() <= 1000);
  ImageBatch batch = random_images(4, 8, 77);
  Matrix targets(4, 3);
  Rng trng(3);
  for (int i = 0; i < 4; ++i) {
    double sum = 0.0;
    for (int c = 0; c < 3; ++c) {
      targets.at(i, c) = trng.uniform() + 0.1;
      sum += targets.at(i, c);
    }
    for (int c = 0; c < 3; ++c) targets.at(i, c) /= sum;
  }

  auto loss_value = [&]() {
    Matrix probs = model.forward(batch, true);
    return supervised_loss(probs, targets).mean;
  };

  model.zero_grad();
  Matrix probs = model.forward(batch, true);
  PerSampleLoss ce = supervised_loss(probs, targets);
  Matrix dprobs(4, 3);
  for (int i = 0; i < 4; ++i)
    for (int c = 0; c < 3; ++c)
      dprobs.at(i, c) = -targets.at(i, c) / std::max(probs.at(i, c), kLogEps) / 4.0;
  model.backward(dprobs);

  auto analytic = collect_gradient(model.params());
  auto numeric = fd_gradient(model.params(), loss_value);
  REQUIRE(relative_error(analytic, numeric) < 1e-6);
  (void)ce;
}

TEST_CASE("backward matches finite differences for an MSE head") {
  SmallConvNet model(1, 8, 3, 2, 4);
  ImageBatch batch = random_images(3, 8, 13);
  Matrix targets(3, 3);
  for (int i = 0; i < 3; ++i) targets.at(i, i % 3) = 1.0;

  auto loss_value = [&]() {
    Matrix probs = model.forward(batch, true);
    std::vector<double> mse = unsupervised_loss(probs, targets);
    double sum = 0.0;
    for (double v : mse) sum += v;
    return sum / 3.0;
  };

  model.zero_grad();
  Matrix probs = model.forward(batch, true);
  Matrix dprobs(3, 3);
  for (int i = 0; i < 3; ++i)
    for (int c = 0; c < 3; ++c)
      dprobs.at(i, c) = 2.0 * (probs.at(i, c) - targets.at(i, c)) / (3.0 * 3.0);
  model.backward(dprobs);

  auto analytic = collect_gradient(model.params());
  auto numeric = fd_gradient(model.params(), loss_value);
  REQUIRE(relative_error(analytic, numeric) < 1e-6);
}

TEST_CASE("clone is deep and independent") {
  SmallConvNet model(1, 8, 4, 3, 9);
  auto copy = model.clone();
  copy->params().tensors[0].v[0] += 1.0;
  REQUIRE(model.params().tensors[0].v[0] != copy->params().tensors[0].v[0]);

  ImageBatch batch = random_images(2, 8, 1);
  Matrix p1 = model.forward(batch, false);
  Matrix p2 = copy->forward(batch, false);
  REQUIRE_FALSE(p1.d == p2.d);
}

TEST_CASE("load_trunk copies conv weights and keeps the head") {
  SmallConvNet donor(1, 8, 4, 3, 100);  // 4-way head
  SmallConvNet target(1, 8, 6, 3, 200); // 6-way head
  const auto head_before = target.params().find("fc.w")->v;
  target.load_trunk(donor.params());
  REQUIRE(target.params().find("conv1.w")->v == donor.params().find("conv1.w")->v);
  REQUIRE(target.params().find("conv5.b")->v == donor.params().find("conv5.b")->v);
  REQUIRE(target.params().find("fc.w")->v == head_before);

  SmallConvNet mismatched(1, 8, 4, 5, 100);  // different width
  REQUIRE_THROWS_AS(target.load_trunk(mismatched.params()), ValidationError);
}
