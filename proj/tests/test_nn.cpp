#include <doctest.h>

#include <cmath>
#include <vector>

#include "fedclust/errors.hpp"
#include "fedclust/nn.hpp"
#include "oracles.hpp"

using namespace fedclust;
using nn::Index;

TEST_SUITE("nn") {
  TEST_CASE("init_model shapes, zero biases and determinism") {
    const auto single = nn::init_model({4, 3}, 7);
    REQUIRE(single.num_layers() == 1);
    CHECK(single.layers[0].weights.rows() == 3);
    CHECK(single.layers[0].weights.cols() == 4);
    CHECK(single.layers[0].biases.size() == 3);
    CHECK(single.layers[0].biases.isZero(0.0));
    CHECK(single.layers[0].weights.cwiseAbs().maxCoeff() <= 0.5);  // 1/sqrt(4)

    const auto deep = nn::init_model({8, 16, 10}, 3);
    REQUIRE(deep.num_layers() == 2);
    CHECK(deep.layers[0].weights.rows() == 16);
    CHECK(deep.layers[0].weights.cols() == 8);
    CHECK(deep.layers[1].weights.rows() == 10);
    CHECK(deep.layers[1].weights.cols() == 16);
    CHECK_NOTHROW(deep.validate());

    CHECK(nn::init_model({8, 16, 10}, 3) == deep);
    CHECK_FALSE(nn::init_model({8, 16, 10}, 4) == deep);

    CHECK_THROWS_AS(nn::init_model({4}, 1), ConfigError);
    CHECK_THROWS_AS(nn::init_model({4, 0}, 1), ConfigError);
  }

  TEST_CASE("forward: zero model, identity layer, nested-loop oracle") {
    nn::Model zero;
    zero.layers = {nn::Layer::zeros(5, 3), nn::Layer::zeros(4, 5)};
    const Eigen::MatrixXd x = Eigen::MatrixXd::Random(6, 3);
    CHECK(nn::forward(zero, x).isZero(0.0));

    nn::Model identity;
    identity.layers = {{Eigen::MatrixXd::Identity(3, 3), Eigen::VectorXd::Zero(3)}};
    CHECK(nn::forward(identity, x) == x);

    oracle::Gen gen(11);
    for (int trial = 0; trial < 20; ++trial) {
      const auto model = gen.model({gen.dim(1, 6), gen.dim(1, 7), gen.dim(2, 5)},
                                   trial % 2 ? nn::Activation::Tanh : nn::Activation::ReLU);
      const Eigen::MatrixXd in = gen.matrix(gen.dim(1, 5), model.in_dim());
      const Eigen::MatrixXd got = nn::forward(model, in);
      const Eigen::MatrixXd want = oracle::forward_loops(model, in);
      CHECK((got - want).cwiseAbs().maxCoeff() < 1e-12);
    }

    CHECK_THROWS_AS(nn::forward(zero, Eigen::MatrixXd::Zero(2, 4)), ShapeError);
  }

  TEST_CASE("float instantiation") {
    const auto model = nn::init_model<float>({3, 4, 2}, 5);
    const Eigen::MatrixXf x = Eigen::MatrixXf::Ones(2, 3);
    const std::vector<int> y{0, 1};
    const auto lg = nn::loss_and_gradients(model, x, y, nullptr, 0.0f);
    CHECK(std::isfinite(lg.loss));
    CHECK(nn::flatten_layer(model, 1).size() == 2 * 4 + 2);
  }

  TEST_CASE("zero model loss is ln(C)") {
    oracle::Gen gen(3);
    for (Index classes : {2, 3, 10}) {
      nn::Model zero;
      zero.layers = {nn::Layer::zeros(6, 4), nn::Layer::zeros(classes, 6)};
      for (int trial = 0; trial < 10; ++trial) {
        const Index batch = gen.dim(1, 9);
        const auto x = gen.matrix(batch, 4);
        const auto y = gen.labels(batch, static_cast<int>(classes));
        const auto lg = nn::loss_and_gradients(zero, x, y, nullptr, 0.0);
        CHECK(lg.loss == doctest::Approx(std::log(static_cast<double>(classes))).epsilon(1e-12));
        CHECK(std::abs(lg.loss - std::log(static_cast<double>(classes))) < 1e-9);
      }
    }
    nn::Model ten;
    ten.layers = {nn::Layer::zeros(10, 3)};
    const auto lg = nn::loss_and_gradients(ten, Eigen::MatrixXd::Ones(1, 3), std::vector<int>{4},
                                           nullptr, 0.0);
    CHECK(lg.loss == doctest::Approx(2.302585).epsilon(1e-6));
  }

  TEST_CASE("proximal term") {
    oracle::Gen gen(5);
    const auto model = gen.model({3, 5, 4});
    const auto other = gen.model({3, 5, 4});
    const auto x = gen.matrix(7, 3);
    const auto y = gen.labels(7, 4);
    const auto plain = nn::loss_and_gradients(model, x, y, nullptr, 0.0);

    // mu = 0 ignores the anchor entirely
    const auto with_anchor = nn::loss_and_gradients(model, x, y, &other, 0.0);
    CHECK(with_anchor.loss == plain.loss);
    for (std::size_t k = 0; k < plain.gradients.size(); ++k)
      CHECK(with_anchor.gradients[k] == plain.gradients[k]);

    // anchored at itself the term vanishes exactly
    const auto self = nn::loss_and_gradients(model, x, y, &model, 3.0);
    CHECK(self.loss == plain.loss);

    const auto prox = nn::loss_and_gradients(model, x, y, &other, 0.5);
    CHECK(prox.loss ==
          doctest::Approx(plain.loss + 0.25 * nn::squared_distance(model, other)).epsilon(1e-12));

    CHECK_THROWS_AS(nn::loss_and_gradients(model, x, y, nullptr, 0.5), ShapeError);
    const auto wrong = gen.model({3, 4, 4});
    CHECK_THROWS_AS(nn::loss_and_gradients(model, x, y, &wrong, 0.5), ShapeError);
  }

  TEST_CASE("backprop matches central finite differences") {
    oracle::Gen gen(2024);
    for (int trial = 0; trial < 30; ++trial) {
      const auto act = trial % 3 == 0 ? nn::Activation::Tanh : nn::Activation::ReLU;
      const auto model = gen.model({gen.dim(1, 5), gen.dim(1, 6), gen.dim(2, 5)}, act);
      const auto anchor = gen.model({model.in_dim(), model.layers[0].out_dim(), model.num_classes()}, act);
      const double mu = trial % 2 ? 0.3 : 0.0;
      const Index batch = gen.dim(1, 6);
      const auto x = gen.matrix(batch, model.in_dim());
      const auto y = gen.labels(batch, static_cast<int>(model.num_classes()));
      CAPTURE(trial);
      CHECK(oracle::max_gradient_error(model, x, y, &anchor, mu) < 1e-4);
    }
  }

  TEST_CASE("sgd_step arithmetic") {
    oracle::Gen gen(9);
    const auto model = gen.model({3, 4, 2});
    nn::Gradients<double> zero_grads;
    for (const auto& l : model.layers) zero_grads.push_back(nn::Layer::zeros(l.out_dim(), l.in_dim()));
    CHECK(nn::sgd_step(model, zero_grads, 0.5) == model);

    nn::Gradients<double> grads;
    for (const auto& l : model.layers)
      grads.push_back({gen.matrix(l.out_dim(), l.in_dim()), gen.matrix(l.out_dim(), 1)});
    CHECK(nn::sgd_step(model, grads, 0.0) == model);

    nn::Model scalar;
    scalar.layers = {{Eigen::MatrixXd::Constant(1, 1, 1.0), Eigen::VectorXd::Zero(1)}};
    nn::Gradients<double> g{{Eigen::MatrixXd::Constant(1, 1, 2.0), Eigen::VectorXd::Zero(1)}};
    const auto stepped = nn::sgd_step(scalar, g, 0.1);
    CHECK(stepped.layers[0].weights(0, 0) == doctest::Approx(0.8).epsilon(1e-15));

    nn::Gradients<double> bad{nn::Layer::zeros(2, 2)};
    CHECK_THROWS_AS(nn::sgd_step(scalar, bad, 0.1), ShapeError);
    CHECK_THROWS_AS(nn::sgd_step(model, g, 0.1), ShapeError);
  }

  TEST_CASE("local_train contracts") {
    oracle::Gen gen(17);
    const auto model = gen.model({4, 6, 3});
    const auto x = gen.matrix(30, 4);
    const auto y = gen.labels(30, 3);
    std::vector<std::size_t> shard{0, 2, 3, 5, 7, 11, 13, 17, 19, 23, 29};

    nn::TrainConfig cfg;
    cfg.batch_size = 4;
    cfg.learning_rate = 0.1;
    cfg.seed = 99;

    cfg.local_epochs = 0;
    CHECK(nn::local_train(model, x, y, shard, cfg) == model);

    cfg.local_epochs = 3;
    const auto a = nn::local_train(model, x, y, shard, cfg);
    const auto b = nn::local_train(model, x, y, shard, cfg);
    CHECK(a == b);
    CHECK_FALSE(a == model);
    cfg.seed = 100;
    CHECK_FALSE(nn::local_train(model, x, y, shard, cfg) == a);

    SUBCASE("full batch equals one step on the full-shard gradient") {
      nn::TrainConfig full;
      full.local_epochs = 1;
      full.batch_size = shard.size();
      full.learning_rate = 0.2;
      full.seed = 1;
      const auto trained = nn::local_train(model, x, y, shard, full);

      Eigen::MatrixXd xs(static_cast<Index>(shard.size()), 4);
      std::vector<int> ys;
      for (std::size_t i = 0; i < shard.size(); ++i) {
        xs.row(static_cast<Index>(i)) = x.row(static_cast<Index>(shard[i]));
        ys.push_back(y[shard[i]]);
      }
      const auto lg = nn::loss_and_gradients(model, xs, ys, nullptr, 0.0);
      const auto expected = nn::sgd_step(model, lg.gradients, 0.2);
      CHECK(std::sqrt(nn::squared_distance(trained, expected)) < 1e-12);
    }

    SUBCASE("proximal anchor only matters when mu > 0") {
      const auto anchor = gen.model({4, 6, 3});
      nn::TrainConfig plain = cfg;
      plain.prox_mu = 0.0;
      CHECK(nn::local_train(model, x, y, shard, plain, &anchor) ==
            nn::local_train(model, x, y, shard, plain));
      nn::TrainConfig prox = cfg;
      prox.prox_mu = 1.0;
      CHECK_FALSE(nn::local_train(model, x, y, shard, prox, &anchor) ==
                  nn::local_train(model, x, y, shard, plain));
      CHECK_THROWS_AS(nn::local_train(model, x, y, shard, prox), ConfigError);
    }

    CHECK_THROWS_AS(nn::local_train(model, x, y, std::vector<std::size_t>{}, cfg), DataError);
    CHECK_THROWS_AS(nn::local_train(model, x, y, std::vector<std::size_t>{30}, cfg), DataError);
    auto bad_labels = y;
    bad_labels[0] = 3;
    CHECK_THROWS_AS(nn::local_train(model, x, bad_labels, std::vector<std::size_t>{0}, cfg), DataError);
    nn::TrainConfig zero_batch = cfg;
    zero_batch.batch_size = 0;
    CHECK_THROWS_AS(nn::local_train(model, x, y, shard, zero_batch), ConfigError);
  }

  TEST_CASE("flatten_layer layout and round trip") {
    nn::Model m;
    nn::Layer layer;
    layer.weights.resize(2, 2);
    layer.weights << 1, 2, 3, 4;
    layer.biases.resize(2);
    layer.biases << 5, 6;
    m.layers = {layer};
    Eigen::VectorXd expected(6);
    expected << 1, 2, 3, 4, 5, 6;
    CHECK(nn::flatten_layer(m, 0) == expected);

    nn::Model z;
    z.layers = {nn::Layer::zeros(3, 5)};
    const auto flat = nn::flatten_layer(z, 0);
    CHECK(flat.size() == 18);
    CHECK(flat.isZero(0.0));

    oracle::Gen gen(41);
    for (int trial = 0; trial < 100; ++trial) {
      const auto model = gen.model({gen.dim(1, 6), gen.dim(1, 6), gen.dim(1, 6)});
      for (std::size_t k = 0; k < model.num_layers(); ++k) {
        const auto& l = model.layers[k];
        const auto v = nn::flatten_layer(model, k);
        CHECK(v.size() == l.out_dim() * l.in_dim() + l.out_dim());
        CHECK(nn::unflatten_layer(v, l.out_dim(), l.in_dim()) == l);
      }
    }
    CHECK_THROWS_AS(nn::flatten_layer(m, 1), ConfigError);
    CHECK_THROWS_AS(nn::unflatten_layer(expected, 2, 3), ShapeError);
  }

  TEST_CASE("loss_and_gradients rejects bad labels") {
    const auto model = nn::init_model({2, 3}, 1);
    const Eigen::MatrixXd x = Eigen::MatrixXd::Ones(2, 2);
    CHECK_THROWS_AS(nn::loss_and_gradients(model, x, std::vector<int>{0, 3}, nullptr, 0.0), DataError);
    CHECK_THROWS_AS(nn::loss_and_gradients(model, x, std::vector<int>{0, -1}, nullptr, 0.0), DataError);
    CHECK_THROWS_AS(nn::loss_and_gradients(model, x, std::vector<int>{0}, nullptr, 0.0), ShapeError);
  }

  TEST_CASE("argmax ties go to the smallest class") {
    Eigen::MatrixXd logits(3, 3);
    logits << 0, 0, 0, 1, 2, 2, 3, 1, 3;
    CHECK(nn::argmax_rows(logits) == std::vector<int>{0, 1, 0});
  }
}
