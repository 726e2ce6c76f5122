#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <fstream>

#include "featdesc/error.hpp"
#include "featdesc/featurizer.hpp"
#include "featdesc/rng.hpp"
#include "featdesc/tensor_store.hpp"
#include "support/reference_model.hpp"
#include "support/test_env.hpp"

using namespace featdesc;

namespace {

Eigen::VectorXd random_vector(Rng& rng, int n) {
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v[i] = rng.gaussian();
  return v;
}

Featurizer random_sae(Rng& rng, int d, int k, SaeActivation activation, int top_k = 0) {
  Eigen::MatrixXd w_enc(d, k), w_dec(k, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < k; ++j) w_enc(i, j) = rng.gaussian();
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < d; ++j) w_dec(i, j) = rng.gaussian();
  Eigen::VectorXd b_enc = random_vector(rng, k);
  Eigen::VectorXd b_dec = random_vector(rng, d);
  Eigen::VectorXd threshold;
  if (activation == SaeActivation::JumpReLU) {
    threshold = random_vector(rng, k).cwiseAbs();
  }
  return Featurizer::sae(w_enc, b_enc, w_dec, b_dec, activation, threshold, top_k);
}

}  // namespace

TEST_CASE("identity-weight ReLU SAE rectifies") {
  Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(2, 2);
  Featurizer f = Featurizer::sae(eye, Eigen::VectorXd::Zero(2), eye, Eigen::VectorXd::Zero(2),
                                 SaeActivation::ReLU);
  Eigen::VectorXd v(2);
  v << 1.0, -2.0;
  Eigen::VectorXd a = f.encode(v);
  CHECK(a[0] == 1.0);
  CHECK(a[1] == 0.0);
}

TEST_CASE("JumpReLU zeroes activations at or below the threshold") {
  Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(3, 3);
  Eigen::VectorXd theta = Eigen::VectorXd::Constant(3, 0.5);
  Featurizer f = Featurizer::sae(eye, Eigen::VectorXd::Zero(3), eye, Eigen::VectorXd::Zero(3),
                                 SaeActivation::JumpReLU, theta);
  Eigen::VectorXd v(3);
  v << 0.4, 0.5, 0.6;
  Eigen::VectorXd a = f.encode(v);
  CHECK(a[0] == 0.0);
  CHECK(a[1] == 0.0);  // boundary stays closed
  CHECK(a[2] == 0.6);
}

TEST_CASE("toy SAE encode matches the loop-based oracle") {
  testenv::ScratchDir dir("featurizer_oracle");
  Rng rng(31);
  for (auto [activation, name, top_k] :
       {std::tuple{SaeActivation::ReLU, "relu", 0}, {SaeActivation::JumpReLU, "jumprelu", 0},
        {SaeActivation::TopK, "topk", 3}}) {
    Featurizer f = random_sae(rng, 16, 8, activation, top_k);
    const std::string path = dir.file(std::string(name) + ".safetensors");
    f.save_sae(path);
    reference::RefSae ref = reference::load_ref_sae(path, name, top_k);
    for (int trial = 0; trial < 20; ++trial) {
      Eigen::VectorXd v = random_vector(rng, 16);
      Eigen::VectorXd got = f.encode(v);
      reference::Vec want = reference::ref_encode(ref, {v.data(), v.data() + v.size()});
      for (int i = 0; i < 8; ++i) {
        CHECK(got[i] == doctest::Approx(want[static_cast<size_t>(i)]).epsilon(1e-6));
      }
    }
  }
}

TEST_CASE("feature_vector is the decoder row, not the decoder bias") {
  testenv::ScratchDir dir("featurizer_rows");
  Rng rng(32);
  Featurizer f = random_sae(rng, 16, 8, SaeActivation::ReLU);
  const std::string path = dir.file("sae.safetensors");
  f.save_sae(path);
  TensorStore raw = TensorStore::load(path);
  for (int i : {0, 3, 7}) {
    Eigen::VectorXd row = raw.vector_slice("W_dec", i);
    CHECK((f.feature_vector(i) - row).norm() == 0.0);
  }

  Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(4, 4);
  Featurizer ident = Featurizer::sae(eye, Eigen::VectorXd::Zero(4), eye,
                                     Eigen::VectorXd::Ones(4), SaeActivation::ReLU);
  Eigen::VectorXd e3 = ident.feature_vector(3);
  CHECK(e3[3] == 1.0);
  CHECK(e3.sum() == 1.0);  // b_dec excluded
}

TEST_CASE("neuron featurizer is the identity with basis feature vectors") {
  Featurizer f = Featurizer::neuron(16);
  Rng rng(33);
  Eigen::VectorXd v = random_vector(rng, 16);
  CHECK((f.encode(v) - v).norm() == 0.0);
  Eigen::VectorXd e5 = f.feature_vector(5);
  CHECK(e5[5] == 1.0);
  CHECK(e5.norm() == 1.0);
}

TEST_CASE("clamp to the current activation is a no-op") {
  Rng rng(34);
  Featurizer f = random_sae(rng, 16, 8, SaeActivation::ReLU);
  for (int trial = 0; trial < 100; ++trial) {
    Eigen::VectorXd v = random_vector(rng, 16);
    const int idx = static_cast<int>(rng.below(8));
    Eigen::VectorXd v2 = f.clamp_edit(v, idx, f.encode(v)[idx]);
    CHECK((v2 - v).norm() == 0.0);
  }
}

TEST_CASE("neuron clamp sets the coordinate") {
  Featurizer f = Featurizer::neuron(3);
  Eigen::VectorXd v(3);
  v << 1.0, 2.0, 3.0;
  Eigen::VectorXd v2 = f.clamp_edit(v, 1, 9.0);
  CHECK(v2[0] == 1.0);
  CHECK(v2[1] == 9.0);
  CHECK(v2[2] == 3.0);
}

TEST_CASE("unit enc-dec alignment makes the re-encoded activation equal m") {
  // encoder column f equals decoder row f with unit norm, so w_enc_f . d_f = 1
  Rng rng(35);
  const int d = 16, k = 6;
  Eigen::MatrixXd w_dec(k, d);
  for (int i = 0; i < k; ++i) {
    Eigen::VectorXd row = random_vector(rng, d);
    w_dec.row(i) = (row / row.norm()).transpose();
  }
  Featurizer f = Featurizer::sae(w_dec.transpose(), Eigen::VectorXd::Constant(k, 0.5), w_dec,
                                 Eigen::VectorXd::Zero(d), SaeActivation::ReLU);
  for (int trial = 0; trial < 50; ++trial) {
    Eigen::VectorXd v = random_vector(rng, d);
    const int idx = static_cast<int>(rng.below(k));
    if (f.encode(v)[idx] <= 0.0) continue;  // needs a positive pre-activation
    const double m = 2.5;
    Eigen::VectorXd edited = f.clamp_edit(v, idx, m);
    CHECK(f.encode(edited)[idx] == doctest::Approx(m).epsilon(1e-5));
  }
}

TEST_CASE("clamp moves the vector only along the feature direction") {
  Rng rng(36);
  Featurizer f = random_sae(rng, 16, 8, SaeActivation::ReLU);
  for (int trial = 0; trial < 50; ++trial) {
    Eigen::VectorXd v = random_vector(rng, 16);
    const int idx = static_cast<int>(rng.below(8));
    Eigen::VectorXd delta = f.clamp_edit(v, idx, 4.0) - v;
    if (delta.norm() == 0.0) continue;
    const double cosine =
        std::abs(delta.dot(f.feature_vector(idx))) / (delta.norm() * f.feature_vector(idx).norm());
    CHECK(cosine == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("encode is non-negative for every SAE activation kind") {
  Rng rng(37);
  for (auto [activation, top_k] : {std::pair{SaeActivation::ReLU, 0},
                                   {SaeActivation::JumpReLU, 0},
                                   {SaeActivation::TopK, 4}}) {
    Featurizer f = random_sae(rng, 12, 10, activation, top_k);
    for (int trial = 0; trial < 50; ++trial) {
      Eigen::VectorXd a = f.encode(random_vector(rng, 12));
      CHECK(a.minCoeff() >= 0.0);
    }
  }
}

TEST_CASE("TopK keeps at most K activations") {
  Rng rng(38);
  Featurizer f = random_sae(rng, 12, 10, SaeActivation::TopK, 3);
  for (int trial = 0; trial < 50; ++trial) {
    Eigen::VectorXd a = f.encode(random_vector(rng, 12));
    CHECK((a.array() != 0.0).count() <= 3);
  }
}

TEST_CASE("negative clamp values are permitted") {
  Rng rng(39);
  Featurizer f = random_sae(rng, 8, 4, SaeActivation::ReLU);
  Eigen::VectorXd v = random_vector(rng, 8);
  CHECK_NOTHROW(f.clamp_edit(v, 2, -5.0));
}

TEST_CASE("dimension and index errors") {
  Rng rng(40);
  Featurizer f = random_sae(rng, 8, 4, SaeActivation::ReLU);
  Eigen::VectorXd bad = random_vector(rng, 7);
  CHECK_THROWS_AS(f.encode(bad), Error);
  CHECK_THROWS_AS(f.feature_vector(4), Error);
  CHECK_THROWS_AS(f.clamp_edit(random_vector(rng, 8), 9, 1.0), Error);
}

TEST_CASE("manifest loading validates the declared width") {
  testenv::ScratchDir dir("featurizer_manifest");
  Rng rng(41);
  Featurizer f = random_sae(rng, 16, 8, SaeActivation::ReLU);
  f.save_sae(dir.file("sae.safetensors"));
  {
    std::ofstream out(dir.file("manifest.json"));
    out << R"({"saes": {"s": {"file": "sae.safetensors",
                              "site": {"kind": "ResidualPost", "layer": 1},
                              "activation": "relu", "k": 8}}})";
  }
  FeaturizerSet set = FeaturizerSet::load(dir.file("manifest.json"));
  CHECK(set.has("s"));
  CHECK(set.featurizer("s").feature_count() == 8);
  CHECK(set.site("s") == HookSite{HookKind::ResidualPost, 1});

  {
    std::ofstream out(dir.file("bad.json"));
    out << R"({"saes": {"s": {"file": "sae.safetensors",
                              "site": {"kind": "ResidualPost", "layer": 1},
                              "activation": "relu", "k": 16}}})";
  }
  CHECK_THROWS_AS(FeaturizerSet::load(dir.file("bad.json")), Error);
}
