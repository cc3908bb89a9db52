// Copyright 2026 The mrssm Authors
// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "mrssm/checkpoint.hpp"
#include "mrssm/grad_check.hpp"
#include "mrssm/model.hpp"
#include "mrssm/rng.hpp"

using namespace mrssm;

namespace {

ModelConfig small_config() {
  ModelConfig cfg;
  cfg.d_h = 8;
  cfg.d_s = 4;
  cfg.d_a = 2;
  cfg.d_embed = 16;
  cfg.conv_channels = {4, 8, 8};
  cfg.modalities = {
      {"vel", ModalityKind::kDense, {2}, 1.0f},
      {"cam", ModalityKind::kImage, {3, 8, 8}, 0.2f},
  };
  return cfg;
}

Mrssm make_model(std::uint64_t seed = 99) {
  Mrssm m(small_config());
  Rng rng(seed, "test-init");
  m.init_params(rng);
  return m;
}

void zero_params(Mrssm& m) {
  for (auto& [name, t] : m.params().all_mut()) {
    for (int i = 0; i < t.numel(); ++i) t[i] = 0.0f;
  }
}

}  // namespace

TEST_CASE("deterministic_step") {
  Mrssm model = make_model();
  Rng rng(1, "det");
  const Tensor h = rng.normal_tensor({2, 8});
  const Tensor s = rng.normal_tensor({2, 4});
  const Tensor a = rng.normal_tensor({2, 2});

  SUBCASE("same inputs give identical outputs, correct shape") {
    auto run = [&]() {
      Tape t;
      const auto b = model.bind(t, false);
      const Var out =
          model.deterministic_step(b, t.constant(h), t.constant(s), t.constant(a));
      return t.value(out);
    };
    const Tensor o1 = run(), o2 = run();
    CHECK(o1.shape() == std::vector<int>{2, 8});
    CHECK(std::memcmp(o1.data(), o2.data(), sizeof(float) * 16) == 0);
  }

  SUBCASE("all-zero weights halve the previous state") {
    zero_params(model);
    Tape t;
    const auto b = model.bind(t, false);
    const Var out = model.deterministic_step(b, t.constant(h), t.constant(s), t.constant(a));
    for (int i = 0; i < 16; ++i) {
      CHECK(t.value(out)[i] == doctest::Approx(0.5 * h[i]).epsilon(1e-6));
    }
  }

  SUBCASE("dimension mismatch rejected") {
    Tape t;
    const auto b = model.bind(t, false);
    CHECK_THROWS_AS(
        model.deterministic_step(b, t.constant(Tensor({2, 7})), t.constant(s), t.constant(a)),
        std::invalid_argument);
  }
}

TEST_CASE("prior_head") {
  Mrssm model = make_model();
  SUBCASE("stddev respects the softplus floor; deterministic") {
    Tape t;
    const auto b = model.bind(t, false);
    Rng rng(2, "prior");
    const Tensor h = rng.normal_tensor({3, 8});
    const DiagGaussian g1 = model.prior_head(b, t.constant(h));
    const DiagGaussian g2 = model.prior_head(b, t.constant(h));
    for (int i = 0; i < t.value(g1.stddev).numel(); ++i) {
      CHECK(t.value(g1.stddev)[i] >= kStddevFloor);
      CHECK(t.value(g1.stddev)[i] == t.value(g2.stddev)[i]);
      CHECK(t.value(g1.mean)[i] == t.value(g2.mean)[i]);
    }
  }
  SUBCASE("finite outputs for extreme inputs") {
    Rng rng(3, "prior-fuzz");
    Tape t;
    const auto b = model.bind(t, false);
    for (int rep = 0; rep < 200; ++rep) {
      Tensor h({1, 8});
      for (int i = 0; i < 8; ++i) h[i] = static_cast<float>(rng.uniform(-1e6, 1e6));
      const DiagGaussian g = model.prior_head(b, t.constant(h));
      CHECK(t.value(g.mean).all_finite());
      CHECK(t.value(g.stddev).all_finite());
    }
  }
}

TEST_CASE("encode_expert") {
  Mrssm model = make_model();
  SUBCASE("image expert produces a d_s gaussian; identical inputs match") {
    Rng rng(4, "enc");
    const Tensor img = rng.normal_tensor({1, 3, 8, 8});
    Tape t;
    const auto b = model.bind(t, false);
    const DiagGaussian g1 = model.encode_expert(b, 1, t.constant(img));
    const DiagGaussian g2 = model.encode_expert(b, 1, t.constant(img));
    CHECK(t.value(g1.mean).shape() == std::vector<int>{1, 4});
    for (int i = 0; i < 4; ++i) {
      CHECK(t.value(g1.mean)[i] == t.value(g2.mean)[i]);
      CHECK(t.value(g1.stddev)[i] == t.value(g2.stddev)[i]);
    }
  }
  SUBCASE("shape mismatch rejected") {
    Tape t;
    const auto b = model.bind(t, false);
    CHECK_THROWS_AS(model.encode_expert(b, 1, t.constant(Tensor({1, 3, 4, 4}))),
                    std::invalid_argument);
  }
  SUBCASE("gradient of the expert mean w.r.t. encoder weights") {
    Rng rng(5, "enc-grad");
    const Tensor img = rng.normal_tensor({1, 3, 8, 8}, 0.0, 0.5);
    // check a couple of parameter groups; the rest stay constants
    for (const std::string target : {"enc.cam.conv2.W", "enc.cam.head.W"}) {
      GraphFn fn = [&](Tape& t, std::span<const Var> leaves) {
        Mrssm::Bound b;
        b.tape = &t;
        for (const auto& [name, tensor] : model.params().all()) {
          b.p.emplace(name, name == target ? leaves[0] : t.constant(tensor));
        }
        const DiagGaussian g = model.encode_expert(b, 1, t.constant(img));
        return t.sum(g.mean);
      };
      const Tensor point[] = {model.params().at(target)};
      CHECK(grad_check(fn, point, 1e-3) < 1e-4);
    }
  }
}

TEST_CASE("decode") {
  Mrssm model = make_model();
  Rng rng(6, "dec");
  const Tensor h = rng.normal_tensor({2, 8});
  const Tensor s = rng.normal_tensor({2, 4});

  SUBCASE("mean has the modality shape; unit stddev makes log_prob affine in squared error") {
    Tape t;
    const auto b = model.bind(t, false);
    const DiagGaussian img = model.decode(b, 1, t.constant(h), t.constant(s));
    CHECK(t.value(img.mean).shape() == std::vector<int>{2, 3, 8, 8});
    const DiagGaussian vel = model.decode(b, 0, t.constant(h), t.constant(s));
    CHECK(t.value(vel.mean).shape() == std::vector<int>{2, 2});

    const Tensor x = rng.normal_tensor({2, 2});
    const Var lp = log_prob(t, vel, t.constant(x));
    for (int row = 0; row < 2; ++row) {
      double sq = 0;
      for (int i = 0; i < 2; ++i) {
        const double d = x[row * 2 + i] - t.value(vel.mean)[row * 2 + i];
        sq += d * d;
      }
      const double expected = -0.5 * sq - (2 / 2.0) * std::log(2 * M_PI);
      CHECK(t.value(lp)[row] == doctest::Approx(expected).epsilon(1e-5));
    }
  }
  SUBCASE("decoder gradients pass the finite-difference check") {
    for (const std::string target : {"dec.cam.deconv2.W", "dec.vel.out.W"}) {
      GraphFn fn = [&](Tape& t, std::span<const Var> leaves) {
        Mrssm::Bound b;
        b.tape = &t;
        for (const auto& [name, tensor] : model.params().all()) {
          b.p.emplace(name, name == target ? leaves[0] : t.constant(tensor));
        }
        const int mod = target.find("cam") != std::string::npos ? 1 : 0;
        const DiagGaussian g = model.decode(b, mod, t.constant(h), t.constant(s));
        return t.mean(t.square(g.mean));
      };
      const Tensor point[] = {model.params().at(target)};
      CHECK(grad_check(fn, point, 1e-3) < 1e-4);
    }
  }
}

TEST_CASE("filter_step") {
  Mrssm model = make_model();
  Rng rng(7, "filter");
  const Tensor noise({1, 4});

  auto initial = [&](Tape& t, const Mrssm::Bound& b) {
    return model.initial_state(b, 1, Tensor({1, 4}));
    (void)t;
  };

  SUBCASE("all-absent observations: posterior is the prior, bit-exactly") {
    Tape t;
    const auto b = model.bind(t, false);
    const LatentState prev = initial(t, b);
    ObsVars obs(2);
    const LatentState st =
        model.filter_step(b, prev, t.constant(rng.normal_tensor({1, 2})), obs, noise);
    CHECK(st.posterior.mean.idx == st.prior.mean.idx);
    CHECK(st.posterior.stddev.idx == st.prior.stddev.idx);
  }

  SUBCASE("an expert with stddev ~1e6 leaves the posterior within 1e-5 of the prior") {
    // zero head weights + a large raw-std bias make the dense expert flat
    Mrssm flat = make_model();
    Tensor& hw = flat.params().at("enc.vel.head.W");
    for (int i = 0; i < hw.numel(); ++i) hw[i] = 0.0f;
    Tensor& hb = flat.params().at("enc.vel.head.b");
    for (int i = 4; i < 8; ++i) hb[i] = 1e6f;  // raw std half

    Tape t;
    const auto b = flat.bind(t, false);
    const LatentState prev = flat.initial_state(b, 1, Tensor({1, 4}));
    const Tensor act = rng.normal_tensor({1, 2});
    ObsVars none(2), with_vel(2);
    with_vel[0] = t.constant(rng.normal_tensor({1, 2}));
    const LatentState st_none = flat.filter_step(b, prev, t.constant(act), none, noise);
    const LatentState st_flat = flat.filter_step(b, prev, t.constant(act), with_vel, noise);
    for (int i = 0; i < 4; ++i) {
      const float pm = t.value(st_none.posterior.mean)[i];
      const float ps = t.value(st_none.posterior.stddev)[i];
      CHECK(std::abs(t.value(st_flat.posterior.mean)[i] - pm) <= 1e-5f * std::max(1.0f, std::abs(pm)));
      CHECK(std::abs(t.value(st_flat.posterior.stddev)[i] - ps) <= 1e-5f * ps);
    }
  }

  SUBCASE("adding a modality never increases any posterior stddev component") {
    Tape t;
    const auto b = model.bind(t, false);
    const LatentState prev = initial(t, b);
    const Tensor act = rng.normal_tensor({1, 2});
    ObsVars one(2), two(2);
    one[0] = t.constant(rng.normal_tensor({1, 2}));
    two[0] = one[0];
    two[1] = t.constant(rng.normal_tensor({1, 3, 8, 8}));
    const LatentState st1 = model.filter_step(b, prev, t.constant(act), one, noise);
    const LatentState st2 = model.filter_step(b, prev, t.constant(act), two, noise);
    for (int i = 0; i < 4; ++i) {
      CHECK(t.value(st2.posterior.stddev)[i] <= t.value(st1.posterior.stddev)[i] * (1 + 1e-6f));
    }
  }

  SUBCASE("posterior is invariant to the declaration order of modalities") {
    ModelConfig swapped = small_config();
    std::swap(swapped.modalities[0], swapped.modalities[1]);
    Mrssm model_b(swapped);
    Rng init(99, "test-init");
    model_b.init_params(init);
    // same named parameters: copy from model a
    for (auto& [name, t] : model_b.params().all_mut()) t = model.params().at(name);

    const Tensor act = rng.normal_tensor({1, 2});
    const Tensor vel_obs = rng.normal_tensor({1, 2});
    const Tensor cam_obs = rng.normal_tensor({1, 3, 8, 8});

    Tape ta;
    const auto ba = model.bind(ta, false);
    ObsVars oa(2);
    oa[0] = ta.constant(vel_obs);
    oa[1] = ta.constant(cam_obs);
    const LatentState sa = model.filter_step(ba, model.initial_state(ba, 1, Tensor({1, 4})),
                                             ta.constant(act), oa, noise);

    Tape tb;
    const auto bb = model_b.bind(tb, false);
    ObsVars ob(2);
    ob[0] = tb.constant(cam_obs);  // modality 0 is now the camera
    ob[1] = tb.constant(vel_obs);
    const LatentState sb = model_b.filter_step(bb, model_b.initial_state(bb, 1, Tensor({1, 4})),
                                               tb.constant(act), ob, noise);
    for (int i = 0; i < 4; ++i) {
      CHECK(ta.value(sa.posterior.mean)[i] ==
            doctest::Approx(tb.value(sb.posterior.mean)[i]).epsilon(1e-6));
      CHECK(ta.value(sa.posterior.stddev)[i] ==
            doctest::Approx(tb.value(sb.posterior.stddev)[i]).epsilon(1e-6));
    }
  }
}

TEST_CASE("rollout_filter") {
  Mrssm model = make_model();
  Rng rng(8, "rollout");
  Tape t;
  const auto b = model.bind(t, false);
  const LatentState init = model.initial_state(b, 1, Tensor({1, 4}));

  SUBCASE("empty sequence gives an empty rollout") {
    const auto out = model.rollout_filter(b, init, {}, {}, {});
    CHECK(out.empty());
  }
  SUBCASE("length mismatch rejected") {
    const std::vector<Tensor> actions = {rng.normal_tensor({1, 2})};
    CHECK_THROWS_AS(model.rollout_filter(b, init, actions, {}, {}), std::invalid_argument);
  }
  SUBCASE("output length matches; all-absent equals iterated prior sampling") {
    const int T = 4;
    std::vector<Tensor> actions, noises;
    std::vector<ObsVars> obs(static_cast<std::size_t>(T), ObsVars(2));
    for (int i = 0; i < T; ++i) {
      actions.push_back(rng.normal_tensor({1, 2}));
      noises.push_back(rng.normal_tensor({1, 4}));
    }
    const auto out = model.rollout_filter(b, init, actions, obs, noises);
    REQUIRE(out.size() == static_cast<std::size_t>(T));

    // manual iterated prior sampling
    Var h = init.h, s = init.s;
    for (int i = 0; i < T; ++i) {
      h = model.deterministic_step(b, h, s, t.constant(actions[static_cast<std::size_t>(i)]));
      const DiagGaussian prior = model.prior_head(b, h);
      s = rsample(t, prior, noises[static_cast<std::size_t>(i)]);
      for (int d = 0; d < 4; ++d) {
        CHECK(t.value(out[static_cast<std::size_t>(i)].s)[d] == t.value(s)[d]);
      }
    }
  }
}

TEST_CASE("predict_open_loop") {
  Mrssm model = make_model();
  Rng rng(9, "predict");
  Tape t;
  const auto b = model.bind(t, false);
  const LatentState init = model.initial_state(b, 1, rng.normal_tensor({1, 4}));
  const int decode_mods[] = {0};

  SUBCASE("H = 0 rejected") {
    CHECK_THROWS_AS(model.predict_open_loop(b, init, {}, false, {}, decode_mods),
                    std::invalid_argument);
  }
  SUBCASE("H = 1 equals a filter step with empty observations, minus the posterior") {
    const Tensor act = rng.normal_tensor({1, 2});
    const std::vector<Tensor> actions = {act};
    const auto pred = model.predict_open_loop(b, init, actions, false, {}, decode_mods);
    REQUIRE(pred.size() == 1);
    const LatentState st =
        model.filter_step(b, init, t.constant(act), ObsVars(2), Tensor({1, 4}));
    for (int i = 0; i < 4; ++i) {
      CHECK(t.value(pred[0].prior.mean)[i] == t.value(st.prior.mean)[i]);
      CHECK(t.value(pred[0].prior.stddev)[i] == t.value(st.prior.stddev)[i]);
    }
  }
  SUBCASE("mean-mode prediction is deterministic and finite over 30 steps") {
    std::vector<Tensor> actions;
    for (int i = 0; i < 30; ++i) actions.push_back(rng.normal_tensor({1, 2}));
    const auto p1 = model.predict_open_loop(b, init, actions, false, {}, decode_mods);
    const auto p2 = model.predict_open_loop(b, init, actions, false, {}, decode_mods);
    REQUIRE(p1.size() == 30);
    for (int i = 0; i < 30; ++i) {
      const Tensor& d1 = t.value(p1[static_cast<std::size_t>(i)].decoded_means.at("vel"));
      const Tensor& d2 = t.value(p2[static_cast<std::size_t>(i)].decoded_means.at("vel"));
      CHECK(d1.all_finite());
      CHECK(std::memcmp(d1.data(), d2.data(), sizeof(float) * 2) == 0);
    }
  }
}

TEST_CASE("encode_concat") {
  ModelConfig cfg = small_config();
  cfg.fusion = FusionMode::kConcat;
  Mrssm model(cfg);
  Rng rng(10, "concat");
  model.init_params(rng);

  Tape t;
  const auto b = model.bind(t, false);
  const Var h = t.constant(rng.normal_tensor({1, 8}));

  SUBCASE("missing modality rejected") {
    ObsVars obs(2);
    obs[0] = t.constant(rng.normal_tensor({1, 2}));
    CHECK_THROWS_AS(model.encode_concat(b, h, obs), std::invalid_argument);
  }
  SUBCASE("full set gives a deterministic d_s gaussian") {
    ObsVars obs(2);
    obs[0] = t.constant(rng.normal_tensor({1, 2}));
    obs[1] = t.constant(rng.normal_tensor({1, 3, 8, 8}));
    const DiagGaussian g1 = model.encode_concat(b, h, obs);
    const DiagGaussian g2 = model.encode_concat(b, h, obs);
    CHECK(t.value(g1.mean).shape() == std::vector<int>{1, 4});
    for (int i = 0; i < 4; ++i) {
      CHECK(t.value(g1.mean)[i] == t.value(g2.mean)[i]);
      CHECK(t.value(g1.stddev)[i] >= kStddevFloor);
    }
  }
  SUBCASE("poe models reject encode_concat") {
    Mrssm poe = make_model();
    Tape t2;
    const auto b2 = poe.bind(t2, false);
    ObsVars obs(2);
    obs[0] = t2.constant(rng.normal_tensor({1, 2}));
    obs[1] = t2.constant(rng.normal_tensor({1, 3, 8, 8}));
    CHECK_THROWS_AS(poe.encode_concat(b2, t2.constant(rng.normal_tensor({1, 8})), obs),
                    std::invalid_argument);
  }
}

TEST_CASE("checkpoint round-trip preserves forward outputs bit-exactly") {
  Mrssm model = make_model(123);
  const auto path = (std::filesystem::temp_directory_path() / "mrssm_test_ckpt.bin").string();
  save_checkpoint(path, model);
  const Mrssm loaded = load_checkpoint(path);
  std::filesystem::remove(path);

  // params identical
  for (const auto& [name, t] : model.params().all()) {
    const Tensor& lt = loaded.params().at(name);
    REQUIRE(lt.numel() == t.numel());
    CHECK(std::memcmp(lt.data(), t.data(), sizeof(float) * static_cast<std::size_t>(t.numel())) == 0);
  }

  // a filtered step matches bit-exactly
  Rng rng(11, "ckpt");
  const Tensor act = rng.normal_tensor({1, 2});
  const Tensor vel = rng.normal_tensor({1, 2});
  const Tensor cam = rng.normal_tensor({1, 3, 8, 8});
  const Tensor noise = rng.normal_tensor({1, 4});
  auto run = [&](const Mrssm& m) {
    Tape t;
    const auto b = m.bind(t, false);
    ObsVars obs(2);
    obs[0] = t.constant(vel);
    obs[1] = t.constant(cam);
    const LatentState st = m.filter_step(b, m.initial_state(b, 1, Tensor({1, 4})),
                                         t.constant(act), obs, noise);
    return t.value(st.s);
  };
  const Tensor s1 = run(model), s2 = run(loaded);
  CHECK(std::memcmp(s1.data(), s2.data(), sizeof(float) * 4) == 0);
}

TEST_CASE("corrupt checkpoints are rejected with the path named") {
  const auto path = (std::filesystem::temp_directory_path() / "mrssm_bad_ckpt.bin").string();
  {
    std::ofstream out(path, std::ios::binary);
    const std::uint32_t len = 10;
    out.write(reinterpret_cast<const char*>(&len), 4);
    out << "not json!!";
  }
  CHECK_THROWS_AS(load_checkpoint(path), std::invalid_argument);
  std::filesystem::remove(path);
}
