#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "test_support.hpp"
#include "trajcl/model.hpp"
#include "trajcl/rng.hpp"
#include "trajcl/synthgen.hpp"

using namespace trajcl;
using trajcl::testing::random_tensor;

namespace {

std::vector<TrajInstance> tiny_data(int n, uint64_t seed = 5) {
  auto w = gen_world(3, 2, 0.9);
  auto data = gen_dataset(w, n, Regime::kTrainCorrelated, seed);
  FeatureConfig fc;
  fc.mode = FeatureMode::kKinematics;
  auto stats = fit_normalization(data, fc);
  apply_normalization(data, stats);
  return data;
}

ModelConfig small_cfg(RunMode mode = RunMode::kTrajCL, Variant variant = Variant::kFull) {
  ModelConfig cfg;
  cfg.mode = mode;
  cfg.variant = variant;
  cfg.d = 8;
  cfg.k = 4;
  cfg.n_classes = 2;
  return cfg;
}

}  // namespace

TEST_CASE("fuse_inputs produces an n x d sequence and zero for zero parameters") {
  ParamStore<double> store;
  std::mt19937_64 rng(1);
  EncoderShape sh;
  sh.f_in = 27;
  sh.d = 64;
  add_encoder_params(store, "alpha", sh, rng);
  Tape<double> t;
  auto enc = use_encoder(store, t, "alpha");
  Tensor<double> x = random_tensor({20, 3}, rng);
  Tensor<double> e = random_tensor({20, 24}, rng);
  auto fused = fuse_inputs(enc, t.constant(x), std::optional(t.constant(e)),
                           std::vector<int64_t>{20});
  CHECK(fused.val().dims == std::vector<int64_t>{20, 64});

  ParamStore<double> zeros;
  add_encoder_params(zeros, "alpha", sh, rng);
  for (auto& entry : zeros.entries()) std::fill(entry.value.v.begin(), entry.value.v.end(), 0.0);
  auto enc0 = use_encoder(zeros, t, "alpha");
  auto fused0 = fuse_inputs(enc0, t.constant(x), std::optional(t.constant(e)),
                            std::vector<int64_t>{20});
  for (double v : fused0.val().v) CHECK(v == 0.0);
}

TEST_CASE("fusion convolution gradients pass finite differences") {
  ParamStore<double> store;
  std::mt19937_64 rng(2);
  EncoderShape sh;
  sh.f_in = 5;
  sh.d = 4;
  add_encoder_params(store, "alpha", sh, rng);
  Tensor<double> x = random_tensor({7, 3}, rng);
  Tensor<double> e = random_tensor({7, 2}, rng);
  Tensor<double> probe = random_tensor({7, 4}, rng);
  auto build = [&](Tape<double>& t) {
    auto enc = use_encoder(store, t, "alpha");
    auto fused = fuse_inputs(enc, t.constant(x), std::optional(t.constant(e)),
                             std::vector<int64_t>{7});
    return reduce_dot(fused, probe);
  };
  auto rep = grad_check<double>(store, build, 1e-6);
  CHECK(rep.max_rel_err < 1e-5);
}

TEST_CASE("dual encoders: equal parameters produce equal states, and swapping swaps them") {
  auto data = tiny_data(3);
  auto cfg = small_cfg();
  auto model = TrajCLModel<double>::init(cfg, 17);
  auto batch = build_batch<double>(data, cfg.f_traj);

  auto states = [&](const std::string& prefix) {
    Tape<double> t;
    auto enc = use_encoder(model.params, t, prefix);
    auto h = encode_branch(enc, t.constant(batch.x), std::optional(t.constant(batch.e)),
                           batch.lengths);
    return h.val();
  };
  Tensor<double> ha = states("alpha");
  Tensor<double> hb = states("beta");
  bool all_equal = true;
  for (int64_t i = 0; i < ha.numel(); ++i) all_equal = all_equal && ha.v[i] == hb.v[i];
  CHECK(!all_equal);  // independent initializations differ

  // copy theta_1 into theta_2 -> identical outputs
  auto copy_branch = [&](const std::string& from, const std::string& to) {
    for (const char* suffix :
         {".conv1.w", ".conv1.b", ".conv2.w", ".conv2.b", ".gru.wz", ".gru.uz", ".gru.bz",
          ".gru.wr", ".gru.ur", ".gru.br", ".gru.wh", ".gru.uh", ".gru.bh"})
      model.params.at(to + suffix).value = model.params.at(from + suffix).value;
  };
  ParamStore<double> backup = model.params;
  copy_branch("alpha", "beta");
  Tensor<double> hb2 = states("beta");
  for (int64_t i = 0; i < ha.numel(); ++i) CHECK(hb2.v[i] == ha.v[i]);

  // swap: outputs swap exactly
  model.params = backup;
  ParamStore<double> swapped = model.params;
  for (const char* suffix :
       {".conv1.w", ".conv1.b", ".conv2.w", ".conv2.b", ".gru.wz", ".gru.uz", ".gru.bz",
        ".gru.wr", ".gru.ur", ".gru.br", ".gru.wh", ".gru.uh", ".gru.bh"}) {
    swapped.at(std::string("alpha") + suffix).value =
        model.params.at(std::string("beta") + suffix).value;
    swapped.at(std::string("beta") + suffix).value =
        model.params.at(std::string("alpha") + suffix).value;
  }
  model.params = swapped;
  Tensor<double> ha_swapped = states("alpha");
  Tensor<double> hb_swapped = states("beta");
  for (int64_t i = 0; i < ha.numel(); ++i) {
    CHECK(ha_swapped.v[i] == hb.v[i]);
    CHECK(hb_swapped.v[i] == ha.v[i]);
  }
}

TEST_CASE("confound degrees") {
  SUBCASE("zero head gives 0.5 everywhere; large bias saturates toward 1") {
    ParamStore<double> store;
    std::mt19937_64 rng(3);
    add_codebook_params(store, 5, 8, 24, rng);
    std::fill(store.at("codebook.wv").value.v.begin(), store.at("codebook.wv").value.v.end(),
              0.0);
    store.at("codebook.bv").value.v[0] = 0.0;
    Tape<double> t;
    auto cb = use_codebook(store, t, 1.0);
    auto v = confound_degrees(cb);
    CHECK(v.val().dims == std::vector<int64_t>{5, 1});
    for (double x : v.val().v) CHECK(x == doctest::Approx(0.5).epsilon(1e-12));
    store.at("codebook.bv").value.v[0] = 20.0;
    Tape<double> t2;
    auto v2 = confound_degrees(use_codebook(store, t2, 1.0));
    for (double x : v2.val().v) CHECK(x > 0.999999);
  }
  SUBCASE("matches a naive per-prototype scalar loop") {
    ParamStore<double> store;
    std::mt19937_64 rng(4);
    add_codebook_params(store, 6, 5, 24, rng);
    Tape<double> t;
    auto v = confound_degrees(use_codebook(store, t, 1.0));
    const auto& c = store.at("codebook.c").value;
    const auto& wv = store.at("codebook.wv").value;
    const double bv = store.at("codebook.bv").value.v[0];
    for (int64_t i = 0; i < 6; ++i) {
      double acc = bv;
      for (int64_t j = 0; j < 5; ++j) acc += c.at(i, j) * wv.at(j, 0);
      const double expect = 1.0 / (1.0 + std::exp(-acc));
      CHECK(v.val().at(i, 0) == doctest::Approx(expect).epsilon(1e-12));
    }
  }
}

TEST_CASE("soft masks") {
  ParamStore<double> store;
  std::mt19937_64 rng(5);
  const int k = 3, d = 4, m = 24;
  add_codebook_params(store, k, d, m, rng);

  SUBCASE("eval mode: the mask is exactly the argmax prototype's degree") {
    Tensor<double> e = random_tensor({6, m}, rng);
    Tape<double> t;
    auto cb = use_codebook(store, t, 1.0);
    auto masks = soft_masks(cb, t.constant(e), MaskMode::kEval);
    auto degrees = confound_degrees(cb);
    auto ids = hard_prototype_ids(masks.assign.val());
    for (int64_t i = 0; i < 6; ++i)
      CHECK(masks.m_alpha.val().at(i, 0) == degrees.val().at(ids[static_cast<size_t>(i)], 0));
  }

  SUBCASE("train mode: entries in (0,1) and the complement is exact") {
    Tensor<double> e = random_tensor({8, m}, rng);
    Tensor<double> noise = random_tensor({8, k}, rng);
    Tape<double> t;
    auto masks = soft_masks(use_codebook(store, t, 0.7), t.constant(e), MaskMode::kTrain,
                            std::optional(t.constant(noise)));
    for (int64_t i = 0; i < 8; ++i) {
      const double a = masks.m_alpha.val().at(i, 0);
      CHECK(a > 0.0);
      CHECK(a < 1.0);
      CHECK(masks.m_beta.val().at(i, 0) == 1.0 - a);  // computed complement, bitwise
    }
  }

  SUBCASE("a single-prototype codebook gives a constant mask") {
    ParamStore<double> one;
    add_codebook_params(one, 1, d, m, rng);
    Tensor<double> e = random_tensor({7, m}, rng);
    Tape<double> t;
    auto cb = use_codebook(one, t, 1.0);
    auto masks = soft_masks(cb, t.constant(e), MaskMode::kEval);
    auto v1 = confound_degrees(cb).val().at(0, 0);
    for (int64_t i = 0; i < 7; ++i) CHECK(masks.m_alpha.val().at(i, 0) == v1);
  }

  SUBCASE("fixed noise matches a scalar-loop oracle of the full mask pipeline") {
    const int n = 2, kk = 3, dd = 4;
    ParamStore<double> st;
    add_codebook_params(st, kk, dd, m, rng);
    Tensor<double> e = random_tensor({n, m}, rng);
    Tensor<double> noise = random_tensor({n, kk}, rng);
    const double tau = 0.5;
    Tape<double> t;
    auto masks = soft_masks(use_codebook(st, t, tau), t.constant(e), MaskMode::kTrain,
                            std::optional(t.constant(noise)));

    // independent scalar evaluation
    const auto& C = st.at("codebook.c").value;
    const auto& wq = st.at("codebook.wq").value;
    const auto& bq = st.at("codebook.bq").value;
    const auto& wk = st.at("codebook.wk").value;
    const auto& bk = st.at("codebook.bk").value;
    const auto& wv = st.at("codebook.wv").value;
    const double bv = st.at("codebook.bv").value.v[0];
    for (int i = 0; i < n; ++i) {
      std::vector<double> q(dd, 0.0);
      for (int a = 0; a < dd; ++a) {
        q[static_cast<size_t>(a)] = bq.v[a];
        for (int b = 0; b < m; ++b) q[static_cast<size_t>(a)] += e.at(i, b) * wq.at(b, a);
      }
      std::vector<double> scores(kk, 0.0);
      for (int j = 0; j < kk; ++j) {
        std::vector<double> key(dd, 0.0);
        for (int a = 0; a < dd; ++a) {
          key[static_cast<size_t>(a)] = bk.v[a];
          for (int b = 0; b < dd; ++b) key[static_cast<size_t>(a)] += C.at(j, b) * wk.at(b, a);
        }
        for (int a = 0; a < dd; ++a) scores[static_cast<size_t>(j)] += q[static_cast<size_t>(a)] * key[static_cast<size_t>(a)];
        scores[static_cast<size_t>(j)] /= std::sqrt(static_cast<double>(dd));
      }
      double denom = 0;
      std::vector<double> s(kk);
      for (int j = 0; j < kk; ++j) denom += std::exp((scores[static_cast<size_t>(j)] + noise.at(i, j)) / tau);
      for (int j = 0; j < kk; ++j) s[static_cast<size_t>(j)] = std::exp((scores[static_cast<size_t>(j)] + noise.at(i, j)) / tau) / denom;
      double m_alpha = 0;
      for (int j = 0; j < kk; ++j) {
        double dot = bv;
        for (int a = 0; a < dd; ++a) dot += C.at(j, a) * wv.at(a, 0);
        m_alpha += s[static_cast<size_t>(j)] / (1.0 + std::exp(-dot));
      }
      CHECK(masks.m_alpha.val().at(i, 0) == doctest::Approx(m_alpha).epsilon(1e-9));
    }
  }

  SUBCASE("permuting codebook rows leaves eval-mode masks invariant") {
    Tensor<double> e = random_tensor({9, m}, rng);
    Tape<double> t;
    auto masks = soft_masks(use_codebook(store, t, 1.0), t.constant(e), MaskMode::kEval);
    ParamStore<double> permuted = store;
    // rotate rows of C by one
    auto& c = permuted.at("codebook.c").value;
    Tensor<double> rotated = c;
    for (int64_t i = 0; i < k; ++i)
      for (int64_t j = 0; j < d; ++j) rotated.at(i, j) = c.at((i + 1) % k, j);
    c = rotated;
    Tape<double> t2;
    auto masks2 = soft_masks(use_codebook(permuted, t2, 1.0), t2.constant(e), MaskMode::kEval);
    for (int64_t i = 0; i < 9; ++i)
      CHECK(masks2.m_alpha.val().at(i, 0) == doctest::Approx(masks.m_alpha.val().at(i, 0)).epsilon(1e-12));
  }

  SUBCASE("eval is deterministic; train is deterministic given injected noise") {
    Tensor<double> e = random_tensor({5, m}, rng);
    Tensor<double> noise = random_tensor({5, k}, rng);
    auto run = [&](MaskMode mode, bool with_noise) {
      Tape<double> t;
      auto cb = use_codebook(store, t, 0.9);
      auto masks = soft_masks(cb, t.constant(e), mode,
                              with_noise ? std::optional(t.constant(noise)) : std::nullopt);
      return masks.m_alpha.val();
    };
    auto e1 = run(MaskMode::kEval, false), e2 = run(MaskMode::kEval, false);
    for (int64_t i = 0; i < e1.numel(); ++i) CHECK(e1.v[i] == e2.v[i]);
    auto t1 = run(MaskMode::kTrain, true), t2v = run(MaskMode::kTrain, true);
    for (int64_t i = 0; i < t1.numel(); ++i) CHECK(t1.v[i] == t2v.v[i]);
  }
}

TEST_CASE("disentangle") {
  std::mt19937_64 rng(7);
  const int64_t n = 6, d = 5;
  Tensor<double> ha = random_tensor({n, d}, rng);
  Tensor<double> hb = random_tensor({n, d}, rng);

  SUBCASE("mask extremes: all-ones mask gives the plain mean and zero for the complement") {
    Tape<double> t;
    SoftMasks<double> masks;
    masks.m_alpha = t.constant(Tensor<double>::full({n, 1}, 1.0));
    masks.m_beta = one_minus(masks.m_alpha);
    auto [za, zb] = disentangle(t.constant(ha), t.constant(hb), masks, {n});
    for (int64_t j = 0; j < d; ++j) {
      double mean = 0;
      for (int64_t i = 0; i < n; ++i) mean += ha.at(i, j);
      mean /= static_cast<double>(n);
      CHECK(za.val().at(0, j) == doctest::Approx(mean).epsilon(1e-12));
      CHECK(zb.val().at(0, j) == 0.0);
    }
  }

  SUBCASE("the 0.5 ablation mask scales the plain mean by one half") {
    Tape<double> t;
    SoftMasks<double> masks;
    masks.m_alpha = t.constant(Tensor<double>::full({n, 1}, 0.5));
    masks.m_beta = one_minus(masks.m_alpha);
    auto [za, zb] = disentangle(t.constant(ha), t.constant(hb), masks, {n});
    for (int64_t j = 0; j < d; ++j) {
      double mean = 0;
      for (int64_t i = 0; i < n; ++i) mean += ha.at(i, j);
      mean /= static_cast<double>(n);
      CHECK(za.val().at(0, j) == doctest::Approx(0.5 * mean).epsilon(1e-12));
    }
  }

  SUBCASE("random case matches an explicit double loop") {
    Tensor<double> mask = random_tensor({n, 1}, rng, 0.1, 0.9);
    Tape<double> t;
    SoftMasks<double> masks;
    masks.m_alpha = t.constant(mask);
    masks.m_beta = one_minus(masks.m_alpha);
    auto [za, zb] = disentangle(t.constant(ha), t.constant(hb), masks, {n});
    for (int64_t j = 0; j < d; ++j) {
      double acc_a = 0, acc_b = 0;
      for (int64_t i = 0; i < n; ++i) {
        acc_a += ha.at(i, j) * mask.at(i, 0);
        acc_b += hb.at(i, j) * (1.0 - mask.at(i, 0));
      }
      CHECK(za.val().at(0, j) == doctest::Approx(acc_a / n).epsilon(1e-12));
      CHECK(zb.val().at(0, j) == doctest::Approx(acc_b / n).epsilon(1e-12));
    }
  }

  SUBCASE("empty sequences are rejected") {
    Tape<double> t;
    SoftMasks<double> masks;
    masks.m_alpha = t.constant(Tensor<double>::full({1, 1}, 0.5));
    masks.m_beta = one_minus(masks.m_alpha);
    CHECK_THROWS_AS(disentangle(t.constant(Tensor<double>({0, 4})),
                                t.constant(Tensor<double>({0, 4})), masks,
                                std::vector<int64_t>{}),
                    ShapeError);
  }
}

TEST_CASE("classifier losses") {
  ParamStore<double> store;
  std::mt19937_64 rng(11);
  add_head_params(store, "heads.shared", 4, 4, rng);

  SUBCASE("uniform logits give ln c for both targets") {
    Tape<double> t;
    auto logits = t.constant(Tensor<double>({3, 4}));
    auto l1 = cross_entropy(logits, onehot_targets<double>({0, 1, 2}, 4));
    auto l2 = cross_entropy(logits, uniform_targets<double>(3, 4));
    CHECK(l1.val().v[0] == doctest::Approx(std::log(4.0)).epsilon(1e-12));
    CHECK(l2.val().v[0] == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  }

  SUBCASE("confident correct predictions make L_cau tiny, and L_con large") {
    Tensor<double> confident({2, 4});
    confident.at(0, 1) = 30.0;
    confident.at(1, 3) = 30.0;
    Tape<double> t;
    auto l_cau = cross_entropy(t.constant(confident), onehot_targets<double>({1, 3}, 4));
    CHECK(l_cau.val().v[0] < 1e-3);
    auto l_con = cross_entropy(t.constant(confident), uniform_targets<double>(2, 4));
    CHECK(l_con.val().v[0] > 3.0 * std::log(4.0));
  }

  SUBCASE("labels out of range are an error") {
    CHECK_THROWS_AS(onehot_targets<double>({0, 4}, 4), NumericError);
    CHECK_THROWS_AS(onehot_targets<double>({-1}, 4), NumericError);
  }

  SUBCASE("L_con is symmetric under class relabeling") {
    Tensor<double> logits = random_tensor({5, 4}, rng);
    Tensor<double> permuted({5, 4});
    const int perm[4] = {2, 0, 3, 1};
    for (int64_t i = 0; i < 5; ++i)
      for (int64_t c = 0; c < 4; ++c) permuted.at(i, perm[c]) = logits.at(i, c);
    Tape<double> t;
    auto a = cross_entropy(t.constant(logits), uniform_targets<double>(5, 4));
    auto b = cross_entropy(t.constant(permuted), uniform_targets<double>(5, 4));
    CHECK(a.val().v[0] == doctest::Approx(b.val().v[0]).epsilon(1e-12));
  }

  SUBCASE("descending L_con alone drives the logit gap to zero") {
    // treat the logits themselves as the trainable parameters
    ParamStore<double> opt;
    opt.add("logits", random_tensor({3, 4}, rng, -1.0, 1.0));
    for (int step = 0; step < 500; ++step) {
      Tape<double> t;
      auto l = cross_entropy(opt.use(t, "logits"), uniform_targets<double>(3, 4));
      t.backward(l);
      opt.adam_step(0.05);
    }
    const auto& lg = opt.at("logits").value;
    for (int64_t i = 0; i < 3; ++i) {
      double mx = -1e9, mn = 1e9;
      for (int64_t c = 0; c < 4; ++c) {
        mx = std::max(mx, lg.at(i, c));
        mn = std::min(mn, lg.at(i, c));
      }
      CHECK(mx - mn < 1e-3);
    }
  }
}

TEST_CASE("intervention") {
  std::mt19937_64 rng(13);
  ParamStore<double> store;
  add_head_params(store, "heads.shared", 4, 3, rng);

  SUBCASE("permutations: b=1 is the identity; rows are a permutation; seeded") {
    CHECK(intervention_perm(1, 99) == std::vector<int64_t>{0});
    auto p1 = intervention_perm(6, 5);
    auto p2 = intervention_perm(6, 5);
    CHECK(p1 == p2);
    std::vector<int64_t> sorted = p1;
    std::sort(sorted.begin(), sorted.end());
    CHECK(sorted == std::vector<int64_t>{0, 1, 2, 3, 4, 5});
    CHECK(intervention_perm(6, 6) != p1);
  }

  SUBCASE("zero donor features make L_int identical to L_cau") {
    Tensor<double> z = random_tensor({4, 4}, rng);
    std::vector<int> labels{0, 1, 2, 0};
    Tape<double> t;
    auto shared = use_head(store, t, "heads.shared");
    auto za = t.constant(z);
    auto l_cau = classify_causal(shared, za, labels, 3);
    auto l_int =
        classify_intervened(shared, za, t.constant(Tensor<double>({4, 4})), labels, 3);
    CHECK(l_int.val().v[0] == l_cau.val().v[0]);
  }

  SUBCASE("identical rows make L_int invariant to the permutation") {
    Tensor<double> z({3, 4});
    for (int64_t i = 0; i < 3; ++i)
      for (int64_t j = 0; j < 4; ++j) z.at(i, j) = 0.3 * static_cast<double>(j);
    std::vector<int> labels{1, 1, 1};
    double first = 0;
    for (uint64_t seed = 0; seed < 6; ++seed) {
      Tape<double> t;
      auto shared = use_head(store, t, "heads.shared");
      auto zs = gather_rows(t.constant(z), intervention_perm(3, seed));
      auto l = classify_intervened(shared, t.constant(z), zs, labels, 3);
      if (seed == 0)
        first = l.val().v[0];
      else
        CHECK(l.val().v[0] == doctest::Approx(first).epsilon(1e-12));
    }
  }

  SUBCASE("the sampled permutation loss appears in the full b=3 enumeration") {
    Tensor<double> za = random_tensor({3, 4}, rng);
    Tensor<double> zb = random_tensor({3, 4}, rng);
    std::vector<int> labels{0, 2, 1};
    auto loss_for = [&](const std::vector<int64_t>& perm) {
      Tape<double> t;
      auto shared = use_head(store, t, "heads.shared");
      auto zs = gather_rows(t.constant(zb), perm);
      return classify_intervened(shared, t.constant(za), zs, labels, 3).val().v[0];
    };
    std::vector<double> table;
    std::vector<int64_t> perm{0, 1, 2};
    std::sort(perm.begin(), perm.end());
    do {
      table.push_back(loss_for(perm));
    } while (std::next_permutation(perm.begin(), perm.end()));
    const double sampled = loss_for(intervention_perm(3, 31));
    bool found = false;
    for (double v : table) found = found || std::abs(v - sampled) < 1e-12;
    CHECK(found);

    // single-draw estimate is unbiased over the permutation distribution:
    // averaging over many seeds approaches the enumeration mean
    double table_mean = 0;
    for (double v : table) table_mean += v;
    table_mean /= static_cast<double>(table.size());
    double sampled_mean = 0;
    const int reps = 4000;
    for (int s = 0; s < reps; ++s) sampled_mean += loss_for(intervention_perm(3, static_cast<uint64_t>(s)));
    sampled_mean /= reps;
    CHECK(sampled_mean == doctest::Approx(table_mean).epsilon(0.02));
  }
}

TEST_CASE("total loss combination") {
  Tape<double> t;
  auto l1 = t.constant(Tensor<double>::scalar(1.0));
  auto l2 = t.constant(Tensor<double>::scalar(2.0));
  auto l3 = t.constant(Tensor<double>::scalar(0.5));
  LossWeights w;  // defaults 1, 0.5, 0.5
  CHECK(total_loss(l1, l2, l3, w).val().v[0] == doctest::Approx(2.25).epsilon(1e-12));
  LossWeights only_cau{1.0, 0.0, 0.0};
  CHECK(total_loss(l1, l2, l3, only_cau).val().v[0] == doctest::Approx(1.0));
  LossWeights bad{-1.0, 0.0, 0.0};
  CHECK_THROWS_AS(total_loss(l1, l2, l3, bad), NumericError);
}

TEST_CASE("total loss gradient is the weighted sum of component gradients") {
  auto data = tiny_data(4);
  auto cfg = small_cfg();
  auto model = TrajCLModel<double>::init(cfg, 23);
  auto batch = build_batch<double>(data, cfg.f_traj);
  std::mt19937_64 rng(29);
  Tensor<double> noise = gumbel_noise<double>({batch.T, batch.b, cfg.k}, rng);

  auto grads_for = [&](LossWeights w) {
    model.cfg.weights = w;
    model.params.zero_grad();
    Tape<double> t;
    auto out = model.forward(t, batch, MaskMode::kTrain, std::optional(noise), 7);
    t.backward(out.total);
    std::vector<double> flat;
    for (const auto& e : model.params.entries())
      flat.insert(flat.end(), e.grad.v.begin(), e.grad.v.end());
    model.params.zero_grad();
    return flat;
  };
  auto g_cau = grads_for({1, 0, 0});
  auto g_con = grads_for({0, 1, 0});
  auto g_int = grads_for({0, 0, 1});
  auto g_all = grads_for({1.0, 0.5, 0.5});
  for (size_t i = 0; i < g_all.size(); ++i) {
    const double expect = g_cau[i] + 0.5 * g_con[i] + 0.5 * g_int[i];
    CHECK(g_all[i] == doctest::Approx(expect).epsilon(1e-9));
  }
}

TEST_CASE("gradient isolation between branches") {
  auto data = tiny_data(4);
  auto cfg = small_cfg();
  auto model = TrajCLModel<double>::init(cfg, 31);
  auto batch = build_batch<double>(data, cfg.f_traj);
  std::mt19937_64 rng(37);
  Tensor<double> noise = gumbel_noise<double>({batch.T, batch.b, cfg.k}, rng);

  auto grad_norm_of = [&](const std::string& name) {
    double acc = 0;
    for (double g : model.params.at(name).grad.v) acc += g * g;
    return std::sqrt(acc);
  };

  SUBCASE("with phi = 0 the confounding head receives no gradient") {
    model.cfg.weights = {1.0, 0.0, 0.5};
    model.params.zero_grad();
    Tape<double> t;
    auto out = model.forward(t, batch, MaskMode::kTrain, std::optional(noise), 3);
    t.backward(out.total);
    CHECK(grad_norm_of("heads.conf.l1w") == 0.0);
    CHECK(grad_norm_of("heads.conf.l2w") == 0.0);
    // but the beta encoder still receives gradient through the intervention
    CHECK(grad_norm_of("beta.gru.wz") > 0.0);
  }

  SUBCASE("detaching the intervention and phi = 0 silences the beta encoder") {
    model.cfg.weights = {1.0, 0.0, 0.5};
    model.cfg.detach_intervention = true;
    model.params.zero_grad();
    Tape<double> t;
    auto out = model.forward(t, batch, MaskMode::kTrain, std::optional(noise), 3);
    t.backward(out.total);
    CHECK(grad_norm_of("beta.gru.wz") == 0.0);
    CHECK(grad_norm_of("beta.conv1.w") == 0.0);
    CHECK(grad_norm_of("alpha.gru.wz") > 0.0);
  }

  SUBCASE("the codebook and projections train end-to-end") {
    model.cfg.weights = {1.0, 0.5, 0.5};
    model.params.zero_grad();
    Tape<double> t;
    auto out = model.forward(t, batch, MaskMode::kTrain, std::optional(noise), 3);
    t.backward(out.total);
    for (const char* name : {"codebook.c", "codebook.wv", "codebook.wq", "codebook.wk"})
      CHECK(grad_norm_of(name) > 0.0);
  }
}

TEST_CASE("full model gradient check on a 4-instance batch (64-bit)") {
  auto data = tiny_data(4);
  auto cfg = small_cfg();
  auto model = TrajCLModel<double>::init(cfg, 41);
  auto batch = build_batch<double>(data, cfg.f_traj);
  std::mt19937_64 rng(43);
  Tensor<double> noise = gumbel_noise<double>({batch.T, batch.b, cfg.k}, rng);
  auto build = [&](Tape<double>& t) {
    return model.forward(t, batch, MaskMode::kTrain, std::optional(noise), 11).total;
  };
  auto rep = grad_check<double>(model.params, build, 1e-6, /*max_entries_per_param=*/25, 7);
  INFO("worst: " << rep.worst_param << "[" << rep.worst_index << "] rel " << rep.max_rel_err);
  CHECK(rep.max_rel_err < 1e-4);
}

TEST_CASE("padded batches reproduce single-instance forwards exactly") {
  auto data = tiny_data(6, 77);
  auto cfg = small_cfg();
  auto model = TrajCLModel<double>::init(cfg, 47);
  auto batch = build_batch<double>(data, cfg.f_traj);
  // at least two different lengths so padding is exercised
  bool varied = false;
  for (size_t i = 1; i < batch.lengths.size(); ++i)
    varied = varied || batch.lengths[i] != batch.lengths[0];
  REQUIRE(varied);

  Tensor<double> z_batch;
  model.predict(batch, &z_batch);
  for (size_t i = 0; i < data.size(); ++i) {
    auto single = build_batch<double>(data, {i}, cfg.f_traj);
    Tensor<double> z_one;
    model.predict(single, &z_one);
    for (int64_t j = 0; j < cfg.d; ++j)
      CHECK(z_one.at(0, j) ==
            doctest::Approx(z_batch.at(static_cast<int64_t>(i), j)).epsilon(1e-10));
  }
}

TEST_CASE("inference is deterministic and the base mode ignores context") {
  auto data = tiny_data(5);
  auto cfg = small_cfg(RunMode::kBase);
  auto model = TrajCLModel<double>::init(cfg, 53);
  auto batch = build_batch<double>(data, cfg.f_traj);
  auto p1 = model.predict(batch);
  auto p2 = model.predict(batch);
  CHECK(p1 == p2);

  // zeroing the context changes nothing for the base model
  Batch<double> zeroed = batch;
  std::fill(zeroed.e.v.begin(), zeroed.e.v.end(), 0.0);
  Tape<double> t1, t2;
  auto out1 = model.forward(t1, batch, MaskMode::kEval);
  auto out2 = model.forward(t2, zeroed, MaskMode::kEval);
  CHECK(out1.total.val().v[0] == out2.total.val().v[0]);

  // env mode differs from base only in input width
  auto env_model = TrajCLModel<double>::init(small_cfg(RunMode::kEnv), 53);
  CHECK(env_model.params.at("alpha.conv1.w").value.dim(1) ==
        model.params.at("alpha.conv1.w").value.dim(1) + kNumContextFeatures);
  CHECK(env_model.params.size() == model.params.size());
}

TEST_CASE("no_ci is exactly full with eta = 0 on a batch loss") {
  auto data = tiny_data(4);
  auto cfg = small_cfg(RunMode::kTrajCL, Variant::kNoCI);
  auto model = TrajCLModel<double>::init(cfg, 59);
  auto batch = build_batch<double>(data, cfg.f_traj);
  std::mt19937_64 rng(61);
  Tensor<double> noise = gumbel_noise<double>({batch.T, batch.b, cfg.k}, rng);
  Tape<double> t;
  auto out = model.forward(t, batch, MaskMode::kTrain, std::optional(noise), 3);

  auto full = TrajCLModel<double>::init(small_cfg(RunMode::kTrajCL, Variant::kFull), 59);
  full.cfg.weights.eta = 0.0;
  Tape<double> t2;
  auto out2 = full.forward(t2, batch, MaskMode::kTrain, std::optional(noise), 3);
  CHECK(out.total.val().v[0] == out2.total.val().v[0]);
}

TEST_CASE("no_dise pins both masks at one half") {
  auto data = tiny_data(3);
  auto cfg = small_cfg(RunMode::kTrajCL, Variant::kNoDise);
  auto model = TrajCLModel<double>::init(cfg, 67);
  auto batch = build_batch<double>(data, cfg.f_traj);
  Tensor<double> m_alpha;
  std::vector<int> ids;
  model.predict(batch, nullptr, &ids, &m_alpha);
  for (double v : m_alpha.v) CHECK(v == 0.5);
}

TEST_CASE("no_ec freezes the codebook prototypes but trains the degree head") {
  auto cfg = small_cfg(RunMode::kTrajCL, Variant::kNoEC);
  auto model = TrajCLModel<double>::init(cfg, 71);
  CHECK(!model.params.at("codebook.c").trainable);
  CHECK(model.params.at("codebook.wv").trainable);
}

TEST_CASE("no_env zeroes the context everywhere") {
  auto data = tiny_data(4);
  auto model = TrajCLModel<double>::init(small_cfg(RunMode::kTrajCL, Variant::kNoEnv), 73);
  auto batch = build_batch<double>(data, 3);
  Batch<double> zeroed = batch;
  std::fill(zeroed.e.v.begin(), zeroed.e.v.end(), 0.0);
  Tape<double> t1, t2;
  auto a = model.forward(t1, batch, MaskMode::kEval);
  auto b = model.forward(t2, zeroed, MaskMode::kEval);
  CHECK(a.total.val().v[0] == b.total.val().v[0]);
}
