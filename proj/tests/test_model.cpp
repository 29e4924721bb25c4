#include <cmath>
#include <random>
#include <sstream>

#include "doctest.h"
#include "fedlora/checkpoint.hpp"
#include "fedlora/error.hpp"
#include "fedlora/gradcheck.hpp"
#include "fedlora/model.hpp"
#include "fedlora/rng.hpp"
#include "oracles.hpp"

using namespace fedlora;

namespace {

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an Error");
  return ErrorCode::kIo;
}

ModelShape tiny(std::size_t d, std::size_t k, std::size_t blocks = 1) {
  return ModelShape{d, d, blocks, blocks, k};
}

AdaptationMode flora(LoraTargets targets, std::size_t rank = 2, double alpha = 32.0) {
  AdaptationMode m;
  m.kind = AdaptationKind::kFlora;
  m.lora.targets = targets;
  m.lora.rank = rank;
  m.lora.alpha = alpha;
  return m;
}

AdaptationMode of_kind(AdaptationKind kind) {
  AdaptationMode m;
  m.kind = kind;
  return m;
}

}  // namespace

TEST_SUITE("lora") {
  TEST_CASE("scalar merge") {
    LoraAdapter a{Matrix::from_rows({{3}}), Matrix::from_rows({{4}}), 0.5, false, "w"};
    CHECK(lora_effective_weight(Matrix::from_rows({{2}}), a) == Matrix::from_rows({{8}}));
  }

  TEST_CASE("zero B and zero alpha leave the base bitwise") {
    std::mt19937_64 gen(4);
    const Matrix w = oracle::random_matrix(gen, 5, 5);
    LoraAdapter zero_b{oracle::random_matrix(gen, 5, 2), Matrix(2, 5), 32.0, false, "w"};
    CHECK(bitwise_equal(lora_effective_weight(w, zero_b), w));
    LoraAdapter zero_alpha{oracle::random_matrix(gen, 5, 2), oracle::random_matrix(gen, 2, 5), 0.0, false, "w"};
    CHECK(bitwise_equal(lora_effective_weight(w, zero_alpha), w));
  }

  TEST_CASE("alpha and A enter only through their product") {
    std::mt19937_64 gen(8);
    for (int trial = 0; trial < 50; ++trial) {
      const Matrix w = oracle::random_matrix(gen, 4, 4);
      const Matrix a = oracle::random_matrix(gen, 4, 2);
      const Matrix b = oracle::random_matrix(gen, 2, 4);
      LoraAdapter one{a, b, 3.0, false, "w"};
      LoraAdapter two{scale(a, 0.5), b, 6.0, false, "w"};
      CHECK(bitwise_equal(lora_effective_weight(w, one), lora_effective_weight(w, two)));
    }
  }

  TEST_CASE("alpha over rank switch") {
    LoraAdapter a{Matrix::from_rows({{1, 1}}), Matrix::from_rows({{1}, {1}}), 4.0, true, "w"};
    CHECK(a.scaling() == 2.0);
    CHECK(lora_effective_weight(Matrix::from_rows({{0}}), a) == Matrix::from_rows({{4}}));
  }

  TEST_CASE("shape mismatch") {
    LoraAdapter a{Matrix(3, 2), Matrix(2, 3), 1.0, false, "w"};
    CHECK(code_of([&] { lora_effective_weight(Matrix(2, 2), a); }) == ErrorCode::kShape);
  }
}

TEST_SUITE("encoders") {
  TEST_CASE("zero weights give zero image features") {
    DualEncoderModel m = DualEncoderModel::random_base(tiny(3, 2), 1.0, 1);
    m.set_parameter(names::kInputProj, Matrix(3, 3));
    const Matrix f = encode_image(m, Matrix(2, 3, 1.0));
    CHECK(f == Matrix(2, 3));
  }

  TEST_CASE("identity block evaluates to normalize(tanh(x))") {
    DualEncoderModel m = DualEncoderModel::random_base(tiny(3, 2), 1.0, 1);
    m.set_parameter(names::kInputProj, Matrix::identity(3));
    m.set_parameter(names::image_block(0), Matrix::identity(3));
    std::mt19937_64 gen(2);
    const Matrix x = oracle::random_matrix(gen, 4, 3);
    CHECK(oracle::max_abs_diff(encode_image(m, x), oracle::normalize_rows(oracle::tanh_of(x))) <= 1e-15);
  }

  TEST_CASE("image rows have unit norm") {
    DualEncoderModel m = DualEncoderModel::random_base(tiny(6, 3, 2), 0.01, 5);
    std::mt19937_64 gen(3);
    const Matrix f = encode_image(m, oracle::random_matrix(gen, 10, 6));
    for (std::size_t i = 0; i < f.rows(); ++i) {
      double n = 0.0;
      for (double v : f.row(i)) n += v * v;
      CHECK(std::sqrt(n) == doctest::Approx(1.0).epsilon(1e-12));
    }
  }

  TEST_CASE("class features match a straight-line chain, K = 3") {
    DualEncoderModel m = DualEncoderModel::random_base(tiny(4, 3, 2), 0.01, 9);
    m.configure(flora(LoraTargets::kText), 2);
    std::mt19937_64 gen(10);
    for (std::size_t i = 0; i < 2; ++i) {
      m.set_parameter(names::lora_up(names::text_block(i)), oracle::random_matrix(gen, 2, 4, -0.1, 0.1));
    }
    Matrix t = m.parameter(names::kClassEmbeddings);
    for (std::size_t i = 0; i < 2; ++i) {
      const Matrix& w = m.parameter(names::text_block(i));
      const Matrix delta = oracle::matmul(m.parameter(names::lora_down(names::text_block(i))),
                                          m.parameter(names::lora_up(names::text_block(i))));
      Matrix eff = w;
      for (std::size_t j = 0; j < eff.size(); ++j) eff.data()[j] += 32.0 * delta.data()[j];
      t = oracle::tanh_of(oracle::matmul(t, eff));
    }
    CHECK(oracle::max_abs_diff(encode_classes(m), oracle::normalize_rows(t)) <= 1e-14);
  }

  TEST_CASE("identical class embeddings give identical rows and uniform probabilities") {
    DualEncoderModel m = DualEncoderModel::random_base(tiny(4, 3), 0.01, 2);
    m.set_parameter(names::kClassEmbeddings, Matrix(3, 4, 0.3));
    const Matrix c = encode_classes(m);
    CHECK(bitwise_equal(gather_rows(c, std::vector<std::size_t>{0}), gather_rows(c, std::vector<std::size_t>{2})));
    std::mt19937_64 gen(1);
    const Matrix p = forward_probs(m, oracle::random_matrix(gen, 5, 4));
    for (double v : p.data()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  }
}

TEST_SUITE("probabilities") {
  TEST_CASE("cosines (1, -1) at tau 1") {
    DualEncoderModel m = DualEncoderModel::random_base(tiny(2, 2), 1.0, 1);
    m.set_parameter(names::kInputProj, Matrix::identity(2));
    m.set_parameter(names::image_block(0), Matrix::identity(2));
    m.set_parameter(names::text_block(0), Matrix::identity(2));
    m.set_parameter(names::kClassEmbeddings, Matrix::from_rows({{1, 0}, {-1, 0}}));
    const Matrix p = forward_probs(m, Matrix::from_rows({{1, 0}}));
    const double e = std::exp(1.0), ie = std::exp(-1.0);
    CHECK(p(0, 0) == doctest::Approx(e / (e + ie)).epsilon(1e-14));
    CHECK(p(0, 0) == doctest::Approx(0.8808).epsilon(1e-4));
    CHECK(p(0, 1) == doctest::Approx(0.1192).epsilon(1e-3));
  }

  TEST_CASE("rows are stochastic and argmax ignores tau") {
    std::mt19937_64 gen(12);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      DualEncoderModel m = DualEncoderModel::random_base(tiny(5, 4, 2), 0.01, seed);
      const Matrix x = oracle::random_matrix(gen, 8, 5, -3.0, 3.0);
      const Matrix p = forward_probs(m, x);
      for (std::size_t i = 0; i < p.rows(); ++i) {
        double s = 0.0;
        for (double v : p.row(i)) s += v;
        CHECK(std::abs(s - 1.0) <= 1e-9);
      }
      const auto base = row_argmax(forward_logits(m, x));
      for (double tau : {1e-3, 0.5, 7.0}) {
        m.set_temperature(tau);
        CHECK(row_argmax(forward_probs(m, x)) == base);
      }
    }
  }

  TEST_CASE("non-positive temperature") {
    DualEncoderModel m = DualEncoderModel::random_base(tiny(2, 2), 1.0, 1);
    CHECK(code_of([&] { m.set_temperature(0.0); }) == ErrorCode::kParameter);
    CHECK(code_of([&] { DualEncoderModel(tiny(2, 2), -1.0); }) == ErrorCode::kParameter);
  }

  TEST_CASE("cross-entropy values") {
    const std::vector<std::size_t> zero_one{0, 1};
    CHECK(cross_entropy(Matrix::from_rows({{1, 0}, {0, 1}}), zero_one) == 0.0);
    CHECK(cross_entropy(Matrix(1, 10, 0.1), std::vector<std::size_t>{3}) ==
          doctest::Approx(2.302585).epsilon(1e-6));
    const Matrix p = Matrix::from_rows({{0.5, 0.25, 0.25}, {0.25, 0.5, 0.25}});
    const std::vector<std::size_t> labels{0, 2};
    CHECK(cross_entropy(p, labels) == doctest::Approx((std::log(2.0) + std::log(4.0)) / 2).epsilon(1e-15));
    CHECK(cross_entropy(p, labels) == doctest::Approx(1.0397).epsilon(1e-4));
    CHECK(code_of([&] { cross_entropy(p, std::vector<std::size_t>{0, 3}); }) == ErrorCode::kLabel);
    CHECK(code_of([&] { cross_entropy(Matrix(1, 2, 0.4), std::vector<std::size_t>{0}); }) ==
          ErrorCode::kParameter);
  }
}

TEST_SUITE("modes") {
  TEST_CASE("zero-initialized adapters reproduce the base bitwise") {
    std::mt19937_64 gen(21);
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const DualEncoderModel base = DualEncoderModel::random_base(tiny(6, 4, 2), 0.01, seed);
      const Matrix x = oracle::random_matrix(gen, 7, 6, -2.0, 2.0);
      for (auto targets : {LoraTargets::kText, LoraTargets::kImage, LoraTargets::kBoth}) {
        DualEncoderModel m = base;
        m.configure(flora(targets), seed + 100);
        CHECK(bitwise_equal(forward_probs(m, x), forward_probs(base, x)));
        CHECK(bitwise_equal(encode_classes(m), encode_classes(base)));
      }
      DualEncoderModel aa = base;
      aa.configure(of_kind(AdaptationKind::kAa), seed);
      // Zero residual; the re-normalization of unit rows can move the last bit.
      CHECK(oracle::max_abs_diff(encode_image(aa, x), encode_image(base, x)) <= 1e-15);
      CHECK(row_argmax(forward_logits(aa, x)) == row_argmax(forward_logits(base, x)));
    }
  }

  TEST_CASE("LC head starts at the zero-shot classifier") {
    std::mt19937_64 gen(22);
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const DualEncoderModel base = DualEncoderModel::random_base(tiny(6, 5, 2), 0.01, seed);
      DualEncoderModel lc = base;
      lc.configure(of_kind(AdaptationKind::kLc), seed);
      CHECK(lc.parameter(names::kHead).rows() == 7);
      CHECK(lc.parameter(names::kHead).cols() == 5);
      const Matrix x = oracle::random_matrix(gen, 20, 6, -2.0, 2.0);
      CHECK(row_argmax(forward_logits(lc, x)) == row_argmax(forward_logits(base, x)));
    }
    DualEncoderModel f = DualEncoderModel::random_base(tiny(3, 2), 0.01, 1);
    f.configure(flora(LoraTargets::kText), 1);
    CHECK(code_of([&] { init_linear_head_zero_shot(f); }) == ErrorCode::kMode);
  }

  TEST_CASE("attention adapter") {
    Rng rng(3);
    const AttentionAdapter a = build_attention_adapter(4, 6, rng);
    CHECK(a.down_weight.rows() == 6);
    CHECK(a.down_weight.cols() == 4);
    CHECK(a.up_weight == Matrix(4, 6));
    CHECK(code_of([&] { build_attention_adapter(0, 6, rng); }) == ErrorCode::kParameter);
    AdaptationMode mode = of_kind(AdaptationKind::kAa);
    mode.adapter_width = 4;
    CHECK(count_params(tiny(6, 3), mode) == 2 * 6 * 4 + 4 + 6);
  }

  TEST_CASE("transfer sets: sizes, inclusion, frozen encoders") {
    const ModelShape shape{5, 6, 2, 2, 4};
    std::vector<AdaptationMode> modes{flora(LoraTargets::kText), flora(LoraTargets::kImage),
                                      flora(LoraTargets::kBoth), of_kind(AdaptationKind::kLc),
                                      of_kind(AdaptationKind::kVmLc), of_kind(AdaptationKind::kAa),
                                      of_kind(AdaptationKind::kFft)};
    for (const auto& mode : modes) {
      DualEncoderModel m = DualEncoderModel::random_base(shape, 0.01, 4);
      m.configure(mode, 4);
      const auto set = select_transfer_set(m, mode);
      CHECK(std::is_sorted(set.begin(), set.end()));
      std::uint64_t n = 0;
      for (const auto& name : set) n += m.parameter(name).size();
      CHECK(n == count_params(shape, mode));

      AdaptationMode fft = mode;
      fft.kind = AdaptationKind::kFft;
      const auto all = select_transfer_set(m, fft);
      for (const auto& name : set) CHECK(std::find(all.begin(), all.end(), name) != all.end());

      if (mode.kind == AdaptationKind::kFlora || mode.kind == AdaptationKind::kAa ||
          mode.kind == AdaptationKind::kLc) {
        for (const auto& name : m.base_parameter_names())
          CHECK(std::find(set.begin(), set.end(), name) == set.end());
      }

      // Gradients reach exactly the transfer set.
      Tape tape;
      std::set<std::string, std::less<>> trainable(set.begin(), set.end());
      std::mt19937_64 gen(5);
      const ForwardGraph g = build_forward(tape, m, oracle::random_matrix(gen, 3, 5), trainable);
      const std::vector<std::size_t> labels{0, 1, 3};
      const auto grads = tape.backward(cross_entropy_loss(tape, g.logits, labels));
      std::set<std::string, std::less<>> with_grad;
      for (const auto& [name, node] : g.parameter_nodes)
        if (grads.contains(node)) with_grad.insert(name);
      CHECK(with_grad == trainable);
    }
    DualEncoderModel bare = DualEncoderModel::random_base(shape, 0.01, 1);
    CHECK(code_of([&] { select_transfer_set(bare, flora(LoraTargets::kText)); }) == ErrorCode::kMode);
  }

  TEST_CASE("reference LoRA and head counts") {
    CHECK(lora_param_count(512, 12, 2) == 24576);
    CHECK(lora_param_count(768, 12, 2) == 36864);
    CHECK(lora_param_count(768, 12, 32) == 589824);
    const std::uint64_t text[] = {12288, 24576, 49152, 98304, 196608, 393216};
    std::size_t i = 0;
    for (std::uint64_t r : {1, 2, 4, 8, 16, 32}) CHECK(lora_param_count(512, 12, r) == text[i++]);
    ModelShape ref{512, 512, 12, 12, 397};
    CHECK(count_params(ref, of_kind(AdaptationKind::kLc)) == 203661);
    ref.num_classes = 2;
    CHECK(count_params(ref, of_kind(AdaptationKind::kLc)) == 1026);
    CHECK(count_params(ref, flora(LoraTargets::kText)) == 24576);
  }
}

TEST_SUITE("gradients") {
  // Full dual-encoder loss with adapters on both towers; B is randomized so
  // both factors receive signal.
  TEST_CASE("dual-encoder loss with LoRA, 100 random configs") {
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      std::mt19937_64 gen(seed);
      const std::size_t d = 2 + seed % 15;  // <= 16
      const std::size_t k = 2 + seed % 4;   // <= 5
      const ModelShape shape{3 + seed % 4, d, 1 + seed % 2, 1 + (seed / 2) % 2, k};
      DualEncoderModel m = DualEncoderModel::random_base(shape, 0.5, seed);
      AdaptationMode mode = flora(LoraTargets::kBoth, 1 + seed % 3, 2.0);
      m.configure(mode, seed);
      const auto names = select_transfer_set(m, mode);
      for (const auto& name : names) {
        const Matrix& v = m.parameter(name);
        m.set_parameter(name, oracle::random_matrix(gen, v.rows(), v.cols(), -0.3, 0.3));
      }
      const Matrix x = oracle::random_matrix(gen, 4, shape.feature_dim, -1.0, 1.0);
      std::vector<std::size_t> labels(4);
      for (auto& l : labels) l = gen() % k;
      std::vector<Matrix> params;
      for (const auto& name : names) params.push_back(m.parameter(name));
      const double err = finite_diff_check(
          [&](Tape& t, std::span<const NodeId> p) {
            std::map<std::string, NodeId, std::less<>> bound;
            for (std::size_t i = 0; i < names.size(); ++i) bound.emplace(names[i], p[i]);
            const ForwardGraph g = build_forward(t, m, x, {}, bound);
            return cross_entropy_loss(t, g.logits, labels);
          },
          params, 1e-4);
      worst = std::max(worst, err);
      CHECK(err <= 1e-5);
    }
    MESSAGE("worst dual-encoder relative error " << worst);
  }
}

TEST_SUITE("checkpoint") {
  TEST_CASE("model round trip is bitwise and byte-stable") {
    DualEncoderModel m = DualEncoderModel::random_base(tiny(4, 3, 2), 0.01, 7);
    m.configure(flora(LoraTargets::kBoth, 3, 16.0), 7);
    std::stringstream first;
    write_container(first, model_to_container(m));
    const std::string bytes = first.str();
    const DualEncoderModel back = model_from_container(read_container(first));
    CHECK(back.parameters().size() == m.parameters().size());
    for (const auto& [name, value] : m.parameters()) CHECK(bitwise_equal(back.parameter(name), value));
    CHECK(back.temperature() == m.temperature());
    CHECK(back.mode().kind == AdaptationKind::kFlora);
    CHECK(back.mode().lora.rank == 3);
    std::stringstream second;
    write_container(second, model_to_container(back));
    CHECK(second.str() == bytes);
    CHECK(bytes.substr(0, 8) == "FLORACKP");
  }

  TEST_CASE("hex-float metadata round trips") {
    for (double v : {0.1, 1e-300, -3.5, 5e-5}) CHECK(decode_double(encode_double(v)) == v);
  }

  TEST_CASE("corrupt input") {
    std::stringstream bad("NOTACKPT....");
    CHECK(code_of([&] { read_container(bad); }) == ErrorCode::kParse);
    DualEncoderModel m = DualEncoderModel::random_base(tiny(2, 2), 0.01, 1);
    std::stringstream s;
    write_container(s, model_to_container(m));
    std::string truncated = s.str().substr(0, s.str().size() - 5);
    std::stringstream t(truncated);
    CHECK(code_of([&] { read_container(t); }) == ErrorCode::kParse);
  }
}
