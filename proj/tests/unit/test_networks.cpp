#include <doctest.h>

#include <cstring>
#include <fstream>

#include "fdb/networks.hpp"
#include "fdb/ops.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace fdb;
using namespace fdb::testing;

namespace {

NetworkSpec small_spec(Variant v = Variant::sfn, PaddingMode p = PaddingMode::interpolation) {
  NetworkSpec s;
  s.variant = v;
  s.padding = p;
  s.base_channels = 4;
  s.residual_blocks = 2;
  return s;
}

Checkpoint as_checkpoint(const StylizationNetwork<float>& net, const std::string& stage = "stage1") {
  Checkpoint c;
  c.spec = net.spec();
  c.stage = stage;
  c.iteration = 7;
  c.parameters = net.export_parameters();
  return c;
}

std::uint64_t frame_checksum(const Frame& f) {
  std::uint64_t h = 1469598103934665603ull;
  for (float v : f.data().values()) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    h = (h ^ bits) * 1099511628211ull;
  }
  return h;
}

}  // namespace

TEST_CASE("interpolation_pad") {
  SUBCASE("target equal to the input is the identity") {
    const Var<double> x = Var<double>::constant(random_tensor<double>({1, 2, 3, 4}, 1));
    CHECK(ops::interpolation_pad(x, 3, 4).value() == x.value());
  }
  SUBCASE("constant maps stay constant") {
    const Var<double> x = Var<double>::constant(Tensor<double>({1, 2, 3, 3}, 0.7));
    const Tensor<double> out = ops::interpolation_pad(x, 9, 6).value();
    CHECK(out.shape() == Shape{1, 2, 9, 6});
    for (double v : out.values()) CHECK(v == doctest::Approx(0.7).epsilon(1e-15));
  }
  SUBCASE("[[1,2],[3,4]] to 4x4: interior exact, border from the reference resize") {
    const Tensor<double> src({1, 1, 2, 2}, {1, 2, 3, 4});
    const Tensor<double> out = ops::interpolation_pad(Var<double>::constant(src), 4, 4).value();
    const Tensor<double> ref = resize_oracle(src.reshaped({1, 2, 2}), 4, 4);
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 4; ++x) {
        const bool interior = y >= 1 && y <= 2 && x >= 1 && x <= 2;
        const double expect = interior ? src[(y - 1) * 2 + (x - 1)] : ref[y * 4 + x];
        CHECK(out[y * 4 + x] == doctest::Approx(expect).epsilon(1e-12));
      }
    CHECK(out[1 * 4 + 1] == 1.0);
    CHECK(out[2 * 4 + 2] == 4.0);
  }
  SUBCASE("interior equals the input exactly on random maps and sizes") {
    for (std::uint64_t seed = 1; seed <= 6; ++seed) {
      const int h = 2 + static_cast<int>(seed % 4), w = 3 + static_cast<int>(seed % 3);
      const int oh = h + static_cast<int>(seed % 5), ow = w + 2 * static_cast<int>(seed % 3);
      const Tensor<float> src = random_tensor<float>({1, 3, h, w}, seed);
      const Tensor<float> out = ops::interpolation_pad(Var<float>::constant(src), oh, ow).value();
      const int top = (oh - h) / 2, left = (ow - w) / 2;
      for (int c = 0; c < 3; ++c)
        for (int y = 0; y < h; ++y)
          for (int x = 0; x < w; ++x)
            CHECK(out[(static_cast<std::size_t>(c) * oh + y + top) * ow + x + left] == src[(c * h + y) * w + x]);
    }
  }
  SUBCASE("smaller target is a contract error") {
    try {
      ops::interpolation_pad(Var<float>::constant(Tensor<float>({1, 1, 4, 4})), 3, 5);
      FAIL("expected a contract error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::contract);
    }
  }
  SUBCASE("gradient on a 1x3x3 map") {
    const Tensor<double> w = random_tensor<double>({1, 1, 7, 6}, 9);
    const GradCheck r = gradcheck(
        [&](const std::vector<Var<double>>& in) {
          return ops::sum(ops::mul(ops::interpolation_pad(in[0], 7, 6), Var<double>::constant(w)));
        },
        {random_tensor<double>({1, 1, 3, 3}, 8)});
    CHECK(r.max_abs_grad > 0);
    CHECK(r.max_rel_error < 1e-4);
  }
}

TEST_CASE("sfn forward") {
  const auto net = StylizationNetwork<float>::create(small_spec(), 1);
  SUBCASE("shape and range") {
    const Frame y = net.stylize(random_frame(64, 96, 1));
    CHECK(y.size() == Size2{64, 96});
    for (float v : y.data().values()) {
      CHECK(v >= 0.0f);
      CHECK(v <= 1.0f);
    }
  }
  SUBCASE("deterministic") {
    const Frame x = random_frame(32, 32, 2);
    CHECK(net.stylize(x) == net.stylize(x));
    const auto again = StylizationNetwork<float>::create(small_spec(), 1);
    CHECK(frame_checksum(again.stylize(x)) == frame_checksum(net.stylize(x)));
    CHECK(again.parameter_checksum() == net.parameter_checksum());
    CHECK(StylizationNetwork<float>::create(small_spec(), 2).parameter_checksum() != net.parameter_checksum());
  }
  SUBCASE("an rnn cannot run as an sfn") {
    const auto rnn = StylizationNetwork<float>::create(small_spec(Variant::rnn), 1);
    try {
      rnn.stylize(random_frame(16, 16, 1));
      FAIL("expected a contract error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::contract);
    }
  }
}

TEST_CASE("padding modes and output sizes") {
  // Unpadded extents worked by hand for two residual blocks: 9x9 (-8), two
  // stride-2 3x3 (floor((h-3)/2)+1), four 3x3 in the blocks (-8), two
  // (x2 upsample, 3x3) stages (2h-2) and the final 9x9 (-8).
  const std::vector<std::pair<Size2, Size2>> cases = {
      {{64, 96}, {6, 38}}, {{80, 100}, {22, 42}}, {{120, 64}, {62, 6}}};
  for (PaddingMode mode : all_padding_modes()) {
    CAPTURE(to_string(mode));
    const auto net = StylizationNetwork<float>::create(small_spec(Variant::sfn, mode), 3);
    for (const auto& [in, unpadded] : cases) {
      const Frame y = net.stylize(random_frame(in.height, in.width, 4));
      CHECK(y.size() == net.output_size(in));
      if (mode == PaddingMode::none) {
        CHECK(y.size() == unpadded);
      } else {
        CHECK(y.size() == in);
      }
    }
  }
  SUBCASE("input too small for the unpadded network") {
    const auto net = StylizationNetwork<float>::create(small_spec(Variant::sfn, PaddingMode::none), 3);
    CHECK_THROWS_AS(net.output_size({32, 32}), Error);
  }
  CHECK(parse_padding_mode("reflective_at_input") == PaddingMode::reflective_at_input);
  CHECK_THROWS_AS(parse_padding_mode("mirror"), Error);
}

TEST_CASE("rnn forward") {
  const auto rnn = StylizationNetwork<float>::create(small_spec(Variant::rnn), 5);
  CHECK(rnn.parameter("c1.weight").shape()[1] == 6);
  SUBCASE("first step from the zero state") {
    const Frame x = random_frame(32, 40, 1);
    const auto [y, state] = rnn.step(RnnState{}, x);
    CHECK(y.size() == x.size());
    CHECK(state.previous_stylized == y);
    const auto [y0, s0] = rnn.step(RnnState::zeros({32, 40}), x);
    CHECK(y0 == y);
    for (float v : y.data().values()) CHECK(std::isfinite(v));
  }
  SUBCASE("state size mismatch") {
    try {
      rnn.step(RnnState::zeros({16, 16}), random_frame(32, 32, 1));
      FAIL("expected a contract error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::contract);
    }
  }
  SUBCASE("unroll feeds each output back") {
    const std::vector<Frame> frames = {random_frame(16, 24, 1), random_frame(16, 24, 2), random_frame(16, 24, 3)};
    const auto out = rnn_unroll(rnn, frames);
    REQUIRE(out.size() == 3);
    RnnState s;
    for (int t = 0; t < 3; ++t) {
      auto [y, next] = rnn.step(s, frames[t]);
      CHECK(y == out[t]);
      s = next;
    }
  }
  SUBCASE("rnn with the unpadded mode is rejected") {
    CHECK_THROWS_AS(small_spec(Variant::rnn, PaddingMode::none).validate(), Error);
  }
}

TEST_CASE("init_rnn_from_sfn") {
  const auto sfn = StylizationNetwork<float>::create(small_spec(), 11);
  const Checkpoint ck = as_checkpoint(sfn);
  const auto a = init_rnn_from_sfn<float>(ck, 1), b = init_rnn_from_sfn<float>(ck, 2);
  CHECK(a.spec().variant == Variant::rnn);
  CHECK(a.parameter("c1.weight").shape() == Shape{4, 6, 9, 9});
  REQUIRE(a.parameters().size() == sfn.parameters().size());
  for (const auto& p : a.parameters()) {
    CAPTURE(p.name);
    const bool first = p.name == "c1.weight" || p.name == "c1.bias";
    if (!first) {
      CHECK(p.value.value() == sfn.parameter(p.name).value());
      CHECK(p.value.value() == b.parameter(p.name).value());
    }
  }
  CHECK(a.parameter("c1.weight").value() != b.parameter("c1.weight").value());
  SUBCASE("an rnn checkpoint is refused") {
    try {
      init_rnn_from_sfn<float>(as_checkpoint(a), 1);
      FAIL("expected a contract error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::contract);
    }
  }
  SUBCASE("a checkpoint with a missing tensor is refused") {
    Checkpoint broken = ck;
    broken.parameters.pop_back();
    CHECK_THROWS_AS(init_rnn_from_sfn<float>(broken, 1), Error);
  }
}

TEST_CASE("checkpoint round trip") {
  TempDir tmp("ckpt");
  const auto net = StylizationNetwork<float>::create(small_spec(Variant::sfn, PaddingMode::reflective), 21);
  Checkpoint ck = as_checkpoint(net, "finetuned");
  ck.extra["style"] = "mosaic";
  ck.save(tmp.path() / "a.fdbck");
  const Checkpoint back = Checkpoint::load(tmp.path() / "a.fdbck");
  CHECK(back.stage == "finetuned");
  CHECK(back.iteration == 7);
  CHECK(back.spec.padding == PaddingMode::reflective);
  CHECK(back.extra["style"] == "mosaic");
  CHECK(back.parameter_checksum() == ck.parameter_checksum());
  const auto rebuilt = StylizationNetwork<float>::from_checkpoint(back);
  const Frame x = random_frame(24, 24, 3);
  CHECK(rebuilt.stylize(x) == net.stylize(x));
  SUBCASE("corrupt file") {
    std::ofstream(tmp.path() / "bad.fdbck") << "FDBARC01 but nothing else";
    CHECK_THROWS_AS(Checkpoint::load(tmp.path() / "bad.fdbck"), Error);
    CHECK_THROWS_AS(Checkpoint::load(tmp.path() / "missing.fdbck"), Error);
  }
}

TEST_CASE("network gradients match finite differences") {
  for (PaddingMode mode : {PaddingMode::interpolation, PaddingMode::reflective_at_input}) {
    CAPTURE(to_string(mode));
    NetworkSpec spec = small_spec(Variant::sfn, mode);
    spec.base_channels = 2;
    spec.residual_blocks = 1;
    const auto net = StylizationNetwork<double>::create(spec, 4);
    const Tensor<double> w = random_tensor<double>({1, 3, 16, 16}, 5);
    auto loss = [&](const Var<double>& x) { return ops::sum(ops::mul(net.forward(x), Var<double>::constant(w))); };
    SUBCASE("input") {
      const GradCheck r = gradcheck([&](const std::vector<Var<double>>& in) { return loss(in[0]); },
                                    {random_tensor<double>({1, 3, 16, 16}, 6, 0, 1)}, 1e-6, 64);
      CHECK(r.max_abs_grad > 0);
      CHECK(r.max_rel_error < 1e-4);
    }
    SUBCASE("first and last layer weights") {
      const Var<double> x = Var<double>::constant(random_tensor<double>({1, 3, 16, 16}, 7, 0, 1));
      for (const char* name : {"c1.weight", "out.weight"}) {
        CAPTURE(name);
        auto copy = net;
        Var<double>* target = nullptr;
        for (auto& p : copy.parameters())
          if (p.name == name) target = &p.value;
        REQUIRE(target != nullptr);
        const Tensor<double> w0 = target->value();
        const GradCheck r = gradcheck(
            [&](const std::vector<Var<double>>& in) {
              *target = in[0];
              return ops::sum(ops::mul(copy.forward(x), Var<double>::constant(w)));
            },
            {w0}, 1e-6, 48);
        CHECK(r.max_abs_grad > 0);
        CHECK(r.max_rel_error < 1e-4);
      }
    }
  }
}
