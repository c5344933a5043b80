#include <doctest.h>

#include <cmath>
#include <fstream>
#include <limits>

#include "fdb/flow.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace fdb;
using namespace fdb::testing;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spit(const fs::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary);
  out << bytes;
}

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  return ErrorKind::runtime;
}

FlowField random_flow(int h, int w, std::uint64_t seed, double amp) {
  return FlowField(random_tensor<float>({2, h, w}, seed, -amp, amp));
}

}  // namespace

TEST_CASE(".flo round trip is bit exact") {
  TempDir tmp("flo");
  for (std::uint64_t seed = 1; seed <= 4; ++seed) {
    const FlowField f = random_flow(7, 11, seed, 20.0);
    write_flo(f, tmp.path() / "f.flo");
    const FlowField g = read_flo(tmp.path() / "f.flo");
    CHECK(std::memcmp(f.data().data(), g.data().data(), f.data().size() * sizeof(float)) == 0);
    CHECK(g.size() == Size2{7, 11});
  }
}

TEST_CASE(".flo byte layout") {
  TempDir tmp("flo");
  SUBCASE("hand-assembled 1x1 file") {
    spit(tmp.path() / "a.flo", flo_bytes(202021.25f, 1, 1, {1.5f, -2.0f}));
    const FlowField f = read_flo(tmp.path() / "a.flo");
    CHECK(f.u(0, 0) == 1.5f);
    CHECK(f.v(0, 0) == -2.0f);
  }
  SUBCASE("interleaving is row-major (u, v) pairs") {
    // width 2, height 1: pixel (0,0) = (1,2), pixel (0,1) = (3,4)
    spit(tmp.path() / "b.flo", flo_bytes(202021.25f, 2, 1, {1, 2, 3, 4}));
    const FlowField f = read_flo(tmp.path() / "b.flo");
    CHECK(f.u(0, 0) == 1.0f);
    CHECK(f.v(0, 0) == 2.0f);
    CHECK(f.u(0, 1) == 3.0f);
    CHECK(f.v(0, 1) == 4.0f);
  }
  SUBCASE("zero 2x2 field is a 12-byte header plus 32 zero bytes") {
    write_flo(FlowField::constant(2, 2, 0, 0), tmp.path() / "z.flo");
    const std::string bytes = slurp(tmp.path() / "z.flo");
    CHECK(bytes.size() == 12 + 32);
    CHECK(bytes == flo_bytes(202021.25f, 2, 2, std::vector<float>(8, 0.0f)));
  }
  SUBCASE("wrong sentinel") {
    spit(tmp.path() / "s.flo", flo_bytes(0.0f, 1, 1, {0, 0}));
    CHECK(kind_of([&] { read_flo(tmp.path() / "s.flo"); }) == ErrorKind::format);
  }
  SUBCASE("truncated payload names the byte counts") {
    spit(tmp.path() / "t.flo", flo_bytes(202021.25f, 2, 2, {1, 2, 3}));
    try {
      read_flo(tmp.path() / "t.flo");
      FAIL("expected a format error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::format);
      const std::string msg = e.what();
      CHECK(msg.find("32") != std::string::npos);
      CHECK(msg.find("12") != std::string::npos);
    }
  }
  SUBCASE("NaN is refused before anything is written") {
    Tensor<float> t({2, 1, 1});
    t[0] = std::numeric_limits<float>::quiet_NaN();
    CHECK(kind_of([&] { write_flo(FlowField(t), tmp.path() / "nan.flo"); }) == ErrorKind::validation);
    CHECK_FALSE(fs::exists(tmp.path() / "nan.flo"));
  }
}

TEST_CASE("backward_warp") {
  SUBCASE("zero flow is the identity, bitwise") {
    const Frame f = random_frame(9, 14, 3);
    CHECK(backward_warp(f, FlowField::constant(9, 14, 0, 0)) == f);
  }
  SUBCASE("integer shift on a ramp") {
    const int h = 3, w = 6;
    Tensor<float> ramp({3, h, w});
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) ramp[(c * h + y) * w + x] = static_cast<float>(x) / (w - 1);
    const Frame out = backward_warp(Frame(ramp), FlowField::constant(h, w, 1, 0));
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x + 1 < w; ++x)
          CHECK(out.data()[(c * h + y) * w + x] == doctest::Approx(static_cast<double>(x + 1) / (w - 1)).epsilon(1e-6));
        CHECK(out.data()[(c * h + y) * w + w - 1] == 1.0f);  // border replicated
      }
    const Tensor<double> ref = warp_oracle(ramp, FlowField::constant(h, w, 1, 0).data());
    for (std::size_t i = 0; i < ref.size(); ++i) CHECK(std::abs(out.data()[i] - ref[i]) <= 1e-6);
  }
  SUBCASE("half-pixel shift samples the midpoint") {
    Tensor<float> row({3, 1, 2});
    for (int c = 0; c < 3; ++c) row[c * 2 + 1] = 1.0f;
    const Frame out = backward_warp(Frame(row), FlowField::constant(1, 2, 0.5f, 0));
    CHECK(out.data()[0] == doctest::Approx(0.5).epsilon(1e-7));
  }
  SUBCASE("random flows agree with the bilinear oracle") {
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
      const Frame f = random_frame(10, 13, seed);
      const FlowField flow = random_flow(10, 13, seed + 50, 4.0);
      const Frame out = backward_warp(f, flow);
      const Tensor<double> ref = warp_oracle(f.data(), flow.data());
      double worst = 0;
      for (std::size_t i = 0; i < ref.size(); ++i) worst = std::max(worst, std::abs(out.data()[i] - ref[i]));
      CHECK(worst <= 1e-6);
    }
  }
  SUBCASE("linear in the frame") {
    const Frame a = random_frame(8, 9, 1), b = random_frame(8, 9, 2);
    const FlowField flow = random_flow(8, 9, 3, 3.0);
    Tensor<float> mix(a.data().shape());
    for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = 0.7f * a.data()[i] - 1.3f * b.data()[i];
    const Frame wa = backward_warp(a, flow), wb = backward_warp(b, flow), wm = backward_warp(Frame(mix), flow);
    for (std::size_t i = 0; i < mix.size(); ++i)
      CHECK(std::abs(wm.data()[i] - (0.7f * wa.data()[i] - 1.3f * wb.data()[i])) <= 1e-6);
  }
  SUBCASE("size mismatch") {
    CHECK(kind_of([&] { backward_warp(Frame::zeros(4, 4), FlowField::constant(4, 5, 0, 0)); }) == ErrorKind::contract);
  }
  SUBCASE("feature maps of any channel count") {
    const Tensor<float> feat = random_tensor<float>({5, 6, 7}, 9, 0, 1);
    const FlowField flow = random_flow(6, 7, 10, 2.0);
    const Tensor<float> out = backward_warp(feat, flow);
    const Tensor<double> ref = warp_oracle(feat, flow.data());
    for (std::size_t i = 0; i < ref.size(); ++i) CHECK(std::abs(out[i] - ref[i]) <= 1e-6);
  }
}

TEST_CASE("confidence_mask thresholds") {
  auto all = [](const ConfidenceMask& m, float v) {
    for (float x : m.data().values())
      if (x != v) return false;
    return true;
  };
  SUBCASE("static consistent flow is fully confident") {
    CHECK(all(confidence_mask(FlowField::constant(6, 8, 0, 0), FlowField::constant(6, 8, 0, 0)), 1.0f));
  }
  SUBCASE("forward (10,0) against backward (0,0) fails the consistency test everywhere") {
    // |w + w'|^2 = 100 > 0.01 * 100 + 0.5
    CHECK(all(confidence_mask(FlowField::constant(6, 30, 10, 0), FlowField::constant(6, 30, 0, 0)), 0.0f));
  }
  SUBCASE("opposite constant flows cancel in the interior") {
    const int h = 20, w = 24;
    const ConfidenceMask m = confidence_mask(FlowField::constant(h, w, 3, 4), FlowField::constant(h, w, -3, -4));
    // pixels whose correspondence (y - 4, x - 3) stays inside the frame
    for (int y = 4; y < h; ++y)
      for (int x = 3; x < w; ++x) CHECK(m.data()[y * w + x] == 1.0f);
    // the strip whose correspondence leaves the frame is zero
    CHECK(m.data()[0] == 0.0f);
  }
  SUBCASE("output is binary on random flows") {
    const ConfidenceMask m = confidence_mask(random_flow(12, 12, 1, 3.0), random_flow(12, 12, 2, 3.0));
    for (float x : m.data().values()) CHECK((x == 0.0f || x == 1.0f));
  }
  SUBCASE("motion boundary check fires on a flow step") {
    // backward flow jumps by 4 px between columns 5 and 6
    Tensor<float> b({2, 8, 12});
    Tensor<float> f({2, 8, 12});
    for (int y = 0; y < 8; ++y)
      for (int x = 0; x < 12; ++x) {
        b[y * 12 + x] = x < 6 ? 0.0f : -4.0f;
        f[y * 12 + x] = x < 6 ? 0.0f : 4.0f;
      }
    const ConfidenceMask m = confidence_mask(FlowField(f), FlowField(b));
    // |grad u|^2 = 16 at the step, far above 0.01 * 16 + 0.002
    CHECK(m.data()[3 * 12 + 5] == 0.0f);
    CHECK(m.data()[3 * 12 + 1] == 1.0f);
  }
  SUBCASE("size mismatch") {
    CHECK(kind_of([&] { confidence_mask(FlowField::constant(4, 4, 0, 0), FlowField::constant(4, 5, 0, 0)); }) ==
          ErrorKind::contract);
  }
}

TEST_CASE("mask files agree with masks computed on the fly") {
  TempDir tmp("mask");
  const SyntheticClip clip = make_synthetic_clip({"m", 4, 32, 48, 5, 0.0});
  for (std::size_t t = 0; t < clip.backward.size(); ++t) {
    const ConfidenceMask m = confidence_mask(clip.forward[t], clip.backward[t]);
    write_mask(m, tmp.path() / "m.pgm");
    CHECK(read_mask(tmp.path() / "m.pgm") == m);
  }
}

TEST_CASE("synthetic clip flows warp frame t onto frame t+1") {
  // Sanity check of the fixture itself: where the mask is confident, the
  // backward flow reproduces the next frame up to interpolation error.
  const SyntheticClip clip = make_synthetic_clip({"s", 3, 48, 64, 2, 0.0});
  const Frame warped = backward_warp(clip.frames.frames[0], clip.backward[0]);
  const ConfidenceMask m = confidence_mask(clip.forward[0], clip.backward[0]);
  double err = 0, n = 0, raw = 0;
  const std::size_t plane = 48 * 64;
  for (int c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < plane; ++i) {
      if (m.data()[i] == 0.0f) continue;
      const double d = warped.data()[c * plane + i] - clip.frames.frames[1].data()[c * plane + i];
      const double r = clip.frames.frames[0].data()[c * plane + i] - clip.frames.frames[1].data()[c * plane + i];
      err += d * d;
      raw += r * r;
      n += 1;
    }
  CHECK(n > plane);  // most of the frame is confident
  CHECK(err < 0.25 * raw);
}

TEST_CASE("resize_flow scales displacements with the grid") {
  const FlowField f = FlowField::constant(8, 12, 2.0f, -1.0f);
  const FlowField g = resize_flow(f, {4, 24});
  CHECK(g.size() == Size2{4, 24});
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 24; ++x) {
      CHECK(g.u(y, x) == doctest::Approx(4.0));
      CHECK(g.v(y, x) == doctest::Approx(-0.5));
    }
  const ConfidenceMask m = resize_mask(ConfidenceMask::ones(8, 12), {4, 6});
  for (float v : m.data().values()) CHECK(v == 1.0f);
}
