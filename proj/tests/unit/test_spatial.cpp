#include <cmath>
#include <random>
#include <set>

#include "doctest.h"
#include "oracles.hpp"
#include "seld/errors.hpp"
#include "seld/scene_synth.hpp"
#include "seld/spatial_features.hpp"

using namespace seld;

namespace {

// Short periodic frames keep the brute-force oracle cheap: 384 samples, no zero padding.
LocFrameConfig small_config(bool phat = true) {
  LocFrameConfig cfg;
  cfg.frame_ms = 8.0;
  cfg.fft_size = 384;
  cfg.phat = phat;
  return cfg;
}

std::vector<float> to_float(const std::vector<double>& x) { return {x.begin(), x.end()}; }

AudioBlock block_from(std::vector<std::vector<float>> channels) {
  AudioBlock b;
  b.sample_rate = 48000;
  b.channels = std::move(channels);
  return b;
}

AudioBlock noise_block(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> d(0.0f, 0.1f);
  std::vector<std::vector<float>> ch(4, std::vector<float>(48000));
  for (auto& c : ch) {
    for (auto& v : c) v = d(rng);
  }
  return block_from(std::move(ch));
}

SourceSpec talker(Side side, double on, double off, SignalKind kind = SignalKind::speech_like) {
  SourceSpec s;
  s.kind = kind;
  s.side = side;
  s.onset_s = on;
  s.offset_s = off;
  s.level_db = -20;
  return s;
}

std::vector<AudioBlock> render_blocks(const SceneSpec& spec) {
  const auto scene = render_scene(spec, ArrayGeometry::phone_default());
  return segment_blocks(scene.recording, scene.labels);
}

}  // namespace

TEST_SUITE("spatial_features") {
  TEST_CASE("default framing and lag window") {
    const LocFrameConfig cfg;
    CHECK(cfg.frame_length() == 4080);
    CHECK(cfg.hop_length() == 2040);
    CHECK(cfg.max_lag_samples() == 1);
    CHECK(cfg.max_interp_lag() == 5);
    const SpatialFrontEnd fe;
    CHECK(fe.frames_for(48000) == (48000 - 4080) / 2040 + 1);
    CHECK(fe.frames_for(48000) == 22);
  }

  TEST_CASE("feasible integer lags are exactly -1, 0, +1") {
    const double bound = 0.007 / 343.0 * 48000.0;
    std::set<int> feasible;
    for (int l = -10; l <= 10; ++l) {
      if (l >= -std::ceil(bound) && l <= std::ceil(bound)) feasible.insert(l);
    }
    CHECK(feasible == std::set<int>{-1, 0, 1});

    auto cfg = small_config();
    cfg.interp_factor = 1;
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(-40, 40);
    for (int trial = 0; trial < 30; ++trial) {
      const auto x = oracle::bandlimited_noise(384, 100 + trial);
      const auto y = fractional_delay(x, u(rng));
      const auto g = gcc_interpolated(to_float(x), to_float(y), cfg);
      CHECK(g.values.size() == 3);
      CHECK(feasible.contains(g.peak_lag()));
    }
  }

  TEST_CASE("gcc examples against the oversampled cross-correlation oracle") {
    const auto cfg = small_config();
    const auto x = oracle::bandlimited_noise(384, 7);
    const auto fx = to_float(x);
    CHECK(gcc_interpolated(fx, fx, cfg).peak_lag() == 0);

    const auto one = fractional_delay(x, 1.0);
    const int oracle_one = oracle::xcorr_argmax(oracle::oversample(x, 5), oracle::oversample(one, 5), 5);
    CHECK(oracle_one == 5);
    CHECK(gcc_interpolated(fx, to_float(one), cfg).peak_lag() == 5);

    const auto part = fractional_delay(x, 0.6);
    const int oracle_part = oracle::xcorr_argmax(oracle::oversample(x, 5), oracle::oversample(part, 5), 5);
    CHECK(std::abs(oracle_part - 3) <= 1);
    CHECK(std::abs(gcc_interpolated(fx, to_float(part), cfg).peak_lag() - 3) <= 1);
  }

  TEST_CASE("unweighted gcc equals the interpolated circular cross-correlation") {
    const auto cfg = small_config(false);
    const auto x = oracle::bandlimited_noise(384, 21);
    const auto y = fractional_delay(x, -0.37);
    const auto g = gcc_interpolated(to_float(x), to_float(y), cfg);
    // Oracle on the float-rounded inputs the GCC actually sees.
    const auto xf = to_float(x), yf = to_float(y);
    const auto xo = oracle::oversample({xf.begin(), xf.end()}, 5);
    const auto yo = oracle::oversample({yf.begin(), yf.end()}, 5);
    for (int l = -5; l <= 5; ++l) {
      CHECK(g.at(l) == doctest::Approx(oracle::xcorr_at(xo, yo, l) / 5.0).epsilon(1e-6));
    }
    CHECK(g.peak_lag() == oracle::xcorr_argmax(xo, yo, 5));
  }

  TEST_CASE("interpolated argmax agrees with the oracle over random trials") {
    const auto cfg = small_config();
    std::mt19937_64 rng(2024);
    std::uniform_real_distribution<double> u(-0.9, 0.9);
    int agree = 0;
    constexpr int kTrials = 100;
    for (int trial = 0; trial < kTrials; ++trial) {
      const auto x = oracle::bandlimited_noise(384, 5000 + trial);
      const auto y = fractional_delay(x, u(rng));
      const int got = gcc_interpolated(to_float(x), to_float(y), cfg).peak_lag();
      const int want = oracle::xcorr_argmax(oracle::oversample(x, 5), oracle::oversample(y, 5), 5);
      if (std::abs(got - want) <= 1) ++agree;
    }
    CHECK(agree >= 95);
  }

  TEST_CASE("gcc is antisymmetric in its arguments") {
    const auto cfg = small_config();
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const auto x = to_float(oracle::bandlimited_noise(384, seed));
      const auto y = to_float(oracle::bandlimited_noise(384, seed + 99));
      const auto a = gcc_interpolated(x, y, cfg);
      const auto b = gcc_interpolated(y, x, cfg);
      for (int l = -5; l <= 5; ++l) CHECK(a.at(l) == doctest::Approx(b.at(-l)).epsilon(1e-9).scale(1.0));
    }
  }

  TEST_CASE("zero-energy frames are low confidence") {
    const auto cfg = small_config();
    const std::vector<float> zero(384, 0.0f);
    const auto g = gcc_interpolated(zero, to_float(oracle::bandlimited_noise(384, 3)), cfg);
    CHECK(g.low_confidence);
    CHECK(g.peak_lag() == 0);
    CHECK_THROWS_AS(gcc_interpolated(zero, std::vector<float>(383, 0.0f), cfg), ShapeError);
  }

  TEST_CASE("magnitude difference identities") {
    auto block = noise_block(5);
    block.channels[2] = block.channels[0];
    block.channels[3] = block.channels[1];
    for (float v : mel_magnitude_difference(block).data) CHECK(v == 0.0f);

    for (int i : {0, 1}) {
      for (std::size_t s = 0; s < 48000; ++s) {
        block.channels[i][s] = static_cast<float>(std::exp(1.0) * block.channels[i + 2][s]);
      }
    }
    const auto d = mel_magnitude_difference(block);
    CHECK(d.rows == 22);
    CHECK(d.cols == 40);
    for (float v : d.data) CHECK(std::abs(v - 1.0) < 1e-6);
  }

  TEST_CASE("silence gives zero features") {
    const auto block = block_from(std::vector<std::vector<float>>(4, std::vector<float>(48000, 0.0f)));
    const auto f = assemble_spatial(block);
    CHECK(f.rows == 22);
    CHECK(f.cols == 41);
    for (float v : f.data) CHECK(v == 0.0f);
    const auto track = tdoa_feature(block);
    for (bool low : track.low_confidence) CHECK(low);
  }

  TEST_CASE("averaging halves the two-pair feature width") {
    const auto block = noise_block(9);
    auto one_pair = LocFrameConfig{};
    const auto both = assemble_spatial(block);
    CHECK(both.cols == 41);
    CHECK(2 * both.cols == 82);
    // The averaged D is the mean of the per-pair versions.
    one_pair.pairs = {{0, 2}};
    const auto a = mel_magnitude_difference(block, one_pair);
    one_pair.pairs = {{1, 3}};
    const auto b = mel_magnitude_difference(block, one_pair);
    for (std::size_t i = 0; i < a.data.size(); ++i) {
      CHECK(both.data[(i / 40) * 41 + i % 40 + 1] == doctest::Approx(0.5 * (a.data[i] + b.data[i])).epsilon(1e-5));
    }
  }

  TEST_CASE("front source reads about +4.9, back source the opposite sign") {
    for (Side side : {Side::front, Side::back}) {
      SceneSpec spec;
      spec.duration_s = 2;
      spec.noise_floor_db = -90;
      spec.sources = {talker(side, 0.0, 2.0, SignalKind::noise)};
      const auto blocks = render_blocks(spec);
      const auto track = tdoa_feature(blocks[1]);
      const double sign = side == Side::front ? 1.0 : -1.0;
      for (std::size_t p = 0; p < 2; ++p) {
        for (int lag : track.pair_lags[p]) CHECK(std::abs(sign * lag - 4.9) <= 1.0);
      }
      for (double t : track.tdoa) CHECK(std::abs(sign * t - 4.9) <= 1.0);
    }
  }

  TEST_CASE("6 dB shadowing gives D near ln(10^(6/20))") {
    SceneSpec spec;
    spec.duration_s = 2;
    spec.noise_floor_db = -140;
    spec.sources = {talker(Side::front, 0.0, 2.0, SignalKind::noise)};
    const auto blocks = render_blocks(spec);
    const SpatialFrontEnd fe;
    const auto d = fe.magnitude_difference(blocks[1].channels);
    double sum = 0;
    int count = 0;
    for (float v : d.data) {
      sum += v;
      ++count;
    }
    CHECK(sum / count == doctest::Approx(std::log(std::pow(10.0, 6.0 / 20))).epsilon(0.02));
    CHECK(std::log(std::pow(10.0, 6.0 / 20)) == doctest::Approx(0.691).epsilon(1e-3));
  }

  TEST_CASE("alternating talkers alternate the TDOA sign") {
    SceneSpec spec;
    spec.duration_s = 4;
    spec.noise_floor_db = -70;
    spec.sources = {talker(Side::front, 0, 1), talker(Side::back, 1, 2), talker(Side::front, 2, 3),
                    talker(Side::back, 3, 4)};
    const auto blocks = render_blocks(spec);
    const SpatialFrontEnd fe;
    for (std::size_t s = 0; s < 4; ++s) {
      const auto track = fe.tdoa(blocks[s].channels);
      double mean = 0;
      for (double t : track.tdoa) mean += t;
      mean /= double(track.tdoa.size());
      CHECK((s % 2 == 0 ? mean > 2.0 : mean < -2.0));
    }
  }

  TEST_CASE("mirroring the scene negates TDOA and D") {
    SceneSpec spec;
    spec.duration_s = 2;
    spec.noise_floor_db = -140;
    // Broadband sources keep every band well above the (unmirrored) noise floor.
    spec.sources = {talker(Side::front, 0.0, 2.0, SignalKind::noise), talker(Side::back, 0.5, 1.1, SignalKind::noise)};
    SceneSpec mirrored = spec;
    for (auto& s : mirrored.sources) s.side = s.side == Side::front ? Side::back : Side::front;
    const auto a = render_blocks(spec);
    const auto b = render_blocks(mirrored);
    const SpatialFrontEnd fe;
    for (std::size_t s = 0; s < 2; ++s) {
      const auto fa = fe.assemble(a[s].channels);
      const auto fb = fe.assemble(b[s].channels);
      for (std::size_t t = 0; t < fa.rows; ++t) {
        CHECK(fa(t, 0) == -fb(t, 0));
        for (std::size_t c = 1; c < fa.cols; ++c) CHECK(std::abs(fa(t, c) + fb(t, c)) < 1e-2);
      }
    }
  }

  TEST_CASE("TDOA never leaves [-5, 5]") {
    for (bool curves : {false, true}) {
      LocFrameConfig cfg;
      cfg.average_gcc_curves = curves;
      for (std::uint64_t seed = 0; seed < 3; ++seed) {
        const auto spec = random_scene("c", "outdoor", seed, {3.0, 0.5});
        for (const auto& blk : render_blocks(spec)) {
          for (double t : tdoa_feature(blk, cfg).tdoa) {
            CHECK(t >= -5.0);
            CHECK(t <= 5.0);
          }
        }
      }
    }
  }

  TEST_CASE("missing microphones are a shape error") {
    const auto block = block_from(std::vector<std::vector<float>>(3, std::vector<float>(48000, 0.0f)));
    CHECK_THROWS_AS(assemble_spatial(block), ShapeError);
  }

  TEST_CASE("config json round trip keeps 1-based pairs") {
    const LocFrameConfig cfg;
    const nlohmann::json j = cfg;
    CHECK(j.at("pairs") == nlohmann::json::parse("[[1,3],[2,4]]"));
    CHECK(nlohmann::json(j.get<LocFrameConfig>()) == j);
  }
}
