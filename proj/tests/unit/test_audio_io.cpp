#include <cmath>
#include <cstring>
#include <fstream>

#include "doctest.h"
#include "helpers.hpp"
#include "seld/audio_io.hpp"
#include "seld/errors.hpp"

using namespace seld;

namespace {

// Minimal PCM16 WAV built by hand, independent of encode_wav.
std::vector<unsigned char> pcm16_file(int channels, int rate, const std::vector<std::int16_t>& interleaved) {
  std::vector<unsigned char> b;
  auto put = [&](const void* p, std::size_t n) {
    const auto* c = static_cast<const unsigned char*>(p);
    b.insert(b.end(), c, c + n);
  };
  auto u32 = [&](std::uint32_t v) { put(&v, 4); };
  auto u16 = [&](std::uint16_t v) { put(&v, 2); };
  const std::uint32_t data = static_cast<std::uint32_t>(interleaved.size() * 2);
  put("RIFF", 4);
  u32(36 + data);
  put("WAVE", 4);
  put("fmt ", 4);
  u32(16);
  u16(1);
  u16(static_cast<std::uint16_t>(channels));
  u32(static_cast<std::uint32_t>(rate));
  u32(static_cast<std::uint32_t>(rate * channels * 2));
  u16(static_cast<std::uint16_t>(channels * 2));
  u16(16);
  put("data", 4);
  u32(data);
  put(interleaved.data(), data);
  return b;
}

}  // namespace

TEST_SUITE("audio_io") {
  TEST_CASE("pcm16 -32768 decodes to exactly -1") {
    const auto rec = decode_wav(pcm16_file(2, 48000, {-32768, 16384, 0, 32767}));
    CHECK(rec.channel_count() == 2);
    CHECK(rec.frames() == 2);
    CHECK(rec.channels[0][0] == -1.0f);
    CHECK(rec.channels[1][0] == static_cast<float>(16384.0 / 32768.0));
    CHECK(rec.channels[1][1] == static_cast<float>(32767.0 / 32768.0));
  }

  TEST_CASE("8-channel 10 s 32-bit file has 8 x 480000 samples") {
    MultichannelRecording rec;
    rec.sample_rate = 48000;
    rec.channels.assign(8, std::vector<float>(480000, 0.0f));
    for (int c = 0; c < 8; ++c) rec.channels[c][c * 1000] = 0.5f;
    for (auto fmt : {SampleFormat::pcm32, SampleFormat::float32}) {
      const auto back = decode_wav(encode_wav(rec, fmt));
      CHECK(back.channel_count() == 8);
      CHECK(back.frames() == 480000);
      CHECK(back.duration_s() == doctest::Approx(10.0));
      CHECK(back.channels[3][3000] == 0.5f);
    }
  }

  TEST_CASE("mono silence reads back as zeros") {
    const auto rec = decode_wav(pcm16_file(1, 16000, std::vector<std::int16_t>(100, 0)));
    CHECK(rec.channel_count() == 1);
    for (float v : rec.channels[0]) CHECK(v == 0.0f);
  }

  TEST_CASE("float32 round trip through a file is bit exact") {
    testing::TempDir dir("wav");
    auto rec = testing::noise_recording(8, 4801, 3);
    rec.channels[2][7] = -0.0f;
    rec.channels[5][9] = 1.5f;  // float payloads may exceed full scale
    write_wav(dir.path / "a.wav", rec, SampleFormat::float32);
    const auto back = read_wav(dir.path / "a.wav");
    REQUIRE(back.channel_count() == 8);
    for (int c = 0; c < 8; ++c) {
      CHECK(std::memcmp(back.channels[c].data(), rec.channels[c].data(), rec.frames() * sizeof(float)) == 0);
    }
  }

  TEST_CASE("pcm16 and pcm32 round trips within one quantization step") {
    const auto rec = testing::noise_recording(3, 1000, 9);
    const auto b16 = decode_wav(encode_wav(rec, SampleFormat::pcm16));
    const auto b32 = decode_wav(encode_wav(rec, SampleFormat::pcm32));
    for (int c = 0; c < 3; ++c) {
      for (std::size_t i = 0; i < rec.frames(); ++i) {
        CHECK(std::abs(b16.channels[c][i] - rec.channels[c][i]) <= 1.0f / 32768.0f);
        CHECK(std::abs(b32.channels[c][i] - rec.channels[c][i]) <= 1e-7f);
      }
    }
  }

  TEST_CASE("malformed, unsupported and truncated files raise distinct errors") {
    auto good = pcm16_file(1, 8000, {1, 2, 3, 4});
    auto bad = good;
    std::memcpy(bad.data(), "RIFX", 4);
    CHECK_THROWS_AS(decode_wav(bad), FormatError);
    auto alaw = good;
    alaw[20] = 6;  // codec 6 = A-law
    CHECK_THROWS_AS(decode_wav(alaw), UnsupportedError);
    auto truncated = good;
    truncated.resize(truncated.size() - 3);
    CHECK_THROWS_AS(decode_wav(truncated), LengthError);
    CHECK_THROWS_AS(decode_wav(std::vector<unsigned char>(5, 0)), FormatError);
  }

  TEST_CASE("downmix examples") {
    SUBCASE("cancelling channels give a silent flag") {
      const std::vector<std::vector<float>> ch{{1, 1}, {-1, -1}};
      const auto m = downmix_and_normalize(ch);
      CHECK(m.silent);
      CHECK(m.samples == std::vector<float>{0, 0});
    }
    SUBCASE("peak scaling") {
      const std::vector<std::vector<float>> ch{{0.2f, -0.4f}};
      const auto m = downmix_and_normalize(ch);
      CHECK_FALSE(m.silent);
      CHECK(m.samples[0] == doctest::Approx(0.5));
      CHECK(m.samples[1] == doctest::Approx(-1.0));
    }
    SUBCASE("eight equal channels equal single-channel normalization") {
      const auto sig = testing::gaussian(500, 4);
      const std::vector<std::vector<float>> eight(8, sig);
      const std::vector<std::vector<float>> one{sig};
      const auto a = downmix_and_normalize(eight);
      const auto b = downmix_and_normalize(one);
      float peak = 0;
      for (float v : sig) peak = std::max(peak, std::abs(v));
      for (std::size_t i = 0; i < sig.size(); ++i) {
        CHECK(a.samples[i] == doctest::Approx(b.samples[i]).epsilon(1e-6));
        CHECK(b.samples[i] == doctest::Approx(sig[i] / peak).epsilon(1e-6));
      }
    }
  }

  TEST_CASE("downmix peak is one and the map is idempotent") {
    const auto rec = testing::noise_recording(4, 3000, 11);
    const auto m = downmix_and_normalize(rec);
    float peak = 0;
    for (float v : m.samples) peak = std::max(peak, std::abs(v));
    CHECK(peak == doctest::Approx(1.0).epsilon(1e-7));
    const std::vector<std::vector<float>> again{m.samples};
    const auto m2 = downmix_and_normalize(again);
    for (std::size_t i = 0; i < m.samples.size(); ++i) CHECK(m2.samples[i] == doctest::Approx(m.samples[i]).epsilon(1e-7));
  }

  TEST_CASE("segment_blocks floor rule and alignment") {
    const auto rec = testing::noise_recording(2, 48000 * 10 + 24000, 1);
    std::vector<LabelSet> labels(10);
    labels[4].speech_back = true;
    const auto blocks = segment_blocks(rec, labels);
    REQUIRE(blocks.size() == 10);
    for (const auto& b : blocks) {
      for (const auto& ch : b.channels) CHECK(ch.size() == 48000);
    }
    CHECK(blocks[4].labels.speech_back);
    CHECK(blocks[4].channels[1][0] == rec.channels[1][4 * 48000]);

    const auto one = testing::noise_recording(8, 48000, 2);
    const std::vector<LabelSet> l1(1);
    const auto b1 = segment_blocks(one, l1);
    REQUIRE(b1.size() == 1);
    CHECK(b1[0].channels[7].size() == 48000);

    const std::vector<LabelSet> nine(9);
    CHECK_THROWS_AS(segment_blocks(testing::noise_recording(1, 480000, 3), nine), AlignmentError);
  }

  TEST_CASE("annotation csv round trip and per-recording lookup") {
    testing::TempDir dir("csv");
    std::vector<AnnotationRow> rows{{"a", 0, {true, false, false}}, {"b", 0, {false, true, true}},
                                    {"a", 1, {false, false, true}}};
    write_annotations(dir.path / "ann.csv", rows);
    std::ifstream in(dir.path / "ann.csv");
    std::string header;
    std::getline(in, header);
    CHECK(header == "recording_id,second_index,speech_front,speech_back,something_else");
    const auto back = read_annotations(dir.path / "ann.csv");
    REQUIRE(back.size() == 3);
    const auto a = labels_for(back, "a");
    REQUIRE(a.size() == 2);
    CHECK(a[0] == LabelSet{true, false, false});
    CHECK(a[1] == LabelSet{false, false, true});
    CHECK_THROWS_AS(labels_for(parse_annotations("x,0,1,0,0\nx,2,0,0,0\n"), "x"), AlignmentError);
    CHECK_THROWS(parse_annotations("x,0,1,0\n"));
  }
}
