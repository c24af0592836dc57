#include "seld/audio_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>

#include "seld/errors.hpp"

namespace seld {
namespace {

static_assert(std::endian::native == std::endian::little, "WAV codec assumes a little-endian host");

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

template <class T>
T load(std::span<const unsigned char> bytes, std::size_t offset) {
  T value;
  std::memcpy(&value, bytes.data() + offset, sizeof(T));
  return value;
}

template <class T>
void store(std::vector<unsigned char>& out, T value) {
  const std::size_t at = out.size();
  out.resize(at + sizeof(T));
  std::memcpy(out.data() + at, &value, sizeof(T));
}

void store_tag(std::vector<unsigned char>& out, const char* tag) { out.insert(out.end(), tag, tag + 4); }

bool tag_is(std::span<const unsigned char> bytes, std::size_t offset, const char* tag) {
  return std::memcmp(bytes.data() + offset, tag, 4) == 0;
}

struct FmtChunk {
  std::uint16_t format = 0;
  std::uint16_t channels = 0;
  std::uint32_t sample_rate = 0;
  std::uint16_t block_align = 0;
  std::uint16_t bits = 0;
};

}  // namespace

double MultichannelRecording::duration_s() const {
  return sample_rate > 0 ? static_cast<double>(frames()) / sample_rate : 0.0;
}

void MultichannelRecording::validate() const {
  if (sample_rate <= 0) throw FormatError("recording: sample_rate must be positive");
  if (channels.empty()) throw FormatError("recording: no channels");
  for (const auto& ch : channels) {
    if (ch.size() != channels.front().size()) throw FormatError("recording: channels have unequal length");
  }
}

MultichannelRecording decode_wav(std::span<const unsigned char> bytes) {
  if (bytes.size() < 12 || !tag_is(bytes, 0, "RIFF") || !tag_is(bytes, 8, "WAVE")) {
    throw FormatError("wav: missing RIFF/WAVE header");
  }
  FmtChunk fmt;
  bool have_fmt = false;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const auto size = load<std::uint32_t>(bytes, pos + 4);
    const std::size_t body = pos + 8;
    if (tag_is(bytes, pos, "fmt ")) {
      if (size < 16 || body + size > bytes.size()) throw FormatError("wav: malformed fmt chunk");
      fmt.format = load<std::uint16_t>(bytes, body);
      fmt.channels = load<std::uint16_t>(bytes, body + 2);
      fmt.sample_rate = load<std::uint32_t>(bytes, body + 4);
      fmt.block_align = load<std::uint16_t>(bytes, body + 12);
      fmt.bits = load<std::uint16_t>(bytes, body + 14);
      if (fmt.format == kFormatExtensible) {
        if (size < 40) throw FormatError("wav: truncated extensible fmt chunk");
        // First two bytes of the sub-format GUID carry the actual codec.
        fmt.format = load<std::uint16_t>(bytes, body + 24);
      }
      have_fmt = true;
    } else if (tag_is(bytes, pos, "data")) {
      if (!have_fmt) throw FormatError("wav: data chunk before fmt chunk");
      if (fmt.channels == 0 || fmt.sample_rate == 0) throw FormatError("wav: zero channels or sample rate");
      const bool pcm = fmt.format == kFormatPcm && (fmt.bits == 16 || fmt.bits == 32);
      const bool flt = fmt.format == kFormatFloat && fmt.bits == 32;
      if (!pcm && !flt) {
        throw UnsupportedError("wav: unsupported codec (format " + std::to_string(fmt.format) + ", " +
                               std::to_string(fmt.bits) + " bits)");
      }
      const std::size_t sample_bytes = fmt.bits / 8;
      if (fmt.block_align != sample_bytes * fmt.channels) throw FormatError("wav: inconsistent block alignment");
      if (body + size > bytes.size()) throw LengthError("wav: data chunk truncated");
      if (size % fmt.block_align != 0) throw LengthError("wav: data chunk ends mid-frame");
      const std::size_t frames = size / fmt.block_align;

      MultichannelRecording rec;
      rec.sample_rate = static_cast<int>(fmt.sample_rate);
      rec.channels.assign(fmt.channels, std::vector<float>(frames));
      for (std::size_t n = 0; n < frames; ++n) {
        for (std::size_t c = 0; c < fmt.channels; ++c) {
          const std::size_t at = body + (n * fmt.channels + c) * sample_bytes;
          float v;
          if (flt) {
            v = load<float>(bytes, at);
          } else if (fmt.bits == 16) {
            v = static_cast<float>(load<std::int16_t>(bytes, at) / 32768.0);
          } else {
            v = static_cast<float>(load<std::int32_t>(bytes, at) / 2147483648.0);
          }
          rec.channels[c][n] = v;
        }
      }
      return rec;
    }
    pos = body + size + (size & 1u);
  }
  if (have_fmt) throw LengthError("wav: no data chunk");
  throw FormatError("wav: no fmt chunk");
}

MultichannelRecording read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("wav: cannot open " + path.string());
  in.seekg(0, std::ios::end);
  std::vector<unsigned char> bytes(static_cast<std::size_t>(in.tellg()));
  in.seekg(0);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  try {
    return decode_wav(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  } catch (const LengthError& e) {
    throw LengthError(path.string() + ": " + e.what());
  } catch (const UnsupportedError& e) {
    throw UnsupportedError(path.string() + ": " + e.what());
  }
}

std::vector<unsigned char> encode_wav(const MultichannelRecording& rec, SampleFormat format) {
  rec.validate();
  const std::uint16_t bits = format == SampleFormat::pcm16 ? 16 : 32;
  const std::uint16_t codec = format == SampleFormat::float32 ? kFormatFloat : kFormatPcm;
  const auto channels = static_cast<std::uint16_t>(rec.channel_count());
  const std::uint16_t block_align = channels * (bits / 8);
  const std::size_t data_size = rec.frames() * block_align;
  if (data_size > 0xFFFFFFF0u) throw UnsupportedError("wav: recording too large for RIFF");

  std::vector<unsigned char> out;
  out.reserve(44 + data_size);
  store_tag(out, "RIFF");
  store<std::uint32_t>(out, static_cast<std::uint32_t>(36 + data_size));
  store_tag(out, "WAVE");
  store_tag(out, "fmt ");
  store<std::uint32_t>(out, 16);
  store<std::uint16_t>(out, codec);
  store<std::uint16_t>(out, channels);
  store<std::uint32_t>(out, static_cast<std::uint32_t>(rec.sample_rate));
  store<std::uint32_t>(out, static_cast<std::uint32_t>(rec.sample_rate) * block_align);
  store<std::uint16_t>(out, block_align);
  store<std::uint16_t>(out, bits);
  store_tag(out, "data");
  store<std::uint32_t>(out, static_cast<std::uint32_t>(data_size));
  for (std::size_t n = 0; n < rec.frames(); ++n) {
    for (const auto& ch : rec.channels) {
      const float v = ch[n];
      switch (format) {
        case SampleFormat::float32:
          store<float>(out, v);
          break;
        case SampleFormat::pcm16:
          store<std::int16_t>(out, static_cast<std::int16_t>(std::clamp(std::lround(v * 32768.0), -32768L, 32767L)));
          break;
        case SampleFormat::pcm32:
          store<std::int32_t>(out, static_cast<std::int32_t>(std::clamp(std::llround(v * 2147483648.0),
                                                                        -2147483648LL, 2147483647LL)));
          break;
      }
    }
  }
  return out;
}

void write_wav(const std::filesystem::path& path, const MultichannelRecording& rec, SampleFormat format) {
  const auto bytes = encode_wav(rec, format);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("wav: cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

MonoSignal downmix_and_normalize(std::span<const std::vector<float>> channels) {
  if (channels.empty()) throw FormatError("downmix: no channels");
  const std::size_t n = channels.front().size();
  std::vector<double> mix(n, 0.0);
  for (const auto& ch : channels) {
    if (ch.size() != n) throw FormatError("downmix: channels have unequal length");
    for (std::size_t i = 0; i < n; ++i) mix[i] += ch[i];
  }
  const double inv = 1.0 / static_cast<double>(channels.size());
  double peak = 0.0;
  for (auto& v : mix) {
    v *= inv;
    peak = std::max(peak, std::abs(v));
  }
  MonoSignal out;
  out.samples.resize(n, 0.0f);
  if (peak == 0.0) {
    out.silent = true;
    return out;
  }
  for (std::size_t i = 0; i < n; ++i) out.samples[i] = static_cast<float>(mix[i] / peak);
  return out;
}

MonoSignal downmix_and_normalize(const MultichannelRecording& rec) { return downmix_and_normalize(rec.channels); }

std::vector<AudioBlock> segment_blocks(const MultichannelRecording& rec, std::span<const LabelSet> labels) {
  rec.validate();
  const std::size_t rate = static_cast<std::size_t>(rec.sample_rate);
  const std::size_t whole_seconds = rec.frames() / rate;
  if (labels.size() != whole_seconds) {
    throw AlignmentError("segment_blocks: " + std::to_string(labels.size()) + " annotations for " +
                         std::to_string(whole_seconds) + " whole seconds of audio");
  }
  std::vector<AudioBlock> blocks(whole_seconds);
  for (std::size_t b = 0; b < whole_seconds; ++b) {
    auto& block = blocks[b];
    block.block_index = static_cast<int>(b);
    block.sample_rate = rec.sample_rate;
    block.labels = labels[b];
    block.channels.reserve(rec.channel_count());
    for (const auto& ch : rec.channels) {
      const auto first = ch.begin() + static_cast<std::ptrdiff_t>(b * rate);
      block.channels.emplace_back(first, first + static_cast<std::ptrdiff_t>(rate));
    }
  }
  return blocks;
}

std::vector<AnnotationRow> parse_annotations(const std::string& text) {
  std::vector<AnnotationRow> rows;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  auto flag = [&](const std::string& field) {
    if (field == "0") return false;
    if (field == "1") return true;
    throw FormatError("annotations line " + std::to_string(line_no) + ": label must be 0 or 1, got '" + field + "'");
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ls(line);
    for (std::string f; std::getline(ls, f, ',');) fields.push_back(f);
    if (fields.size() != 5) {
      throw FormatError("annotations line " + std::to_string(line_no) + ": expected 5 fields");
    }
    if (fields[0] == "recording_id") continue;
    AnnotationRow row;
    row.recording_id = fields[0];
    try {
      std::size_t used = 0;
      row.second_index = std::stoi(fields[1], &used);
      if (used != fields[1].size() || row.second_index < 0) throw std::invalid_argument("bad");
    } catch (const std::logic_error&) {
      throw FormatError("annotations line " + std::to_string(line_no) + ": bad second_index");
    }
    row.labels = {flag(fields[2]), flag(fields[3]), flag(fields[4])};
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<AnnotationRow> read_annotations(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("annotations: cannot open " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_annotations(buffer.str());
}

void write_annotations(const std::filesystem::path& path, std::span<const AnnotationRow> rows) {
  std::ofstream out(path);
  if (!out) throw FormatError("annotations: cannot write " + path.string());
  out << "recording_id,second_index,speech_front,speech_back,something_else\n";
  for (const auto& r : rows) {
    out << r.recording_id << ',' << r.second_index << ',' << int(r.labels.speech_front) << ','
        << int(r.labels.speech_back) << ',' << int(r.labels.something_else) << '\n';
  }
}

std::vector<LabelSet> labels_for(std::span<const AnnotationRow> rows, const std::string& recording_id) {
  std::map<int, LabelSet> by_second;
  for (const auto& r : rows) {
    if (r.recording_id != recording_id) continue;
    if (!by_second.emplace(r.second_index, r.labels).second) {
      throw AlignmentError("annotations: duplicate second " + std::to_string(r.second_index) + " for " + recording_id);
    }
  }
  std::vector<LabelSet> labels;
  labels.reserve(by_second.size());
  int expected = 0;
  for (const auto& [second, set] : by_second) {
    if (second != expected++) throw AlignmentError("annotations: gap before second " + std::to_string(second) +
                                                   " for " + recording_id);
    labels.push_back(set);
  }
  return labels;
}

}  // namespace seld
