#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace seld {

/// Sampled multichannel audio, channel-major. Amplitudes are linear and
/// nominally within [-1, 1).
struct MultichannelRecording {
  int sample_rate = 0;
  std::vector<std::vector<float>> channels;

  std::size_t channel_count() const { return channels.size(); }
  std::size_t frames() const { return channels.empty() ? 0 : channels.front().size(); }
  double duration_s() const;

  // Throws FormatError when the rate is not positive or channel lengths differ.
  void validate() const;
};

struct LabelSet {
  bool speech_front = false;
  bool speech_back = false;
  bool something_else = false;

  bool speech() const { return speech_front || speech_back; }
  bool any() const { return speech() || something_else; }
  // Bit code front=1, back=2, else=4; used as the class id for balancing.
  int code() const { return (speech_front ? 1 : 0) | (speech_back ? 2 : 0) | (something_else ? 4 : 0); }
  bool operator==(const LabelSet&) const = default;
};

struct AudioBlock {
  int block_index = 0;
  int sample_rate = 0;
  std::vector<std::vector<float>> channels;  // each exactly sample_rate long
  LabelSet labels;
};

enum class SampleFormat { pcm16, pcm32, float32 };

MultichannelRecording read_wav(const std::filesystem::path& path);
void write_wav(const std::filesystem::path& path, const MultichannelRecording& rec,
               SampleFormat format = SampleFormat::float32);

// In-memory variants used by the file functions; exposed for tests.
MultichannelRecording decode_wav(std::span<const unsigned char> bytes);
std::vector<unsigned char> encode_wav(const MultichannelRecording& rec, SampleFormat format);

struct MonoSignal {
  std::vector<float> samples;
  bool silent = false;  // all-zero input; samples are zeros and no scaling happened
};

/// Channel average followed by division by the peak magnitude.
MonoSignal downmix_and_normalize(const MultichannelRecording& rec);
MonoSignal downmix_and_normalize(std::span<const std::vector<float>> channels);

/// One block per annotated second; a trailing partial second is dropped.
/// Throws AlignmentError unless labels.size() == floor(duration).
std::vector<AudioBlock> segment_blocks(const MultichannelRecording& rec, std::span<const LabelSet> labels);

struct AnnotationRow {
  std::string recording_id;
  int second_index = 0;
  LabelSet labels;
};

// CSV rows `recording_id,second_index,speech_front,speech_back,something_else`.
// A header line whose first field is `recording_id` is accepted and skipped.
std::vector<AnnotationRow> read_annotations(const std::filesystem::path& path);
std::vector<AnnotationRow> parse_annotations(const std::string& text);
void write_annotations(const std::filesystem::path& path, std::span<const AnnotationRow> rows);

// Labels of one recording, ordered by second; throws AlignmentError on gaps or duplicates.
std::vector<LabelSet> labels_for(std::span<const AnnotationRow> rows, const std::string& recording_id);

}  // namespace seld
