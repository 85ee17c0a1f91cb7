#pragma once

// Clip manifests -> model inputs. Landmark clips are frontalized against the
// template and flattened to (204, frames) matrices; flow clips are decoded
// from their filmstrip PNGs.

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "vvad/annotation_pipeline.hpp"
#include "vvad/landmark_geometry.hpp"
#include "vvad/models.hpp"
#include "vvad/synthetic_data.hpp"

namespace vvad {

template <typename T>
nn::Mat<T> sequence_features(const LandmarkSequence& raw, const MeanFace& tmpl) {
  const LandmarkSequence aligned = frontalize(raw, tmpl);
  nn::Mat<T> m(kLandmarkDim, static_cast<Eigen::Index>(aligned.size()));
  const auto vecs = flatten(aligned);
  for (std::size_t t = 0; t < vecs.size(); ++t)
    for (int k = 0; k < kLandmarkDim; ++k) m(k, static_cast<Eigen::Index>(t)) = static_cast<T>(vecs[t][k]);
  return m;
}

inline int label_index(ClipLabel l) { return l == ClipLabel::speaking ? 1 : 0; }

template <typename T>
SequenceDataset<T> sequence_dataset(std::span<const SynthClip> clips, const MeanFace& tmpl) {
  SequenceDataset<T> d;
  for (const auto& c : clips) {
    d.sequences.push_back(sequence_features<T>(c.landmarks, tmpl));
    d.labels.push_back(label_index(c.meta.label));
    d.ids.push_back(c.meta.clip_id());
  }
  return d;
}

inline std::string resolve_relative(const std::string& manifest_path, const std::string& rel) {
  namespace fs = std::filesystem;
  const fs::path p(rel);
  if (p.is_absolute()) return rel;
  return (fs::path(manifest_path).parent_path() / p).string();
}

/// Landmark dataset for the clips of a manifest; every clip needs a
/// `landmarks` file.
template <typename T>
SequenceDataset<T> sequence_dataset(const std::string& manifest_path, std::span<const LabeledClip> clips,
                                    const MeanFace& tmpl) {
  SequenceDataset<T> d;
  for (const auto& c : clips) {
    if (c.landmarks.empty()) throw FormatError("clip " + c.clip_id() + " has no landmark file");
    d.sequences.push_back(sequence_features<T>(read_landmarks(resolve_relative(manifest_path, c.landmarks)), tmpl));
    d.labels.push_back(label_index(c.label));
    d.ids.push_back(c.clip_id());
  }
  return d;
}

template <typename T>
std::vector<nn::Image<T>> flow_inputs(const std::vector<FlowImage>& frames, const OfConvNetConfig& cfg) {
  std::vector<nn::Image<T>> out;
  for (const auto& f : frames) out.push_back(flow_image_input<T>(f, cfg.input_size, cfg.backbone));
  return out;
}

/// Flow dataset for the clips of a manifest; every clip needs a `flow` PNG.
template <typename T>
FlowClipDataset<T> flow_dataset(const std::string& manifest_path, std::span<const LabeledClip> clips,
                                const OfConvNetConfig& cfg) {
  FlowClipDataset<T> d;
  for (const auto& c : clips) {
    if (c.flow.empty()) throw FormatError("clip " + c.clip_id() + " has no flow file");
    d.clips.push_back(flow_inputs<T>(read_png_filmstrip(resolve_relative(manifest_path, c.flow)), cfg));
    d.labels.push_back(label_index(c.label));
    d.ids.push_back(c.clip_id());
  }
  return d;
}

template <typename T>
FlowClipDataset<T> flow_dataset(std::span<const SynthClip> clips, const RenderConfig& render,
                                const OfConvNetConfig& cfg) {
  FlowClipDataset<T> d;
  for (const auto& c : clips) {
    d.clips.push_back(flow_inputs<T>(render_flow_clip(c, render), cfg));
    d.labels.push_back(label_index(c.meta.label));
    d.ids.push_back(c.meta.clip_id());
  }
  return d;
}

/// Copy of `d` restricted to `idx`, in that order.
template <typename Dataset>
Dataset subset(const Dataset& d, std::span<const std::size_t> idx) {
  Dataset out;
  for (std::size_t i : idx) {
    if constexpr (requires { d.sequences; }) out.sequences.push_back(d.sequences.at(i));
    else out.clips.push_back(d.clips.at(i));
    out.labels.push_back(d.labels.at(i));
    out.ids.push_back(d.ids.at(i));
  }
  return out;
}

}  // namespace vvad
