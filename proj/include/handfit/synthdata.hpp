#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "handfit/handpose_net.hpp"
#include "handfit/handprior.hpp"

namespace handfit {

struct SceneConfig {
  int size = 64;
  int hands = -1;               // 0, 1, 2, or -1 for random
  double occlusion_prob = 0.85; // chance a hand is placed over the torso
  void validate() const;
};

struct SceneMeta {
  std::uint64_t seed = 0;
  int texture_id = 0;  // 0 stripes, 1 checker
};

/// One synthetic try-on record. Images are [H, W, 3] in [0, 1]; masks are
/// binary [H, W].
struct SceneSample {
  Tensor person;
  Tensor garment;
  Tensor agnostic_mask;
  Tensor agnostic;  // person with the masked region set to 0.5
  PoseMaps pose;
  HandParams hands;
  SceneMeta meta;
  bool paired = true;  // false once the garment no longer matches `person`

  int height() const { return person.dim(0); }
  int width() const { return person.dim(1); }
  bool has_ground_truth() const { return paired; }
};

/// Deterministic in (seed, cfg).
SceneSample generate_scene(std::uint64_t seed, const SceneConfig& cfg = {});

/// Torso polygon mask of a generated scene; overlap statistics use it.
Tensor garment_region(std::uint64_t seed, const SceneConfig& cfg = {});

/// First violated SceneSample invariant, if any.
std::optional<std::string> check_scene(const SceneSample& s);

/// Same person, pose and hands with a different garment image.
SceneSample make_pair(const SceneSample& sample, const Tensor& other_garment);

/// Pastes the generated region over the person outside it:
/// generated * mask + person * (1 - mask).
Tensor composite(const Tensor& generated, const Tensor& person, const Tensor& mask);

// ---- dataset serialisation ----

struct DatasetManifest {
  int version = 1;
  int count = 0;
  int height = 0;
  int width = 0;
  std::vector<std::string> samples;
  std::uint64_t seed = 0;
  std::vector<std::uint64_t> sample_seeds;
  std::vector<int> texture_ids;
};

struct SampleError {
  std::string sample_id;
  std::string message;
};

struct DatasetReadResult {
  DatasetManifest manifest;
  std::vector<std::string> ids;      // ids of successfully read samples
  std::vector<SceneSample> samples;
  std::vector<SampleError> errors;
};

std::string sample_id(int index);
void write_sample(const SceneSample& s, const std::filesystem::path& dir);
SceneSample read_sample(const std::filesystem::path& dir);

DatasetManifest write_dataset(const std::vector<SceneSample>& samples, const std::filesystem::path& root,
                              std::uint64_t generator_seed);
/// Reads every listed sample; failures are collected per sample id.
DatasetReadResult read_dataset(const std::filesystem::path& root);
DatasetManifest read_manifest(const std::filesystem::path& root);

}  // namespace handfit
