#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mis/conditioning.hpp"
#include "mis/image.hpp"
#include "mis/rng.hpp"
#include "mis/tensor.hpp"

namespace mis {

// --- latent codec ----------------------------------------------------------

inline constexpr std::size_t kDefaultPatch = 4;

/// Space-to-depth: [3 p^2, H/p, W/p] with channel (dy * p + dx) * 3 + c and
/// values 2 v / 255 - 1.
template <typename T = float>
Tensor<T> ae_encode(const Image& image, std::size_t patch = kDefaultPatch);

/// Exact inverse of ae_encode up to rounding and clamping to 8 bits.
template <typename T = float>
Image ae_decode(const Tensor<T>& latent, std::size_t patch = kDefaultPatch);

/// Stacks ae_encode of each image into [N, C, H, W].
template <typename T = float>
Tensor<T> ae_encode_set(std::span<const Image> images, std::size_t patch = kDefaultPatch);

// --- scenes ----------------------------------------------------------------

enum class Style { Flat, NoiseTexture, Outline };

std::string_view to_string(Style s);

/// Token-level description of one image set. Every image of a set shares
/// these attributes; placement and texture jitter come from per-image seeds.
struct SceneSpec {
  std::string shape = "circle";
  std::string color = "red";
  std::string background = "black";
  Style style = Style::Flat;
  std::size_t count = 1;
  std::vector<std::string> details;

  /// Canonical whitespace-separated caption.
  std::string text() const;
  std::size_t token_count() const;

  friend bool operator==(const SceneSpec&, const SceneSpec&) = default;
};

const std::vector<std::string>& shape_vocabulary();
const std::vector<std::string>& color_vocabulary();
std::array<std::uint8_t, 3> color_rgb(const std::string& name);

SceneSpec random_scene(Rng& rng);

/// Accepts iff the whitespace token count is at most max_tokens.
inline constexpr std::size_t kMaxCaptionTokens = 77;
bool caption_filter(std::string_view text, std::size_t max_tokens = kMaxCaptionTokens);
std::size_t count_tokens(std::string_view text);

Image render_scene(const SceneSpec& spec, std::uint64_t jitter_seed, std::size_t resolution = 32);

struct ImageSetRecord {
  std::string id;
  std::string spec_text;
  std::vector<Image> images;
  std::vector<std::uint64_t> seeds;
  TaskCondition task;  // poses for multiview, steps for procedure
};

ImageSetRecord synthesize_set(const SceneSpec& spec, std::size_t n, std::uint64_t base_seed,
                              std::size_t resolution = 32);

/// A small cluster of coloured spheres near the origin.
struct SphereObject {
  struct Sphere {
    std::array<double, 3> center;
    double radius;
    std::array<std::uint8_t, 3> color;
  };
  std::vector<Sphere> spheres;
  std::array<std::uint8_t, 3> background;
};

SphereObject random_object(Rng& rng);
Image render_object(const SphereObject& object, const CameraPose& pose, std::size_t resolution = 32);
std::vector<CameraPose> ring_poses(std::size_t count = 12, double elevation = 0.35, double radius = 3.0);

/// Step k of n fills a container to fraction k / n.
Image render_procedure_step(const SceneSpec& spec, std::size_t k, std::size_t n, std::uint64_t seed,
                            std::size_t resolution = 32);

// --- corpora ---------------------------------------------------------------

enum class CorpusKind { Mis, Multiview, Procedure };

std::string_view to_string(CorpusKind k);
CorpusKind parse_corpus_kind(std::string_view text);

inline constexpr std::size_t kMultiviewCount = 12;
inline constexpr std::uint32_t kManifestSchema = 1;

struct ManifestRecord {
  std::string id;
  std::string spec_text;
  std::vector<std::string> files;  // relative to the manifest directory
  std::vector<std::uint64_t> seeds;
  std::vector<std::array<double, 16>> poses;
  std::vector<std::size_t> steps;

  friend bool operator==(const ManifestRecord&, const ManifestRecord&) = default;
};

struct Manifest {
  std::string name;
  std::uint32_t schema_version = kManifestSchema;
  CorpusKind kind = CorpusKind::Mis;
  std::size_t n_per_set = 0;
  std::size_t resolution = 32;
  std::uint64_t seed = 0;
  std::size_t captions_rejected = 0;
  std::vector<ManifestRecord> records;

  friend bool operator==(const Manifest&, const Manifest&) = default;
};

struct CorpusOptions {
  CorpusKind kind = CorpusKind::Mis;
  std::size_t sets = 10;
  std::size_t n = 5;  // ignored for multiview, which always has 12 views
  std::size_t resolution = 32;
  std::uint64_t seed = 7;
  std::size_t max_tokens = kMaxCaptionTokens;
  std::string name = "corpus";
};

inline constexpr const char* kManifestFile = "manifest.json";

/// Renders every record to out_dir/<id>/<k>.png and writes manifest.json.
Manifest build_corpus(const CorpusOptions& options, const std::filesystem::path& out_dir);

void save_manifest(const Manifest& m, const std::filesystem::path& path);
/// Also checks that every referenced file exists and that counts match.
Manifest load_manifest(const std::filesystem::path& path);

/// Loads the images of one record, in order.
std::vector<Image> load_record_images(const ManifestRecord& record, const std::filesystem::path& corpus_dir);

TaskCondition record_task(const ManifestRecord& record);

}  // namespace mis
