#pragma once

#include <optional>
#include <string>

#include "gradshield/rng.hpp"
#include "gradshield/tensor.hpp"

namespace gradshield {

class FormatError : public std::runtime_error {
public:
    explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

struct AnnotatedExample {
    Tensor x;                     // flattened pixels in [0,1]
    std::size_t label = 0;
    std::optional<Tensor> mask;   // [0,1]^n, same shape as x
    int group = 0;
};

struct Dataset {
    std::vector<AnnotatedExample> examples;
    std::size_t rows = 0;
    std::size_t cols = 0;
    int n_groups = 0;
    std::string provenance;  // free-form generation/corruption description

    std::size_t width() const { return rows * cols; }
    std::size_t size() const { return examples.size(); }
    std::size_t masked_count() const;
};

struct RawDataset {
    std::vector<Tensor> images;  // each rows×cols flattened, values in [0,1]
    std::vector<std::uint8_t> labels;
    std::size_t rows = 0;
    std::size_t cols = 0;
};

// Standard IDX ingestion (big-endian magic 0x00000803 / 0x00000801); pixel
// values scaled to [0,1]. Throws FormatError on bad magic, truncation, or
// image/label count mismatch.
RawDataset load_idx(const std::string& images_path, const std::string& labels_path);

void write_idx_images(const std::string& path, const std::vector<Tensor>& images,
                      std::size_t rows, std::size_t cols);
void write_idx_labels(const std::string& path, const std::vector<std::uint8_t>& labels);

// Seeded synthetic 28×28 digit corpus (stroke glyphs with random affine
// jitter and pixel noise), written through the same IDX path as real data.
RawDataset synth_digits(std::size_t count, std::uint64_t seed);

struct DecoyConfig {
    std::size_t patch_size = 4;
    std::vector<double> intensity_map;               // label → gray in [0,1]; injective
    std::vector<std::pair<std::size_t, std::size_t>> corners;  // empty → the 4 image corners
    bool train_correlated = true;
    std::uint64_t seed = 0;

    static std::vector<double> default_intensity_map(std::size_t n_labels);
    void validate(std::size_t rows, std::size_t cols, std::size_t n_labels) const;
    std::string to_json() const;
    static DecoyConfig from_json(const std::string& text);
};

enum class Split { Train, Test };

// Train: patch intensity = intensity_map[label], group = label.
// Test: intensity = intensity_map[u] with u uniform over labels, group = u.
// Mask is 1 exactly on the patch pixels.
Dataset inject_decoy(const RawDataset& raw, const DecoyConfig& cfg, Split split, Rng& rng);

// Exactly ⌊keep_ratio·N⌋ examples retain masks; selection is seeded.
Dataset subsample_masks(Dataset dataset, double keep_ratio, Rng& rng);

enum class CorruptKind { Misposition, Shift, Shrink, Dilation };

CorruptKind corrupt_kind_from_string(const std::string& s);
std::string to_string(CorruptKind k);

// Applies one corruption to a seeded corrupt_ratio fraction of mask-bearing
// examples. Masks must be solid rectangular patches.
Dataset corrupt_masks(Dataset dataset, CorruptKind kind, double corrupt_ratio, Rng& rng);

// Bundle: directory with a JSON manifest plus raw little-endian float64 /
// int64 arrays; read(write(d)) == d exactly.
void write_bundle(const Dataset& dataset, const std::string& dir);
Dataset read_bundle(const std::string& dir);

}  // namespace gradshield
