#pragma once

// One key=value file configures every stage of a run. Every key has a default
// and unknown keys are rejected, so any accepted file fully specifies the run.

#include <string>
#include <utility>
#include <vector>

#include "radinv/baseline.hpp"
#include "radinv/config.hpp"
#include "radinv/maskgen.hpp"
#include "radinv/trainer.hpp"

namespace radinv {

struct MaskStageConfig {
    /// "projection" (forward-projected patch boxes) or "learned" (refined dense-layer activations).
    std::string kind = "projection";
    int patch_size = 16;
    int buffer = 2;
    MaskRefineConfig refine;
    /// Dense pre-training for learned masks: blob phantoms stratified over the FOV.
    DenseTrainConfig dense;
    int dense_phantoms = 200;
    double dense_radius_min = 1.4;
    double dense_radius_max = 1.8;
    double dense_jitter = 0.25;

    void validate(const ImageGeometry& g) const {
        RADINV_CHECK(kind == "projection" || kind == "learned", ConfigError,
                     "masks.kind must be 'projection' or 'learned', got '" + kind + "'");
        RADINV_CHECK(patch_size >= 1 && patch_size <= g.width, ConfigError, "masks.patch_size must lie in [1, image.size]");
        RADINV_CHECK(buffer >= 0, ConfigError, "masks.buffer must be >= 0");
        RADINV_CHECK(dense_phantoms >= 1, ConfigError, "dense.num_phantoms must be >= 1");
        RADINV_CHECK(dense_radius_min > 0.0 && dense_radius_min <= dense_radius_max, ConfigError,
                     "dense blob radii must satisfy 0 < radius_min <= radius_max");
        RADINV_CHECK(dense_jitter >= 0.0 && dense_jitter <= 0.5, ConfigError, "dense.jitter must lie in [0, 0.5]");
        refine.validate();
        dense.validate();
    }
};

struct EvalStageConfig {
    /// Reference volume: "target" (full-count OSEM) or "phantom" (ground truth).
    std::string reference = "target";
    int voi_count = 3;
    double voi_radius = 5.0;
    /// Horizontal profile through the reference maximum, this many pixels each side.
    int profile_half_length = 12;
    int profile_samples = 64;

    void validate() const {
        RADINV_CHECK(reference == "target" || reference == "phantom", ConfigError,
                     "eval.reference must be 'target' or 'phantom'");
        RADINV_CHECK(voi_count >= 1 && voi_radius > 0.0, ConfigError, "eval: need voi_count >= 1 and voi_radius > 0");
        RADINV_CHECK(profile_half_length >= 1, ConfigError, "eval.profile_half_length must be >= 1");
        RADINV_CHECK(profile_samples >= 16, ConfigError, "eval.profile_samples must be >= 16");
    }
};

struct RunConfig {
    DatasetConfig dataset;
    TrainConfig train;
    MaskStageConfig masks;
    EvalStageConfig eval;
    FbpFilter fbp_filter = FbpFilter::Hann;
    std::string fbp_filter_name = "hann";
    int reconstruct_batch = 16;
    int bench_repeats = 5;
    int bench_slices = 16;
    int preview_count = 4;
    /// Resolved key/value pairs, for manifests.
    std::vector<std::pair<std::string, std::string>> entries;

    void validate() const {
        dataset.validate();
        train.validate();
        masks.validate(dataset.image);
        eval.validate();
        RADINV_CHECK(reconstruct_batch >= 1, ConfigError, "reconstruct.batch must be >= 1");
        RADINV_CHECK(bench_repeats >= 1 && bench_slices >= 1, ConfigError, "bench: repeats and slices must be >= 1");
        RADINV_CHECK(preview_count >= 0, ConfigError, "preview.count must be >= 0");
    }

    static RunConfig from_keys(const KeyValues& kv) {
        RunConfig c;
        c.dataset = DatasetConfig::from_config(kv);
        c.train = TrainConfig::from_config(kv);
        kv.get("masks.kind", c.masks.kind);
        kv.get("masks.patch_size", c.masks.patch_size);
        kv.get("masks.buffer", c.masks.buffer);
        c.masks.refine = MaskRefineConfig::from_config(kv);
        kv.get("dense.epochs", c.masks.dense.epochs);
        kv.get("dense.learning_rate", c.masks.dense.learning_rate);
        kv.get("dense.batch_size", c.masks.dense.batch_size);
        kv.get("dense.seed", c.masks.dense.seed);
        kv.get("dense.zero_init", c.masks.dense.zero_init);
        kv.get("dense.num_phantoms", c.masks.dense_phantoms);
        kv.get("dense.radius_min", c.masks.dense_radius_min);
        kv.get("dense.radius_max", c.masks.dense_radius_max);
        kv.get("dense.jitter", c.masks.dense_jitter);
        kv.get("eval.reference", c.eval.reference);
        kv.get("eval.voi_count", c.eval.voi_count);
        kv.get("eval.voi_radius", c.eval.voi_radius);
        kv.get("eval.profile_half_length", c.eval.profile_half_length);
        kv.get("eval.profile_samples", c.eval.profile_samples);
        kv.get("fbp.filter", c.fbp_filter_name);
        c.fbp_filter = parse_fbp_filter(c.fbp_filter_name);
        kv.get("reconstruct.batch", c.reconstruct_batch);
        kv.get("bench.repeats", c.bench_repeats);
        kv.get("bench.slices", c.bench_slices);
        kv.get("preview.count", c.preview_count);
        kv.reject_unknown();
        c.validate();
        c.entries.assign(kv.entries().begin(), kv.entries().end());
        return c;
    }
};

}  // namespace radinv
