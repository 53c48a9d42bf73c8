#pragma once

// Dataset synthesis, the training loop with checkpoint/resume, and timed reconstruction.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "radinv/baseline.hpp"
#include "radinv/config.hpp"
#include "radinv/inversion.hpp"
#include "radinv/objective.hpp"
#include "radinv/phantom.hpp"
#include "radinv/projector.hpp"
#include "radinv/tensor_io.hpp"

namespace radinv {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct TrainConfig {
    int epochs = 200;
    int samples_per_epoch = 512;
    int batch_size = 16;
    /// Stored input = counts / sinogram_scale; stored target = activity / image_scale.
    double sinogram_scale = 5.0;
    double image_scale = 400.0;
    std::uint64_t seed = 1;
    /// Fraction of counts kept in the network input (targets always use all counts).
    double thinning = 1.0;
    /// Epochs between on-disk checkpoints when a run directory is given.
    int checkpoint_every = 10;
    SchedulerConfig scheduler;
    AdamConfig adam;
    LossConfig loss;

    std::uint64_t iterations_per_epoch() const {
        return static_cast<std::uint64_t>((samples_per_epoch + batch_size - 1) / batch_size);
    }
    std::uint64_t total_iterations() const { return iterations_per_epoch() * static_cast<std::uint64_t>(epochs); }

    void validate() const {
        RADINV_CHECK(epochs >= 1 && samples_per_epoch >= 1 && batch_size >= 1, ConfigError,
                     "train: epochs, samples_per_epoch and batch_size must be >= 1");
        RADINV_CHECK(sinogram_scale > 0.0 && image_scale > 0.0, ConfigError, "train: scale divisors must be positive");
        RADINV_CHECK(thinning > 0.0 && thinning <= 1.0, ConfigError, "train: thinning must lie in (0, 1]");
        RADINV_CHECK(checkpoint_every >= 1, ConfigError, "train: checkpoint_every must be >= 1");
        scheduler.validate();
        loss.validate();
    }

    static TrainConfig from_config(const KeyValues& kv) {
        TrainConfig c;
        kv.get("train.epochs", c.epochs);
        kv.get("train.samples_per_epoch", c.samples_per_epoch);
        kv.get("train.batch_size", c.batch_size);
        kv.get("train.sinogram_scale", c.sinogram_scale);
        kv.get("train.image_scale", c.image_scale);
        kv.get("train.seed", c.seed);
        kv.get("train.thinning", c.thinning);
        kv.get("train.checkpoint_every", c.checkpoint_every);
        kv.get("adam.beta1", c.adam.beta1);
        kv.get("adam.beta2", c.adam.beta2);
        kv.get("adam.epsilon", c.adam.epsilon);
        c.scheduler = SchedulerConfig::from_config(kv);
        c.loss = LossConfig::from_config(kv);
        return c;
    }
};

struct DatasetConfig {
    int num_phantoms = 500;
    ImageGeometry image = ImageGeometry::square(64);
    SinogramGeometry sinogram{100, 64, 1.0};
    PhantomSpec phantom;
    /// Expected counts per noiseless slice.
    double count_density = 200000.0;
    double train_fraction = 0.8;
    double validation_fraction = 0.1;
    EmConfig target = EmConfig::target_recipe();
    /// Activity units per unit of reconstructed count intensity.
    double calibration = 400.0;
    std::uint64_t seed = 1;

    void validate() const {
        RADINV_CHECK(num_phantoms >= 3, ConfigError, "dataset: need at least 3 phantoms");
        RADINV_CHECK(count_density > 0.0, ConfigError, "dataset: count_density must be positive");
        RADINV_CHECK(train_fraction > 0.0 && validation_fraction > 0.0 && train_fraction + validation_fraction < 1.0,
                     ConfigError, "dataset: split fractions must be positive and leave room for a test split");
        RADINV_CHECK(calibration > 0.0, ConfigError, "dataset: calibration must be positive");
        image.validate();
        sinogram.validate();
        phantom.validate(image);
        target.validate(sinogram);
    }

    static DatasetConfig from_config(const KeyValues& kv) {
        DatasetConfig c;
        int size = c.image.width;
        kv.get("image.size", size);
        double pixel = c.image.pixel_size;
        kv.get("image.pixel_size", pixel);
        c.image = ImageGeometry::square(size, pixel);
        kv.get("image.fov_radius", c.image.fov_radius);
        kv.get("sinogram.num_angles", c.sinogram.num_angles);
        kv.get("sinogram.num_bins", c.sinogram.num_bins);
        kv.get("sinogram.bin_spacing", c.sinogram.bin_spacing);
        c.phantom = PhantomSpec::from_config(kv);
        c.target = EmConfig::from_config(kv);
        kv.get("dataset.num_phantoms", c.num_phantoms);
        kv.get("dataset.count_density", c.count_density);
        kv.get("dataset.train_fraction", c.train_fraction);
        kv.get("dataset.validation_fraction", c.validation_fraction);
        kv.get("dataset.calibration", c.calibration);
        kv.get("dataset.seed", c.seed);
        return c;
    }
};

// ---------------------------------------------------------------------------
// Dataset
// ---------------------------------------------------------------------------

struct DatasetSplit {
    std::vector<std::size_t> train, validation, test;
};

/// Sizes round(f_train n), round(f_val n) and the remainder, each at least 1;
/// ids are assigned from a seeded permutation.
inline DatasetSplit split_ids(std::size_t n, double train_fraction, double validation_fraction, std::uint64_t seed) {
    RADINV_CHECK(n >= 3, ConfigError, "split: need at least 3 items");
    auto clampn = [&](double f) {
        return std::clamp<std::size_t>(static_cast<std::size_t>(std::llround(f * static_cast<double>(n))), 1, n - 2);
    };
    const std::size_t nt = clampn(train_fraction);
    const std::size_t nv = std::clamp<std::size_t>(clampn(validation_fraction), 1, n - nt - 1);
    std::vector<std::size_t> ids(n);
    for (std::size_t i = 0; i < n; ++i) ids[i] = i;
    Rng rng = make_rng(seed, 0x53504C54);  // "SPLT"
    std::shuffle(ids.begin(), ids.end(), rng);
    DatasetSplit s;
    s.train.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(nt));
    s.validation.assign(ids.begin() + static_cast<std::ptrdiff_t>(nt), ids.begin() + static_cast<std::ptrdiff_t>(nt + nv));
    s.test.assign(ids.begin() + static_cast<std::ptrdiff_t>(nt + nv), ids.end());
    for (auto* v : {&s.train, &s.validation, &s.test}) std::sort(v->begin(), v->end());
    return s;
}

struct Dataset {
    ImageGeometry image;
    SinogramGeometry sinogram;
    double sinogram_scale = 5.0;
    double image_scale = 400.0;
    double thinning = 1.0;
    double calibration = 400.0;
    DatasetSplit split;
    /// [n, S] network inputs: kept counts / sinogram_scale.
    std::vector<float> inputs;
    /// [n, N] targets: calibration * OSEM(all counts) / image_scale.
    std::vector<float> targets;
    /// [n, N] noiseless phantoms.
    std::vector<float> phantoms;

    std::size_t size() const { return sinogram.size() ? inputs.size() / sinogram.size() : 0; }

    std::span<const float> input(std::size_t i) const {
        return {inputs.data() + i * sinogram.size(), sinogram.size()};
    }
    std::span<const float> target(std::size_t i) const { return {targets.data() + i * image.size(), image.size()}; }

    ImageGrid target_image(std::size_t i) const {
        const auto t = target(i);
        return ImageGrid(image, std::vector<double>(t.begin(), t.end()));
    }
    ImageGrid phantom_image(std::size_t i) const {
        return ImageGrid(image, std::vector<double>(phantoms.begin() + static_cast<std::ptrdiff_t>(i * image.size()),
                                                    phantoms.begin() + static_cast<std::ptrdiff_t>((i + 1) * image.size())));
    }
    /// Kept counts recovered from the stored input.
    Sinogram input_counts(std::size_t i) const {
        Sinogram s(sinogram);
        const auto in = input(i);
        for (std::size_t k = 0; k < in.size(); ++k) s.values[k] = std::round(static_cast<double>(in[k]) * sinogram_scale);
        return s;
    }
};

namespace detail {

struct PhantomSample {
    std::vector<float> input, target, phantom;
};

inline PhantomSample make_sample(const DatasetConfig& dc, const TrainConfig& tc, const OsemReconstructor& osem,
                                 const Projector& P, std::size_t i) {
    const std::uint64_t s = mix_seed(dc.seed, i);
    const ImageGrid x = generate_phantom(dc.phantom, dc.image, s);
    const Sinogram counts = apply_poisson(P.forward(x), dc.count_density, s);
    const Sinogram kept = tc.thinning < 1.0 ? split_counts(counts, tc.thinning, s).first : counts;
    const ImageGrid recon = osem.reconstruct(counts);
    PhantomSample out;
    out.input.resize(kept.values.size());
    for (std::size_t k = 0; k < kept.values.size(); ++k)
        out.input[k] = static_cast<float>(kept.values[k] / tc.sinogram_scale);
    out.target.resize(recon.values.size());
    for (std::size_t k = 0; k < recon.values.size(); ++k)
        out.target[k] = static_cast<float>(dc.calibration * recon.values[k] / tc.image_scale);
    out.phantom = to_float(x.values);
    return out;
}

}  // namespace detail

/// Phantom -> projection -> Poisson counts -> optional thinning -> input;
/// target = OSEM of the un-thinned counts. Each phantom depends only on
/// (seed, index), so datasets that differ only in thinning share phantoms,
/// counts and targets.
inline Dataset build_dataset(const DatasetConfig& dc, const TrainConfig& tc) {
    dc.validate();
    tc.validate();
    Dataset ds;
    ds.image = dc.image;
    ds.sinogram = dc.sinogram;
    ds.sinogram_scale = tc.sinogram_scale;
    ds.image_scale = tc.image_scale;
    ds.thinning = tc.thinning;
    ds.calibration = dc.calibration;
    ds.split = split_ids(static_cast<std::size_t>(dc.num_phantoms), dc.train_fraction, dc.validation_fraction, dc.seed);
    const Projector P(dc.image, dc.sinogram);
    const OsemReconstructor osem(dc.image, dc.sinogram, dc.target);
    const std::size_t n = static_cast<std::size_t>(dc.num_phantoms), S = dc.sinogram.size(), N = dc.image.size();
    ds.inputs.resize(n * S);
    ds.targets.resize(n * N);
    ds.phantoms.resize(n * N);
    parallel_for(n, [&](std::size_t i) {
        const auto smp = detail::make_sample(dc, tc, osem, P, i);
        std::copy(smp.input.begin(), smp.input.end(), ds.inputs.begin() + static_cast<std::ptrdiff_t>(i * S));
        std::copy(smp.target.begin(), smp.target.end(), ds.targets.begin() + static_cast<std::ptrdiff_t>(i * N));
        std::copy(smp.phantom.begin(), smp.phantom.end(), ds.phantoms.begin() + static_cast<std::ptrdiff_t>(i * N));
    });
    return ds;
}

/// Dataset from stored stage outputs: phantoms [n, N], kept counts [n, S] and
/// calibrated full-count OSEM activity [n, N].
inline Dataset assemble_dataset(const DatasetConfig& dc, const TrainConfig& tc, std::span<const float> phantoms,
                                std::span<const float> kept_counts, std::span<const float> activity) {
    dc.validate();
    tc.validate();
    const std::size_t n = static_cast<std::size_t>(dc.num_phantoms), S = dc.sinogram.size(), N = dc.image.size();
    RADINV_CHECK(phantoms.size() == n * N && activity.size() == n * N && kept_counts.size() == n * S, DataError,
                 "dataset: stage outputs do not match dataset.num_phantoms and the configured geometry");
    Dataset ds;
    ds.image = dc.image;
    ds.sinogram = dc.sinogram;
    ds.sinogram_scale = tc.sinogram_scale;
    ds.image_scale = tc.image_scale;
    ds.thinning = tc.thinning;
    ds.calibration = dc.calibration;
    ds.split = split_ids(n, dc.train_fraction, dc.validation_fraction, dc.seed);
    ds.phantoms.assign(phantoms.begin(), phantoms.end());
    ds.inputs.resize(n * S);
    for (std::size_t k = 0; k < ds.inputs.size(); ++k)
        ds.inputs[k] = static_cast<float>(kept_counts[k] / tc.sinogram_scale);
    ds.targets.resize(n * N);
    for (std::size_t k = 0; k < ds.targets.size(); ++k)
        ds.targets[k] = static_cast<float>(activity[k] / tc.image_scale);
    return ds;
}

inline void save_dataset(const std::filesystem::path& dir, const Dataset& ds) {
    std::filesystem::create_directories(dir);
    const auto n = static_cast<std::uint32_t>(ds.size());
    const auto H = static_cast<std::uint32_t>(ds.image.height), W = static_cast<std::uint32_t>(ds.image.width);
    const auto A = static_cast<std::uint32_t>(ds.sinogram.num_angles), B = static_cast<std::uint32_t>(ds.sinogram.num_bins);
    write_tensor(dir / "inputs.dpt", std::vector<std::uint32_t>{n, A, B}, ds.inputs);
    write_tensor(dir / "targets.dpt", std::vector<std::uint32_t>{n, H, W}, ds.targets);
    write_tensor(dir / "phantoms.dpt", std::vector<std::uint32_t>{n, H, W}, ds.phantoms);
    std::ofstream f(dir / "dataset.txt");
    RADINV_CHECK(f.good(), DataError, "cannot write " + (dir / "dataset.txt").string());
    f.precision(17);
    f << "image.size = " << ds.image.width << "\nimage.pixel_size = " << ds.image.pixel_size
      << "\nimage.fov_radius = " << ds.image.fov_radius << "\nsinogram.num_angles = " << ds.sinogram.num_angles
      << "\nsinogram.num_bins = " << ds.sinogram.num_bins << "\nsinogram.bin_spacing = " << ds.sinogram.bin_spacing
      << "\nsinogram_scale = " << ds.sinogram_scale << "\nimage_scale = " << ds.image_scale
      << "\nthinning = " << ds.thinning << "\ncalibration = " << ds.calibration << "\ncount = " << n << '\n';
    std::ofstream sp(dir / "split.csv");
    sp << "id,split\n";
    std::vector<std::string> label(ds.size());
    for (auto i : ds.split.train) label[i] = "train";
    for (auto i : ds.split.validation) label[i] = "validation";
    for (auto i : ds.split.test) label[i] = "test";
    for (std::size_t i = 0; i < label.size(); ++i) sp << i << ',' << label[i] << '\n';
}

inline Dataset load_dataset(const std::filesystem::path& dir) {
    RADINV_CHECK(std::filesystem::exists(dir / "dataset.txt"), DataError,
                 "no dataset in " + dir.string() + " (missing dataset.txt)");
    const auto kv = KeyValues::load(dir / "dataset.txt");
    Dataset ds;
    int size = 0;
    std::size_t count = 0;
    kv.get("image.size", size);
    ds.image = ImageGeometry::square(size);
    kv.get("image.pixel_size", ds.image.pixel_size);
    kv.get("image.fov_radius", ds.image.fov_radius);
    kv.get("sinogram.num_angles", ds.sinogram.num_angles);
    kv.get("sinogram.num_bins", ds.sinogram.num_bins);
    kv.get("sinogram.bin_spacing", ds.sinogram.bin_spacing);
    kv.get("sinogram_scale", ds.sinogram_scale);
    kv.get("image_scale", ds.image_scale);
    kv.get("thinning", ds.thinning);
    kv.get("calibration", ds.calibration);
    kv.get("count", count);
    ds.image.validate();
    ds.sinogram.validate();
    auto load = [&](const char* name, std::size_t per) {
        Tensor t = read_tensor(dir / name);
        RADINV_CHECK(t.values.size() == count * per, DataError, std::string(name) + " does not match dataset.txt");
        return std::move(t.values);
    };
    ds.inputs = load("inputs.dpt", ds.sinogram.size());
    ds.targets = load("targets.dpt", ds.image.size());
    ds.phantoms = load("phantoms.dpt", ds.image.size());
    std::ifstream sp(dir / "split.csv");
    RADINV_CHECK(sp.good(), DataError, "missing split.csv in " + dir.string());
    std::string line;
    std::getline(sp, line);
    while (std::getline(sp, line)) {
        const auto comma = line.find(',');
        RADINV_CHECK(comma != std::string::npos, DataError, "malformed split.csv line: " + line);
        const std::size_t id = std::stoul(line.substr(0, comma));
        const std::string which = line.substr(comma + 1);
        if (which == "train") ds.split.train.push_back(id);
        else if (which == "validation") ds.split.validation.push_back(id);
        else if (which == "test") ds.split.test.push_back(id);
        else throw DataError("unknown split label '" + which + "'");
    }
    return ds;
}

// ---------------------------------------------------------------------------
// Loss over a batch
// ---------------------------------------------------------------------------

struct BatchLoss {
    double mae = 0.0;
    double ms_ssim = 0.0;
};

/// Batch-mean MAE and MS-SSIM with L = max of the batch targets. When `upstream`
/// is given, writes d/d(pred) of (1 - alpha) MAE + alpha (1 - MS-SSIM).
inline BatchLoss batch_loss(std::span<const float> pred, std::span<const float> target, std::size_t batch,
                            const ImageGeometry& g, const LossConfig& cfg, double alpha = 0.5,
                            std::span<float> upstream = {}) {
    const std::size_t N = g.size();
    double L = 0.0;
    for (float v : target) L = std::max(L, static_cast<double>(v));
    if (!(L > 0.0)) L = 1.0;
    BatchLoss out;
    std::vector<double> p(N), t(N), grad;
    if (!upstream.empty()) grad.resize(N);
    const double inv_b = 1.0 / static_cast<double>(batch);
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t i = 0; i < N; ++i) {
            p[i] = pred[b * N + i];
            t[i] = target[b * N + i];
        }
        out.mae += mae_loss(p, t) * inv_b;
        if (upstream.empty()) {
            out.ms_ssim += ms_ssim(p, t, g.height, g.width, cfg, L) * inv_b;
            continue;
        }
        std::fill(grad.begin(), grad.end(), 0.0);
        mae_gradient(p, t, (1.0 - alpha) * inv_b, grad);
        out.ms_ssim += ms_ssim(p, t, g.height, g.width, cfg, L, grad, -alpha * inv_b) * inv_b;
        for (std::size_t i = 0; i < N; ++i) upstream[b * N + i] = static_cast<float>(grad[i]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct HistoryRow {
    std::uint64_t iteration = 0;
    int epoch = 0;
    double eta = 0.0;
    double mae = 0.0, ms_ssim = 0.0, alpha = 0.0;
    double val_mae = 0.0, val_ms_ssim = 0.0;
};

inline std::string history_csv(const std::vector<HistoryRow>& rows) {
    std::ostringstream f;
    f.precision(10);
    f << "iteration,epoch,eta,mae,ms_ssim,alpha,val_mae,val_ms_ssim\n";
    for (const auto& r : rows)
        f << r.iteration << ',' << r.epoch << ',' << r.eta << ',' << r.mae << ',' << r.ms_ssim << ',' << r.alpha << ','
          << r.val_mae << ',' << r.val_ms_ssim << '\n';
    return f.str();
}

/// Everything needed to continue a run bit-identically.
struct TrainState {
    InversionLayer<float> layer;
    AdamState<float> adam;
    AlphaBalancer balancer;
    std::uint64_t iteration = 0;
    /// Running sums over the current epoch's iterations.
    double epoch_mae = 0.0, epoch_ms_ssim = 0.0, epoch_alpha = 0.0;
    std::vector<HistoryRow> history;
    WeightSet<float> best_weights;
    double best_val_ms_ssim = -std::numeric_limits<double>::infinity();
    int best_epoch = -1;
};

inline TrainState start_training(InversionLayer<float> layer, const TrainConfig& cfg) {
    TrainState st;
    st.layer = std::move(layer);
    st.balancer = AlphaBalancer(cfg.loss.alpha_window);
    st.adam = AdamState<float>::for_weights(st.layer.weights(), cfg.adam);
    st.best_weights = st.layer.weights();
    return st;
}

namespace detail {

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream f(path);
    RADINV_CHECK(f.good(), DataError, "cannot write " + path.string());
    f << text;
}

inline std::string exact(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace detail

inline void save_checkpoint(const std::filesystem::path& dir, const TrainState& st) {
    const auto tmp = dir.string() + ".tmp";
    std::filesystem::remove_all(tmp);
    std::filesystem::create_directories(tmp);
    save_layer(std::filesystem::path(tmp), st.layer);
    save_adam(std::filesystem::path(tmp), st.adam, st.layer);
    {
        auto best = st.layer;
        best.weights() = st.best_weights;
        save_layer(std::filesystem::path(tmp) / "best", best);
    }
    std::ostringstream s;
    s << "iteration = " << st.iteration << "\nepoch_mae = " << detail::exact(st.epoch_mae)
      << "\nepoch_ms_ssim = " << detail::exact(st.epoch_ms_ssim) << "\nepoch_alpha = " << detail::exact(st.epoch_alpha)
      << "\nbest_val_ms_ssim = " << detail::exact(st.best_val_ms_ssim) << "\nbest_epoch = " << st.best_epoch
      << "\nalpha_window = " << st.balancer.window() << '\n';
    detail::write_text(std::filesystem::path(tmp) / "state.txt", s.str());
    std::ostringstream b;
    for (const auto& [m, l] : st.balancer.history()) b << detail::exact(m) << ',' << detail::exact(l) << '\n';
    detail::write_text(std::filesystem::path(tmp) / "balancer.csv", b.str());
    std::ostringstream h;
    for (const auto& r : st.history)
        h << r.iteration << ',' << r.epoch << ',' << detail::exact(r.eta) << ',' << detail::exact(r.mae) << ','
          << detail::exact(r.ms_ssim) << ',' << detail::exact(r.alpha) << ',' << detail::exact(r.val_mae) << ','
          << detail::exact(r.val_ms_ssim) << '\n';
    detail::write_text(std::filesystem::path(tmp) / "history.txt", h.str());
    std::filesystem::remove_all(dir);
    std::filesystem::rename(tmp, dir);
}

inline TrainState load_checkpoint(const std::filesystem::path& dir) {
    RADINV_CHECK(std::filesystem::exists(dir / "state.txt"), DataError, "no checkpoint in " + dir.string());
    const auto kv = KeyValues::load(dir / "state.txt");
    int window = 100;
    kv.get("alpha_window", window);
    TrainState st;
    st.layer = load_layer<float>(dir);
    st.balancer = AlphaBalancer(window);
    st.adam = load_adam(dir, st.layer);
    st.best_weights = load_layer<float>(dir / "best").weights();
    kv.get("iteration", st.iteration);
    kv.get("epoch_mae", st.epoch_mae);
    kv.get("epoch_ms_ssim", st.epoch_ms_ssim);
    kv.get("epoch_alpha", st.epoch_alpha);
    kv.get("best_val_ms_ssim", st.best_val_ms_ssim);
    kv.get("best_epoch", st.best_epoch);
    std::ifstream b(dir / "balancer.csv");
    std::deque<std::pair<double, double>> hist;
    std::string line;
    while (std::getline(b, line)) {
        const auto c = line.find(',');
        hist.emplace_back(std::stod(line.substr(0, c)), std::stod(line.substr(c + 1)));
    }
    st.balancer.restore(hist);
    std::ifstream h(dir / "history.txt");
    while (std::getline(h, line)) {
        std::istringstream ss(line);
        HistoryRow r;
        char comma;
        ss >> r.iteration >> comma >> r.epoch >> comma >> r.eta >> comma >> r.mae >> comma >> r.ms_ssim >> comma >>
            r.alpha >> comma >> r.val_mae >> comma >> r.val_ms_ssim;
        st.history.push_back(r);
    }
    return st;
}

/// Mean MAE and MS-SSIM of the frozen layer over the given ids.
inline BatchLoss evaluate_split(const InversionLayer<float>& layer, const Dataset& ds,
                                const std::vector<std::size_t>& ids, const LossConfig& cfg) {
    RADINV_CHECK(!ids.empty(), DataError, "evaluation split is empty");
    const std::size_t S = ds.sinogram.size(), N = ds.image.size();
    constexpr std::size_t kChunk = 16;
    std::vector<float> in, out;
    BatchLoss acc;
    for (std::size_t start = 0; start < ids.size(); start += kChunk) {
        const std::size_t b = std::min(kChunk, ids.size() - start);
        in.resize(b * S);
        out.resize(b * N);
        for (std::size_t j = 0; j < b; ++j) std::copy_n(ds.input(ids[start + j]).begin(), S, in.begin() + j * S);
        layer.forward(in, b, out);
        for (std::size_t j = 0; j < b; ++j) {
            const auto l = batch_loss(std::span<const float>(out).subspan(j * N, N), ds.target(ids[start + j]), 1,
                                      ds.image, cfg);
            acc.mae += l.mae;
            acc.ms_ssim += l.ms_ssim;
        }
    }
    acc.mae /= static_cast<double>(ids.size());
    acc.ms_ssim /= static_cast<double>(ids.size());
    return acc;
}

struct TrainOptions {
    /// Stop after this many total iterations (for checkpoint/resume); 0 runs to the end.
    std::uint64_t stop_at = 0;
    /// When set: periodic checkpoints, history.csv and the final best/last layers.
    std::optional<std::filesystem::path> run_dir;
    /// Called after every epoch with the new history row.
    std::function<void(const HistoryRow&)> on_epoch;
};

/// Mini-batches drawn uniformly with replacement from the train split, using an
/// RNG seeded by (seed, iteration) so a resumed run replays the same batches.
inline void train(TrainState& st, const Dataset& ds, const TrainConfig& cfg, const TrainOptions& opt = {}) {
    cfg.validate();
    RADINV_CHECK(st.layer.image_geometry() == ds.image && st.layer.sinogram_geometry() == ds.sinogram, GeometryError,
                 "train: layer geometry does not match the dataset");
    RADINV_CHECK(!ds.split.train.empty() && !ds.split.validation.empty(), DataError,
                 "train: need non-empty train and validation splits");
    const std::size_t S = ds.sinogram.size(), N = ds.image.size(), B = static_cast<std::size_t>(cfg.batch_size);
    const std::uint64_t per_epoch = cfg.iterations_per_epoch();
    const std::uint64_t end = opt.stop_at ? std::min(opt.stop_at, cfg.total_iterations()) : cfg.total_iterations();
    std::vector<float> in(B * S), target(B * N), out(B * N), up(B * N);
    while (st.iteration < end) {
        const std::uint64_t k = st.iteration;
        Rng rng = make_rng(mix_seed(cfg.seed, k), 0x42415443);  // "BATC"
        for (std::size_t j = 0; j < B; ++j) {
            const std::size_t id = ds.split.train[static_cast<std::size_t>(rng() % ds.split.train.size())];
            std::copy_n(ds.input(id).begin(), S, in.begin() + j * S);
            std::copy_n(ds.target(id).begin(), N, target.begin() + j * N);
        }
        st.layer.forward(in, B, out);
        const double alpha = st.balancer.alpha();
        const double eta = learning_rate(k, cfg.scheduler);
        const auto l = batch_loss(out, target, B, ds.image, cfg.loss, alpha, up);
        const double value = (1.0 - alpha) * l.mae + alpha * (1.0 - l.ms_ssim);
        if (!std::isfinite(value))
            throw NumericError("training diverged at iteration " + std::to_string(k) + " (eta " +
                               detail::exact(eta) + ")");
        st.balancer.push(l.mae, 1.0 - l.ms_ssim);
        st.layer.backward_adam(in, up, B, st.adam, eta);
        st.epoch_mae += l.mae;
        st.epoch_ms_ssim += l.ms_ssim;
        st.epoch_alpha += alpha;
        st.iteration = k + 1;
        if (st.iteration % per_epoch != 0) continue;

        HistoryRow row;
        row.iteration = st.iteration;
        row.epoch = static_cast<int>(st.iteration / per_epoch) - 1;
        row.eta = eta;
        row.mae = st.epoch_mae / static_cast<double>(per_epoch);
        row.ms_ssim = st.epoch_ms_ssim / static_cast<double>(per_epoch);
        row.alpha = st.epoch_alpha / static_cast<double>(per_epoch);
        const auto val = evaluate_split(st.layer, ds, ds.split.validation, cfg.loss);
        row.val_mae = val.mae;
        row.val_ms_ssim = val.ms_ssim;
        st.epoch_mae = st.epoch_ms_ssim = st.epoch_alpha = 0.0;
        st.history.push_back(row);
        if (val.ms_ssim > st.best_val_ms_ssim) {
            st.best_val_ms_ssim = val.ms_ssim;
            st.best_epoch = row.epoch;
            st.best_weights = st.layer.weights();
        }
        if (opt.on_epoch) opt.on_epoch(row);
        if (opt.run_dir && (row.epoch + 1) % cfg.checkpoint_every == 0) {
            save_checkpoint(*opt.run_dir / "checkpoint", st);
            detail::write_text(*opt.run_dir / "history.csv", history_csv(st.history));
        }
    }
    if (opt.run_dir) {
        save_checkpoint(*opt.run_dir / "checkpoint", st);
        detail::write_text(*opt.run_dir / "history.csv", history_csv(st.history));
    }
}

/// The layer with the best validation weights seen so far.
inline InversionLayer<float> best_layer(const TrainState& st) {
    auto out = st.layer;
    out.weights() = st.best_weights;
    return out;
}

// ---------------------------------------------------------------------------
// Reconstruction
// ---------------------------------------------------------------------------

struct ReconstructionTiming {
    double total_seconds = 0.0;
    double per_slice_seconds = 0.0;
    double slices_per_second = 0.0;
};

/// Batched forward passes over stored-scale inputs; outputs stay in stored scale.
inline std::vector<float> reconstruct(const InversionLayer<float>& layer, std::span<const float> inputs,
                                      std::size_t count, std::size_t batch = 16, ReconstructionTiming* timing = nullptr) {
    const std::size_t S = layer.sinogram_geometry().size(), N = layer.image_geometry().size();
    RADINV_CHECK(inputs.size() == count * S, GeometryError, "reconstruct: input size does not match the layer");
    RADINV_CHECK(batch >= 1, ConfigError, "reconstruct: batch must be >= 1");
    std::vector<float> out(count * N);
    const auto t0 = std::chrono::steady_clock::now();
    for (std::size_t start = 0; start < count; start += batch) {
        const std::size_t b = std::min(batch, count - start);
        layer.forward(inputs.subspan(start * S, b * S), b, std::span<float>(out).subspan(start * N, b * N));
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (timing) {
        timing->total_seconds = secs;
        timing->per_slice_seconds = count ? secs / static_cast<double>(count) : 0.0;
        timing->slices_per_second = secs > 0.0 ? static_cast<double>(count) / secs : 0.0;
    }
    return out;
}

}  // namespace radinv
