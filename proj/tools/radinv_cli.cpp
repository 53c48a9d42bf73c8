// radinv: command-line driver for the reconstruction pipeline.
//
//   phantom -> project -> osem / fbp -> masks -> train -> reconstruct -> eval
//
// Every stage reads its inputs from and writes its outputs to one run
// directory, so a whole experiment runs from a single config file.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "radinv/artifacts.hpp"
#include "radinv/baseline.hpp"
#include "radinv/evalmetrics.hpp"
#include "radinv/maskgen.hpp"
#include "radinv/parallel.hpp"
#include "radinv/phantom.hpp"
#include "radinv/projector.hpp"
#include "radinv/runconfig.hpp"
#include "radinv/tensor_io.hpp"
#include "radinv/trainer.hpp"

namespace fs = std::filesystem;
using namespace radinv;

namespace {

enum ExitCode { kOk = 0, kUnexpected = 1, kConfig = 2, kData = 3, kNumeric = 4 };

struct Context {
    RunConfig cfg;
    fs::path run;
    std::vector<fs::path> outputs;

    fs::path path(const std::string& name) const { return run / name; }

    void produced(const fs::path& p) { outputs.push_back(p); }

    void finish(const std::string& command) {
        std::sort(outputs.begin(), outputs.end());
        outputs.erase(std::unique(outputs.begin(), outputs.end()), outputs.end());
        write_manifest(run, command, cfg.entries, outputs);
        std::cout << command << ": wrote " << outputs.size() << " file(s) under " << run.string() << '\n';
    }
};

fs::path require(const fs::path& p, const std::string& stage) {
    RADINV_CHECK(fs::exists(p), DataError,
                 "missing " + p.string() + "; run `radinv " + stage + "` with the same run directory first");
    return p;
}

std::string volume_name(std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "vol_%04zu", i);
    return buf;
}

std::vector<ImageGrid> read_images(const fs::path& p, const ImageGeometry& g) { return unstack_images(read_tensor(p), g); }

std::vector<Sinogram> read_sinograms(const fs::path& p, const SinogramGeometry& g) {
    return unstack_sinograms(read_tensor(p), g);
}

void write_images(Context& ctx, const fs::path& p, const std::vector<ImageGrid>& v) {
    write_tensor(p, stack_images(v));
    ctx.produced(p);
}

void write_sinograms(Context& ctx, const fs::path& p, const std::vector<Sinogram>& v) {
    write_tensor(p, stack_sinograms(v));
    ctx.produced(p);
}

template <class Grid>
void previews(Context& ctx, const std::string& stem, const std::vector<Grid>& v) {
    const std::size_t n = std::min<std::size_t>(v.size(), static_cast<std::size_t>(ctx.cfg.preview_count));
    for (std::size_t i = 0; i < n; ++i) {
        const auto p = ctx.path("previews/" + stem + "_" + volume_name(i) + ".pgm");
        write_pgm16(p, v[i]);
        ctx.produced(p);
    }
}

std::vector<float> flatten(const std::vector<Sinogram>& v) { return stack_sinograms(v).values; }

std::uint64_t volume_seed(const RunConfig& c, std::size_t i) { return mix_seed(c.dataset.seed, i); }

bool thinned(const RunConfig& c) { return c.train.thinning < 1.0; }

/// Network input counts: thinned when the run uses thinning.
fs::path input_counts_path(const Context& ctx) {
    return thinned(ctx.cfg) ? ctx.path("counts_thinned.dpt") : ctx.path("counts.dpt");
}

// ---------------------------------------------------------------------------
// Stages
// ---------------------------------------------------------------------------

void cmd_phantom(Context& ctx) {
    const auto& dc = ctx.cfg.dataset;
    dc.validate();
    std::vector<ImageGrid> out(static_cast<std::size_t>(dc.num_phantoms));
    parallel_for(out.size(), [&](std::size_t i) { out[i] = generate_phantom(dc.phantom, dc.image, volume_seed(ctx.cfg, i)); });
    write_images(ctx, ctx.path("phantoms.dpt"), out);
    previews(ctx, "phantom", out);
}

void cmd_project(Context& ctx) {
    const auto& dc = ctx.cfg.dataset;
    const auto phantoms = read_images(require(ctx.path("phantoms.dpt"), "phantom"), dc.image);
    const Projector P(dc.image, dc.sinogram);
    std::vector<Sinogram> counts(phantoms.size()), kept(phantoms.size());
    parallel_for(phantoms.size(), [&](std::size_t i) {
        const auto s = volume_seed(ctx.cfg, i);
        counts[i] = apply_poisson(P.forward(phantoms[i]), dc.count_density, s);
        if (thinned(ctx.cfg)) kept[i] = split_counts(counts[i], ctx.cfg.train.thinning, s).first;
    });
    write_sinograms(ctx, ctx.path("counts.dpt"), counts);
    previews(ctx, "counts", counts);
    if (thinned(ctx.cfg)) write_sinograms(ctx, ctx.path("counts_thinned.dpt"), kept);
}

/// Calibrated OSEM of each slice, divided by `fraction` so thinned data keeps full-count units.
std::vector<ImageGrid> osem_volumes(const RunConfig& c, const std::vector<Sinogram>& counts, double fraction) {
    const auto& dc = c.dataset;
    const OsemReconstructor osem(dc.image, dc.sinogram, dc.target);
    std::vector<ImageGrid> out(counts.size());
    parallel_for(counts.size(), [&](std::size_t i) {
        out[i] = osem.reconstruct(counts[i]);
        for (double& v : out[i].values) v *= dc.calibration / fraction;
    });
    return out;
}

void cmd_osem(Context& ctx) {
    const auto& dc = ctx.cfg.dataset;
    const auto counts = read_sinograms(require(ctx.path("counts.dpt"), "project"), dc.sinogram);
    const auto full = osem_volumes(ctx.cfg, counts, 1.0);
    write_images(ctx, ctx.path("osem.dpt"), full);
    previews(ctx, "osem", full);
    if (thinned(ctx.cfg)) {
        const auto kept = read_sinograms(require(ctx.path("counts_thinned.dpt"), "project"), dc.sinogram);
        const auto thin = osem_volumes(ctx.cfg, kept, ctx.cfg.train.thinning);
        write_images(ctx, ctx.path("osem_thinned.dpt"), thin);
        previews(ctx, "osem_thinned", thin);
    }
}

void cmd_fbp(Context& ctx) {
    const auto& dc = ctx.cfg.dataset;
    const auto counts = read_sinograms(require(ctx.path("counts.dpt"), "project"), dc.sinogram);
    std::vector<ImageGrid> out(counts.size());
    parallel_for(counts.size(), [&](std::size_t i) {
        out[i] = fbp_reconstruct(counts[i], dc.image, ctx.cfg.fbp_filter);
        for (double& v : out[i].values) v *= dc.calibration;
    });
    write_images(ctx, ctx.path("fbp.dpt"), out);
    previews(ctx, "fbp", out);
}

void cmd_masks(Context& ctx) {
    const auto& c = ctx.cfg;
    const auto& ig = c.dataset.image;
    const auto& sg = c.dataset.sinogram;
    const auto tiling = tile_patches(ig, c.masks.patch_size);
    std::vector<SinogramMask> masks;
    if (c.masks.kind == "projection") {
        masks = projection_masks(tiling, sg, c.masks.buffer);
    } else {
        const auto blobs = stratified_blob_phantoms(ig, c.masks.dense_phantoms, c.masks.dense_radius_min,
                                                    c.masks.dense_radius_max, c.masks.dense.seed, c.masks.dense_jitter);
        std::vector<std::pair<Sinogram, ImageGrid>> pairs;
        const Projector P(ig, sg);
        for (const auto& x : blobs) pairs.emplace_back(P.forward(x), x);
        const auto dense = train_dense_layer(pairs, c.masks.dense);
        masks = learned_masks(dense.atlas, tiling, c.masks.refine);
        const auto cap = ctx.path("masks_capture.csv");
        std::ofstream f(cap);
        f.precision(10);
        f << "patch_id,capture_fraction\n";
        for (std::size_t p = 0; p < masks.size(); ++p)
            f << p << ',' << mask_capture_fraction(dense.atlas, tiling.patches[p], masks[p]) << '\n';
        f.close();
        ctx.produced(cap);
        const auto loss = ctx.path("dense_loss.csv");
        std::ofstream l(loss);
        l.precision(10);
        l << "epoch,mae\n";
        for (std::size_t e = 0; e < dense.epoch_loss.size(); ++e) l << e << ',' << dense.epoch_loss[e] << '\n';
        l.close();
        ctx.produced(loss);
    }
    write_masks(ctx.path("masks.dpt"), masks);
    ctx.produced(ctx.path("masks.dpt"));
    write_mask_manifest(ctx.path("masks.csv"), tiling, masks);
    ctx.produced(ctx.path("masks.csv"));
    const std::size_t n = std::min<std::size_t>(masks.size(), static_cast<std::size_t>(c.preview_count));
    for (std::size_t p = 0; p < n; ++p) {
        Sinogram s(sg);
        for (std::size_t k = 0; k < s.values.size(); ++k) s.values[k] = masks[p].bits[k];
        const auto path = ctx.path("previews/mask_patch_" + std::to_string(p) + ".pgm");
        write_pgm16(path, s);
        ctx.produced(path);
    }
    const auto pc = count_parameters(tiling, masks);
    std::cout << "masks: " << pc.mask_count << " patches, " << pc.total << " parameters (dense " << pc.dense << ")\n";
}

struct Table1Options {
    int image_size = 200;
    int angles = 168;
    int bins = 200;
    std::vector<int> patch_sizes{60, 40, 30, 20, 10};
    int buffer = -1;
    long long fov_pixels = -1;
    bool dense_only = false;
};

void cmd_table1(Context& ctx, const Table1Options& o) {
    const ImageGeometry ig = ImageGeometry::square(o.image_size);
    const SinogramGeometry sg{o.angles, o.bins, 1.0};
    const std::size_t own = fov_pixel_list(ig).size();
    std::size_t fov = own;
    if (o.fov_pixels > 0) fov = static_cast<std::size_t>(o.fov_pixels);
    else if (o.image_size == 200 && o.angles == 168 && o.bins == 200) fov = 31415;
    const int buffer = o.buffer >= 0 ? o.buffer : ctx.cfg.masks.buffer;
    const std::string in = std::to_string(o.bins) + " x " + std::to_string(o.angles);
    const std::string out = std::to_string(o.image_size) + " x " + std::to_string(o.image_size);
    const auto path = ctx.path("table1.csv");
    ensure_parent(path);
    std::ofstream f(path);
    RADINV_CHECK(f.good(), DataError, "cannot write " + path.string());
    f << "network,patch_size,input_size,output_size,parameters,masks,fov_pixels\n";
    f << "dense," << o.image_size << " x " << o.image_size << ',' << in << ',' << out << ',' << sg.size() * fov << ",1,"
      << fov << '\n';
    std::cout << "table1: dense parameters " << sg.size() * fov << " (fov pixels " << fov << ", own count " << own
              << ")\n";
    if (!o.dense_only) {
        for (int ps : o.patch_sizes) {
            RADINV_CHECK(ps >= 1 && ps <= o.image_size, ConfigError, "table1: patch sizes must lie in [1, image size]");
            const auto tiling = tile_patches(ig, ps);
            const auto pc = count_parameters(tiling, projection_masks(tiling, sg, buffer));
            f << "radon_inversion," << ps << " x " << ps << ',' << in << ',' << out << ',' << pc.total << ','
              << pc.mask_count << ',' << own << '\n';
        }
    }
    f.close();
    ctx.produced(path);
}

InversionLayer<float> layer_from_masks(const RunConfig& c, const fs::path& masks_path) {
    const auto tiling = tile_patches(c.dataset.image, c.masks.patch_size);
    auto masks = read_masks(masks_path, c.dataset.sinogram);
    RADINV_CHECK(masks.size() == tiling.patches.size(), DataError,
                 "masks.dpt holds " + std::to_string(masks.size()) + " masks but masks.patch_size gives " +
                     std::to_string(tiling.patches.size()) + " patches; rerun `radinv masks`");
    return InversionLayer<float>(tiling, std::move(masks));
}

Dataset run_dataset(const Context& ctx) {
    const auto& c = ctx.cfg;
    const auto phantoms = read_tensor(require(ctx.path("phantoms.dpt"), "phantom"));
    const auto kept = read_tensor(require(input_counts_path(ctx), "project"));
    const auto target = read_tensor(require(ctx.path("osem.dpt"), "osem"));
    return assemble_dataset(c.dataset, c.train, phantoms.values, kept.values, target.values);
}

struct TrainCliOptions {
    bool resume = false;
    std::uint64_t stop_at = 0;
};

void cmd_train(Context& ctx, const TrainCliOptions& o) {
    const auto& c = ctx.cfg;
    const Dataset ds = run_dataset(ctx);
    const fs::path dir = ctx.path("train");
    TrainState st;
    if (o.resume) {
        st = load_checkpoint(require(dir / "checkpoint", "train"));
    } else {
        fs::remove_all(dir);
        auto layer = layer_from_masks(c, require(ctx.path("masks.dpt"), "masks"));
        layer.init_uniform(c.train.seed);
        st = start_training(std::move(layer), c.train);
    }
    TrainOptions opt;
    opt.stop_at = o.stop_at;
    opt.run_dir = dir;
    opt.on_epoch = [](const HistoryRow& r) {
        std::fprintf(stderr, "epoch %4d  eta %.3g  mae %.5f  ms-ssim %.4f  val mae %.5f  val ms-ssim %.4f\n", r.epoch,
                     r.eta, r.mae, r.ms_ssim, r.val_mae, r.val_ms_ssim);
    };
    train(st, ds, c.train, opt);
    save_layer(dir / "layer", best_layer(st));
    PlotSeries tr{"train", {}, {}}, va{"validation", {}, {}};
    for (const auto& r : st.history) {
        tr.x.push_back(r.epoch);
        tr.y.push_back(r.ms_ssim);
        va.x.push_back(r.epoch);
        va.y.push_back(r.val_ms_ssim);
    }
    write_svg_plot(dir / "ms_ssim.svg", "MS-SSIM per epoch", "epoch", "MS-SSIM", {tr, va});
    for (const auto& e : fs::recursive_directory_iterator(dir))
        if (e.is_regular_file()) ctx.produced(e.path());
    std::cout << "train: " << st.iteration << " iterations, best validation MS-SSIM " << st.best_val_ms_ssim
              << " at epoch " << st.best_epoch << '\n';
}

struct ReconOptions {
    std::string layer;
    std::string input;
};

void cmd_reconstruct(Context& ctx, const ReconOptions& o) {
    const auto& c = ctx.cfg;
    const fs::path layer_dir = o.layer.empty() ? ctx.path("train/layer") : fs::path(o.layer);
    const auto layer = load_layer<float>(require(layer_dir / "layer.txt", "train").parent_path());
    const fs::path in_path = o.input.empty() ? input_counts_path(ctx) : fs::path(o.input);
    const Tensor counts = read_tensor(require(in_path, "project"));
    const std::size_t S = layer.sinogram_geometry().size();
    RADINV_CHECK(!counts.values.empty() && counts.values.size() % S == 0, GeometryError,
                 "reconstruct: " + in_path.string() + " does not hold sinograms of the layer's geometry");
    const std::size_t n = counts.values.size() / S;
    std::vector<float> in(counts.values.size());
    for (std::size_t k = 0; k < in.size(); ++k) in[k] = static_cast<float>(counts.values[k] / c.train.sinogram_scale);
    ReconstructionTiming timing;
    auto out = reconstruct(layer, in, n, static_cast<std::size_t>(c.reconstruct_batch), &timing);
    const auto& ig = layer.image_geometry();
    std::vector<ImageGrid> vols;
    for (std::size_t i = 0; i < n; ++i) {
        ImageGrid g(ig);
        for (std::size_t k = 0; k < ig.size(); ++k) g.values[k] = static_cast<double>(out[i * ig.size() + k]) * c.train.image_scale;
        vols.push_back(std::move(g));
    }
    write_images(ctx, ctx.path("recon.dpt"), vols);
    previews(ctx, "recon", vols);
    {
        std::ofstream f(ctx.path("recon.txt"));
        f << "thinning = " << (o.input.empty() ? c.train.thinning : 1.0)
          << "\nlayer = " << (o.layer.empty() ? "train/layer" : o.layer)
          << "\ninput = " << (o.input.empty() ? in_path.filename().string() : o.input) << '\n';
    }
    ctx.produced(ctx.path("recon.txt"));
    std::ofstream t(ctx.path("timing.txt"));
    t.precision(6);
    t << "slices = " << n << "\ntotal_seconds = " << timing.total_seconds
      << "\nper_slice_seconds = " << timing.per_slice_seconds << "\nslices_per_second = " << timing.slices_per_second << '\n';
    std::cout << "reconstruct: " << n << " slices, " << timing.per_slice_seconds * 1e3 << " ms per slice\n";
}

struct EvalOptions {
    std::string test, ref, method = "test";
};

struct EvalJob {
    std::string method;
    std::vector<ImageGrid> volumes;
};

void evaluate_jobs(Context& ctx, const std::vector<EvalJob>& jobs, const std::vector<ImageGrid>& refs,
                   const std::vector<std::size_t>& ids) {
    const auto& e = ctx.cfg.eval;
    std::vector<MetricReport> rows;
    const std::size_t np = std::min<std::size_t>(ids.size(), static_cast<std::size_t>(ctx.cfg.preview_count));
    for (std::size_t j = 0; j < ids.size(); ++j) {
        const auto& ref = refs[ids[j]];
        const auto vois = auto_place_vois(ref, e.voi_count, e.voi_radius);
        const auto& g = ref.geometry;
        std::size_t peak = 0;
        for (std::size_t k = 0; k < ref.values.size(); ++k)
            if (ref.values[k] > ref.values[peak]) peak = k;
        const double row = static_cast<double>(peak / g.width), col = static_cast<double>(peak % g.width);
        const std::pair<PixelPoint, PixelPoint> seg{{row, std::max(0.0, col - e.profile_half_length)},
                                                    {row, std::min(g.width - 1.0, col + e.profile_half_length)}};
        for (const auto& job : jobs) {
            const auto& img = job.volumes[ids[j]];
            rows.push_back(evaluate_volume(volume_name(ids[j]), job.method, img, ref, vois, ctx.cfg.train.loss, &seg,
                                           e.profile_samples));
            if (j < np) {
                const auto p = ctx.path("profiles/" + volume_name(ids[j]) + "_" + job.method + ".csv");
                write_profile_csv(p, line_profile(img, seg.first, seg.second, e.profile_samples));
                ctx.produced(p);
            }
        }
    }
    write_metrics_csv(ctx.path("metrics.csv"), rows);
    ctx.produced(ctx.path("metrics.csv"));
    for (const auto& job : jobs) {
        double ms = 0.0, mae = 0.0;
        int n = 0;
        for (const auto& r : rows)
            if (r.method == job.method) {
                ms += r.ms_ssim;
                mae += r.mae_nonzero;
                ++n;
            }
        std::cout << "eval: " << job.method << " mean MS-SSIM " << ms / n << ", mean non-zero MAE " << mae / n << '\n';
    }
}

void cmd_eval(Context& ctx, const EvalOptions& o) {
    const auto& c = ctx.cfg;
    const auto& ig = c.dataset.image;
    if (!o.test.empty() || !o.ref.empty()) {
        RADINV_CHECK(!o.test.empty() && !o.ref.empty(), ConfigError, "eval: --test and --ref must be given together");
        const auto test = read_images(require(o.test, "reconstruct"), ig);
        const auto ref = read_images(require(o.ref, "osem"), ig);
        RADINV_CHECK(test.size() == ref.size(), GeometryError, "eval: test and reference volume counts differ");
        std::vector<std::size_t> ids(test.size());
        for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i;
        evaluate_jobs(ctx, {{o.method, test}}, ref, ids);
        return;
    }
    const bool vs_target = c.eval.reference == "target";
    const auto refs = read_images(require(ctx.path(vs_target ? "osem.dpt" : "phantoms.dpt"), vs_target ? "osem" : "phantom"), ig);
    std::vector<EvalJob> jobs;
    if (!vs_target && fs::exists(ctx.path("osem.dpt"))) jobs.push_back({"osem_full", read_images(ctx.path("osem.dpt"), ig)});
    if (fs::exists(ctx.path("osem_thinned.dpt")))
        jobs.push_back({"osem_thinned", read_images(ctx.path("osem_thinned.dpt"), ig)});
    if (fs::exists(ctx.path("fbp.dpt"))) jobs.push_back({"fbp", read_images(ctx.path("fbp.dpt"), ig)});
    if (fs::exists(ctx.path("recon.dpt"))) {
        double thin = 1.0;
        if (fs::exists(ctx.path("recon.txt"))) {
            auto kv = KeyValues::load(ctx.path("recon.txt"));
            kv.get("thinning", thin);
        }
        jobs.push_back({thin < 1.0 ? "net_thinned" : "net_full", read_images(ctx.path("recon.dpt"), ig)});
    }
    RADINV_CHECK(!jobs.empty(), DataError, "eval: no reconstructions found; run `radinv reconstruct` (or osem/fbp) first");
    for (const auto& j : jobs)
        RADINV_CHECK(j.volumes.size() == refs.size(), DataError,
                     "eval: " + j.method + " holds " + std::to_string(j.volumes.size()) + " volumes, reference holds " +
                         std::to_string(refs.size()));
    const auto split = split_ids(refs.size(), c.dataset.train_fraction, c.dataset.validation_fraction, c.dataset.seed);
    evaluate_jobs(ctx, jobs, refs, split.test);
}

void cmd_lrplot(Context& ctx, std::optional<std::uint64_t> iters) {
    const auto& c = ctx.cfg.train;
    const std::uint64_t n = iters ? *iters : c.total_iterations();
    const auto path = ctx.path("lr.csv");
    ensure_parent(path);
    std::ofstream f(path);
    RADINV_CHECK(f.good(), DataError, "cannot write " + path.string());
    f << "iteration,eta\n";
    char buf[64];
    PlotSeries s{"eta", {}, {}};
    const std::uint64_t stride = std::max<std::uint64_t>(1, n / 4000);
    for (std::uint64_t k = 0; k < n; ++k) {
        const double eta = learning_rate(k, c.scheduler);
        std::snprintf(buf, sizeof buf, "%llu,%.17g\n", static_cast<unsigned long long>(k), eta);
        f << buf;
        if (k % stride == 0) {
            s.x.push_back(static_cast<double>(k));
            s.y.push_back(eta);
        }
    }
    f.close();
    ctx.produced(path);
    write_svg_plot(ctx.path("lr.svg"), "Cyclic learning rate", "iteration", "eta", {s});
    ctx.produced(ctx.path("lr.svg"));
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t m = v.size() / 2;
    return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

template <class Fn>
double median_seconds(int repeats, Fn&& fn) {
    std::vector<double> t;
    for (int r = 0; r < repeats; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        fn();
        t.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    }
    return median(t);
}

void cmd_bench(Context& ctx) {
    const auto& c = ctx.cfg;
    const auto& dc = c.dataset;
    std::string source = "trained";
    InversionLayer<float> layer;
    if (fs::exists(ctx.path("train/layer/layer.txt"))) {
        layer = load_layer<float>(ctx.path("train/layer"));
    } else {
        // Timing does not depend on weight values, so an untrained layer suffices.
        source = "untrained";
        const auto tiling = tile_patches(dc.image, c.masks.patch_size);
        layer = fs::exists(ctx.path("masks.dpt")) ? layer_from_masks(c, ctx.path("masks.dpt"))
                                                  : InversionLayer<float>(tiling, projection_masks(tiling, dc.sinogram, c.masks.buffer));
    }
    const auto all = read_sinograms(require(input_counts_path(ctx), "project"), dc.sinogram);
    const std::size_t n = std::min<std::size_t>(all.size(), static_cast<std::size_t>(c.bench_slices));
    const std::vector<Sinogram> counts(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n));
    std::vector<float> in = flatten(counts);
    for (auto& v : in) v = static_cast<float>(v / c.train.sinogram_scale);
    const OsemReconstructor osem(dc.image, dc.sinogram, dc.target);
    const double t_layer = median_seconds(c.bench_repeats, [&] {
        reconstruct(layer, in, n, static_cast<std::size_t>(c.reconstruct_batch));
    }) / static_cast<double>(n);
    const double t_osem = median_seconds(c.bench_repeats, [&] {
        for (const auto& s : counts) osem.reconstruct(s);
    }) / static_cast<double>(n);
    const double t_fbp = median_seconds(c.bench_repeats, [&] {
        for (const auto& s : counts) fbp_reconstruct(s, dc.image, c.fbp_filter);
    }) / static_cast<double>(n);
    const auto path = ctx.path("bench.csv");
    std::ofstream f(path);
    RADINV_CHECK(f.good(), DataError, "cannot write " + path.string());
    f.precision(6);
    f << "method,median_seconds_per_slice,ratio_to_layer,slices,repeats,layer\n";
    for (const auto& [name, t] : {std::pair<const char*, double>{"layer", t_layer}, {"osem", t_osem}, {"fbp", t_fbp}})
        f << name << ',' << t << ',' << t / t_layer << ',' << n << ',' << c.bench_repeats << ',' << source << '\n';
    std::cout << "bench: layer " << t_layer * 1e3 << " ms, osem " << t_osem * 1e3 << " ms (" << t_osem / t_layer
              << "x), fbp " << t_fbp * 1e3 << " ms (" << t_fbp / t_layer << "x) per slice\n";
}

RunConfig load_config(const std::string& path, const std::vector<std::string>& overrides) {
    KeyValues kv = path.empty() ? KeyValues{} : KeyValues::load(path);
    for (const auto& o : overrides) {
        const auto eq = o.find('=');
        RADINV_CHECK(eq != std::string::npos && eq > 0, ConfigError, "--set expects key=value, got '" + o + "'");
        auto trim = [](std::string s) {
            s.erase(0, s.find_first_not_of(" \t"));
            s.erase(s.find_last_not_of(" \t") + 1);
            return s;
        };
        kv.set(trim(o.substr(0, eq)), trim(o.substr(eq + 1)));
    }
    return RunConfig::from_keys(kv);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"radinv: sinogram-to-image reconstruction with a patch-masked Radon inversion layer"};
    app.require_subcommand(1);
    std::string config_path, run_dir = "run";
    std::vector<std::string> overrides;
    int threads = 0;
    app.add_option("-c,--config", config_path, "key = value run configuration file")->check(CLI::ExistingFile);
    app.add_option("-r,--run-dir", run_dir, "run directory for all inputs and outputs")
        ->envname("RADINV_RUN_DIR")
        ->capture_default_str();
    app.add_option("-t,--threads", threads, "worker thread cap (0 = all cores)")->envname("RADINV_THREADS");
    app.add_option("-s,--set", overrides, "override a config key, e.g. --set train.epochs=20");

    auto* phantom = app.add_subcommand("phantom", "generate the phantom set (phantoms.dpt)");
    auto* project = app.add_subcommand("project", "forward project and add Poisson noise (counts.dpt)");
    auto* osem = app.add_subcommand("osem", "OSEM target reconstructions (osem.dpt)");
    auto* fbp = app.add_subcommand("fbp", "filtered back-projection reconstructions (fbp.dpt)");
    auto* masks = app.add_subcommand("masks", "per-patch sinogram masks (masks.dpt, masks.csv)");
    auto* table1 = app.add_subcommand("table1", "parameter counts against patch size (table1.csv)");
    Table1Options t1;
    table1->add_option("--image-size", t1.image_size, "image width and height")->capture_default_str();
    table1->add_option("--angles", t1.angles, "sinogram angles")->capture_default_str();
    table1->add_option("--bins", t1.bins, "sinogram radial bins")->capture_default_str();
    table1->add_option("--patch-sizes", t1.patch_sizes, "patch sizes for the masked rows")->delimiter(',');
    table1->add_option("--buffer", t1.buffer, "projection-mask buffer (default: masks.buffer)");
    table1->add_option("--fov-pixels", t1.fov_pixels, "FOV pixel count for the dense row (default: own count)");
    table1->add_flag("--dense-only", t1.dense_only, "skip the masked rows");
    auto* trainc = app.add_subcommand("train", "train the inversion layer (train/)");
    TrainCliOptions to;
    trainc->add_flag("--resume", to.resume, "continue from train/checkpoint");
    trainc->add_option("--stop-at", to.stop_at, "stop after this many total iterations (0 = run to the end)");
    auto* recon = app.add_subcommand("reconstruct", "reconstruct sinograms with the trained layer (recon.dpt)");
    ReconOptions ro;
    recon->add_option("--layer", ro.layer, "layer directory (default: <run>/train/layer)");
    recon->add_option("--input", ro.input, "count sinogram tensor (default: the run's input counts)");
    auto* eval = app.add_subcommand("eval", "image-quality metrics on the test split (metrics.csv)");
    EvalOptions eo;
    eval->add_option("--test", eo.test, "test volume tensor; with --ref evaluates every slice");
    eval->add_option("--ref", eo.ref, "reference volume tensor");
    eval->add_option("--method", eo.method, "method label for --test")->capture_default_str();
    auto* lrplot = app.add_subcommand("lrplot", "learning-rate trajectory (lr.csv, lr.svg)");
    std::optional<std::uint64_t> iters;
    lrplot->add_option("--iters", iters, "iterations to plot (default: the configured run length)");
    auto* bench = app.add_subcommand("bench", "median-of-N reconstruction timing (bench.csv)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kConfig;
    }

    try {
        set_thread_cap(threads);
        Context ctx{load_config(config_path, overrides), fs::path(run_dir), {}};
        fs::create_directories(ctx.run);
        std::string name;
        if (phantom->parsed()) cmd_phantom(ctx), name = "phantom";
        else if (project->parsed()) cmd_project(ctx), name = "project";
        else if (osem->parsed()) cmd_osem(ctx), name = "osem";
        else if (fbp->parsed()) cmd_fbp(ctx), name = "fbp";
        else if (masks->parsed()) cmd_masks(ctx), name = "masks";
        else if (table1->parsed()) cmd_table1(ctx, t1), name = "table1";
        else if (trainc->parsed()) cmd_train(ctx, to), name = "train";
        else if (recon->parsed()) cmd_reconstruct(ctx, ro), name = "reconstruct";
        else if (eval->parsed()) cmd_eval(ctx, eo), name = "eval";
        else if (lrplot->parsed()) cmd_lrplot(ctx, iters), name = "lrplot";
        else if (bench->parsed()) cmd_bench(ctx), name = "bench";
        ctx.finish(name);
        return kOk;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kConfig;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << '\n';
        return kNumeric;
    } catch (const Error& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return kData;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return kData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kUnexpected;
    }
}
