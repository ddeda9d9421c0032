// SPDX-License-Identifier: Apache-2.0
#include "diver/trainer.hpp"

#include "diver/mc_reference.hpp"
#include "diver/parallel.hpp"
#include "diver/random.hpp"

#include <cmath>
#include <numeric>
#include <unordered_map>

namespace diver {

double photometric_loss(std::span<const Real> rendered, std::span<const Real> target,
                        std::span<Real> grad) {
    if (rendered.size() != target.size())
        throw DimensionError("photometric_loss: rendered and target differ in size");
    if (!grad.empty() && grad.size() != rendered.size())
        throw DimensionError("photometric_loss: gradient buffer has wrong size");
    double loss = 0;
    for (std::size_t i = 0; i < rendered.size(); ++i) {
        const double r = rendered[i] - target[i];
        loss += r * r;
        if (!grad.empty())
            grad[i] = 2 * r;
    }
    return loss;
}

namespace {

inline double sparsity_term(double s) { return std::log1p(s * s / 0.5); }
inline double sparsity_slope(double s) { return 4 * s / (1 + 2 * s * s); }

} // namespace

double sparsity_loss(std::span<const Real> sigmas, double lambda_s, std::span<Real> grad) {
    if (!grad.empty() && grad.size() != sigmas.size())
        throw DimensionError("sparsity_loss: gradient buffer has wrong size");
    double loss = 0;
    for (std::size_t i = 0; i < sigmas.size(); ++i) {
        if (!(sigmas[i] >= 0))
            throw ValidationError("sparsity_loss: densities must be non-negative");
        loss += sparsity_term(sigmas[i]);
        if (!grad.empty())
            grad[i] = lambda_s * sparsity_slope(sigmas[i]);
    }
    return lambda_s * loss;
}

const char *to_string(IntegratorKind k) {
    return k == IntegratorKind::Deterministic ? "deterministic" : "stochastic";
}

void TrainConfig::validate() const {
    if (!(learning_rate > 0))
        throw ValidationError("learning rate must be positive");
    if (!(lambda_s >= 0))
        throw ValidationError("lambda_s must be non-negative");
    if (batch_rays < 1 || steps < 0)
        throw ValidationError("batch size must be >= 1 and steps >= 0");
    if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1 && adam_eps > 0))
        throw ValidationError("invalid Adam hyperparameters");
}

void PipelineConfig::validate() const {
    fine_dims.validate();
    if (!(lr_coarse > 0 && lr_fine > 0))
        throw ValidationError("learning rates must be positive");
    if (!(lambda_s >= 0))
        throw ValidationError("lambda_s must be non-negative");
    if (coarse_factor < 1)
        throw ValidationError("coarse factor must be >= 1");
    if (!(tau_vis >= 0 && tau_vis < 1))
        throw ValidationError("tau_vis must lie in [0, 1)");
    if (!(transform.voxel_size > 0))
        throw ValidationError("voxel size must be positive");
}

// ---------------------------------------------------------------------------
// Per-ray forward and reverse pass

namespace {

/// Gradient accumulator for one chunk of rays: dense decoder gradient, sparse rows of
/// pool gradients keyed by slot in first-touch order.
struct ChunkGrad {
    std::vector<Real> decoder;
    std::vector<std::uint32_t> slots;
    std::vector<Real> rows;
    std::unordered_map<std::uint32_t, std::size_t> row_of;
    double loss = 0;
    int F = 0;

    ChunkGrad(std::size_t n_params, int feature_dim) : decoder(n_params, 0), F(feature_dim) {}

    Real *row(std::uint32_t slot) {
        auto [it, fresh] = row_of.try_emplace(slot, slots.size());
        if (fresh) {
            slots.push_back(slot);
            rows.resize(rows.size() + F, 0);
        }
        return rows.data() + it->second * F;
    }
};

struct RayScratch {
    std::vector<DecoderTape> tapes;
    std::vector<Real> enc, feat, gfeat, corner;
    std::vector<Real> tau, alpha, T;
    std::vector<Rgb> color;
};

struct RayModel {
    const FeatureGrid *grid;
    bool tanh_features;
    const DecoderWeights *decoder;
    Rgb background;
    double lambda_s;
};

/// Forward (and, when `grad` is set, reverse) pass of one ray given its records.
/// Returns the loss; `loss_weight` scales all gradients.
double ray_pass(const RayModel &m, std::span<const IntervalRecord> rec, const Vec3 &dir,
                const Rgb *target, double loss_weight, ChunkGrad *grad, RayScratch &s, Rgb *rgb) {
    const int F = m.grid->feature_dim();
    const std::size_t n = rec.size();
    if (s.tapes.size() < n)
        s.tapes.resize(n);
    s.enc.resize(m.decoder->shape().encoded_dir_dim());
    pos_encode(dir, m.decoder->shape().dir_bands, s.enc);
    s.feat.resize(F);
    s.gfeat.resize(F);
    s.tau.resize(n);
    s.alpha.resize(n);
    s.T.resize(n);
    s.color.resize(n);

    Rgb C{0, 0, 0};
    double T = 1;
    for (std::size_t i = 0; i < n; ++i) {
        const auto slots = m.grid->corner_slots(rec[i].voxel);
        std::fill(s.feat.begin(), s.feat.end(), 0.0);
        for (int k = 0; k < 8; ++k) {
            const double w = rec[i].weights[k];
            if (w == 0)
                continue;
            const auto f = m.grid->feature(slots[k]);
            if (m.tanh_features)
                for (int j = 0; j < F; ++j)
                    s.feat[j] += w * std::tanh(f[j]);
            else
                for (int j = 0; j < F; ++j)
                    s.feat[j] += w * f[j];
        }
        const DecoderOutput out = forward(*m.decoder, s.feat, s.enc, &s.tapes[i]);
        s.tau[i] = out.sigma * rec[i].scale;
        s.alpha[i] = 1 - std::exp(-s.tau[i]);
        s.color[i] = out.color;
        s.T[i] = T;
        for (int c = 0; c < 3; ++c)
            C[c] += T * s.alpha[i] * out.color[c];
        T *= 1 - s.alpha[i];
    }
    for (int c = 0; c < 3; ++c)
        C[c] += T * m.background[c];
    if (rgb)
        *rgb = C;
    if (!target)
        return 0;

    double loss = 0;
    Rgb dC;
    for (int c = 0; c < 3; ++c) {
        const double r = C[c] - (*target)[c];
        loss += r * r;
        dC[c] = 2 * r * loss_weight;
    }
    for (std::size_t i = 0; i < n; ++i)
        loss += m.lambda_s * sparsity_term(s.tau[i]);
    if (!grad)
        return loss;

    // R holds the color composited behind the current interval (background included).
    Rgb R = m.background;
    for (std::size_t ii = n; ii-- > 0;) {
        const double a = s.alpha[ii], Ti = s.T[ii];
        const Rgb &c = s.color[ii];
        double d_alpha = 0;
        Rgb d_color;
        for (int ch = 0; ch < 3; ++ch) {
            d_alpha += dC[ch] * Ti * (c[ch] - R[ch]);
            d_color[ch] = dC[ch] * Ti * a;
        }
        const double d_tau = d_alpha * (1 - a) + loss_weight * m.lambda_s * sparsity_slope(s.tau[ii]);
        const double d_sigma = d_tau * rec[ii].scale;
        for (int ch = 0; ch < 3; ++ch)
            R[ch] = a * c[ch] + (1 - a) * R[ch];

        backward(*m.decoder, s.tapes[ii], d_sigma, d_color, grad->decoder, s.gfeat);
        const auto slots = m.grid->corner_slots(rec[ii].voxel);
        for (int k = 0; k < 8; ++k) {
            const double w = rec[ii].weights[k];
            if (w == 0)
                continue;
            Real *row = grad->row(slots[k]);
            if (m.tanh_features) {
                const auto f = m.grid->feature(slots[k]);
                for (int j = 0; j < F; ++j) {
                    const double th = std::tanh(f[j]);
                    row[j] += w * s.gfeat[j] * (1 - th * th);
                }
            } else {
                for (int j = 0; j < F; ++j)
                    row[j] += w * s.gfeat[j];
            }
        }
    }
    return loss;
}

} // namespace

RayGradients backprop_ray(const Scene &scene, const Ray &ray, const Rgb &target, double lambda_s,
                          const Rgb &background) {
    const RayModel m{&scene.grid, scene.tanh_features, &scene.decoder, background, lambda_s};
    const auto rec = deterministic_records(scene.grid, scene.transform, ray);
    ChunkGrad g(scene.decoder.params().size(), scene.grid.feature_dim());
    RayScratch s;
    RayGradients out;
    out.loss = ray_pass(m, rec, ray.direction, &target, 1.0, &g, s, &out.rgb);
    for (std::size_t i = 0; i < g.slots.size(); ++i)
        out.features[g.slots[i]] =
            std::vector<Real>(g.rows.begin() + i * g.F, g.rows.begin() + (i + 1) * g.F);
    out.decoder = std::move(g.decoder);
    return out;
}

Rgb training_forward(const Scene &scene, const Ray &ray, const Rgb &background) {
    const RayModel m{&scene.grid, scene.tanh_features, &scene.decoder, background, 0.0};
    const auto rec = deterministic_records(scene.grid, scene.transform, ray);
    RayScratch s;
    Rgb rgb;
    ray_pass(m, rec, ray.direction, nullptr, 1.0, nullptr, s, &rgb);
    return rgb;
}

// ---------------------------------------------------------------------------
// Optimizer and training loop

namespace {

struct Adam {
    double lr, b1, b2, eps;
    std::vector<Real> m, v;
    std::uint64_t t = 0;

    Adam(std::size_t n, const TrainConfig &c)
        : lr(c.learning_rate), b1(c.beta1), b2(c.beta2), eps(c.adam_eps), m(n, 0), v(n, 0) {}

    void step(std::span<Real> p, std::span<const Real> g) {
        ++t;
        const double c1 = 1 - std::pow(b1, double(t)), c2 = 1 - std::pow(b2, double(t));
        for (std::size_t i = 0; i < p.size(); ++i) {
            m[i] = b1 * m[i] + (1 - b1) * g[i];
            v[i] = b2 * v[i] + (1 - b2) * g[i] * g[i];
            p[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
        }
    }
};

/// Adam with moments kept per pool row; a row's step count advances only when the row
/// receives a gradient.
struct RowAdam {
    double lr, b1, b2, eps;
    int F;
    std::vector<Real> m, v;
    std::vector<std::uint32_t> t;

    RowAdam(std::size_t rows, int feature_dim, const TrainConfig &c)
        : lr(c.learning_rate), b1(c.beta1), b2(c.beta2), eps(c.adam_eps), F(feature_dim),
          m(rows * feature_dim, 0), v(rows * feature_dim, 0), t(rows, 0) {}

    void step_row(std::uint32_t row, std::span<Real> p, const Real *g) {
        const std::uint32_t k = ++t[row];
        const double c1 = 1 - std::pow(b1, double(k)), c2 = 1 - std::pow(b2, double(k));
        Real *mr = m.data() + std::size_t(row) * F;
        Real *vr = v.data() + std::size_t(row) * F;
        for (int j = 0; j < F; ++j) {
            mr[j] = b1 * mr[j] + (1 - b1) * g[j];
            vr[j] = b2 * vr[j] + (1 - b2) * g[j] * g[j];
            p[j] -= lr * (mr[j] / c1) / (std::sqrt(vr[j] / c2) + eps);
        }
    }
};

/// Epoch-wise random permutation of all training pixels.
class RaySampler {
  public:
    RaySampler(const TrainSet &set, std::uint64_t seed) : set_(set), seed_(seed) {
        for (const auto &v : set.views) {
            offsets_.push_back(total_);
            total_ += v.image.pixel_count();
        }
        order_.resize(total_);
    }

    /// Global pixel id of the next ray.
    std::size_t next() {
        if (pos_ == order_.size()) {
            std::iota(order_.begin(), order_.end(), std::size_t(0));
            CounterRng rng(seed_, 0x5A3D1E + epoch_++);
            for (std::size_t i = order_.size(); i > 1; --i)
                std::swap(order_[i - 1], order_[rng.below(i)]);
            pos_ = 0;
        }
        return order_[pos_++];
    }

    void lookup(std::size_t id, std::size_t &view, int &x, int &y) const {
        view = std::size_t(std::upper_bound(offsets_.begin(), offsets_.end(), id) - offsets_.begin()) - 1;
        const std::size_t local = id - offsets_[view];
        const int w = set_.views[view].image.width;
        x = int(local % w);
        y = int(local / w);
    }

  private:
    const TrainSet &set_;
    std::uint64_t seed_;
    std::vector<std::size_t> offsets_;
    std::size_t total_ = 0;
    std::vector<std::size_t> order_;
    std::size_t pos_ = 0;
    std::uint64_t epoch_ = 0;
};

constexpr std::size_t kChunkRays = 64;

/// Gradients of one batch, merged across chunks in chunk order.
struct BatchGrad {
    double loss = 0;
    std::vector<Real> decoder;
    std::vector<Real> pool;              // dense, only touched rows non-zero
    std::vector<std::uint8_t> touched;   // per pool row
    std::vector<std::uint32_t> rows;     // touched rows in first-touch order
};

/// Runs one batch on `scene` and returns the merged gradient.
void batch_gradient(const Scene &scene, const TrainSet &set, const TrainConfig &cfg,
                    RaySampler &sampler, std::uint64_t batch_index, BatchGrad &out) {
    const int F = scene.grid.feature_dim();
    const std::size_t B = std::size_t(cfg.batch_rays);
    std::vector<std::size_t> ids(B);
    for (auto &id : ids)
        id = sampler.next();
    const std::size_t n_chunks = (B + kChunkRays - 1) / kChunkRays;
    std::vector<ChunkGrad> chunks;
    chunks.reserve(n_chunks);
    for (std::size_t c = 0; c < n_chunks; ++c)
        chunks.emplace_back(scene.decoder.params().size(), F);
    const RayModel model{&scene.grid, scene.tanh_features, &scene.decoder, set.background, cfg.lambda_s};
    const double w = 1.0 / double(B);

    parallel_for(n_chunks, 1, cfg.threads, [&](std::size_t c0, std::size_t c1, int) {
        RayScratch scratch;
        for (std::size_t c = c0; c < c1; ++c) {
            ChunkGrad &g = chunks[c];
            const std::size_t r1 = std::min(B, (c + 1) * kChunkRays);
            for (std::size_t r = c * kChunkRays; r < r1; ++r) {
                std::size_t view;
                int x, y;
                sampler.lookup(ids[r], view, x, y);
                const TrainView &tv = set.views[view];
                const Ray ray = generate_ray(tv.pose, x, y);
                const float *px = tv.image.at(x, y);
                const Rgb target{px[0], px[1], px[2]};
                std::vector<IntervalRecord> rec;
                if (cfg.integrator == IntegratorKind::Deterministic) {
                    rec = deterministic_records(scene.grid, scene.transform, ray);
                } else {
                    CounterRng rng(cfg.seed ^ 0x57C0C4A571Cull, batch_index * B + r);
                    rec = stochastic_interval_records(scene.grid, scene.transform, ray, rng);
                }
                g.loss += ray_pass(model, rec, ray.direction, &target, w, &g, scratch, nullptr);
            }
        }
    });

    out.loss = 0;
    out.decoder.assign(scene.decoder.params().size(), 0);
    if (out.pool.size() != scene.grid.pool().size()) {
        out.pool.assign(scene.grid.pool().size(), 0);
        out.touched.assign(scene.grid.active_vertex_count(), 0);
    }
    for (std::uint32_t r : out.rows) {
        std::fill_n(out.pool.begin() + std::size_t(r) * F, F, 0.0);
        out.touched[r] = 0;
    }
    out.rows.clear();
    for (const ChunkGrad &g : chunks) {
        out.loss += g.loss;
        for (std::size_t i = 0; i < g.decoder.size(); ++i)
            out.decoder[i] += g.decoder[i];
        for (std::size_t i = 0; i < g.slots.size(); ++i) {
            const std::uint32_t slot = g.slots[i];
            if (!out.touched[slot]) {
                out.touched[slot] = 1;
                out.rows.push_back(slot);
            }
            Real *dst = out.pool.data() + std::size_t(slot) * F;
            const Real *src = g.rows.data() + i * F;
            for (int j = 0; j < F; ++j)
                dst[j] += src[j];
        }
    }
    out.loss /= double(B);
}

void check_finite(double loss, int step) {
    if (!std::isfinite(loss))
        throw NumericError("training diverged at step " + std::to_string(step) +
                           ": batch loss is " + std::to_string(loss));
}

void check_finite_params(const Scene &scene, std::span<const std::uint32_t> rows, int step) {
    bool ok = true;
    for (Real v : scene.decoder.params())
        ok = ok && std::isfinite(v);
    for (std::uint32_t r : rows)
        for (Real v : scene.grid.feature(r))
            ok = ok && std::isfinite(v);
    if (!ok)
        throw NumericError("training diverged at step " + std::to_string(step) +
                           ": non-finite parameters");
}

} // namespace

TrainHistory train_explicit(Scene &scene, const TrainSet &set, const TrainConfig &config) {
    config.validate();
    set.validate();
    scene.validate();
    TrainHistory hist;
    if (config.steps == 0)
        return hist;
    const int F = scene.grid.feature_dim();
    RaySampler sampler(set, config.seed);
    Adam dec_opt(scene.decoder.params().size(), config);
    RowAdam feat_opt(scene.grid.active_vertex_count(), F, config);
    BatchGrad g;
    for (int step = 0; step < config.steps; ++step) {
        batch_gradient(scene, set, config, sampler, std::uint64_t(step), g);
        check_finite(g.loss, step);
        dec_opt.step(scene.decoder.params(), g.decoder);
        for (std::uint32_t r : g.rows)
            feat_opt.step_row(r, scene.grid.feature(r), g.pool.data() + std::size_t(r) * F);
        // ReLU layers map NaN inputs to 0, so a finite loss does not prove finite weights.
        check_finite_params(scene, g.rows, step);
        hist.loss.push_back(g.loss);
        if (config.on_step)
            config.on_step(step, g.loss);
    }
    return hist;
}

// ---------------------------------------------------------------------------
// Implicit initialization

ImplicitField::ImplicitField(GridDims dims, int feature_dim, const ImplicitInitConfig &config,
                             std::uint64_t seed)
    : dims_(dims), n_bands_(config.n_bands), out_dim_(feature_dim) {
    if (config.n_bands < 0 || config.hidden < 1 || config.layers < 1 || feature_dim < 1)
        throw ValidationError("invalid implicit field configuration");
    sizes_.push_back(encoded_size(n_bands_));
    for (int l = 0; l < config.layers; ++l)
        sizes_.push_back(config.hidden);
    sizes_.push_back(feature_dim);
    std::size_t total = 0;
    for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
        offsets_.push_back(total);
        total += std::size_t(sizes_[l + 1]) * sizes_[l] + sizes_[l + 1];
    }
    params_.resize(total);
    CounterRng rng(seed, 0x1A7F1E1D);
    for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
        const int in = sizes_[l], out = sizes_[l + 1];
        double bound = 1.0 / std::sqrt(double(in));
        if (l + 2 == sizes_.size())
            bound *= config.output_scale;
        Real *p = params_.data() + offsets_[l];
        for (std::size_t i = 0; i < std::size_t(in) * out + out; ++i)
            p[i] = bound * (2 * rng.uniform() - 1);
    }
}

std::vector<Real> ImplicitField::encode(const Int3 &v) const {
    const Vec3 p{double(v[0]) / dims_.nx, double(v[1]) / dims_.ny, double(v[2]) / dims_.nz};
    return pos_encode(p, n_bands_);
}

void ImplicitField::feature(const Int3 &vertex, std::span<Real> out) const {
    if (out.size() != std::size_t(out_dim_))
        throw DimensionError("implicit field: output span has wrong length");
    std::vector<Real> x = encode(vertex), y;
    for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
        const int in = sizes_[l], o = sizes_[l + 1];
        const Real *W = params_.data() + offsets_[l];
        const Real *b = W + std::size_t(in) * o;
        y.assign(o, 0);
        for (int r = 0; r < o; ++r) {
            Real acc = b[r];
            for (int c = 0; c < in; ++c)
                acc += W[std::size_t(r) * in + c] * x[c];
            y[r] = (l + 2 == sizes_.size()) ? acc : std::max(acc, Real(0));
        }
        x.swap(y);
    }
    std::copy(x.begin(), x.end(), out.begin());
}

void ImplicitField::backward(const Int3 &vertex, std::span<const Real> grad_out,
                             std::span<Real> grad) const {
    if (grad.size() != params_.size() || grad_out.size() != std::size_t(out_dim_))
        throw DimensionError("implicit field backward: buffer sizes");
    const std::size_t L = sizes_.size() - 1;
    std::vector<std::vector<Real>> acts(L + 1);
    acts[0] = encode(vertex);
    for (std::size_t l = 0; l < L; ++l) {
        const int in = sizes_[l], o = sizes_[l + 1];
        const Real *W = params_.data() + offsets_[l];
        const Real *b = W + std::size_t(in) * o;
        acts[l + 1].assign(o, 0);
        for (int r = 0; r < o; ++r) {
            Real acc = b[r];
            for (int c = 0; c < in; ++c)
                acc += W[std::size_t(r) * in + c] * acts[l][c];
            acts[l + 1][r] = (l + 1 == L) ? acc : std::max(acc, Real(0));
        }
    }
    std::vector<Real> dy(grad_out.begin(), grad_out.end()), dx;
    for (std::size_t l = L; l-- > 0;) {
        const int in = sizes_[l], o = sizes_[l + 1];
        const Real *W = params_.data() + offsets_[l];
        Real *gW = grad.data() + offsets_[l];
        Real *gb = gW + std::size_t(in) * o;
        if (l + 1 != L)
            for (int r = 0; r < o; ++r)
                if (acts[l + 1][r] <= 0)
                    dy[r] = 0;
        dx.assign(in, 0);
        for (int r = 0; r < o; ++r) {
            const Real g = dy[r];
            if (g == 0)
                continue;
            gb[r] += g;
            for (int c = 0; c < in; ++c) {
                gW[std::size_t(r) * in + c] += g * acts[l][c];
                dx[c] += W[std::size_t(r) * in + c] * g;
            }
        }
        dy.swap(dx);
    }
}

void ImplicitField::materialize(FeatureGrid &grid) const {
    if (grid.feature_dim() != out_dim_)
        throw DimensionError("implicit field: feature width differs from grid");
    const GridDims d = grid.dims();
    const auto index = grid.vertex_index();
    for (std::size_t p = 0; p < index.size(); ++p)
        if (index[p] != kSentinel)
            feature(d.vertex_coord(p), grid.feature(index[p]));
}

TrainHistory init_implicit(Scene &scene, const ImplicitInitConfig &init, const TrainSet &set,
                           const TrainConfig &config, ImplicitField *field_out) {
    config.validate();
    set.validate();
    scene.validate();
    ImplicitField field(scene.grid.dims(), scene.grid.feature_dim(), init, config.seed ^ 0x1DF1E1D);
    TrainConfig cfg = config;
    cfg.learning_rate = init.learning_rate;
    cfg.steps = init.steps;
    TrainHistory hist;
    const int F = scene.grid.feature_dim();
    const GridDims d = scene.grid.dims();
    std::vector<Int3> vertex_of(scene.grid.active_vertex_count());
    {
        const auto index = scene.grid.vertex_index();
        for (std::size_t p = 0; p < index.size(); ++p)
            if (index[p] != kSentinel)
                vertex_of[index[p]] = d.vertex_coord(p);
    }
    RaySampler sampler(set, cfg.seed ^ 0x1A);
    Adam dec_opt(scene.decoder.params().size(), cfg);
    Adam field_opt(field.parameter_count(), cfg);
    std::vector<Real> field_grad(field.parameter_count());
    BatchGrad g;
    for (int step = 0; step < cfg.steps; ++step) {
        field.materialize(scene.grid);
        batch_gradient(scene, set, cfg, sampler, std::uint64_t(step), g);
        check_finite(g.loss, step);
        std::fill(field_grad.begin(), field_grad.end(), 0.0);
        for (std::uint32_t r : g.rows)
            field.backward(vertex_of[r], std::span<const Real>(g.pool.data() + std::size_t(r) * F, F),
                           field_grad);
        dec_opt.step(scene.decoder.params(), g.decoder);
        field_opt.step(field.params(), field_grad);
        hist.loss.push_back(g.loss);
        if (cfg.on_step)
            cfg.on_step(step, g.loss);
    }
    field.materialize(scene.grid);
    if (field_out)
        *field_out = field;
    return hist;
}

// ---------------------------------------------------------------------------
// Pipeline

Scene make_dense_scene(GridDims dims, const WorldTransform &transform, int feature_dim,
                       DecoderVariant variant, double feature_std, std::uint64_t seed,
                       bool tanh_features) {
    Scene s;
    s.grid = FeatureGrid(dims, feature_dim);
    OccupancyMask all(dims);
    for (std::size_t i = 0; i < dims.voxel_count(); ++i)
        all.set(i);
    CounterRng rng(seed, 0xFEA7);
    s.grid.set_occupancy(all, [&](const Int3 &, std::span<Real> f) {
        for (Real &v : f)
            v = feature_std * rng.normal();
    });
    s.decoder = init_decoder(DecoderShape::for_variant(variant, feature_dim), seed);
    s.transform = transform;
    s.tanh_features = tanh_features;
    return s;
}

PipelineResult coarse_to_fine(const TrainSet &set, const PipelineConfig &config) {
    config.validate();
    set.validate();
    PipelineResult res;
    const int f = config.coarse_factor;
    const GridDims fd = config.fine_dims;
    const GridDims cd{(fd.nx + f - 1) / f, (fd.ny + f - 1) / f, (fd.nz + f - 1) / f};
    const WorldTransform cxf{config.transform.origin, config.transform.voxel_size * f};

    auto stage_cfg = [&](const std::string &name, double lr, int steps, std::uint64_t seed) {
        TrainConfig tc;
        tc.learning_rate = lr;
        tc.lambda_s = config.lambda_s;
        tc.batch_rays = config.batch_rays;
        tc.steps = steps;
        tc.seed = seed;
        tc.integrator = config.integrator;
        tc.threads = config.threads;
        if (config.on_step)
            tc.on_step = [&, name](int s, double l) { config.on_step(name, s, l); };
        return tc;
    };

    // Stage 1: coarse grid and images.
    const TrainSet coarse_set = downsample_set(set, f);
    Scene coarse = make_dense_scene(cd, cxf, config.feature_dim, config.variant,
                                    config.feature_init_std, config.seed, config.tanh_features);
    if (config.implicit_init) {
        TrainConfig ic = stage_cfg("coarse-implicit", config.implicit.learning_rate,
                                   config.implicit.steps, config.seed);
        init_implicit(coarse, config.implicit, coarse_set, ic);
    }
    res.coarse_history =
        train_explicit(coarse, coarse_set, stage_cfg("coarse", config.lr_coarse, config.coarse_steps, config.seed));
    const auto coarse_poses = coarse_set.poses();
    const auto coarse_alpha = record_max_blended_alpha(coarse, coarse_poses, config.threads);
    coarse.grid = cull(coarse.grid, coarse_alpha, config.tau_vis);
    res.coarse_occupied_after_cull = coarse.grid.occupied_voxel_count();

    // Stage 2: fresh features and decoder on the upsampled occupancy.
    Scene fine;
    fine.grid = FeatureGrid(fd, config.feature_dim);
    CounterRng rng(config.seed + 1, 0xFEA7);
    fine.grid.set_occupancy(upsample_occupancy(coarse.grid.occupancy(), f, fd),
                            [&](const Int3 &, std::span<Real> feat) {
                                for (Real &v : feat)
                                    v = config.feature_init_std * rng.normal();
                            });
    fine.decoder = init_decoder(DecoderShape::for_variant(config.variant, config.feature_dim),
                                config.seed + 1);
    fine.transform = config.transform;
    fine.tanh_features = config.tanh_features;
    res.fine_occupied_before_cull = fine.grid.occupied_voxel_count();
    if (config.implicit_init)
        res.implicit_history = init_implicit(
            fine, config.implicit, set,
            stage_cfg("implicit", config.implicit.learning_rate, config.implicit.steps, config.seed + 1));
    res.fine_history =
        train_explicit(fine, set, stage_cfg("fine", config.lr_fine, config.fine_steps, config.seed + 1));
    const auto poses = set.poses();
    const auto alpha = record_max_blended_alpha(fine, poses, config.threads);
    if (config.keep_uncull)
        res.fine_before_cull = fine;
    fine.grid = cull(fine.grid, alpha, config.tau_vis);
    res.fine_occupied_after_cull = fine.grid.occupied_voxel_count();
    res.scene = std::move(fine);
    res.coarse = std::move(coarse);
    return res;
}

std::vector<double> evaluate_psnr(const Scene &scene, const TrainSet &set, const RenderConfig &render) {
    std::vector<double> out;
    RenderConfig rc = render;
    rc.white_background = false;
    rc.background = set.background;
    const SceneRenderer renderer(scene, rc.fused);
    for (const auto &v : set.views)
        out.push_back(psnr(renderer.render(v.pose, rc).image, v.image));
    return out;
}

} // namespace diver
