#include "csdm/diffusion.hpp"

#include <algorithm>
#include <cmath>

#include "csdm/checkpoint.hpp"
#include "csdm/kernels.hpp"

namespace csdm {

Schedule Schedule::build(int32_t t_steps, double beta) {
    if (t_steps < 2)
        throw ValidationError("schedule: T must be >= 2, got " +
                              std::to_string(t_steps));
    if (!(beta > 0.0 && beta < 1.0))
        throw ValidationError("schedule: beta must be in (0,1), got " +
                              std::to_string(beta));
    Schedule s;
    s.steps = t_steps;
    s.beta = beta;
    s.alpha.resize(t_steps + 1);
    s.c.resize(t_steps + 1);
    s.alpha[0] = 1.0;
    for (int32_t t = 1; t <= t_steps; ++t)
        s.alpha[t] = s.alpha[t - 1] * (1.0 - beta);

    // The sqrt(alpha_t) factor cancels between numerator and denominator, so
    // c_t reduces to a ratio of prefix sums of alpha_k^{-1/2}; dividing the
    // prefix at t by the prefix at T makes c_T exactly 1.
    std::vector<double> prefix(t_steps + 1, 0.0);
    for (int32_t k = 1; k <= t_steps; ++k)
        prefix[k] = prefix[k - 1] + 1.0 / std::sqrt(s.alpha[k]);
    s.c[0] = 0.0;
    for (int32_t t = 1; t <= t_steps; ++t) s.c[t] = prefix[t] / prefix[t_steps];
    return s;
}

PosteriorCoeffs posterior_coeffs(const Schedule& sch, int32_t t,
                                 double sigma_t) {
    if (t < 2 || t > sch.steps)
        throw ValidationError("posterior_coeffs: t must be in 2..T");
    const double a_prev = sch.alpha[t - 1];
    const double a_t = sch.alpha[t];
    const double rad = 1.0 - a_prev - sigma_t * sigma_t;
    if (rad < 0.0)
        throw ValidationError(
            "posterior_coeffs: sigma_t^2 exceeds 1 - alpha_{t-1}");
    PosteriorCoeffs p;
    p.kappa = std::sqrt(rad / (1.0 - a_t));
    p.lambda = std::sqrt(a_prev) - std::sqrt(a_t) * p.kappa;
    p.nu = std::sqrt(sch.c[t - 1]) - std::sqrt(sch.c[t]) * p.kappa;
    return p;
}

std::vector<int32_t> subsequence(int32_t t_steps, int32_t s) {
    if (s < 1 || s > t_steps)
        throw ValidationError("subsequence: s must be in 1..T");
    std::vector<int32_t> out;
    for (int32_t t = t_steps; t > 0; t -= s) out.push_back(t);
    out.push_back(0);
    return out;
}

// ---- DenoiserNet ----

DenoiserNet::DenoiserNet(int32_t hidden_dim, int32_t mlp_hidden, uint64_t seed)
    : hidden_dim_(hidden_dim) {
    Rng rng = Rng(seed).split("denoiser-init");
    const auto hd = static_cast<std::size_t>(hidden_dim);
    const auto mh = static_cast<std::size_t>(mlp_hidden);
    w1_ = Parameter("denoiser.w1", {2 * hd, mh});
    b1_ = Parameter("denoiser.b1", {mh});
    w2_ = Parameter("denoiser.w2", {mh, hd});
    b2_ = Parameter("denoiser.b2", {hd});
    init_glorot(w1_, rng);
    init_glorot(w2_, rng);
}

Var DenoiserNet::forward(Tape& tape, Var z_t, std::span<const int32_t> t,
                         double dropout_p, bool training, Rng& rng) {
    Var enc = tape.constant(
        time_encoding(t, static_cast<std::size_t>(hidden_dim_)));
    Var x = tape.concat_cols({z_t, enc});
    Var h = tape.relu(tape.affine(x, w1_, b1_));
    h = tape.dropout(h, dropout_p, training, rng);
    return tape.affine(h, w2_, b2_);
}

Tensor DenoiserNet::forward_plain(const Tensor& z_t,
                                  std::span<const int32_t> t) const {
    const std::size_t n = z_t.rows();
    const auto hd = static_cast<std::size_t>(hidden_dim_);
    const Tensor enc = time_encoding(t, hd);
    Tensor x({n, 2 * hd});
    for (std::size_t i = 0; i < n; ++i) {
        std::copy_n(z_t.row(i), hd, x.row(i));
        std::copy_n(enc.row(i), hd, x.row(i) + hd);
    }
    const std::size_t mh = w1_.value.cols();
    Tensor h({n, mh});
    for (std::size_t i = 0; i < n; ++i)
        std::copy_n(b1_.value.v.data(), mh, h.row(i));
    kernels::active().matmul_nn(x.v.data(), w1_.value.v.data(), h.v.data(), n,
                                2 * hd, mh);
    for (auto& v : h.v) v = v > 0.0 ? v : 0.0;
    Tensor out({n, hd});
    for (std::size_t i = 0; i < n; ++i)
        std::copy_n(b2_.value.v.data(), hd, out.row(i));
    kernels::active().matmul_nn(h.v.data(), w2_.value.v.data(), out.v.data(),
                                n, mh, hd);
    return out;
}

std::vector<Parameter*> DenoiserNet::params() {
    return {&w1_, &b1_, &w2_, &b2_};
}

void DenoiserNet::zero_all() {
    for (Parameter* p : params()) p->value.zero();
}

// ---- SideEncoder ----

SideEncoder::SideEncoder(const FeatureSchema& schema, int32_t emb_dim,
                         int32_t hidden_dim, uint64_t seed) {
    Rng rng = Rng(seed).split("side-encoder-init");
    side_fields_ = schema.side_fields();
    if (side_fields_.empty())
        throw ValidationError("side encoder: schema has no side-information fields");
    const auto d = static_cast<std::size_t>(emb_dim);
    const auto hd = static_cast<std::size_t>(hidden_dim);
    for (int f : side_fields_) {
        side_emb_.emplace_back("side." + schema.fields[f].name,
                               std::vector<std::size_t>{
                                   static_cast<std::size_t>(schema.fields[f].vocab), d});
        init_uniform(side_emb_.back(), rng, -0.01, 0.01);
        multi_.push_back(schema.fields[f].multi_hot);
    }
    proj_w_ = Parameter("side.proj_w", {d, hd});
    proj_b_ = Parameter("side.proj_b", {hd});
    in_w_ = Parameter("z0.in_w", {d, hd});
    in_b_ = Parameter("z0.in_b", {hd});
    out_w_ = Parameter("head.out_w", {hd, d});
    out_b_ = Parameter("head.out_b", {d});
    init_glorot(proj_w_, rng);
    init_glorot(in_w_, rng);
    init_glorot(out_w_, rng);
}

namespace {
// Resolve the ItemSideInfo slot for each side field once per call site.
std::vector<int> side_slots(const ItemSideInfo& items,
                            const std::vector<int>& side_fields) {
    std::vector<int> slots;
    for (int f : side_fields) {
        auto it = std::find(items.field_pos.begin(), items.field_pos.end(), f);
        if (it == items.field_pos.end())
            throw ContractError("item side info missing for schema field " +
                                std::to_string(f));
        slots.push_back(static_cast<int>(it - items.field_pos.begin()));
    }
    return slots;
}
}  // namespace

Var SideEncoder::encode(Tape& tape, const ItemSideInfo& items,
                        std::span<const int32_t> item_ids, bool train) {
    const auto slots = side_slots(items, side_fields_);
    std::vector<Var> fields;
    for (std::size_t s = 0; s < side_emb_.size(); ++s) {
        std::vector<std::vector<int32_t>> lists(item_ids.size());
        for (std::size_t i = 0; i < item_ids.size(); ++i) {
            lists[i] = items.of(slots[s], item_ids[i]);
            if (lists[i].empty())
                throw ContractError("item " + std::to_string(item_ids[i]) +
                                    " has no side information");
        }
        fields.push_back(tape.gather_mean(side_emb_[s], lists, train));
    }
    Var pooled = tape.scale(tape.sum_cols(fields),
                            1.0 / static_cast<double>(fields.size()));
    return tape.affine(pooled, proj_w_, proj_b_, train);
}

Tensor SideEncoder::encode_plain(const ItemSideInfo& items,
                                 std::span<const int32_t> item_ids) const {
    const auto slots = side_slots(items, side_fields_);
    const std::size_t d = proj_w_.value.rows();
    const std::size_t hd = proj_w_.value.cols();
    const std::size_t n = item_ids.size();
    Tensor pooled({n, d});
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t s = 0; s < side_emb_.size(); ++s) {
            const auto& ix = items.of(slots[s], item_ids[i]);
            if (ix.empty())
                throw ContractError("item " + std::to_string(item_ids[i]) +
                                    " has no side information");
            for (int32_t j : ix)
                kernels::active().axpy(1.0 / static_cast<double>(ix.size()),
                                       side_emb_[s].value.row(j),
                                       pooled.row(i), d);
        }
        kernels::active().scale(1.0 / static_cast<double>(side_emb_.size()),
                                pooled.row(i), d);
    }
    Tensor h({n, hd});
    for (std::size_t i = 0; i < n; ++i)
        std::copy_n(proj_b_.value.v.data(), hd, h.row(i));
    kernels::active().matmul_nn(pooled.v.data(), proj_w_.value.v.data(),
                                h.v.data(), n, d, hd);
    return h;
}

Var SideEncoder::project_z0(Tape& tape, Var cold_rows, bool train) {
    return tape.affine(cold_rows, in_w_, in_b_, train);
}

Tensor SideEncoder::project_z0_plain(const Tensor& cold_rows) const {
    const std::size_t n = cold_rows.rows();
    const std::size_t d = in_w_.value.rows(), hd = in_w_.value.cols();
    Tensor z({n, hd});
    for (std::size_t i = 0; i < n; ++i)
        std::copy_n(in_b_.value.v.data(), hd, z.row(i));
    kernels::active().matmul_nn(cold_rows.v.data(), in_w_.value.v.data(),
                                z.v.data(), n, d, hd);
    return z;
}

Var SideEncoder::output_head(Tape& tape, Var z0_hat, bool train) {
    return tape.affine(z0_hat, out_w_, out_b_, train);
}

Tensor SideEncoder::output_head_plain(const Tensor& z0_hat) const {
    const std::size_t n = z0_hat.rows();
    const std::size_t hd = out_w_.value.rows(), d = out_w_.value.cols();
    Tensor w({n, d});
    for (std::size_t i = 0; i < n; ++i)
        std::copy_n(out_b_.value.v.data(), d, w.row(i));
    kernels::active().matmul_nn(z0_hat.v.data(), out_w_.value.v.data(),
                                w.v.data(), n, hd, d);
    return w;
}

std::vector<Parameter*> SideEncoder::params() { return all_params(); }

std::vector<Parameter*> SideEncoder::all_params() {
    std::vector<Parameter*> out;
    for (auto& p : side_emb_) out.push_back(&p);
    out.push_back(&proj_w_);
    out.push_back(&proj_b_);
    out.push_back(&in_w_);
    out.push_back(&in_b_);
    out.push_back(&out_w_);
    out.push_back(&out_b_);
    return out;
}

// ---- forward / reverse primitives ----

namespace {
void check_t_range(int32_t t, int32_t t_max) {
    if (t < 1 || t > t_max)
        throw ValidationError("diffusion step t=" + std::to_string(t) +
                              " out of range 1.." + std::to_string(t_max));
}
}  // namespace

ForwardSampleResult forward_sample(const Tensor& z0, const Tensor& h,
                                   std::span<const int32_t> t,
                                   const Schedule& sch, bool training,
                                   double dropout_p, Rng& rng) {
    if (!z0.same_shape(h))
        throw DimensionError("forward_sample: z0 and h shapes differ");
    const std::size_t n = z0.rows(), m = z0.cols();
    if (t.size() != n)
        throw DimensionError("forward_sample: one t per row required");
    ForwardSampleResult out;
    out.eps = Tensor({n, m});
    rng.fill_normal(out.eps.v);
    const Tensor hd = dropout(h, dropout_p, training, rng);
    out.z_t = Tensor({n, m});
    for (std::size_t i = 0; i < n; ++i) {
        check_t_range(t[i], sch.steps);
        const double sa = std::sqrt(sch.alpha[t[i]]);
        const double sc = std::sqrt(sch.c[t[i]]);
        const double se = std::sqrt(1.0 - sch.alpha[t[i]]);
        for (std::size_t j = 0; j < m; ++j)
            out.z_t.at(i, j) = sa * z0.at(i, j) + sc * hd.at(i, j) +
                               se * out.eps.at(i, j);
    }
    return out;
}

Tensor predict_z0(const DenoiserNet& denoiser, const Tensor& z_t,
                  std::span<const int32_t> t, const Tensor& h,
                  const Schedule& sch) {
    const Tensor eps_hat = denoiser.forward_plain(z_t, t);
    const std::size_t n = z_t.rows(), m = z_t.cols();
    Tensor g({n, m});
    for (std::size_t i = 0; i < n; ++i) {
        check_t_range(t[i], sch.steps);
        const double sa = std::sqrt(sch.alpha[t[i]]);
        const double sc = std::sqrt(sch.c[t[i]]);
        const double se = std::sqrt(1.0 - sch.alpha[t[i]]);
        for (std::size_t j = 0; j < m; ++j)
            g.at(i, j) =
                (z_t.at(i, j) - sc * h.at(i, j) - se * eps_hat.at(i, j)) / sa;
    }
    return g;
}

Tensor reverse_step(const DenoiserNet& denoiser, const Tensor& z_t, int32_t t,
                    int32_t t_prev, const Tensor& h, const Schedule& sch,
                    double sigma_t, Rng* rng) {
    check_t_range(t, sch.steps);
    if (t_prev >= t)
        throw ValidationError("reverse_step: t_prev must be below t");
    if (t_prev < 0) throw ValidationError("reverse_step: t_prev below 0");
    const double rad = 1.0 - sch.alpha[t_prev] - sigma_t * sigma_t;
    if (rad < 0.0)
        throw ValidationError("reverse_step: sigma_t^2 exceeds 1 - alpha_{t_prev}");
    if (sigma_t > 0.0 && rng == nullptr)
        throw ValidationError("reverse_step: sigma_t > 0 requires an rng");

    const std::size_t n = z_t.rows(), m = z_t.cols();
    std::vector<int32_t> tt(n, t);
    const Tensor eps_hat = denoiser.forward_plain(z_t, tt);
    const double sa_t = std::sqrt(sch.alpha[t]);
    const double sc_t = std::sqrt(sch.c[t]);
    const double se_t = std::sqrt(1.0 - sch.alpha[t]);

    Tensor out({n, m});
    if (t_prev == 0) {
        // alpha_0 = 1, c_0 = 0: the step collapses to the denoised prediction.
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < m; ++j)
                out.at(i, j) = (z_t.at(i, j) - sc_t * h.at(i, j) -
                                se_t * eps_hat.at(i, j)) /
                               sa_t;
        return out;
    }
    const double sa_p = std::sqrt(sch.alpha[t_prev]);
    const double sc_p = std::sqrt(sch.c[t_prev]);
    const double dir = std::sqrt(rad);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
            const double g = (z_t.at(i, j) - sc_t * h.at(i, j) -
                              se_t * eps_hat.at(i, j)) /
                             sa_t;
            double z = sa_p * g + dir * eps_hat.at(i, j) + sc_p * h.at(i, j);
            if (sigma_t > 0.0) z += sigma_t * rng->normal();
            out.at(i, j) = z;
        }
    }
    return out;
}

DiffusionLossParts diffusion_loss(Tape& tape, DenoiserNet& denoiser, Var z0,
                                  Var h, const Schedule& sch, double dropout_p,
                                  bool training, Rng& rng) {
    const std::size_t n = tape.val(z0).rows();
    DiffusionLossParts parts;
    parts.h = h;
    parts.t.resize(n);
    for (auto& t : parts.t)
        t = static_cast<int32_t>(rng.uniform_int(1, sch.steps));

    std::vector<double> sa(n), sc(n), se(n);
    for (std::size_t i = 0; i < n; ++i) {
        sa[i] = std::sqrt(sch.alpha[parts.t[i]]);
        sc[i] = std::sqrt(sch.c[parts.t[i]]);
        se[i] = std::sqrt(1.0 - sch.alpha[parts.t[i]]);
    }
    parts.eps = Tensor(tape.val(z0).shape);
    rng.fill_normal(parts.eps.v);

    Var h_drop = tape.dropout(h, dropout_p, training, rng);
    Var noise = tape.row_scale(tape.constant(parts.eps), se);
    parts.z_t = tape.add(tape.add(tape.row_scale(z0, sa),
                                  tape.row_scale(h_drop, sc)),
                         noise);
    parts.eps_hat = denoiser.forward(tape, parts.z_t, parts.t, dropout_p,
                                     training, rng);
    parts.loss = tape.mse_rows(parts.eps_hat, parts.eps);
    return parts;
}

// ---- CsdmModel ----

CsdmModel::CsdmModel(const FeatureSchema& schema, int32_t emb_dim,
                     const DiffusionConfig& cfg, const Schedule& sch,
                     uint64_t seed)
    : config_(cfg),
      schedule_(sch),
      encoder_(schema, emb_dim, cfg.hidden_dim, seed),
      denoiser_(cfg.hidden_dim, cfg.denoiser_hidden, seed) {
    if (cfg.sub_step < 1 || cfg.sub_step > sch.steps)
        throw ValidationError("diffusion config: s must be in 1..T");
    if (cfg.sigma < 0.0)
        throw ValidationError("diffusion config: sigma must be >= 0");
}

std::vector<Parameter*> CsdmModel::params() {
    auto out = encoder_.params();
    for (Parameter* p : denoiser_.params()) out.push_back(p);
    return out;
}

std::vector<Parameter*> CsdmModel::all_params() {
    auto out = encoder_.all_params();
    for (Parameter* p : denoiser_.params()) out.push_back(p);
    return out;
}

CsdmModel::StepLosses CsdmModel::combined_step(BackboneModel& backbone,
                                               const Dataset& data,
                                               const Batch& batch,
                                               std::span<const double> gate,
                                               const AdamConfig& adam,
                                               Rng& rng) {
    if (!backbone.frozen())
        throw ContractError("combined_step: backbone must be frozen");
    if (gate.size() != batch.n)
        throw DimensionError("combined_step: one gate value per instance");

    Tape tape;
    // Cold embeddings come from the frozen table; gradients do not flow back.
    Var e_cold = tape.gather_rows(backbone.item_embedding(), batch.item_idx,
                                  /*train=*/false);
    Var z0 = encoder_.project_z0(tape, e_cold);
    Var h = encoder_.encode(tape, data.items, batch.item_idx);

    auto parts = diffusion_loss(tape, denoiser_, z0, h, schedule_,
                                config_.dropout_p, /*training=*/true, rng);

    // One-step denoised prediction at the sampled t, using the clean h.
    const std::size_t n = batch.n;
    std::vector<double> inv_sa(n), sc(n), se(n);
    for (std::size_t i = 0; i < n; ++i) {
        inv_sa[i] = 1.0 / std::sqrt(schedule_.alpha[parts.t[i]]);
        sc[i] = std::sqrt(schedule_.c[parts.t[i]]);
        se[i] = std::sqrt(1.0 - schedule_.alpha[parts.t[i]]);
    }
    Var z0_hat = tape.row_scale(
        tape.sub(tape.sub(parts.z_t, tape.row_scale(h, sc)),
                 tape.row_scale(parts.eps_hat, se)),
        inv_sa);

    // Frequency-gated warm embedding scored by the frozen backbone.
    Var w_gen = encoder_.output_head(tape, z0_hat);
    std::vector<double> g1(gate.begin(), gate.end()), g0(n);
    for (std::size_t i = 0; i < n; ++i) g0[i] = 1.0 - g1[i];
    Var w = tape.add(tape.row_scale(e_cold, g1), tape.row_scale(w_gen, g0));

    Var logit = backbone.logit(tape, batch, w);
    Var l_ctr = tape.bce_with_logits(logit, batch.labels);
    Var total = tape.add(l_ctr, tape.scale(parts.loss, config_.rho));

    StepLosses out{tape.val(total).v[0], tape.val(l_ctr).v[0],
                   tape.val(parts.loss).v[0]};
    tape.backward(total);
    auto ps = params();
    adam_step(ps, adam);
    return out;
}

Tensor CsdmModel::generate(const ItemSideInfo& items,
                           std::span<const int32_t> item_ids,
                           const Tensor& cold_rows) const {
    const Tensor h = encoder_.encode_plain(items, item_ids);
    const Tensor z0p = encoder_.project_z0_plain(cold_rows);
    const std::size_t n = h.rows(), m = h.cols();

    // Start state: the forward-process mean at T with eps = 0
    // (deterministic generation).
    const double sa_t = std::sqrt(schedule_.alpha[schedule_.steps]);
    const double sc_t = std::sqrt(schedule_.c[schedule_.steps]);
    Tensor z({n, m});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j)
            z.at(i, j) = sa_t * z0p.at(i, j) + sc_t * h.at(i, j);

    const auto steps = subsequence(schedule_.steps, config_.sub_step);
    for (std::size_t k = 0; k + 1 < steps.size(); ++k)
        z = reverse_step(denoiser_, z, steps[k], steps[k + 1], h, schedule_,
                         /*sigma_t=*/0.0, nullptr);
    return z;
}

Tensor CsdmModel::warm_embeddings(const ItemSideInfo& items,
                                  std::span<const int32_t> item_ids,
                                  const Tensor& cold_rows,
                                  std::span<const double> gate) const {
    const Tensor z0_hat = generate(items, item_ids, cold_rows);
    Tensor w = encoder_.output_head_plain(z0_hat);
    const std::size_t n = w.rows(), d = w.cols();
    if (gate.size() != n)
        throw DimensionError("warm_embeddings: one gate value per item");
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j)
            w.at(i, j) = gate[i] * cold_rows.at(i, j) + (1.0 - gate[i]) * w.at(i, j);
    return w;
}

void CsdmModel::save(const std::string& path) const {
    nlohmann::json manifest;
    manifest["type"] = "diffusion";
    manifest["T"] = schedule_.steps;
    manifest["beta"] = schedule_.beta;
    manifest["rho"] = config_.rho;
    manifest["s"] = config_.sub_step;
    manifest["sigma"] = config_.sigma;
    manifest["dropout_p"] = config_.dropout_p;
    manifest["hidden_dim"] = config_.hidden_dim;
    manifest["denoiser_hidden"] = config_.denoiser_hidden;
    auto ps = const_cast<CsdmModel*>(this)->all_params();
    save_checkpoint(path, std::move(manifest), ps);
}

}  // namespace csdm
