#pragma once

#include <span>
#include <string>
#include <vector>

#include "csdm/backbone.hpp"
#include "csdm/data.hpp"
#include "csdm/rng.hpp"
#include "csdm/tape.hpp"

namespace csdm {

// Noise/condition mixing schedule: alpha_t = (1-beta)^t decreasing,
// c_t = (sum_{k<=t} alpha_k^{-1/2}) / (sum_{k<=T} alpha_k^{-1/2}) increasing
// with c_T = 1 exactly. Index 0 is the boundary convention alpha_0 = 1,
// c_0 = 0.
struct Schedule {
    int32_t steps = 0;  // T
    double beta = 0.0;
    std::vector<double> alpha;  // size T+1
    std::vector<double> c;      // size T+1

    static Schedule build(int32_t t_steps, double beta);
};

struct PosteriorCoeffs {
    double kappa, lambda, nu;
};

// kappa_t, lambda_t, nu_t of the posterior mean for step t (2 <= t <= T).
PosteriorCoeffs posterior_coeffs(const Schedule& sch, int32_t t, double sigma_t);

// Descending [T, T-s, ..., smallest positive, 0].
std::vector<int32_t> subsequence(int32_t t_steps, int32_t s);

struct DiffusionConfig {
    double rho = 0.1;          // weight of the noise-regression loss
    int32_t sub_step = 5;      // s
    double sigma = 0.0;        // per-step sigma (0 = deterministic reverse)
    double dropout_p = 0.5;
    int32_t hidden_dim = 16;   // dimension of z and h
    int32_t denoiser_hidden = 64;
};

// The noise predictor: two affine layers with a rectifier between, input is
// z_t concatenated with the sinusoidal encoding of t.
class DenoiserNet {
  public:
    DenoiserNet(int32_t hidden_dim, int32_t mlp_hidden, uint64_t seed);

    Var forward(Tape& tape, Var z_t, std::span<const int32_t> t,
                double dropout_p, bool training, Rng& rng);
    Tensor forward_plain(const Tensor& z_t, std::span<const int32_t> t) const;

    std::vector<Parameter*> params();
    int32_t hidden_dim() const { return hidden_dim_; }
    void zero_all();  // test hook: an untrained all-zero denoiser

  private:
    int32_t hidden_dim_;
    Parameter w1_, b1_, w2_, b2_;
};

// Embedding map over the side-information fields plus the three projections
// around the diffusion space: side->h, embedding->z0, hidden->embedding.
class SideEncoder {
  public:
    SideEncoder(const FeatureSchema& schema, int32_t emb_dim,
                int32_t hidden_dim, uint64_t seed);

    Var encode(Tape& tape, const ItemSideInfo& items,
               std::span<const int32_t> item_ids, bool train = true);
    Tensor encode_plain(const ItemSideInfo& items,
                        std::span<const int32_t> item_ids) const;

    Var project_z0(Tape& tape, Var cold_rows, bool train = true);
    Tensor project_z0_plain(const Tensor& cold_rows) const;

    Var output_head(Tape& tape, Var z0_hat, bool train = true);
    Tensor output_head_plain(const Tensor& z0_hat) const;

    // Trainable parameters; all_params is the full set for checkpointing
    // (currently identical — every layer of the encoder trains).
    std::vector<Parameter*> params();
    std::vector<Parameter*> all_params();

  private:
    std::vector<Parameter> side_emb_;
    std::vector<int> side_fields_;  // schema positions
    std::vector<int> side_slots_;   // positions inside ItemSideInfo
    bool side_multi_ = false;       // any multi-hot side field
    std::vector<bool> multi_;
    Parameter proj_w_, proj_b_;  // side mean-pool -> hidden
    Parameter in_w_, in_b_;      // embedding space -> hidden (z0 encoder)
    Parameter out_w_, out_b_;    // hidden -> embedding space
};

// z_t = sqrt(alpha_t) z0 + sqrt(c_t) drop(h) + sqrt(1-alpha_t) eps, batched
// over rows; t has one entry per row. Returns z_t and the noise used.
struct ForwardSampleResult {
    Tensor z_t;
    Tensor eps;
};
ForwardSampleResult forward_sample(const Tensor& z0, const Tensor& h,
                                   std::span<const int32_t> t,
                                   const Schedule& sch, bool training,
                                   double dropout_p, Rng& rng);

// g = (z_t - sqrt(c_t) h - sqrt(1-alpha_t) eps_hat) / sqrt(alpha_t)
Tensor predict_z0(const DenoiserNet& denoiser, const Tensor& z_t,
                  std::span<const int32_t> t, const Tensor& h,
                  const Schedule& sch);

// One reverse transition t -> t_prev (t_prev = 0 returns g directly).
Tensor reverse_step(const DenoiserNet& denoiser, const Tensor& z_t, int32_t t,
                    int32_t t_prev, const Tensor& h, const Schedule& sch,
                    double sigma_t, Rng* rng);

// Simplified noise-regression objective on the tape; t is sampled per row.
// Outputs the sampled steps/noise/z_t for callers that reuse them.
struct DiffusionLossParts {
    Var loss;
    Var z_t;
    Var eps_hat;
    Var h;  // pre-dropout hidden state
    std::vector<int32_t> t;
    Tensor eps;
};
DiffusionLossParts diffusion_loss(Tape& tape, DenoiserNet& denoiser, Var z0,
                                  Var h, const Schedule& sch, double dropout_p,
                                  bool training, Rng& rng);

// The trainable diffusion stack (denoiser + side encoder) plus its schedule
// and hyper-parameters.
class CsdmModel {
  public:
    CsdmModel(const FeatureSchema& schema, int32_t emb_dim,
              const DiffusionConfig& cfg, const Schedule& sch, uint64_t seed);

    struct StepLosses {
        double total, ctr, diff;
    };

    // One combined L = L_ctr + rho * L_diff update of the diffusion-side
    // parameters. gate[i] = gamma(n_i) blends the cold embedding with the
    // generated one before the frozen backbone scores the batch.
    StepLosses combined_step(BackboneModel& backbone, const Dataset& data,
                             const Batch& batch, std::span<const double> gate,
                             const AdamConfig& adam, Rng& rng);

    // Deterministic generation (sigma = 0) along the sub-sequence; returns
    // z0_hat rows for the given items.
    Tensor generate(const ItemSideInfo& items, std::span<const int32_t> item_ids,
                    const Tensor& cold_rows) const;

    // Frequency-gated warmed-up embedding rows.
    Tensor warm_embeddings(const ItemSideInfo& items,
                           std::span<const int32_t> item_ids,
                           const Tensor& cold_rows,
                           std::span<const double> gate) const;

    std::vector<Parameter*> params();
    std::vector<Parameter*> all_params();
    const Schedule& schedule() const { return schedule_; }
    const DiffusionConfig& config() const { return config_; }
    DenoiserNet& denoiser() { return denoiser_; }
    SideEncoder& encoder() { return encoder_; }

    void save(const std::string& path) const;

  private:
    DiffusionConfig config_;
    Schedule schedule_;
    SideEncoder encoder_;
    DenoiserNet denoiser_;
};

}  // namespace csdm
