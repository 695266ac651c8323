#pragma once

#include "fedsim/fedreg.hpp"
#include "fedsim/grad_core.hpp"

#include <cstdint>
#include <optional>
#include <random>
#include <string>

namespace fedsim {

// DPSGD noise mechanism: clip to norm C, then add N(0, (sigma*C)^2) noise
// per coordinate. Privacy accounting is out of scope, only the mechanism.
struct DpConfig {
    double clip_bound = 1.0;  // C > 0
    double noise_scale = 0.0; // sigma >= 0
    void validate() const;
};

ParamVector clip_and_noise(const ParamVector& g, const DpConfig& dp, std::mt19937_64& rng);

// Anisotropic discrete total variation of an H x W image.
double total_variation(const Matrix& x);

enum class AttackDefense { plain, dpsgd, fedreg_mg };
AttackDefense attack_defense_from_string(const std::string& s);
std::string to_string(AttackDefense d);

enum class AttackDistance { l2, cosine };
AttackDistance attack_distance_from_string(const std::string& s);
std::string to_string(AttackDistance d);

enum class LrDecay { staged, constant };
LrDecay lr_decay_from_string(const std::string& s);
std::string to_string(LrDecay d);

struct AttackConfig {
    int iterations = 2000; // paper-scale runs use 32000
    AttackDistance distance = AttackDistance::l2;
    double tv_weight = 1e-8;
    double step_size = 1.0;
    // staged: x0.1 at 3/8, 5/8 and 7/8 of the iteration budget
    LrDecay decay = LrDecay::staged;
    std::uint64_t seed = 0;
    void validate() const;
};

// One-step parameter change for the defense under attack. eta is the local
// learning rate; the example is a single (input, one-hot target) pair.
// - plain: -eta * g (FedAvg/FedProx/FedCurv/SGD coincide at one step)
// - dpsgd: -eta * clip_and_noise(g)
// - fedreg_mg: -eta * mg(g, g'), g' the gradient on the uniform-labeled
//   pseudo example; orthogonality of the update to g' is asserted.
struct SimulatedUpdateConfig {
    double eta = 0.1;
    AttackDefense defense = AttackDefense::plain;
    std::optional<DpConfig> dp;       // required for dpsgd
    FedRegConfig fedreg;              // eta_s / steps for fedreg_mg
    std::uint64_t noise_seed = 0;     // dpsgd noise stream
};
ParamVector simulated_update(const ModelSpec& spec, const ParamVector& params,
                             const Batch& example, const SimulatedUpdateConfig& cfg);

// Distance(update_true, update_candidate) + tv_weight * TV(x_candidate).
// Cosine distance of a zero-norm candidate update is defined as 1.
double attack_objective(const ParamVector& update_true, const ParamVector& update_candidate,
                        const Matrix& candidate_image, const AttackConfig& cfg);

struct ReconResult {
    Matrix input;           // best candidate, image-shaped (rows x cols)
    int label = -1;         // recovered by class enumeration
    double objective = 0.0; // best objective seen
    double psnr_db = 0.0;   // vs ground truth, when scored by the caller
    // best-so-far objective per iteration of the winning label's run;
    // non-increasing by construction
    std::vector<double> best_objective_trace;
};

// Gradient-inversion attack: Adam over a seeded uniform-noise candidate input,
// minimizing attack_objective against a plain one-step update model; the label
// is recovered by enumerating all classes and keeping the best objective. The
// objective gradient is estimated by central differences. Non-finite
// objectives trigger a reseeded restart, at most 3 times.
ReconResult invert_gradient(const ModelSpec& spec, const ParamVector& params,
                            const ParamVector& update_true, double eta, int image_rows,
                            int image_cols, const AttackConfig& cfg);

// 10*log10(max^2/MSE) in dB; zero MSE reports the +inf sentinel (callers cap
// at 99 dB in CSV output).
double psnr(const Matrix& x, const Matrix& x_ref, double max_value = 1.0);

// P5 greyscale image grid: ground truth and reconstruction side by side.
void write_pgm_pair(const std::string& path, const Matrix& truth, const Matrix& recon);

} // namespace fedsim
