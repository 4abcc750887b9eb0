#pragma once

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mtsvm/data.hpp"
#include "mtsvm/risk.hpp"
#include "mtsvm/solver.hpp"

namespace mtsvm {

enum class StudyKind { Convergence, Interaction, Frequency, Equivalence };

std::string study_name(StudyKind kind);
StudyKind study_from_name(const std::string& name);  // lists valid names on error

struct StudyThresholds {
    double final_excess = 0.02;        // largest-N median excess_u bound
    double inversion_tol = 0.005;      // allowed size of the single median inversion
    double min_agreement = 0.95;       // per-task Bayes agreement at the largest N
    double final_disagreement = 0.02;  // largest-N median MTL-vs-single disagreement
    double dev_slope_lo = -0.65;       // window for the frequency-deviation slope
    double dev_slope_hi = -0.35;
    double freq_slope_max = -1.0;      // fitted |frequency error| slope bound
    double envelope_factor = 10.0;     // slack for the extrapolated envelope check
    double objective_gap_tol = 1e-6;   // relative gap between the two primal forms
    double identity_tol = 1e-8;        // shared-component identity residual
};

struct StudyConfig {
    SamplingSpec spec;
    std::vector<long> n_grid;
    std::vector<std::uint64_t> seeds;
    Regularization reg;
    GaussianKernel kernel;
    long n_mc = 200000;
    TrainOptions train;
    StudyThresholds thresholds;
    int jobs = 1;  // worker pool bound; not part of the config hash

    // Enough to run any study: nonempty strictly increasing grid, >= 1 seed.
    void validate() const;
    // The full config contract enforced at the CLI boundary: >= 3 grid
    // points, >= 10 seeds for the scaling studies, >= 50 for frequency.
    void validate_strict(StudyKind kind) const;
};

struct StudyRecord {
    long n = 0;
    std::uint64_t seed = 0;
    bool converged = true;
    std::optional<double> excess_u;
    std::optional<double> excess_e;
    std::optional<double> stderr_u;
    std::optional<double> stderr_e;
    std::optional<double> freq_dev;       // max_t |p(t) - m_t/N|
    std::optional<double> freq_error;
    std::optional<double> objective_gap;  // relative gap between primal forms
    std::optional<double> shared_resid;   // shared-component identity residual
    std::optional<double> kkt;
    std::optional<double> disagree;       // p-weighted MTL-vs-single disagreement
    std::optional<double> excess_u_single;
    std::optional<double> norm_bound_slack;   // min_t (N/sqrt(rho1 m_t) - |f_t|)
    std::optional<double> hinge_bound_slack;  // min_t (N - per-task hinge sum)
    std::vector<double> task_excess;          // per-task R_t - R_t*
    std::vector<double> task_agreement;       // per-task Bayes agreement (1-D grids)
    std::vector<double> task_disagree;        // per-task MTL-vs-single disagreement
};

struct StudyAssertion {
    std::string name;
    bool pass = false;
    std::string detail;
};

struct StudyReport {
    std::string study;
    std::string config_hash;
    std::vector<StudyRecord> records;                      // (N, seed) order
    std::vector<std::pair<std::string, std::string>> summary;  // ordered key/value
    std::vector<StudyAssertion> assertions;

    bool passed() const;
};

// FNV-1a hash of the canonical config serialization (study name included).
std::string config_hash(const StudyConfig& cfg, StudyKind kind);

// Per (N, seed): sample, train, estimate excess risks; asserts the median
// excess_u decreases across the grid (at most one inversion bounded by
// inversion_tol), the largest-N median is below final_excess, the bridge
// inequality holds in every record, and (1-D generators) per-task Bayes
// agreement on a 1001-point grid beats min_agreement at the largest N.
StudyReport convergence_study(const StudyConfig& cfg);

// Trains the joint model and per-task independent baselines (coupling
// removed: each task alone, same effective per-task penalty) and measures
// the sign-disagreement rate; asserts it decreases across the grid and both
// variants' excess risks end below their thresholds.
StudyReport interaction_study(const StudyConfig& cfg);

// Records max_t |p(t) - m_t/N| and the evaluated frequency error per
// (N, seed); fits log-log slopes; asserts the deviation slope lies in the
// configured window and the |frequency error| trend is at least as steep as
// freq_slope_max. Requires >= 50 seeds.
StudyReport frequency_study(const StudyConfig& cfg);

// Per trained model: relative gap between the two primal forms, the
// shared-component identity residual, slack of the norm and hinge-sum
// bounds, and the KKT residual; asserts all of them.
StudyReport equivalence_study(const StudyConfig& cfg);

StudyReport run_study(StudyKind kind, const StudyConfig& cfg);

enum class ReportFormat { Csv, Text };

// Deterministic serialization; identical config + seeds reproduce the file
// byte for byte.
void emit_report(const StudyReport& report, const std::string& path, ReportFormat format);

}  // namespace mtsvm
