#pragma once

#include <string>
#include <vector>

#include "ihmm/data.hpp"
#include "ihmm/emissions.hpp"
#include "ihmm/sampler.hpp"

namespace ihmm {

enum class BaselineKind { Pooled, Stratified, Dpmm };

// Sorted distinct microenvironment labels; the state indices used by
// fit_stratified refer into this order.
std::vector<std::string> strata_labels(const Dataset& ds);

// Single multivariate normal over the whole dataset: the one-state special
// case of the truncated chain, so missing cells are augmented each sweep and
// the imputation draws follow the usual recording cadence.
PosteriorDraws fit_pooled(const Dataset& ds, const McmcConfig& cfg, const NiwHyper& prior);

// Independent pooled fits per microenvironment label; each non-observed cell
// is drawn from its label's posterior predictive.  Recorded states are the
// label indices.
PosteriorDraws fit_stratified(const Dataset& ds, const McmcConfig& cfg, const NiwHyper& prior);

// Mixture without temporal dependency: the chain with one shared stick row
// and the covariates stripped, so every time point picks its state afresh.
PosteriorDraws fit_dpmm(const Dataset& ds, const McmcConfig& cfg, const NiwHyper& prior);

PosteriorDraws fit_baseline(BaselineKind kind, const Dataset& ds, const McmcConfig& cfg,
                            const NiwHyper& prior);

}  // namespace ihmm
