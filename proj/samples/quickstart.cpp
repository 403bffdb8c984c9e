// Fit one mixed-kernel trace-norm model on synthetic data and score a held-out fold.

#include <cstdio>

#include "spectral_cf/spectral_cf.hpp"

int main() {
  using namespace scf;
  const SynthData s = synth_generate({});
  const auto folds = kfold_split(s.data.ratings, 5, 0);
  const RatingsDataset train = s.data.ratings.subset(folds[0].train);
  const RatingsDataset test = s.data.ratings.subset(folds[0].test);

  KernelSpec us{Side::user, 0.5}, os{Side::object, 0.5};
  const FactorPtr x = share(factor_gram(side_gram(us, &s.data.users, train.n_users())));
  const FactorPtr y = share(factor_gram(side_gram(os, &s.data.objects, train.n_objects())));

  SolveConfig cfg;
  cfg.lambda = 0.01 * lambda_max(train, {{x, y}});
  cfg.penalty = PenaltySpec::smooth_trace(1e-3);
  const SolveResult r = solve_lowrank(train, x, y, cfg);

  std::printf("objective %.6f  rank %d  iterations %d\n", r.report.objective, r.report.final_rank,
              r.report.stage_iterations.empty() ? 0 : r.report.stage_iterations.back());
  if (r.report.duality_gap) std::printf("duality gap %.3e\n", *r.report.duality_gap);
  std::printf("test RMSE %.4f  (predicting the mean: %.4f)\n", rmse(predict_all(r.model, test), test.ratings()),
              rmse(Vector::Constant(Eigen::Index(test.size()), train.mean_rating()), test.ratings()));
  save_model(r.model, "quickstart.scfm");
  std::printf("model written to quickstart.scfm\n");
}
