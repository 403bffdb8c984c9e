#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "spectral_cf/kernels.hpp"
#include "spectral_cf/model.hpp"
#include "spectral_cf/model_io.hpp"

using namespace scf;

namespace {

Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = n(rng);
  return m;
}

RatingsDataset all_pairs(int nx, int ny) {
  std::vector<Observation> obs;
  for (int a = 0; a < nx; ++a)
    for (int b = 0; b < ny; ++b) obs.push_back({a, b, 0.0});
  return RatingsDataset(obs, nx, ny);
}

}  // namespace

TEST(RatingsDataset, Validation) {
  EXPECT_THROW(RatingsDataset({}, 2, 2), EmptyInputError);
  EXPECT_THROW(RatingsDataset({{2, 0, 1.0}}, 2, 2), ValidationError);
  EXPECT_THROW(RatingsDataset({{0, -1, 1.0}}, 2, 2), ValidationError);
  EXPECT_THROW(RatingsDataset({{0, 0, std::nan("")}}, 2, 2), ValidationError);
}

TEST(RatingsDataset, SubsetAndShift) {
  const RatingsDataset d({{0, 0, 1.0}, {1, 1, 3.0}, {0, 1, 5.0}}, 2, 2);
  const std::vector<std::size_t> idx{2, 0};
  const RatingsDataset s = d.subset(idx);
  ASSERT_EQ(s.size(), 2u);
  EXPECT_EQ(s[0].rating, 5.0);
  EXPECT_EQ(s.n_users(), 2);
  EXPECT_EQ(d.shifted(3.0).ratings(), Vector::LinSpaced(3, -2.0, 2.0));
}

TEST(PredictPair, PicksAlphaEntry) {
  Matrix alpha(2, 2);
  alpha << 1, 2, 3, 4;
  const OperatorModel m(share(GramFactor::identity(2)), share(GramFactor::identity(2)), alpha);
  EXPECT_EQ(predict_pair(m, 0, 1), 2.0);
  EXPECT_EQ(predict_pair(m, 1, 0), 3.0);
  EXPECT_THROW(predict_pair(m, 2, 0), DimensionError);
}

TEST(PredictPair, ZeroAlpha) {
  std::mt19937_64 rng(1);
  const OperatorModel m(share(GramFactor(random_matrix(4, 3, rng))), share(GramFactor(random_matrix(5, 3, rng))),
                        Matrix::Zero(3, 3));
  for (int a = 0; a < 4; ++a)
    for (int b = 0; b < 5; ++b) EXPECT_EQ(predict_pair(m, a, b), 0.0);
}

TEST(PredictPair, MatchesDenseTripleProduct) {
  std::mt19937_64 rng(2);
  const Matrix x = random_matrix(4, 3, rng), y = random_matrix(5, 3, rng), alpha = random_matrix(3, 3, rng);
  const OperatorModel m(share(GramFactor(x)), share(GramFactor(y)), alpha);
  const Matrix dense = x * alpha * y.transpose();
  for (int a = 0; a < 4; ++a)
    for (int b = 0; b < 5; ++b) EXPECT_NEAR(predict_pair(m, a, b), dense(a, b), 1e-10);
}

TEST(PredictAll, SingleAndDuplicateObservations) {
  std::mt19937_64 rng(3);
  const OperatorModel m(share(GramFactor(random_matrix(4, 2, rng))), share(GramFactor(random_matrix(3, 2, rng))),
                        random_matrix(2, 2, rng), 0.7);
  const RatingsDataset one({{2, 1, 0.0}}, 4, 3);
  EXPECT_DOUBLE_EQ(predict_all(m, one)(0), predict_pair(m, 2, 1));
  const RatingsDataset dup({{3, 0, 1.0}, {3, 0, 2.0}}, 4, 3);
  const Vector p = predict_all(m, dup);
  EXPECT_EQ(p(0), p(1));
}

TEST(PredictAll, EqualsDiagKGammaG) {
  std::mt19937_64 rng(4);
  const GramMatrix k = linear_gram(AttributeMatrix(random_matrix(6, 4, rng)));
  const GramMatrix g = combine(linear_gram(AttributeMatrix(random_matrix(5, 2, rng))), dirac_gram(5), 0.5);
  const FactorPtr xf = share(factor_gram(k)), yf = share(factor_gram(g));
  const Matrix gamma = random_matrix(6, 5, rng);
  const Matrix alpha = xf->matrix().transpose() * gamma * yf->matrix();
  const OperatorModel m(xf, yf, alpha);
  const Matrix full = k.entries() * gamma * g.entries();
  const RatingsDataset d = all_pairs(6, 5);
  const Vector p = predict_all(m, d);
  for (std::size_t i = 0; i < d.size(); ++i) EXPECT_NEAR(p(Eigen::Index(i)), full(d[i].user, d[i].object), 1e-8);
}

TEST(PredictAll, FactoredEqualsDense) {
  std::mt19937_64 rng(5);
  const FactorPtr xf = share(GramFactor(random_matrix(6, 4, rng))), yf = share(GramFactor(random_matrix(5, 3, rng)));
  const Matrix u = random_matrix(4, 2, rng), v = random_matrix(3, 2, rng);
  const OperatorModel fact(xf, yf, u, v, 1.5), dense(xf, yf, Matrix(u * v.transpose()), 1.5);
  const RatingsDataset d = all_pairs(6, 5);
  EXPECT_EQ(predict_all(fact, d), predict_all(dense, d));
}

TEST(PredictAll, ZeroSingularValuesDoNotMatter) {
  // appending zero-weight rank-one terms keeps the operator and its predictions
  std::mt19937_64 rng(6);
  const FactorPtr xf = share(GramFactor(random_matrix(5, 4, rng))), yf = share(GramFactor(random_matrix(5, 4, rng)));
  const Matrix u = random_matrix(4, 2, rng), v = random_matrix(4, 2, rng);
  Matrix u3(4, 3), v3(4, 3);
  u3 << u, Matrix::Zero(4, 1);
  v3 << v, random_matrix(4, 1, rng);
  const RatingsDataset d = all_pairs(5, 5);
  EXPECT_TRUE(predict_all(OperatorModel(xf, yf, u, v, 0.0), d).isApprox(predict_all(OperatorModel(xf, yf, u3, v3, 0.0), d), 1e-14));
}

TEST(OperatorModel, DimensionChecks) {
  const FactorPtr x = share(GramFactor::identity(3)), y = share(GramFactor::identity(2));
  EXPECT_THROW(OperatorModel(x, y, Matrix::Zero(2, 2)), DimensionError);
  EXPECT_THROW(OperatorModel(x, y, Matrix::Zero(3, 3), Matrix::Zero(2, 3), 0.0), DimensionError);
  const OperatorModel m(x, y, Matrix::Zero(3, 2));
  EXPECT_THROW(predict_all(m, RatingsDataset({{3, 0, 0.0}}, 4, 2)), DimensionError);
}

TEST(EmbedNew, TrainingRowsAndZero) {
  std::mt19937_64 rng(7);
  const GramMatrix k = combine(linear_gram(AttributeMatrix(random_matrix(6, 2, rng))), dirac_gram(6), 0.3);
  const GramFactor f = factor_gram(k);
  for (int j = 0; j < 6; ++j)
    EXPECT_LT((embed_new(f, k.entries().row(j).transpose()) - f.matrix().row(j).transpose()).norm(), 1e-8);
  EXPECT_EQ(embed_new(f, Vector::Zero(6)).norm(), 0.0);
  EXPECT_THROW(embed_new(f, Vector::Zero(5)), DimensionError);
}

TEST(EmbedNew, ResidualIsOrthogonal) {
  std::mt19937_64 rng(8);
  const GramFactor f = factor_gram(linear_gram(AttributeMatrix(random_matrix(7, 3, rng))));
  const Vector k = random_matrix(7, 1, rng);
  const Vector c = embed_new(f, k);
  EXPECT_LT((f.matrix().transpose() * (f.matrix() * c - k)).norm(), 1e-8);
}

TEST(PredictNew, TrainingRowsMatchPredictPair) {
  std::mt19937_64 rng(9);
  const GramMatrix k = combine(linear_gram(AttributeMatrix(random_matrix(5, 2, rng))), dirac_gram(5), 0.5);
  const GramMatrix g = rbf_gram(AttributeMatrix(random_matrix(4, 2, rng)), 1.0);
  const FactorPtr xf = share(factor_gram(k)), yf = share(factor_gram(g));
  const OperatorModel m(xf, yf, random_matrix(xf->m(), yf->m(), rng), 0.25);
  for (int a = 0; a < 5; ++a)
    for (int b = 0; b < 4; ++b)
      EXPECT_NEAR(predict_new(m, k.entries().row(a).transpose(), g.entries().row(b).transpose()), predict_pair(m, a, b),
                  1e-8);
}

TEST(PredictNew, ColdDiracUserScoresZero) {
  const OperatorModel m(share(GramFactor::identity(3)), share(GramFactor::identity(2)), Matrix::Ones(3, 2));
  EXPECT_EQ(predict_new(m, Vector::Zero(3), Vector::Unit(2, 1)), 0.0);
}

TEST(PredictNew, ColdUserWithAttributesMatchesDenseOperator) {
  // combined user kernel: eta * <a, a'> + (1 - eta) * delta. A cold user has
  // no Dirac part, so its score is eta * a_new^T A^T gamma G(:, b) with alpha = X^T gamma Y.
  std::mt19937_64 rng(10);
  const double eta = 0.6;
  const Matrix attrs = random_matrix(6, 2, rng);
  const GramMatrix k = combine(linear_gram(AttributeMatrix(attrs)), dirac_gram(6), eta);
  const FactorPtr xf = share(factor_gram(k)), yf = share(GramFactor::identity(3));
  const Matrix gamma = random_matrix(6, 3, rng);
  const OperatorModel m(xf, yf, Matrix(xf->matrix().transpose() * gamma));
  const Vector fresh = random_matrix(2, 1, rng);
  const KernelSpec spec{Side::user, eta, AttributeKernel::linear, 1.0, 0.0, false};
  const AttributeMatrix am(attrs);
  const Vector kx = side_kernel_vector(spec, &am, 6, &fresh);
  for (int b = 0; b < 3; ++b) {
    const double dense = kx.dot(gamma.col(b));
    EXPECT_NEAR(predict_new(m, kx, Vector::Unit(3, b)), dense, 1e-8);
  }
}

TEST(ModelIo, RoundTrip) {
  std::mt19937_64 rng(11);
  OperatorModel m(share(GramFactor(random_matrix(4, 3, rng))), share(GramFactor::identity(5)), random_matrix(3, 5, rng),
                  3.25);
  m.user_kernel = KernelSpec{Side::user, 0.25, AttributeKernel::rbf, 0.5, 0.1, false};
  const auto path = (std::filesystem::temp_directory_path() / "scf_model_roundtrip.bin").string();
  save_model(m, path);
  const OperatorModel r = load_model(path);
  std::filesystem::remove(path);
  EXPECT_EQ(r.alpha(), m.alpha());
  EXPECT_EQ(r.xfactor().matrix(), m.xfactor().matrix());
  EXPECT_TRUE(r.yfactor().is_identity());
  EXPECT_EQ(r.mean(), 3.25);
  ASSERT_TRUE(r.user_kernel.has_value());
  EXPECT_EQ(r.user_kernel->family, AttributeKernel::rbf);
  EXPECT_EQ(r.user_kernel->offset, 0.1);
  EXPECT_FALSE(r.object_kernel.has_value());
  const RatingsDataset d = all_pairs(4, 5);
  EXPECT_EQ(predict_all(r, d), predict_all(m, d));
}

TEST(ModelIo, RejectsGarbage) {
  const auto path = (std::filesystem::temp_directory_path() / "scf_model_garbage.bin").string();
  {
    std::ofstream os(path, std::ios::binary);
    os << "not a model";
  }
  EXPECT_THROW(load_model(path), IoError);
  std::filesystem::remove(path);
  EXPECT_THROW(load_model(path), IoError);
}
