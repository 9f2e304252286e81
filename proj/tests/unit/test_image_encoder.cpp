// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "fixtures.hpp"
#include "image_encoder.hpp"
#include "oracles.hpp"

using namespace polysearch;

namespace {

Matrix row_matrix(const std::vector<double>& v) {
  Matrix m(1, static_cast<Eigen::Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) m(0, static_cast<Eigen::Index>(i)) = v[i];
  return m;
}

std::vector<oracle::Vec> rows_of(const Matrix& m) {
  std::vector<oracle::Vec> out;
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    oracle::Vec row;
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    out.push_back(row);
  }
  return out;
}

}  // namespace

TEST_CASE("weldon pooling on a hand-checked row") {
  const Vector s = weldon_pool(row_matrix({5, 3, 1, -2, -4}), 2, 2);
  CHECK(s[0] == 1.0);  // (5+3)/2 + (-4-2)/2
  WeldonSelection sel;
  weldon_pool(row_matrix({5, 3, 1, -2, -4}), 2, 2, &sel);
  CHECK(sel.top[0] == std::vector<Eigen::Index>{0, 1});
  CHECK(sel.bottom[0] == std::vector<Eigen::Index>{4, 3});
}

TEST_CASE("weldon pooling on constant and full-width inputs") {
  CHECK(weldon_pool(Matrix::Constant(3, 16, 0.75), 2, 3) == Vector::Constant(3, 1.5));
  std::mt19937_64 rng(1);
  const Matrix m = Matrix::NullaryExpr(4, 9, [&] { return std::normal_distribution<double>()(rng); });
  const Vector s = weldon_pool(m, 9, 9);
  for (Eigen::Index c = 0; c < 4; ++c) CHECK(s[c] == doctest::Approx(2.0 * m.row(c).mean()).epsilon(1e-12));
}

TEST_CASE("weldon ties go to the lowest index") {
  WeldonSelection sel;
  weldon_pool(row_matrix({1, 2, 2, 0, 0}), 1, 1, &sel);
  CHECK(sel.top[0] == std::vector<Eigen::Index>{1});
  CHECK(sel.bottom[0] == std::vector<Eigen::Index>{3});
}

TEST_CASE("weldon agrees with a full-sort oracle on 1000 random maps") {
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<int> dims(1, 8);
  std::normal_distribution<double> g;
  for (int trial = 0; trial < 1000; ++trial) {
    const Eigen::Index c = dims(rng), l = dims(rng) * dims(rng);
    const Matrix m = Matrix::NullaryExpr(c, l, [&] { return g(rng); });
    const int kp = std::uniform_int_distribution<int>(1, static_cast<int>(l))(rng);
    const int kn = std::uniform_int_distribution<int>(1, static_cast<int>(l))(rng);
    const Vector got = weldon_pool(m, kp, kn);
    const auto want = oracle::weldon(rows_of(m), kp, kn);
    for (Eigen::Index i = 0; i < c; ++i) REQUIRE(got[i] == want[static_cast<std::size_t>(i)]);
  }
}

TEST_CASE("weldon is invariant under spatial permutation") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g;
  const Matrix m = Matrix::NullaryExpr(6, 20, [&] { return g(rng); });
  std::vector<Eigen::Index> perm(20);
  std::iota(perm.begin(), perm.end(), Eigen::Index{0});
  for (int trial = 0; trial < 50; ++trial) {
    std::shuffle(perm.begin(), perm.end(), rng);
    Matrix p(6, 20);
    for (Eigen::Index i = 0; i < 20; ++i) p.col(i) = m.col(perm[static_cast<std::size_t>(i)]);
    CHECK(weldon_pool(p, 3, 4) == weldon_pool(m, 3, 4));
  }
}

TEST_CASE("weldon is monotone in every activation") {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> g;
  const Matrix m = Matrix::NullaryExpr(3, 12, [&] { return g(rng); });
  const Vector base = weldon_pool(m, 2, 2);
  for (Eigen::Index c = 0; c < 3; ++c)
    for (Eigen::Index l = 0; l < 12; ++l) {
      Matrix up = m;
      up(c, l) += 0.5;
      CHECK(weldon_pool(up, 2, 2)[c] >= base[c]);
    }
}

TEST_CASE("weldon rejects out-of-range counts") {
  const Matrix m = Matrix::Zero(2, 4);
  CHECK_THROWS_AS(weldon_pool(m, 0, 1), ValidationError);
  CHECK_THROWS_AS(weldon_pool(m, 1, 0), ValidationError);
  CHECK_THROWS_AS(weldon_pool(m, 5, 1), ValidationError);
  CHECK_THROWS_AS(weldon_pool(m, 1, 5), ValidationError);
  CHECK(default_weldon_k(16) == 1);
  CHECK(default_weldon_k(49) == 4);
}

TEST_CASE("FMAP files round-trip and reject damage") {
  testing::TempDir dir;
  FeatureMap fm(3, 2, 4);
  for (Eigen::Index c = 0; c < 3; ++c)
    for (Eigen::Index h = 0; h < 2; ++h)
      for (Eigen::Index w = 0; w < 4; ++w) fm(c, h, w) = static_cast<double>(c * 100 + h * 10 + w) * 0.25f;
  fm.save(dir / "a.fmap");
  const auto back = FeatureMap::load(dir / "a.fmap");
  CHECK(back.channels() == 3);
  CHECK(back.height() == 2);
  CHECK(back.width() == 4);
  CHECK(back.values() == fm.values());
  CHECK(back(2, 1, 3) == 213 * 0.25);

  const std::string bytes = fm.encode();
  CHECK(bytes.size() == 16 + 3 * 2 * 4 * 4);
  CHECK_THROWS_AS(FeatureMap::decode(bytes.substr(0, bytes.size() - 1)), ValidationError);
  CHECK_THROWS_AS(FeatureMap::decode(bytes + "x"), ValidationError);
  CHECK_THROWS_AS(FeatureMap::decode(bytes.substr(0, 10)), ValidationError);
  CHECK_THROWS_AS(FeatureMap::decode("PAMF" + bytes.substr(4)), ValidationError);
  CHECK_THROWS_AS(FeatureMap::load(dir / "absent.fmap"), IoError);
}

TEST_CASE("encoded images are unit vectors") {
  std::mt19937_64 rng(5);
  const auto params = ImageEncoderParams::init(8, 16, 2, 2, rng);
  for (int trial = 0; trial < 20; ++trial) {
    FeatureMap fm(8, 4, 4);
    fm.values() = Matrix::NullaryExpr(8, 16, [&] { return std::normal_distribution<double>()(rng); });
    CHECK(std::abs(encode_image(fm, params).values().norm() - 1.0) < 1e-9);
  }
  CHECK_THROWS_AS(encode_image(FeatureMap(7, 4, 4), params), ValidationError);
}

TEST_CASE("heatmap of a constant map is constant") {
  std::mt19937_64 rng(6);
  const auto params = ImageEncoderParams::init(4, 3, 1, 1, rng);
  FeatureMap fm(4, 3, 5);
  for (Eigen::Index l = 0; l < 15; ++l) fm.values().col(l) = Vector::LinSpaced(4, 0.1, 0.9);
  const auto t = testing::random_unit(3, rng);
  const Matrix map = heatmap(t, fm, params);
  CHECK(map.rows() == 3);
  CHECK(map.cols() == 5);
  CHECK((map.array() - map(0, 0)).abs().maxCoeff() == 0.0);
}

TEST_CASE("heatmap peaks where the location projects onto the word") {
  std::mt19937_64 rng(7);
  auto params = ImageEncoderParams::init(4, 3, 1, 1, rng);
  params.proj_b.setZero();
  const auto t = testing::random_unit(3, rng);
  const Vector preimage = params.proj_w.completeOrthogonalDecomposition().pseudoInverse() * t.values();

  FeatureMap fm(4, 3, 3);
  fm.values() = Matrix::NullaryExpr(4, 9, [&] { return std::normal_distribution<double>()(rng); });
  fm.values().col(1 * 3 + 2) = preimage;
  const Matrix map = heatmap(t, fm, params);
  Eigen::Index r = 0, c = 0;
  map.maxCoeff(&r, &c);
  CHECK(r == 1);
  CHECK(c == 2);
  CHECK(map(1, 2) == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(map.maxCoeff() <= 1.0 + 1e-12);
  CHECK(map.minCoeff() >= -1.0 - 1e-12);

  const std::string pgm = heatmap_to_pgm(map);
  CHECK(pgm.rfind("P2\n3 3\n255\n", 0) == 0);
  CHECK(heatmap_to_json(Matrix::Constant(1, 2, 0.5)) == "[[0.5,0.5]]");
}
