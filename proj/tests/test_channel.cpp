#include <Eigen/Dense>
#include <cmath>
#include <complex>

#include "doctest.h"
#include "riscade/channel.hpp"
#include "riscade/pilots.hpp"
#include "riscade/rng.hpp"

using namespace riscade;
using std::complex;

namespace {
constexpr double kPi = 3.14159265358979323846;

RegionPartition table_partition() {
  return RegionPartition::from_interior_boundaries({-kPi / 6, kPi / 6});
}
}  // namespace

TEST_CASE("steering vector matches direct evaluation on a 2x2 array") {
  // az = 0, el = pi/2: col ramp sin(el)cos(az) = 1 -> [1, e^{-j pi}];
  // row ramp cos(el) = 0 -> [1, 1]; kron gives (1/2)[1, 1, -1, -1].
  ArrayGeometry geom{2, 2, 0.5};
  const Eigen::VectorXcd a = steering_vector(geom, 0.0, kPi / 2);
  REQUIRE(a.size() == 4);
  CHECK(std::abs(a[0] - complex<double>(0.5, 0)) < 1e-12);
  CHECK(std::abs(a[1] - complex<double>(0.5, 0)) < 1e-12);
  CHECK(std::abs(a[2] - complex<double>(-0.5, 0)) < 1e-12);
  CHECK(std::abs(a[3] - complex<double>(-0.5, 0)) < 1e-12);
}

TEST_CASE("steering vector entries all have magnitude 1/sqrt(total)") {
  ArrayGeometry geom{3, 5, 0.5};
  const Eigen::VectorXcd a = steering_vector(geom, 0.0, kPi / 2 - 1e-9);
  for (Eigen::Index i = 0; i < a.size(); ++i)
    CHECK(std::abs(std::abs(a[i]) - 1.0 / std::sqrt(15.0)) < 1e-12);
}

TEST_CASE("steering vector has unit norm for random angles") {
  ArrayGeometry geom{8, 8, 0.5};
  Rng rng(42);
  for (int t = 0; t < 50; ++t) {
    const double az = rng.uniform(-kPi / 2, kPi / 2);
    const double el = rng.uniform(-kPi / 2, kPi / 2);
    CHECK(std::abs(steering_vector(geom, az, el).norm() - 1.0) < 1e-12);
  }
}

TEST_CASE("draw_paths gain variance is about one") {
  Rng rng(7);
  double sum_sq = 0.0;
  const int draws = 34000;  // ~1e5 gains at 3 paths per draw
  for (int t = 0; t < draws; ++t) {
    const PathSet p = draw_paths(3, full_elevation_range(), rng);
    for (const auto& g : p.gains) sum_sq += std::norm(g);
  }
  const double var = sum_sq / (3.0 * draws);
  CHECK(var == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("draw_paths respects the elevation interval") {
  Rng rng(3);
  for (int t = 0; t < 200; ++t) {
    const PathSet p = draw_paths(3, {-kPi / 6, kPi / 6}, rng);
    for (double el : p.elevation) {
      CHECK(el > -kPi / 6);
      CHECK(el < kPi / 6);
    }
  }
}

TEST_CASE("draw_paths is deterministic under a fixed stream") {
  Rng a(99), b(99);
  const PathSet pa = draw_paths(3, full_elevation_range(), a, true);
  const PathSet pb = draw_paths(3, full_elevation_range(), b, true);
  CHECK(pa.gains == pb.gains);
  CHECK(pa.azimuth == pb.azimuth);
  CHECK(pa.elevation == pb.elevation);
  CHECK(pa.dep_azimuth == pb.dep_azimuth);
  CHECK(pa.dep_elevation == pb.dep_elevation);
}

TEST_CASE("draw_paths rejects an empty interval") {
  Rng rng(1);
  CHECK_THROWS_AS(draw_paths(3, {0.5, 0.5}, rng), std::invalid_argument);
  CHECK_THROWS_AS(draw_paths(0, full_elevation_range(), rng), std::invalid_argument);
}

TEST_CASE("single-path bs-ris channel is the scaled steering outer product") {
  ArrayGeometry ris{8, 8, 0.5}, bs{4, 4, 0.5};
  PathSet p;
  p.gains = {1.0};
  p.azimuth = {0.3};
  p.elevation = {-0.2};
  p.dep_azimuth = {1.0};
  p.dep_elevation = {0.7};
  const Eigen::MatrixXcd g = gen_bs_ris(ris, bs, p);
  const Eigen::VectorXcd a = steering_vector(ris, 0.3, -0.2);
  const Eigen::VectorXcd b = steering_vector(bs, 1.0, 0.7);
  const Eigen::MatrixXcd expect = std::sqrt(64.0 * 16.0) * a * b.adjoint();
  CHECK((g - expect).norm() < 1e-10);
  CHECK(std::abs(g.norm() - 32.0) < 1e-9);  // rank-1: ||G||_F = sqrt(MN)

}

TEST_CASE("bs-ris Frobenius energy expectation is M*N") {
  ArrayGeometry ris{8, 8, 0.5}, bs{4, 4, 0.5};
  Rng rng(11);
  double acc = 0.0;
  const int draws = 3000;
  for (int t = 0; t < draws; ++t) {
    const PathSet p = draw_paths(3, full_elevation_range(), rng, true);
    acc += gen_bs_ris(ris, bs, p).squaredNorm();
  }
  CHECK(acc / draws == doctest::Approx(1024.0).epsilon(0.05));
}

TEST_CASE("single-path ris-user channel has norm sqrt(N)") {
  ArrayGeometry ris{8, 8, 0.5};
  PathSet p;
  p.gains = {1.0};
  p.azimuth = {0.1};
  p.elevation = {0.4};
  const Eigen::VectorXcd f = gen_ris_user(ris, p);
  CHECK(std::abs(f.norm() - 8.0) < 1e-12);
}

TEST_CASE("ris-user energy expectation is N") {
  ArrayGeometry ris{8, 8, 0.5};
  Rng rng(13);
  double acc = 0.0;
  const int draws = 20000;
  for (int t = 0; t < draws; ++t) {
    const PathSet p = draw_paths(3, full_elevation_range(), rng);
    acc += gen_ris_user(ris, p).squaredNorm();
  }
  CHECK(acc / draws == doctest::Approx(64.0).epsilon(0.05));
}

TEST_CASE("cascade with all-ones f is the identity") {
  Rng rng(5);
  Eigen::MatrixXcd g(3, 2);
  for (int i = 0; i < g.size(); ++i) g(i) = rng.cgauss();
  const Eigen::VectorXcd ones = Eigen::VectorXcd::Ones(3);
  CHECK((cascade(g, ones) - g).norm() == 0.0);
}

TEST_CASE("cascade conjugates f") {
  Eigen::MatrixXcd g(2, 2);
  g << 1.0, 2.0, 3.0, 4.0;
  const Eigen::VectorXcd f = Eigen::VectorXcd::Constant(2, complex<double>(0, 1));
  // conj(j) = -j, so H = -j G.
  CHECK((cascade(g, f) - complex<double>(0, -1) * g).norm() < 1e-15);
}

TEST_CASE("cascade hand example") {
  Eigen::MatrixXcd g(2, 1);
  g << 1.0, 2.0;
  Eigen::VectorXcd f(2);
  f << complex<double>(1, 0), complex<double>(1, 1);
  const Eigen::MatrixXcd h = cascade(g, f);
  CHECK(std::abs(h(0, 0) - complex<double>(1, 0)) < 1e-15);
  CHECK(std::abs(h(1, 0) - complex<double>(2, -2)) < 1e-15);
}

TEST_CASE("region_of follows the table partition") {
  const RegionPartition part = table_partition();
  REQUIRE(part.count() == 3);
  CHECK(part.region_of(-kPi / 4) == 1);
  CHECK(part.region_of(0.0) == 2);
  CHECK(part.region_of(kPi / 3) == 3);
  // boundary goes to the lower-indexed interval
  CHECK(part.region_of(-kPi / 6) == 1);
  CHECK(part.region_of(kPi / 6) == 2);
  CHECK_THROWS_AS(part.region_of(kPi / 2), std::invalid_argument);
  CHECK_THROWS_AS(part.region_of(-2.0), std::invalid_argument);
}

TEST_CASE("generate_dataset produces labeled, region-consistent realizations") {
  ChannelConfig cfg;
  cfg.bs = {2, 2, 0.5};
  cfg.ris = {4, 4, 0.5};
  cfg.regions = table_partition();
  cfg.users_per_region = 2;
  const auto grouping = make_grouping(cfg.ris, 4);

  const auto data = generate_dataset(cfg, &grouping, 5, 123);
  REQUIRE(data.size() == 3 * 2 * 5);
  for (const auto& cr : data) {
    for (double el : cr.paths_f.elevation) CHECK(cfg.regions.region_of(el) == cr.region);
    // cascaded row n = conj(f_n) * G row n
    for (int n = 0; n < cr.bs_ris.rows(); ++n) {
      const Eigen::RowVectorXcd expect = std::conj(cr.ris_user[n]) * cr.bs_ris.row(n);
      CHECK((cr.cascaded.row(n) - expect).norm() < 1e-12);
    }
    REQUIRE(cr.has_grouped());
    CHECK((cr.grouped - grouping.matrix() * cr.cascaded).norm() < 1e-12);
  }
}

TEST_CASE("generate_dataset single region labels everything region 1") {
  ChannelConfig cfg;
  cfg.bs = {2, 2, 0.5};
  cfg.ris = {2, 2, 0.5};
  cfg.regions = RegionPartition::single_region();
  cfg.users_per_region = 1;
  const auto data = generate_dataset(cfg, nullptr, 10, 5);
  REQUIRE(data.size() == 10);
  for (const auto& cr : data) {
    CHECK(cr.region == 1);
    CHECK_FALSE(cr.has_grouped());
  }
}

TEST_CASE("generate_dataset is deterministic and chunk-order independent") {
  ChannelConfig cfg;
  cfg.bs = {2, 2, 0.5};
  cfg.ris = {4, 4, 0.5};
  cfg.regions = table_partition();
  cfg.users_per_region = 1;

  const auto a = generate_dataset(cfg, nullptr, 6, 77);
  const auto b = generate_dataset(cfg, nullptr, 6, 77);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].cascaded == b[i].cascaded);
    CHECK(a[i].ris_user == b[i].ris_user);
  }

  // chunked generation of user (2, 1) reproduces the same slice
  std::vector<ChannelRealization> chunked;
  generate_realizations(cfg, nullptr, 2, 1, 0, 2, 77, chunked);
  generate_realizations(cfg, nullptr, 2, 1, 2, 4, 77, chunked);
  for (int i = 0; i < 6; ++i) CHECK(chunked[i].cascaded == a[6 + i].cascaded);
}

TEST_CASE("freeze_bs_ris holds one G across the dataset") {
  ChannelConfig cfg;
  cfg.bs = {2, 2, 0.5};
  cfg.ris = {2, 2, 0.5};
  cfg.regions = RegionPartition::single_region();
  cfg.users_per_region = 2;
  cfg.freeze_bs_ris = true;
  const auto data = generate_dataset(cfg, nullptr, 4, 9);
  for (const auto& cr : data) CHECK(cr.bs_ris == data.front().bs_ris);
}
