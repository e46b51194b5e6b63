#include "doctest.h"

#include <cmath>
#include <stdexcept>

#include "rdd/partition.hpp"
#include "rdd/rng.hpp"

using namespace rdd;

namespace {

Tensor random_matrix(std::int64_t n, std::int64_t d, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Rng rng(seed);
  Tensor t = Tensor::zeros({n, d});
  for (std::int64_t i = 0; i < t.size(); ++i) t.at(i) = rng.uniform(lo, hi);
  return t;
}

}  // namespace

TEST_CASE("a sample equal to a center lands in that cluster") {
  const Tensor centers = random_matrix(5, 3, 1);
  Tensor sample = Tensor::zeros({1, 3});
  for (std::int64_t j = 0; j < 3; ++j) sample.at(0, j) = centers.at(3, j);
  const auto a = assign_to_nearest(sample, {0}, centers, {0, 0, 0, 0, 0}, true);
  CHECK(a.assignment[0] == 3);
  CHECK(a.members[3] == std::vector<std::int64_t>{0});
}

TEST_CASE("distance ties break toward the lowest center index") {
  const Tensor centers({2, 1}, {0.0, 10.0});
  const Tensor sample({1, 1}, {5.0});
  const auto a = assign_to_nearest(sample, {0}, centers, {0, 0}, true);
  CHECK(a.assignment[0] == 0);
}

TEST_CASE("assignment matches an exhaustive nearest-center oracle") {
  const Tensor pts = random_matrix(6, 2, 7);
  const Tensor centers = random_matrix(2, 2, 8);
  const std::vector<int> labels(6, 0);
  const auto a = assign_to_nearest(pts, labels, centers, {0, 0}, true);
  for (std::int64_t i = 0; i < 6; ++i) {
    double d0 = 0, d1 = 0;
    for (std::int64_t j = 0; j < 2; ++j) {
      d0 += (pts.at(i, j) - centers.at(0, j)) * (pts.at(i, j) - centers.at(0, j));
      d1 += (pts.at(i, j) - centers.at(1, j)) * (pts.at(i, j) - centers.at(1, j));
    }
    const int want = d1 < d0 ? 1 : 0;
    CHECK(a.assignment[static_cast<std::size_t>(i)] == want);
  }
}

TEST_CASE("class-conditional assignment only competes within the class") {
  // center 0 is class 0, center 1 is class 1; a class-1 sample right on top of
  // center 0 must still go to center 1
  const Tensor centers({2, 1}, {0.0, 100.0});
  const Tensor sample({1, 1}, {0.0});
  const auto a = assign_to_nearest(sample, {1}, centers, {0, 1}, true);
  CHECK(a.assignment[0] == 1);

  // class-agnostic mode picks the geometric nearest
  const auto b = assign_to_nearest(sample, {1}, centers, {0, 1}, false);
  CHECK(b.assignment[0] == 0);
}

TEST_CASE("assignment errors: dimension mismatch and missing class center") {
  const Tensor centers = random_matrix(2, 3, 1);
  const Tensor pts = random_matrix(2, 4, 2);
  CHECK_THROWS_AS(assign_to_nearest(pts, {0, 0}, centers, {0, 0}, true), std::invalid_argument);
  const Tensor ok = random_matrix(2, 3, 3);
  CHECK_THROWS_AS(assign_to_nearest(ok, {0, 2}, centers, {0, 1}, true), std::invalid_argument);
}

TEST_CASE("nearest assignment is permutation consistent") {
  const Tensor pts = random_matrix(8, 2, 9);
  const Tensor centers = random_matrix(3, 2, 10);
  const std::vector<int> labels(8, 0);
  const auto base = assign_to_nearest(pts, labels, centers, {0, 0, 0}, true);

  const std::vector<std::int64_t> perm = {5, 2, 7, 0, 3, 6, 1, 4};
  Tensor shuffled = Tensor::zeros({8, 2});
  for (std::size_t r = 0; r < perm.size(); ++r) {
    for (std::int64_t j = 0; j < 2; ++j) shuffled.at(static_cast<std::int64_t>(r), j) = pts.at(perm[r], j);
  }
  const auto moved = assign_to_nearest(shuffled, labels, centers, {0, 0, 0}, true);
  for (std::size_t r = 0; r < perm.size(); ++r) {
    CHECK(moved.assignment[r] == base.assignment[static_cast<std::size_t>(perm[r])]);
  }
}

TEST_CASE("every sample is in exactly one member list") {
  const Tensor pts = random_matrix(20, 3, 11);
  const Tensor centers = random_matrix(4, 3, 12);
  const std::vector<int> labels(20, 0);
  const auto a = assign_to_nearest(pts, labels, centers, {0, 0, 0, 0}, true);
  std::vector<int> seen(20, 0);
  for (const auto& m : a.members) {
    for (std::int64_t i : m) seen[static_cast<std::size_t>(i)]++;
  }
  for (int s : seen) CHECK(s == 1);
}

TEST_CASE("select_centers takes everything when ipc fits") {
  std::vector<Tensor> per_class = {random_matrix(1, 4, 1), random_matrix(1, 4, 2)};
  const auto cs1 = select_centers(per_class, 10, 0);
  CHECK(cs1.centers.dim(0) == 2);  // one center per class at ipc = 1
  CHECK(cs1.labels == std::vector<int>{0, 1});

  std::vector<Tensor> ten = {random_matrix(10, 4, 3)};
  const auto cs10 = select_centers(ten, 10, 0);
  CHECK(cs10.centers.dim(0) == 10);
}

TEST_CASE("select_centers subsamples deterministically for large ipc") {
  std::vector<Tensor> fifty = {random_matrix(50, 4, 4), random_matrix(50, 4, 5)};
  const auto a = select_centers(fifty, 10, 99);
  const auto b = select_centers(fifty, 10, 99);
  CHECK(a.centers.dim(0) == 20);  // 10 per class
  CHECK(a.source_rows == b.source_rows);
  for (std::int64_t i = 0; i < a.centers.size(); ++i) CHECK(a.centers.at(i) == b.centers.at(i));
  // per-class labels hold
  for (std::size_t i = 0; i < 10; ++i) CHECK(a.labels[i] == 0);
  for (std::size_t i = 10; i < 20; ++i) CHECK(a.labels[i] == 1);
  CHECK_THROWS_AS(select_centers({}, 10, 0), std::invalid_argument);
}

TEST_CASE("kmeans with k=1 returns the feature mean") {
  const Tensor pts = random_matrix(9, 3, 13);
  const auto km = kmeans(pts, 1, 0);
  for (std::int64_t j = 0; j < 3; ++j) {
    double m = 0.0;
    for (std::int64_t i = 0; i < 9; ++i) m += pts.at(i, j);
    m /= 9.0;
    CHECK(km.centers.at(0, j) == doctest::Approx(m).epsilon(1e-12));
  }
  for (int a : km.assignment.assignment) CHECK(a == 0);
}

TEST_CASE("kmeans separates two well-separated blobs") {
  const std::int64_t n = 60;
  Tensor pts = Tensor::zeros({n, 2});
  std::vector<int> truth(static_cast<std::size_t>(n));
  Rng rng(14);
  for (std::int64_t i = 0; i < n; ++i) {
    const int blob = i % 2;
    truth[static_cast<std::size_t>(i)] = blob;
    pts.at(i, 0) = (blob == 0 ? -10.0 : 10.0) + 0.1 * rng.normal();
    pts.at(i, 1) = 0.1 * rng.normal();
  }
  const auto km = kmeans(pts, 2, 3);
  // purity: identical labels within each k-means cluster
  for (const auto& members : km.assignment.members) {
    if (members.empty()) continue;
    const int first = truth[static_cast<std::size_t>(members[0])];
    for (std::int64_t i : members) CHECK(truth[static_cast<std::size_t>(i)] == first);
  }
}

TEST_CASE("kmeans SSE is nonincreasing and terminates at a fixpoint") {
  Rng rng(15);
  for (int round = 0; round < 20; ++round) {
    const Tensor pts = random_matrix(40, 3, rng.next_u64());
    const auto km = kmeans(pts, 4, rng.next_u64());
    for (std::size_t i = 1; i < km.sse_history.size(); ++i) {
      CHECK(km.sse_history[i] <= km.sse_history[i - 1] + 1e-9);
    }
    // fixpoint: reassigning against the final centers changes nothing
    const auto again = assign_to_nearest(pts, std::vector<int>(40, 0), km.centers,
                                         std::vector<int>(4, 0), false);
    if (km.iterations < 100) {
      for (std::size_t i = 0; i < again.assignment.size(); ++i) {
        CHECK(again.assignment[i] == km.assignment.assignment[i]);
      }
    }
  }
}

TEST_CASE("kmeans rejects more clusters than points") {
  const Tensor pts = random_matrix(3, 2, 16);
  CHECK_THROWS_AS(kmeans(pts, 4, 0), std::invalid_argument);
  CHECK_THROWS_AS(kmeans(pts, 0, 0), std::invalid_argument);
}

TEST_CASE("kmeans is deterministic under a fixed seed") {
  const Tensor pts = random_matrix(30, 4, 17);
  const auto a = kmeans(pts, 5, 21);
  const auto b = kmeans(pts, 5, 21);
  CHECK(a.assignment.assignment == b.assignment.assignment);
  for (std::int64_t i = 0; i < a.centers.size(); ++i) CHECK(a.centers.at(i) == b.centers.at(i));
}
