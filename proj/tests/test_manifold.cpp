#include <catch_amalgamated.hpp>

#include <numbers>

#include "ctgbp/manifold.hpp"
#include "support.hpp"

using namespace ctgbp;
using ctgbp::test::close_rel;

namespace {

constexpr double kPi = std::numbers::pi;

double quat_norm(const UnitQuaternion& q) { return q.coeffs_wxyz().norm(); }

}  // namespace

TEST_CASE("quat_exp special values", "[manifold]") {
  const UnitQuaternion id = quat_exp(Vec3::Zero());
  CHECK(id.w() == 1.0);
  CHECK(id.x() == 0.0);
  CHECK(id.y() == 0.0);
  CHECK(id.z() == 0.0);

  const UnitQuaternion half = quat_exp(Vec3(kPi, 0.0, 0.0));
  CHECK(std::abs(half.w()) < 1e-15);
  CHECK(half.x() == Catch::Approx(1.0).margin(1e-15));
  CHECK(std::abs(half.y()) < 1e-15);
  CHECK(std::abs(half.z()) < 1e-15);
}

TEST_CASE("quat_log special values", "[manifold]") {
  CHECK(quat_log(UnitQuaternion::identity()).norm() == 0.0);
  const Vec3 v = quat_log(UnitQuaternion(0.0, 1.0, 0.0, 0.0));
  CHECK(close_rel(v, Vec3(kPi, 0.0, 0.0), 1e-14));
}

TEST_CASE("quat_exp and quat_log round trip", "[manifold]") {
  for (int i = 0; i < 1000; ++i) {
    const Vec3 w = test::random_rotation_vector(kPi - 0.1);
    const UnitQuaternion q = quat_exp(w);
    CHECK(std::abs(quat_norm(q) - 1.0) < 1e-12);
    CHECK(close_rel(quat_log(q), w, 1e-10));
  }
}

TEST_CASE("small angle branches are continuous", "[manifold]") {
  const Vec3 tiny(3e-9, -2e-9, 1e-9);
  CHECK(close_rel(quat_log(quat_exp(tiny)), tiny, 1e-12));
  const Vec3 above(3e-8, -2e-8, 1e-8);
  CHECK(close_rel(quat_log(quat_exp(above)), above, 1e-12));
}

TEST_CASE("quaternion canonicalization", "[manifold]") {
  const UnitQuaternion a(-0.5, 0.5, -0.5, 0.5);
  CHECK(a.w() > 0.0);
  const UnitQuaternion b(0.0, -1.0, 0.0, 0.0);
  CHECK(b.x() == 1.0);
  const UnitQuaternion c(0.0, 0.0, -0.6, 0.8);
  CHECK(c.y() == Catch::Approx(0.6));
  CHECK(c.z() == Catch::Approx(-0.8));
  const UnitQuaternion unnormalized(2.0, 0.0, 0.0, 0.0);
  CHECK(quat_norm(unnormalized) == Catch::Approx(1.0).margin(1e-15));
}

TEST_CASE("compositions stay unit norm", "[manifold]") {
  UnitQuaternion q;
  for (int i = 0; i < 1000; ++i) {
    q = q * test::random_rotation();
    REQUIRE(std::abs(quat_norm(q) - 1.0) < 1e-12);
  }
}

TEST_CASE("pose group laws", "[manifold]") {
  for (int i = 0; i < 200; ++i) {
    const Pose a = test::random_pose();
    const Pose b = test::random_pose();
    const Pose c = test::random_pose();
    const Pose left = (a * b) * c;
    const Pose right = a * (b * c);
    CHECK(boxminus(left, right).norm() < 1e-12);
    CHECK(boxminus((a * b).inverse(), b.inverse() * a.inverse()).norm() < 1e-12);
    CHECK(boxminus(a * a.inverse(), Pose::identity()).norm() < 1e-12);
  }
}

TEST_CASE("boxplus and boxminus identities", "[manifold]") {
  for (int i = 0; i < 1000; ++i) {
    const Pose x = test::random_pose();
    CHECK(boxminus(boxplus(x, Vec6::Zero()), x).norm() == 0.0);
    CHECK(boxminus(x, x).norm() < 1e-15);
    Vec6 tau;
    tau << test::random_rotation_vector(kPi - 0.1), test::random_vector(3, 5.0);
    CHECK(close_rel(boxminus(boxplus(x, tau), x), tau, 1e-10));

    const UnitQuaternion q = test::random_rotation();
    const Vec3 d = test::random_rotation_vector(kPi - 0.1);
    CHECK(close_rel(boxminus(boxplus(q, d), q), d, 1e-10));
  }
}

TEST_CASE("boxplus applies rotation on the left", "[manifold]") {
  const Pose x = test::random_pose();
  Vec6 tau;
  tau << 0.3, -0.2, 0.1, 1.0, 2.0, 3.0;
  const Pose y = boxplus(x, tau);
  const UnitQuaternion expected = quat_exp(tau.head<3>()) * x.rotation;
  CHECK(close_rel(y.rotation.coeffs_wxyz(), expected.coeffs_wxyz(), 1e-15));
  CHECK(close_rel(y.translation, x.translation + tau.tail<3>(), 1e-15));
}

TEST_CASE("vector and translation cases are Euclidean", "[manifold]") {
  const VecX a = test::random_vector(5);
  const VecX b = test::random_vector(5);
  const NodeValue na = a;
  CHECK(close_rel(std::get<VecX>(boxplus(na, b)), a + b, 0.0));
  CHECK(close_rel(boxminus(NodeValue(a), NodeValue(b)), a - b, 0.0));

  const Pose p{UnitQuaternion::identity(), Vec3(1.0, 2.0, 3.0)};
  const Pose q{UnitQuaternion::identity(), Vec3(-1.0, 0.5, 2.0)};
  Vec6 expected;
  expected << 0.0, 0.0, 0.0, 2.0, 1.5, 1.0;
  CHECK(close_rel(boxminus(p, q), expected, 0.0));
}

TEST_CASE("node value dispatch", "[manifold]") {
  CHECK(tangent_dim(NodeValue(Pose::identity())) == 6);
  CHECK(tangent_dim(NodeValue(UnitQuaternion::identity())) == 3);
  CHECK(tangent_dim(NodeValue(VecX::Zero(4))) == 4);
  CHECK(same_kind(NodeValue(VecX::Zero(3)), NodeValue(VecX::Zero(3))));
  CHECK_FALSE(same_kind(NodeValue(VecX::Zero(3)), NodeValue(VecX::Zero(2))));
  CHECK_FALSE(same_kind(NodeValue(Pose::identity()), NodeValue(UnitQuaternion::identity())));
  CHECK_THROWS_AS(boxplus(NodeValue(Pose::identity()), VecX::Zero(3)), std::invalid_argument);
  CHECK_THROWS_AS(boxminus(NodeValue(Pose::identity()), NodeValue(UnitQuaternion::identity())),
                  std::invalid_argument);
}

TEST_CASE("dboxplus_dtau trivial cases", "[manifold]") {
  CHECK(close_rel(dboxplus_dtau(NodeValue(VecX::Zero(4)), test::random_vector(4)), MatX::Identity(4, 4), 0.0));
  CHECK(close_rel(dboxplus_dtau(NodeValue(test::random_pose()), VecX::Zero(6)), MatX::Identity(6, 6), 0.0));
}

TEST_CASE("dboxplus_dtau matches finite differences", "[manifold]") {
  auto check = [](const NodeValue& x, const VecX& tau) {
    const NodeValue base = boxplus(x, tau);
    auto f = [&](const VecX& d) { return boxminus(boxplus(x, VecX(tau + d)), base); };
    const MatX numeric = test::numeric_jacobian(f, tangent_dim(x));
    return close_rel(dboxplus_dtau(x, tau), numeric, 1e-5);
  };
  for (int i = 0; i < 500; ++i) {
    VecX tau6(6);
    tau6 << test::random_rotation_vector(kPi - 0.1), test::random_vector(3, 2.0);
    CHECK(check(NodeValue(test::random_pose()), tau6));
    CHECK(check(NodeValue(test::random_rotation()), VecX(test::random_rotation_vector(kPi - 0.1))));
    CHECK(check(NodeValue(test::random_vector(3)), test::random_vector(3)));
  }
}

TEST_CASE("SO(3) Jacobians", "[manifold]") {
  for (int i = 0; i < 200; ++i) {
    const Vec3 phi = test::random_rotation_vector(kPi - 0.1);
    const Mat3 jl = so3_left_jacobian(phi);
    const Mat3 jr = so3_right_jacobian(phi);
    CHECK(close_rel(jl * so3_left_jacobian_inverse(phi), Mat3::Identity(), 1e-10));
    CHECK(close_rel(jr * so3_right_jacobian_inverse(phi), Mat3::Identity(), 1e-10));
    CHECK(close_rel(jr, so3_left_jacobian(-phi), 1e-12));

    // exp(phi + d) = exp(J_l d) exp(phi)
    auto f = [&](const VecX& d) -> VecX { return quat_log(quat_exp(phi + d) * quat_exp(phi).inverse()); };
    CHECK(close_rel(test::numeric_jacobian(f, 3), jl, 1e-6));
  }
}
