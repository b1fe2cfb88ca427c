#include "martvae/errors.hpp"
#include "martvae/preprocess.hpp"

#include "oracles.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>

using namespace martvae;

namespace {

const Camera kCam{500.0, 500.0, 320.0, 240.0};

Eigen::MatrixX3d random_joints(int n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> xy(-1.0, 1.0), z(1.5, 4.0);
  Eigen::MatrixX3d j(n, 3);
  for (int i = 0; i < n; ++i) j.row(i) << xy(rng), xy(rng), z(rng);
  return j;
}

Keypoints2D exact_keypoints(const Eigen::MatrixX3d& joints) {
  Keypoints2D kp;
  kp.points = project_joints(joints, kCam);
  kp.confidence = Vector::Ones(joints.rows());
  return kp;
}

PoseSequence labelled(int T, std::vector<ActionSegment> segs) {
  PoseSequence s;
  s.skeleton = {1, 3, 30.0};
  s.frames.resize(T, 3);
  for (int t = 0; t < T; ++t) s.frames.row(t) << t, 2.0 * t, -t;
  s.script.segments = std::move(segs);
  return s;
}

}  // namespace

TEST_SUITE("preprocess") {

TEST_CASE("optical axis maps to the principal point") {
  Eigen::MatrixX3d j(2, 3);
  j << 0, 0, 2, 2, 0, 2;
  const auto p = project_joints(j, kCam);
  CHECK(p(0, 0) == doctest::Approx(320.0));
  CHECK(p(0, 1) == doctest::Approx(240.0));
  CHECK(p(1, 0) == doctest::Approx(820.0));
  CHECK(p(1, 1) == doctest::Approx(240.0));
}

TEST_CASE("projection matches a per-joint scalar recomputation") {
  std::mt19937_64 rng(3);
  const Camera cam{612.5, 598.25, 311.0, 247.5};
  const auto j = random_joints(10, rng);
  const auto p = project_joints(j, cam);
  for (int i = 0; i < 10; ++i) {
    const double x = j(i, 0), y = j(i, 1), z = j(i, 2);
    CHECK(p(i, 0) == doctest::Approx(cam.fx * x / z + cam.cx).epsilon(1e-14));
    CHECK(p(i, 1) == doctest::Approx(cam.fy * y / z + cam.cy).epsilon(1e-14));
  }
}

TEST_CASE("joint behind the camera raises a projection error naming it") {
  Eigen::MatrixX3d j(4, 3);
  j << 0, 0, 1, 0, 0, 1, 0, 0, 1, 0, 0, -0.5;
  try {
    project_joints(j, kCam);
    FAIL("expected ProjectionError");
  } catch (const ProjectionError& e) {
    CHECK(std::string(e.what()).find("joint 3") != std::string::npos);
  }
}

TEST_CASE("exact keypoints give a clean frame") {
  std::mt19937_64 rng(1);
  const auto j = random_joints(24, rng);
  const auto v = flag_bad_frame(j, exact_keypoints(j), kCam, HeadScale{20.0}, FilterParams{});
  CHECK_FALSE(v.is_bad);
  CHECK(v.bad_joints.empty());
}

TEST_CASE("eleven displaced joints make the frame bad, ten do not") {
  std::mt19937_64 rng(2);
  const auto j = random_joints(24, rng);
  const double s = 20.0;
  for (int displaced : {10, 11}) {
    auto kp = exact_keypoints(j);
    std::vector<int> expected;
    for (int i = 0; i < displaced; ++i) {
      kp.points(2 * i, 0) += 2.0 * s;
      expected.push_back(2 * i);
    }
    const auto v = flag_bad_frame(j, kp, kCam, HeadScale{s}, FilterParams{});
    CHECK(v.is_bad == (displaced == 11));
    CHECK(v.bad_joints == expected);
  }
}

TEST_CASE("low-confidence keypoints are ignored") {
  std::mt19937_64 rng(4);
  const auto j = random_joints(24, rng);
  auto kp = exact_keypoints(j);
  for (int i = 0; i < 15; ++i) {
    kp.points(i, 1) += 100.0;
    kp.confidence(i) = 0.29;
  }
  CHECK(flag_bad_frame(j, kp, kCam, HeadScale{10.0}, FilterParams{}).bad_joints.empty());
}

TEST_CASE("raising tau never grows the deviant set") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> off(-60.0, 60.0);
  const auto j = random_joints(30, rng);
  auto kp = exact_keypoints(j);
  for (int i = 0; i < 30; ++i) kp.points.row(i) += Eigen::RowVector2d(off(rng), off(rng));
  std::size_t previous = 31;
  for (double tau : {0.1, 0.5, 1.0, 2.0, 4.0, 8.0}) {
    FilterParams p;
    p.tau = tau;
    const auto n = flag_bad_frame(j, kp, kCam, HeadScale{15.0}, p).bad_joints.size();
    CHECK(n <= previous);
    previous = n;
  }
}

TEST_CASE("mismatched joint counts are an input error") {
  std::mt19937_64 rng(6);
  const auto j = random_joints(5, rng);
  auto kp = exact_keypoints(random_joints(4, rng));
  CHECK_THROWS_AS(flag_bad_frame(j, kp, kCam, HeadScale{10.0}, FilterParams{}), InputError);
}

TEST_CASE("head scale from two keypoints") {
  Keypoints2D kp;
  kp.points.resize(3, 2);
  kp.points << 0, 0, 3, 4, 10, 10;
  kp.confidence = Vector::Ones(3);
  CHECK(head_scale_from_keypoints(kp, 0, 1).pixels == doctest::Approx(5.0));
}

TEST_CASE("all-good mask keeps the sequence unchanged") {
  const auto s = labelled(40, {{0, 0, 19}, {1, 20, 39}});
  const auto out = split_on_mask(s, std::vector<bool>(40, false), 30);
  REQUIRE(out.size() == 1);
  CHECK(out[0] == s);
}

TEST_CASE("one bad frame splits into two remapped subsequences") {
  const auto s = labelled(100, {{0, 0, 39}, {1, 40, 79}, {2, 80, 99}});
  std::vector<bool> bad(100, false);
  bad[50] = true;
  const auto out = split_on_mask(s, bad, 30);
  REQUIRE(out.size() == 2);
  CHECK(out[0].num_frames() == 50);
  CHECK(out[1].num_frames() == 49);
  CHECK(out[0].script.segments == std::vector<ActionSegment>{{0, 0, 39}, {1, 40, 49}});
  CHECK(out[1].script.segments == std::vector<ActionSegment>{{1, 0, 28}, {2, 29, 48}});
}

TEST_CASE("runs shorter than the minimum are discarded") {
  const auto s = labelled(60, {{3, 0, 59}});
  std::vector<bool> bad(60, false);
  bad[29] = true;
  const auto r = split_on_mask_detailed(s, bad, 30);
  REQUIRE(r.kept.size() == 1);
  CHECK(r.kept[0].num_frames() == 30);
  CHECK(r.kept[0].frames == s.frames.middleRows(30, 30));
  CHECK(r.discarded_frames == 29);
}

TEST_CASE("split conserves frames and remapped segments index identical poses") {
  std::mt19937_64 rng(9);
  std::bernoulli_distribution flip(0.03);
  for (int trial = 0; trial < 50; ++trial) {
    const auto s = labelled(200, {{0, 0, 70}, {1, 50, 130}, {2, 131, 199}});
    std::vector<bool> bad(200);
    int good = 0;
    for (auto&& b : bad) {
      b = flip(rng);
      good += !b;
    }
    const auto r = split_on_mask_detailed(s, bad, 30);
    int kept = 0;
    for (const auto& sub : r.kept) {
      kept += sub.num_frames();
      CHECK(sub.num_frames() >= 30);
      CHECK(validate_sequence(sub).empty());
      for (const auto& seg : sub.script.segments) {
        // Frames carry their original index in column 0.
        const int origin = static_cast<int>(sub.frames(0, 0));
        const auto& src = s.script.segments;
        const bool known = std::any_of(src.begin(), src.end(), [&](const ActionSegment& o) {
          return o.label == seg.label && o.start <= origin + seg.start && origin + seg.end <= o.end;
        });
        CHECK(known);
        CHECK(sub.frames.middleRows(seg.start, seg.length()) == s.frames.middleRows(origin + seg.start, seg.length()));
      }
    }
    CHECK(kept + r.discarded_frames == good);
  }
}

TEST_CASE("balanced weights") {
  SUBCASE("uniform label counts give uniform weights") {
    std::vector<PoseSequence> d;
    for (int c = 0; c < 4; ++c) d.push_back(labelled(5, {{c, 0, 4}}));
    for (double w : balanced_weights(d)) CHECK(w == doctest::Approx(0.25).epsilon(1e-15));
  }
  SUBCASE("labels seen once and three times") {
    std::vector<PoseSequence> d{labelled(5, {{0, 0, 4}}), labelled(5, {{1, 0, 1}, {1, 2, 3}, {1, 4, 4}})};
    const auto w = balanced_weights(d);
    CHECK(w[0] == doctest::Approx(0.75).epsilon(1e-15));
    CHECK(w[1] == doctest::Approx(0.25).epsilon(1e-15));
  }
  SUBCASE("weights sum to one") {
    std::mt19937_64 rng(1);
    std::uniform_int_distribution<int> lab(0, 6);
    std::vector<PoseSequence> d;
    for (int i = 0; i < 37; ++i) d.push_back(labelled(10, {{lab(rng), 0, 4}, {lab(rng), 5, 9}}));
    const auto w = balanced_weights(d);
    CHECK(std::abs(std::accumulate(w.begin(), w.end(), 0.0) - 1.0) <= 1e-12);
  }
  SUBCASE("empty dataset") { CHECK_THROWS_AS(balanced_weights({}), InputError); }
}

TEST_CASE("sampler frequencies match the weights within three standard errors") {
  const std::vector<double> w{0.5, 0.2, 0.2, 0.1};
  WeightedSampler sampler(w);
  std::mt19937_64 rng(11);
  const int n = 100000;
  std::vector<int> hits(w.size());
  for (int i = 0; i < n; ++i) ++hits[sampler(rng)];
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double se = std::sqrt(w[i] * (1.0 - w[i]) / n);
    CHECK(std::abs(hits[i] / static_cast<double>(n) - w[i]) <= 3.0 * se);
  }
}

TEST_CASE("keypoint and camera files") {
  const auto dir = std::filesystem::temp_directory_path() / "martvae_test_kp";
  std::filesystem::create_directories(dir);
  std::mt19937_64 rng(2);
  std::vector<Keypoints2D> frames;
  for (int t = 0; t < 3; ++t) frames.push_back(exact_keypoints(random_joints(5, rng)));
  write_keypoints(frames, dir / "kp.json");
  const auto back = read_keypoints(dir / "kp.json");
  REQUIRE(back.size() == 3);
  for (int t = 0; t < 3; ++t) {
    CHECK(back[t].points == frames[t].points);
    CHECK(back[t].confidence == frames[t].confidence);
  }
  std::ofstream(dir / "cam.json") << R"({"fx": 500, "fy": 510, "cx": 320, "cy": 240})";
  const Camera c = read_camera(dir / "cam.json");
  CHECK(c.fy == 510.0);
  std::ofstream(dir / "badcam.json") << R"({"fx": -1, "fy": 510, "cx": 320, "cy": 240})";
  CHECK_THROWS(read_camera(dir / "badcam.json"));
}

}  // TEST_SUITE
