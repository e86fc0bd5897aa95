#include <gtest/gtest.h>

#include <filesystem>
#include <map>
#include <set>
#include <sstream>

#include "nlab/data.hpp"
#include "support.hpp"

using namespace nlab;
using nlab::testing::linear_probe_accuracy;

namespace {

LabeledDataset balanced(std::size_t classes, std::size_t samples, std::uint64_t seed = 3) {
  SyntheticSpec s;
  s.classes = classes;
  s.samples = samples;
  s.kind = SyntheticKind::blobs;
  s.dims = 4;
  s.seed = seed;
  return generate_synthetic(s);
}

std::string nlab_bytes(const LabeledDataset& d) {
  std::ostringstream os;
  write_nlab(os, d);
  return os.str();
}

}  // namespace

TEST(Synthetic, BalancedAndIdenticalTracks) {
  for (auto kind : {SyntheticKind::blobs, SyntheticKind::ring, SyntheticKind::mini_image}) {
    SyntheticSpec s;
    s.classes = 5;
    s.samples = 100;
    s.kind = kind;
    const auto d = generate_synthetic(s);
    d.validate();
    std::vector<int> hist(5, 0);
    for (int y : d.clean_labels) ++hist[static_cast<std::size_t>(y)];
    for (int h : hist) EXPECT_EQ(h, 20);
    EXPECT_EQ(d.clean_labels, d.noisy_labels);
    EXPECT_EQ(noise_accuracy(d), 1.0);
  }
}

TEST(Synthetic, MiniImagesAreImagesInUnitRange) {
  const auto d = generate_synthetic(SyntheticSpec{});
  EXPECT_TRUE(d.image.is_image());
  EXPECT_EQ(d.image.channels, 3u);
  EXPECT_EQ(d.feature_width, 300u);
  for (double v : d.features.data) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(Synthetic, SameSeedSameBytes) {
  SyntheticSpec s;
  s.samples = 64;
  EXPECT_EQ(nlab_bytes(generate_synthetic(s)), nlab_bytes(generate_synthetic(s)));
  auto t = s;
  t.seed = 2;
  EXPECT_NE(nlab_bytes(generate_synthetic(s)), nlab_bytes(generate_synthetic(t)));
}

TEST(Synthetic, WellSeparatedTwoClassProblemIsLinearlySeparable) {
  for (auto kind : {SyntheticKind::blobs, SyntheticKind::mini_image}) {
    SyntheticSpec s;
    s.classes = 2;
    s.samples = 200;
    s.kind = kind;
    s.separation = 8.0;
    const auto d = generate_synthetic(s);
    EXPECT_GE(linear_probe_accuracy(d.features, d.clean_labels, 2), 0.99) << static_cast<int>(kind);
  }
}

TEST(Synthetic, RejectsBadSpecs) {
  SyntheticSpec s;
  s.separation = 0.0;
  EXPECT_THROW(generate_synthetic(s), InvalidArgument);
  s = SyntheticSpec{};
  s.classes = 1;
  EXPECT_THROW(generate_synthetic(s), InvalidArgument);
  s = SyntheticSpec{};
  s.samples = 3;
  EXPECT_THROW(generate_synthetic(s), InvalidArgument);
}

TEST(Cifar, TwoHandWrittenRecords) {
  std::vector<unsigned char> bytes(2 * kCifarRecord, 0);
  bytes[0] = 3;
  bytes[1] = 255;                      // R(0,0)
  bytes[1 + 1024 + 33] = 51;           // G(1,1)
  bytes[1 + 2048 + 1023] = 102;        // B(31,31)
  bytes[kCifarRecord] = 9;
  for (std::size_t j = 0; j < 3072; ++j) bytes[kCifarRecord + 1 + j] = static_cast<unsigned char>(j % 256);

  const auto d = parse_cifar10_binary(bytes);
  ASSERT_EQ(d.size(), 2u);
  EXPECT_EQ(d.clean_labels, (std::vector<int>{3, 9}));
  EXPECT_EQ(d.noisy_labels, d.clean_labels);
  EXPECT_EQ(d.image.channels, 3u);
  EXPECT_EQ(d.image.height, 32u);
  EXPECT_EQ(d.class_count, 10u);
  EXPECT_EQ(d.features(0, 0), 1.0);
  EXPECT_EQ(d.features(0, 1024 + 33), 51.0 / 255.0);
  EXPECT_EQ(d.features(0, 2048 + 1023), 102.0 / 255.0);
  double others = 0.0;
  for (double v : d.features.row(0)) others += v;
  EXPECT_NEAR(others, 1.0 + 0.2 + 0.4, 1e-15);
  for (std::size_t j = 0; j < 3072; ++j) EXPECT_EQ(d.features(1, j), static_cast<double>(j % 256) / 255.0);
}

TEST(Cifar, EmptyAndTruncatedFiles) {
  EXPECT_EQ(parse_cifar10_binary({}).size(), 0u);
  const std::vector<unsigned char> short_record(3072, 0);
  try {
    parse_cifar10_binary(short_record);
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 0u);
  }
  std::vector<unsigned char> bad_label(2 * kCifarRecord, 0);
  bad_label[kCifarRecord] = 10;
  try {
    parse_cifar10_binary(bad_label);
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), kCifarRecord);
  }
}

TEST(Cifar, LoadsFromDisk) {
  const auto path = std::filesystem::temp_directory_path() / "nlab_cifar_fixture.bin";
  {
    std::ofstream out(path, std::ios::binary);
    std::vector<char> rec(kCifarRecord, 0);
    rec[0] = 7;
    out.write(rec.data(), static_cast<std::streamsize>(rec.size()));
  }
  EXPECT_EQ(load_cifar10_binary(path).clean_labels, std::vector<int>{7});
  std::filesystem::remove(path);
  EXPECT_THROW(load_cifar10_binary(path), IoError);
}

TEST(Nlab, RoundTripsImagesAndVectors) {
  SyntheticSpec s;
  s.samples = 40;
  for (auto kind : {SyntheticKind::mini_image, SyntheticKind::blobs}) {
    s.kind = kind;
    const auto d = inject_symmetric(generate_synthetic(s), 0.5, 4);
    std::istringstream is(nlab_bytes(d));
    const auto r = read_nlab(is);
    EXPECT_EQ(r.features.data, d.features.data);
    EXPECT_EQ(r.clean_labels, d.clean_labels);
    EXPECT_EQ(r.noisy_labels, d.noisy_labels);
    EXPECT_EQ(r.feature_width, d.feature_width);
    EXPECT_EQ(r.image.is_image(), d.image.is_image());
    EXPECT_EQ(r.class_count, d.class_count);
  }
}

TEST(Nlab, HeaderLayout) {
  const auto bytes = nlab_bytes(balanced(2, 2));
  ASSERT_EQ(bytes.size(), 4 + 4 + 8 + 16 + 2 * 4 * 8 + 2 * 2 * 4);
  EXPECT_EQ(bytes.substr(0, 4), "NLAB");
  EXPECT_EQ(bytes[4], 1);   // version, little-endian
  EXPECT_EQ(bytes[8], 2);   // n
  EXPECT_EQ(bytes[16], 0);  // C = 0 marks vector data
  EXPECT_EQ(bytes[24], 4);  // W = d
  EXPECT_EQ(bytes[28], 2);  // K
}

TEST(Nlab, RejectsCorruptInput) {
  std::string bytes = nlab_bytes(balanced(2, 4));
  std::string bad_magic = bytes;
  bad_magic[0] = 'X';
  std::istringstream a(bad_magic);
  EXPECT_THROW(read_nlab(a), FormatError);
  std::istringstream b(bytes.substr(0, bytes.size() - 3));
  EXPECT_THROW(read_nlab(b), FormatError);
  std::string bad_label = bytes;
  bad_label[bytes.size() - 4] = 5;  // last noisy label -> 5 with K = 2
  std::istringstream c(bad_label);
  EXPECT_THROW(read_nlab(c), FormatError);
}

TEST(SymmetricNoise, ZeroRatioIsIdentity) {
  const auto d = balanced(4, 40);
  const auto n = inject_symmetric(d, 0.0, 1);
  EXPECT_EQ(n.noisy_labels, d.clean_labels);
  EXPECT_EQ(noise_accuracy(n), 1.0);
}

TEST(SymmetricNoise, FullRatioOnTwoClassesFlipsEverything) {
  const auto n = inject_symmetric(balanced(2, 30), 1.0, 1);
  for (std::size_t i = 0; i < n.size(); ++i) EXPECT_EQ(n.noisy_labels[i], 1 - n.clean_labels[i]);
  EXPECT_EQ(noise_accuracy(n), 0.0);
}

TEST(SymmetricNoise, ExactPerClassRate) {
  const auto d = balanced(10, 1000);
  const auto n = inject_symmetric(d, 0.4, 9);
  std::vector<int> flipped(10, 0);
  for (std::size_t i = 0; i < n.size(); ++i)
    if (n.noisy_labels[i] != n.clean_labels[i]) ++flipped[static_cast<std::size_t>(n.clean_labels[i])];
  for (int f : flipped) EXPECT_EQ(f, 40);
  EXPECT_DOUBLE_EQ(noise_accuracy(n), 0.6);
  EXPECT_EQ(n.noise.type, NoiseType::symmetric);
  EXPECT_EQ(n.noise.ratio, 0.4);
  EXPECT_EQ(n.noise.seed, 9u);
}

TEST(SymmetricNoise, TouchesOnlyTheNoisyTrackAndIsDeterministic) {
  const auto d = balanced(5, 250);
  const auto a = inject_symmetric(d, 0.7, 11), b = inject_symmetric(d, 0.7, 11);
  EXPECT_EQ(a.features.data, d.features.data);
  EXPECT_EQ(a.clean_labels, d.clean_labels);
  EXPECT_EQ(a.noisy_labels, b.noisy_labels);
  EXPECT_NE(a.noisy_labels, inject_symmetric(d, 0.7, 12).noisy_labels);
  // Targets of corrupted samples cover every other class.
  std::set<std::pair<int, int>> edges;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a.noisy_labels[i] != a.clean_labels[i]) edges.insert({a.clean_labels[i], a.noisy_labels[i]});
  EXPECT_EQ(edges.size(), 20u);
}

TEST(SymmetricNoise, RejectsRatioOutsideUnitInterval) {
  const auto d = balanced(3, 30);
  EXPECT_THROW((void)inject_symmetric(d, -0.1, 1), InvalidArgument);
  EXPECT_THROW((void)inject_symmetric(d, 1.1, 1), InvalidArgument);
}

TEST(AsymmetricNoise, ZeroRatioIsIdentity) {
  const auto d = balanced(10, 100);
  EXPECT_EQ(inject_asymmetric(d, 0.0, AsymmetricMap::default_pairs(10), 1).noisy_labels, d.clean_labels);
}

TEST(AsymmetricNoise, CircularFullRatioShiftsWithinGroups) {
  const auto n = inject_asymmetric(balanced(10, 100), 1.0, AsymmetricMap::circular(5), 1);
  for (std::size_t i = 0; i < n.size(); ++i) {
    const int y = n.clean_labels[i];
    EXPECT_EQ(n.noisy_labels[i], y - y % 5 + (y % 5 + 1) % 5);
  }
  EXPECT_EQ(n.noise.type, NoiseType::asymmetric_circular);
}

TEST(AsymmetricNoise, CircularPartialStaysInGroup) {
  const auto n = inject_asymmetric(balanced(12, 600), 0.3, AsymmetricMap::circular(4), 5);
  for (std::size_t i = 0; i < n.size(); ++i) EXPECT_EQ(n.noisy_labels[i] / 4, n.clean_labels[i] / 4);
  EXPECT_DOUBLE_EQ(noise_accuracy(n), 0.7);
}

TEST(AsymmetricNoise, PairMapFlipsOnlyMappedEdges) {
  const auto n = inject_asymmetric(balanced(10, 1000), 0.4, AsymmetricMap::default_pairs(10), 3);
  const std::map<int, int> edges = {{2, 0}, {9, 1}, {4, 7}, {3, 5}, {5, 3}};
  std::vector<int> flipped(10, 0);
  for (std::size_t i = 0; i < n.size(); ++i) {
    const int y = n.clean_labels[i], z = n.noisy_labels[i];
    if (y == z) continue;
    ASSERT_TRUE(edges.count(y)) << "unmapped class " << y << " was corrupted";
    EXPECT_EQ(z, edges.at(y));
    ++flipped[static_cast<std::size_t>(y)];
  }
  for (int c = 0; c < 10; ++c) EXPECT_EQ(flipped[static_cast<std::size_t>(c)], edges.count(c) ? 40 : 0) << c;
  EXPECT_EQ(n.noise.mapping[2], 0);
  EXPECT_EQ(n.noise.mapping[0], -1);
}

TEST(AsymmetricNoise, DefaultMapForOtherClassCountsIsCyclic) {
  const auto m = AsymmetricMap::default_pairs(4).resolve(4);
  EXPECT_EQ(m, (std::vector<int>{1, 2, 3, 0}));
}

TEST(AsymmetricNoise, RejectsMalformedMaps) {
  const auto d = balanced(6, 60);
  AsymmetricMap self;
  self.targets = {0, -1, -1, -1, -1, -1};
  EXPECT_THROW((void)inject_asymmetric(d, 0.5, self, 1), InvalidArgument);
  AsymmetricMap wrong_size;
  wrong_size.targets = {1, 0};
  EXPECT_THROW((void)inject_asymmetric(d, 0.5, wrong_size, 1), InvalidArgument);
  AsymmetricMap out_of_range;
  out_of_range.targets = {6, -1, -1, -1, -1, -1};
  EXPECT_THROW((void)inject_asymmetric(d, 0.5, out_of_range, 1), InvalidArgument);
  EXPECT_THROW((void)inject_asymmetric(d, 0.5, AsymmetricMap::circular(4), 1), InvalidArgument);
  EXPECT_THROW((void)inject_asymmetric(d, 0.5, AsymmetricMap::circular(1), 1), InvalidArgument);
}

TEST(NoiseAccuracy, CountsMatches) {
  LabeledDataset d;
  d.clean_labels = {0, 1, 2, 0};
  d.noisy_labels = {0, 2, 2, 1};
  EXPECT_EQ(noise_accuracy(d), 0.5);
}
