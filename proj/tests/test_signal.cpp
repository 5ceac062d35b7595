#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <set>

#include "mcsnn/ingest.hpp"
#include "support.hpp"

using namespace mcsnn;

namespace {

RawRecording make_recording(std::vector<double> samples, std::vector<int> labels, double rate = 1.0) {
    RawRecording r;
    r.samples = std::move(samples);
    r.labels = std::move(labels);
    r.sample_rate_hz = rate;
    return r;
}

RawRecording uniform_recording(std::size_t n, int label, std::uint64_t seed = 1) {
    Rng rng(seed);
    return make_recording(test::random_sequence(rng, n, 0.0, 1.0), std::vector<int>(n, label));
}

// Mean of each block, computed directly.
std::vector<double> block_means(const std::vector<double>& x, std::size_t f) {
    std::vector<double> out;
    for (std::size_t i = 0; i + f <= x.size(); i += f)
        out.push_back(std::accumulate(x.begin() + static_cast<long>(i), x.begin() + static_cast<long>(i + f), 0.0) /
                      static_cast<double>(f));
    return out;
}

} // namespace

// --- loading -----------------------------------------------------------------

TEST(LoadRecording, ParsesValueLabelCsv) {
    test::TempDir dir("csv");
    const auto path = dir.file("rec.csv");
    test::write_text(path, "# sample_rate_hz: 700\n# modality: eda_chest\nvalue,label\n0.5,0\n1.25,2\n-3,1\n");
    const auto rec = load_recording(path);
    EXPECT_EQ(rec.samples, (std::vector<double>{0.5, 1.25, -3}));
    EXPECT_EQ(rec.labels, (std::vector<int>{0, 2, 1}));
    EXPECT_DOUBLE_EQ(rec.sample_rate_hz, 700.0);
    EXPECT_EQ(rec.modality, Modality::eda_chest);
}

TEST(LoadRecording, MalformedRowNamesFileAndLine) {
    test::TempDir dir("csv");
    const auto path = dir.file("bad.csv");
    test::write_text(path, "value,label\n0.1,0\nabc,0\n");
    try {
        load_recording(path);
        FAIL() << "expected a validation error";
    } catch (const ValidationError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find(path + ":3"), std::string::npos) << msg;
        EXPECT_NE(msg.find("malformed row"), std::string::npos) << msg;
    }
}

TEST(LoadRecording, MissingValueIsLengthMismatch) {
    test::TempDir dir("csv");
    const auto path = dir.file("short.csv");
    test::write_text(path, "value,label\n0.1,0\n,1\n");
    try {
        load_recording(path);
        FAIL();
    } catch (const ValidationError& e) {
        EXPECT_NE(std::string(e.what()).find("length mismatch"), std::string::npos);
    }
}

TEST(LoadRecording, EmptyLabelCellIsDropped) {
    test::TempDir dir("csv");
    const auto path = dir.file("unlabeled.csv");
    test::write_text(path, "value,label\n0.1,\n0.2,0\n");
    const auto rec = load_recording(path);
    EXPECT_EQ(rec.labels, (std::vector<int>{kDropLabel, 0}));
}

TEST(LoadRecording, MissingFileIsValidationError) {
    EXPECT_THROW(load_recording("/nonexistent/dir/file.csv"), ValidationError);
}

// --- minmax_normalize ----------------------------------------------------------

TEST(MinmaxNormalize, MapsRangeToUnitInterval) {
    const auto r = minmax_normalize(make_recording({2, 4, 6}, {0, 0, 0}));
    EXPECT_EQ(r.samples, (std::vector<double>{0.0, 0.5, 1.0}));
}

TEST(MinmaxNormalize, ConstantSignalMapsToZero) {
    const auto r = minmax_normalize(make_recording({3, 3, 3, 3}, {0, 0, 0, 0}));
    EXPECT_EQ(r.samples, (std::vector<double>(4, 0.0)));
}

TEST(MinmaxNormalize, Symmetric) {
    const auto r = minmax_normalize(make_recording({-2, 0, 2}, {0, 0, 0}));
    EXPECT_EQ(r.samples, (std::vector<double>{0.0, 0.5, 1.0}));
}

TEST(MinmaxNormalize, EmptyRecordingRejected) {
    EXPECT_THROW(minmax_normalize(RawRecording{}), ValidationError);
}

TEST(MinmaxNormalize, IdempotentOnRandomSignals) {
    Rng rng(11);
    for (int trial = 0; trial < 200; ++trial) {
        const auto n = static_cast<std::size_t>(uniform_int(rng, 2, 300));
        auto rec = make_recording(test::random_sequence(rng, n, -50.0, 50.0), std::vector<int>(n, 0));
        const auto once = minmax_normalize(rec);
        const auto twice = minmax_normalize(once);
        for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(once.samples[i], twice.samples[i], 1e-12);
        for (double v : once.samples) {
            EXPECT_GE(v, 0.0);
            EXPECT_LE(v, 1.0);
        }
    }
}

// --- downsample -----------------------------------------------------------------

TEST(Downsample, ChestRateToWristRate) {
    const auto r = downsample(uniform_recording(700, 0), 175);
    r.validate();
    EXPECT_EQ(r.size(), 4u);
    EXPECT_DOUBLE_EQ(make_recording({}, {}, 700).sample_rate_hz / 175, 4.0);
    auto rec = uniform_recording(700, 0);
    rec.sample_rate_hz = 700;
    EXPECT_DOUBLE_EQ(downsample(rec, 175).sample_rate_hz, 4.0);
}

TEST(Downsample, FactorOneIsIdentity) {
    const auto rec = uniform_recording(37, 1);
    const auto r = downsample(rec, 1);
    EXPECT_EQ(r.samples, rec.samples);
    EXPECT_EQ(r.labels, rec.labels);
}

TEST(Downsample, BlockMean) {
    const auto r = downsample(make_recording({0, 0, 4, 4}, {0, 0, 0, 0}), 2);
    EXPECT_EQ(r.samples, (std::vector<double>{0, 4}));
}

TEST(Downsample, FactorZeroRejected) {
    EXPECT_THROW(downsample(uniform_recording(4, 0), 0), ValidationError);
}

TEST(Downsample, MajorityLabel) {
    const auto r = downsample(make_recording({0, 0, 0, 0, 0, 0}, {2, 2, 0, 1, 1, 1}), 3);
    EXPECT_EQ(r.labels, (std::vector<int>{2, 1}));
}

TEST(Downsample, MatchesBlockMeanOracleOnRandomInput) {
    Rng rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        const auto f = static_cast<std::size_t>(uniform_int(rng, 1, 9));
        const auto n = static_cast<std::size_t>(uniform_int(rng, 0, 120));
        const auto rec = make_recording(test::random_sequence(rng, n, 0, 1), std::vector<int>(n, 0));
        const auto r = downsample(rec, f);
        const auto expect = block_means(rec.samples, f);
        ASSERT_EQ(r.size(), n / f);
        for (std::size_t i = 0; i < expect.size(); ++i) EXPECT_NEAR(r.samples[i], expect[i], 1e-12);
    }
}

TEST(Downsample, Composes) {
    Rng rng(9);
    for (int trial = 0; trial < 50; ++trial) {
        const auto a = static_cast<std::size_t>(uniform_int(rng, 1, 5));
        const auto b = static_cast<std::size_t>(uniform_int(rng, 1, 5));
        const auto n = a * b * static_cast<std::size_t>(uniform_int(rng, 1, 10));
        const auto rec = make_recording(test::random_sequence(rng, n, 0, 1), std::vector<int>(n, 1));
        const auto direct = downsample(rec, a * b);
        const auto nested = downsample(downsample(rec, a), b);
        ASSERT_EQ(direct.size(), nested.size());
        for (std::size_t i = 0; i < direct.size(); ++i) EXPECT_NEAR(direct.samples[i], nested.samples[i], 1e-12);
        EXPECT_EQ(direct.labels, nested.labels);
    }
}

// --- binarize_labels ----------------------------------------------------------------

TEST(BinarizeLabels, StressBecomesOne) { EXPECT_EQ(binarize_label(2), 1); }

TEST(BinarizeLabels, BaselineAndAmusementBecomeZero) {
    EXPECT_EQ(binarize_label(0), 0);
    EXPECT_EQ(binarize_label(1), 0);
}

TEST(BinarizeLabels, EverythingElseDropped) {
    for (int l : {-1, 3, 4, 5, 6, 7, 100}) EXPECT_EQ(binarize_label(l), kDropLabel) << l;
    const auto r = binarize_labels(make_recording({0, 0, 0, 0}, {0, 1, 2, 4}));
    EXPECT_EQ(r.labels, (std::vector<int>{0, 0, 1, kDropLabel}));
}

// --- window -----------------------------------------------------------------------

TEST(Window, HalfOverlapCount) {
    const auto ds = window(uniform_recording(1024, 1), 256, 0.5);
    EXPECT_EQ(ds.size(), 7u);
    EXPECT_EQ(ds.window_len, 256u);
}

TEST(Window, SingleFit) { EXPECT_EQ(window(uniform_recording(256, 0), 256, 0.5).size(), 1u); }

TEST(Window, MixedLabelWindowDropped) {
    auto rec = uniform_recording(40, 0);
    for (std::size_t i = 20; i < 40; ++i) rec.labels[i] = 1;
    // stride 10: windows start at 0,10,20; only [10,30) mixes labels.
    const auto ds = window(rec, 20, 0.5);
    ASSERT_EQ(ds.size(), 2u);
    EXPECT_EQ(ds.labels, (std::vector<std::uint8_t>{0, 1}));
}

TEST(Window, DropSentinelWindowDropped) {
    auto rec = uniform_recording(30, 1);
    rec.labels[15] = kDropLabel;
    EXPECT_EQ(window(rec, 10, 0.0).size(), 2u);
}

TEST(Window, StartsAtStrideMultiples) {
    std::vector<double> ramp(100);
    for (std::size_t i = 0; i < ramp.size(); ++i) ramp[i] = static_cast<double>(i) / 100.0;
    const auto ds = window(make_recording(ramp, std::vector<int>(100, 0)), 20, 0.75);
    ASSERT_EQ(ds.size(), (100u - 20u) / 5u + 1u);
    for (std::size_t i = 0; i < ds.size(); ++i) EXPECT_DOUBLE_EQ(ds.window(i)[0], static_cast<double>(5 * i) / 100.0);
}

TEST(Window, Errors) {
    EXPECT_THROW(window(uniform_recording(10, 0), 11, 0.5), ValidationError);
    EXPECT_THROW(window(uniform_recording(10, 0), 3, 0.5), ValidationError); // stride 1.5
    EXPECT_THROW(window(uniform_recording(10, 0), 4, 1.0), ValidationError);
}

TEST(Window, CountFormulaMinusImpureWindows) {
    Rng rng(21);
    for (int trial = 0; trial < 100; ++trial) {
        const auto size = static_cast<std::size_t>(uniform_int(rng, 1, 20)) * 2;
        const auto n = size + static_cast<std::size_t>(uniform_int(rng, 0, 200));
        auto rec = uniform_recording(n, 0, static_cast<std::uint64_t>(trial));
        for (auto& l : rec.labels)
            if (uniform01(rng) < 0.01) l = uniform01(rng) < 0.5 ? 1 : kDropLabel;
        const std::size_t stride = size / 2;
        std::size_t expected = 0;
        for (std::size_t s = 0; s + size <= n; s += stride) {
            const int l = rec.labels[s];
            bool pure = l == 0 || l == 1;
            for (std::size_t k = s; k < s + size; ++k) pure = pure && rec.labels[k] == l;
            expected += pure ? 1 : 0;
        }
        EXPECT_EQ(window(rec, size, 0.5).size(), expected);
    }
}

// --- fuse_early ----------------------------------------------------------------------

namespace {

WindowedDataset labeled_parts(std::size_t len, const std::vector<std::uint8_t>& labels, double fill, std::string modality) {
    WindowedDataset ds;
    ds.window_len = len;
    ds.provenance = {{std::move(modality), static_cast<std::uint32_t>(len)}};
    for (auto l : labels) ds.push(std::vector<double>(len, fill), l);
    return ds;
}

} // namespace

TEST(FuseEarly, TwoPartsDoubleLength) {
    std::vector<WindowedDataset> parts{labeled_parts(128, {0, 1}, 0.2, "eda_chest"),
                                       labeled_parts(128, {0, 1}, 0.7, "eda_wrist")};
    const auto f = fuse_early(parts);
    EXPECT_EQ(f.window_len, 256u);
    EXPECT_EQ(f.labels, (std::vector<std::uint8_t>{0, 1}));
    EXPECT_DOUBLE_EQ(f.window(1)[127], 0.2);
    EXPECT_DOUBLE_EQ(f.window(1)[128], 0.7);
    ASSERT_EQ(f.provenance.size(), 2u);
    EXPECT_EQ(f.provenance[1].modality, "eda_wrist");
    f.validate();
}

TEST(FuseEarly, ThreeParts) {
    std::vector<WindowedDataset> parts{labeled_parts(48, {1}, 0.1, "a"), labeled_parts(48, {1}, 0.2, "b"),
                                       labeled_parts(48, {1}, 0.3, "c")};
    EXPECT_EQ(fuse_early(parts).window_len, 144u);
}

TEST(FuseEarly, SinglePartIdentity) {
    std::vector<WindowedDataset> parts{labeled_parts(10, {0, 1, 1}, 0.4, "a")};
    EXPECT_EQ(fuse_early(parts), parts.front());
}

TEST(FuseEarly, MismatchesRejected) {
    std::vector<WindowedDataset> counts{labeled_parts(4, {0, 1}, 0, "a"), labeled_parts(4, {0}, 0, "b")};
    EXPECT_THROW(fuse_early(counts), ValidationError);
    std::vector<WindowedDataset> labels{labeled_parts(4, {0, 1}, 0, "a"), labeled_parts(4, {0, 0}, 0, "b")};
    EXPECT_THROW(fuse_early(labels), ValidationError);
}

// --- split -----------------------------------------------------------------------------

TEST(Split, FloorArithmetic) {
    const auto ds = synth_dataset(10, 8, 1);
    const auto s = split(ds, 0.8, 7);
    EXPECT_EQ(s.train.size(), 8u);
    EXPECT_EQ(s.test.size(), 2u);
    const auto s5 = split(synth_dataset(5, 8, 1), 0.8, 7);
    EXPECT_EQ(s5.train.size(), 4u);
    EXPECT_EQ(s5.test.size(), 1u);
}

TEST(Split, Deterministic) {
    const auto ds = synth_dataset(30, 16, 3);
    const auto a = split(ds, 0.8, 7);
    const auto b = split(ds, 0.8, 7);
    EXPECT_EQ(a.train, b.train);
    EXPECT_EQ(a.test, b.test);
}

TEST(Split, Errors) {
    const auto ds = synth_dataset(10, 8, 1);
    EXPECT_THROW(split(ds, 0.0, 1), ValidationError);
    EXPECT_THROW(split(ds, 1.0, 1), ValidationError);
    auto one = ds.subset(std::vector<std::size_t>{0});
    EXPECT_THROW(split(one, 0.5, 1), ValidationError);
}

TEST(Split, DisjointAndExhaustive) {
    // Tag every window with a unique first value so windows can be traced.
    WindowedDataset ds;
    ds.window_len = 2;
    ds.provenance = {{"synthetic", 2}};
    for (std::size_t i = 0; i < 57; ++i) ds.push(std::vector<double>{static_cast<double>(i) / 100.0, 0.0}, i % 2);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto s = split(ds, 0.7, seed);
        std::multiset<double> seen;
        for (std::size_t i = 0; i < s.train.size(); ++i) seen.insert(s.train.window(i)[0]);
        for (std::size_t i = 0; i < s.test.size(); ++i) seen.insert(s.test.window(i)[0]);
        std::multiset<double> all;
        for (std::size_t i = 0; i < ds.size(); ++i) all.insert(ds.window(i)[0]);
        EXPECT_EQ(seen, all);
    }
}

// --- synth_dataset ----------------------------------------------------------------------

TEST(SynthDataset, Balanced) {
    const auto ds = synth_dataset(100, 256, 42);
    ds.validate();
    EXPECT_EQ(std::count(ds.labels.begin(), ds.labels.end(), 1), 50);
    EXPECT_EQ(std::count(ds.labels.begin(), ds.labels.end(), 0), 50);
}

TEST(SynthDataset, Deterministic) { EXPECT_EQ(synth_dataset(20, 64, 42), synth_dataset(20, 64, 42)); }

TEST(SynthDataset, StressWindowsHaveHigherMean) {
    const auto ds = synth_dataset(100, 256, 42);
    std::vector<double> m0, m1;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const auto w = ds.window(i);
        (ds.labels[i] ? m1 : m0).push_back(std::accumulate(w.begin(), w.end(), 0.0) / static_cast<double>(w.size()));
    }
    std::size_t wins = 0, pairs = 0;
    for (double a : m1)
        for (double b : m0) {
            wins += a > b ? 1 : 0;
            ++pairs;
        }
    EXPECT_GE(static_cast<double>(wins) / static_cast<double>(pairs), 0.95);
}

TEST(SynthDataset, Preconditions) {
    EXPECT_THROW(synth_dataset(1, 16, 0), ValidationError);
    EXPECT_THROW(synth_dataset(4, 7, 0), ValidationError);
}

// --- dataset container and manifest -------------------------------------------------------

TEST(DatasetFile, RoundTripsThroughFloat32) {
    test::TempDir dir("mcqd");
    const auto ds = synth_dataset(12, 32, 4);
    save_dataset(ds, dir.file("d.mcqd"));
    const auto back = load_dataset(dir.file("d.mcqd"));
    EXPECT_EQ(back.labels, ds.labels);
    EXPECT_EQ(back.provenance, ds.provenance);
    ASSERT_EQ(back.values.size(), ds.values.size());
    for (std::size_t i = 0; i < ds.values.size(); ++i)
        EXPECT_EQ(back.values[i], static_cast<double>(static_cast<float>(ds.values[i])));
    const auto bytes = test::read_bytes(dir.file("d.mcqd"));
    ASSERT_GE(bytes.size(), 4u);
    EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "MCQD");
}

TEST(DatasetFile, TruncatedFileRejected) {
    test::TempDir dir("mcqd");
    save_dataset(synth_dataset(4, 16, 1), dir.file("d.mcqd"));
    auto bytes = test::read_bytes(dir.file("d.mcqd"));
    bytes.pop_back();
    test::write_text(dir.file("t.mcqd"), std::string(bytes.begin(), bytes.end()));
    EXPECT_THROW(load_dataset(dir.file("t.mcqd")), ValidationError);
    test::write_text(dir.file("m.mcqd"), "XXXX");
    EXPECT_THROW(load_dataset(dir.file("m.mcqd")), ValidationError);
}

TEST(Manifest, TwoStreamPipelineFusesAndSplits) {
    test::TempDir dir("manifest");
    // chest at 8 Hz downsampled by 2 lines up with a 4 Hz wrist stream.
    std::string chest = "# sample_rate_hz: 8\nvalue,label\n", wrist = "# sample_rate_hz: 4\nvalue,label\n";
    for (int i = 0; i < 128; ++i) chest += std::to_string(i % 7) + "," + (i < 64 ? "0" : "2") + "\n";
    for (int i = 0; i < 64; ++i) wrist += std::to_string(i % 5) + "," + (i < 32 ? "1" : "2") + "\n";
    test::write_text(dir.file("chest.csv"), chest);
    test::write_text(dir.file("wrist.csv"), wrist);
    test::write_text(dir.file("m.json"), R"({"window": 8, "overlap": 0.5, "train_fraction": 0.5, "seed": 3,
      "streams": [{"path": "chest.csv", "modality": "eda_chest", "downsample_factor": 2},
                  {"path": "wrist.csv", "modality": "eda_wrist"}]})");
    const auto m = parse_manifest(dir.file("m.json"));
    const auto fused = ingest_fused(m);
    EXPECT_EQ(fused.window_len, 16u);
    EXPECT_EQ(fused.size(), 14u); // 15 windows of 8 over 64 at stride 4, minus the one straddling the change
    fused.validate();
    const auto s = run_ingest(m);
    EXPECT_EQ(s.train.size() + s.test.size(), fused.size());
}

TEST(Manifest, MissingInputNamesPath) {
    test::TempDir dir("manifest");
    test::write_text(dir.file("m.json"), R"({"streams": [{"path": "nope.csv"}]})");
    const auto m = parse_manifest(dir.file("m.json"));
    try {
        ingest_fused(m);
        FAIL();
    } catch (const ValidationError& e) {
        EXPECT_NE(std::string(e.what()).find("nope.csv"), std::string::npos);
    }
}

TEST(Manifest, SyntheticEntry) {
    test::TempDir dir("manifest");
    test::write_text(dir.file("m.json"), R"({"synthetic": {"n_windows": 10, "window_len": 24, "seed": 1}})");
    const auto ds = ingest_fused(parse_manifest(dir.file("m.json")));
    EXPECT_EQ(ds, synth_dataset(10, 24, 1));
}
