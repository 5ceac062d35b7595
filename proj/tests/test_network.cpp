#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "mcsnn/network.hpp"
#include "support.hpp"

using namespace mcsnn;

namespace {

NeuronSpec lif_neuron(double beta, double threshold) {
    NeuronSpec n;
    n.kind = NeuronKind::lif;
    n.beta = beta;
    n.threshold = threshold;
    return n;
}

SpikeTensor constant_input(std::size_t t, std::size_t b, std::size_t f, std::uint8_t v) {
    SpikeTensor x(t, b, f);
    for (std::size_t i = 0; i < t; ++i)
        for (std::size_t j = 0; j < b; ++j)
            for (std::size_t k = 0; k < f; ++k) x.set(i, j, k, v);
    return x;
}

SpikeTensor random_input(Rng& rng, std::size_t t, std::size_t b, std::size_t f, double p) {
    SpikeTensor x(t, b, f);
    for (std::size_t i = 0; i < t; ++i)
        for (std::size_t j = 0; j < b; ++j)
            for (std::size_t k = 0; k < f; ++k) x.set(i, j, k, uniform01(rng) < p ? 1 : 0);
    return x;
}

SplitDataset small_split(std::size_t n, std::size_t len, std::uint64_t seed) {
    return split(synth_dataset(n, len, seed), 0.75, seed);
}

TrainConfig quick_config(std::size_t epochs) {
    TrainConfig c;
    c.epochs = epochs;
    c.batch_size = 8;
    c.seed = 11;
    return c;
}

} // namespace

// --- losses -------------------------------------------------------------------------

TEST(CountMseLoss, Examples) {
    EXPECT_DOUBLE_EQ(count_mse_loss({20, 5}, 0, 25), 0.0);
    EXPECT_DOUBLE_EQ(count_mse_loss({0, 0}, 1, 25), (25.0 + 400.0) / 2.0);
    EXPECT_DOUBLE_EQ(count_mse_loss({25, 25}, 0, 25), (25.0 + 400.0) / 2.0);
}

TEST(CountMseLoss, RejectsBadInput) {
    EXPECT_THROW(count_mse_loss({1, 1}, 2, 25), ValidationError);
    EXPECT_THROW(count_mse_loss({-1, 1}, 0, 25), ValidationError);
}

TEST(CeRateLoss, Examples) {
    const std::vector<std::array<double, 2>> even{{0, 0}};
    EXPECT_NEAR(ce_rate_loss(even, 0), std::log(2.0), 1e-12);
    const std::vector<std::array<double, 2>> one{{1, 0}};
    EXPECT_NEAR(ce_rate_loss(one, 0), std::log(1.0 + std::exp(-1.0)), 1e-12);
    EXPECT_NEAR(ce_rate_loss(one, 1), std::log(1.0 + std::exp(1.0)), 1e-12);
    const std::vector<std::array<double, 2>> two{{1, 0}, {0, 0}};
    EXPECT_NEAR(ce_rate_loss(two, 0), (std::log(1.0 + std::exp(-1.0)) + std::log(2.0)) / 2.0, 1e-12);
    EXPECT_THROW(ce_rate_loss(std::span<const std::array<double, 2>>{}, 0), ValidationError);
}

TEST(LossOnTape, MatchesScalarLosses) {
    Rng rng(1);
    for (auto loss : {LossKind::count_mse, LossKind::ce_rate}) {
        const auto spec = make_dense_spec(6, {5}, lif_neuron(0.8, 0.5), loss, 7);
        auto model = init_model(spec, 3);
        const auto x = random_input(rng, 7, 4, 6, 0.5);
        const std::vector<int> labels{0, 1, 1, 0};
        ad::Tape tape;
        const auto f = forward_on_tape(tape, model, x);
        const double got = tape.value(loss_on_tape(tape, f, labels, loss, 7))(0, 0);
        double expect = 0.0;
        for (std::size_t b = 0; b < labels.size(); ++b) {
            const auto r = static_cast<Eigen::Index>(b);
            if (loss == LossKind::count_mse) {
                expect += count_mse_loss({f.counts(r, 0), f.counts(r, 1)}, labels[b], 7);
            } else {
                std::vector<std::array<double, 2>> acts;
                for (auto o : f.outputs) acts.push_back({tape.value(o)(r, 0), tape.value(o)(r, 1)});
                expect += ce_rate_loss(acts, labels[b]);
            }
        }
        EXPECT_NEAR(got, expect / 4.0, 1e-12);
    }
}

// --- spec and parameters -----------------------------------------------------------

TEST(NetworkSpec, ValidationRejectsBadShapes) {
    auto spec = make_dense_spec(4, {3}, NeuronSpec{});
    EXPECT_NO_THROW(validate(spec));
    auto no_act = spec;
    no_act.layers.pop_back();
    EXPECT_THROW(validate(no_act), ValidationError);
    auto three = spec;
    three.layers[2].units = 3;
    EXPECT_THROW(validate(three), ValidationError);
    auto bad_drop = spec;
    LayerSpec d;
    d.kind = LayerKind::dropout;
    d.dropout = 0.7;
    bad_drop.layers.insert(bad_drop.layers.begin() + 2, d);
    EXPECT_THROW(validate(bad_drop), ValidationError);
    auto zero_in = spec;
    zero_in.input_dim = 0;
    EXPECT_THROW(validate(zero_in), ValidationError);
}

TEST(NetworkSpec, JsonRoundTrip) {
    auto spec = make_dense_spec(9, {4, 3}, NeuronSpec{}, LossKind::ce_rate, 13, 0.01, LayerKind::qdense, 6);
    LayerSpec d;
    d.kind = LayerKind::dropout;
    d.dropout = 0.25;
    spec.layers.insert(spec.layers.begin() + 2, d);
    EXPECT_EQ(network_spec_from_json(to_json(spec)), spec);
}

TEST(Parameters, CountMatchesHandFormula) {
    // dense 4x3 + bias, mcleaky (6 per neuron), dense 3x2 + bias, mcleaky.
    const auto spec = make_dense_spec(4, {3}, NeuronSpec{});
    EXPECT_EQ(parameter_count(spec), 4u * 3 + 3 + 3 * 6 + 3 * 2 + 2 + 2 * 6);
    EXPECT_EQ(init_model(spec, 0).parameter_count(), parameter_count(spec));
    NeuronSpec lif = lif_neuron(0.9, 1.0);
    EXPECT_EQ(parameter_count(make_dense_spec(4, {3}, lif)), 4u * 3 + 3 + 3 * 2 + 3 * 2 + 2 + 2 * 2);
}

TEST(Parameters, InitIsSeededAndBounded) {
    const auto spec = make_dense_spec(16, {8}, NeuronSpec{});
    const auto a = init_model(spec, 5), b = init_model(spec, 5), c = init_model(spec, 6);
    EXPECT_EQ(a.flat(), b.flat());
    EXPECT_NE(a.flat(), c.flat());
    const auto& w = a.param(0, "weight").value;
    EXPECT_LE(w.cwiseAbs().maxCoeff(), 0.25);
    EXPECT_EQ(a.param(1, "alpha_s").value(0, 0), 0.3);
    EXPECT_EQ(a.param(1, "beta_d1").value(0, 0), 0.875);
    EXPECT_THROW(a.param(0, "threshold"), ValidationError);
}

TEST(Parameters, FlatRoundTrip) {
    auto m = init_model(make_dense_spec(5, {4}, NeuronSpec{}), 1);
    auto v = m.flat();
    for (auto& x : v) x += 0.5;
    m.set_flat(v);
    EXPECT_EQ(m.flat(), v);
    v.pop_back();
    EXPECT_THROW(m.set_flat(v), ValidationError);
}

// --- forward --------------------------------------------------------------------------

TEST(Forward, SilentInputWithZeroBiasIsSilent) {
    for (auto kind : {NeuronKind::lif, NeuronKind::clif, NeuronKind::mcleaky, NeuronKind::qmcleaky}) {
        NeuronSpec n;
        n.kind = kind;
        auto model = init_model(make_dense_spec(6, {4}, n), 2);
        model.param(0, "bias").value.setZero();
        model.param(2, "bias").value.setZero();
        const auto r = forward(model, constant_input(10, 3, 6, 0));
        for (const auto& c : r.counts) EXPECT_EQ(c, (std::array<double, 2>{0, 0})) << to_string(kind);
    }
}

TEST(Forward, IdentityLifFiresEveryStep) {
    // Identity weights, zero leak and threshold 0.5: a unit current leaves
    // 0.5 after each reset, so the neuron fires on every step.
    auto model = init_model(make_dense_spec(2, {}, lif_neuron(0.0, 0.5)), 0);
    model.param(0, "weight").value = ad::Matrix::Identity(2, 2);
    model.param(0, "bias").value.setZero();
    const auto r = forward(model, constant_input(17, 2, 2, 1));
    for (const auto& c : r.counts) EXPECT_EQ(c, (std::array<double, 2>{17, 17}));
}

TEST(Forward, SpikeStatsAccountForEveryLayerInput) {
    Rng rng(4);
    auto model = init_model(make_dense_spec(5, {3}, NeuronSpec{}), 4);
    const auto x = random_input(rng, 9, 6, 5, 0.4);
    const auto r = forward(model, x);
    ASSERT_EQ(r.stats.size(), 2u);
    const auto in_total = std::accumulate(x.raw().begin(), x.raw().end(), 0.0);
    EXPECT_EQ(r.stats[0].input_spikes_total, in_total);
    EXPECT_EQ(r.stats[0].n_synapses, 15u);
    EXPECT_EQ(r.stats[0].presentations, 6u);
    // The second dense layer sees the first activation's spikes.
    EXPECT_EQ(r.stats[1].input_spikes_total, r.layer_output_totals[1]);
    EXPECT_EQ(r.stats[1].n_input_neurons, 3u);
    for (const auto& s : r.stats) EXPECT_NO_THROW(s.validate());
    double out_total = 0;
    for (const auto& c : r.counts) out_total += c[0] + c[1];
    EXPECT_EQ(out_total, r.layer_output_totals.back());
}

TEST(Forward, BatchRowsAreIndependent) {
    Rng rng(5);
    auto model = init_model(make_dense_spec(4, {6}, NeuronSpec{}), 5);
    const auto x = random_input(rng, 8, 3, 4, 0.5);
    const auto all = forward(model, x);
    for (std::size_t b = 0; b < 3; ++b) {
        SpikeTensor one(8, 1, 4);
        for (std::size_t t = 0; t < 8; ++t)
            for (std::size_t f = 0; f < 4; ++f) one.set(t, 0, f, x(t, b, f));
        EXPECT_EQ(forward(model, one).counts[0], all.counts[b]);
    }
}

TEST(Forward, InputWidthMismatchRejected) {
    auto model = init_model(make_dense_spec(4, {3}, NeuronSpec{}), 0);
    EXPECT_THROW(forward(model, constant_input(3, 1, 5, 1)), ValidationError);
}

TEST(Forward, DropoutIsIdentityAtInference) {
    auto plain = make_dense_spec(6, {5}, NeuronSpec{});
    auto dropped = plain;
    LayerSpec d;
    d.kind = LayerKind::dropout;
    d.dropout = 0.5;
    dropped.layers.insert(dropped.layers.begin() + 2, d);
    const auto a = init_model(plain, 7), b = init_model(dropped, 7);
    ASSERT_EQ(a.flat(), b.flat());
    Rng rng(6);
    const auto x = random_input(rng, 10, 4, 6, 0.5);
    EXPECT_EQ(forward(a, x).counts, forward(b, x).counts);
}

TEST(Forward, ZeroRateDropoutIsIdentityInTraining) {
    auto spec = make_dense_spec(6, {5}, NeuronSpec{});
    LayerSpec d;
    d.kind = LayerKind::dropout;
    spec.layers.insert(spec.layers.begin() + 2, d);
    auto m = init_model(spec, 8);
    Rng rng(7);
    const auto x = random_input(rng, 10, 4, 6, 0.5);
    ad::Tape t1(false), t2(false);
    ForwardOptions train;
    train.train = true;
    train.dropout_seed = 99;
    EXPECT_EQ(forward_on_tape(t1, m, x, train).counts, forward_on_tape(t2, m, x).counts);
}

// --- prediction and evaluation ------------------------------------------------------

TEST(Predict, TiesGoToClassZero) {
    EXPECT_EQ(predict_from_counts({0, 0}), 0);
    EXPECT_EQ(predict_from_counts({3, 3}), 0);
    EXPECT_EQ(predict_from_counts({2, 3}), 1);
    EXPECT_EQ(predict_from_counts({4, 3}), 0);
}

TEST(Evaluate, BatchSizeDoesNotChangePredictions) {
    const auto ds = synth_dataset(23, 12, 3);
    const auto model = init_model(make_dense_spec(12, {6}, NeuronSpec{}, LossKind::count_mse, 10), 1);
    const auto a = evaluate(model, ds, 5, 64);
    const auto b = evaluate(model, ds, 5, 4);
    EXPECT_EQ(a.predictions, b.predictions);
    EXPECT_EQ(a.accuracy, b.accuracy);
    ASSERT_EQ(a.spike_stats.size(), b.spike_stats.size());
    for (std::size_t l = 0; l < a.spike_stats.size(); ++l) {
        EXPECT_EQ(a.spike_stats[l].presentations, 23u);
        EXPECT_EQ(b.spike_stats[l].presentations, 23u);
        EXPECT_NEAR(a.spike_stats[l].input_spikes_total, b.spike_stats[l].input_spikes_total, 1e-9);
    }
}

TEST(Evaluate, AccuracyCountsMatchingPredictions) {
    const auto ds = synth_dataset(20, 12, 4);
    const auto model = init_model(make_dense_spec(12, {6}, NeuronSpec{}, LossKind::count_mse, 8), 2);
    const auto r = evaluate(model, ds);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < ds.size(); ++i) correct += r.predictions[i] == ds.labels[i] ? 1 : 0;
    EXPECT_DOUBLE_EQ(r.accuracy, static_cast<double>(correct) / 20.0);
    EXPECT_THROW(evaluate(model, ds.empty_like()), ValidationError);
}

// --- training ------------------------------------------------------------------------

TEST(CosineAnneal, Examples) {
    EXPECT_DOUBLE_EQ(cosine_anneal(1.0, 0.0, 0, 10), 1.0);
    EXPECT_NEAR(cosine_anneal(1.0, 0.0, 5, 10), 0.5, 1e-12);
    EXPECT_NEAR(cosine_anneal(1.0, 0.2, 10, 10), 1.0, 1e-12); // restarts
    EXPECT_THROW(cosine_anneal(1.0, 0.0, 0, 0), ValidationError);
    for (std::size_t e = 0; e < 30; ++e) {
        const double lr = cosine_anneal(0.01, 0.001, e, 7);
        EXPECT_GE(lr, 0.001 - 1e-15);
        EXPECT_LE(lr, 0.01 + 1e-15);
    }
}

TEST(Train, ZeroStepsLeavesParametersUnchanged) {
    const auto data = small_split(16, 10, 1);
    const auto spec = make_dense_spec(10, {4}, NeuronSpec{}, LossKind::count_mse, 6);
    auto model = init_model(spec, 3);
    const auto before = model.flat();
    auto cfg = quick_config(1);
    cfg.max_steps = 0;
    train_model(model, data, cfg);
    EXPECT_EQ(model.flat(), before);
    EXPECT_TRUE(model.history.empty());
}

TEST(Train, OneStepMovesTrainableParameters) {
    const auto data = small_split(16, 10, 1);
    const auto spec = make_dense_spec(10, {4}, NeuronSpec{}, LossKind::ce_rate, 6);
    auto model = init_model(spec, 3);
    const auto before = model.flat();
    auto cfg = quick_config(1);
    cfg.max_steps = 1;
    train_model(model, data, cfg);
    EXPECT_NE(model.flat(), before);
}

TEST(Train, Deterministic) {
    const auto data = small_split(20, 10, 2);
    const auto spec = make_dense_spec(10, {4}, NeuronSpec{}, LossKind::ce_rate, 6);
    const auto a = bptt_train(spec, data, quick_config(2));
    const auto b = bptt_train(spec, data, quick_config(2));
    EXPECT_EQ(a.flat(), b.flat());
    EXPECT_EQ(a.history, b.history);
}

TEST(Train, KeepsParametersInTheirRanges) {
    const auto data = small_split(24, 10, 3);
    auto spec = make_dense_spec(10, {4}, NeuronSpec{}, LossKind::count_mse, 6);
    spec.learning_rate = 0.5; // large steps push against the bounds
    const auto m = bptt_train(spec, data, quick_config(2));
    for (const auto& p : m.params) {
        if (p.constraint == ad::Constraint::decay) {
            EXPECT_GE(p.value.minCoeff(), 0.0);
            EXPECT_LE(p.value.maxCoeff(), 1.0);
        }
        if (p.constraint == ad::Constraint::threshold) {
            EXPECT_GE(p.value.minCoeff(), kMinThreshold);
            EXPECT_LE(p.value.maxCoeff(), kMaxThreshold);
        }
    }
}

TEST(Train, FrozenParametersStayFixed) {
    const auto data = small_split(16, 10, 4);
    NeuronSpec n;
    n.learn_decay = false;
    n.learn_threshold = false;
    const auto spec = make_dense_spec(10, {4}, n, LossKind::ce_rate, 6);
    auto m = init_model(spec, 1);
    const auto alpha = m.param(1, "alpha_d1").value;
    const auto theta = m.param(1, "threshold").value;
    train_model(m, data, quick_config(1));
    EXPECT_EQ(m.param(1, "alpha_d1").value, alpha);
    EXPECT_EQ(m.param(1, "threshold").value, theta);
}

TEST(Train, HistoryExtendsAcrossCalls) {
    const auto data = small_split(16, 10, 5);
    const auto spec = make_dense_spec(10, {4}, NeuronSpec{}, LossKind::ce_rate, 6);
    auto m = init_model(spec, 1);
    std::vector<std::size_t> seen;
    train_model(m, data, quick_config(2), [&](const EpochRecord& r) { seen.push_back(r.epoch); });
    train_model(m, data, quick_config(1), [&](const EpochRecord& r) { seen.push_back(r.epoch); });
    EXPECT_EQ(seen, (std::vector<std::size_t>{0, 1, 2}));
    ASSERT_EQ(m.history.size(), 3u);
    for (const auto& r : m.history) {
        EXPECT_TRUE(std::isfinite(r.loss));
        EXPECT_GE(r.test_acc, 0.0);
        EXPECT_LE(r.test_acc, 1.0);
    }
    EXPECT_EQ(m.spike_stats.size(), 2u);
}

TEST(Train, CosineScheduleRecordedPerEpoch) {
    const auto data = small_split(16, 10, 6);
    const auto spec = make_dense_spec(10, {4}, NeuronSpec{}, LossKind::ce_rate, 5, 0.01);
    auto cfg = quick_config(4);
    cfg.schedule = LrSchedule::cosine;
    cfg.lr_min = 0.001;
    const auto m = bptt_train(spec, data, cfg);
    for (const auto& r : m.history) EXPECT_DOUBLE_EQ(r.lr, cosine_anneal(0.01, 0.001, r.epoch, 4));
}

TEST(Train, RejectsMismatchedData) {
    const auto data = small_split(16, 10, 7);
    const auto spec = make_dense_spec(12, {4}, NeuronSpec{});
    EXPECT_THROW(bptt_train(spec, data, quick_config(1)), ValidationError);
    auto cfg = quick_config(1);
    cfg.epochs = 0;
    EXPECT_THROW(bptt_train(make_dense_spec(10, {4}, NeuronSpec{}), data, cfg), ValidationError);
}

TEST(Loso, OneFoldPerSubject) {
    std::vector<WindowedDataset> subjects;
    for (std::uint64_t s = 0; s < 3; ++s) subjects.push_back(synth_dataset(8, 10, 100 + s));
    const auto spec = make_dense_spec(10, {3}, NeuronSpec{}, LossKind::ce_rate, 5);
    const auto r = loso_evaluate(spec, subjects, quick_config(1));
    ASSERT_EQ(r.per_subject.size(), 3u);
    EXPECT_NEAR(r.mean, (r.per_subject[0] + r.per_subject[1] + r.per_subject[2]) / 3.0, 1e-12);
    for (double a : r.per_subject) {
        // Eight windows per subject: accuracies are multiples of 1/8.
        EXPECT_NEAR(a * 8.0, std::round(a * 8.0), 1e-9);
    }
    EXPECT_THROW(loso_evaluate(spec, std::span(subjects).first(1), quick_config(1)), ValidationError);
}

TEST(Train, ExtendingEpochsNeverLowersBestTrainAccuracy) {
    // With a constant schedule the first epochs of a longer run replay the
    // shorter run exactly.
    const auto data = small_split(24, 10, 8);
    const auto spec = make_dense_spec(10, {4}, NeuronSpec{}, LossKind::count_mse, 6);
    const auto short_run = bptt_train(spec, data, quick_config(3));
    const auto long_run = bptt_train(spec, data, quick_config(5));
    ASSERT_EQ(long_run.history.size(), 5u);
    for (std::size_t e = 0; e < 3; ++e) EXPECT_EQ(long_run.history[e], short_run.history[e]);
    auto best = [](const TrainedModel& m) {
        double b = 0;
        for (const auto& r : m.history) b = std::max(b, r.train_acc);
        return b;
    };
    EXPECT_GE(best(long_run), best(short_run));
}
