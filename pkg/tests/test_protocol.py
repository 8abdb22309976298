import dataclasses

import numpy as np
import pytest

from fedgrid.codec import encode_message
from fedgrid.data import default_base_profile, extract_samples, generate_feeder
from fedgrid.errors import DataError, DivergenceError, IncompleteRoundError, ProtocolDesyncError
from fedgrid.nn import GradientStep, Hyperparams, LayerSpec, apply_step, gradient_step, init_weights
from fedgrid.protocol import (
    AggregationWeights,
    Federate,
    GlobalModel,
    GradientReport,
    StopReason,
    WeightBroadcast,
    aggregate,
    local_round,
    train,
)

from .conftest import make_series

SPEC = LayerSpec(6, (20, 20))


@pytest.fixture(scope="module")
def feeder():
    base = default_base_profile(30, 5)
    return [extract_samples(s) for s in generate_feeder(base, 4, 0.1, 6, correlation=0.9)]


def make_feds(datasets, seeds=None):
    seeds = seeds or range(100, 100 + len(datasets))
    return [Federate(i, ds, s) for i, (ds, s) in enumerate(zip(datasets, seeds))]


def zero_step():
    w = init_weights(SPEC, 0)
    return GradientStep(tuple(np.zeros_like(a) for a in w.weights), tuple(np.zeros_like(b) for b in w.biases))


# -- local round ----------------------------------------------------------------

def test_zero_loss_federate_reports_zero_step():
    ds = extract_samples(make_series(np.full(3 * 96, 7.0)))
    f = Federate(0, ds, 1)
    zero = GlobalModel(init_weights(SPEC, 0).scaled(0.0))
    r = local_round(f, zero.broadcast())
    assert r.loss == 0.0
    assert np.all(r.step.flat() == 0.0)


def test_report_size_independent_of_dataset_size():
    sizes = []
    for days in (30, 300):
        ds = extract_samples(default_base_profile(days, 1))
        r = local_round(Federate(0, ds, 9), GlobalModel(init_weights(SPEC, 0)).broadcast())
        sizes.append(len(encode_message(r)))
    assert sizes[0] == sizes[1]


def test_replay_determinism(feeder):
    runs = []
    for _ in range(2):
        f = Federate(0, feeder[1], 77)
        b = GlobalModel(init_weights(SPEC, 3)).broadcast()
        runs.append(encode_message(local_round(f, b)))
    assert runs[0] == runs[1]


def test_stale_round_is_rejected(feeder):
    f = Federate(0, feeder[0], 1)
    g = GlobalModel(init_weights(SPEC, 0))
    local_round(f, g.broadcast())
    with pytest.raises(ProtocolDesyncError):
        local_round(f, g.broadcast())


def test_federate_adopts_broadcast_weights(feeder):
    f = Federate(0, feeder[0], 1)
    b = GlobalModel(init_weights(SPEC, 4)).broadcast()
    local_round(f, b)
    assert f.current_weights is b.weights


def test_short_days_are_not_drawn():
    v = np.full(3 * 96, 5.0) + np.arange(3 * 96) % 7
    v[96 * 2 + 10] = np.nan  # day 3 loses samples
    ds = extract_samples(make_series(v))
    f = Federate(0, ds, 2)
    assert f.num_days == 1
    with pytest.raises(DataError):
        Federate(0, extract_samples(make_series(v[:96 + 50])), 2)


def test_messages_carry_no_sample_fields():
    fields = {f.name for f in dataclasses.fields(GradientReport)} | {
        f.name for f in dataclasses.fields(WeightBroadcast)}
    assert fields == {"round", "federate", "step", "loss", "weights"}


# -- aggregation --------------------------------------------------------------

def test_single_federate_reduces_to_plain_update(feeder):
    g = GlobalModel(init_weights(SPEC, 0))
    r = local_round(Federate(0, feeder[0], 1), g.broadcast())
    g2 = aggregate(g, [r], AggregationWeights((1.0,)))
    assert g2.weights.equals(apply_step(g.weights, r.step))
    assert g2.round == 1


def test_identical_reports_average_to_one_step(feeder):
    g = GlobalModel(init_weights(SPEC, 0))
    k = 5
    feds = make_feds([feeder[2]] * k, seeds=[3] * k)
    reports = [local_round(f, g.broadcast()) for f in feds]
    avg = aggregate(g, reports, AggregationWeights.uniform(k))
    single = apply_step(g.weights, reports[0].step)
    assert avg.weights.max_abs_diff(single) <= 1e-12


def test_zero_reports_leave_weights(feeder):
    g = GlobalModel(init_weights(SPEC, 0), round=4)
    reports = [GradientReport(4, i, zero_step(), 0.0) for i in range(3)]
    g2 = aggregate(g, reports, AggregationWeights.uniform(3))
    assert g2.weights.equals(g.weights) and g2.round == 5


def test_incomplete_and_duplicate_rounds():
    g = GlobalModel(init_weights(SPEC, 0))
    alpha = AggregationWeights.uniform(3)
    with pytest.raises(IncompleteRoundError):
        aggregate(g, [GradientReport(0, i, zero_step(), 0.0) for i in (0, 1)], alpha)
    with pytest.raises(IncompleteRoundError):
        aggregate(g, [GradientReport(0, i, zero_step(), 0.0) for i in (0, 1, 1, 2)], alpha)
    with pytest.raises(ProtocolDesyncError):
        aggregate(g, [GradientReport(1, i, zero_step(), 0.0) for i in (0, 1, 2)], alpha)


def test_aggregation_order_independent_of_report_order(feeder):
    g = GlobalModel(init_weights(SPEC, 0))
    feds = make_feds(feeder)
    reports = [local_round(f, g.broadcast()) for f in feds]
    alpha = AggregationWeights((0.1, 0.2, 0.3, 0.4))
    a = aggregate(g, reports, alpha)
    b = aggregate(g, list(reversed(reports)), alpha)
    assert a.weights.equals(b.weights)


def test_alpha_validation():
    with pytest.raises(ValueError):
        AggregationWeights((0.5, -0.1))
    with pytest.raises(ValueError):
        AggregationWeights.from_mode("median", 3)
    assert AggregationWeights.from_mode("sum", 2).alpha == (1.0, 1.0)


# -- training loop --------------------------------------------------------------

def test_infinite_tolerance_stops_after_one_round(feeder):
    g, log = train(GlobalModel(init_weights(SPEC, 0)), make_feds(feeder),
                   Hyperparams(tolerance=float("inf")))
    assert len(log) == 1 and log.stop_reason is StopReason.TOLERANCE_REACHED
    assert g.round == 1


def test_zero_tolerance_runs_to_epoch_cap(feeder):
    g, log = train(GlobalModel(init_weights(SPEC, 0)), make_feds(feeder), Hyperparams(tolerance=0.0))
    assert len(log) == 150 and log.stop_reason is StopReason.EPOCH_CAP_REACHED
    assert [r.round for r in log.rounds] == list(range(150))
    assert g.round == 150


def centralized_sgd(w, ds_fed: Federate, seed, rounds, eta):
    """Plain SGD on one worker's normalised data with the same day draws."""
    rng = np.random.default_rng(seed)
    traj = []
    for _ in range(rounds):
        day = int(rng.integers(ds_fed.num_days))
        w = apply_step(w, gradient_step(w, ds_fed.day_batch(day), eta))
        traj.append(w)
    return traj


def test_single_federate_matches_centralized_sgd(feeder):
    w0 = init_weights(SPEC, 1)
    traj = []
    train(GlobalModel(w0), [Federate(0, feeder[0], 55)], Hyperparams(max_epochs=40, tolerance=0.0),
          AggregationWeights((1.0,)), observer=lambda t, g, r: traj.append(g.weights))
    oracle = centralized_sgd(w0, Federate(0, feeder[0], 55), 55, 40, 0.001)
    assert all(a.max_abs_diff(b) <= 1e-12 for a, b in zip(traj, oracle))


def test_thread_count_does_not_change_result(feeder):
    out = []
    for workers in (1, 4):
        g, log = train(GlobalModel(init_weights(SPEC, 0)), make_feds(feeder),
                       Hyperparams(max_epochs=20, tolerance=0.0), workers=workers)
        out.append((g.weights.flat(), log.losses))
    assert np.array_equal(out[0][0], out[1][0]) and out[0][1] == out[1][1]


def test_divergence_names_round(feeder):
    with pytest.raises(DivergenceError) as e:
        train(GlobalModel(init_weights(SPEC, 0)), make_feds(feeder),
              Hyperparams(learning_rate=1e6, tolerance=0.0))
    assert e.value.round >= 0 and f"round {e.value.round}" in str(e.value)
