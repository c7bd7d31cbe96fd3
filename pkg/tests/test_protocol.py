import math

import numpy as np
import pytest

from sigforge.errors import ConfigError, InsufficientGenuine, SingleWriterDataset
from sigforge.protocol import (
    RECORD_COLUMNS,
    SUMMARY_COLUMNS,
    TRIAL_COLUMNS,
    ProtocolConfig,
    TrialRecord,
    aggregate_records,
    compute_feature_table,
    fit_split_reduction,
    format_aggregates,
    format_records,
    format_summary,
    parse_records,
    prepare_training,
    run_protocol,
    run_writer_trial,
    split_trial,
    trial_seed,
    write_report,
)
from sigforge.signals import Dataset, SynthConfig, WriterRecord, generate_synthetic_dataset

FAST = dict(k_reduced=8, epochs=4, trials=2)


@pytest.fixture(scope="module")
def mcyt_shape():
    return generate_synthetic_dataset(SynthConfig(num_writers=3, genuine_per_writer=25, skilled_per_writer=25,
                                                  points_per_signature=40, seed=1))


@pytest.fixture(scope="module")
def small_report(small_dataset):
    cfg = ProtocolConfig(genuine_train_counts=(1, 5), **FAST)
    return run_protocol(small_dataset, cfg)


# --- splits ----------------------------------------------------------------------

def test_split_mcyt_shape(mcyt_shape):
    s = split_trial(mcyt_shape, "w001", 5, 0, seed=0)
    assert (len(s.train_genuine), len(s.train_random_forgery)) == (5, 5)
    assert (len(s.test_genuine), len(s.test_skilled), len(s.test_random)) == (20, 25, 25)


def test_split_invariants(mcyt_shape):
    for w in mcyt_shape.writers:
        for g in (1, 10, 20):
            s = split_trial(mcyt_shape, w, g, 3, seed=9)
            assert not set(s.train_genuine) & set(s.test_genuine)
            assert set(s.train_genuine) | set(s.test_genuine) == {x.sample_id for x in mcyt_shape.writers[w].genuine}
            assert not set(s.train_random_forgery) & set(s.test_random)
            assert all(ow != w for ow, _ in s.train_random_forgery + s.test_random)
            assert len(set(s.train_random_forgery)) == g and s.g == g


def test_split_deterministic_and_seed_sensitive(mcyt_shape):
    a = split_trial(mcyt_shape, "w002", 10, 1, seed=4)
    assert a == split_trial(mcyt_shape, "w002", 10, 1, seed=4)
    assert a != split_trial(mcyt_shape, "w002", 10, 2, seed=4)
    assert a.seed == trial_seed(4, "w002", 10, 1)


def test_split_errors(small_dataset, mcyt_shape):
    with pytest.raises(InsufficientGenuine):
        split_trial(mcyt_shape, "w001", 25, 0, seed=0)
    lone = Dataset({"w001": small_dataset.writers["w001"]})
    with pytest.raises(SingleWriterDataset):
        split_trial(lone, "w001", 1, 0, seed=0)


def test_test_random_fallback_without_skilled(small_dataset):
    ds = Dataset({w: WriterRecord(list(r.genuine), []) for w, r in small_dataset.writers.items()})
    s = split_trial(ds, "w001", 3, 0, seed=0)
    assert s.test_skilled == () and len(s.test_random) == len(s.test_genuine) == 5


def test_trial_seed_is_stable():
    assert trial_seed(0, "w001", 5, 0) == trial_seed(0, "w001", 5, 0)
    assert len({trial_seed(0, "w001", g, t) for g in (1, 5) for t in range(10)}) == 20
    assert 0 <= trial_seed(123, "x", 1, 1) < 2**64


# --- config ------------------------------------------------------------------------

def test_config_validation(small_dataset):
    with pytest.raises(ConfigError):
        ProtocolConfig(genuine_train_counts=())
    with pytest.raises(ConfigError):
        ProtocolConfig(k_reduced=48)
    with pytest.raises(ConfigError):
        ProtocolConfig(val_fraction=1.0)
    with pytest.raises(InsufficientGenuine):
        ProtocolConfig(genuine_train_counts=(8,)).validate_against(small_dataset)
    ProtocolConfig(genuine_train_counts=(7,)).validate_against(small_dataset)
    assert ProtocolConfig().epochs == 800 and ProtocolConfig().trials == 20


# --- reduction leakage and training sets -----------------------------------------------

def test_reduction_never_sees_test_data(mcyt_shape):
    features = compute_feature_table(mcyt_shape, 47)
    split = split_trial(mcyt_shape, "w003", 10, 0, seed=2)
    full = fit_split_reduction(features, split, 12)
    rec = mcyt_shape.writers["w003"]
    kept = set(split.train_genuine)
    pruned = Dataset({**mcyt_shape.writers, "w003": WriterRecord([s for s in rec.genuine if s.sample_id in kept], [])})
    pruned_features = compute_feature_table(pruned, 47)
    again = fit_split_reduction(pruned_features, split, 12)
    assert again.index_set == full.index_set
    np.testing.assert_array_equal(again.normalization.mean, full.normalization.mean)
    np.testing.assert_array_equal(again.normalization.std, full.normalization.std)


def test_prepare_training_validation_split(mcyt_shape):
    features = compute_feature_table(mcyt_shape, 47)
    cfg = ProtocolConfig(k_reduced=12)
    for g, n_opt in ((1, None), (4, None), (5, 3), (10, 6), (20, 12)):
        split = split_trial(mcyt_shape, "w001", g, 0, seed=0)
        x, y, val = prepare_training(features, split, fit_split_reduction(features, split, 12), cfg)
        if n_opt is None:
            assert val is None and x.shape == (2 * g, 12)
        else:
            assert int(y.sum()) == n_opt and int((y == 0).sum()) == n_opt
            assert val[0].shape == (2 * (g - n_opt), 12) and set(val[1].tolist()) == {0.0, 1.0}


# --- running trials -----------------------------------------------------------------------

def test_run_writer_trial_deterministic(small_dataset):
    features = compute_feature_table(small_dataset, 47)
    cfg = ProtocolConfig(genuine_train_counts=(5,), **FAST)
    split = split_trial(small_dataset, "w002", 5, 0, seed=cfg.seed)
    a, b = run_writer_trial(features, split, cfg), run_writer_trial(features, split, cfg)
    assert a == b
    assert 0 <= a.eer_skilled <= 1 and 0 <= a.eer_random <= 1
    assert (a.n_test_genuine, a.n_test_skilled, a.n_test_random) == (3, 5, 5)
    assert a.aer == pytest.approx((a.frr_op + a.far_skilled_op + a.far_random_op) / 3, abs=1e-15)


def test_report_cardinality(small_dataset):
    ds = Dataset({w: small_dataset.writers[w] for w in ("w001", "w002")})
    report = run_protocol(ds, ProtocolConfig(genuine_train_counts=(5,), **FAST))
    assert len(report.records) == 4
    rows = parse_records(format_records(report))
    for cat in ("skilled", "random"):
        assert len([r for r in rows if r["category"] == cat]) == 4
    assert {(r["writer"], r["trial"]) for r in rows} == {(w, t) for w in ("w001", "w002") for t in (0, 1)}


def test_aggregate_mean_example():
    def rec(eer):
        return TrialRecord("w", 5, 0, eer, 0.5, eer / 2, 0.5, 0, 0, 0, 0, 1, 1, 1)
    aggs = aggregate_records([rec(0.1), rec(0.3)], [5])
    skilled = [a for a in aggs if a.metric == "eer_skilled"][0]
    assert skilled.mean == pytest.approx(0.2, abs=1e-15) and skilled.n == 2
    assert skilled.std == pytest.approx(0.1, abs=1e-15)


def test_failed_trials_excluded():
    good = TrialRecord("w", 1, 0, 0.2, 0.5, 0.1, 0.5, 0, 0, 0, 0, 1, 1, 1)
    nan = math.nan
    bad = TrialRecord("w", 1, 1, nan, nan, nan, nan, nan, nan, nan, nan, 0, 0, 0, status="failed:NonFiniteGradient")
    aggs = {a.metric: a for a in aggregate_records([good, bad], [1])}
    assert aggs["eer_skilled"].mean == 0.2 and aggs["eer_skilled"].n == 1


def test_aggregates_recompute_from_records(small_report):
    rows = parse_records(format_records(small_report))
    for g in (1, 5):
        for cat in ("skilled", "random"):
            vals = [r["eer"] for r in rows if r["g"] == g and r["category"] == cat]
            got = small_report.mean_eer(g, cat)
            assert abs(got - float(np.mean(vals))) <= 1e-12
    text = format_aggregates(small_report)
    parsed = {(int(l.split("\t")[0]), l.split("\t")[1]): float(l.split("\t")[2])
              for l in text.splitlines() if l and not l.startswith(("#", "g\t"))}
    for a in small_report.aggregates:
        assert parsed[(a.g, a.metric)] == a.mean


def test_all_rates_in_unit_interval(small_report):
    for r in small_report.records:
        assert r.ok
        for v in (r.eer_skilled, r.eer_random, r.frr_op, r.far_skilled_op, r.far_random_op, r.aer):
            assert 0.0 <= v <= 1.0


def test_report_metadata(small_report):
    cfg = small_report.config
    assert cfg["aggregation"] == "mean_over_writer_trials"
    assert cfg["aer_operating_point"] == "skilled_eer_threshold"
    assert cfg["genuine_train_counts"] == "1,5" and small_report.n_failed == 0


def test_golden_headers(small_report):
    assert RECORD_COLUMNS == ("writer", "g", "trial", "category", "eer", "threshold",
                              "n_test_genuine", "n_test_forgery")
    assert SUMMARY_COLUMNS == ("S_01", "S_05", "S_10", "S_15", "S_20", "R_01", "R_05", "R_10", "R_15", "R_20")
    assert TRIAL_COLUMNS[:4] == ("writer", "g", "trial", "status")
    rec_lines = [l for l in format_records(small_report).splitlines() if not l.startswith("#")]
    assert rec_lines[0] == "writer\tg\ttrial\tcategory\teer\tthreshold\tn_test_genuine\tn_test_forgery"
    summary = [l for l in format_summary(small_report).splitlines() if not l.startswith("#")]
    assert summary[0] == "method\tS_01\tS_05\tS_10\tS_15\tS_20\tR_01\tR_05\tR_10\tR_15\tR_20"
    cells = summary[1].split("\t")
    assert cells[0] == "Proposed Model" and cells[3:6] == ["-", "-", "-"]
    assert cells[1] == f"{100 * small_report.mean_eer(1, 'skilled'):.2f}"


def test_report_files_byte_identical(small_dataset, tmp_path):
    cfg = ProtocolConfig(genuine_train_counts=(1,), **FAST)
    a = write_report(run_protocol(small_dataset, cfg), tmp_path / "a")
    b = write_report(run_protocol(small_dataset, cfg), tmp_path / "b")
    for pa, pb in zip(a, b):
        assert pa.name == pb.name and pa.read_bytes() == pb.read_bytes()
    assert (tmp_path / "a" / "timing.txt").exists()


def test_parallel_matches_sequential(small_dataset):
    cfg = ProtocolConfig(genuine_train_counts=(1, 5), trials=1, k_reduced=8, epochs=3)
    seq = run_protocol(small_dataset, cfg, threads=1)
    par = run_protocol(small_dataset, cfg, threads=2)
    assert seq.records == par.records
    assert format_records(seq) == format_records(par)
