import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dsmo.errors import InsufficientData, NonPositiveValue, SchemaError
from dsmo.metrics import (
    FIELDS,
    RunRecord,
    consensus_error,
    loglog_slope,
    read_csv,
    samples_to_epsilon,
    speedup_table,
    write_csv,
)


def rec(t, value=1.0, K=5, samples=None, run_id="0", **kw):
    base = dict(run_id=run_id, algo="dsmo", problem="synthetic", K=K, rho=0.29, t=t,
                samples_total=samples if samples is not None else 10 * t, grad_norm_sq=value,
                mse_to_opt=value, obj_gap=value, consensus_x=0.0, consensus_y=(0.0, 0.0), wall_ms=0.0)
    base.update(kw)
    return RunRecord(**base)


def test_header_order():
    assert FIELDS == ("run_id", "algo", "problem", "K", "rho", "t", "samples_total", "grad_norm_sq",
                      "mse_to_opt", "obj_gap", "consensus_x", "consensus_y", "wall_ms")


@pytest.mark.parametrize("a", [-2.0, -1.0, -0.5])
def test_slope_recovers_power_law(a):
    recs = [rec(t, 3.0 * t**a) for t in range(1, 2001, 10)]
    slope, resid = loglog_slope(recs, 1, 2000)
    assert slope == pytest.approx(a, abs=1e-6)
    assert resid < 1e-9


def test_slope_of_inverse_t_and_constant():
    assert loglog_slope([rec(t, 1.0 / t) for t in range(1, 100)], 1, 100)[0] == pytest.approx(-1.0, abs=1e-9)
    assert loglog_slope([rec(t, 4.2) for t in range(1, 100)], 1, 100)[0] == pytest.approx(0.0, abs=1e-12)


def test_slope_default_window_drops_transient():
    recs = [rec(t, 1e6 if t < 10 else 1.0 / t) for t in range(1, 101)]
    assert loglog_slope(recs)[0] == pytest.approx(-1.0, abs=1e-9)


def test_slope_errors():
    with pytest.raises(InsufficientData):
        loglog_slope([rec(t, 1.0) for t in range(1, 6)], 1, 10)
    with pytest.raises(NonPositiveValue):
        loglog_slope([rec(t, 0.0 if t == 5 else 1.0) for t in range(1, 30)], 1, 30)


def test_slope_skips_nan():
    recs = [rec(t, 1.0 / t) for t in range(1, 50)] + [rec(60, math.nan)]
    assert loglog_slope(recs, 1, 100)[0] == pytest.approx(-1.0, abs=1e-9)


def test_samples_to_epsilon():
    recs = [rec(t, 1.0 / (t + 1)) for t in range(10)]
    assert samples_to_epsilon(recs, 2.0) == 0
    assert samples_to_epsilon(recs, 0.25) == 30
    assert samples_to_epsilon(recs, 1e-3) is None


def test_speedup_table_identical_runs_have_zero_width():
    runs = [[rec(t, 1.0 / (t + 1), K=K, samples=100 * t) for t in range(20)] for K in (5, 10, 20) for _ in range(3)]
    rows = speedup_table(runs, 0.1)
    assert [r.K for r in rows] == [5, 10, 20]
    for r in rows:
        assert r.median_log10 == r.q125_log10 == r.q875_log10 == pytest.approx(math.log10(900))


def test_speedup_table_quantiles_and_unreached():
    runs = [[rec(0, 1.0, samples=0), rec(1, 0.01, samples=s)] for s in (10, 100, 1000, 10_000)]
    runs.append([rec(0, 1.0, samples=0), rec(1, 1.0, samples=5)])
    rows = speedup_table(runs, 0.1)
    assert rows[0].reps == 5 and rows[0].reached == 4
    assert rows[0].median_log10 == pytest.approx(3.0)
    assert rows[0].q875_log10 == math.inf


def test_speedup_table_needs_reps():
    with pytest.raises(InsufficientData):
        speedup_table([[rec(0, 1.0)]] * 2, 0.5)
    with pytest.raises(InsufficientData):
        speedup_table([], 0.5)


def test_consensus_error_definition():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((7, 4))
    naive = sum(np.sum((X[k] - X.mean(axis=0)) ** 2) for k in range(7)) / 7
    assert abs(consensus_error(X) - naive) <= 1e-12


finite = st.floats(allow_nan=False, allow_infinity=False, width=64)


@given(st.lists(st.tuples(finite, finite, finite, st.lists(finite, min_size=1, max_size=3),
                          st.integers(0, 10**9)), max_size=20))
def test_csv_round_trip(tmp_path_factory, rows):
    path = tmp_path_factory.mktemp("csv") / "r.csv"
    recs = [rec(i, a, samples=s, obj_gap=b, rho=c, consensus_y=tuple(cy), run_id=f"r{i}")
            for i, (a, b, c, cy, s) in enumerate(rows)]
    write_csv(recs, path)
    assert read_csv(path) == recs


def test_csv_round_trip_1000_random_records(tmp_path):
    rng = np.random.default_rng(0)
    recs = [rec(i, float(rng.lognormal(0, 20)), samples=int(rng.integers(0, 2**40)),
                consensus_y=tuple(rng.standard_normal(3) * 1e-300), wall_ms=float(rng.random()))
            for i in range(1000)]
    write_csv(recs, tmp_path / "r.csv")
    assert read_csv(tmp_path / "r.csv") == recs


def test_csv_empty_and_line_endings(tmp_path):
    write_csv([], tmp_path / "e.csv")
    assert (tmp_path / "e.csv").read_bytes() == (",".join(FIELDS) + "\n").encode()
    assert read_csv(tmp_path / "e.csv") == []


def test_csv_shuffled_columns(tmp_path):
    names = list(FIELDS)
    names[3], names[4] = names[4], names[3]
    (tmp_path / "s.csv").write_text(",".join(names) + "\n")
    with pytest.raises(SchemaError, match="'rho'"):
        read_csv(tmp_path / "s.csv")


def test_csv_unknown_and_missing_columns(tmp_path):
    (tmp_path / "u.csv").write_text(",".join(FIELDS + ("extra",)) + "\n")
    with pytest.raises(SchemaError, match="extra"):
        read_csv(tmp_path / "u.csv")
    (tmp_path / "m.csv").write_text(",".join(FIELDS[:-1]) + "\n")
    with pytest.raises(SchemaError, match="wall_ms"):
        read_csv(tmp_path / "m.csv")
