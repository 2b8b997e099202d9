"""Episode metrics, min-max scores, and the penetration sweep harness."""
from dataclasses import dataclass

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from roundsim import nn
from roundsim.config import ScenarioConfig
from roundsim.evaluate import (METRIC_COLUMNS, crossing_time,
                               normalized_scores, plot_sweep, read_sweep_csv,
                               run_episode, sweep, trend_correlation,
                               write_sweep_csv)
from roundsim.microsim import AV, HV


@dataclass
class _Veh:
    kind: str = HV
    t_in: float = 0.0
    t_out: float = 0.0
    fuel_total: float = 0.0
    co2_total: float = 0.0


# -- crossing time -------------------------------------------------------------

def test_crossing_time_worked_example():
    done = [_Veh(t_in=10.0, t_out=20.0), _Veh(t_in=5.0, t_out=20.0)]
    assert crossing_time(done) == pytest.approx(12.5)


def test_crossing_time_class_filter():
    done = [_Veh(kind=HV, t_in=0.0, t_out=10.0),
            _Veh(kind=AV, t_in=0.0, t_out=30.0)]
    assert crossing_time(done, HV) == pytest.approx(10.0)
    assert crossing_time(done, AV) == pytest.approx(30.0)
    assert crossing_time(done) == pytest.approx(20.0)


def test_crossing_time_empty_class_is_none():
    assert crossing_time([]) is None
    assert crossing_time([_Veh(kind=HV)], AV) is None


# -- min-max normalized scores ---------------------------------------------------

def test_scores_worked_example_mean_half():
    done = [_Veh(fuel_total=2.0), _Veh(fuel_total=4.0), _Veh(fuel_total=6.0)]
    assert normalized_scores(done, "fuel") == {HV: 0.5}


def test_scores_shift_invariance_exact():
    base = [2.0, 4.0, 6.0, 11.0]
    for shift in (0.0, 10.0, -3.0, 1000.0):
        done = [_Veh(fuel_total=f + shift) for f in base]
        assert normalized_scores(done, "fuel")[HV] == \
            normalized_scores([_Veh(fuel_total=f) for f in base], "fuel")[HV]


def test_scores_degenerate_all_equal_is_zero():
    done = [_Veh(fuel_total=5.0, kind=k) for k in (HV, HV, AV)]
    scores = normalized_scores(done, "fuel")
    assert scores == {HV: 0.0, AV: 0.0}


def test_scores_minmax_taken_over_all_classes():
    # AV holds both extremes; HV (middle) is scored against the global range.
    done = [_Veh(kind=AV, fuel_total=0.0), _Veh(kind=HV, fuel_total=3.0),
            _Veh(kind=AV, fuel_total=4.0)]
    scores = normalized_scores(done, "fuel")
    assert scores[HV] == pytest.approx(0.75)
    assert scores[AV] == pytest.approx(0.5)


def test_scores_quantity_dispatch_and_validation():
    done = [_Veh(fuel_total=1.0, co2_total=10.0),
            _Veh(fuel_total=2.0, co2_total=50.0)]
    assert normalized_scores(done, "co2")[HV] == pytest.approx(0.5)
    with pytest.raises(ValueError):
        normalized_scores(done, "electricity")
    with pytest.raises(ValueError):
        normalized_scores([], "fuel")


@given(st.lists(st.floats(0.0, 1e4), min_size=1, max_size=40),
       st.floats(-1e3, 1e3))
@settings(max_examples=200)
def test_scores_bounded_and_shift_invariant(values, shift):
    done = [_Veh(fuel_total=v) for v in values]
    s0 = normalized_scores(done, "fuel")[HV]
    assert 0.0 <= s0 <= 1.0
    shifted = [_Veh(fuel_total=v + shift) for v in values]
    s1 = normalized_scores(shifted, "fuel")[HV]
    assert s1 == pytest.approx(s0, abs=1e-6)


# -- run_episode ----------------------------------------------------------------

_SHORT = ScenarioConfig(duration=90.0, warmup=30.0)


def test_run_episode_policy_required_when_avs_present():
    with pytest.raises(ValueError):
        run_episode(ScenarioConfig(duration=10.0, penetration=0.5), None)


def test_run_episode_hv_only_classes_and_counts():
    m = run_episode(_SHORT, None, seed=0)
    assert set(m.classes) == {HV}
    assert m.classes[HV].n == m.completed_total > 0
    assert m.classes[HV].mu_cross_s > 0.0
    assert 0.0 <= m.classes[HV].consumption_score <= 1.0


def test_run_episode_av_only_classes():
    cfg = ScenarioConfig(duration=90.0, warmup=30.0, penetration=1.0)
    m = run_episode(cfg, nn.init_params(seed=0), seed=0)
    assert set(m.classes) == {AV}
    assert m.classes[AV].n > 0


def test_run_episode_deterministic():
    a = run_episode(_SHORT, None, seed=3)
    b = run_episode(_SHORT, None, seed=3)
    assert a == b


def test_run_episode_excludes_warmup_entries():
    m = run_episode(_SHORT, None, seed=1)
    # a 30 s warmup at 1540 veh/h spawns ~13 vehicles; they must not count
    full = run_episode(ScenarioConfig(duration=120.0, warmup=0.0), None,
                       seed=1)
    assert m.completed_total < full.completed_total


# -- sweep bookkeeping ------------------------------------------------------------

def test_sweep_rows_and_episode_accounting(tmp_path):
    cfg = ScenarioConfig(duration=120.0, warmup=30.0)
    policy = nn.init_params(seed=0)
    rows, episodes = sweep(cfg, policy, penetrations=(0.0, 0.5, 1.0),
                           seeds=(0, 1), out_dir=tmp_path)
    assert len(episodes) == 6
    assert all(not isinstance(e, Exception) for e in episodes)
    # one row per (penetration, class with vehicles): HV at 0 and 0.5,
    # AV at 0.5 and 1.0
    keys = {(r["penetration"], r["class"]) for r in rows}
    assert (0.0, HV) in keys and (1.0, AV) in keys
    assert (0.0, AV) not in keys and (1.0, HV) not in keys
    assert (0.5, HV) in keys and (0.5, AV) in keys
    assert (tmp_path / "sweep.csv").exists()
    for stem in ("crossing_time", "consumption", "emission"):
        assert (tmp_path / f"{stem}.png").stat().st_size > 0


def test_sweep_keeps_failures_without_aborting(monkeypatch):
    import roundsim.evaluate as ev

    real = ev.run_episode

    def flaky(config, policy=None, seed=None):
        if seed == 1:
            raise RuntimeError("boom")
        return real(config, policy, seed)

    monkeypatch.setattr(ev, "run_episode", flaky)
    cfg = ScenarioConfig(duration=60.0, warmup=10.0, lateral_accel_max=2.5)
    rows, episodes = ev.sweep(cfg, None, penetrations=(0.0,), seeds=(0, 1, 2))
    assert sum(isinstance(e, Exception) for e in episodes) == 1
    assert len(rows) == 1  # aggregated over the two surviving seeds


# -- CSV round trip ----------------------------------------------------------------

def test_sweep_csv_round_trip(tmp_path):
    rows = [{"penetration": 0.1, "class": HV, "n": 100.0,
             "mu_cross_s": 31.5, "consumption_score": 0.4,
             "emission_score": 0.4, "collisions": 0.0},
            {"penetration": 0.1, "class": AV, "n": 10.0,
             "mu_cross_s": 29.0, "consumption_score": 0.35,
             "emission_score": 0.35, "collisions": 0.0}]
    path = tmp_path / "sweep.csv"
    write_sweep_csv(rows, path)
    header = path.read_text().splitlines()[0]
    assert header == ",".join(METRIC_COLUMNS)
    assert read_sweep_csv(path) == rows


def test_plot_sweep_writes_three_files(tmp_path):
    rows = [{"penetration": p, "class": HV, "n": 1.0, "mu_cross_s": 30 - p,
             "consumption_score": 0.5, "emission_score": 0.5,
             "collisions": 0.0} for p in (0.0, 0.5, 1.0)]
    written = plot_sweep(rows, tmp_path)
    assert len(written) == 3
    for p in written:
        with open(p, "rb") as fh:
            assert fh.read(8)[1:4] == b"PNG"


# -- trend correlation ---------------------------------------------------------------

def _rows(values, kind=HV, key="mu_cross_s"):
    return [{"penetration": 0.1 * i, "class": kind, key: v}
            for i, v in enumerate(values)]


def test_trend_correlation_monotone_down_is_minus_one():
    assert trend_correlation(_rows([30, 28, 25, 20]), HV,
                             "mu_cross_s") == pytest.approx(-1.0)


def test_trend_correlation_monotone_up_is_plus_one():
    assert trend_correlation(_rows([1, 2, 3, 4]), HV,
                             "mu_cross_s") == pytest.approx(1.0)


def test_trend_correlation_ignores_other_class():
    rows = _rows([30, 25, 20]) + _rows([1, 2, 3], kind=AV)
    assert trend_correlation(rows, HV, "mu_cross_s") == pytest.approx(-1.0)
    assert trend_correlation(rows, AV, "mu_cross_s") == pytest.approx(1.0)


def test_trend_correlation_needs_three_points():
    with pytest.raises(ValueError):
        trend_correlation(_rows([1, 2]), HV, "mu_cross_s")
