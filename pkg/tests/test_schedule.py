import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lssgen.schedule import (NoiseSchedule, build_schedule, plan_stages, resume_index, shift_factor,
                             shift_time, sigma_after_upscale, sigma_of_snr, snr_of_sigma,
                             stage_count, stage_steps)


@pytest.mark.parametrize("sigma, snr", [(0.5, 1.0), (0.25, 9.0), (0.75, 1 / 9), (0.2, 16.0)])
def test_snr_known_values(sigma, snr):
    assert snr_of_sigma(sigma) == pytest.approx(snr, rel=1e-14)
    assert sigma_of_snr(snr) == pytest.approx(sigma, rel=1e-14)


@given(st.floats(0.001, 0.999))
def test_snr_roundtrip(sigma):
    assert abs(sigma_of_snr(snr_of_sigma(sigma)) - sigma) < 1e-12


@pytest.mark.parametrize("bad", [0.0, 1.0, -0.1, 1.5])
def test_snr_domain(bad):
    with pytest.raises(ValueError):
        snr_of_sigma(bad)


def test_sigma_of_zero_snr_is_one():
    assert sigma_of_snr(0.0) == 1.0
    with pytest.raises(ValueError):
        sigma_of_snr(-1.0)


def test_shift_fixed_points_and_identity():
    for s in (1.0, 2.0, 7.5):
        assert shift_time(0.0, s) == 0.0
        assert shift_time(1.0, s) == 1.0
    t = np.linspace(0, 1, 11)
    np.testing.assert_array_equal(shift_time(t, 1.0), t)


def test_shift_known_value():
    assert shift_time(0.5, 3.0) == pytest.approx(0.75, abs=1e-15)


@given(t=st.floats(0.0, 1.0), s1=st.floats(1.0, 8.0), s2=st.floats(1.0, 8.0))
def test_shift_composes_multiplicatively(t, s1, s2):
    assert abs(shift_time(shift_time(t, s1), s2) - shift_time(t, s1 * s2)) < 1e-12


@given(s=st.floats(1.01, 8.0))
def test_shift_strictly_monotone_and_lifts(s):
    t = np.linspace(0, 1, 101)
    out = shift_time(t, s)
    assert np.all(np.diff(out) > 0)
    assert np.all(out[1:-1] > t[1:-1])


def test_shift_rejects_bad_inputs():
    with pytest.raises(ValueError):
        shift_time(0.5, 0.5)
    with pytest.raises(ValueError):
        shift_time(1.2, 2.0)


def test_shift_factor_modes():
    assert shift_factor(64, 16, "pixels") == 4.0
    assert shift_factor(64, 16, "sides") == 2.0
    with pytest.raises(ValueError):
        shift_factor(64, 16, "area")


def test_uniform_grid_values():
    s = build_schedule(4, 32)
    assert s.times == (1.0, 0.75, 0.5, 0.25, 0.0)
    assert s.steps == 4 and s.shift == 1.0
    assert NoiseSchedule.sigma(0.3) == 0.3
    assert NoiseSchedule.alpha_bar(0.25) == pytest.approx(0.5625)


@given(steps=st.integers(1, 80), ratio=st.sampled_from([2, 4, 8]), mode=st.sampled_from(["pixels", "sides"]))
def test_shifted_grid_valid(steps, ratio, mode):
    s = build_schedule(steps, 16 * ratio, 16, apply_shift=True, shift_mode=mode)
    t = np.array(s.times)
    assert t[0] == 1.0 and t[-1] == 0.0 and np.all(np.diff(t) < 0)


def test_schedule_validation():
    with pytest.raises(ValueError):
        NoiseSchedule((1.0, 0.5, 0.6, 0.0), 8)
    with pytest.raises(ValueError):
        NoiseSchedule((0.9, 0.0), 8)
    with pytest.raises(ValueError):
        build_schedule(0, 8)


@pytest.mark.parametrize("steps, sigma, index", [(50, 0.75, 13), (4, 0.75, 1), (4, 1.0, 0),
                                                (10, 0.3, 7), (8, 0.01, 8)])
def test_resume_index(steps, sigma, index):
    assert resume_index(build_schedule(steps, 32), sigma) == index


def test_resume_near_tie_counts_as_equal():
    sched = build_schedule(10, 32)
    assert sched.times[7] > 0.3  # 1 - 7/10 rounds above 0.3 in binary
    assert resume_index(sched, 0.3) == 7


def test_resume_rejects_zero():
    with pytest.raises(ValueError):
        resume_index(build_schedule(4, 8), 0.0)


def test_table_patterns():
    p = plan_stages(16, 32, 32, 50)
    assert p.describe() == "50, 37"
    assert plan_stages(16, 32, 32, 4).describe() == "4, 3"
    assert plan_stages(16, 32, 32, 50, shorten=True).describe() == "25, 37"
    assert plan_stages(16, 32, 32, 4, shorten=True).describe() == "2, 3"


def test_three_stage_plan():
    p = plan_stages(8, 32, 32, 32, shorten=True)
    assert [s.resolution for s in p.stages] == [8, 16, 32]
    assert [s.steps for s in p.stages] == [8, 16, 32]
    assert p.stages[0].sigma_init == 1.0 and p.stages[0].resume_index == 0
    assert p.executed() == [8, 12, 24]


def test_step_overrides():
    p = plan_stages(16, 32, 32, 20, step_overrides={16: 7})
    assert p.stages[0].steps == 7


def test_stage_count_rules():
    assert stage_count(32, 32) == 1
    assert stage_count(16, 64) == 3
    with pytest.raises(ValueError):
        stage_count(16, 48)
    with pytest.raises(ValueError):
        stage_count(32, 16)


def test_stage_steps_floor_and_minimum():
    assert stage_steps(50, 16, 32, True) == 25
    assert stage_steps(3, 8, 64, True) == 1
    assert stage_steps(50, 16, 32, False) == 50
    assert stage_steps(50, 64, 32, True) == 50


def test_shifted_plan_uses_lowest_resolution_as_reference():
    p = plan_stages(16, 64, 64, 10, shift=True)
    assert [s.schedule.shift for s in p.stages] == [1.0, 2.0, 4.0]
    # a shifted grid keeps more time at high noise, so resuming at 0.75 happens later
    assert p.stages[2].resume_index >= plan_stages(16, 64, 64, 10).stages[2].resume_index


@given(sigma=st.floats(0.01, 1.0))
def test_upscaled_sigma_rules(sigma):
    lin, exact = sigma_after_upscale(sigma)
    assert lin == pytest.approx(0.75 * sigma)
    snr = (1 - sigma) ** 2 / sigma**2
    assert exact == pytest.approx(1 / (1 + math.sqrt(snr) / 2))
    assert exact >= sigma - 1e-15


def test_upscaled_sigma_composes_in_snr():
    a = sigma_after_upscale(sigma_after_upscale(0.4, 2).exact, 2).exact
    assert a == pytest.approx(sigma_after_upscale(0.4, 4).exact, abs=1e-14)
    assert sigma_after_upscale(0.4, 4).linear == pytest.approx(0.4 * 0.75**2)
