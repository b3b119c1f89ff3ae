import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cascadevae.cascade import CascadeSchedule, betas_at, relieved_count
from cascadevae.errors import ConfigError


def test_start_all_high():
    sched = CascadeSchedule(10.0, 1.0, r=1500, m=5)
    assert np.all(betas_at(sched, 0) == 10.0)


def test_hand_trace_m3_r2():
    sched = CascadeSchedule(10.0, 1.0, r=2, m=3)
    assert betas_at(sched, 5).tolist() == [1.0, 1.0, 10.0]


def test_clamps_after_all_relieved():
    sched = CascadeSchedule(10.0, 1.0, r=2, m=3)
    for t in (6, 7, 100, 10**9):
        assert np.all(betas_at(sched, t) == 1.0)


def test_invalid_schedules_rejected():
    with pytest.raises(ConfigError):
        CascadeSchedule(1.0, 2.0, r=1, m=1)
    with pytest.raises(ConfigError):
        CascadeSchedule(2.0, 1.0, r=0, m=1)
    with pytest.raises(ConfigError):
        CascadeSchedule(2.0, 1.0, r=1, m=0)


@given(
    st.integers(min_value=1, max_value=8),
    st.integers(min_value=1, max_value=50),
    st.integers(min_value=0, max_value=2000),
)
@settings(max_examples=100, deadline=None)
def test_relieved_prefix_and_count(m, r, t):
    sched = CascadeSchedule(4.0, 0.5, r=r, m=m)
    betas = betas_at(sched, t)
    k = min(m, t // r)
    assert relieved_count(sched, t) == k
    assert np.all(betas[:k] == 0.5) and np.all(betas[k:] == 4.0)


@given(st.integers(min_value=1, max_value=6), st.integers(min_value=1, max_value=20))
@settings(max_examples=50, deadline=None)
def test_entrywise_monotone_in_t(m, r):
    sched = CascadeSchedule(3.0, 1.0, r=r, m=m)
    prev = betas_at(sched, 0)
    for t in range(1, m * r + 3):
        cur = betas_at(sched, t)
        assert np.all(cur <= prev)
        prev = cur


def test_pure_function_of_t():
    sched = CascadeSchedule(10.0, 1.0, r=7, m=4)
    assert np.array_equal(betas_at(sched, 13), betas_at(sched, 13))
