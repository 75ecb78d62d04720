import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from autojoin.curriculum import CurriculumState, sample_intensity, update


def test_starts_on_clean_images():
    state = CurriculumState.start()
    rng = np.random.default_rng(0)
    assert all(sample_intensity(state, rng) == 0.0 for _ in range(10))


def test_uniform_draws_below_c():
    state = CurriculumState(c_current=0.5)
    draws = np.array([sample_intensity(state, np.random.default_rng(i)) for i in range(10_000)])
    assert draws.min() >= 0.0 and draws.max() < 0.5
    assert abs(draws.mean() - 0.25) < 0.01


def test_empty_interval_returns_c_min():
    state = CurriculumState(c_current=0.3, c_min=0.3)
    assert sample_intensity(state, np.random.default_rng(0)) == 0.3


def test_update_examples():
    s = CurriculumState(c_current=0.3, best_loss=1.0)
    assert update(s, 0.9).c_current == pytest.approx(0.4)
    s = CurriculumState(c_current=0.3, best_loss=1.0)
    assert update(s, 1.2).c_current == 0.3 and s.best_loss == 1.0
    s = CurriculumState(c_current=1.0, best_loss=1.0)
    assert update(s, 0.5).c_current == 1.0


def test_reaches_max_in_exactly_ten_updates():
    s = CurriculumState.start()
    seen = []
    for loss in np.linspace(10, 1, 12):
        seen.append(update(s, loss).c_current)
    assert seen.index(1.0) == 9
    assert seen[:10] == [round(0.1 * k, 10) for k in range(1, 11)]


@pytest.mark.parametrize("c_max,step", [(1.5, 0.1), (0.9, 0.1), (1.0, 0.3)])
def test_steps_to_max(c_max, step):
    s = CurriculumState.start(c_max=c_max, step=step)
    n = 0
    while s.c_current < c_max:
        update(s, 100.0 - n)
        n += 1
    assert n == math.ceil(round(c_max / step, 9))


def test_previous_mode_compares_with_last_epoch():
    s = CurriculumState.start(improvement_mode="previous")
    for loss in (5.0, 6.0, 5.5):
        update(s, loss)
    # 5.0 improves (first), 6.0 does not, 5.5 beats the previous 6.0
    assert s.c_current == pytest.approx(0.2)
    b = CurriculumState.start()
    for loss in (5.0, 6.0, 5.5):
        update(b, loss)
    assert b.c_current == pytest.approx(0.1)


def test_rejects_non_finite_loss_and_bad_config():
    with pytest.raises(ValueError):
        update(CurriculumState.start(), float("nan"))
    with pytest.raises(ValueError):
        CurriculumState(c_min=0.6, c_max=0.5)
    with pytest.raises(ValueError):
        CurriculumState(improvement_mode="sometimes")


@settings(max_examples=200, deadline=None)
@given(losses=st.lists(st.floats(0, 1e6, allow_nan=False), min_size=1, max_size=40),
       mode=st.sampled_from(["best", "previous"]),
       c_max=st.sampled_from([0.9, 1.0, 1.5]))
def test_c_never_decreases_and_stays_capped(losses, mode, c_max):
    s = CurriculumState.start(c_max=c_max, improvement_mode=mode)
    prev = s.c_current
    rng = np.random.default_rng(len(losses))
    for loss in losses:
        update(s, loss)
        assert prev <= s.c_current <= c_max
        assert 0.0 <= sample_intensity(s, rng) <= c_max
        prev = s.c_current
