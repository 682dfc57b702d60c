import numpy as np
import pytest
from scipy import stats

from navrl.curriculum import (
    CurriculumSchedule,
    admissible_start_cells,
    dmax,
    sample_initial_state,
    tau_at,
)
from navrl.world import GenerationSpec, dist, generate_maze, position_blocked


@pytest.fixture(scope="module")
def layout():
    return generate_maze(11, GenerationSpec(rows=7, cols=7, style="maze", n_targets=2))


def _min_target_dist(layout, pose):
    return min(dist(pose, t.position) for t in layout.targets)


# ---------------------------------------------------------------------------
# schedule
# ---------------------------------------------------------------------------

def test_tau_schedule_endpoints():
    s = CurriculumSchedule(0.3, 1.0, 0, 100)
    assert tau_at(s, 0) == pytest.approx(0.3)
    assert tau_at(s, 100) == pytest.approx(1.0)
    assert tau_at(s, 50) == pytest.approx(0.65)
    assert tau_at(s, 1000) == 1.0
    s2 = CurriculumSchedule(0.3, 1.0, 50, 150)
    assert tau_at(s2, 10) == pytest.approx(0.3)


def test_tau_monotone():
    s = CurriculumSchedule(0.3, 1.0, 1000, 9000)
    values = [tau_at(s, f) for f in range(0, 12000, 250)]
    assert all(b >= a for a, b in zip(values, values[1:]))


def test_schedule_validation():
    with pytest.raises(ValueError):
        CurriculumSchedule(0.0, 1.0, 0, 10)
    with pytest.raises(ValueError):
        CurriculumSchedule(0.5, 0.4, 0, 10)
    with pytest.raises(ValueError):
        CurriculumSchedule(0.3, 1.0, 10, 10)


# ---------------------------------------------------------------------------
# dmax
# ---------------------------------------------------------------------------

def test_dmax_endpoints(layout):
    assert dmax(layout, 0.0) == 0.0
    assert dmax(layout, 1.0) == pytest.approx(layout.max_start_target_dist)
    assert dmax(layout, 0.3) == pytest.approx(0.3 * layout.max_start_target_dist)


def test_dmax_multiplication():
    import dataclasses

    lay = generate_maze(11, GenerationSpec(rows=7, cols=7, style="maze", n_targets=2))
    lay = dataclasses.replace(lay, max_start_target_dist=10.0)
    assert dmax(lay, 0.3) == pytest.approx(3.0)


def test_dmax_rejects_bad_tau(layout):
    with pytest.raises(ValueError):
        dmax(layout, 1.5)


# ---------------------------------------------------------------------------
# start sampling
# ---------------------------------------------------------------------------

def test_admissible_sets_monotone(layout):
    taus = np.linspace(0.1, 1.0, 10)
    sets = [set(admissible_start_cells(layout, t)) for t in taus]
    for a, b in zip(sets, sets[1:]):
        assert a <= b
    assert sets[-1] == set(layout.start_cells)


def test_membership_over_tau_grid(layout):
    rng = np.random.default_rng(0)
    for tau in np.linspace(0.1, 1.0, 10):
        admissible = set(admissible_start_cells(layout, tau))
        if admissible:
            limit = dmax(layout, tau) + 1e-9
        else:
            # documented fallback: the single nearest start cell
            nearest = int(np.argmin(layout.start_cell_target_dist))
            admissible = {layout.start_cells[nearest]}
            limit = float(layout.start_cell_target_dist[nearest]) + 1e-9
        for _ in range(2000):
            pose = sample_initial_state(layout, tau, rng)
            assert layout.cell_of(pose.x1, pose.x2) in admissible
            assert _min_target_dist(layout, pose) <= limit
            assert not position_blocked(layout, pose.x1, pose.x2)


def test_uniform_occupancy_at_full_tau(layout):
    rng = np.random.default_rng(1)
    cells = list(layout.start_cells)
    index = {c: i for i, c in enumerate(cells)}
    counts = np.zeros(len(cells))
    n = 20_000
    for _ in range(n):
        pose = sample_initial_state(layout, 1.0, rng)
        counts[index[layout.cell_of(pose.x1, pose.x2)]] += 1
    assert (counts > 0).all()
    _, p = stats.chisquare(counts)
    assert p > 0.01


def test_tau_zero_limit_concentrates_near_targets(layout):
    rng = np.random.default_rng(2)
    nearest = min(layout.start_cell_target_dist)
    for _ in range(200):
        pose = sample_initial_state(layout, 1e-6, rng)
        # fallback admits exactly the closest start cell(s)
        assert _min_target_dist(layout, pose) <= nearest + layout.cell_size


def test_heading_uniform(layout):
    rng = np.random.default_rng(3)
    headings = [sample_initial_state(layout, 1.0, rng).theta for _ in range(4000)]
    counts, _ = np.histogram(headings, bins=12, range=(0, 360))
    _, p = stats.chisquare(counts)
    assert p > 0.01
