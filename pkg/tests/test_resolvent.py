import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import ndimage

from crystalflow import oracles
from crystalflow.anisotropy import catalog, eval_phi, eval_polar
from crystalflow.disttransform import signed_distance
from crystalflow.fields import Grid, ScalarField, SetMask, VectorField, div_array, grad_array
from crystalflow.resolvent import (InvalidStepError, SolverParams, StepSolution, check_optimality,
                                   implicit_step, step_sizes)
from crystalflow.verify import boundary_band

GRID = Grid.centered((64, 64), 1 / 32)
H = 0.01
NAMES = ["euclidean", "ell1", "hexagon"]
# stopping on the complementarity gap too, so u itself is accurate to ~tol_residual
TIGHT = SolverParams(gap_tol=1e-4, max_iters=200000)


def smooth_random(grid, seed, amp=20.0, sigma=4.0):
    rng = np.random.default_rng(seed)
    return ndimage.gaussian_filter(rng.normal(size=grid.shape), sigma) * amp


def seam_band(grid, a, h, width=2):
    p = eval_polar(a, grid.coords())
    return np.abs(p - oracles.plateau_radius(h, grid.dim)) <= width * grid.spacing


# -- examples --------------------------------------------------------------------

@pytest.mark.parametrize("name", NAMES)
def test_constant_data_is_fixed(name):
    a = catalog(name)
    s = implicit_step(ScalarField(GRID, np.full(GRID.shape, 0.7)), H, a)
    np.testing.assert_allclose(s.u.values, 0.7, atol=s.tol_residual)
    assert np.max(np.abs(div_array(s.z.values, GRID.spacing))) <= s.tol_residual / H
    assert s.converged and s.iters <= SolverParams().check_every


@pytest.mark.parametrize("name", NAMES)
def test_affine_data_with_admissible_slope_is_fixed(name):
    a = catalog(name)
    grid = Grid.centered((96, 96), 1 / 32)
    v = np.array([0.6, -0.3])
    v *= 0.9 / eval_phi(a, v)
    g = grid.coords() @ v
    s = implicit_step(ScalarField(grid, g), H, a, TIGHT)
    # the Neumann rim flattens the ramp; its influence decays away from the box
    interior = (slice(24, -24), slice(24, -24))
    assert np.max(np.abs(s.u.values - g)[interior]) <= 2 * s.tol_residual


@pytest.mark.parametrize("name", NAMES)
def test_wulff_data_matches_oracle(name):
    a = catalog(name)
    g = Grid.centered((128, 128), 1 / 32)
    R = 1.5
    x = g.coords()
    s = implicit_step(ScalarField(g, eval_polar(a, x) - R), H, a)
    exact = oracles.resolvent_wulff(x, H, R, a)
    keep = ~(boundary_band(g, H) | seam_band(g, a, H))
    err = np.max(np.abs(s.u.values - exact)[keep])
    assert err <= max(2 * g.spacing, 0.05 * np.sqrt(H))


def test_invalid_step():
    g = ScalarField(GRID, np.zeros(GRID.shape))
    with pytest.raises(InvalidStepError):
        implicit_step(g, 0.0, catalog("euclidean"))
    with pytest.raises(ValueError):
        bad = np.zeros(GRID.shape)
        bad[3, 3] = np.nan
        implicit_step(ScalarField(GRID, bad), H, catalog("euclidean"))


def test_solver_params_validation():
    with pytest.raises(ValueError):
        SolverParams(max_iters=0)
    with pytest.raises(ValueError):
        SolverParams(tol_residual=0.0)
    with pytest.raises(ValueError):
        SolverParams(check_every=0)


def test_step_sizes_satisfy_stability():
    for h in (1e-3, 0.01, 0.3):
        tau, sigma = step_sizes(h, 1 / 64, 2)
        L = 2 * np.sqrt(2) * 64
        assert tau * sigma * h ** 2 * L ** 2 < 1


def test_nonconvergence_is_flagged():
    a = catalog("hexagon")
    g = ScalarField(GRID, smooth_random(GRID, 1))
    s = implicit_step(g, H, a, SolverParams(max_iters=5, check_every=5))
    assert not s.converged and s.iters == 5


# -- optimality report ---------------------------------------------------------------

@pytest.mark.parametrize("name", NAMES)
def test_sampled_oracle_pair_passes(name):
    a = catalog(name)
    x = GRID.coords()
    R = 0.8
    sol = StepSolution(ScalarField(GRID, oracles.resolvent_wulff(x, H, R, a)),
                       VectorField(GRID, oracles.resolvent_wulff_field(x, H, a)), 0.0, 0.0, 0)
    g = ScalarField(GRID, eval_polar(a, x) - R)
    rep = check_optimality(sol, g, H, a, 3 * GRID.spacing,
                           exclude=boundary_band(GRID, H) | seam_band(GRID, a, H))
    assert rep.passed, rep


def test_data_itself_fails_optimality():
    a = catalog("euclidean")
    g = ScalarField(GRID, smooth_random(GRID, 2))
    sol = StepSolution(g, VectorField(GRID, np.zeros(GRID.shape + (2,))), 0.0, 0.0, 0)
    rep = check_optimality(sol, g, H, a, 1e-3)
    assert not rep.passed
    assert rep.gap == pytest.approx(np.max(eval_phi(a, grad_array(g.values, GRID.spacing))))


@pytest.mark.parametrize("name", NAMES)
def test_random_data_passes_at_tight_tolerance(name):
    a = catalog(name)
    g = ScalarField(GRID, smooth_random(GRID, 3))
    s = implicit_step(g, H, a, SolverParams(gap_tol=1e-4, max_iters=200000))
    assert s.converged
    rep = check_optimality(s, g, H, a, 10 * s.tol_residual)
    assert rep.passed, rep


# -- properties ----------------------------------------------------------------------

def lipschitz_pair(a, seed, lip=1.0):
    """g1 <= g2 with phi(grad g) <= lip: the distance-like data the flow feeds the solver."""
    rng = np.random.default_rng(seed)
    base = ndimage.gaussian_filter(rng.normal(size=GRID.shape), 4)
    base *= lip / np.max(eval_phi(a, grad_array(base, GRID.spacing)))
    # nonnegative and zero on about half the box, so the two data touch
    bump = ndimage.gaussian_filter(rng.normal(size=GRID.shape), 6)
    bump = np.maximum(bump - np.median(bump), 0.0)
    bump *= 0.5 * lip / np.max(eval_phi(a, grad_array(bump, GRID.spacing)))
    return base, base + bump


@pytest.mark.parametrize("seed", range(3))
@pytest.mark.parametrize("name", NAMES)
def test_monotone_in_data(name, seed):
    a = catalog(name)
    g1, g2 = lipschitz_pair(a, seed)
    s1 = implicit_step(ScalarField(GRID, g1), H, a, TIGHT)
    s2 = implicit_step(ScalarField(GRID, g2), H, a, TIGHT)
    tol = max(s1.tol_residual, s2.tol_residual)
    assert np.all(s1.u.values <= s2.u.values + 2 * tol)


@settings(max_examples=3, deadline=None)
@given(seed=st.integers(0, 10 ** 6))
def test_monotone_for_steep_data_with_box_dual(seed):
    # separable l1 total variation is submodular, so comparison holds for any data
    a = catalog("ell1")
    g1 = smooth_random(GRID, seed)
    g2 = g1 + np.abs(smooth_random(GRID, seed + 1, amp=5))
    s1 = implicit_step(ScalarField(GRID, g1), H, a, TIGHT)
    s2 = implicit_step(ScalarField(GRID, g2), H, a, TIGHT)
    assert np.all(s1.u.values <= s2.u.values + 2 * max(s1.tol_residual, s2.tol_residual))


@pytest.mark.parametrize("name", NAMES)
@settings(max_examples=3, deadline=None)
@given(seed=st.integers(0, 10 ** 6), size=st.floats(0.01, 0.2))
def test_sup_norm_contraction(name, seed, size):
    a = catalog(name)
    g1, _ = lipschitz_pair(a, seed)
    p = smooth_random(GRID, seed + 1, sigma=3)
    g2 = g1 + p * (size / np.max(np.abs(p)))
    s1 = implicit_step(ScalarField(GRID, g1), H, a, TIGHT)
    s2 = implicit_step(ScalarField(GRID, g2), H, a, TIGHT)
    tol = max(s1.tol_residual, s2.tol_residual)
    assert np.max(np.abs(s1.u.values - s2.u.values)) <= np.max(np.abs(g1 - g2)) + 2 * tol


@pytest.mark.parametrize("name", NAMES)
def test_translation_equivariance(name):
    a = catalog(name)
    grid = Grid.centered((96, 96), 1 / 32)
    x = grid.coords()
    c = np.array([0.1, -0.05])
    shift = np.array([3, -2])
    g0 = eval_polar(a, x - c) - 0.5
    g1 = eval_polar(a, x - c - shift * grid.spacing) - 0.5
    s0 = implicit_step(ScalarField(grid, g0), H, a, TIGHT)
    s1 = implicit_step(ScalarField(grid, g1), H, a, TIGHT)
    moved = np.roll(s0.u.values, tuple(shift), axis=(0, 1))
    # compare far from the rim, where the two problems see the same data
    interior = (slice(28, -28), slice(28, -28))
    tol = max(s0.tol_residual, s1.tol_residual)
    assert np.max(np.abs(moved - s1.u.values)[interior]) <= 2 * tol


@pytest.mark.parametrize("name", ["euclidean", "ell1"])
def test_lipschitz_data_gives_lipschitz_solution(name):
    a = catalog(name)
    x = GRID.coords()
    # a 1-Lipschitz ramp with an admissible slope in every direction
    v = np.array([0.8, 0.3])
    v /= eval_phi(a, v)
    g = np.minimum(x @ v, 0.2)
    assert np.max(eval_phi(a, grad_array(g, GRID.spacing))) <= 1 + 1e-12
    s = implicit_step(ScalarField(GRID, g), H, a)
    # the box rim is excluded: Neumann closure is not part of the statement
    interior = ~boundary_band(GRID, H)
    assert np.max(eval_phi(a, grad_array(s.u.values, GRID.spacing))[interior]) <= 1.02


@pytest.mark.parametrize("name", NAMES)
def test_solution_below_distance_of_its_zero_set(name):
    a = catalog(name)
    x = GRID.coords()
    d = signed_distance(SetMask(GRID, eval_polar(a, x) <= 0.6), a)
    s = implicit_step(d, H, a)
    E1 = SetMask(GRID, s.u.values <= 0)
    d1 = signed_distance(E1, a).values
    region = d1 > 2 * GRID.spacing
    assert np.all(s.u.values[region] <= d1[region] + 2 * GRID.spacing)


def test_frozen_cells_keep_their_values():
    a = catalog("euclidean")
    g = np.full(GRID.shape, 5.0)
    g[20:40, 20:40] = 0.3
    s = implicit_step(ScalarField(GRID, g), H, a, cap=10.0)
    assert np.all(s.u.values[g == 5.0] == 5.0)
    assert s.frozen.sum() == np.sum(g == 5.0)
