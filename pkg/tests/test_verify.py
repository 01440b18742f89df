import math

import numpy as np
import pytest
from scipy import ndimage

from crystalflow import oracles
from crystalflow.anisotropy import catalog, eval_polar, wulff_mask
from crystalflow.disttransform import signed_distance
from crystalflow.fields import Grid, ScalarField, SetMask, VectorField, div_array
from crystalflow.flow import FlowParams, FlowTrace, StepRecord, Termination, run_flow
from crystalflow.resolvent import implicit_step
from crystalflow.verify import (PreconditionViolation, boundary_band, check_comparison,
                                check_divz_bounds, check_lipschitz, check_shrink_bound,
                                check_supersolution_step, run_suite, set_distance)

EUC = catalog("euclidean")
DX = 1 / 32
GRID = Grid.centered((80, 80), DX)
H = 0.01


def blob(grid, seed, n=4):
    """Union of a few random disks around the origin, smoothed."""
    rng = np.random.default_rng(seed)
    x = grid.coords()
    inside = np.zeros(grid.shape, dtype=bool)
    for _ in range(n):
        c = rng.uniform(-0.35, 0.35, size=2)
        inside |= np.linalg.norm(x - c, axis=-1) <= rng.uniform(0.2, 0.4)
    return SetMask(grid, ndimage.binary_opening(inside, iterations=2))


def eroded(F: SetMask, a, delta) -> SetMask:
    return SetMask(F.grid, signed_distance(F, a).values <= -delta)


def one_step(E: SetMask, a, h=H):
    d_prev = signed_distance(E, a)
    sol = implicit_step(d_prev, h, a)
    E1 = SetMask(E.grid, sol.u.values <= 0)
    return d_prev, signed_distance(E1, a), sol


# -- comparison ----------------------------------------------------------------------

def test_concentric_wulff_shapes_keep_their_distance():
    R, D0, h = 0.5, 0.25, 0.01
    fp = FlowParams(h, 0.1)
    trE = run_flow(wulff_mask(EUC, GRID, [0, 0], R), EUC, fp)
    trF = run_flow(wulff_mask(EUC, GRID, [0, 0], R + D0), EUC, fp)
    rep = check_comparison(trE, trF, EUC)
    assert rep.passed, rep
    checked = 0
    for k in range(len(trE.steps)):
        inner = oracles.radius_recursion(R, h, k)
        if oracles.is_extinct(inner) or trE.steps[k].mask.is_empty():
            continue
        checked += 1
        dk = set_distance(trE.steps[k].mask, trF.steps[k].mask, EUC)
        expect = oracles.radius_recursion(R + D0, h, k) - inner
        assert abs(dk - expect) <= 4 * DX
    assert checked >= 5


def test_identical_data_pass_by_inclusion():
    tr = run_flow(wulff_mask(EUC, GRID, [0, 0], 0.6), EUC, FlowParams(H, 0.05))
    rep = check_comparison(tr, tr, EUC)
    assert rep.passed
    assert rep.worst_violation <= 0


@pytest.mark.parametrize("seed", range(10))
def test_random_nested_blobs(seed):
    F0 = blob(GRID, seed)
    E0 = eroded(F0, EUC, 0.1)
    fp = FlowParams(0.01, 0.05)
    rep = check_comparison(run_flow(E0, EUC, fp), run_flow(F0, EUC, fp), EUC)
    assert rep.passed, rep


def test_comparison_preconditions():
    tr_small = run_flow(wulff_mask(EUC, GRID, [0, 0], 0.4), EUC, FlowParams(H, 0.02))
    tr_big = run_flow(wulff_mask(EUC, GRID, [0, 0], 0.6), EUC, FlowParams(H, 0.02))
    with pytest.raises(PreconditionViolation):
        check_comparison(tr_big, tr_small, EUC)
    other = run_flow(wulff_mask(EUC, GRID, [0, 0], 0.6), EUC, FlowParams(2 * H, 0.02))
    with pytest.raises(PreconditionViolation):
        check_comparison(tr_small, other, EUC)


def test_tampered_trace_fails_comparison():
    fp = FlowParams(H, 0.05)
    trE = run_flow(wulff_mask(EUC, GRID, [0, 0], 0.4), EUC, fp)
    trF = run_flow(wulff_mask(EUC, GRID, [0, 0], 0.6), EUC, fp)
    # swap in a big mask at step 2 of the inner trace
    trE.steps[2] = StepRecord(2, trE.steps[2].t, wulff_mask(EUC, GRID, [0, 0], 0.9))
    rep = check_comparison(trE, trF, EUC)
    assert not rep.passed
    assert math.isinf(rep.worst_violation) and rep.location[0] == 2


# -- supersolution -------------------------------------------------------------------

def test_supersolution_on_wulff_step():
    E = wulff_mask(EUC, GRID, [0, 0], 0.6)
    d_prev, d_next, sol = one_step(E, EUC)
    delta = 2 * DX
    rep = check_supersolution_step(d_prev, d_next, sol.z, H, delta, sol.residual)
    assert rep.passed, rep
    # off the plateau both sides follow the curvature of the level sets
    div = div_array(sol.z.values, DX)
    rhs = (d_next.values - d_prev.values) / H
    r = eval_polar(EUC, GRID.coords())
    ring = (r > 0.9) & (r < 1.0)
    np.testing.assert_allclose(np.median(div[ring] * r[ring]), 1.0, atol=0.1)
    # the distance difference moves in whole cells: compare with the radius recursion
    drop = (0.6 - oracles.one_step_radius(0.6, H)) / H
    assert drop == pytest.approx(1 / 0.6, rel=0.05)
    assert abs(np.median(rhs[ring]) - drop) <= 2 * DX / H


def test_supersolution_constant_step():
    d = ScalarField(GRID, np.full(GRID.shape, 0.5))
    z = VectorField(GRID, np.zeros(GRID.shape + (2,)))
    rep = check_supersolution_step(d, d, z, H, 2 * DX)
    assert rep.passed and rep.worst_violation == 0.0


def test_supersolution_rejects_small_delta():
    d = ScalarField(GRID, np.zeros(GRID.shape))
    z = VectorField(GRID, np.zeros(GRID.shape + (2,)))
    with pytest.raises(PreconditionViolation):
        check_supersolution_step(d, d, z, H, DX)


@pytest.mark.parametrize("seed", range(10))
def test_supersolution_random_step(seed):
    d_prev, d_next, sol = one_step(blob(GRID, 100 + seed), EUC)
    rep = check_supersolution_step(d_prev, d_next, sol.z, H, 2 * DX, sol.residual)
    assert rep.passed, rep


# -- divergence bounds ---------------------------------------------------------------

def test_divz_zero_field_passes():
    z = VectorField(GRID, np.zeros(GRID.shape + (2,)))
    d = ScalarField(GRID, eval_polar(EUC, GRID.coords()) - 0.3)
    rep = check_divz_bounds(z, d, H, 0.5)
    assert rep.passed


def test_divz_precondition():
    z = VectorField(GRID, np.zeros(GRID.shape + (2,)))
    d = ScalarField(GRID, np.zeros(GRID.shape))
    with pytest.raises(PreconditionViolation):
        check_divz_bounds(z, d, 0.5, 0.5)


def test_divz_upper_bound_is_tight_for_wulff():
    # from a small Wulff shape the field is x / phi_polar(x), whose divergence is 1/phi_polar
    R0, R = 0.05, 0.6
    x = GRID.coords()
    d = ScalarField(GRID, eval_polar(EUC, x) - R0)
    z = VectorField(GRID, oracles.resolvent_wulff_field(x, H, EUC))
    rep = check_divz_bounds(z, d, H, R)
    assert rep.passed, rep
    div = div_array(z.values, DX)
    region = (d.values >= R) & ~boundary_band(GRID, H)
    assert div[region].max() >= (1 / R) / 1.1


@pytest.mark.parametrize("seed", range(5))
def test_divz_random_step(seed):
    d_prev, _, sol = one_step(blob(GRID, 200 + seed), EUC)
    rep = check_divz_bounds(sol.z, d_prev, H, 0.2, sol.residual)
    assert rep.passed, rep


# -- Lipschitz -----------------------------------------------------------------------

def test_lipschitz_ramp_passes_and_double_fails():
    v = np.array([0.6, 0.8])
    u = ScalarField(GRID, GRID.coords() @ v)
    assert check_lipschitz(u, EUC).passed
    assert not check_lipschitz(ScalarField(GRID, 2 * u.values), EUC).passed


def test_lipschitz_sampled_polar_off_center():
    # forward differences of |x| overshoot by about 0.3 dx / |x|
    g = Grid.centered((128, 128), DX)
    p = eval_polar(EUC, g.coords())
    rep = check_lipschitz(ScalarField(g, p), EUC, exclude=p < 24 * DX)
    assert rep.passed, rep


@pytest.mark.parametrize("name", ["euclidean", "ell1", "hexagon"])
def test_lipschitz_twice_polar_fails(name):
    a = catalog(name)
    u = ScalarField(GRID, 2 * eval_polar(a, GRID.coords()))
    rep = check_lipschitz(u, a)
    assert not rep.passed and rep.worst_violation > 0.5


@pytest.mark.parametrize("name", ["euclidean", "ell1", "hexagon"])
def test_lipschitz_sampled_polar_whole_grid(name):
    a = catalog(name)
    assert check_lipschitz(ScalarField(GRID, eval_polar(a, GRID.coords())), a).passed


# -- shrink bound --------------------------------------------------------------------

def test_shrink_bound_on_wulff_trace():
    tr = run_flow(wulff_mask(EUC, GRID, [0, 0], 0.8), EUC, FlowParams(H, 0.15))
    rep = check_shrink_bound(tr, EUC)
    assert rep.passed, rep
    # on a Wulff trace the bound at the centre is the radius estimate r >= sqrt(R^2 - 4t)
    for k, rec in enumerate(tr.steps):
        r = max(np.max(eval_polar(EUC, GRID.coords()[rec.mask.inside])), 0)
        assert r >= oracles.radius_lower_bound(0.8, k * H) - 4 * DX


def test_shrink_bound_empty_trace_is_vacuous():
    empty = SetMask(GRID, np.zeros(GRID.shape))
    fp = FlowParams(H, 0.05)
    tr = FlowTrace(fp, EUC, [StepRecord(k, k * H, empty) for k in range(4)], 0.0,
                   Termination.EXTINCT)
    rep = check_shrink_bound(tr, EUC)
    assert rep.passed and rep.worst_violation == 0.0


@pytest.mark.parametrize("seed", range(3))
def test_shrink_bound_random_blob(seed):
    tr = run_flow(blob(GRID, 300 + seed), EUC, FlowParams(H, 0.1))
    assert check_shrink_bound(tr, EUC).passed


def test_checks_are_deterministic():
    tr = run_flow(blob(GRID, 7), EUC, FlowParams(H, 0.05, record_fields=True))
    a = [r.to_dict() for r in run_suite(tr, EUC)]
    b = [r.to_dict() for r in run_suite(tr, EUC)]
    assert a == b


def test_suite_needs_fields():
    tr = run_flow(blob(GRID, 7), EUC, FlowParams(H, 0.03))
    with pytest.raises(ValueError, match="record_fields"):
        run_suite(tr, EUC, "lipschitz")
    assert [r.name for r in run_suite(tr, EUC, "shrink")] == ["shrink_bound"]
    with pytest.raises(ValueError):
        run_suite(tr, EUC, "nonsense")


def test_report_pass_matches_tolerance():
    rep = check_shrink_bound(run_flow(wulff_mask(EUC, GRID, [0, 0], 0.5), EUC,
                                      FlowParams(H, 0.05)), EUC)
    assert rep.passed == (rep.worst_violation <= rep.tolerance_used)
    d = rep.to_dict()
    assert set(d) == {"name", "pass", "worst_violation", "location", "tolerance_used"}
