"""Free-term families: evaluation, exact conditionals, Malliavin readouts."""

import math

import numpy as np
import pytest

from bsvielab.girsanov import drift, sample_paths
from bsvielab.kernels import TriangularGrid, constant_kernel
from bsvielab.measures import DiracAt, Uniform
from bsvielab.terminal import (
    Deterministic,
    GaussianLinear,
    QuadratureError,
    TerminalFunction,
    conditional_F,
    conditional_sweep,
    evaluate_F,
    is_stochastic,
    make_f0,
    make_h,
    make_phi,
    malliavin_F,
)

T = 1.0


def grid(n=50):
    return TriangularGrid(horizon=T, n=n)


def ens(n=50, m=2000, seed=3, mode="Q", drift_fn=None):
    return sample_paths(grid(n), m, seed, mode, drift_fn)


def test_deterministic_everywhere():
    fam = Deterministic(f0=make_f0("constant", value=1.0))
    e = ens(m=17)
    assert np.all(evaluate_F(fam, 0.3, e) == 1.0)
    assert np.all(conditional_F(fam, 0.3, 0.7, e) == 1.0)
    assert np.all(malliavin_F(fam, 0.3, 0.5, e) == 0.0)
    assert not is_stochastic(fam)


def test_gaussian_linear_telescopes_to_WT():
    fam = GaussianLinear(f0=make_f0("zero"), phi=make_phi("constant", value=1.0))
    e = ens(m=64)
    vals = evaluate_F(fam, 0.2, e)
    assert np.allclose(vals, e.w[:, -1])


def test_terminal_function_pointwise():
    fam = make_h("square")
    e = ens(m=8)
    vals = evaluate_F(fam, 0.0, e)
    assert np.allclose(vals, e.w[:, -1] ** 2)
    dvals = malliavin_F(fam, 0.0, 0.4, e)
    assert np.allclose(dvals, 2.0 * e.w[:, -1])


def test_conditional_gaussian_linear_martingale():
    # phi == 1, b == 0: E[W(T) | F_r] = W(r)
    fam = GaussianLinear(f0=make_f0("zero"), phi=make_phi("constant"))
    e = ens(n=40, m=32)
    j = 13
    vals = conditional_F(fam, 0.9, e.grid.nodes[j], e)
    assert np.allclose(vals, e.w[:, j])


def test_conditional_terminal_function_second_moment():
    fam = make_h("square")
    e = ens(n=40, m=5)
    vals = conditional_F(fam, 0.0, 0.0, e)
    assert np.allclose(vals, T)  # E[W(T)^2] = T, exact for a 64-node rule


def test_conditional_with_drift_compensator():
    # phi == 1, uniform-measure drift: compensator is the left-point sum
    # of b over the unknown increments
    g = grid(20)
    b = drift(Uniform(T), constant_kernel(0.0, g_value=1.0), g)
    e = sample_paths(g, 16, 5, "Q", b)
    fam = GaussianLinear(f0=make_f0("zero"), phi=make_phi("constant"))
    j = 7
    vals = conditional_F(fam, 0.5, g.nodes[j], e, b)
    want = e.w[:, j] + (b.values[j:-1] * g.dt).sum()
    assert np.allclose(vals, want)


def test_tower_property_at_T():
    e = ens(n=30, m=40)
    fam_gl = GaussianLinear(f0=make_f0("constant", value=0.5),
                            phi=make_phi("exp_u", rate=1.0))
    assert np.allclose(conditional_F(fam_gl, 0.4, T, e),
                       evaluate_F(fam_gl, 0.4, e))
    fam_tf = make_h("exp")
    got = conditional_F(fam_tf, 0.0, T - 1e-12, e)
    want = evaluate_F(fam_tf, 0.0, e)
    assert np.abs(got - want).max() < 1e-5


def test_unconditional_matches_monte_carlo():
    fam = make_h("exp")
    e = ens(n=50, m=100_000, seed=11)
    cond0 = conditional_F(fam, 0.0, 0.0, e)
    assert np.allclose(cond0, cond0[0])  # no path dependence at r=0
    samples = evaluate_F(fam, 0.0, e)
    se = samples.std(ddof=1) / math.sqrt(len(samples))
    assert abs(samples.mean() - cond0[0]) < 3 * se
    # and the quadrature value is the exact lognormal mean e^{T/2}
    assert cond0[0] == pytest.approx(math.exp(0.5), rel=1e-10)


def test_malliavin_bump_consistency():
    fam = GaussianLinear(f0=make_f0("zero"), phi=make_phi("exp_u", rate=1.0))
    e = ens(n=20, m=6)
    k, eps, t = 9, 1e-3, 0.3
    base = evaluate_F(fam, t, e)
    e.dw[:, k] += eps
    bumped = evaluate_F(fam, t, e)
    e.dw[:, k] -= eps
    want = eps * math.exp(-e.grid.nodes[k])
    assert np.allclose(bumped - base, want)
    # and malliavin_F reads the same kernel value
    assert np.allclose(malliavin_F(fam, t, e.grid.nodes[k], e),
                       math.exp(-e.grid.nodes[k]))


def test_growth_envelope_enforced():
    bad = TerminalFunction(
        h=lambda t, x: np.exp(np.asarray(x, dtype=float)),
        dh=lambda t, x: np.exp(np.asarray(x, dtype=float)),
        growth_a=1.0, growth_b=0.5)
    e = ens(n=20, m=4)
    with pytest.raises(QuadratureError):
        conditional_F(bad, 0.0, 0.0, e)


def test_sweep_matches_pointwise_conditionals():
    g = grid(15)
    b = drift(Uniform(T), constant_kernel(0.0, g_value=0.7), g)
    e = sample_paths(g, 12, 8, "Q", b)
    fams = [
        Deterministic(f0=make_f0("exp_decay", rate=0.5)),
        GaussianLinear(f0=make_f0("constant", value=0.2),
                       phi=make_phi("exp_u", rate=2.0)),
        make_h("square"),
    ]
    for fam in fams:
        for i, c in conditional_sweep(fam, g, e, b):
            if i in (0, 7, 15):
                for a in (i, min(i + 3, 15)):
                    want = conditional_F(fam, g.nodes[a], g.nodes[i], e, b)
                    got = c[a] if c.shape[1] > 1 else np.full(12, c[a, 0])
                    assert np.allclose(got, want), (fam, i, a)


def test_registries_reject_unknown_names():
    with pytest.raises(KeyError):
        make_f0("nope")
    with pytest.raises(KeyError):
        make_phi("nope")
    with pytest.raises(KeyError):
        make_h("nope")


def test_affine_h_registry():
    fam = make_h("affine", intercept=0.5, slope=2.0)
    e = ens(n=10, m=7)
    assert np.allclose(evaluate_F(fam, 0.0, e), 0.5 + 2.0 * e.w[:, -1])
    assert np.allclose(malliavin_F(fam, 0.0, 0.5, e), 2.0)
