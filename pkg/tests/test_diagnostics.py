import numpy as np
import pytest

from conftest import seven_point_integral
from nsch import build_structured_mesh
from nsch import diagnostics as dg
from nsch.driver import droplet_pair, example1_phase
from nsch.potentials import PhysParams
from nsch.schemes import Params, State, Stepper

ETA = 0.01


def _stepper(mesh, scheme="Geps", dt=1e-4, tol=1e-8):
    phys = PhysParams(eta=ETA, eps=1e-8, lam=0.1, gamma=1e-3, nu=1.0)
    return Stepper(mesh, Params(phys=phys, dt=dt, scheme=scheme, tol=tol))


def _state(st, phi, u=None):
    u = np.zeros((2, st.Nb)) if u is None else u
    return State(u, np.zeros(st.N), np.asarray(phi, dtype=float), np.zeros(st.N))


def test_energies_of_pure_phase_at_rest(mesh4):
    st = _stepper(mesh4)
    assert dg.energies(st, _state(st, np.zeros(st.N))) == (0.0, 0.0, 0.0)
    e_kin, e_mix, e_tot = dg.energies(st, _state(st, np.ones(st.N)))
    assert e_kin == 0.0 and e_mix == pytest.approx(0.0, abs=1e-25)


@pytest.mark.parametrize("scheme", ["Geps", "Jeps", "CM"])
def test_energy_of_uniform_mixture(mesh4, scheme):
    # lam * F(1/2) * |Omega| = 0.1 * 1/(64 eta^2)
    st = _stepper(mesh4, scheme)
    _, e_mix, e_tot = dg.energies(st, _state(st, np.full(st.N, 0.5)))
    assert e_mix == pytest.approx(15.625, rel=1e-13)
    assert e_tot == e_mix


def test_kinetic_energy_of_uniform_flow(mesh4):
    st = _stepper(mesh4)
    u = np.zeros((2, st.Nb))
    u[0, : st.N] = 3.0
    u[1, : st.N] = -4.0
    e_kin, _, _ = dg.energies(st, _state(st, np.zeros(st.N), u))
    assert e_kin == pytest.approx(12.5, rel=1e-13)


def test_mixing_integral_against_seven_point_rule(mesh4, rng):
    st = _stepper(mesh4, "Jeps")
    phi = rng.uniform(-0.1, 1.1, st.N)
    el = mesh4.elements

    def F_at(e, bary):
        p = bary @ phi[el[e]]
        return p**2 * (1 - p) ** 2 / (4 * ETA**2)

    assert dg.mixing_potential_integral(st, phi) == pytest.approx(seven_point_integral(mesh4, F_at), rel=1e-12)
    lumped = dg.mixing_potential_integral(_stepper(mesh4, "Geps"), phi)
    assert lumped == pytest.approx(np.sum(mesh4.lumped_mass * phi**2 * (1 - phi) ** 2) / (4 * ETA**2), rel=1e-13)


def test_volume_of_example_one_is_second_order():
    errs = []
    for n in (32, 64):
        mesh = build_structured_mesh(n)
        phi = example1_phase(mesh.nodes[:, 0], mesh.nodes[:, 1])
        st = _stepper(mesh)
        errs.append(abs(dg.make_record(st, _state(st, phi), 0).volume - 0.5))
    assert errs[0] <= 5.0 / 32**2
    assert errs[1] <= errs[0] / 3.5


def test_bound_violations_of_constants(mesh4):
    st = _stepper(mesh4)
    neg, over, lo, hi = dg.bound_violations(st, np.full(st.N, -0.2))
    assert neg == pytest.approx(0.04, rel=1e-13) and over == 0.0
    assert lo == hi == -0.2
    neg, over, _, _ = dg.bound_violations(st, np.full(st.N, 1.5))
    assert neg == 0.0 and over == pytest.approx(0.25, rel=1e-13)


def test_bound_violations_against_seven_point_rule(mesh8, rng):
    st = _stepper(mesh8)
    phi = rng.uniform(-0.3, 1.3, st.N)
    neg_nodal = np.minimum(phi, 0.0)
    over_nodal = np.maximum(phi - 1.0, 0.0)
    el = mesh8.elements
    neg_ref = seven_point_integral(mesh8, lambda e, b: (b @ neg_nodal[el[e]]) ** 2)
    over_ref = seven_point_integral(mesh8, lambda e, b: (b @ over_nodal[el[e]]) ** 2)
    neg, over, lo, hi = dg.bound_violations(st, phi)
    assert neg == pytest.approx(neg_ref, rel=1e-12)
    assert over == pytest.approx(over_ref, rel=1e-12)
    assert (lo, hi) == (phi.min(), phi.max())


@pytest.mark.parametrize("scheme", ["Geps", "Jeps"])
def test_stationary_step_has_zero_residuals(mesh4, scheme):
    st = _stepper(mesh4, scheme)
    s0 = st.initial_state(np.full(st.N, 0.5))
    s1, _ = st.step(s0)
    res, scale = dg.energy_law_residual(st, s0, s1)
    assert abs(res) <= 1e-12 * scale
    est, est_scale = dg.estimate_residuals(st, s0, s1)
    # only the gradient terms could contribute, and they vanish
    assert abs(est) <= 1e-12 * max(est_scale, 1.0)


@pytest.mark.parametrize("scheme", ["Geps", "Jeps", "CM"])
def test_discrete_energy_law_on_a_merging_step(scheme):
    mesh = build_structured_mesh(16)
    st = _stepper(mesh, scheme, tol=1e-10)
    x, y = mesh.nodes[:, 0], mesh.nodes[:, 1]
    s0 = st.initial_state(droplet_pair(x, y, "merging", ETA))
    s1, _ = st.step(s0)
    terms = dg.energy_law_terms(st, s0, s1)
    assert terms["dE"] < 0
    assert all(terms[k] >= 0 for k in ("viscous", "mobility", "kinetic_jump", "interface_jump"))
    res, scale = dg.energy_law_residual(st, s0, s1)
    assert res <= 1e-6 * scale
    rec = dg.make_record(st, s1, 1, prev=s0, fp_iters=2)
    assert rec.energy_residual == res and rec.fp_iters == 2
    if scheme == "Geps":
        assert rec.G_residual <= 0 and np.isnan(rec.J_residual)
    elif scheme == "Jeps":
        assert rec.J_residual <= 0 and np.isnan(rec.G_residual)
    else:
        assert np.isnan(rec.G_residual) and np.isnan(rec.J_residual)


def test_estimate_rejects_cm_and_mismatch(mesh4):
    st = _stepper(mesh4, "CM")
    s = _state(st, np.full(st.N, 0.5))
    with pytest.raises(ValueError):
        dg.estimate_residuals(st, s, s)
    with pytest.raises(ValueError):
        dg.estimate_residuals(_stepper(mesh4, "Geps"), s, s, scheme="Jeps")


def test_record_fields_and_dict(mesh4):
    st = _stepper(mesh4)
    rec = dg.make_record(st, _state(st, np.full(st.N, 0.25)), 3)
    d = rec.as_dict()
    assert list(d) == dg.RECORD_FIELDS
    assert d["step"] == 3 and np.isnan(d["energy_residual"])
    assert d["volume"] == pytest.approx(0.25, rel=1e-13)
    assert d["G_func"] >= 0 and d["J_func"] >= 0
