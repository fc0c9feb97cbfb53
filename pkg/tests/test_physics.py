"""Physics tests: scaling, residuals, loss assembly and the batch objective."""

import numpy as np
import pytest
from pydantic import ValidationError

from pinnflow.config import Formulation
from pinnflow.errors import ContractViolationError, DimensionMismatchError, NonFiniteLossError
from pinnflow.network.kinematics import KinematicState
from pinnflow.network.layout import OutputLayout
from pinnflow.network.params import init_params
from pinnflow.physics.flows import biquadratic_inflow, parabolic_inflow, poiseuille_solution
from pinnflow.physics.loss import assemble_loss, mse, mse_cotangent
from pinnflow.physics.objective import PhysicsObjective, TrainingBatch, loss_breakdown
from pinnflow.physics.residuals import ResidualVector, compute_residuals
from pinnflow.physics.scales import ReferenceScales, nondimensionalize, redimensionalize, reynolds

CYLINDER = ReferenceScales(l_ref=1.1, v_ref=1.4, rho=1.0, mu=0.02)


# ── scales ─────────────────────────────────────────────────────────────


def test_nondimensionalize_reference_values():
    """Reference-sized values become 1."""
    scaled = nondimensionalize(CYLINDER, position=[1.1], velocity=[1.4], pressure=[1.96])
    assert scaled.position[0] == pytest.approx(1.0)
    assert scaled.velocity[0] == pytest.approx(1.0)
    assert scaled.pressure[0] == pytest.approx(1.0)


def test_redimensionalize():
    """Nondimensional pressure 1 is rho V_ref^2 in SI units."""
    si = redimensionalize(CYLINDER, velocity=np.zeros(3), pressure=[1.0])
    assert si.pressure[0] == pytest.approx(1.96)
    assert np.all(si.velocity == 0.0)
    assert si.position is None


def test_reynolds_numbers():
    """Re for the cylinder and T-junction scales, and its inverse dependence on mu."""
    assert reynolds(CYLINDER) == pytest.approx(77.0)
    tjunction = ReferenceScales(l_ref=0.3, v_ref=1.0, rho=1.0, mu=0.02)
    assert reynolds(tjunction) == pytest.approx(15.0)
    thicker = ReferenceScales(l_ref=1.1, v_ref=1.4, rho=1.0, mu=0.04)
    assert reynolds(thicker) == pytest.approx(reynolds(CYLINDER) / 2)


def test_scales_reject_nonpositive():
    """Zero scales and Re below the floor fail validation."""
    with pytest.raises(ValidationError):
        ReferenceScales(l_ref=0.0)
    with pytest.raises(ValidationError):
        ReferenceScales(l_ref=1e-6, v_ref=1e-6, mu=10.0)


def test_scale_defaults_are_the_cylinder_case():
    """Defaults give the 3D cylinder scales and Re = 77; unknown keys are rejected."""
    assert ReferenceScales() == CYLINDER
    assert reynolds(ReferenceScales()) == pytest.approx(77.0)
    assert ReferenceScales().pressure_scale == pytest.approx(1.96)
    with pytest.raises(ValidationError):
        ReferenceScales(L_ref=1.0)


# ── residuals ──────────────────────────────────────────────────────────


def _rest_state(n: int, n_sd: int, p: float) -> KinematicState:
    return KinematicState(
        velocity=np.zeros((n, n_sd)),
        grad_v=np.zeros((n, n_sd, n_sd)),
        pressure=np.full(n, p),
        sigma=np.broadcast_to(-p * np.eye(n_sd), (n, n_sd, n_sd)).copy(),
        div_sigma=np.zeros((n, n_sd)),
    )


@pytest.mark.parametrize("n_sd", [2, 3])
@pytest.mark.parametrize("p", [0.0, 0.8])
def test_hydrostatic_rest_has_no_residual(n_sd, p):
    """A fluid at rest under uniform pressure satisfies every equation."""
    residuals = compute_residuals(_rest_state(4, n_sd, p), re=77.0, n_sd=n_sd)
    assert np.all(residuals.momentum == 0.0)
    assert np.all(residuals.stress == 0.0)
    assert np.all(residuals.trace == 0.0)
    assert residuals.continuity is None


def test_nonpositive_reynolds_rejected():
    """Residuals need a positive Reynolds number."""
    with pytest.raises(ContractViolationError):
        compute_residuals(_rest_state(1, 2, 0.0), re=0.0, n_sd=2)


def _cellular_flow(points: np.ndarray, re: float) -> KinematicState:
    """Psi = sin x sin y with the pressure that balances convection.

    The only unbalanced term is the viscous one, so the momentum residual is
    2 v / Re exactly.
    """
    x, y = points[:, 0], points[:, 1]
    v = np.column_stack([np.sin(x) * np.cos(y), -np.cos(x) * np.sin(y)])
    grad_v = np.empty((len(x), 2, 2))
    grad_v[:, 0, 0] = np.cos(x) * np.cos(y)
    grad_v[:, 0, 1] = -np.sin(x) * np.sin(y)
    grad_v[:, 1, 0] = np.sin(x) * np.sin(y)
    grad_v[:, 1, 1] = -np.cos(x) * np.cos(y)
    p = 0.25 * (np.cos(2 * x) + np.cos(2 * y))
    grad_p = np.column_stack([-0.5 * np.sin(2 * x), -0.5 * np.sin(2 * y)])
    lap_v = -2.0 * v
    sigma = (grad_v + np.swapaxes(grad_v, 1, 2)) / re - p[:, None, None] * np.eye(2)
    return KinematicState(
        velocity=v,
        grad_v=grad_v,
        pressure=p,
        sigma=sigma,
        div_sigma=lap_v / re - grad_p,
        grad_p=grad_p,
        lap_v=lap_v,
    )


@pytest.mark.parametrize("formulation", list(Formulation))
def test_cellular_flow_residuals(formulation):
    """Every formulation leaves only the viscous imbalance of the cellular flow."""
    re = 15.0
    points = np.random.default_rng(0).uniform(-np.pi, np.pi, size=(50, 2))
    state = _cellular_flow(points, re)
    residuals = compute_residuals(state, re, 2, formulation)
    np.testing.assert_allclose(residuals.momentum, 2.0 * state.velocity / re, atol=1e-14)
    if residuals.stress is not None:
        np.testing.assert_allclose(residuals.stress, 0.0, atol=1e-14)
        np.testing.assert_allclose(residuals.trace, 0.0, atol=1e-14)
    if residuals.continuity is not None:
        np.testing.assert_allclose(residuals.continuity, 0.0, atol=1e-14)


def test_stress_residual_unique_components():
    """3D stress residuals hold the six unique components."""
    state = _rest_state(2, 3, 0.0)
    state.sigma[:, 0, 1] = state.sigma[:, 1, 0] = 0.5
    residuals = compute_residuals(state, re=10.0, n_sd=3)
    assert residuals.stress.shape == (2, 6)
    np.testing.assert_array_equal(residuals.stress[:, 1], [-0.5, -0.5])


# ── loss ───────────────────────────────────────────────────────────────


def _residual_zeros(n: int, n_sd: int = 3) -> ResidualVector:
    pairs = 6 if n_sd == 3 else 3
    return ResidualVector(momentum=np.zeros((n, n_sd)), stress=np.zeros((n, pairs)), trace=np.zeros(n))


def test_zero_errors_give_zero_loss():
    """Zero residuals and errors give zero in every term."""
    breakdown = assemble_loss(_residual_zeros(3), np.zeros((2, 3)), np.zeros(1), f_bc=10.0, f_sigma=1.0)
    for name in ("l_d", "l_n", "l_v", "l_sigma", "l_p", "l_c", "l_f", "l_total"):
        assert breakdown.as_dict()[name] == 0.0


def test_single_dirichlet_error():
    """One point with error (1, 0, 0): L_D is the mean over components."""
    breakdown = assemble_loss(None, np.array([[1.0, 0.0, 0.0]]), None, f_bc=10.0, f_sigma=1.0)
    assert breakdown.l_d == pytest.approx(1.0 / 3.0)
    assert breakdown.l_total == pytest.approx(10.0 * breakdown.l_d)
    assert breakdown.l_f == 0.0


def test_stress_weight_scales_only_stress_term():
    """f_sigma multiplies L_sigma only."""
    residuals = _residual_zeros(1)
    residuals.stress[:] = 0.1
    breakdown = assemble_loss(residuals, None, None, f_bc=10.0, f_sigma=100.0)
    assert breakdown.l_sigma == pytest.approx(0.01)
    assert breakdown.l_f == pytest.approx(1.0)
    assert breakdown.l_total == pytest.approx(1.0)


def test_residual_scaling_is_quadratic():
    """Scaling every residual and boundary error by c scales L_f and L_total by c squared."""
    rng = np.random.default_rng(3)
    residuals = ResidualVector(
        momentum=rng.normal(size=(7, 3)), stress=rng.normal(size=(7, 6)), trace=rng.normal(size=7), continuity=rng.normal(size=7)
    )
    dirichlet, neumann = rng.normal(size=(4, 3)), rng.normal(size=3)
    base = assemble_loss(residuals, dirichlet, neumann, f_bc=10.0, f_sigma=2.5)
    for c in (0.1, 3.0, -2.0):
        scaled = ResidualVector(
            momentum=c * residuals.momentum,
            stress=c * residuals.stress,
            trace=c * residuals.trace,
            continuity=c * residuals.continuity,
        )
        loss = assemble_loss(scaled, c * dirichlet, c * neumann, f_bc=10.0, f_sigma=2.5)
        assert loss.l_f == pytest.approx(c**2 * base.l_f, rel=1e-12)
        assert loss.l_total == pytest.approx(c**2 * base.l_total, rel=1e-12)


def test_all_empty_rejected():
    """A loss over no points is a contract violation."""
    with pytest.raises(ContractViolationError):
        assemble_loss(None, np.zeros((0, 3)), None, f_bc=1.0, f_sigma=1.0)


def test_mse_helpers():
    """Mean squares ignore missing arrays and their cotangent is 2 w e / N."""
    assert mse(None) == 0.0
    assert mse(np.zeros((0, 3))) == 0.0
    assert mse(np.array([3.0, 4.0])) == pytest.approx(12.5)
    np.testing.assert_allclose(mse_cotangent(np.array([3.0, 4.0]), 2.0), [6.0, 8.0])


# ── objective ──────────────────────────────────────────────────────────


def _batch(n_in: int = 2, seed: int = 0) -> TrainingBatch:
    rng = np.random.default_rng(seed)
    return TrainingBatch(
        volume=rng.uniform(-1, 1, (12, n_in)),
        dirichlet=rng.uniform(-1, 1, (5, n_in)),
        dirichlet_velocity=rng.normal(size=(5, 2)),
        neumann=rng.uniform(-1, 1, (3, n_in)),
        neumann_pressure=rng.normal(size=3),
        index=4,
    )


def test_batch_labels_must_align():
    """Every boundary point needs a label."""
    with pytest.raises(DimensionMismatchError):
        TrainingBatch(
            volume=np.zeros((1, 2)),
            dirichlet=np.zeros((2, 2)),
            dirichlet_velocity=np.zeros((1, 2)),
            neumann=np.zeros((0, 2)),
            neumann_pressure=np.zeros(0),
        )


@pytest.mark.parametrize("formulation", list(Formulation))
def test_objective_gradient_matches_differences(formulation):
    """Gradient over all three populations against central differences."""
    params = init_params(2, 5, 2, False, 3, formulation=formulation)
    layout = OutputLayout.for_formulation(2, formulation)
    objective = PhysicsObjective(params, _batch(), layout, re=30.0, f_bc=10.0, f_sigma=2.0)
    theta = params.to_vector()
    _, grad = objective(theta)
    numeric = np.zeros_like(theta)
    h = 1e-6
    for k in range(theta.size):
        step = np.zeros_like(theta)
        step[k] = h
        numeric[k] = (objective(theta + step)[0] - objective(theta - step)[0]) / (2 * h)
    scale = np.max(np.abs(numeric))
    assert np.max(np.abs(grad - numeric)) / scale < 1e-5


def test_objective_breakdown_matches_forward_only():
    """The gradient pass reports the same loss terms as a forward-only pass."""
    params = init_params(2, 5, 2, False, 1)
    layout = OutputLayout.for_formulation(2)
    batch = _batch(seed=2)
    loss, _, breakdown = PhysicsObjective(params, batch, layout, 30.0, 10.0, 1.0).evaluate(params)
    reference = loss_breakdown(params, batch, layout, 30.0, 10.0, 1.0)
    assert loss == pytest.approx(reference.l_total, rel=1e-12)
    assert breakdown.l_d == pytest.approx(reference.l_d, rel=1e-12)
    assert breakdown.l_sigma == pytest.approx(reference.l_sigma, rel=1e-12)


def test_objective_counts_evaluations():
    """Each call counts one evaluation and keeps the breakdown."""
    params = init_params(1, 3, 2, False, 1)
    objective = PhysicsObjective(params, _batch(), OutputLayout.for_formulation(2), 30.0, 10.0, 1.0)
    objective(params.to_vector())
    objective(params.to_vector())
    assert objective.evaluations == 2
    assert objective.breakdown is not None


def test_non_finite_trial_returns_infinity():
    """Calling the objective turns a non-finite loss into inf; evaluate still raises."""
    params = init_params(1, 3, 2, False, 1)
    layout = OutputLayout.for_formulation(2)
    objective = PhysicsObjective(params, _batch(), layout, 30.0, 10.0, 1.0)
    objective(params.to_vector())
    finite = objective.breakdown
    objective.dirichlet.target = np.full_like(objective.dirichlet.target, np.nan)
    loss, grad = objective(params.to_vector())
    assert loss == np.inf
    assert grad.shape == (params.n_params,)
    assert np.all(np.isnan(grad))
    assert objective.breakdown is finite
    with pytest.raises(NonFiniteLossError):
        objective.evaluate(params)


# ── analytic flows ─────────────────────────────────────────────────────


def test_parabolic_inflow_peak_and_walls():
    """The parabolic inflow peaks mid-channel and vanishes at the walls."""
    speeds = parabolic_inflow(np.array([-0.5, 0.0, 0.5]), height=1.0, v_max=1.4)
    np.testing.assert_allclose(speeds, [0.0, 1.4, 0.0])


def test_biquadratic_inflow_peak():
    """The bi-quadratic inflow peaks on the duct axis and vanishes at the walls."""
    assert biquadratic_inflow(0.0, 0.2, height=0.41, width=0.4, v_max=1.4) == pytest.approx(1.4)
    assert biquadratic_inflow(0.205, 0.2, height=0.41, width=0.4) == pytest.approx(0.0)


def test_poiseuille_pressure_drop():
    """Pressure falls linearly to zero at the outlet with slope 8 mu v_max / H^2."""
    points = np.array([[0.0, 0.0], [2.0, 0.3]])
    velocity, pressure = poiseuille_solution(points, height=1.0, length=2.0, v_max=1.0, mu=0.02)
    assert pressure[0] == pytest.approx(8 * 0.02 * 2.0)
    assert pressure[1] == pytest.approx(0.0)
    assert velocity[0, 0] == pytest.approx(1.0)
    assert np.all(velocity[:, 1] == 0.0)
