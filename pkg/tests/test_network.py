"""Network state tests: initialization, output layout, kinematics and checkpoints."""

import json

import numpy as np
import pytest

from pinnflow.autodiff.core import DerivativeBundle, forward_with_derivatives
from pinnflow.config import Formulation
from pinnflow.errors import CheckpointMismatchError, ContractViolationError, DimensionMismatchError
from pinnflow.network.checkpoint import Checkpoint, CheckpointHeader, load_checkpoint, save_checkpoint
from pinnflow.network.kinematics import kinematics_from_bundle
from pinnflow.network.layout import OutputLayout
from pinnflow.network.params import init_params
from pinnflow.physics.objective import TrainingBatch, loss_breakdown


def _header(params, **overrides) -> CheckpointHeader:
    data = dict(
        n_sd=params.input_width,
        parametric=False,
        layer_widths=params.layer_widths,
        l_ref=1.1,
        v_ref=1.4,
        rho=1.0,
        mu=0.02,
        seed=params.seed,
    )
    data.update(overrides)
    return CheckpointHeader(**data)


def _bundle(layout: OutputLayout, n_in: int, point_count: int = 1) -> DerivativeBundle:
    o = layout.size
    return DerivativeBundle(
        value=np.zeros((point_count, o)),
        jacobian=np.zeros((point_count, o, n_in)),
        hessian=np.zeros((point_count, o, n_in, n_in)),
    )


# ── initialization ─────────────────────────────────────────────────────


def test_init_widths_3d():
    """A 10x60 3D net has 3 inputs and 10 outputs."""
    params = init_params(10, 60, 3, False, 42)
    assert params.layer_widths == (3,) + (60,) * 10 + (10,)
    assert params.n_layers == 11


def test_init_minimal_2d():
    """A 1x1 2D net has 2 inputs, 5 outputs and zero biases."""
    params = init_params(1, 1, 2, False, 0)
    assert params.layer_widths == (2, 1, 5)
    assert all(np.all(b == 0.0) for b in params.biases)


def test_init_parametric_adds_input():
    """A parametric net takes k as an extra input."""
    params = init_params(2, 8, 3, True, 0)
    assert params.input_width == 4


def test_init_deterministic():
    """The same seed gives the same parameters, another seed does not."""
    a = init_params(3, 20, 3, False, 7)
    b = init_params(3, 20, 3, False, 7)
    np.testing.assert_array_equal(a.to_vector(), b.to_vector())
    c = init_params(3, 20, 3, False, 8)
    assert not np.array_equal(a.to_vector(), c.to_vector())


def test_init_rejects_empty_network():
    """A network needs at least one hidden layer."""
    with pytest.raises(ContractViolationError):
        init_params(0, 10, 3, False, 0)


def test_vector_round_trip():
    """Flattening and rebuilding the parameters is lossless."""
    params = init_params(2, 5, 2, False, 3)
    vector = params.to_vector()
    assert vector.shape == (params.n_params,)
    rebuilt = params.with_vector(vector)
    for w1, w2 in zip(params.weights, rebuilt.weights):
        np.testing.assert_array_equal(w1, w2)


def test_vector_is_layer_major():
    """W1 row-major, then b1, then W2 ..."""
    params = init_params(1, 3, 2, False, 3)
    vector = params.to_vector()
    np.testing.assert_array_equal(vector[:6], params.weights[0].ravel())
    np.testing.assert_array_equal(vector[6:9], params.biases[0])
    (w_slice, b_slice), _ = params.layer_slices()
    assert (w_slice.start, w_slice.stop, b_slice.stop) == (0, 6, 9)


def test_wrong_vector_length_rejected():
    """A parameter vector of the wrong length is refused."""
    params = init_params(1, 3, 2, False, 3)
    with pytest.raises(DimensionMismatchError):
        params.with_vector(np.zeros(params.n_params + 1))


def test_non_finite_parameters_rejected():
    """NaN parameters are refused."""
    params = init_params(1, 3, 2, False, 3)
    vector = params.to_vector()
    vector[2] = np.nan
    with pytest.raises(ContractViolationError):
        params.with_vector(vector)


# ── layout ─────────────────────────────────────────────────────────────


def test_layout_slots():
    """Mixed layouts order Psi, p, then the unique stress components."""
    mixed_2d = OutputLayout.for_formulation(2)
    assert mixed_2d.slots == ("psi", "p", "sigma11", "sigma12", "sigma22")
    mixed_3d = OutputLayout.for_formulation(3)
    assert mixed_3d.size == 10
    assert mixed_3d.psi == (0, 1, 2)
    assert mixed_3d.pressure == 3


def test_ablation_layouts():
    """Ablation layouts output velocity directly and need lower derivative orders."""
    no_psi = OutputLayout.for_formulation(3, Formulation.NO_STREAM_FUNCTION)
    assert no_psi.velocity == (0, 1, 2)
    assert no_psi.derivative_order == 1
    no_sigma = OutputLayout.for_formulation(2, Formulation.NO_STRESS)
    assert no_sigma.slots == ("v1", "v2", "p")
    assert no_sigma.derivative_order == 2


def test_stress_slots_symmetric():
    """Stress slots map symmetric pairs to one output."""
    table = OutputLayout.for_formulation(3).stress_slots()
    np.testing.assert_array_equal(table, table.T)
    assert len(set(table.ravel())) == 6


def test_layout_rejects_1d():
    """There is no 1D layout."""
    with pytest.raises(ContractViolationError):
        OutputLayout.for_formulation(1)


# ── kinematics ─────────────────────────────────────────────────────────


def test_curl_of_linear_psi3():
    """Psi = (0, 0, x) gives v = (0, -1, 0)."""
    layout = OutputLayout.for_formulation(3)
    bundle = _bundle(layout, 3)
    bundle.jacobian[0, 2, 0] = 1.0
    state = kinematics_from_bundle(bundle, layout)
    np.testing.assert_array_equal(state.velocity[0], [0.0, -1.0, 0.0])


def test_curl_of_bilinear_psi1():
    """Psi = (yz, 0, 0) gives v = (0, y, -z) with zero divergence."""
    layout = OutputLayout.for_formulation(3)
    x, y, z = 0.3, 0.5, -0.2
    bundle = _bundle(layout, 3)
    bundle.jacobian[0, 0] = [0.0, z, y]
    bundle.hessian[0, 0, 1, 2] = bundle.hessian[0, 0, 2, 1] = 1.0
    state = kinematics_from_bundle(bundle, layout)
    np.testing.assert_allclose(state.velocity[0], [0.0, y, -z])
    assert np.trace(state.grad_v[0]) == 0.0
    assert state.grad_v[0, 1, 1] == 1.0
    assert state.grad_v[0, 2, 2] == -1.0


def test_curl_2d():
    """Psi = x^2 + y^2 gives v = (2y, -2x)."""
    layout = OutputLayout.for_formulation(2)
    x, y = 0.4, -0.7
    bundle = _bundle(layout, 2)
    bundle.jacobian[0, 0] = [2 * x, 2 * y]
    bundle.hessian[0, 0] = 2.0 * np.eye(2)
    state = kinematics_from_bundle(bundle, layout)
    np.testing.assert_allclose(state.velocity[0], [2 * y, -2 * x])
    np.testing.assert_allclose(state.grad_v[0], [[0.0, 2.0], [-2.0, 0.0]])


@pytest.mark.parametrize("n_sd", [2, 3])
def test_random_networks_are_divergence_free(n_sd):
    """The curl of Psi has zero divergence for 1000 random (params, point) pairs."""
    rng = np.random.default_rng(n_sd)
    layout = OutputLayout.for_formulation(n_sd)
    for seed in range(20):
        params = init_params(2, 8, n_sd, False, seed)
        bundle = forward_with_derivatives(params, rng.uniform(-1.0, 1.0, (50, n_sd)), order=2)
        state = kinematics_from_bundle(bundle, layout)
        assert np.max(np.abs(np.trace(state.grad_v, axis1=1, axis2=2))) <= 1e-10


def test_stress_and_divergence_from_outputs():
    """Stress and its divergence come straight from the outputs and their Jacobian."""
    layout = OutputLayout.for_formulation(2)
    bundle = _bundle(layout, 2)
    bundle.value[0, layout.index("sigma12")] = 0.25
    bundle.jacobian[0, layout.index("sigma11"), 0] = 1.0
    bundle.jacobian[0, layout.index("sigma12"), 1] = 2.0
    state = kinematics_from_bundle(bundle, layout)
    assert state.sigma[0, 0, 1] == state.sigma[0, 1, 0] == 0.25
    np.testing.assert_array_equal(state.div_sigma[0], [3.0, 0.0])


def test_missing_order_rejected():
    """Volume kinematics need the Hessian; boundary velocities do not."""
    layout = OutputLayout.for_formulation(2)
    bundle = DerivativeBundle(value=np.zeros((1, layout.size)), jacobian=np.zeros((1, layout.size, 2)))
    with pytest.raises(ContractViolationError):
        kinematics_from_bundle(bundle, layout)
    # first order is enough for boundary velocities
    kinematics_from_bundle(bundle, layout, with_gradients=False)


def test_no_stream_function_velocity_is_output():
    """Without a stream function the velocity is read from the outputs."""
    layout = OutputLayout.for_formulation(2, Formulation.NO_STREAM_FUNCTION)
    bundle = DerivativeBundle(value=np.array([[1.5, -0.5, 2.0, 0, 0, 0]]), jacobian=np.zeros((1, 6, 2)))
    state = kinematics_from_bundle(bundle, layout)
    np.testing.assert_array_equal(state.velocity[0], [1.5, -0.5])
    assert state.pressure[0] == 2.0


# ── checkpoints ────────────────────────────────────────────────────────


@pytest.mark.parametrize("suffix", [".json", ".npz"])
def test_checkpoint_round_trip(tmp_path, suffix):
    """Both encodings reload bit-identically."""
    params = init_params(2, 7, 3, False, 9)
    checkpoint = Checkpoint(header=_header(params, label="demo"), params=params)
    path = save_checkpoint(checkpoint, tmp_path / f"ckpt{suffix}")
    loaded = load_checkpoint(path)
    np.testing.assert_array_equal(loaded.params.to_vector(), params.to_vector())
    assert loaded.header == checkpoint.header
    assert loaded.checkpoint_id == checkpoint.checkpoint_id


@pytest.mark.parametrize("suffix", [".json", ".npz"])
def test_reloaded_checkpoint_reproduces_loss(tmp_path, suffix):
    """A reloaded checkpoint gives the same L_total on the same batch to 1e-12."""
    rng = np.random.default_rng(4)
    batch = TrainingBatch(
        volume=rng.uniform(-1, 1, (20, 3)),
        dirichlet=rng.uniform(-1, 1, (8, 3)),
        dirichlet_velocity=rng.normal(size=(8, 3)),
        neumann=rng.uniform(-1, 1, (5, 3)),
        neumann_pressure=rng.normal(size=5),
    )
    params = init_params(2, 9, 3, False, 11)
    layout = OutputLayout.for_formulation(3)
    before = loss_breakdown(params, batch, layout, 77.0, 10.0, 1.0)
    path = save_checkpoint(Checkpoint(header=_header(params), params=params), tmp_path / f"ckpt{suffix}")
    after = loss_breakdown(load_checkpoint(path).params, batch, layout, 77.0, 10.0, 1.0)
    assert abs(after.l_total - before.l_total) <= 1e-12 * max(1.0, before.l_total)
    assert after.l_d == before.l_d


def test_checkpoint_json_layout(tmp_path):
    """JSON checkpoints hold a header and a flat parameter list."""
    params = init_params(1, 2, 2, False, 0)
    path = save_checkpoint(Checkpoint(header=_header(params), params=params), tmp_path / "c.json")
    data = json.loads(path.read_text())
    assert set(data) == {"header", "parameters"}
    assert len(data["parameters"]) == params.n_params
    assert data["header"]["formulation"] == "mixed"


def test_checkpoint_widths_must_match():
    """Header widths must match the parameters."""
    params = init_params(1, 2, 2, False, 0)
    with pytest.raises(ContractViolationError):
        Checkpoint(header=_header(params, layer_widths=(2, 3, 5)), params=params)


def test_checkpoint_layout_mismatch():
    """Loss weights may differ on resume; layer widths may not."""
    params = init_params(1, 2, 2, False, 0)
    checkpoint = Checkpoint(header=_header(params), params=params)
    checkpoint.require_compatible(_header(params, f_bc=1.0))
    with pytest.raises(CheckpointMismatchError) as info:
        checkpoint.require_compatible(_header(params, layer_widths=(2, 4, 5)))
    assert "layer_widths" in info.value.diff


def test_unknown_format_version(tmp_path):
    """Checkpoints from an unknown format version are refused."""
    params = init_params(1, 2, 2, False, 0)
    path = save_checkpoint(Checkpoint(header=_header(params, format_version=99), params=params), tmp_path / "c.json")
    with pytest.raises(ContractViolationError):
        load_checkpoint(path)
