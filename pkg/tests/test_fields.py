import json

import numpy as np
import pytest

from cosserat.algebra import cover
from cosserat.fields import (GridError, GridSpec, GridState, StateFileError, build_grid, divergence,
                             divergence_adjoint, grad, gradient_rotation, gradient_vector, read_state,
                             sample, write_state)


def cube(n=9, **kw):
    return build_grid(GridSpec(n=n, **kw))


def common_rows(coarse, fine, mask):
    """Indices on ``fine`` of the coarse nodes selected by ``mask``."""
    ijk = np.rint((coarse.x[mask] + fine.spec.extent) / fine.h).astype(int)
    idx = fine.index[ijk[:, 0], ijk[:, 1], ijk[:, 2]]
    assert np.all(idx >= 0)
    return idx


# --- geometry ----------------------------------------------------------------


def test_cube_n5():
    g = cube(5)
    assert g.size == 125 and g.h == 0.5
    assert np.isclose(g.weights.sum(), 8.0)
    assert np.allclose(g.x[0], [-1, -1, -1])


def test_node_coordinates_follow_index():
    g = cube(7, extent=2.0)
    i, j, k = 1, 4, 6
    n = g.index[i, j, k]
    assert np.allclose(g.x[n], [-2 + i * g.h, -2 + j * g.h, -2 + k * g.h])


def test_ball_n5_without_trim():
    g = build_grid(GridSpec(5, shape="ball", trim=False))
    assert np.all(g.r <= 1 + 1e-12)
    X = g.coords_full.reshape(-1, 3)
    assert g.size == int((np.linalg.norm(X, axis=1) <= 1 + 1e-12).sum())
    # the axis tips have no neighbor along two axes
    with pytest.raises(GridError, match="isolated"):
        _ = g.D


def test_ball_trim_removes_isolated_nodes():
    g = build_grid(GridSpec(5, shape="ball"))
    assert g.pruned > 0
    assert np.all(g.has_lo | g.has_hi)
    _ = g.D


def test_punctured_ball_center_inactive():
    g = build_grid(GridSpec(9, shape="ball", puncture_radius=0.3))
    assert g.index[4, 4, 4] == -1
    assert np.all(g.r >= 0.3)


@pytest.mark.parametrize("kw", [dict(n=4), dict(n=3), dict(n=8), dict(n=9, extent=0.0),
                                dict(n=9, shape="torus"), dict(n=9, puncture_radius=1.0),
                                dict(n=9, puncture_radius=-0.1), dict(n=9.5)])
def test_grid_spec_validation(kw):
    with pytest.raises(GridError):
        GridSpec(**kw)


def test_empty_domain_is_rejected():
    with pytest.raises(GridError, match="no active nodes"):
        build_grid(GridSpec(9, shape="ball", puncture_radius=0.75))


def test_boundary_weights():
    g = cube(9)
    corner = g.index[0, 0, 0]
    face = g.index[0, 4, 4]
    assert np.isclose(g.weights[corner], g.h ** 3 / 8)
    assert np.isclose(g.weights[face], g.h ** 3 / 2)
    # nodes on the puncture surface are not halved
    gp = build_grid(GridSpec(9, puncture_radius=0.3))
    assert np.allclose(gp.weights[gp.boundary & (gp.r < 0.5)], gp.h ** 3)


# --- sampling ----------------------------------------------------------------


def test_sample_examples():
    g = cube(5)
    phi = sample("identity_phi", g)
    assert np.allclose(phi[g.index[3, 2, 2]], [0.5, 0, 0])
    assert np.array_equal(sample("zero_phi", g), np.zeros((g.size, 3)))
    gp = build_grid(GridSpec(5, puncture_radius=0.2))
    e1 = gp.index[4, 2, 2]
    assert np.allclose(gp.x[e1], [1, 0, 0])
    assert np.allclose(sample("singular_phi", gp)[e1], 0.0)
    assert np.allclose(cover(sample("equator_quat", gp)[e1]), np.diag([1.0, -1, -1]))


def test_singular_tags_need_puncture():
    g = cube(5)
    for tag in ("singular_phi", "singular_rot", "equator_quat"):
        with pytest.raises(GridError, match="punctured"):
            sample(tag, g)
    with pytest.raises(GridError, match="unknown"):
        sample("nonsense", g)


def test_constant_rot_and_lift():
    g = build_grid(GridSpec(9, shape="ball", puncture_radius=0.2))
    q0 = np.array([0.5, 0.5, 0.5, 0.5])
    assert np.allclose(sample("constant_rot", g, q0=q0), q0)
    xh = g.x / g.r[:, None]
    expect = 2 * np.einsum("ni,nj->nij", xh, xh) - np.eye(3)
    assert np.abs(cover(sample("equator_quat", g)) - expect).max() < 1e-12


# --- difference operators ----------------------------------------------------


def test_affine_reproduction_everywhere():
    g = build_grid(GridSpec(9, shape="ball", puncture_radius=0.3))
    A = np.array([[1.0, 2, -1], [0, 3, 1], [4, -2, 0.5]])
    b = np.array([0.3, -0.1, 2.0])
    D = gradient_vector(g.x @ A.T + b, g)
    # one-sided differences are exact on affine fields too
    assert np.abs(D - A).max() < 1e-12


def test_constant_fields_have_zero_derivatives():
    g = cube(7)
    q = sample("constant_rot", g, q0=[0.0, 0.6, 0.0, 0.8])
    assert np.abs(gradient_rotation(q, g)).max() < 1e-14
    T = np.broadcast_to(np.arange(9.0).reshape(3, 3), (g.size, 3, 3))
    assert np.abs(divergence(T, g)).max() < 1e-12


def test_divergence_of_quadratic_is_exact_on_interior():
    g = cube(9)
    phi = np.zeros((g.size, 3))
    phi[:, 0] = g.x[:, 0] ** 2
    div = divergence(grad(phi, g), g)
    assert np.allclose(div[g.interior], [2.0, 0, 0], atol=1e-12)


def test_summation_by_parts():
    g = cube(15)
    rng = np.random.default_rng(0)
    # fields supported two cells away from the faces
    keep = np.all(np.abs(g.x) < 1 - 2.5 * g.h, axis=1)
    T = rng.standard_normal((g.size, 3, 3)) * keep[:, None, None]
    v = rng.standard_normal((g.size, 3)) * keep[:, None]
    lhs = np.sum(divergence(T, g) * v) * g.h ** 3
    rhs = -np.sum(T * grad(v, g)) * g.h ** 3
    assert abs(lhs - rhs) < 1e-10
    # divergence_adjoint is the transpose of grad for arbitrary fields
    T = rng.standard_normal((g.size, 3, 3))
    v = rng.standard_normal((g.size, 3))
    assert np.isclose(np.sum(divergence_adjoint(T, g) * v), np.sum(T * grad(v, g)))


def test_smooth_field_refinement_order():
    # errors are measured on the nodes of the coarsest grid so every level sees the same points
    grids = [cube(n) for n in (9, 17, 33)]
    coarse = grids[0]
    errors = []
    for g in grids:
        idx = common_rows(coarse, g, coarse.central)
        x = g.x
        u = np.sin(x[:, 0]) * np.cos(2 * x[:, 1]) * np.exp(x[:, 2])
        exact = np.stack([np.cos(x[:, 0]) * np.cos(2 * x[:, 1]) * np.exp(x[:, 2]),
                          -2 * np.sin(x[:, 0]) * np.sin(2 * x[:, 1]) * np.exp(x[:, 2]),
                          u], axis=-1)
        errors.append(np.abs(grad(u, g) - exact)[idx].max())
    orders = np.log2(np.array(errors[:-1]) / np.array(errors[1:]))
    assert np.all(orders >= 1.9)


def test_singular_rotation_gradient_and_divergence_converge():
    grids = [build_grid(GridSpec(n, shape="ball", puncture_radius=0.2)) for n in (17, 33, 65)]
    coarse = grids[0]
    mask = coarse.interior & (coarse.r >= 0.5)
    err_g, err_d = [], []
    for g in grids:
        idx = common_rows(coarse, g, mask)
        DR = gradient_rotation(sample("singular_rot", g), g)
        dr2 = np.einsum("nijk,nijk->n", DR, DR)[idx]
        err_g.append(np.abs(dr2 - 16 / g.r[idx] ** 2).max())
        xh = g.x[idx] / g.r[idx, None]
        expect = 4 * (np.eye(3) - 3 * np.einsum("ni,nj->nij", xh, xh)) / g.r[idx, None, None] ** 2
        err_d.append(np.abs(divergence(DR, g)[idx] - expect).max())
    assert np.all(np.log2(np.array(err_g[:-1]) / err_g[1:]) >= 1.9)
    # second differences of the 1/r^2 profile approach the h^2 rate more slowly
    order_d = np.log2(np.array(err_d[:-1]) / err_d[1:])
    assert np.all(order_d >= 1.7) and order_d[-1] >= 1.9


# --- state -------------------------------------------------------------------


def random_state(grid, seed=0):
    rng = np.random.default_rng(seed)
    q = rng.standard_normal((grid.size, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    return GridState(grid, grid.x + 0.1 * rng.standard_normal((grid.size, 3)), q)


def test_state_validation():
    g = cube(5)
    with pytest.raises(GridError):
        GridState(g, np.zeros((3, 3)), np.tile([1.0, 0, 0, 0], (g.size, 1)))
    with pytest.raises(GridError):
        GridState(g, np.zeros((g.size, 3)), np.tile([1.0, 0.1, 0, 0], (g.size, 1)))
    with pytest.raises(GridError, match="boundary"):
        GridState(g, np.zeros((g.size, 3)), np.tile([1.0, 0, 0, 0], (g.size, 1)),
                  dirichlet=np.zeros(g.size, dtype=bool))
    st = GridState.from_tags(g)
    assert np.array_equal(st.dirichlet, g.boundary)


def test_state_round_trip(tmp_path):
    g = build_grid(GridSpec(9, shape="ball", puncture_radius=0.3))
    st = random_state(g)
    st.dirichlet[5] = True
    write_state(st, tmp_path / "s.json")
    back = read_state(tmp_path / "s.json")
    assert back.grid.spec == st.grid.spec
    assert np.array_equal(back.phi, st.phi)
    assert np.array_equal(back.quat, st.quat)
    assert np.array_equal(back.dirichlet, st.dirichlet)


def test_state_file_layout(tmp_path):
    g = build_grid(GridSpec(5, puncture_radius=0.2))
    st = random_state(g, 1)
    write_state(st, tmp_path / "s.json")
    doc = json.loads((tmp_path / "s.json").read_text())
    n = 5
    assert len(doc["phi"]) == 3 * n ** 3 and len(doc["quat"]) == 4 * n ** 3
    i, j, k = 3, 1, 4
    flat = i + n * j + n * n * k
    assert np.allclose(doc["phi"][3 * flat:3 * flat + 3], st.phi[g.index[i, j, k]])
    center = 2 + n * 2 + n * n * 2
    assert doc["quat"][4 * center:4 * center + 4] == [0, 0, 0, 0]
    assert doc["masks"]["active"][center] == 0


def _tamper(tmp_path, edit):
    g = cube(5)
    write_state(random_state(g, 2), tmp_path / "s.json")
    doc = json.loads((tmp_path / "s.json").read_text())
    edit(doc)
    (tmp_path / "t.json").write_text(json.dumps(doc))
    return tmp_path / "t.json"


def test_read_rejects_non_unit_quaternion(tmp_path):
    def edit(doc):
        doc["quat"][0] *= 1.01
    with pytest.raises(StateFileError, match="non-unit"):
        read_state(_tamper(tmp_path, edit))


def test_read_renormalizes_tiny_drift(tmp_path):
    def edit(doc):
        doc["quat"][:4] = (np.array(doc["quat"][:4]) * (1 + 2e-7)).tolist()
    st = read_state(_tamper(tmp_path, edit))
    assert np.allclose(np.linalg.norm(st.quat, axis=1), 1, atol=1e-14)


def test_read_rejects_wrong_count(tmp_path):
    def edit(doc):
        doc["phi"].pop()
    with pytest.raises(StateFileError, match="grid mismatch"):
        read_state(_tamper(tmp_path, edit))


def test_read_rejects_mask_mismatch(tmp_path):
    def edit(doc):
        doc["masks"]["active"][0] = 0
    with pytest.raises(StateFileError, match="active mask"):
        read_state(_tamper(tmp_path, edit))


def test_read_rejects_malformed(tmp_path):
    (tmp_path / "bad.json").write_text("{not json")
    with pytest.raises(StateFileError):
        read_state(tmp_path / "bad.json")
    with pytest.raises(StateFileError):
        read_state(_tamper(tmp_path, lambda doc: doc.pop("masks")))
