import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_field
from glsf import Grid2D
from glsf.fields import (
    curl2d,
    curlcurl2d,
    div,
    grad,
    grad_energy,
    graddiv,
    inner,
    laplacian,
    norm,
    rotated_gradient,
)


def test_grad_of_constant_vanishes(grid16):
    c = np.full(grid16.shape, 2.5)
    assert not np.any(grad(grid16, c, "neumann"))


def test_grad_affine_exact(grid16):
    X, _ = grid16.mesh
    gx = grad(grid16, X, "neumann")[0]
    assert np.allclose(gx[1:-1, :], 1.0, atol=1e-12)


def test_grad_dirichlet_second_order():
    errs = []
    for n in (16, 32):
        g = Grid2D(n, n)
        X, _ = g.mesh
        e = grad(g, np.sin(np.pi * X), "dirichlet0")[0] - np.pi * np.cos(np.pi * X)
        errs.append(np.max(np.abs(e[1:-1, :])))
    assert errs[0] / errs[1] >= 3.5


def test_unknown_bc_rejected(grid16):
    with pytest.raises(ValueError):
        grad(grid16, np.zeros(grid16.shape), "periodic")


def test_div_of_constant_interior(grid16):
    v = np.ones((2,) + grid16.shape)
    v[grid16.normal_mask] = 0.0
    assert np.allclose(div(grid16, v)[2:-2, 2:-2], 0.0, atol=1e-12)


def test_summation_by_parts(grid16, rng):
    for _ in range(20):
        s = random_field(grid16, rng)
        v = grad(grid16, random_field(grid16, rng), "neumann")
        w = random_field(grid16, rng)
        lhs = inner(grid16, div(grid16, v), w)
        rhs = -inner(grid16, v, grad(grid16, w, "neumann"))
        assert abs(lhs - rhs) <= 1e-12 * max(1.0, abs(lhs)) * 10
        v2 = random_field(grid16, rng, "vector")
        a = inner(grid16, grad(grid16, s, "neumann"), v2) + inner(grid16, s, div(grid16, v2))
        assert abs(a) <= 1e-12 * (norm(grid16, s) * norm(grid16, v2)) * 1e3


def test_curl_grad_and_div_rotgrad_vanish(grid16, rng):
    s = random_field(grid16, rng)
    assert np.max(np.abs(curl2d(grid16, grad(grid16, s, "neumann")))) <= 1e-12
    phi = np.where(grid16.boundary, 0.0, random_field(grid16, rng))
    assert np.max(np.abs(div(grid16, rotated_gradient(grid16, phi)))) <= 1e-11


def test_curl_of_rotation():
    g = Grid2D(32, 32)
    X, Y = g.mesh
    v = np.stack([-Y, X])
    v[g.normal_mask] = 0.0
    c = curl2d(g, v)
    assert np.allclose(c[2:-2, 2:-2], 2.0, atol=1e-12)


def test_constant_field_curlcurl_graddiv(grid16):
    v = np.ones((2,) + grid16.shape)
    v[grid16.normal_mask] = 0.0
    assert np.max(np.abs(curlcurl2d(grid16, v)[:, 2:-2, 2:-2])) <= 1e-10
    assert np.max(np.abs(graddiv(grid16, v)[:, 3:-3, 3:-3])) <= 1e-10


def test_curlcurl_is_adjoint_square(grid16, rng):
    a, b = random_field(grid16, rng, "vector"), random_field(grid16, rng, "vector")
    lhs = inner(grid16, a, curlcurl2d(grid16, b))
    rhs = inner(grid16, curl2d(grid16, a), curl2d(grid16, b))
    assert abs(lhs - rhs) <= 1e-10 * max(1, abs(lhs))


def test_laplacian_constant_neumann(grid16):
    assert np.max(np.abs(laplacian(grid16, np.full(grid16.shape, 3.0)))) <= 1e-10


@pytest.mark.parametrize(
    "bc,field,eig",
    [
        ("dirichlet0", lambda X, Y: np.sin(np.pi * X) * np.sin(np.pi * Y), -2 * np.pi**2),
        ("neumann", lambda X, Y: np.cos(np.pi * X), -np.pi**2),
    ],
)
def test_laplacian_eigenfunctions(bc, field, eig):
    errs = []
    for n in (16, 32):
        g = Grid2D(n, n)
        f = field(*g.mesh)
        errs.append(np.max(np.abs(laplacian(g, f, bc) - eig * f)))
    assert errs[0] / errs[1] >= 3.5


def test_inner_and_norm(grid32, rng):
    assert abs(inner(grid32, np.ones(grid32.shape), np.ones(grid32.shape)) - 1.0) <= 1e-12
    a, b = random_field(grid32, rng, "complex"), random_field(grid32, rng, "complex")
    assert abs(inner(grid32, a, b) - np.conj(inner(grid32, b, a))) <= 1e-12
    X, _ = grid32.mesh
    errs = []
    for n in (16, 32):
        g = Grid2D(n, n)
        errs.append(abs(norm(g, np.sin(np.pi * g.mesh[0])) ** 2 - 0.5))
    assert errs[1] <= 1e-12 or errs[0] / errs[1] >= 3.5


def test_grad_energy_dominates_centered(grid16, rng):
    for _ in range(10):
        s = random_field(grid16, rng)
        assert grad_energy(grid16, s, "neumann") >= norm(grid16, grad(grid16, s, "neumann")) ** 2 - 1e-9
        u = np.where(grid16.boundary, 0.0, s)
        assert grad_energy(grid16, u, "dirichlet0") >= norm(grid16, grad(grid16, u, "neumann")) ** 2 - 1e-9


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.floats(-3, 3, allow_nan=False))
def test_operators_linear(seed, alpha):
    g = Grid2D(8, 8)
    rng = np.random.default_rng(seed)
    a, b = random_field(g, rng), random_field(g, rng)
    va, vb = random_field(g, rng, "vector"), random_field(g, rng, "vector")
    for op in (lambda s: grad(g, s), lambda s: laplacian(g, s), lambda s: laplacian(g, s, "dirichlet0")):
        assert np.allclose(op(alpha * a + b), alpha * op(a) + op(b), atol=1e-12 * 1e3, rtol=1e-12)
    for op in (lambda v: div(g, v), lambda v: curl2d(g, v), lambda v: curlcurl2d(g, v), lambda v: graddiv(g, v)):
        assert np.allclose(op(alpha * va + vb), alpha * op(va) + op(vb), atol=1e-12 * 1e4, rtol=1e-12)


def test_second_order_truncation():
    errs = []
    for n in (16, 32):
        g = Grid2D(n, n)
        X, Y = g.mesh
        v = np.stack([np.sin(np.pi * X) * np.cos(2 * np.pi * Y), np.cos(np.pi * X) * np.sin(np.pi * Y)])
        exact = np.pi * np.cos(np.pi * X) * np.cos(2 * np.pi * Y) + np.pi * np.cos(np.pi * X) * np.cos(np.pi * Y)
        errs.append(np.max(np.abs(div(g, v) - exact)))
    assert errs[0] / errs[1] >= 3.5
