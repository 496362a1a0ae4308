"""Shared presets and session-scoped converged runs."""

from types import SimpleNamespace

import numpy as np
import pytest

from oldroydb import (FluidParams, Grid, ScalarField, SymTensorField,
                      VectorField, mean_zero_project, rate_tensors)
from oldroydb.fixed_point import iterate, picard_sweep
from oldroydb.mms import taylor_vortex


def small_preset(n=32, amp_u=0.05, amp_s=0.01, amp_t=0.02):
    """Gentle vortex, cosine density remainder, strain-proportional stress."""
    grid = Grid.unit(n)
    params = FluidParams(eps=0.1, omega=0.5, We=0.1, alpha=1.0, a=1.0)
    u0 = VectorField(grid, amp_u * taylor_vortex(grid).values, dirichlet=True)
    x, y = grid.coords
    s0 = ScalarField(grid,
                     amp_s * np.cos(2 * np.pi * x) * np.cos(2 * np.pi * y))
    t0 = SymTensorField(grid, amp_t * rate_tensors(u0)[0].values)
    return grid, params, u0, s0, t0


def compressive_preset(n=32, amp=0.5):
    """Gradient flow with genuine dilation, for gap-growth experiments."""
    grid = Grid.unit(n)
    params = FluidParams(eps=0.1, omega=0.5, We=0.1, alpha=1.0, a=1.0)
    x, y = grid.coords
    vals = amp * np.stack([
        np.pi * np.sin(2 * np.pi * x) * np.sin(np.pi * y) ** 2,
        np.pi * np.sin(np.pi * x) ** 2 * np.sin(2 * np.pi * y)])
    vals[:, grid.boundary_mask] = 0.0
    u0 = VectorField(grid, vals, dirichlet=True)
    s0 = ScalarField(grid,
                     0.01 * np.cos(2 * np.pi * x) * np.cos(2 * np.pi * y))
    t0 = SymTensorField(grid, 0.02 * rate_tensors(u0)[0].values)
    return grid, params, u0, s0, t0


def centered_bump_perturbation(grid, amp=1e-4):
    x, y = grid.coords
    bump = np.exp(-((x - 0.5) ** 2 + (y - 0.5) ** 2) / 0.02)
    return mean_zero_project(ScalarField(grid, amp * bump))


def _converged(n):
    grid, params, u0, s0, t0 = small_preset(n)
    sol, hist = iterate(u0, s0, t0, None, params, T=0.01, dt=1e-3,
                        tol_fp=1e-8)
    out, diag = picard_sweep(sol, None, params)
    return SimpleNamespace(grid=grid, params=params, u0=u0, s0=s0, t0=t0,
                           sol=sol, hist=hist, out=out, diag=diag)


@pytest.fixture(scope="session")
def converged32():
    return _converged(32)


@pytest.fixture(scope="session")
def converged64():
    return _converged(64)


def _gronwall_pair(n):
    grid, params, u0, s0, t0 = compressive_preset(n)
    pert = centered_bump_perturbation(grid)
    sol, _ = iterate(u0, s0, t0, None, params, T=0.01, dt=1e-3,
                     tol_fp=1e-8, max_iter=25)
    solp, _ = iterate(u0, s0 + pert, t0, None, params, T=0.01, dt=1e-3,
                      tol_fp=1e-8, max_iter=25)
    return SimpleNamespace(grid=grid, params=params, sol=sol, solp=solp)


@pytest.fixture(scope="session")
def gronwall32():
    return _gronwall_pair(32)


@pytest.fixture(scope="session")
def gronwall64():
    return _gronwall_pair(64)
