"""Spectral projected gradient descent shared by the planner and IRL."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["SpgResult", "spg_minimize"]


@dataclass(frozen=True, eq=False)
class SpgResult:
    x: np.ndarray
    fun: float
    n_iter: int
    converged: bool
    history: np.ndarray


def spg_minimize(
    f, grad, x0, project, max_iter=200, tol=1e-6, armijo=1e-4, step_range=(1e-8, 1e4), ftol=1e-12
):
    """Minimize ``f`` over a convex set given by its Euclidean ``project``.

    Steps use the Barzilai-Borwein length along the projected gradient and
    are halved until the Armijo condition holds, so every accepted step
    weakly decreases ``f``. Terminates when ``||project(x - grad) - x|| < tol``,
    when an accepted step improves ``f`` by at most ``ftol * (1 + |f|)``
    (both count as converged), or after ``max_iter`` iterations.
    """
    x = project(np.asarray(x0, dtype=float))
    fx = f(x)
    g = grad(x)
    alpha = 1.0
    history = [fx]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        if np.linalg.norm(project(x - g) - x) < tol:
            converged = True
            break
        lam = alpha
        accepted = False
        while lam >= 1e-14:
            x_new = project(x - lam * g)
            f_new = f(x_new)
            if f_new <= fx + armijo * float(np.vdot(g, x_new - x)):
                accepted = True
                break
            lam *= 0.5
        if not accepted or np.array_equal(x_new, x):
            converged = True
            break
        stalled = fx - f_new <= ftol * (1.0 + abs(fx))
        g_new = grad(x_new)
        s = (x_new - x).ravel()
        y = (g_new - g).ravel()
        sy = float(s @ y)
        alpha = float(np.clip(s @ s / sy, *step_range)) if sy > 0 else step_range[1]
        x, fx, g = x_new, f_new, g_new
        history.append(fx)
        if stalled:
            converged = True
            break
    return SpgResult(x, fx, it, converged, np.asarray(history))
