"""Isotropic total-variation prox via Chambolle's dual projection algorithm."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class TVConfig:
    weight: float = 0.0
    inner_iters: int = 10
    dual_step: float = 0.248

    def __post_init__(self):
        if self.weight < 0:
            raise ValueError("TV weight must be nonnegative")
        if not 0 < self.dual_step <= 0.25:
            raise ValueError("dual step must lie in (0, 1/4]")
        if self.inner_iters < 1:
            raise ValueError("need at least one inner iteration")


def grad(u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Forward differences over the last two axes, zero at the far boundary."""
    gx = np.zeros_like(u)
    gy = np.zeros_like(u)
    gx[..., :-1, :] = u[..., 1:, :] - u[..., :-1, :]
    gy[..., :, :-1] = u[..., :, 1:] - u[..., :, :-1]
    return gx, gy


def div(px: np.ndarray, py: np.ndarray) -> np.ndarray:
    """Negative adjoint of :func:`grad`."""
    d = np.zeros_like(px)
    d[..., :-1, :] += px[..., :-1, :]
    d[..., 1:, :] -= px[..., :-1, :]
    d[..., :, :-1] += py[..., :, :-1]
    d[..., :, 1:] -= py[..., :, :-1]
    return d


def tv_value(u: np.ndarray) -> float:
    """Isotropic TV of an image (or stack of images over leading axes).

    For complex input the real and imaginary gradients are coupled in one
    magnitude per pixel.
    """
    gx, gy = grad(np.asarray(u))
    return float(np.sum(np.sqrt(np.abs(gx) ** 2 + np.abs(gy) ** 2)))


def chambolle_prox(f: np.ndarray, weight: float, iters: int = 10, tau: float = 0.248) -> np.ndarray:
    """Approximate ``argmin_u 1/2 ||u - f||^2 + weight * TV(u)`` per image.

    ``f`` has shape (..., nx, ny); leading axes are independent images.
    """
    if weight == 0:
        return f
    if not np.all(np.isfinite(f)):
        raise ValueError("non-finite input to TV prox")
    px = np.zeros_like(f)
    py = np.zeros_like(f)
    scaled = f / weight
    for _ in range(iters):
        gx, gy = grad(div(px, py) - scaled)
        norm = np.sqrt(np.abs(gx) ** 2 + np.abs(gy) ** 2)
        denom = 1 + tau * norm
        px = (px + tau * gx) / denom
        py = (py + tau * gy) / denom
    return f - weight * div(px, py)


def tv_prox(x: np.ndarray, cfg: TVConfig, shape: tuple[int, int]) -> np.ndarray:
    """Channel-wise TV prox of a compressed image ``x`` of shape (N, k)."""
    if cfg.weight == 0:
        return x
    nx, ny = shape
    k = x.shape[1]
    imgs = x.T.reshape(k, nx, ny)
    out = chambolle_prox(imgs, cfg.weight, cfg.inner_iters, cfg.dual_step)
    return out.reshape(k, -1).T.copy()


def tv_energy(u: np.ndarray, f: np.ndarray, weight: float) -> float:
    return 0.5 * float(np.sum(np.abs(u - f) ** 2)) + weight * tv_value(u)
