"""Finite-difference self-checks for the loss and network gradients."""

import logging
import math

import numpy as np

from ..models.network import ForwardCache, NetworkParams, backward, forward, init_params
from ..models.schemas import GradCheckResult, LossKind, LossSpec
from .losses import LossResult, central_difference, compute_loss, finite_diff_grad

logger = logging.getLogger(__name__)

LOSS_STEP = 1e-4
NETWORK_STEP = 1e-4
# Fourth-order central stencil; its truncation error stays far below the tolerances at these steps
STENCIL_ORDER = 4
LOSS_TOLERANCE = 1e-4
PIXEL_LOSS_TOLERANCE = 1e-8
NETWORK_SIZE = 9
ABS_FLOOR = 1e-8
ZERO_CROSSING_BAND = 1e-3

L1_FAMILY = (LossKind.L1, LossKind.MSSSIM_L1)
PIXEL_LOSSES = (LossKind.L2, LossKind.L1)


def fitted_sigmas(size: int) -> list[float]:
    """Dyadic ladder from 0.5 whose largest window leaves a valid center region."""
    limit = (size - 1) // 2 - 1
    sigmas = [0.5]
    if math.ceil(3.0 * sigmas[0]) > limit:
        raise ValueError(f"Size {size} is too small for a gradient check")
    while math.ceil(3.0 * sigmas[-1] * 2.0) <= limit:
        sigmas.append(sigmas[-1] * 2.0)
    return sigmas


def fitted_spec(kind: LossKind, size: int) -> LossSpec:
    """LossSpec with Gaussian scales that fit a size x size image."""
    sigmas = fitted_sigmas(size)
    return LossSpec(kind=kind, sigmas=sigmas, sigma_g=sigmas[-1])


def tolerance_for(kind: LossKind) -> float:
    return PIXEL_LOSS_TOLERANCE if kind in PIXEL_LOSSES else LOSS_TOLERANCE


def max_relative_error(
    analytic: np.ndarray, numeric: np.ndarray, mask: np.ndarray | None = None
) -> tuple[float, int]:
    """Max |a - n| / max(|a|, |n|) over entries with |a| > 1e-8.

    Returns:
        (max relative error, number of entries compared)
    """
    a = np.ravel(analytic)
    n = np.ravel(numeric)
    magnitude = np.abs(a)
    keep = magnitude > ABS_FLOOR
    if mask is not None:
        keep &= np.ravel(mask)
    if not keep.any():
        return 0.0, 0
    rel = np.abs(a[keep] - n[keep]) / np.maximum(magnitude[keep], np.abs(n[keep]))
    return float(rel.max()), int(keep.sum())


def random_pair(seed: int, size: int, channels: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Correlated random prediction/target pair in [0, 1]."""
    rng = np.random.default_rng(seed)
    y = rng.uniform(0.0, 1.0, size=(size, size, channels))
    x = np.clip(0.6 * y + 0.4 * rng.uniform(0.0, 1.0, size=y.shape), 0.0, 1.0)
    return x, y


def check_loss_gradient(kind: LossKind, seed: int = 0, size: int = 17, channels: int = 1) -> GradCheckResult:
    """Compare a loss's analytic gradient with central differences on a random pair.

    L1-family losses skip pixels within 1e-3 of a zero crossing of x - y.
    """
    spec = fitted_spec(kind, size)
    x, y = random_pair(seed, size, channels)

    def loss(perturbed: np.ndarray, target: np.ndarray) -> LossResult:
        return compute_loss(perturbed, target, spec)

    analytic = loss(x, y).grad
    numeric = finite_diff_grad(loss, x, y, h=LOSS_STEP, order=STENCIL_ORDER)
    mask = np.abs(x - y) > ZERO_CROSSING_BAND if kind in L1_FAMILY else None
    error, n_checked = max_relative_error(analytic, numeric, mask)
    result = GradCheckResult(
        name=f"loss {kind} {size}x{size}", max_rel_error=error, tolerance=tolerance_for(kind), n_checked=n_checked
    )
    logger.info("%s: max rel error %.3e over %d entries", result.name, error, n_checked)
    return result


def random_network(seed: int, std: float = 0.3) -> NetworkParams:
    """Gaussian weights with small random biases, so ReLUs are not all at a kink."""
    params = init_params(seed, std)
    rng = np.random.default_rng(seed + 1)
    for layer in params.layers:
        layer.biases[:] = rng.uniform(0.0, 0.1, size=layer.biases.shape)
    return params


def _kink_pattern(cache: ForwardCache, target: np.ndarray, kind: LossKind) -> list[np.ndarray]:
    """Which side of every kink the forward pass sits on: ReLU inputs, plus J - target for l1 losses."""
    pattern = [z > 0 for z in cache.pre]
    if kind in L1_FAMILY:
        pattern.append(np.sign(cache.J - target))
    return pattern


def check_network_gradient(kind: LossKind, seed: int = 0, size: int = NETWORK_SIZE) -> GradCheckResult:
    """Back-propagated parameter gradients against central differences over every weight and bias.

    A parameter is skipped when one of its perturbations moves a ReLU input
    (or, for l1 losses, a pixel of J - target) across zero.
    """
    spec = fitted_spec(kind, size)
    params = random_network(seed)
    rng = np.random.default_rng(seed + 2)
    image = rng.uniform(0.0, 1.0, size=(size, size, 3))
    target = rng.uniform(0.0, 1.0, size=(size, size, 3))

    _, _, cache = forward(params, image)
    dJ = compute_loss(cache.J, target, spec).grad
    analytic = backward(params, cache, dJ)
    base = _kink_pattern(cache, target, kind)

    perturbed = params.copy()
    crossed: list[bool] = []

    def evaluate() -> LossResult:
        J, _, trial = forward(perturbed, image)
        pattern = _kink_pattern(trial, target, kind)
        crossed.append(any(not np.array_equal(a, b) for a, b in zip(base, pattern)))
        return compute_loss(J, target, spec)

    numeric, smooth = [], []
    for array in [*perturbed.weights, *perturbed.biases]:
        crossed.clear()
        numeric.append(central_difference(evaluate, array, NETWORK_STEP, STENCIL_ORDER))
        smooth.append(~np.array(crossed).reshape(array.size, -1).any(axis=1))

    error, n_checked = max_relative_error(
        np.concatenate([a.ravel() for a in analytic.arrays()]),
        np.concatenate([n.ravel() for n in numeric]),
        np.concatenate(smooth),
    )
    result = GradCheckResult(
        name=f"network {kind} {size}x{size}", max_rel_error=error, tolerance=LOSS_TOLERANCE, n_checked=n_checked
    )
    logger.info("%s: max rel error %.3e over %d parameters", result.name, error, n_checked)
    return result


def run_suite(kind: LossKind, seed: int = 0, size: int = 17) -> list[GradCheckResult]:
    """Loss and network checks for one loss kind."""
    return [check_loss_gradient(kind, seed, size), check_network_gradient(kind, seed)]
