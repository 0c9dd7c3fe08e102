"""Training losses with analytic gradients with respect to the prediction x.

Every loss takes the predicted image x and the ground truth y (H x W x C, or
H x W) and returns a LossResult holding the scalar value and dLoss/dx.

The SSIM family is evaluated at every valid center, i.e. every pixel whose
largest Gaussian window lies fully inside the image, and averaged over those
centers and over channels. Each center spreads its gradient over its window;
summed over centers this is a zero-padded Gaussian correlation of per-center
coefficient maps, which is how the gradients below are assembled:

    dSSIM/dx(q) = sum_p G(q - p) * [a(p) + b(p) * y(q) + g(p) * x(q)]
"""

import math
from collections.abc import Callable
from dataclasses import dataclass, field

import numpy as np

from ..models.schemas import LossKind, LossSpec
from ..utils.filters import GaussianKernel, gaussian_filter, gaussian_kernel, local_stats, valid_region
from ..utils.image import as_grid, require_same_shape

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])


@dataclass
class LossResult:
    value: float
    grad: np.ndarray
    # per-pixel contributions summing to value; finite differences subtract these
    terms: np.ndarray | None = field(default=None, repr=False)


@dataclass
class SSIMTerms:
    """Per-pixel SSIM factors at one Gaussian scale."""

    kernel: GaussianKernel
    mu_x: np.ndarray
    mu_y: np.ndarray
    l: np.ndarray
    cs: np.ndarray
    d1: np.ndarray  # mu_x^2 + mu_y^2 + C1
    d2: np.ndarray  # var_x + var_y + C2


def _pair(x, y) -> tuple[np.ndarray, np.ndarray, bool]:
    """Promote inputs to H x W x C; remember whether they came in as planes."""
    plane = np.ndim(x) == 2
    xa, ya = as_grid(x), as_grid(y)
    require_same_shape(xa, ya, "prediction and ground truth")
    return xa, ya, plane


def _shaped(grad: np.ndarray, plane: bool) -> np.ndarray:
    return grad[:, :, 0] if plane else grad


def l2_loss(x, y, spec: LossSpec | None = None) -> LossResult:
    """Mean squared error; gradient 2 (x - y) / N."""
    xa, ya, plane = _pair(x, y)
    diff = xa - ya
    n = diff.size
    terms = diff * diff / n
    value = float(np.sum(diff * diff) / n)
    if spec is not None and spec.unscaled_pixel_grads:
        grad = diff.copy()
    else:
        grad = (2.0 / n) * diff
    return LossResult(value, _shaped(grad, plane), terms)


def l1_loss(x, y, spec: LossSpec | None = None) -> LossResult:
    """Mean absolute error; gradient sign(x - y) / N with sign(0) = 0."""
    xa, ya, plane = _pair(x, y)
    diff = xa - ya
    n = diff.size
    terms = np.abs(diff) / n
    value = float(np.sum(np.abs(diff)) / n)
    if spec is not None and spec.unscaled_pixel_grads:
        grad = np.sign(diff)
    else:
        grad = np.sign(diff) / n
    return LossResult(value, _shaped(grad, plane), terms)


def _ssim_terms(x: np.ndarray, y: np.ndarray, kernel: GaussianKernel, c1: float, c2: float) -> SSIMTerms:
    stats = local_stats(x, y, kernel)
    d1 = stats.mu_x**2 + stats.mu_y**2 + c1
    d2 = stats.var_x + stats.var_y + c2
    l = (2.0 * stats.mu_x * stats.mu_y + c1) / d1
    cs = (2.0 * stats.cov_xy + c2) / d2
    return SSIMTerms(kernel=kernel, mu_x=stats.mu_x, mu_y=stats.mu_y, l=l, cs=cs, d1=d1, d2=d2)


def ssim_map(x, y, spec: LossSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-pixel (ssim, l, cs) with G_{sigma_g}; borders use reflected windows."""
    xa, ya, plane = _pair(x, y)
    kernel = gaussian_kernel(spec.sigma_g)
    valid_region(xa.shape, kernel.radius)
    terms = _ssim_terms(xa, ya, kernel, spec.c1, spec.c2)
    ssim = terms.l * terms.cs
    return _shaped(ssim, plane), _shaped(terms.l, plane), _shaped(terms.cs, plane)


def _scatter(kernel: GaussianKernel, a: np.ndarray, b: np.ndarray, g: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """sum_p G(q - p) [a(p) + b(p) y(q) + g(p) x(q)] for fields zero off the valid region."""
    def spread(field: np.ndarray) -> np.ndarray:
        return gaussian_filter(field, kernel, mode="constant")

    return spread(a) + y * spread(b) + x * spread(g)


def _valid_weights(shape: tuple[int, ...], margin: int) -> tuple[np.ndarray, tuple[slice, slice]]:
    """Averaging weights 1/N_valid on the valid region, zero elsewhere."""
    rows, cols = valid_region(shape, margin)
    weights = np.zeros(shape)
    weights[rows, cols] = 1.0
    weights /= weights.sum()
    return weights, (rows, cols)


def _msssim_core(x: np.ndarray, y: np.ndarray, sigmas: list[float], c1: float, c2: float) -> LossResult:
    """1 - l_M * prod_j cs_j averaged over the valid region, with its gradient.

    The single-scale case is the plain SSIM loss.
    """
    kernels = [gaussian_kernel(s) for s in sigmas]
    margin = max(k.radius for k in kernels)
    weights, region = _valid_weights(x.shape, margin)
    terms = [_ssim_terms(x, y, k, c1, c2) for k in kernels]

    coarsest = terms[-1]
    cs_product = np.prod([t.cs for t in terms], axis=0)
    msssim = coarsest.l * cs_product
    per_center = 1.0 - msssim[region]
    value = float(np.mean(per_center))

    grad = np.zeros_like(x)
    for j, t in enumerate(terms):
        others = np.ones_like(x)
        for k, other in enumerate(terms):
            if k != j:
                others = others * other.cs
        # d cs_j / d x(q) = G_j(q - p) * 2/d2 * [(y(q) - mu_y) - cs (x(q) - mu_x)]
        coeff = weights * coarsest.l * others * (2.0 / t.d2)
        a = coeff * (t.cs * t.mu_x - t.mu_y)
        g = -coeff * t.cs
        if j == len(terms) - 1:
            # d l_M / d x(q) = G_M(q - p) * 2 (mu_y - mu_x l) / d1
            a = a + weights * cs_product * 2.0 * (t.mu_y - t.mu_x * t.l) / t.d1
        grad += _scatter(t.kernel, a, coeff, g, x, y)

    return LossResult(value, -grad, per_center / per_center.size)


def _ssim_family(x, y, spec: LossSpec, sigmas: list[float]) -> LossResult:
    xa, ya, plane = _pair(x, y)
    if spec.luminance and xa.shape[2] == 3:
        result = _msssim_core(xa @ LUMA_WEIGHTS[:, None], ya @ LUMA_WEIGHTS[:, None], sigmas, spec.c1, spec.c2)
        result.grad = result.grad * LUMA_WEIGHTS
    else:
        result = _msssim_core(xa, ya, sigmas, spec.c1, spec.c2)
    result.grad = _shaped(result.grad, plane)
    return result


def ssim_loss(x, y, spec: LossSpec) -> LossResult:
    """Mean of 1 - SSIM(p) over the valid centers of G_{sigma_g}."""
    return _ssim_family(x, y, spec, [spec.sigma_g])


def msssim_loss(x, y, spec: LossSpec) -> LossResult:
    """Mean of 1 - l_M prod_j cs_j with one full-resolution Gaussian per scale."""
    return _ssim_family(x, y, spec, spec.sigmas)


def msssim_map(x, y, spec: LossSpec) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel MS-SSIM and a mask of pixels where some cs_j is negative.

    Where every cs_j is non-negative the MS-SSIM value is at most 1; flagged
    pixels carry no such bound.
    """
    xa, ya, plane = _pair(x, y)
    kernels = [gaussian_kernel(s) for s in spec.sigmas]
    valid_region(xa.shape, kernels[-1].radius)
    terms = [_ssim_terms(xa, ya, k, spec.c1, spec.c2) for k in kernels]
    cs = np.stack([t.cs for t in terms])
    msssim = terms[-1].l * np.prod(cs, axis=0)
    negative = np.any(cs < 0, axis=0)
    return _shaped(msssim, plane), _shaped(negative, plane)


def _gaussian_weighted_pixel_loss(x, y, spec: LossSpec, squared: bool) -> LossResult:
    """Per valid center, the G_{sigma_M}-weighted window average of the pixel error."""
    xa, ya, plane = _pair(x, y)
    kernel = gaussian_kernel(spec.sigma_max)
    weights, region = _valid_weights(xa.shape, kernel.radius)

    diff = xa - ya
    if squared:
        pixel, d_pixel = diff * diff, 2.0 * diff
    else:
        pixel, d_pixel = np.abs(diff), np.sign(diff)
    per_center = gaussian_filter(pixel, kernel)[region]
    value = float(np.mean(per_center))
    grad = d_pixel * gaussian_filter(weights, kernel, mode="constant")
    return LossResult(value, _shaped(grad, plane), per_center / per_center.size)


def gaussian_weighted_l2(x, y, spec: LossSpec) -> LossResult:
    return _gaussian_weighted_pixel_loss(x, y, spec, squared=True)


def gaussian_weighted_l1(x, y, spec: LossSpec) -> LossResult:
    return _gaussian_weighted_pixel_loss(x, y, spec, squared=False)


def _mix(ms: LossResult, pixel: LossResult, alpha: float) -> LossResult:
    terms = None
    if ms.terms is not None and pixel.terms is not None:
        terms = np.concatenate([alpha * ms.terms.ravel(), (1.0 - alpha) * pixel.terms.ravel()])
    return LossResult(
        value=alpha * ms.value + (1.0 - alpha) * pixel.value,
        grad=alpha * ms.grad + (1.0 - alpha) * pixel.grad,
        terms=terms,
    )


def mix_msssim_l2(x, y, spec: LossSpec) -> LossResult:
    """alpha * MS-SSIM loss + (1 - alpha) * Gaussian-weighted l2."""
    return _mix(msssim_loss(x, y, spec), gaussian_weighted_l2(x, y, spec), spec.alpha)


def mix_msssim_l1(x, y, spec: LossSpec) -> LossResult:
    """alpha * MS-SSIM loss + (1 - alpha) * Gaussian-weighted l1."""
    return _mix(msssim_loss(x, y, spec), gaussian_weighted_l1(x, y, spec), spec.alpha)


LOSSES: dict[LossKind, Callable[..., LossResult]] = {
    LossKind.L2: l2_loss,
    LossKind.L1: l1_loss,
    LossKind.SSIM: ssim_loss,
    LossKind.MSSSIM: msssim_loss,
    LossKind.MSSSIM_L2: mix_msssim_l2,
    LossKind.MSSSIM_L1: mix_msssim_l1,
}


def compute_loss(x, y, spec: LossSpec) -> LossResult:
    """Dispatch on spec.kind."""
    return LOSSES[spec.kind](x, y, spec)


# Central stencils as (offset k, weight c_k): df/dx ~ sum_k c_k (f(x + kh) - f(x - kh)) / (2 k h)
CENTRAL_STENCILS: dict[int, tuple[tuple[int, float], ...]] = {
    2: ((1, 1.0),),
    4: ((1, 4.0 / 3.0), (2, -1.0 / 3.0)),
}


def loss_difference(plus: float | LossResult, minus: float | LossResult) -> float:
    """plus - minus, summed term by term when both carry per-pixel terms.

    Terms a perturbation does not reach are bitwise equal and cancel exactly.
    """
    if isinstance(plus, LossResult) and isinstance(minus, LossResult):
        if plus.terms is not None and minus.terms is not None and plus.terms.shape == minus.terms.shape:
            return math.fsum((plus.terms - minus.terms).ravel())
        return plus.value - minus.value
    return float(plus) - float(minus)


def central_difference(
    evaluate: Callable[[], float | LossResult], values: np.ndarray, h: float, order: int = 2
) -> np.ndarray:
    """Derivative of evaluate() with respect to every entry of ``values``.

    Entries are perturbed in place and restored. The divisor is the step as
    actually represented, (v + kh) - (v - kh), not 2kh.
    """
    if not h > 0:
        raise ValueError(f"Step h must be positive, got {h}")
    if order not in CENTRAL_STENCILS:
        raise ValueError(f"Stencil order must be one of {sorted(CENTRAL_STENCILS)}, got {order}")
    grad = np.zeros(values.shape)
    flat_values, flat_grad = values.reshape(-1), grad.reshape(-1)
    if not np.shares_memory(flat_values, values):
        raise ValueError("values must be a contiguous array evaluate() reads from")
    for i in range(flat_values.size):
        original = flat_values[i]
        estimate = 0.0
        for k, weight in CENTRAL_STENCILS[order]:
            flat_values[i] = original + k * h
            upper = flat_values[i]
            plus = evaluate()
            flat_values[i] = original - k * h
            span = upper - flat_values[i]
            minus = evaluate()
            estimate += weight * loss_difference(plus, minus) / span
        flat_values[i] = original
        flat_grad[i] = estimate
    return grad


def finite_diff_grad(
    loss: Callable[[np.ndarray, np.ndarray], float | LossResult],
    x,
    y,
    h: float = 1e-5,
    order: int = 2,
) -> np.ndarray:
    """Central-difference gradient of loss(x, y) with respect to every entry of x."""
    perturbed = np.array(x, dtype=np.float64)
    return central_difference(lambda: loss(perturbed, y), perturbed, h, order)
