"""Compositing a cutout into a background: alpha ramps, blur, Poisson.

Every method produces 8-bit output with half-up rounding so repeated runs
are bit-exact. The ``blend`` dispatcher centers the scaled cutout in its
placement box and applies one method; "random" draws among the cheap
methods (hard paste, linear ramp, Gaussian alpha, motion blur) — the
Poisson solver is available but never drawn randomly.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy import ndimage

from .bank import InstanceCutout, scale_cutout
from .geometry import BoundingBox, iround

DEFAULT_RAMP_WIDTH = 5.0
DEFAULT_GAUSSIAN_SIGMA = 2.0
DEFAULT_POISSON_TOL = 1e-3
DEFAULT_POISSON_MAX_ITER = 5000
MOTION_LENGTH_RANGE = (3, 9)


@dataclass(frozen=True)
class BlendNone:
    pass


@dataclass(frozen=True)
class LinearRamp:
    width: float = DEFAULT_RAMP_WIDTH

    def __post_init__(self):
        if self.width < 1:
            raise ValueError(f"ramp width must be >= 1, got {self.width}")


@dataclass(frozen=True)
class GaussianAlpha:
    sigma: float = DEFAULT_GAUSSIAN_SIGMA

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError(f"sigma must be > 0, got {self.sigma}")


@dataclass(frozen=True)
class MotionBlur:
    length: int = 5
    angle: float = 0.0

    def __post_init__(self):
        if self.length < 1:
            raise ValueError(f"blur length must be >= 1, got {self.length}")


@dataclass(frozen=True)
class PoissonBlend:
    tol: float = DEFAULT_POISSON_TOL
    max_iter: int = DEFAULT_POISSON_MAX_ITER

    def __post_init__(self):
        if self.tol <= 0 or self.max_iter < 1:
            raise ValueError("tol must be > 0 and max_iter >= 1")


BlendMethod = Union[BlendNone, LinearRamp, GaussianAlpha, MotionBlur, PoissonBlend]


def round_to_uint8(values: np.ndarray) -> np.ndarray:
    """Half-up rounding to 8 bits (0.5 always rounds toward +inf)."""
    return np.floor(np.clip(values, 0.0, 255.0) + 0.5).astype(np.uint8)


def linear_alpha(mask: np.ndarray, width: float) -> np.ndarray:
    """Alpha ramping linearly from 0 at the mask edge to 1 at depth ``width``.

    Depth is the Euclidean distance transform of the mask (0 outside), so
    alpha = clamp(distance_inside / width, 0, 1).
    """
    if mask.dtype != bool:
        mask = mask > 0
    dist = ndimage.distance_transform_edt(mask)
    return np.clip(dist / width, 0.0, 1.0)


def gaussian_kernel_1d(sigma: float) -> np.ndarray:
    """Discrete Gaussian truncated at radius 3*sigma, renormalized to sum 1."""
    radius = int(math.ceil(3.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(x**2) / (2.0 * sigma**2))
    return k / k.sum()


def gaussian_alpha(mask: np.ndarray, sigma: float) -> np.ndarray:
    """Alpha from convolving the {0,1} mask with a normalized Gaussian.

    Zero padding outside the array, so alpha fades at the grid edge exactly
    as a dense 2-D convolution would.
    """
    field = (mask > 0).astype(np.float64)
    k = gaussian_kernel_1d(sigma)
    out = ndimage.convolve1d(field, k, axis=0, mode="constant", cval=0.0)
    out = ndimage.convolve1d(out, k, axis=1, mode="constant", cval=0.0)
    return np.clip(out, 0.0, 1.0)


def alpha_composite(
    background: np.ndarray, src_rgb: np.ndarray, alpha: np.ndarray, x0: int, y0: int
) -> np.ndarray:
    """Per-pixel mix out = alpha*src + (1-alpha)*background at (x0, y0)."""
    h, w = alpha.shape
    H, W = background.shape[:2]
    if x0 < 0 or y0 < 0 or x0 + w > W or y0 + h > H:
        raise ValueError(
            f"placement ({x0}, {y0}, {x0 + w}, {y0 + h}) outside {W}x{H} image"
        )
    if src_rgb.shape[:2] != (h, w):
        raise ValueError(f"source {src_rgb.shape[:2]} does not match alpha {alpha.shape}")
    out = background.copy()
    region = out[y0 : y0 + h, x0 : x0 + w].astype(np.float64)
    a = alpha[:, :, None]
    mixed = a * src_rgb.astype(np.float64) + (1.0 - a) * region
    out[y0 : y0 + h, x0 : x0 + w] = round_to_uint8(mixed)
    return out


def motion_blur_kernel(length: int, angle: float) -> np.ndarray:
    """Normalized 1-D box of ``length`` taps rasterized at ``angle`` radians."""
    radius = max(1, int(math.ceil((length - 1) / 2.0)))
    kernel = np.zeros((2 * radius + 1, 2 * radius + 1), dtype=np.float64)
    for i in range(length):
        t = i - (length - 1) / 2.0
        ix = iround(t * math.cos(angle))
        iy = iround(t * math.sin(angle))
        kernel[radius + iy, radius + ix] += 1.0
    return kernel / kernel.sum()


def motion_blur(image: np.ndarray, length: int, angle: float) -> np.ndarray:
    """Blur the whole image with a rasterized motion kernel, clamping edges."""
    if length == 1:
        return image.copy()
    kernel = motion_blur_kernel(length, angle)
    out = np.empty_like(image)
    for c in range(image.shape[2]):
        blurred = ndimage.correlate(
            image[:, :, c].astype(np.float64), kernel, mode="nearest"
        )
        out[:, :, c] = round_to_uint8(blurred)
    return out


@dataclass(frozen=True)
class PoissonResult:
    """Blended 8-bit image plus the raw float solution for auditing."""

    image: np.ndarray
    solution: np.ndarray
    iterations: int
    residual: float
    converged: bool
    energies: tuple[float, ...] = ()


def poisson_residual(
    solution: np.ndarray, background: np.ndarray, source: np.ndarray, mask: np.ndarray
) -> float:
    """Infinity norm of (Laplacian of solution - Laplacian of source) on the
    mask, with the solution clamped to the background outside the mask."""
    f = np.where(mask, solution, background.astype(np.float64))
    g = source.astype(np.float64)
    lap_f = 4 * f
    lap_g = 4 * g
    for shift in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        lap_f -= np.roll(f, shift, axis=(0, 1))
        lap_g -= np.roll(g, shift, axis=(0, 1))
    inner = mask.copy()
    inner[0, :] = inner[-1, :] = inner[:, 0] = inner[:, -1] = False
    if not inner.any():
        return 0.0
    return float(np.abs(lap_f - lap_g)[inner].max())


def _solve_poisson_channel(
    background: np.ndarray,
    source: np.ndarray,
    mask: np.ndarray,
    tol: float,
    max_iter: int,
) -> tuple[np.ndarray, int, float, list[float]]:
    """Red-black Gauss-Seidel for Laplace(f) = Laplace(g) on the mask with
    f fixed to the background elsewhere. Returns (f, sweeps, residual,
    energy samples)."""
    H, W = mask.shape
    f = background.astype(np.float64).copy()
    g = source.astype(np.float64)

    lap_g = 4 * g
    for shift in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        lap_g -= np.roll(g, shift, axis=(0, 1))

    yy, xx = np.mgrid[0:H, 0:W]
    parity = (yy + xx) % 2
    red = mask & (parity == 0)
    black = mask & (parity == 1)

    def neighbor_sum(arr):
        s = np.zeros_like(arr)
        s[1:, :] += arr[:-1, :]
        s[:-1, :] += arr[1:, :]
        s[:, 1:] += arr[:, :-1]
        s[:, :-1] += arr[:, 1:]
        return s

    def energy():
        # 1/2 f^T A f - f^T b over the free variables, with b collecting the
        # source term and the fixed Dirichlet neighbors (full weight, unlike
        # the symmetric free-free couplings); Gauss-Seidel decreases this
        # monotonically.
        ns_free = neighbor_sum(np.where(mask, f, 0.0))[mask]
        ns_dir = neighbor_sum(f)[mask] - ns_free
        fm = f[mask]
        return float(
            (fm * (4 * fm - ns_free) / 2 - fm * (lap_g[mask] + ns_dir)).sum()
        )

    energies = [energy()]
    residual = np.inf
    sweeps = 0
    for sweeps in range(1, max_iter + 1):
        for color in (red, black):
            ns = neighbor_sum(f)
            f[color] = (ns[color] + lap_g[color]) / 4.0
        ns = neighbor_sum(f)
        residual = float(np.abs(4 * f[mask] - ns[mask] - lap_g[mask]).max())
        if sweeps % 10 == 0:
            energies.append(energy())
        if residual <= tol:
            break
    return f, sweeps, residual, energies


def poisson_blend(
    background: np.ndarray,
    source: np.ndarray,
    mask: np.ndarray,
    tol: float = DEFAULT_POISSON_TOL,
    max_iter: int = DEFAULT_POISSON_MAX_ITER,
) -> PoissonResult:
    """Seamlessly clone ``source`` into ``background`` over ``mask``.

    Solves the discrete Poisson equation per channel: the solution matches
    the source's Laplacian inside the mask and the background values on the
    mask's border. If the mask touches the array border, all inputs are
    edge-padded by one pixel so boundary values always exist.
    """
    if mask.dtype != bool:
        mask = mask > 0
    if not mask.any():
        raise ValueError("empty mask")
    if background.shape != source.shape or background.shape[:2] != mask.shape:
        raise ValueError(
            f"shape mismatch: background {background.shape}, source {source.shape}, "
            f"mask {mask.shape}"
        )
    touches = mask[0, :].any() or mask[-1, :].any() or mask[:, 0].any() or mask[:, -1].any()
    if touches:
        background = np.pad(background, ((1, 1), (1, 1), (0, 0)), mode="edge")
        source = np.pad(source, ((1, 1), (1, 1), (0, 0)), mode="edge")
        mask = np.pad(mask, 1, mode="constant", constant_values=False)

    solution = background.astype(np.float64).copy()
    total_iters = 0
    worst_residual = 0.0
    energies: tuple[float, ...] = ()
    for c in range(background.shape[2]):
        f, sweeps, residual, channel_energies = _solve_poisson_channel(
            background[:, :, c], source[:, :, c], mask, tol, max_iter
        )
        solution[:, :, c] = f
        total_iters = max(total_iters, sweeps)
        worst_residual = max(worst_residual, residual)
        if c == 0:
            energies = tuple(channel_energies)

    converged = worst_residual <= tol
    if not converged:
        warnings.warn(
            f"poisson blend stopped at {max_iter} sweeps with residual "
            f"{worst_residual:.3g} > tol {tol:.3g}",
            RuntimeWarning,
            stacklevel=2,
        )
    image = round_to_uint8(solution)
    if touches:
        image = image[1:-1, 1:-1]
        solution = solution[1:-1, 1:-1]
    return PoissonResult(
        image=image,
        solution=solution,
        iterations=total_iters,
        residual=worst_residual,
        converged=converged,
        energies=energies,
    )


def resolve_blend_method(spec: str, rng: np.random.Generator) -> BlendMethod:
    """Turn a method name into a concrete BlendMethod, drawing any free
    parameters (motion length/angle; the "random" family choice) from rng."""
    if spec == "random":
        choice = int(rng.integers(4))
        spec = ("none", "linear", "gaussian", "motion")[choice]
    if spec == "none":
        return BlendNone()
    if spec == "linear":
        return LinearRamp()
    if spec == "gaussian":
        return GaussianAlpha()
    if spec == "motion":
        length = int(rng.integers(MOTION_LENGTH_RANGE[0], MOTION_LENGTH_RANGE[1] + 1))
        angle = float(rng.uniform(0.0, math.pi))
        return MotionBlur(length=length, angle=angle)
    if spec == "poisson":
        return PoissonBlend()
    raise ValueError(f"unknown blend method {spec!r}")


def blend_method_name(method: BlendMethod) -> str:
    return {
        BlendNone: "none",
        LinearRamp: "linear",
        GaussianAlpha: "gaussian",
        MotionBlur: "motion",
        PoissonBlend: "poisson",
    }[type(method)]


def paste_anchor(box: BoundingBox, w: int, h: int, width: int, height: int) -> tuple[int, int]:
    """Top-left integer corner centering a w x h patch in ``box``, nudged to
    stay inside the image."""
    x0 = iround(box.center[0] - w / 2.0)
    y0 = iround(box.center[1] - h / 2.0)
    x0 = max(0, min(x0, width - w))
    y0 = max(0, min(y0, height - h))
    return x0, y0


def composite_with_method(
    background: np.ndarray,
    rgb: np.ndarray,
    mask: np.ndarray,
    x0: int,
    y0: int,
    method: BlendMethod,
) -> np.ndarray:
    """Composite an already-scaled patch at (x0, y0) using ``method``.

    Motion blur composites with the hard mask first, then blurs the whole
    image. Poisson solves on the pasted neighborhood and keeps the rest of
    the image untouched.
    """
    H, W = background.shape[:2]
    h, w = mask.shape
    if isinstance(method, BlendNone):
        return alpha_composite(background, rgb, mask.astype(np.float64), x0, y0)
    if isinstance(method, LinearRamp):
        return alpha_composite(background, rgb, linear_alpha(mask, method.width), x0, y0)
    if isinstance(method, GaussianAlpha):
        return alpha_composite(background, rgb, gaussian_alpha(mask, method.sigma), x0, y0)
    if isinstance(method, MotionBlur):
        pasted = alpha_composite(background, rgb, mask.astype(np.float64), x0, y0)
        return motion_blur(pasted, method.length, method.angle)
    if isinstance(method, PoissonBlend):
        if x0 < 0 or y0 < 0 or x0 + w > W or y0 + h > H:
            raise ValueError(
                f"placement ({x0}, {y0}, {x0 + w}, {y0 + h}) outside {W}x{H} image"
            )
        pad = 1
        rx0 = max(0, x0 - pad)
        ry0 = max(0, y0 - pad)
        rx1 = min(W, x0 + w + pad)
        ry1 = min(H, y0 + h + pad)
        bg_region = background[ry0:ry1, rx0:rx1]
        src_region = bg_region.copy()
        src_region[y0 - ry0 : y0 - ry0 + h, x0 - rx0 : x0 - rx0 + w] = rgb
        mask_region = np.zeros(bg_region.shape[:2], dtype=bool)
        mask_region[y0 - ry0 : y0 - ry0 + h, x0 - rx0 : x0 - rx0 + w] = mask
        result = poisson_blend(
            bg_region, src_region, mask_region, method.tol, method.max_iter
        )
        out = background.copy()
        out[ry0:ry1, rx0:rx1] = result.image
        return out
    raise ValueError(f"unknown blend method {method!r}")


def blend(
    background: np.ndarray,
    cutout: InstanceCutout,
    box: BoundingBox,
    scale: float,
    method: BlendMethod,
) -> np.ndarray:
    """Scale the cutout, center it in ``box``, and composite with ``method``."""
    H, W = background.shape[:2]
    rgb, mask = scale_cutout(cutout, scale)
    h, w = mask.shape
    if w > W or h > H:
        raise ValueError(f"scaled cutout {w}x{h} larger than image {W}x{H}")
    x0, y0 = paste_anchor(box, w, h, W, H)
    return composite_with_method(background, rgb, mask, x0, y0, method)
