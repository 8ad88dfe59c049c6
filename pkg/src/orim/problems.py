"""Test problem generators: inverse heat equation, image deblurring, tomography.

Also noise injection and prior construction from image stacks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.fft as sfft
import scipy.sparse as sp

from .errors import PreconditionError
from .linalg import DiagonalizedOperator
from .model import PriorModel, prior_from_mean_diag

__all__ = [
    "HeatParams",
    "DeblurProblem",
    "TomoProblem",
    "heat_kernel",
    "heat_problem",
    "heat_solution",
    "box_psf",
    "dct_shift",
    "deblur_problem",
    "reflexive_blur",
    "tomo_problem",
    "default_padding",
    "shepp_logan",
    "shepp_logan_ellipses",
    "rasterize_ellipses",
    "phantom_stack",
    "add_noise",
    "prior_from_stack",
    "build_M_variants",
]


# Inverse heat equation =======================================================
@dataclass(frozen=True)
class HeatParams:
    n: int
    kappa: float = 1.0

    def __post_init__(self):
        if self.n < 2:
            raise PreconditionError("n must be at least 2")
        if not self.kappa > 0:
            raise PreconditionError("kappa must be positive")


def heat_kernel(t, kappa: float):
    """``k(t) = t^{-3/2} / (2 sqrt(pi) kappa) * exp(-1 / (4 kappa^2 t))``.

    Evaluated in log space so that the ``t -> 0+`` limit underflows to 0.
    """
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0):
        raise PreconditionError("heat kernel needs t > 0")
    logk = (-1.5 * np.log(t) - np.log(2.0 * np.sqrt(np.pi) * kappa)
            - 1.0 / (4.0 * kappa**2 * t))
    out = np.exp(logk)
    return out if out.ndim else float(out)


def heat_problem(params: HeatParams | int, kappa: float | None = None) -> np.ndarray:
    """Lower-triangular Toeplitz matrix from midpoint quadrature of the heat kernel.

    ``A[i, j] = h k((i - j + 1/2) h)`` for ``j <= i`` with ``h = 1/n``.
    """
    if not isinstance(params, HeatParams):
        params = HeatParams(int(params), 1.0 if kappa is None else kappa)
    n, h = params.n, 1.0 / params.n
    col = h * heat_kernel((np.arange(n) + 0.5) * h, params.kappa)
    i, j = np.indices((n, n))
    A = np.where(i >= j, col[np.clip(i - j, 0, n - 1)], 0.0)
    return A


def heat_solution(n: int) -> np.ndarray:
    """Smooth bump on the first half of [0, 1], zero on the second half."""
    x = np.zeros(n)
    ti = np.arange(1, n // 2 + 1) * 20.0 / n
    x[: n // 2] = np.where(
        ti < 2, 0.75 * ti**2 / 4,
        np.where(ti < 3, 0.75 + (ti - 2) * (3 - ti), 0.75 * np.exp(-(ti - 3) * 2)))
    return x


# Deblurring ==================================================================
def _dct2(x):
    return sfft.dctn(x, type=2, norm="ortho", axes=(0, 1))


def _idct2(x):
    return sfft.idctn(x, type=2, norm="ortho", axes=(0, 1))


def box_psf(size: int) -> np.ndarray:
    if size < 1 or size % 2 == 0:
        raise PreconditionError(f"psf size must be odd and positive, got {size}")
    return np.full((size, size), 1.0 / size**2)


def dct_shift(psf: np.ndarray, center) -> np.ndarray:
    """First column of the reflexive-boundary blur matrix, as an image.

    ``psf`` has the image's shape with its center at ``center``; the result
    folds the quadrants of the PSF onto the top-left corner.
    """
    m, n = psf.shape
    i, j = center
    k = min(i, m - i - 1, j, n - j - 1)
    pp = psf[i - k:i + k + 1, j - k:j + k + 1]
    z1 = np.eye(2 * k + 1, k=k)
    z2 = np.eye(2 * k + 1, k=k + 1)
    pp = z1 @ pp @ z1.T + z1 @ pp @ z2.T + z2 @ pp @ z1.T + z2 @ pp @ z2.T
    out = np.zeros((m, n))
    out[: 2 * k + 1, : 2 * k + 1] = pp
    return out


def reflexive_blur(image: np.ndarray, psf: np.ndarray) -> np.ndarray:
    """Direct spatial convolution with half-sample symmetric (reflexive) padding."""
    from scipy.ndimage import convolve

    return convolve(np.asarray(image, dtype=float), psf, mode="reflect")


@dataclass(frozen=True, eq=False)
class DeblurProblem:
    """Spatially invariant blur with reflexive boundaries, diagonalized by the 2-D DCT."""

    image_shape: tuple[int, int]
    psf: np.ndarray
    spectrum: np.ndarray
    operator: DiagonalizedOperator

    @property
    def n(self) -> int:
        return self.image_shape[0] * self.image_shape[1]

    def blur(self, image):
        return self.operator.apply(np.asarray(image, dtype=float).ravel()).reshape(
            self.image_shape)


def _image_transform(shape, fn):
    rows, cols = shape

    def apply(v):
        if v.ndim == 1:
            return fn(v.reshape(rows, cols)).ravel()
        k = v.shape[1]
        return fn(v.reshape(rows, cols, k)).reshape(rows * cols, k)

    return apply


def deblur_problem(image_shape, psf_size: int = 7, psf: np.ndarray | None = None) -> DeblurProblem:
    """Box-car (or given doubly symmetric) blur with reflexive boundary conditions."""
    rows, cols = (int(s) for s in image_shape)
    if psf is None:
        psf = box_psf(psf_size)
    psf = np.asarray(psf, dtype=float)
    p, q = psf.shape
    if p % 2 == 0 or q % 2 == 0:
        raise PreconditionError("psf dimensions must be odd")
    if p > min(rows, cols) or q > min(rows, cols):
        raise PreconditionError("psf larger than the image")
    if np.any(psf < 0):
        raise PreconditionError("psf entries must be nonnegative")
    psf = psf / psf.sum()
    big = np.zeros((rows, cols))
    ci, cj = rows // 2, cols // 2
    big[ci - p // 2:ci + p // 2 + 1, cj - q // 2:cj + q // 2 + 1] = psf
    e1 = np.zeros((rows, cols))
    e1[0, 0] = 1.0
    spectrum = (_dct2(dct_shift(big, (ci, cj))) / _dct2(e1)).ravel()
    fwd = _image_transform((rows, cols), _dct2)
    inv = _image_transform((rows, cols), _idct2)
    op = DiagonalizedOperator(spectrum, apply_u=inv, apply_ut=fwd, apply_v=inv, apply_vt=fwd)
    return DeblurProblem((rows, cols), psf, spectrum, op)


# Tomography ==================================================================
def default_padding(n_pix: int) -> int:
    """Zero padding per side that keeps a rotated image inside the grid."""
    return int(np.ceil(n_pix * (np.sqrt(2.0) - 1.0) / 2.0))


@dataclass(frozen=True, eq=False)
class TomoProblem:
    """Parallel-beam projections of a zero-padded image.

    ``A`` stacks ``R S_j`` for each angle: ``S_j`` rotates the padded image by
    bilinear interpolation about its center and ``R`` sums columns (one
    detector bin per column, scaled by ``pixel_width``). Unknowns are the
    padded image in row-major order.
    """

    image_size: int
    angles: np.ndarray
    A: sp.csr_matrix
    pad: int
    pixel_width: float = 1.0

    @property
    def grid_size(self) -> int:
        return self.image_size + 2 * self.pad

    def embed(self, image) -> np.ndarray:
        """Zero-pad an ``image_size``-square image and vectorize it."""
        out = np.zeros((self.grid_size, self.grid_size))
        p = self.pad
        out[p:p + self.image_size, p:p + self.image_size] = image
        return out.ravel()

    def crop(self, x) -> np.ndarray:
        p = self.pad
        return np.asarray(x).reshape(self.grid_size, self.grid_size)[
            p:p + self.image_size, p:p + self.image_size]

    def sinogram(self, x) -> np.ndarray:
        return (self.A @ x).reshape(len(self.angles), self.grid_size)


def _rotation_block(N: int, theta_deg: float):
    """Rows (detector bins), columns (source pixels) and weights of ``R S``."""
    th = np.deg2rad(theta_deg)
    c, s = np.cos(th), np.sin(th)
    # snap near-lattice trig values so axis-aligned rotations are exact
    c = 0.0 if abs(c) < 1e-14 else c
    s = 0.0 if abs(s) < 1e-14 else s
    center = (N - 1) / 2.0
    r, col = np.indices((N, N))
    y = r.ravel() - center
    x = col.ravel() - center
    xs = c * x + s * y + center
    ys = -s * x + c * y + center
    r0 = np.floor(ys).astype(int)
    c0 = np.floor(xs).astype(int)
    fr = ys - r0
    fc = xs - c0
    bins = col.ravel()
    rows, cols, vals = [], [], []
    for dr, dc, w in ((0, 0, (1 - fr) * (1 - fc)), (0, 1, (1 - fr) * fc),
                      (1, 0, fr * (1 - fc)), (1, 1, fr * fc)):
        rr, cc = r0 + dr, c0 + dc
        ok = (rr >= 0) & (rr < N) & (cc >= 0) & (cc < N) & (w > 0)
        rows.append(bins[ok])
        cols.append(rr[ok] * N + cc[ok])
        vals.append(w[ok])
    return np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)


def tomo_problem(n_pix: int, angles, pad: int | None = None,
                 pixel_width: float = 1.0) -> TomoProblem:
    """Sparse parallel-beam projection matrix for ``angles`` (degrees)."""
    if n_pix < 8:
        raise PreconditionError("n_pix must be at least 8")
    angles = np.asarray(angles, dtype=float).ravel()
    if angles.size == 0:
        raise PreconditionError("need at least one angle")
    pad = default_padding(n_pix) if pad is None else int(pad)
    N = n_pix + 2 * pad
    rows, cols, vals = [], [], []
    for j, theta in enumerate(angles):
        r, c, v = _rotation_block(N, theta)
        rows.append(r + j * N)
        cols.append(c)
        vals.append(v)
    A = sp.coo_matrix((pixel_width * np.concatenate(vals),
                       (np.concatenate(rows), np.concatenate(cols))),
                      shape=(angles.size * N, N * N)).tocsr()
    A.sum_duplicates()
    return TomoProblem(n_pix, angles, A, pad, pixel_width)


# Phantoms ====================================================================
def shepp_logan_ellipses() -> np.ndarray:
    """Modified Shepp-Logan parameters: value, semi-axes a, b, center x, y, angle (deg)."""
    return np.array([
        [1.0, .6900, .9200, 0.00, 0.0000, 0],
        [-.8, .6624, .8740, 0.00, -.0184, 0],
        [-.2, .1100, .3100, 0.22, 0.0000, -18],
        [-.2, .1600, .4100, -.22, 0.0000, 18],
        [0.1, .2100, .2500, 0.00, 0.3500, 0],
        [0.1, .0460, .0460, 0.00, 0.1000, 0],
        [0.1, .0460, .0460, 0.00, -.1000, 0],
        [0.1, .0460, .0230, -.08, -.6050, 0],
        [0.1, .0230, .0230, 0.00, -.6060, 0],
        [0.1, .0230, .0460, 0.06, -.6050, 0],
    ])


def rasterize_ellipses(ellipses, n_pix: int) -> np.ndarray:
    """Sum of constant ellipses sampled at pixel centers of ``[-1, 1]^2``.

    Row 0 is the top of the image (``y = +1``).
    """
    coords = -1.0 + (np.arange(n_pix) + 0.5) * 2.0 / n_pix
    x, y = np.meshgrid(coords, coords[::-1])
    img = np.zeros((n_pix, n_pix))
    for val, a, b, x0, y0, phi in np.asarray(ellipses, dtype=float):
        th = np.deg2rad(phi)
        xr = (x - x0) * np.cos(th) + (y - y0) * np.sin(th)
        yr = -(x - x0) * np.sin(th) + (y - y0) * np.cos(th)
        img[(xr / a) ** 2 + (yr / b) ** 2 <= 1.0] += val
    return img


def shepp_logan(n_pix: int) -> np.ndarray:
    """Modified Shepp-Logan phantom with values clipped to [0, 1]."""
    if n_pix < 8:
        raise PreconditionError("n_pix must be at least 8")
    return np.clip(rasterize_ellipses(shepp_logan_ellipses(), n_pix), 0.0, 1.0)


_ELLIPSOIDS = np.array([
    # value, a, b, c, x0, y0, z0, phi
    [1.0, .6900, .920, .810, 0.00, 0.0000, 0.00, 0],
    [-.8, .6624, .874, .780, 0.00, -.0184, 0.00, 0],
    [-.2, .1100, .310, .220, 0.22, 0.0000, 0.00, -18],
    [-.2, .1600, .410, .280, -.22, 0.0000, 0.00, 18],
    [0.1, .2100, .250, .410, 0.00, 0.3500, -.15, 0],
    [0.1, .0460, .046, .050, 0.00, 0.1000, 0.25, 0],
    [0.1, .0460, .046, .050, 0.00, -.1000, 0.25, 0],
    [0.1, .0460, .023, .050, -.08, -.6050, 0.00, 0],
    [0.1, .0230, .023, .020, 0.00, -.6060, 0.00, 0],
    [0.1, .0230, .046, .020, 0.06, -.6050, 0.00, 0],
])


def phantom_stack(n_pix: int, n_slices: int = 27, z_extent: float = 0.5) -> list[np.ndarray]:
    """Axial slices of a 3-D Shepp-Logan ellipsoid phantom.

    A synthetic stand-in for a stack of similar images (e.g. MRI slices):
    neighbouring slices share structure and drift apart with distance.
    """
    out = []
    for z in np.linspace(-z_extent, z_extent, n_slices):
        ellipses = []
        for val, a, b, c, x0, y0, z0, phi in _ELLIPSOIDS:
            t = 1.0 - ((z - z0) / c) ** 2
            if t > 0:
                ellipses.append([val, a * np.sqrt(t), b * np.sqrt(t), x0, y0, phi])
        img = rasterize_ellipses(ellipses, n_pix) if ellipses else np.zeros((n_pix, n_pix))
        out.append(np.clip(img, 0.0, 1.0))
    return out


# Noise and priors ============================================================
def add_noise(b_clean, level: float, convention: str = "squared_ratio", seed: int = 0):
    """Gaussian noise scaled to an exact relative level.

    ``squared_ratio``: ``||delta||^2 / ||b||^2 = level``;
    ``ratio``: ``||delta|| / ||b|| = level``.

    Returns
    -------
    b, delta : ndarray
    """
    b_clean = np.asarray(b_clean, dtype=float)
    if not level > 0:
        raise PreconditionError("noise level must be positive")
    nb = np.linalg.norm(b_clean)
    if nb == 0:
        raise PreconditionError("b_clean must be nonzero")
    if convention == "squared_ratio":
        target = np.sqrt(level) * nb
    elif convention == "ratio":
        target = level * nb
    else:
        raise PreconditionError(f"unknown noise convention {convention!r}")
    e = np.random.default_rng(seed).standard_normal(b_clean.shape)
    delta = e * (target / np.linalg.norm(e))
    return b_clean + delta, delta


def prior_from_stack(images, exclude: int | None = None) -> PriorModel:
    """Mean image of a stack with covariance ``diag(mean)``.

    ``exclude`` is the (zero-based) index of an image left out of the mean.
    """
    images = [np.asarray(im, dtype=float) for im in images]
    if len(images) < 2:
        raise PreconditionError("need at least two images")
    shape = images[0].shape
    if any(im.shape != shape for im in images):
        raise PreconditionError("images must have identical dimensions")
    kept = [im for i, im in enumerate(images) if i != exclude]
    if not kept:
        raise PreconditionError("no images left after exclusion")
    mu = np.mean(kept, axis=0).ravel()
    return prior_from_mean_diag(mu, np.clip(mu, 0.0, None))


def build_M_variants(prior: PriorModel):
    """Priors for ``M = [I, mu]``, ``[M_xi, 0]`` and ``[M_xi, mu]``.

    Second moments ``I + mu mu^T``, ``Gamma`` and ``Gamma + mu mu^T``.
    """
    mu = prior.mean
    zero = np.zeros_like(mu)
    if prior.cov_diagonal is not None:
        gamma = prior.cov_diagonal
        return (prior_from_mean_diag(mu, np.ones_like(mu)),
                prior_from_mean_diag(zero, gamma),
                prior_from_mean_diag(mu, gamma))
    gamma = prior.covariance_dense()
    n = mu.size
    return (PriorModel(mu, np.eye(n) + np.outer(mu, mu)),
            PriorModel(zero, gamma),
            PriorModel(mu, gamma + np.outer(mu, mu)))
