"""Plug-in image denoisers.

Every denoiser maps a flat image vector of length ``width * height`` to
another one and uses reflection padding (``scipy.ndimage`` mode
``"reflect"``) at the borders, so constant images are fixed points of the
smoothing kinds.  Linear kinds (identity, blurs, blend) carry an exact
``beta_analytic``, the Lipschitz constant of ``D - I``.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage

__all__ = [
    "Denoiser",
    "Identity",
    "GaussianBlur",
    "BoxBlur",
    "Blend",
    "Median",
    "NLMeans",
    "ScaledDenoiser",
    "estimate_beta",
    "make_denoiser",
]


class Denoiser:
    """Base class: subclasses implement ``_apply(image_2d)``."""

    kind = "base"
    linear = False
    beta_analytic = None

    def __init__(self, width, height=None):
        self.width = int(width)
        self.height = int(width if height is None else height)

    @property
    def size(self):
        return self.width * self.height

    def __call__(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.size,):
            raise ValueError(f"expected image vector of length {self.size}, got {x.shape}")
        if not np.all(np.isfinite(x)):
            raise FloatingPointError("non-finite input to denoiser")
        return self._apply(x.reshape(self.height, self.width)).ravel()

    def _apply(self, img):
        raise NotImplementedError

    def params(self):
        return {}

    def __repr__(self):
        args = ", ".join(f"{k}={v!r}" for k, v in self.params().items())
        return f"{type(self).__name__}({args})"


class Identity(Denoiser):
    kind = "identity"
    linear = True
    beta_analytic = 0.0

    def __call__(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.size,):
            raise ValueError(f"expected image vector of length {self.size}, got {x.shape}")
        return x.copy()


def _filter_spectrum_1d(filt, n):
    # eigenvalues of a symmetric 1-D filter with reflect borders; the
    # operator matrix is symmetric so eigvalsh applies
    M = filt(np.eye(n))
    return np.linalg.eigvalsh(0.5 * (M + M.T))


class _SeparableBlur(Denoiser):
    linear = True

    def _filter1d(self, arr):
        raise NotImplementedError

    def _apply(self, img):
        return self._filter1d(self._filter1d(img, axis=0), axis=1)

    def spectrum_bounds(self):
        """Smallest and largest eigenvalue of the (symmetric) blur operator."""
        ev_r = _filter_spectrum_1d(lambda m: self._filter1d(m, axis=0), self.height)
        ev_c = _filter_spectrum_1d(lambda m: self._filter1d(m, axis=0), self.width)
        prods = np.outer(ev_r, ev_c)
        return float(prods.min()), float(prods.max())

    @property
    def beta_analytic(self):
        lo, hi = self.spectrum_bounds()
        return max(abs(lo - 1.0), abs(hi - 1.0))


class GaussianBlur(_SeparableBlur):
    kind = "gaussian"

    def __init__(self, width, height=None, sigma=1.0, truncate=4.0):
        super().__init__(width, height)
        self.sigma = float(sigma)
        self.truncate = float(truncate)

    def _filter1d(self, arr, axis):
        return ndimage.gaussian_filter1d(arr, self.sigma, axis=axis, mode="reflect",
                                         truncate=self.truncate)

    def params(self):
        return {"sigma": self.sigma}


class BoxBlur(_SeparableBlur):
    kind = "box"

    def __init__(self, width, height=None, size=3):
        super().__init__(width, height)
        self.box = int(size)

    def _filter1d(self, arr, axis):
        return ndimage.uniform_filter1d(arr, self.box, axis=axis, mode="reflect")

    def params(self):
        return {"size": self.box}


class Blend(Denoiser):
    """``D(x) = (1 - theta) x + theta G(x)`` for a linear blur ``G``.

    ``beta_analytic`` is exact: ``theta * max |lambda(G) - 1|``.
    """

    kind = "blend"
    linear = True

    def __init__(self, blur, theta):
        super().__init__(blur.width, blur.height)
        if not 0.0 <= theta <= 1.0:
            raise ValueError("theta must lie in [0, 1]")
        self.blur = blur
        self.theta = float(theta)
        self.beta_analytic = self.theta * blur.beta_analytic

    @classmethod
    def with_beta(cls, blur, beta):
        """Blend whose residual Lipschitz constant is exactly ``beta``."""
        theta = beta / blur.beta_analytic
        return cls(blur, theta)

    def _apply(self, img):
        return (1.0 - self.theta) * img + self.theta * self.blur._apply(img)

    def params(self):
        return {"theta": self.theta, "blur": self.blur}


class Median(Denoiser):
    kind = "median"

    def __init__(self, width, height=None, radius=1):
        super().__init__(width, height)
        self.radius = int(radius)

    def _apply(self, img):
        return ndimage.median_filter(img, size=2 * self.radius + 1, mode="reflect")

    def params(self):
        return {"radius": self.radius}


class NLMeans(Denoiser):
    """Pixelwise non-local means.

    Each output pixel is the average of the pixels in a
    ``(2*window_radius+1)^2`` search window, weighted by
    ``exp(-d^2 / h^2)`` with ``d^2`` the mean squared difference between
    the ``(2*patch_radius+1)^2`` patches around the two pixels.
    """

    kind = "nlm"

    def __init__(self, width, height=None, patch_radius=1, window_radius=5, h=0.1):
        super().__init__(width, height)
        self.patch_radius = int(patch_radius)
        self.window_radius = int(window_radius)
        self.h = float(h)
        if self.h <= 0:
            raise ValueError("h must be positive")

    def _apply(self, img):
        w, p = self.window_radius, self.patch_radius
        H, W = img.shape
        padded = np.pad(img, w, mode="symmetric")
        inv_h2 = 1.0 / (self.h * self.h)
        num = np.zeros_like(img)
        den = np.zeros_like(img)
        for dr in range(-w, w + 1):
            for dc in range(-w, w + 1):
                shifted = padded[w + dr:w + dr + H, w + dc:w + dc + W]
                dist = ndimage.uniform_filter((img - shifted) ** 2, 2 * p + 1, mode="reflect")
                wt = np.exp(-dist * inv_h2)
                num += wt * shifted
                den += wt
        return num / den

    def params(self):
        return {"patch_radius": self.patch_radius, "window_radius": self.window_radius,
                "h": self.h}


class ScaledDenoiser(Denoiser):
    """``D_gamma(x) = D(gamma x) / gamma``."""

    def __init__(self, base, gamma):
        if not gamma > 0:
            raise ValueError("gamma must be positive")
        super().__init__(base.width, base.height)
        self.base = base
        self.gamma = float(gamma)
        self.kind = base.kind
        self.linear = base.linear

    @property
    def beta_analytic(self):
        # (1/g) D(g .) - I = (1/g)(D - I)(g .): same Lipschitz constant
        return self.base.beta_analytic

    def __call__(self, x):
        if self.gamma == 1.0 or isinstance(self.base, Identity):
            # exact: (1/g)(g x) = x, without the rounding of the round trip
            return self.base(x)
        x = np.asarray(x, dtype=np.float64)
        return self.base(self.gamma * x) / self.gamma

    def params(self):
        return {"base": self.base, "gamma": self.gamma}


def make_denoiser(kind, width, height=None, gamma=1.0, **params):
    """Build a denoiser from a kind name and keyword parameters."""
    if kind == "identity":
        base = Identity(width, height)
    elif kind == "gaussian":
        base = GaussianBlur(width, height, sigma=params.get("sigma", 1.0))
    elif kind == "box":
        base = BoxBlur(width, height, size=params.get("size", 3))
    elif kind == "blend":
        blur = GaussianBlur(width, height, sigma=params.get("sigma", 1.0))
        if "beta" in params:
            base = Blend.with_beta(blur, params["beta"])
        else:
            base = Blend(blur, params.get("theta", 0.5))
    elif kind == "median":
        base = Median(width, height, radius=params.get("radius", 1))
    elif kind == "nlm":
        base = NLMeans(width, height, patch_radius=params.get("patch_radius", 1),
                       window_radius=params.get("window_radius", 5), h=params.get("h", 0.1))
    else:
        raise ValueError(f"unknown denoiser kind {kind!r}")
    return base if gamma == 1.0 else ScaledDenoiser(base, gamma)


def estimate_beta(denoiser, probe_images, rng, num_pairs=10,
                  magnitudes=(1e-3, 1e-2, 1e-1), power_steps=20):
    """Sampled lower bound on the Lipschitz constant of ``D - I``.

    For each pair a probe ``x`` is drawn and a perturbation ``delta`` of a
    given magnitude (relative to the probe's dynamic range) is refined by a
    few finite-difference power steps on the residual map ``R = D - I``.
    The largest ratio ``||R(x) - R(x + delta)|| / ||delta||`` seen is
    returned.
    """
    if num_pairs < 1:
        raise ValueError("num_pairs must be >= 1")
    probes = [np.asarray(p, dtype=np.float64).ravel() for p in probe_images]
    best = 0.0
    for i in range(num_pairs):
        x = probes[int(rng.integers(len(probes)))]
        rng_x = float(np.ptp(x)) or 1.0
        mag = magnitudes[i % len(magnitudes)] * rng_x
        rx = denoiser(x) - x
        delta = rng.standard_normal(x.size)
        for _ in range(power_steps + 1):
            delta *= mag * np.sqrt(x.size) / np.linalg.norm(delta)
            y = x + delta
            diff = (denoiser(y) - y) - rx
            nd = np.linalg.norm(diff)
            best = max(best, nd / np.linalg.norm(delta))
            if nd == 0.0:
                break
            delta = diff
    return best
