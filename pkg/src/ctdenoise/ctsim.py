"""Synthetic paired-dose CT data factory.

Parallel-beam, monochromatic simulation: random ellipse phantoms in HU,
line integrals by linear-interpolated ray marching, Poisson photon noise
inserted in the projection domain, and filtered back projection. Dose
pairs reuse one clean sinogram and one noise stream so that equal dose
fractions reproduce identical images.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .tctio import read_tensor, write_tensor

HU = "HU"
MU_PER_MM = "MU_PER_MM"

MU_WATER_60KEV = 0.0206  # mm^-1, monochromatic 60 keV
AIR_HU = -1000.0


class UnitError(ValueError):
    """An image carried the wrong unit tag for the requested operation."""


@dataclass
class CtImage:
    """2-d scalar field tagged with its physical unit."""

    grid: np.ndarray
    unit: str
    pixel_spacing_mm: float = 1.0

    def __post_init__(self):
        self.grid = np.asarray(self.grid)
        if self.grid.ndim != 2:
            raise ValueError(f"CtImage grid must be 2-d, got shape {self.grid.shape}")
        if self.unit not in (HU, MU_PER_MM):
            raise UnitError(f"unknown unit tag {self.unit!r}")


@dataclass
class ScanGeometry:
    """Parallel-beam layout: uniform view angles over [0, pi)."""

    n_views: int = 360
    n_detectors: int = 91
    detector_spacing_mm: float = 1.0
    image_size: int = 64
    pixel_spacing_mm: float = 1.0

    @property
    def angles(self):
        return np.linspace(0.0, np.pi, self.n_views, endpoint=False)

    @property
    def detector_positions(self):
        offsets = np.arange(self.n_detectors) - (self.n_detectors - 1) / 2.0
        return offsets * self.detector_spacing_mm


def default_geometry(image_size, pixel_spacing_mm=1.0, n_views=360):
    """Detector row covering the image diagonal, odd count for a center ray."""
    n_det = int(math.ceil(image_size * math.sqrt(2.0))) + 1
    if n_det % 2 == 0:
        n_det += 1
    return ScanGeometry(
        n_views=n_views,
        n_detectors=n_det,
        detector_spacing_mm=pixel_spacing_mm,
        image_size=image_size,
        pixel_spacing_mm=pixel_spacing_mm,
    )


@dataclass
class Sinogram:
    """views x detectors line integrals (mu times length, dimensionless)."""

    values: np.ndarray
    geometry: ScanGeometry


@dataclass
class DoseConfig:
    """Incident photons per ray and the dose fraction applied to them."""

    i0: float = 1e5
    dose_fraction: float = 0.25
    seed: object = 0

    def __post_init__(self):
        if not 0.0 < self.dose_fraction <= 1.0:
            raise ValueError(f"dose_fraction must lie in (0,1], got {self.dose_fraction}")
        if self.i0 * self.dose_fraction < 1.0:
            raise ValueError(
                f"i0 * dose_fraction must be >= 1 photon, got {self.i0 * self.dose_fraction}"
            )


# -- phantoms ------------------------------------------------------------


def _ellipse_mask(yy, xx, cy, cx, ry, rx, angle):
    ca, sa = np.cos(angle), np.sin(angle)
    u = (xx - cx) * ca + (yy - cy) * sa
    v = -(xx - cx) * sa + (yy - cy) * ca
    return (u / rx) ** 2 + (v / ry) ** 2 <= 1.0


def make_phantom(seed, size=64, n_ellipses=6, pixel_spacing_mm=1.0):
    """Random abdomen-like phantom: a near-water body disk holding
    ``n_ellipses`` random ellipses in [-900, 800] HU on a -1000 HU
    background. Deterministic per seed."""
    if size < 32:
        raise ValueError(f"phantom size must be >= 32, got {size}")
    if n_ellipses < 0:
        raise ValueError(f"n_ellipses must be >= 0, got {n_ellipses}")
    rng = np.random.default_rng(seed)
    coords = (np.arange(size) - (size - 1) / 2.0) / (size / 2.0)
    yy, xx = np.meshgrid(coords, coords, indexing="ij")

    grid = np.full((size, size), AIR_HU, dtype=np.float64)
    body_r = rng.uniform(0.72, 0.85)
    body_cy, body_cx = rng.uniform(-0.04, 0.04, size=2)
    body_hu = rng.uniform(-30.0, 30.0)
    body = _ellipse_mask(yy, xx, body_cy, body_cx, body_r, body_r, 0.0)
    grid[body] = body_hu

    for _ in range(n_ellipses):
        rad = rng.uniform(0.0, 0.55) * body_r
        ang = rng.uniform(0.0, 2.0 * np.pi)
        cy = body_cy + rad * np.sin(ang)
        cx = body_cx + rad * np.cos(ang)
        ry, rx = rng.uniform(0.05, 0.30, size=2) * body_r
        tilt = rng.uniform(0.0, np.pi)
        hu = rng.uniform(-900.0, 800.0)
        inner = _ellipse_mask(yy, xx, cy, cx, ry, rx, tilt) & body
        grid[inner] = hu

    return CtImage(grid.astype(np.float32), HU, pixel_spacing_mm)


# -- unit conversions ----------------------------------------------------


def hu_to_mu(img, mu_water=MU_WATER_60KEV):
    if img.unit != HU:
        raise UnitError(f"hu_to_mu expects a HU image, got unit {img.unit!r}")
    mu = mu_water * (1.0 + img.grid.astype(np.float64) / 1000.0)
    return CtImage(mu.astype(np.float32), MU_PER_MM, img.pixel_spacing_mm)


def mu_to_hu(img, mu_water=MU_WATER_60KEV):
    if img.unit != MU_PER_MM:
        raise UnitError(f"mu_to_hu expects an attenuation image, got unit {img.unit!r}")
    hu = 1000.0 * (img.grid.astype(np.float64) / mu_water - 1.0)
    return CtImage(hu.astype(np.float32), HU, img.pixel_spacing_mm)


# -- projection ----------------------------------------------------------


def _bilinear_sample(grid, xi, yi):
    """Sample fractional pixel coordinates, zero outside the grid."""
    H, W = grid.shape
    x0 = np.floor(xi)
    y0 = np.floor(yi)
    fx = xi - x0
    fy = yi - y0
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)
    out = np.zeros(xi.shape, dtype=np.float64)
    for dy, dx, w in (
        (0, 0, (1 - fy) * (1 - fx)),
        (0, 1, (1 - fy) * fx),
        (1, 0, fy * (1 - fx)),
        (1, 1, fy * fx),
    ):
        yk = y0 + dy
        xk = x0 + dx
        inside = (yk >= 0) & (yk < H) & (xk >= 0) & (xk < W)
        vals = grid[np.clip(yk, 0, H - 1), np.clip(xk, 0, W - 1)]
        out += np.where(inside, vals, 0.0) * w
    return out


def forward_project(img, geom):
    """Line integrals of an attenuation image: Joseph-style ray marching
    with bilinear interpolation at half-pixel steps. Output units mu*mm."""
    if img.unit != MU_PER_MM:
        raise UnitError(f"forward_project expects attenuation input, got {img.unit!r}")
    H, W = img.grid.shape
    if H != W:
        raise ValueError(f"forward_project expects a square image, got {H}x{W}")
    ps = img.pixel_spacing_mm
    grid = img.grid.astype(np.float64)

    step = 0.5 * ps
    half_len = 0.5 * math.sqrt(2.0) * H * ps
    s = np.arange(-half_len, half_len + step, step)
    t = geom.detector_positions

    center = (H - 1) / 2.0
    values = np.empty((geom.n_views, geom.n_detectors), dtype=np.float64)
    for vi, theta in enumerate(geom.angles):
        ct, st = math.cos(theta), math.sin(theta)
        # ray through t*u marching along v = (-sin, cos)
        x = t[:, None] * ct - s[None, :] * st
        y = t[:, None] * st + s[None, :] * ct
        xi = x / ps + center
        yi = y / ps + center
        values[vi] = _bilinear_sample(grid, xi, yi).sum(axis=1) * step
    return Sinogram(values=values, geometry=geom)


# -- dose noise ----------------------------------------------------------


def insert_poisson_noise(sino, dose):
    """Photon-count noise: N ~ Poisson(I0*fraction*exp(-p)), then back to
    line integrals with zero counts clamped to one photon."""
    p = np.asarray(sino.values, dtype=np.float64)
    if not np.isfinite(p).all():
        raise ValueError("sinogram contains non-finite values")
    if p.min() < -1e-9:
        raise ValueError(f"sinogram has negative line integrals (min {p.min():g})")
    flux = dose.i0 * dose.dose_fraction
    if flux < 1.0:
        raise ValueError(f"i0 * dose_fraction must be >= 1, got {flux}")
    rng = np.random.default_rng(dose.seed)
    counts = rng.poisson(flux * np.exp(-p)).astype(np.float64)
    counts = np.maximum(counts, 1.0)
    noisy = -np.log(counts / flux)
    return Sinogram(values=noisy, geometry=sino.geometry)


# -- reconstruction ------------------------------------------------------


def _ramp_kernel(n_pad, spacing):
    """Band-limited discrete ramp filter (spatial form, FFT layout)."""
    m = np.fft.fftfreq(n_pad, d=1.0 / n_pad)  # 0, 1, ..., -1 integer lags
    h = np.zeros(n_pad, dtype=np.float64)
    h[0] = 1.0 / (4.0 * spacing**2)
    odd = (np.abs(m) % 2) == 1
    h[odd] = -1.0 / (np.pi * m[odd] * spacing) ** 2
    return h


def fbp(sino, geom, window="ramlak"):
    """Filtered back projection: per-view ramp filtering in the frequency
    domain, linear-interpolation backprojection, scaled by pi/n_views."""
    values = np.asarray(sino.values, dtype=np.float64)
    if values.shape != (geom.n_views, geom.n_detectors):
        raise ValueError(
            f"sinogram shape {values.shape} does not match geometry "
            f"({geom.n_views} views x {geom.n_detectors} detectors)"
        )
    if window not in ("ramlak", "hann"):
        raise ValueError(f"unknown filter window {window!r}")

    d = geom.detector_spacing_mm
    n_det = geom.n_detectors
    n_pad = 1 << int(math.ceil(math.log2(max(64, 2 * n_det))))
    ramp = np.fft.fft(_ramp_kernel(n_pad, d)).real
    if window == "hann":
        frac = np.abs(np.fft.fftfreq(n_pad)) * 2.0  # 0 at DC, 1 at Nyquist
        ramp = ramp * (0.5 * (1.0 + np.cos(np.pi * frac)))

    spectra = np.fft.fft(values, n=n_pad, axis=1)
    filtered = np.fft.ifft(spectra * ramp[None, :], axis=1).real[:, :n_det] * d

    size = geom.image_size
    ps = geom.pixel_spacing_mm
    coords = (np.arange(size) - (size - 1) / 2.0) * ps
    yy, xx = np.meshgrid(coords, coords, indexing="ij")
    det_index = np.arange(n_det, dtype=np.float64)
    center = (n_det - 1) / 2.0

    recon = np.zeros((size, size), dtype=np.float64)
    for vi, theta in enumerate(geom.angles):
        t = xx * math.cos(theta) + yy * math.sin(theta)
        idx = t / d + center
        recon += np.interp(idx.ravel(), det_index, filtered[vi], left=0.0, right=0.0).reshape(
            size, size
        )
    recon *= np.pi / geom.n_views
    return CtImage(recon.astype(np.float32), MU_PER_MM, ps)


# -- paired-dose dataset -------------------------------------------------


@dataclass
class TrainingPair:
    """Aligned low-dose / normal-dose HU patch pair."""

    ld: CtImage
    nd: CtImage

    def __post_init__(self):
        if self.ld.grid.shape != self.nd.grid.shape:
            raise ValueError(
                f"pair shapes disagree: {self.ld.grid.shape} vs {self.nd.grid.shape}"
            )
        if not (np.isfinite(self.ld.grid).all() and np.isfinite(self.nd.grid).all()):
            raise ValueError("training pair contains non-finite values")


def _clamp_hu(img):
    return CtImage(np.maximum(img.grid, AIR_HU).astype(np.float32), HU, img.pixel_spacing_mm)


def simulate_pair(seed, pair_index, size, dose, geom=None, n_ellipses=6,
                  mu_water=MU_WATER_60KEV, window="ramlak"):
    """One (LDCT, NDCT) pair. The per-pair RNG streams depend only on
    (seed, pair_index), so serial and parallel generation agree."""
    geom = geom or default_geometry(size)
    phantom = make_phantom([seed, pair_index, 0], size, n_ellipses,
                           geom.pixel_spacing_mm)
    sino = forward_project(hu_to_mu(phantom, mu_water), geom)
    noise_seed = [seed, pair_index, 1]
    nd_sino = insert_poisson_noise(sino, replace(dose, dose_fraction=1.0, seed=noise_seed))
    ld_sino = insert_poisson_noise(sino, replace(dose, seed=noise_seed))
    nd = _clamp_hu(mu_to_hu(fbp(nd_sino, geom, window), mu_water))
    ld = _clamp_hu(mu_to_hu(fbp(ld_sino, geom, window), mu_water))
    return TrainingPair(ld=ld, nd=nd), phantom


def make_dataset(n_pairs, size, dose, seed, geom=None, n_ellipses=6,
                 mu_water=MU_WATER_60KEV, workers=1):
    """Generate aligned LDCT/NDCT pairs; optionally fan out across pairs."""
    if n_pairs < 1:
        raise ValueError(f"n_pairs must be >= 1, got {n_pairs}")
    geom = geom or default_geometry(size)

    def build(i):
        pair, _ = simulate_pair(seed, i, size, dose, geom, n_ellipses, mu_water)
        return pair

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(build, range(n_pairs)))
    return [build(i) for i in range(n_pairs)]


# -- dataset directory layout ---------------------------------------------


def save_dataset(pairs, out_dir, manifest):
    """Write pairs/<idx>/{ld,nd}.tct plus a flat-text manifest."""
    out = Path(out_dir)
    (out / "pairs").mkdir(parents=True, exist_ok=True)
    for i, pair in enumerate(pairs):
        pdir = out / "pairs" / str(i)
        pdir.mkdir(exist_ok=True)
        write_tensor(pdir / "ld.tct", pair.ld.grid.astype(np.float32))
        write_tensor(pdir / "nd.tct", pair.nd.grid.astype(np.float32))
    lines = [f"{k} = {v}" for k, v in manifest.items()]
    (out / "manifest").write_text("\n".join(lines) + "\n")


def load_manifest(path):
    entries = {}
    for raw in Path(path).read_text().splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        entries[key.strip()] = value.strip()
    return entries


def load_dataset(data_dir):
    """Read back a dataset directory; returns (pairs, manifest dict)."""
    root = Path(data_dir)
    if not (root / "manifest").exists():
        raise FileNotFoundError(f"no dataset manifest under {root}")
    manifest = load_manifest(root / "manifest")
    spacing = float(manifest.get("geom.pixel_spacing_mm", 1.0))
    pairs = []
    pair_dirs = sorted((root / "pairs").iterdir(), key=lambda p: int(p.name))
    for pdir in pair_dirs:
        ld = CtImage(read_tensor(pdir / "ld.tct"), HU, spacing)
        nd = CtImage(read_tensor(pdir / "nd.tct"), HU, spacing)
        pairs.append(TrainingPair(ld=ld, nd=nd))
    return pairs, manifest
