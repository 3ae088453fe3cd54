"""Region extraction, histograms, goodness of fit and KL divergences.

Masks use the labels 0 (background), 1 (cortex), 2 (medulla) and
3 (central echogenic complex).
"""

from __future__ import annotations

import enum
import itertools
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .envelope_models import FAMILY_ORDER, IntensityGrid, pdf
from .estimators import FitResult, fit_all, fit_from_dict

__all__ = [
    "Region",
    "REGIONS",
    "EmptyRegionError",
    "LabeledImage",
    "RegionSamples",
    "DivergenceMatrix",
    "RegionResult",
    "RegionGap",
    "RegionReport",
    "select_frame",
    "extract_region",
    "empirical_histogram",
    "model_masses",
    "goodness_of_fit_sse",
    "kl_divergence",
    "histogram_kl",
    "divergence_matrix",
    "analyze_image",
    "SUMMARY_COLUMNS",
]

log = logging.getLogger(__name__)

KL_FLOOR = 1e-12


class Region(enum.IntEnum):
    CORTEX = 1
    MEDULLA = 2
    CEC = 3

    @property
    def key(self) -> str:
        return self.name.lower()

    @classmethod
    def parse(cls, value) -> "Region":
        if isinstance(value, cls):
            return value
        if isinstance(value, str):
            try:
                return cls[value.upper()]
            except KeyError:
                raise ValueError(f"unknown region {value!r}") from None
        return cls(int(value))


REGIONS: tuple[Region, ...] = (Region.CORTEX, Region.MEDULLA, Region.CEC)


class EmptyRegionError(ValueError):
    """The requested label does not occur in the mask."""


@dataclass(frozen=True, eq=False)
class LabeledImage:
    pixels: np.ndarray
    mask: np.ndarray
    image_id: str = ""

    def __post_init__(self):
        pixels = np.asarray(self.pixels)
        mask = np.asarray(self.mask)
        if pixels.ndim != 2:
            raise ValueError("pixels must be a 2-D array")
        if pixels.shape != mask.shape:
            raise ValueError(f"mask shape {mask.shape} does not match image shape {pixels.shape}")
        if pixels.size and (pixels.min() < 0 or pixels.max() > 255):
            raise ValueError("pixel intensities must lie in 0..255")
        if not np.all(np.isin(mask, (0, 1, 2, 3))):
            raise ValueError("mask labels must be in {0, 1, 2, 3}")
        object.__setattr__(self, "pixels", pixels)
        object.__setattr__(self, "mask", mask.astype(np.uint8, copy=False))

    @property
    def area(self) -> int:
        return int(np.count_nonzero(self.mask))


@dataclass(frozen=True, eq=False)
class RegionSamples:
    region: Region
    values: np.ndarray
    n_zero_dropped: int = 0

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)

    def __len__(self):
        return self.values.size


def select_frame(frames) -> int:
    """Index of the frame with the largest labelled (non-background) area.

    Ties go to the earliest frame.
    """
    frames = list(frames)
    if not frames:
        raise ValueError("no frames to select from")
    areas = [f.area for f in frames]
    best = int(np.argmax(areas))
    if areas[best] == 0:
        warnings.warn("all frames have empty masks; selecting frame 0", RuntimeWarning, stacklevel=2)
    return best


def extract_region(img: LabeledImage, label) -> RegionSamples:
    region = Region.parse(label)
    values = img.pixels[img.mask == region.value].astype(float)
    if values.size == 0:
        raise EmptyRegionError(f"{region.key} is absent from the mask of {img.image_id or 'image'}")
    keep = values > 0
    return RegionSamples(region, values[keep], int(values.size - np.count_nonzero(keep)))


def empirical_histogram(samples, grid: IntensityGrid | None = None) -> np.ndarray:
    """Normalised bin masses of ``samples`` on ``grid``.

    Samples outside the grid are ignored; the masses of those inside sum
    to one.
    """
    grid = grid or IntensityGrid()
    x = np.asarray(samples, dtype=float).ravel()
    if x.size == 0:
        raise ValueError("cannot build a histogram from no samples")
    counts, _ = np.histogram(x, bins=grid.edges)
    total = counts.sum()
    if total == 0:
        raise ValueError("no samples fall inside the intensity grid")
    return counts / total


def model_masses(params, grid: IntensityGrid | None = None) -> np.ndarray:
    """Density at bin centers times bin width, renormalised over the grid."""
    grid = grid or IntensityGrid()
    mass = np.asarray(pdf(params, grid.centers), dtype=float) * grid.width
    mass = np.where(np.isfinite(mass), mass, 0.0)
    total = mass.sum()
    if not total > 0:
        raise ValueError(f"{params!r} puts no mass on the intensity grid")
    return mass / total


def goodness_of_fit_sse(hist, params, grid: IntensityGrid | None = None) -> float:
    hist = np.asarray(hist, dtype=float)
    return float(np.sum((hist - model_masses(params, grid)) ** 2))


def _floored(mass):
    mass = np.maximum(mass / mass.sum(), KL_FLOOR)
    return mass / mass.sum()


def histogram_kl(p_mass, q_mass) -> float:
    """Discrete D_KL(P || Q) between two mass vectors on a shared grid."""
    p = _floored(np.asarray(p_mass, dtype=float))
    q = _floored(np.asarray(q_mass, dtype=float))
    return max(float(np.sum(p * np.log(p / q))), 0.0)


def kl_divergence(p, q, grid: IntensityGrid | None = None) -> float:
    """D_KL(P || Q) between two fitted distributions discretised on ``grid``."""
    return histogram_kl(model_masses(p, grid), model_masses(q, grid))


@dataclass
class DivergenceMatrix:
    family: str
    entries: dict = field(default_factory=dict)

    def __getitem__(self, pair) -> float:
        a, b = (Region.parse(r) for r in pair)
        if a == b:
            return 0.0
        return self.entries[(a, b)]

    def pairs(self):
        return sorted(self.entries)


def divergence_matrix(family: str, dists: dict, grid: IntensityGrid | None = None) -> DivergenceMatrix:
    """All directed KL values between region distributions of one family.

    ``dists`` maps regions to either fitted parameters or, for histogram
    mode, normalised mass vectors.
    """
    entries = {}
    for a, b in itertools.permutations(sorted(dists), 2):
        pa, pb = dists[a], dists[b]
        if isinstance(pa, np.ndarray):
            entries[(a, b)] = histogram_kl(pa, pb)
        else:
            entries[(a, b)] = kl_divergence(pa, pb, grid)
    return DivergenceMatrix(family, entries)


@dataclass
class RegionResult:
    region: Region
    n_values: int
    n_zero_dropped: int
    fits: list
    sse: dict

    def fit(self, family):
        for f in self.fits:
            if f.family == family:
                return f
        raise KeyError(family)


@dataclass(frozen=True)
class RegionGap:
    region: Region
    reason: str


SUMMARY_COLUMNS = (
    "image_id", "region", "family", "status",
    "sigma", "m", "omega", "shape", "scale", "nu", "s", "c", "k", "lambda",
    "a", "x_min", "alpha_l", "lambda_l",
    "log_likelihood", "sse", "converged", "n_used",
)


@dataclass
class RegionReport:
    image_id: str
    regions: dict
    gaps: list
    divergences: dict
    grid: IntensityGrid = field(default_factory=IntensityGrid)
    kl_source: str = "model"

    def to_dict(self) -> dict:
        regions = {}
        for region, res in sorted(self.regions.items()):
            fits = []
            for f in res.fits:
                d = f.to_dict()
                if f.ok:
                    d["sse"] = res.sse.get(f.family)
                fits.append(d)
            regions[region.key] = {
                "n_values": res.n_values,
                "n_zero_dropped": res.n_zero_dropped,
                "fits": fits,
            }
        divergences = {
            fam: [
                {"p": a.key, "q": b.key, "kl": dm.entries[(a, b)]}
                for a, b in dm.pairs()
            ]
            for fam, dm in self.divergences.items()
        }
        return {
            "image_id": self.image_id,
            "grid": {"n_bins": len(self.grid), "low": float(self.grid.edges[0]),
                     "high": float(self.grid.edges[-1])},
            "kl_source": self.kl_source,
            "regions": regions,
            "gaps": [{"region": g.region.key, "reason": g.reason} for g in self.gaps],
            "divergences": divergences,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RegionReport":
        g = d["grid"]
        grid = IntensityGrid.uniform(g["n_bins"], g["low"], g["high"])
        regions = {}
        for key, r in d["regions"].items():
            region = Region.parse(key)
            fits = [fit_from_dict(f) for f in r["fits"]]
            sse = {f["family"]: f["sse"] for f in r["fits"] if f.get("status") == "ok"}
            regions[region] = RegionResult(region, r["n_values"], r["n_zero_dropped"], fits, sse)
        gaps = [RegionGap(Region.parse(x["region"]), x["reason"]) for x in d["gaps"]]
        divergences = {
            fam: DivergenceMatrix(
                fam, {(Region.parse(e["p"]), Region.parse(e["q"])): e["kl"] for e in entries}
            )
            for fam, entries in d["divergences"].items()
        }
        return cls(d["image_id"], regions, gaps, divergences, grid, d.get("kl_source", "model"))

    def summary_rows(self) -> list[dict]:
        """One row per region and family, keyed by :data:`SUMMARY_COLUMNS`."""
        rows = []
        for region, res in sorted(self.regions.items()):
            for f in res.fits:
                row = dict.fromkeys(SUMMARY_COLUMNS, "")
                row.update(image_id=self.image_id, region=region.key, family=f.family)
                if f.ok:
                    row.update(f.params.as_dict())
                    row.update(
                        status="ok",
                        log_likelihood=f.log_likelihood,
                        sse=res.sse.get(f.family, ""),
                        converged=f.converged,
                        n_used=f.n_used,
                    )
                else:
                    row.update(status=f"failed:{f.reason}", converged=False, n_used=f.n_used)
                rows.append(row)
        return rows


def analyze_image(
    img: LabeledImage,
    families=FAMILY_ORDER,
    divergence_families=None,
    grid: IntensityGrid | None = None,
    kl_source: str = "model",
) -> RegionReport:
    """Fit every family in every region and compare regions by KL divergence.

    ``divergence_families`` defaults to all fitted families.  With
    ``kl_source="histogram"`` a single matrix, keyed ``"histogram"``, is
    computed between the regions' empirical histograms instead.
    """
    if kl_source not in ("model", "histogram"):
        raise ValueError("kl_source must be 'model' or 'histogram'")
    grid = grid or IntensityGrid()
    families = [f for f in FAMILY_ORDER if f in set(families)]
    if divergence_families is None:
        divergence_families = families
    regions, gaps, hists = {}, [], {}
    for region in REGIONS:
        try:
            samples = extract_region(img, region)
        except EmptyRegionError as exc:
            log.info("%s", exc)
            gaps.append(RegionGap(region, "absent"))
            continue
        fits = fit_all(samples, families)
        sse = {}
        if len(samples):
            hist = empirical_histogram(samples, grid)
            hists[region] = hist
            for f in fits:
                if f.ok:
                    sse[f.family] = goodness_of_fit_sse(hist, f.params, grid)
        regions[region] = RegionResult(region, len(samples), samples.n_zero_dropped, fits, sse)

    divergences = {}
    if kl_source == "histogram":
        if len(hists) >= 2:
            divergences["histogram"] = divergence_matrix("histogram", hists, grid)
        return RegionReport(img.image_id, regions, gaps, divergences, grid, kl_source)
    for family in families:
        if family not in divergence_families:
            continue
        dists = {}
        for region, res in regions.items():
            f = res.fit(family)
            if isinstance(f, FitResult):
                dists[region] = f.params
        if len(dists) >= 2:
            divergences[family] = divergence_matrix(family, dists, grid)
    return RegionReport(img.image_id, regions, gaps, divergences, grid, kl_source)
