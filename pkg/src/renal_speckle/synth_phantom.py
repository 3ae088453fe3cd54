"""Synthetic kidney phantoms with known per-region speckle distributions.

A phantom is an 8-bit image plus label mask.  Each labelled pixel is an
independent draw from its region's distribution, rounded and clamped to
0..255.  The default geometry nests three ellipses: cortex as the outer
ring, medulla inside it, and the central echogenic complex (CEC) at the
centre.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .cohort_stats import PatientRecord, write_cohort_csv
from .envelope_models import Nakagami, make_params, params_to_dict
from .io import write_json, write_png
from .region_analysis import LabeledImage, Region

__all__ = [
    "PhantomSpec",
    "CovariateModel",
    "CohortMember",
    "SyntheticCohort",
    "default_spec",
    "null_spec",
    "ellipse_mask",
    "generate_phantom",
    "generate_cohort",
    "TRUNCATION_LIMIT",
]

TRUNCATION_LIMIT = 1e-4
GEOMETRIES = ("concentric_ellipses", "mask_file")

# fractions of the outer (kidney) ellipse's semi-axes
_MEDULLA_FRACTION = 0.72
_CEC_FRACTION = 0.38


@dataclass(frozen=True, eq=False)
class PhantomSpec:
    cortex: object
    medulla: object
    cec: object
    shape: tuple[int, int] = (256, 256)
    geometry: str = "concentric_ellipses"
    mask: Optional[np.ndarray] = None
    background: Optional[object] = None
    seed: int = 0

    def region_params(self, region) -> object:
        return getattr(self, Region.parse(region).key)

    def with_region(self, region, params) -> "PhantomSpec":
        return replace(self, **{Region.parse(region).key: params})

    def to_dict(self) -> dict:
        return {
            "shape": list(self.shape),
            "geometry": self.geometry,
            "seed": self.seed,
            "regions": {r.key: params_to_dict(self.region_params(r)) for r in Region},
            "background": None if self.background is None else params_to_dict(self.background),
        }


def default_spec(seed: int = 0, shape=(256, 256)) -> PhantomSpec:
    """Distinct Nakagami regions; cortex and medulla close, CEC brighter."""
    return PhantomSpec(
        cortex=Nakagami(0.8, 2500.0),
        medulla=Nakagami(1.0, 3000.0),
        cec=Nakagami(1.3, 6000.0),
        shape=tuple(shape),
        seed=seed,
    )


def null_spec(seed: int = 0, shape=(256, 256), params=None) -> PhantomSpec:
    """All three regions share one distribution."""
    params = params or Nakagami(1.0, 3000.0)
    return PhantomSpec(params, params, params, shape=tuple(shape), seed=seed)


def ellipse_mask(shape) -> np.ndarray:
    """Three nested ellipses labelled 1 (outer ring), 2, 3 (centre)."""
    h, w = shape
    yy, xx = np.mgrid[0:h, 0:w]
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    ry, rx = 0.32 * h, 0.45 * w
    r2 = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2
    mask = np.zeros(shape, dtype=np.uint8)
    mask[r2 <= 1.0] = Region.CORTEX
    mask[r2 <= _MEDULLA_FRACTION**2] = Region.MEDULLA
    mask[r2 <= _CEC_FRACTION**2] = Region.CEC
    return mask


def _mask_for(spec: PhantomSpec) -> np.ndarray:
    if spec.geometry == "concentric_ellipses":
        return ellipse_mask(spec.shape)
    if spec.geometry == "mask_file":
        if spec.mask is None:
            raise ValueError("geometry 'mask_file' needs a mask array")
        mask = np.asarray(spec.mask, dtype=np.uint8)
        if mask.shape != tuple(spec.shape):
            raise ValueError(f"mask shape {mask.shape} does not match phantom shape {spec.shape}")
        return mask
    raise ValueError(f"unknown geometry {spec.geometry!r}; expected one of {GEOMETRIES}")


def _check_truncation(params, label):
    tail = float(params.sf(255.0))
    if tail >= TRUNCATION_LIMIT:
        warnings.warn(
            f"{label}: P(X > 255) = {tail:.2e} for {params!r}; clamping will distort the tail",
            RuntimeWarning,
            stacklevel=3,
        )


def generate_phantom(spec: PhantomSpec, image_id: str = "") -> LabeledImage:
    mask = _mask_for(spec)
    rng = np.random.default_rng(spec.seed)
    pixels = np.zeros(spec.shape, dtype=float)
    for region in Region:
        idx = mask == region.value
        n = int(np.count_nonzero(idx))
        if n == 0:
            raise ValueError(f"{region.key} has zero area under the requested geometry")
        params = spec.region_params(region)
        _check_truncation(params, region.key)
        pixels[idx] = params._sample(rng, n)
    bg = mask == 0
    if spec.background is not None and np.any(bg):
        pixels[bg] = spec.background._sample(rng, int(np.count_nonzero(bg)))
    pixels = np.clip(np.rint(pixels), 0, 255).astype(np.uint8)
    return LabeledImage(pixels, mask, image_id)


# ---------------------------------------------------------------------------
# cohorts


@dataclass(frozen=True)
class CovariateModel:
    """Linear drift of one parameter with a patient covariate.

    The parameter becomes ``base * (1 + slope * covariate)`` before the
    per-patient jitter is applied.
    """

    region: str = "cortex"
    param: str = "omega"
    covariate: str = "age"
    slope: float = 0.001


@dataclass
class CohortMember:
    record: PatientRecord
    spec: PhantomSpec

    @property
    def patient_id(self) -> str:
        return self.record.patient_id

    def image(self) -> LabeledImage:
        return generate_phantom(self.spec, self.patient_id)


@dataclass
class SyntheticCohort:
    members: list
    base_spec: PhantomSpec
    covariate_model: Optional[CovariateModel] = None
    seed: int = 0

    def __len__(self):
        return len(self.members)

    @property
    def records(self) -> list:
        return [m.record for m in self.members]

    def manifest(self) -> dict:
        return {
            "seed": self.seed,
            "n_patients": len(self.members),
            "base_spec": self.base_spec.to_dict(),
            "covariate_model": None if self.covariate_model is None else vars(self.covariate_model),
            "patients": {
                m.patient_id: {r.key: params_to_dict(m.spec.region_params(r)) for r in Region}
                for m in self.members
            },
        }

    def write(self, out_dir) -> dict:
        """Write images/, masks/, cohort.csv and manifest.json under ``out_dir``."""
        out = Path(out_dir)
        (out / "images").mkdir(parents=True, exist_ok=True)
        (out / "masks").mkdir(parents=True, exist_ok=True)
        for m in self.members:
            img = m.image()
            write_png(img.pixels, out / "images" / f"{m.patient_id}.png")
            write_png(img.mask, out / "masks" / f"{m.patient_id}.png")
        write_cohort_csv(self.records, out / "cohort.csv", "renal_speckle cohort v1")
        manifest = self.manifest()
        write_json(manifest, out / "manifest.json")
        return manifest


_SEXES = ("F", "M")
_ETHNICITIES = (("white", 0.55), ("east_asian", 0.2), ("south_asian", 0.15), ("other", 0.1))
_DIAGNOSES = (
    ("glomerulonephritis", 0.28), ("diabetic_nephropathy", 0.22), ("polycystic_kidney", 0.18),
    ("hypertensive_nephrosclerosis", 0.14), ("iga_nephropathy", 0.12), ("fabry_disease", 0.006),
    ("amyloidosis", 0.008), ("obstructive_uropathy", 0.006), ("unknown", 0.02),
)


def _draw_record(rng, patient_id, missing_rate):
    def maybe(v):
        return None if rng.random() < missing_rate else v

    names, probs = zip(*_DIAGNOSES)
    probs = np.asarray(probs) / np.sum(probs)
    eth_names, eth_probs = zip(*_ETHNICITIES)
    return PatientRecord(
        patient_id=patient_id,
        age=maybe(round(float(rng.uniform(20.0, 75.0)), 1)),
        sex=maybe(str(rng.choice(_SEXES))),
        bmi=maybe(round(float(np.clip(rng.normal(27.0, 5.0), 16.0, 50.0)), 1)),
        ethnicity=maybe(str(rng.choice(eth_names, p=eth_probs))),
        primary_diagnosis=maybe(str(rng.choice(names, p=probs))),
        donor_type=maybe(str(rng.choice(("living", "deceased"), p=(0.35, 0.65)))),
        donor_age=maybe(round(float(rng.uniform(18.0, 70.0)), 1)),
    )


def _jittered(params, rng, jitter, drift=None):
    values = params.as_dict()
    for name in values:
        factor = 1.0 + jitter * rng.standard_normal() if jitter else 1.0
        if drift is not None and drift[0] == name:
            factor *= drift[1]
        values[name] = values[name] * max(factor, 0.05)
    if params.family == "Nakagami":
        values["m"] = max(values["m"], 0.5)
    return make_params(params.family, **values)


def generate_cohort(
    n_patients: int,
    base_spec: PhantomSpec | None = None,
    covariate_model: CovariateModel | None = None,
    seed: int = 0,
    jitter: float = 0.05,
    missing_rate: float = 0.02,
) -> SyntheticCohort:
    """Synthetic patients, each with a phantom and a characteristics record.

    Every parameter of every region is scaled by an independent
    ``1 + jitter * N(0, 1)`` factor per patient.  Per-patient seeds are
    spawned from ``seed`` so members are reproducible individually.
    """
    n_patients = int(n_patients)
    if n_patients < 2:
        raise ValueError("a cohort needs at least 2 patients")
    base_spec = base_spec or default_spec()
    if covariate_model is not None:
        region = Region.parse(covariate_model.region)
        names = base_spec.region_params(region).param_names
        if covariate_model.param not in names:
            raise ValueError(f"{covariate_model.param!r} is not a parameter of {region.key}")
    width = len(str(n_patients - 1))
    children = np.random.SeedSequence(seed).spawn(n_patients)
    members = []
    for i, child in enumerate(children):
        rng = np.random.default_rng(child)
        pid = f"P{i:0{width}d}"
        record = _draw_record(rng, pid, missing_rate)
        spec = base_spec
        for region in Region:
            drift = None
            if covariate_model is not None and Region.parse(covariate_model.region) == region:
                cov = getattr(record, covariate_model.covariate)
                if cov is not None:
                    drift = (covariate_model.param, 1.0 + covariate_model.slope * cov)
            spec = spec.with_region(region, _jittered(base_spec.region_params(region), rng, jitter, drift))
        spec = replace(spec, seed=int(child.generate_state(1)[0]))
        members.append(CohortMember(record, spec))
    return SyntheticCohort(members, base_spec, covariate_model, seed)
