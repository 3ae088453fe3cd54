import json

import numpy as np
import pytest

from renal_speckle.cohort_stats import read_cohort_csv
from renal_speckle.envelope_models import Gamma, Nakagami, Rayleigh, Rician
from renal_speckle.estimators import fit_family
from renal_speckle.io import read_gray
from renal_speckle.region_analysis import Region, analyze_image, extract_region
from renal_speckle.synth_phantom import (
    CovariateModel,
    PhantomSpec,
    default_spec,
    ellipse_mask,
    generate_cohort,
    generate_phantom,
    null_spec,
)


class TestGeometry:
    def test_nested_ellipses(self):
        mask = ellipse_mask((256, 256))
        areas = {r: np.count_nonzero(mask == r) for r in Region}
        assert all(a > 0 for a in areas.values())
        # walking outward along the central row the labels go CEC, medulla, cortex, background
        row = mask[128, 128:]
        changes = [int(v) for i, v in enumerate(row) if i == 0 or v != row[i - 1]]
        assert changes == [3, 2, 1, 0]

    def test_zero_area(self):
        with pytest.raises(ValueError, match="zero area"):
            generate_phantom(default_spec(0, (3, 3)))

    def test_mask_file(self):
        mask = np.zeros((8, 8), np.uint8)
        mask[:, :2], mask[:, 2:4], mask[:, 4:6] = 1, 2, 3
        spec = PhantomSpec(Rayleigh(30), Rayleigh(40), Rayleigh(50), (8, 8), "mask_file", mask)
        img = generate_phantom(spec)
        np.testing.assert_array_equal(img.mask, mask)
        assert np.all(img.pixels[:, 6:] == 0)

    @pytest.mark.parametrize("geometry", ["hexagon", "mask_file"])
    def test_bad_geometry(self, geometry):
        with pytest.raises(ValueError):
            generate_phantom(PhantomSpec(Rayleigh(30), Rayleigh(30), Rayleigh(30), (16, 16), geometry))


class TestGeneration:
    def test_deterministic(self):
        a = generate_phantom(default_spec(5))
        b = generate_phantom(default_spec(5))
        np.testing.assert_array_equal(a.pixels, b.pixels)
        assert not np.array_equal(a.pixels, generate_phantom(default_spec(6)).pixels)

    def test_eight_bit(self):
        img = generate_phantom(default_spec(1))
        assert img.pixels.dtype == np.uint8

    def test_m_ordering(self):
        rep = analyze_image(generate_phantom(default_spec(2)), ["Nakagami"])
        m = [rep.regions[r].fit("Nakagami").params.m for r in Region]
        assert m[0] < m[1] < m[2]

    def test_truncation_warning(self):
        bright = Nakagami(1.0, 40000.0)
        with pytest.warns(RuntimeWarning, match="P\\(X > 255\\)"):
            generate_phantom(default_spec(0, (64, 64)).with_region("cec", bright))

    def test_defaults_do_not_warn(self, recwarn):
        generate_phantom(default_spec(0, (64, 64)))
        generate_phantom(null_spec(0, (64, 64)))
        assert not [w for w in recwarn if issubclass(w.category, RuntimeWarning)]

    @pytest.mark.parametrize(
        "params, family",
        [
            (Rayleigh(20.0), "Rayleigh"),
            (Nakagami(1.5, 400.0), "Nakagami"),
            (Gamma(2.0, 20.0), "Gamma"),
            (Rician(40.0, 20.0), "Rician"),
        ],
    )
    def test_quantisation_bias(self, params, family):
        spec = PhantomSpec(params, params, params, (256, 256), seed=3)
        values = np.concatenate([extract_region(generate_phantom(spec), r).values for r in Region])
        fit = fit_family(family, values).params
        for name, truth in params.as_dict().items():
            assert fit.as_dict()[name] == pytest.approx(truth, rel=0.03), name


class TestCohort:
    def test_minimal(self):
        cohort = generate_cohort(2, seed=0)
        assert len(cohort) == 2 and [r.patient_id for r in cohort.records] == ["P0", "P1"]
        assert cohort.members[0].image().pixels.shape == (256, 256)

    def test_too_small(self):
        with pytest.raises(ValueError):
            generate_cohort(1)

    def test_deterministic(self):
        a, b = generate_cohort(5, seed=9), generate_cohort(5, seed=9)
        assert a.records == b.records
        assert a.manifest() == b.manifest()
        np.testing.assert_array_equal(a.members[3].image().pixels, b.members[3].image().pixels)

    def test_covariate_drift(self):
        model = CovariateModel("cortex", "omega", "age", 0.01)
        cohort = generate_cohort(300, seed=1, covariate_model=model, jitter=0.0, missing_rate=0.0)
        age = np.array([r.age for r in cohort.records])
        omega = np.array([m.spec.cortex.omega for m in cohort.members])
        np.testing.assert_allclose(omega, 2500.0 * (1 + 0.01 * age), rtol=1e-12)

    def test_bad_covariate_param(self):
        with pytest.raises(ValueError):
            generate_cohort(3, covariate_model=CovariateModel(param="sigma"))

    def test_write(self, tmp_path):
        cohort = generate_cohort(3, base_spec=default_spec(0, (64, 64)), seed=4)
        manifest = cohort.write(tmp_path)
        assert sorted(p.name for p in (tmp_path / "images").iterdir()) == ["P0.png", "P1.png", "P2.png"]
        img = read_gray(tmp_path / "images" / "P1.png")
        np.testing.assert_array_equal(img, cohort.members[1].image().pixels)
        np.testing.assert_array_equal(read_gray(tmp_path / "masks" / "P1.png"), cohort.members[1].image().mask)
        assert read_cohort_csv(tmp_path / "cohort.csv") == cohort.records
        assert json.loads((tmp_path / "manifest.json").read_text()) == json.loads(json.dumps(manifest))
