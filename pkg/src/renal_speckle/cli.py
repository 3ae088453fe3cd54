"""Command-line batch runner.

Subcommands::

    renal-speckle simulate   --out DIR [--n N] [--seed S] ...
    renal-speckle fit        --images DIR --masks DIR --out DIR
    renal-speckle divergence (--reports DIR | --images DIR --masks DIR) --out DIR
    renal-speckle cohort     --fits CSV --cohort CSV --out DIR

Every run writes ``run_manifest.json`` with the configuration, library
versions and SHA-256 digests of inputs and outputs.  Exit codes: 0 on
success, 2 for configuration errors, 3 when no usable input was found and
4 for unexpected internal errors.
"""

from __future__ import annotations

import argparse
import logging
import math
import platform
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .cohort_stats import (
    CohortTable,
    read_cohort_csv,
    run_region_comparison,
    run_stratification,
)
from .envelope_models import FAMILY_ORDER, IntensityGrid
from .io import find_pairs, group_frames, read_csv, read_gray, read_json, sha256_file, write_csv, write_json
from .region_analysis import (
    SUMMARY_COLUMNS,
    LabeledImage,
    Region,
    RegionReport,
    analyze_image,
    select_frame,
)
from .synth_phantom import CovariateModel, PhantomSpec, default_spec, generate_cohort, null_spec

log = logging.getLogger("renal_speckle")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_EMPTY = 3
EXIT_INTERNAL = 4

FIT_SUMMARY = "fit_summary.csv"
DIVERGENCE_CSV = "divergence.csv"
MANIFEST = "run_manifest.json"
MEAN_ID = "__mean__"


class ConfigError(Exception):
    pass


class EmptyInputError(Exception):
    pass


# ---------------------------------------------------------------------------
# helpers


def _families(text):
    if not text:
        return list(FAMILY_ORDER)
    wanted = [f.strip() for f in text.split(",") if f.strip()]
    lookup = {f.lower(): f for f in FAMILY_ORDER}
    out = []
    for f in wanted:
        if f.lower() not in lookup:
            raise ConfigError(f"unknown family {f!r}; choose from {', '.join(FAMILY_ORDER)}")
        out.append(lookup[f.lower()])
    return [f for f in FAMILY_ORDER if f in out]


def _grid(n_bins):
    if n_bins < 1:
        raise ConfigError("--grid-bins must be >= 1")
    return IntensityGrid.uniform(n_bins)


def _out_dir(path):
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc}") from exc
    return out


def _require_dir(path, flag):
    if path is None:
        raise ConfigError(f"{flag} is required")
    p = Path(path)
    if not p.is_dir():
        raise ConfigError(f"{flag} {p} is not a directory")
    return p


def _require_file(path, flag):
    if path is None:
        raise ConfigError(f"{flag} is required")
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"{flag} {p} does not exist")
    return p


def _config_dict(args) -> dict:
    return {k: (str(v) if isinstance(v, Path) else v) for k, v in sorted(vars(args).items())
            if k != "func"}


def _write_manifest(out, args, inputs, outputs, extra=None):
    manifest = {
        "tool": "renal_speckle",
        "version": __version__,
        "subcommand": args.command,
        "config": _config_dict(args),
        "seed": getattr(args, "seed", None),
        "versions": {
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
        "inputs": {str(p): sha256_file(p) for p in sorted(inputs, key=str)},
        "outputs": {str(Path(p).relative_to(out)): sha256_file(p) for p in sorted(outputs, key=str)},
    }
    if extra:
        manifest.update(extra)
    write_json(manifest, out / MANIFEST)


def _load_frames(group):
    frames = []
    for img_path, mask_path in group:
        pixels, mask = read_gray(img_path), read_gray(mask_path)
        frames.append((pixels, mask))
    return frames


def _analyze_group(task):
    """Worker: analyse one image (or multi-frame group). Returns (id, dict | None, error)."""
    image_id, group, families, n_bins, kl_source = task
    try:
        frames = [LabeledImage(p, m, image_id) for p, m in _load_frames(group)]
        img = frames[select_frame(frames)] if len(frames) > 1 else frames[0]
        report = analyze_image(img, families, grid=IntensityGrid.uniform(n_bins), kl_source=kl_source)
        return image_id, report.to_dict(), ""
    except (OSError, ValueError) as exc:
        return image_id, None, str(exc)


def _run_tasks(tasks, jobs):
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_analyze_group, tasks))
    return [_analyze_group(t) for t in tasks]


def _collect_groups(args):
    images = _require_dir(args.images, "--images")
    masks = _require_dir(args.masks, "--masks")
    pairs, unpaired = find_pairs(images, masks)
    for stem in unpaired:
        log.warning("skipping %s: no matching image/mask file", stem)
    if args.multi_frame:
        groups = group_frames(pairs)
    else:
        groups = {stem: [(img, mask)] for stem, img, mask in pairs}
    inputs = [p for _, img, mask in pairs for p in (img, mask)]
    return groups, inputs


def _fit_reports(args, families):
    groups, inputs = _collect_groups(args)
    if not groups:
        raise EmptyInputError(f"no image/mask pairs found in {args.images} and {args.masks}")
    tasks = [(gid, group, families, args.grid_bins, args.kl_source) for gid, group in groups.items()]
    reports = []
    for image_id, report, error in _run_tasks(tasks, args.jobs):
        if report is None:
            log.warning("skipping %s: %s", image_id, error)
            continue
        reports.append(report)
    if not reports:
        raise EmptyInputError("no image/mask pair could be processed")
    return reports, inputs


# ---------------------------------------------------------------------------
# subcommands


def cmd_fit(args) -> int:
    families = _families(args.families)
    _grid(args.grid_bins)
    out = _out_dir(args.out)
    reports, inputs = _fit_reports(args, families)
    report_dir = out / "reports"
    report_dir.mkdir(exist_ok=True)
    outputs, rows = [], []
    for d in reports:
        path = report_dir / f"{d['image_id']}.json"
        write_json(d, path)
        outputs.append(path)
        rows.extend(RegionReport.from_dict(d).summary_rows())
    write_csv(rows, SUMMARY_COLUMNS, out / FIT_SUMMARY, "renal_speckle fit-summary v1")
    outputs.append(out / FIT_SUMMARY)
    _write_manifest(out, args, inputs, outputs, {"n_images": len(reports)})
    print(f"fitted {len(reports)} image(s); {len(rows)} fit rows -> {out / FIT_SUMMARY}")
    return EXIT_OK


def _divergence_rows(reports, families):
    rows = []
    for d in reports:
        for family, entries in d["divergences"].items():
            if family != "histogram" and family not in families:
                continue
            for e in entries:
                rows.append({"image_id": d["image_id"], "family": family,
                             "region_p": e["p"], "region_q": e["q"], "kl": e["kl"]})
    means = {}
    for r in rows:
        means.setdefault((r["family"], r["region_p"], r["region_q"]), []).append(r["kl"])
    order = {f: i for i, f in enumerate(FAMILY_ORDER + ("histogram",))}
    for (family, p, q), values in sorted(
        means.items(), key=lambda kv: (order[kv[0][0]], Region.parse(kv[0][1]), Region.parse(kv[0][2]))
    ):
        rows.append({"image_id": MEAN_ID, "family": family, "region_p": p, "region_q": q,
                     "kl": float(np.mean(values)), "n_images": len(values)})
    return rows


def cmd_divergence(args) -> int:
    families = _families(args.families)
    out = _out_dir(args.out)
    if args.reports:
        report_dir = _require_dir(args.reports, "--reports")
        paths = sorted(report_dir.glob("*.json"))
        if not paths:
            raise EmptyInputError(f"no reports found in {report_dir}")
        reports = [read_json(p) for p in paths]
        inputs = paths
    else:
        _grid(args.grid_bins)
        reports, inputs = _fit_reports(args, families)
    rows = _divergence_rows(reports, families)
    columns = ("image_id", "family", "region_p", "region_q", "kl", "n_images")
    write_csv(rows, columns, out / DIVERGENCE_CSV, "renal_speckle divergence v1")
    _write_manifest(out, args, inputs, [out / DIVERGENCE_CSV], {"n_images": len(reports)})
    print(f"{len(reports)} image(s); {len(rows)} divergence rows -> {out / DIVERGENCE_CSV}")
    return EXIT_OK


def _fmt_p(p):
    return "nan" if not math.isfinite(p) else f"{p:.3g}"


def cmd_cohort(args) -> int:
    families = _families(args.families)
    if not 0 < args.alpha < 1:
        raise ConfigError("--alpha must lie in (0, 1)")
    fits_path = _require_file(args.fits, "--fits")
    cohort_path = _require_file(args.cohort, "--cohort")
    out = _out_dir(args.out)
    records = read_cohort_csv(cohort_path)
    table = CohortTable.from_summary_rows(read_csv(fits_path), records)
    if table.unmatched:
        print(f"unmatched image ids (excluded): {', '.join(table.unmatched)}")
    if len(table) < 2:
        raise EmptyInputError("fewer than 2 images could be joined to patient records")

    comparison = run_region_comparison(table, families, args.alpha)
    strat = run_stratification(table, args.family, args.alpha)

    comp = comparison.to_dict()
    comp["unmatched_ids"] = list(table.unmatched)
    write_json(comp, out / "region_comparison.json")
    comp_cols = ("family", "param", "region_a", "region_b", "n_a", "n_b", "t", "p",
                 "significant_alpha", "significant_alpha_c", "error")
    write_csv([vars(t) for t in comparison.tests], comp_cols, out / "region_comparison.csv",
              f"renal_speckle region-comparison v1; alpha={args.alpha!r}; "
              f"n_comparisons={comparison.n_comparisons}; alpha_c={comparison.alpha_c!r}")

    write_json(strat.to_dict(), out / "stratification.json")
    strat_cols = ("characteristic", "region", "family", "param", "test", "statistic", "p", "n",
                  "significant_alpha", "significant_alpha_c", "error")
    write_csv([vars(t) for t in strat.tests], strat_cols, out / "stratification.csv",
              f"renal_speckle stratification v1; alpha={args.alpha!r}; "
              f"n_tests={strat.n_tests}; alpha_c={strat.alpha_c!r}")

    outputs = [out / n for n in ("region_comparison.json", "region_comparison.csv",
                                 "stratification.json", "stratification.csv")]
    _write_manifest(out, args, [fits_path, cohort_path], outputs)

    print(f"region comparison: {comparison.n_comparisons} comparisons, "
          f"alpha = {args.alpha:g}, alpha_c = {comparison.alpha_c:.2g} ({comparison.alpha_c:.7f}), "
          f"family-wise error without correction = {comparison.family_wise_error:.1%}")
    print(f"families different in all region pairs: {', '.join(comparison.flagged_families) or 'none'}")
    hits = strat.significant("alpha")
    print(f"stratification ({args.family}): {strat.n_tests} tests, {len(hits)} significant at p <= {args.alpha:g}")
    for t in hits:
        name = "rho" if t.test == "pearson" else "F"
        print(f"  {t.region} {t.param} ~ {t.characteristic}: {name} = {t.statistic:.2f}, p = {_fmt_p(t.p)}")
    return EXIT_OK


def _parse_covariate(text):
    # covariate:slope[@region.param]
    try:
        head, _, target = text.partition("@")
        covariate, slope = head.split(":")
        region, param = target.split(".") if target else ("cortex", "omega")
        return CovariateModel(Region.parse(region).key, param, covariate, float(slope))
    except ValueError as exc:
        raise ConfigError(f"bad --covariate {text!r}; expected name:slope[@region.param]") from exc


def cmd_simulate(args) -> int:
    if args.n < 2:
        raise ConfigError("--n must be >= 2")
    shape = (args.size, args.size)
    base = null_spec(shape=shape) if args.null else default_spec(shape=shape)
    if args.geometry == "mask_file":
        mask_path = _require_file(args.mask_file, "--mask-file")
        mask = read_gray(mask_path)
        base = PhantomSpec(base.cortex, base.medulla, base.cec, mask.shape, "mask_file", mask)
    covariate = _parse_covariate(args.covariate) if args.covariate else None
    out = _out_dir(args.out)
    try:
        cohort = generate_cohort(args.n, base, covariate, args.seed, args.jitter)
        manifest = cohort.write(out)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    outputs = sorted(p for p in out.rglob("*") if p.is_file() and p.name != MANIFEST)
    inputs = [Path(args.mask_file)] if args.geometry == "mask_file" else []
    _write_manifest(out, args, inputs, outputs)
    print(f"wrote {len(cohort)} phantoms to {out}")
    for region, params in manifest["base_spec"]["regions"].items():
        print(f"  {region}: {params['family']} {params['params']}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="renal-speckle", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--families", default="", help="comma-separated families (default: all seven)")
        p.add_argument("--seed", type=int, default=0)

    def images(p):
        p.add_argument("--images", help="directory of 8-bit grayscale images")
        p.add_argument("--masks", help="directory of label masks with matching stems")
        p.add_argument("--grid-bins", type=int, default=255)
        p.add_argument("--jobs", type=int, default=1)
        p.add_argument("--multi-frame", action="store_true",
                       help="treat <id>_f<N> files as frames and keep the largest-area frame")
        p.add_argument("--kl-source", choices=("model", "histogram"), default="model")

    p = sub.add_parser("fit", help="fit all families to every labelled region")
    common(p)
    images(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("divergence", help="directed KL divergences between regions")
    common(p)
    images(p)
    p.add_argument("--reports", help="reuse JSON reports written by 'fit'")
    p.set_defaults(func=cmd_divergence)

    p = sub.add_parser("cohort", help="region comparison and stratification statistics")
    common(p)
    p.add_argument("--fits", help="fit_summary.csv written by 'fit'")
    p.add_argument("--cohort", help="patient characteristics CSV")
    p.add_argument("--family", default="Nakagami", choices=FAMILY_ORDER,
                   help="family used for stratification")
    p.add_argument("--alpha", type=float, default=0.05)
    p.set_defaults(func=cmd_cohort)

    p = sub.add_parser("simulate", help="write a synthetic phantom cohort")
    common(p)
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--size", type=int, default=256)
    p.add_argument("--geometry", choices=("concentric_ellipses", "mask_file"),
                   default="concentric_ellipses")
    p.add_argument("--mask-file", help="label mask for geometry 'mask_file'")
    p.add_argument("--null", action="store_true", help="identical distribution in all regions")
    p.add_argument("--covariate", help="planted effect, e.g. age:0.001@cortex.omega")
    p.add_argument("--jitter", type=float, default=0.05)
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except EmptyInputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_EMPTY
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error")
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
