"""Experiment sweeps: build geometry, simulate data, reconstruct, record metrics.

A spec file is plain INI text::

    [experiment]
    name = sparse
    phantom = shepp_logan      ; or: input = path/to/image.pgm
    size = 256
    modified = true
    output = out/sparse
    seed = 0

    [condition]
    kind = sparse_view         ; sparse_view | limited_angle | low_dose
    values = 30, 60, 90

    [variants]
    list = tv, tv+global

    [config]
    alpha = 0.2
    n_iter = 1000

For ``limited_angle`` each value is either a width centred at 90 degrees
(``150``) or an explicit ``start:stop`` range. ``low_dose`` values are blank-scan
counts and take ``views`` (default 180) from the condition section.
"""

from __future__ import annotations

import configparser
import csv
import logging
import math
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .config import ReconConfig
from .geometry import Geometry, forward_project
from .metrics import SNR_CAP, snr_db
from .regularizers import KINDS, RegularizerParams
from .simulate import NoiseSpec, PhantomSpec, load_grayscale, make_phantom, save_pgm, save_raw, simulate_lowdose
from .solver import reconstruct

__all__ = [
    "CONDITIONS",
    "DEFAULT_GRIDS",
    "ERROR_WINDOW",
    "METRICS_HEADER",
    "ExperimentSpec",
    "MetricsRow",
    "SpecError",
    "Variant",
    "load_spec",
    "parse_spec",
    "run_experiment",
    "write_metrics",
]

log = logging.getLogger(__name__)

CONDITIONS = ("sparse_view", "limited_angle", "low_dose")
DEFAULT_GRIDS = {
    "sparse_view": ("30", "60", "90", "120", "150", "180"),
    "limited_angle": ("90", "105", "120", "135", "150", "165"),
    "low_dose": ("1e3", "1e4", "1e5", "1e6", "1e7"),
}
ERROR_WINDOW = (0.0, 0.05)
METRICS_HEADER = ("experiment", "variant", "param", "snr_db", "seconds")

_REG_KEYS = ("a", "b", "epsilon", "p", "q", "c", "lambda_weight")


class SpecError(ValueError):
    pass


@dataclass(frozen=True)
class Variant:
    kind: str
    global_on: bool

    @property
    def label(self) -> str:
        return self.kind + ("+global" if self.global_on else "")

    @classmethod
    def parse(cls, text: str) -> "Variant":
        parts = [p.strip().lower() for p in text.split("+")]
        kind, rest = parts[0], parts[1:]
        if kind not in KINDS:
            raise SpecError(f"variant {text!r}: unknown regularizer {kind!r}")
        if rest not in ([], ["global"]):
            raise SpecError(f"variant {text!r}: only '+global' may follow the regularizer")
        return cls(kind, bool(rest))


@dataclass(frozen=True)
class ExperimentSpec:
    name: str
    condition: str
    values: tuple[str, ...]
    variants: tuple[Variant, ...] = ()
    phantom: PhantomSpec | None = field(default_factory=PhantomSpec)
    input_path: str | None = None
    n_views: int = 180
    field_of_view: float = 1.0
    seed: int = 0
    config: ReconConfig = field(default_factory=ReconConfig)
    output: str = "out"
    jobs: int = 1

    def __post_init__(self):
        if self.condition not in CONDITIONS:
            raise SpecError(f"condition must be one of {CONDITIONS}, got {self.condition!r}")
        if (self.phantom is None) == (self.input_path is None):
            raise SpecError("give exactly one of a phantom or an input image")
        for v in self.values:
            self.condition_geometry_args(v)
        if self.n_views < 1:
            raise SpecError("views must be >= 1")
        if not self.field_of_view > 0:
            raise SpecError("field_of_view must be positive")

    def condition_geometry_args(self, value: str):
        """``(start, stop, n_views, i0)`` for one condition value."""
        try:
            if self.condition == "sparse_view":
                n = int(value)
                if n < 1:
                    raise SpecError("sparse_view needs n_views >= 1")
                return 0.0, 180.0, n, None
            if self.condition == "limited_angle":
                if ":" in value:
                    start, stop = (float(x) for x in value.split(":"))
                else:
                    width = float(value)
                    start, stop = 90.0 - width / 2, 90.0 + width / 2
                if not start < stop:
                    raise SpecError(f"limited_angle range {value!r}: start must be < stop")
                return start, stop, None, None
            i0 = float(value)
            if not i0 > 0:
                raise SpecError("low_dose needs i0 > 0")
            return 0.0, 180.0, self.n_views, i0
        except ValueError as exc:
            if isinstance(exc, SpecError):
                raise
            raise SpecError(f"bad {self.condition} value {value!r}") from exc


@dataclass(frozen=True)
class MetricsRow:
    experiment: str
    variant: str
    param: str
    snr_db: float
    seconds: float
    trace: str = ""
    image: str = ""
    capped: bool = False
    error: str | None = None


# -- spec files ------------------------------------------------------------------


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise SpecError(f"not a boolean: {text!r}")


def _config_from_section(sec) -> ReconConfig:
    cfg_types = {f.name: f.type for f in fields(ReconConfig)}
    kw: dict = {}
    reg: dict = {}
    for key, raw in sec.items():
        key = key.strip().lower()
        if key in _REG_KEYS:
            reg[key] = float(raw)
        elif key in ("regularizer", "kind"):
            reg["kind"] = raw.strip()
        elif key in cfg_types:
            t = str(cfg_types[key])
            if "bool" in t:
                kw[key] = _bool(raw)
            elif "str" in t:
                kw[key] = raw.strip()
            elif raw.strip().lower() == "none":
                kw[key] = None
            elif "int" in t and "float" not in t:
                kw[key] = int(raw)
            else:
                kw[key] = float(raw)
        else:
            raise SpecError(f"unknown [config] key {key!r}")
    if reg:
        kw["regularizer"] = RegularizerParams(**reg)
    return ReconConfig(**kw)


def parse_spec(text: str, base_dir: str | Path = ".") -> ExperimentSpec:
    """Parse spec-file text; relative paths resolve against ``base_dir``."""
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise SpecError(f"malformed spec file: {exc}") from exc
    for sec in ("experiment", "condition"):
        if not cp.has_section(sec):
            raise SpecError(f"missing [{sec}] section")
    exp = cp["experiment"]
    cond = cp["condition"]
    base = Path(base_dir)

    try:
        kind = cond.get("kind", "").strip()
        if kind not in CONDITIONS:
            raise SpecError(f"[condition] kind must be one of {CONDITIONS}")
        raw_values = cond.get("values", "").strip()
        values = tuple(v.strip() for v in raw_values.split(",") if v.strip()) or DEFAULT_GRIDS[kind]

        variants: tuple[Variant, ...] = ()
        if cp.has_section("variants"):
            listed = cp["variants"].get("list", "")
            variants = tuple(Variant.parse(v) for v in listed.split(",") if v.strip())

        input_path = exp.get("input")
        phantom = None
        if input_path:
            input_path = str(base / input_path.strip())
        else:
            phantom = PhantomSpec(
                kind=exp.get("phantom", "shepp_logan").strip(),
                size=exp.getint("size", 256),
                radius=exp.getfloat("radius", 0.0),
                modified=_bool(exp.get("modified", "true")),
            )
        config = _config_from_section(cp["config"]) if cp.has_section("config") else ReconConfig()
        return ExperimentSpec(
            name=exp.get("name", "experiment").strip(),
            condition=kind,
            values=values,
            variants=variants,
            phantom=phantom,
            input_path=input_path,
            n_views=cond.getint("views", 180),
            field_of_view=exp.getfloat("field_of_view", 1.0),
            seed=exp.getint("seed", 0),
            config=config,
            output=str(base / exp.get("output", "out").strip()),
            jobs=exp.getint("jobs", 1),
        )
    except SpecError:
        raise
    except (ValueError, TypeError) as exc:
        raise SpecError(str(exc)) from exc


def load_spec(path) -> ExperimentSpec:
    path = Path(path)
    return parse_spec(path.read_text(), path.parent)


# -- running -----------------------------------------------------------------------


def _ground_truth(spec: ExperimentSpec) -> np.ndarray:
    if spec.input_path is not None:
        img = load_grayscale(spec.input_path).data
        if img.shape[0] != img.shape[1]:
            raise SpecError(f"{spec.input_path}: input image must be square")
        return img
    return make_phantom(spec.phantom)


def _geometry(spec: ExperimentSpec, size: int, value: str) -> tuple[Geometry, float | None]:
    start, stop, n, i0 = spec.condition_geometry_args(value)
    pitch = spec.field_of_view / size
    if n is None:
        geom = Geometry.limited_angle(size, start, stop)
    else:
        geom = Geometry.uniform(size, n, start, stop)
    return geom.scaled(pitch), i0


def _case_config(spec: ExperimentSpec, variant: Variant) -> ReconConfig:
    reg = replace(spec.config.regularizer, kind=variant.kind)
    return spec.config.with_(regularizer=reg, global_enabled=variant.global_on, rng_seed=spec.seed)


def _stem(variant: Variant, value: str) -> str:
    safe = value.replace(":", "-").replace("+", "")
    return f"{variant.label.replace('+', '_')}_{safe}"


def _run_case(spec: ExperimentSpec, truth: np.ndarray, value: str, variant: Variant) -> MetricsRow:
    out = Path(spec.output)
    stem = _stem(variant, value)
    t0 = time.perf_counter()
    try:
        geom, i0 = _geometry(spec, truth.shape[0], value)
        g = forward_project(truth, geom)
        if i0 is not None:
            g = simulate_lowdose(g, NoiseSpec(i0, spec.seed))
        cfg = _case_config(spec, variant)
        img, records = reconstruct(g, geom, cfg, ground_truth=truth)
        seconds = time.perf_counter() - t0
        snr = snr_db(truth, img)

        image_path = out / f"{stem}.raw"
        save_raw(image_path, img, experiment=spec.name, variant=variant.label, param=value)
        save_pgm(out / f"{stem}_error.pgm", np.abs(img - truth), 8, ERROR_WINDOW)
        trace_path = out / f"{stem}_trace.csv"
        with open(trace_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("iteration", "residual_norm", "update_magnitude", "snr_db", "n_groups"))
            for r in records:
                w.writerow((r.iteration, repr(r.residual_norm), repr(r.update_magnitude),
                            repr(r.snr_db), "" if r.n_groups is None else r.n_groups))
        return MetricsRow(spec.name, variant.label, value, snr, seconds, str(trace_path), str(image_path),
                          capped=abs(snr) >= SNR_CAP)
    except Exception as exc:  # recorded per row so the sweep continues
        log.error("case %s/%s failed: %s", variant.label, value, exc)
        log.debug("%s", traceback.format_exc())
        return MetricsRow(spec.name, variant.label, value, math.nan, time.perf_counter() - t0,
                          error=f"{type(exc).__name__}: {exc}")


def run_experiment(spec: ExperimentSpec) -> list[MetricsRow]:
    """Run every condition value x variant, write per-case files and ``metrics.csv``.

    Rows come back in grid order (values outer, variants inner) whatever
    ``spec.jobs`` is. Failed cases carry ``error`` and are left out of the CSV.
    """
    out = Path(spec.output)
    out.mkdir(parents=True, exist_ok=True)
    rows: list[MetricsRow] = []
    if spec.variants:
        truth = _ground_truth(spec)
        cases = [(v, var) for v in spec.values for var in spec.variants]
        if spec.jobs > 1:
            with ProcessPoolExecutor(max_workers=spec.jobs) as pool:
                futures = [pool.submit(_run_case, spec, truth, v, var) for v, var in cases]
                rows = [f.result() for f in futures]
        else:
            rows = [_run_case(spec, truth, v, var) for v, var in cases]
    write_metrics(out / "metrics.csv", rows)
    errors = [r for r in rows if r.error]
    if errors:
        with open(out / "errors.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("experiment", "variant", "param", "error"))
            for r in errors:
                w.writerow((r.experiment, r.variant, r.param, r.error))
    return rows


def write_metrics(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(METRICS_HEADER)
        for r in rows:
            if r.error is None:
                w.writerow((r.experiment, r.variant, r.param, f"{r.snr_db:.6f}", f"{r.seconds:.3f}"))
