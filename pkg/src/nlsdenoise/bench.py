"""Experiment runner: corrupt, denoise, score, and write CSV/JSON reports.

A run is described by a TOML file::

    seed = 0
    workers = 2
    output = "results"          # relative to the config file
    metrics = ["psnr", "ssim"]
    save_outputs = false

    [dataset]
    path = "clean"              # directory of .png/.pgm/.vol files, or one file
    kind = "image2d"            # or "volume3d"
    mode = "synthetic"          # or "paired" (then set noisy_path)

    [noise]
    kind = "awgn"               # or "rician"
    sigmas = [10, 25, 50]
    unit = "intensity"          # "per255" or "percent_max"

    [method.msvd]
    family = "msvd"             # "msvd", "hosvd4d" or "identity"
    lam = 14.0                  # plus any GroupingParams / DenoiseConfig field

Rows are sorted by (item, method, sigma) so the CSV bytes depend only on the
inputs and seed, never on scheduling; only the ``seconds`` column varies.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import metrics as qm
from .filtering import FilterParams
from .grouping import GroupingParams
from .io import IMAGE_SUFFIXES, VOLUME_SUFFIXES, load_any, save_any
from .noise import NoiseSpec, add_noise, estimate_sigma_mad
from .pipeline import DenoiseConfig, denoise, denoise_rician, denoise_volume

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

log = logging.getLogger(__name__)

CSV_COLUMNS = ("item", "method", "sigma", "psnr", "ssim", "sam", "ergas", "seconds")
METRIC_NAMES = ("psnr", "ssim", "sam", "ergas")
SIGMA_UNITS = ("intensity", "per255", "percent_max")
METHOD_FAMILIES = ("msvd", "hosvd4d", "identity")


class ConfigError(ValueError):
    """Invalid or unresolvable experiment configuration."""


@dataclass(frozen=True)
class MethodConfig:
    """One named denoiser setting.

    ``sigma_mode`` is ``"known"`` (use the synthetic noise level),
    ``"estimate"`` (MAD estimate from the noisy input) or ``"fixed"``
    (use ``sigma``). ``sigma_scale`` multiplies whichever level is chosen,
    which is how low/medium/high denoising modes are expressed.
    """

    name: str
    family: str = "msvd"
    grouping: dict = field(default_factory=dict)
    lam: float | None = None
    color_mode: str = "auto"
    weight_mode: str = "uniform"
    clip_output: bool = False
    sigma_mode: str = "known"
    sigma: float | None = None
    sigma_scale: float = 1.0

    def denoise_config(self, data: np.ndarray, kind: str, sigma: float, peak: float, workers: int = 1):
        if kind == "volume3d":
            grouping = GroupingParams.for_volume(**self.grouping)
            color = "none"
        else:
            grouping = GroupingParams(**self.grouping)
            color = self.color_mode
            if color == "auto":
                color = "opponent" if data.ndim == 3 and data.shape[2] == 3 else "none"
        return DenoiseConfig(
            grouping=grouping,
            filtering=FilterParams(sigma, lam=self.lam, family=self.family, color_mode=color),
            weight_mode=self.weight_mode,
            clip_output=self.clip_output,
            peak=peak,
            workers=workers,
        )


@dataclass(frozen=True)
class NoiseLevel:
    kind: str
    sigma: float
    unit: str = "intensity"

    def absolute(self, clean: np.ndarray, peak: float) -> float:
        if self.unit == "intensity":
            return float(self.sigma)
        if self.unit == "per255":
            return float(self.sigma) * peak / 255.0
        return float(self.sigma) / 100.0 * float(np.max(clean))


@dataclass
class ExperimentConfig:
    dataset: Path
    methods: list[MethodConfig]
    noise: list[NoiseLevel] = field(default_factory=list)
    kind: str = "image2d"
    mode: str = "synthetic"
    noisy_path: Path | None = None
    metrics: tuple[str, ...] = ("psnr", "ssim")
    output: Path = Path("results")
    seed: int = 0
    workers: int = 1
    save_outputs: bool = False

    def __post_init__(self):
        self.dataset = Path(self.dataset)
        self.output = Path(self.output)
        if not self.methods:
            raise ConfigError("at least one method is required")
        if self.kind not in ("image2d", "volume3d"):
            raise ConfigError(f"dataset kind must be image2d or volume3d, got {self.kind!r}")
        if self.mode not in ("synthetic", "paired"):
            raise ConfigError(f"dataset mode must be synthetic or paired, got {self.mode!r}")
        if self.mode == "synthetic" and not self.noise:
            raise ConfigError("synthetic mode needs at least one noise level")
        if self.mode == "paired":
            if self.noisy_path is None:
                raise ConfigError("paired mode needs dataset.noisy_path")
            self.noisy_path = Path(self.noisy_path)
            if not self.noisy_path.exists():
                raise ConfigError(f"noisy dataset path does not exist: {self.noisy_path}")
        if not self.dataset.exists():
            raise ConfigError(f"dataset path does not exist: {self.dataset}")
        unknown = set(self.metrics) - set(METRIC_NAMES)
        if unknown:
            raise ConfigError(f"unknown metrics {sorted(unknown)}")
        names = [m.name for m in self.methods]
        if len(set(names)) != len(names):
            raise ConfigError(f"duplicate method names in {names}")
        if self.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers}")
        if not self.items():
            raise ConfigError(f"no .png/.pgm/.vol inputs found under {self.dataset}")

    def items(self) -> list[Path]:
        suffixes = IMAGE_SUFFIXES + VOLUME_SUFFIXES
        if self.dataset.is_file():
            return [self.dataset]
        return sorted(p for p in self.dataset.iterdir() if p.suffix.lower() in suffixes)


_GROUPING_KEYS = {f.name for f in fields(GroupingParams)}
_METHOD_KEYS = {f.name for f in fields(MethodConfig)} - {"name", "grouping"}


def _method_from_table(name: str, table: dict) -> MethodConfig:
    table = dict(table)
    if "lambda" in table:
        table["lam"] = table.pop("lambda")
    grouping = {k: table.pop(k) for k in list(table) if k in _GROUPING_KEYS}
    unknown = set(table) - _METHOD_KEYS
    if unknown:
        raise ConfigError(f"method {name!r}: unknown keys {sorted(unknown)}")
    family = table.get("family", "msvd")
    if family not in METHOD_FAMILIES:
        raise ConfigError(f"method {name!r}: family must be one of {METHOD_FAMILIES}")
    if table.get("sigma_mode", "known") not in ("known", "estimate", "fixed"):
        raise ConfigError(f"method {name!r}: bad sigma_mode {table['sigma_mode']!r}")
    if table.get("sigma_mode") == "fixed" and table.get("sigma") is None:
        raise ConfigError(f"method {name!r}: sigma_mode 'fixed' needs sigma")
    return MethodConfig(name=name, grouping=grouping, **table)


def load_config(path, overrides: dict | None = None) -> ExperimentConfig:
    """Parse a TOML experiment file, resolving paths relative to it."""
    path = Path(path)
    try:
        raw = tomllib.loads(path.read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: invalid TOML: {exc}") from exc
    raw.update({k: v for k, v in (overrides or {}).items() if v is not None})
    base = path.parent

    def resolve(p):
        p = Path(p)
        return p if p.is_absolute() else base / p

    ds = raw.get("dataset")
    if not isinstance(ds, dict) or "path" not in ds:
        raise ConfigError(f"{path}: missing [dataset] table with a path")
    noise_tab = raw.get("noise", {})
    unit = noise_tab.get("unit", "intensity")
    if unit not in SIGMA_UNITS:
        raise ConfigError(f"{path}: noise unit must be one of {SIGMA_UNITS}")
    kind = noise_tab.get("kind", "awgn")
    if kind not in ("awgn", "rician"):
        raise ConfigError(f"{path}: noise kind must be awgn or rician")
    levels = [NoiseLevel(kind, float(s), unit) for s in noise_tab.get("sigmas", [])]
    if any(lv.sigma <= 0 for lv in levels):
        raise ConfigError(f"{path}: noise sigmas must be positive")
    method_tab = raw.get("method", {})
    try:
        methods = [_method_from_table(name, tab) for name, tab in method_tab.items()]
        return ExperimentConfig(
            dataset=resolve(ds["path"]),
            kind=ds.get("kind", "image2d"),
            mode=ds.get("mode", "synthetic"),
            noisy_path=resolve(ds["noisy_path"]) if "noisy_path" in ds else None,
            noise=levels,
            methods=methods,
            metrics=tuple(raw.get("metrics", ("psnr", "ssim"))),
            output=resolve(raw.get("output", "results")),
            seed=int(raw.get("seed", 0)),
            workers=int(raw.get("workers", 1)),
            save_outputs=bool(raw.get("save_outputs", False)),
        )
    except TypeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


@dataclass
class ReportRow:
    item: str
    method: str
    sigma: float | None
    psnr: float | None = None
    ssim: float | None = None
    sam: float | None = None
    ergas: float | None = None
    seconds: float | None = None
    error: str | None = None

    def key(self):
        return (self.item, self.method, -1.0 if self.sigma is None else self.sigma)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, str):
        return v
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return f"{v:.4f}"


def _json_num(v):
    if v is None or not isinstance(v, float) or math.isfinite(v):
        return v
    return "inf" if v > 0 else "-inf"


@dataclass
class MetricReport:
    rows: list[ReportRow]

    @property
    def failures(self) -> list[ReportRow]:
        return [r for r in self.rows if r.error]

    def aggregates(self) -> list[dict]:
        """Arithmetic means per (method, sigma) over rows that succeeded."""
        groups: dict = {}
        for r in self.rows:
            if not r.error:
                groups.setdefault((r.method, r.sigma), []).append(r)
        out = []
        for (method, sigma), rows in sorted(groups.items(), key=lambda kv: (kv[0][0], kv[0][1] or -1.0)):
            agg = {"method": method, "sigma": sigma, "count": len(rows)}
            for name in METRIC_NAMES + ("seconds",):
                vals = [getattr(r, name) for r in rows if getattr(r, name) is not None]
                agg[name] = float(np.mean(vals)) if vals else None
            out.append(agg)
        return out

    def best(self) -> list[dict]:
        """Per noise level, the method with the highest mean PSNR."""
        by_sigma: dict = {}
        for agg in self.aggregates():
            if agg["psnr"] is None:
                continue
            cur = by_sigma.get(agg["sigma"])
            if cur is None or agg["psnr"] > cur["psnr"]:
                by_sigma[agg["sigma"]] = agg
        return [by_sigma[s] for s in sorted(by_sigma, key=lambda s: -1.0 if s is None else s)]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in self.rows:
            w.writerow([r.item, r.method] + [_fmt(getattr(r, c)) for c in CSV_COLUMNS[2:]])
        return buf.getvalue()

    def to_json(self) -> str:
        def clean(d):
            return {k: _json_num(v) for k, v in d.items()}

        doc = {
            "columns": list(CSV_COLUMNS),
            "rows": [clean(vars(r)) for r in self.rows],
            "aggregates": [clean(a) for a in self.aggregates()],
            "best": [clean(a) for a in self.best()],
            "failures": len(self.failures),
        }
        return json.dumps(doc, indent=2, allow_nan=False) + "\n"

    def write(self, outdir) -> None:
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        (outdir / "report.csv").write_text(self.to_csv())
        (outdir / "report.json").write_text(self.to_json())


def noise_seed(seed: int, item_index: int, level_index: int) -> int:
    """64-bit per-(item, noise level) seed derived from the run seed."""
    state = np.random.SeedSequence([int(seed), item_index, level_index]).generate_state(1, np.uint64)
    return int(state[0])


def score(clean, test, kind: str, peak: float, names) -> dict:
    """Metric values for one result; inapplicable metrics are left out."""
    out = {}
    params = qm.MetricParams(peak=peak)
    multiband = clean.ndim == 3 and clean.shape[2] >= 2
    for name in names:
        if name == "psnr":
            out[name] = qm.psnr_foreground(clean, test, peak) if kind == "volume3d" else qm.psnr(clean, test, peak)
        elif name == "ssim":
            out[name] = qm.ssim(clean, test, params)
        elif name == "sam" and multiband:
            out[name] = qm.sam(clean, test)
        elif name == "ergas":
            out[name] = qm.ergas(clean, test, params)
    return out


def apply_method(method: MethodConfig, noisy, kind, noise_kind, sigma, peak):
    if method.family == "identity":
        return noisy.copy()
    if method.sigma_mode == "fixed":
        level = method.sigma
    elif method.sigma_mode == "estimate" or sigma is None:
        level = estimate_sigma_mad(noisy)
    else:
        level = sigma
    level *= method.sigma_scale
    if not level > 0:
        raise ValueError(f"noise level for {method.name!r} is not positive ({level})")
    cfg = method.denoise_config(noisy, kind, level, peak)
    if noise_kind == "rician":
        return denoise_rician(noisy, level, cfg)
    if kind == "volume3d":
        return denoise_volume(noisy, cfg)
    return denoise(noisy, cfg)


def _run_unit(cfg: ExperimentConfig, item: Path, clean, peak, noisy, sigma, noise_kind) -> list[ReportRow]:
    rows = []
    for method in sorted(cfg.methods, key=lambda m: m.name):
        row = ReportRow(item.stem, method.name, sigma)
        try:
            start = time.perf_counter()
            result = apply_method(method, noisy, cfg.kind, noise_kind, sigma, peak)
            row.seconds = max(time.perf_counter() - start, 1e-9)
            for name, value in score(clean, result, cfg.kind, peak, cfg.metrics).items():
                setattr(row, name, value)
            if cfg.save_outputs:
                tag = "paired" if sigma is None else f"s{sigma:g}"
                dest = cfg.output / "denoised" / f"{item.stem}__{method.name}__{tag}{item.suffix}"
                dest.parent.mkdir(parents=True, exist_ok=True)
                save_any(dest, result, peak)
        except Exception as exc:  # recorded per row; the run keeps going
            log.warning("%s / %s failed: %s", item.name, method.name, exc)
            row.seconds = None
            row.error = f"{type(exc).__name__}: {exc}"
        rows.append(row)
    return rows


def _units(cfg: ExperimentConfig):
    """Yield (item, clean, peak, noisy, sigma, noise_kind) work units lazily."""
    for idx, item in enumerate(cfg.items()):
        try:
            clean, peak = load_any(item)
        except Exception as exc:
            yield item, exc
            continue
        if cfg.mode == "paired":
            try:
                noisy, _ = load_any(cfg.noisy_path / item.name)
            except Exception as exc:
                yield item, exc
                continue
            yield item, (clean, peak, noisy, None, "awgn")
            continue
        for lvl_idx, level in enumerate(cfg.noise):
            sigma = level.absolute(clean, peak)
            spec = NoiseSpec(level.kind, sigma, noise_seed(cfg.seed, idx, lvl_idx))
            yield item, (clean, peak, add_noise(clean, spec), sigma, level.kind)


def run_experiment(cfg: ExperimentConfig) -> MetricReport:
    """Run every (item, noise level, method) and write ``report.csv``/``report.json``."""
    def work(unit):
        item, payload = unit
        if isinstance(payload, Exception):
            return [
                ReportRow(item.stem, m.name, None, error=f"{type(payload).__name__}: {payload}")
                for m in cfg.methods
            ]
        return _run_unit(cfg, item, *payload)

    if cfg.workers == 1:
        chunks = [work(u) for u in _units(cfg)]
    else:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            chunks = list(pool.map(work, _units(cfg)))
    rows = sorted((r for chunk in chunks for r in chunk), key=ReportRow.key)
    report = MetricReport(rows)
    report.write(cfg.output)
    return report
