"""Experiment configs, sweeps, CSV records and gnuplot scripts.

A config is a flat TOML table.  ``n_list`` holds log2 block lengths for the
polar experiments and block lengths for everything else; the ``n`` column of
the output always holds the block length.
"""

from __future__ import annotations

import csv
import logging
import math
import sys
import time
import warnings
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from eqc import __version__, analytic, gf2, ldpc, polar, wrapper
from eqc.channel import ErasureModel, ExponentialErasure, capacity_analytic, model_from_dict
from eqc.queue import (QueueParams, busy_period_counts, check_stable, lemma1_tail_bound,
                       simulate_sojourns)

log = logging.getLogger("eqc")

EXPERIMENTS = ("capacity-curve", "polar-bler", "ldpc-bler", "wrapper-bler", "polarization",
               "concentration", "repetition")
CSV_COLUMNS = ("experiment", "lambda", "mu", "kappa", "n", "b", "rate", "trials", "errors",
               "estimate", "stderr", "seed")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    lambdas: tuple[float, ...] = ()
    mu: float = 1.0
    kappa: float = 0.1
    n_list: tuple[int, ...] = ()
    rates: tuple[float, ...] = ()
    depth_b: int | None = None
    alpha: float | None = None
    trials: int = 10_000
    design_trials: int = 10_000
    seed: int = 1
    model: dict | None = None
    code_source: str | None = None
    inner: str = "ideal"
    epsilon: float = 0.01
    workers: int = 1

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"experiment: expected one of {', '.join(EXPERIMENTS)}, got {self.experiment!r}")
        if self.trials < 1:
            raise ConfigError("trials: must be at least 1")
        if self.design_trials < 100:
            raise ConfigError("design_trials: must be at least 100")
        if self.seed < 0:
            raise ConfigError("seed: must be non-negative")
        if self.workers < 1:
            raise ConfigError("workers: must be at least 1")
        if any(not 0 < r <= 1 for r in self.rates):
            raise ConfigError("rates: every rate must lie in (0, 1]")
        if any(n < 1 for n in self.n_list):
            raise ConfigError("n_list: entries must be positive")
        if self.depth_b is not None and self.depth_b < 1:
            raise ConfigError("depth_b: must be at least 1")
        if self.alpha is not None and not 0 < self.alpha < 1:
            raise ConfigError("alpha: must lie in (0, 1)")
        if self.inner not in ("ideal", "polar", "ldpc"):
            raise ConfigError("inner: expected ideal, polar or ldpc")
        if not 0 < self.epsilon < 0.5:
            raise ConfigError("epsilon: must lie in (0, 0.5)")
        for lam in self.lambdas:
            try:
                check_stable(lam, self.mu)
            except ValueError as exc:
                raise ConfigError(f"lambda: {exc}") from None
        if self.kappa < 0:
            raise ConfigError("kappa: must be non-negative")
        if self.model is not None:
            try:
                model_from_dict(self.model)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"model: {exc}") from None
        if self.code_source is not None and not Path(self.code_source).is_file():
            raise ConfigError(f"code_source: no such file {self.code_source}")

    @property
    def erasure_model(self) -> ErasureModel:
        return model_from_dict(self.model) if self.model is not None else ExponentialErasure(self.kappa)

    @classmethod
    def from_dict(cls, d: dict, base_dir: str | Path | None = None) -> "ExperimentConfig":
        d = dict(d)
        if "experiment" not in d:
            raise ConfigError("experiment: key is required")
        known = {f.name for f in fields(cls)} - {"lambdas"} | {"lambda"}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown keys: {', '.join(unknown)}")
        kw = {}
        for key, val in d.items():
            if key == "lambda":
                kw["lambdas"] = tuple(float(v) for v in (val if isinstance(val, list) else [val]))
            elif key in ("n_list", "rates"):
                if not isinstance(val, list):
                    val = [val]
                kw[key] = tuple(int(v) if key == "n_list" else float(v) for v in val)
            elif key == "code_source" and base_dir is not None and not Path(val).is_absolute():
                kw[key] = str(Path(base_dir) / val)
            else:
                kw[key] = val
        try:
            return cls(**kw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return ExperimentConfig.from_dict(data, base_dir=path.parent)


@dataclass(frozen=True)
class ResultRecord:
    experiment: str
    lam: float
    mu: float
    kappa: float
    n: int | None
    b: int | None
    rate: float | None
    trials: int
    errors: int
    estimate: float
    stderr: float
    seed: int
    wall_seconds: float = field(default=float("nan"), compare=False)
    version: str = field(default=__version__, compare=False)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.17g" % float(v)
    return str(v)


def _row(r: ResultRecord) -> list[str]:
    return [_fmt(v) for v in (r.experiment, r.lam, r.mu, r.kappa, r.n, r.b, r.rate, r.trials,
                              r.errors, r.estimate, r.stderr, r.seed)]


def write_csv(records, path) -> None:
    """Write records with a fixed header; ``path="-"`` or ``None`` writes to stdout."""
    if path in (None, "-"):
        _write_rows(records, sys.stdout)
        return
    try:
        with open(path, "w", newline="") as fh:
            _write_rows(records, fh)
    except OSError as exc:
        raise OSError(f"{path}: {exc.strerror}") from None


def _write_rows(records, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in records:
        w.writerow(_row(r))


def read_csv(path) -> list[ResultRecord]:
    def opt(s, conv):
        return None if s == "" else conv(s)

    out = []
    with open(path, newline="") as fh:
        rows = csv.reader(fh)
        header = next(rows, None)
        if tuple(header or ()) != CSV_COLUMNS:
            raise ValueError(f"{path}: unexpected header {header}")
        for row in rows:
            e, lam, mu, kappa, n, b, rate, trials, errors, est, se, seed = row
            out.append(ResultRecord(e, float(lam), float(mu), float(kappa), opt(n, int), opt(b, int),
                                    opt(rate, float), int(trials), int(errors), float(est), float(se),
                                    int(seed)))
    return out


def emit_plot_script(records, path, csv_path) -> None:
    """Gnuplot script drawing one series per (experiment, lambda, rate, b) from ``csv_path``."""
    records = list(records)
    if not records:
        raise ValueError("no records to plot")
    series = []
    for r in records:
        key = (r.experiment, r.lam, r.rate, r.b)
        if key not in series:
            series.append(key)
    kind = records[0].experiment
    lines = ["set datafile separator ','", "set key bottom left", "set grid"]
    if kind == "capacity-curve":
        lines += ["set xlabel 'lambda'", "set ylabel 'capacity (bits/sec)'"]
        x = "2"
    elif kind == "concentration":
        lines += ["set logscale y", "set xlabel 'l'", "set ylabel 'P(J > l)'"]
        x = "5"
    else:
        lines += ["set logscale y", "set xlabel 'log2 N'",
                  "set ylabel '" + ("fraction" if kind == "polarization" else "block error probability") + "'"]
        x = "(log($5)/log(2))"
    clauses = []
    for exp, lam, rate, b in series:
        cond = [f'strcol(1) eq "{exp}"', f"$2 == {lam!r}"]
        title = [exp, f"lambda={lam:g}"]
        if rate is not None:
            cond.append(f"$7 == {rate!r}")
            title.append(f"R={rate:g}")
        if b is not None:
            cond.append(f"$6 == {b}")
            title.append(f"B={b}")
        clauses.append(f"'{csv_path}' every ::1 using {x}:(({' && '.join(cond)}) ? $10 : 1/0) "
                       f"with linespoints title '{' '.join(title)}'")
    lines.append("plot " + ", \\\n     ".join(clauses))
    try:
        Path(path).write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise OSError(f"{path}: {exc.strerror}") from None


# sweeps: each yields (label, thunk) pairs; a thunk computes the records of one point

def _depth(cfg: ExperimentConfig, lam: float, n_inner: int, default_alpha: bool) -> int | None:
    if cfg.depth_b is not None:
        return cfg.depth_b
    if cfg.alpha is not None:
        return wrapper.choose_B(lam, cfg.mu, cfg.alpha)
    if default_alpha:
        return wrapper.choose_B(lam, cfg.mu, wrapper.default_alpha(n_inner))
    return None


def _rec(cfg, exp, lam, n, b, rate, est, t0) -> ResultRecord:
    return ResultRecord(exp, lam, cfg.mu, cfg.kappa, n, b, rate, est.trials, est.errors, est.estimate,
                        est.stderr, cfg.seed, time.perf_counter() - t0)


def _construct(z, K, design=None) -> polar.PolarCode:
    # sweeps deliberately include rates above capacity
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return polar.construct(z, K, design)


def _polar_design(cfg, params, model, n, depth_b):
    """Monte Carlo z on the channel the code will see: raw EQC, or deinterleaved rows."""
    if depth_b is None or depth_b == 1:
        z, _ = polar.estimate_synthetics(params, model, n, cfg.design_trials, cfg.seed + 1, workers=cfg.workers)
    else:
        z, _ = wrapper.wrapped_synthetics(params, model, n, depth_b, cfg.design_trials, cfg.seed + 1,
                                          workers=cfg.workers)
    return z


def _capacity(cfg):
    grid = cfg.lambdas or tuple(cfg.mu * k / 100 for k in range(1, 100))
    for lam in grid:
        def point(lam=lam):
            c = capacity_analytic(lam, cfg.mu, cfg.kappa)["bits_per_sec"]
            return [ResultRecord("capacity-curve", lam, cfg.mu, cfg.kappa, None, None, None, 0, 0, c, 0.0,
                                 cfg.seed, 0.0)]
        yield dict(lam=lam), point


def _polar_bler(cfg):
    model = cfg.erasure_model
    fixed = None
    if cfg.code_source is not None:
        fixed = polar.PolarCode.from_text(Path(cfg.code_source).read_text())
    for lam in cfg.lambdas:
        params = QueueParams(lam, cfg.mu)
        for n in ([fixed.n] if fixed else cfg.n_list):
            rates = [fixed.rate] if fixed else list(cfg.rates)

            def point(params=params, n=n, rates=rates):
                t0 = time.perf_counter()
                if fixed:
                    codes = [fixed]
                else:
                    z = _polar_design(cfg, params, model, n, _depth(cfg, params.lam, 1 << n, False))
                    design = {"lambda": params.lam, "mu": params.mu, "seed": cfg.seed + 1,
                              "trials": cfg.design_trials}
                    codes = [_construct(z, int(math.floor(r * (1 << n) + 1e-9)), design) for r in rates]
                out = []
                for rate, code in zip(rates, codes):
                    b = _depth(cfg, params.lam, code.N, False)
                    if b is None or b == 1:
                        est = polar.bler(params, model, code, cfg.trials, cfg.seed, workers=cfg.workers)
                    else:
                        est = wrapper.wrapped_bler(params, model, wrapper.InnerCodeHandle("polar", code), b,
                                                   cfg.trials, cfg.seed, workers=cfg.workers).block
                    out.append(_rec(cfg, "polar-bler", params.lam, code.N, b, rate, est, t0))
                return out
            yield dict(lam=lam, n=1 << n), point


def _ldpc_bler(cfg):
    model = cfg.erasure_model
    sources = [cfg.code_source] if cfg.code_source else list(cfg.n_list)
    cache: dict = {}

    def matrix(src):
        if src not in cache:
            h = ldpc.read_alist(src) if isinstance(src, str) else ldpc.regular_ldpc(src, 3, 6, seed=cfg.seed)
            cache[src] = (h, 1.0 - gf2.rank(h.dense()) / h.n)
        return cache[src]

    for lam in cfg.lambdas:
        params = QueueParams(lam, cfg.mu)
        for src in sources:
            def point(params=params, src=src):
                t0 = time.perf_counter()
                h, rate = matrix(src)
                b = _depth(cfg, params.lam, h.n, False)
                if b is None or b == 1:
                    est = ldpc.bler(params, model, h, cfg.trials, cfg.seed, workers=cfg.workers)
                else:
                    est = wrapper.wrapped_bler(params, model, wrapper.InnerCodeHandle("ldpc", h), b,
                                               cfg.trials, cfg.seed, workers=cfg.workers).block
                return [_rec(cfg, "ldpc-bler", params.lam, h.n, b, rate, est, t0)]
            yield dict(lam=lam, n=None if isinstance(src, str) else src), point


def _wrapper_bler(cfg):
    model = cfg.erasure_model
    for lam in cfg.lambdas:
        params = QueueParams(lam, cfg.mu)
        for n in cfg.n_list:
            for rate in cfg.rates:
                def point(params=params, n=n, rate=rate):
                    t0 = time.perf_counter()
                    b = _depth(cfg, params.lam, n, True)
                    if cfg.inner == "ideal":
                        inner = wrapper.InnerCodeHandle.ideal(n, rate)
                    elif cfg.inner == "ldpc":
                        inner = wrapper.InnerCodeHandle("ldpc", ldpc.regular_ldpc(n, 3, 6, seed=cfg.seed))
                    else:
                        z = _polar_design(cfg, params, model, polar._log2(n), b)
                        inner = wrapper.InnerCodeHandle("polar", _construct(z, int(math.floor(rate * n + 1e-9))))
                    est = wrapper.wrapped_bler(params, model, inner, b, cfg.trials, cfg.seed,
                                               workers=cfg.workers).block
                    return [_rec(cfg, "wrapper-bler", params.lam, n, b, rate, est, t0)]
                yield dict(lam=lam, n=n, rate=rate), point


def _polarization(cfg):
    model = cfg.erasure_model
    for lam in cfg.lambdas:
        params = QueueParams(lam, cfg.mu)
        for n in cfg.n_list:
            def point(params=params, n=n):
                t0 = time.perf_counter()
                z, se = polar.estimate_synthetics(params, model, n, cfg.trials, cfg.seed, workers=cfg.workers)
                f = polar.polarization_fractions(z, cfg.epsilon, se)
                parts = {
                    "polarization-low": (f["low_fraction"], f["low_stderr"]),
                    "polarization-high": (f["high_fraction"], f["high_stderr"]),
                    "polarization-mass": (f["low_fraction"] + f["high_fraction"],
                                          math.hypot(f["low_stderr"], f["high_stderr"])),
                }
                wall = time.perf_counter() - t0
                return [ResultRecord(tag, params.lam, cfg.mu, cfg.kappa, 1 << n, None, None, cfg.trials, 0,
                                     v, s, cfg.seed, wall) for tag, (v, s) in parts.items()]
            yield dict(lam=lam, n=1 << n), point


def _concentration(cfg):
    """``trials`` completed busy periods per lambda; one record per l with an exceedance."""
    for lam in cfg.lambdas:
        def point(lam=lam):
            t0 = time.perf_counter()
            params = QueueParams(lam, cfg.mu)
            bits = int(1.3 * cfg.trials / (1 - params.load)) + 1000
            while True:
                counts = busy_period_counts(simulate_sojourns(params, bits, cfg.seed)).counts
                if counts.size >= cfg.trials:
                    break
                bits *= 2
            counts = counts[: cfg.trials]
            total, out = counts.size, []
            for l in range(1, int(counts.max())):
                exc = int(np.count_nonzero(counts > l))
                p = exc / total
                wall = time.perf_counter() - t0
                out.append(ResultRecord("concentration", lam, cfg.mu, cfg.kappa, l, None, None, total, exc, p,
                                        math.sqrt(p * (1 - p) / total), cfg.seed, wall))
                out.append(ResultRecord("concentration-bound", lam, cfg.mu, cfg.kappa, l, None, None, total, 0,
                                        lemma1_tail_bound(lam, cfg.mu, l), 0.0, cfg.seed, wall))
            return out
        yield dict(lam=lam), point


def _repetition(cfg):
    for lam in cfg.lambdas:
        def point(lam=lam):
            t0 = time.perf_counter()
            p = analytic.RepetitionParams(cfg.kappa, lam, cfg.mu)
            closed = ResultRecord("repetition-closed", lam, cfg.mu, cfg.kappa, 2, None, 0.5, 0, 0,
                                  analytic.repetition_error_prob(p), 0.0, cfg.seed, time.perf_counter() - t0)
            est = analytic.repetition_error_mc(p, max(cfg.trials, 1000), cfg.seed)
            return [closed, _rec(cfg, "repetition-mc", lam, 2, None, 0.5, est, t0)]
        yield dict(lam=lam), point


_SWEEPS = {
    "capacity-curve": _capacity,
    "polar-bler": _polar_bler,
    "ldpc-bler": _ldpc_bler,
    "wrapper-bler": _wrapper_bler,
    "polarization": _polarization,
    "concentration": _concentration,
    "repetition": _repetition,
}

_NEEDS = {
    "polar-bler": ("lambdas", "n_list", "rates"),
    "ldpc-bler": ("lambdas", "n_list"),
    "wrapper-bler": ("lambdas", "n_list", "rates"),
    "polarization": ("lambdas", "n_list"),
    "concentration": ("lambdas",),
    "repetition": ("lambdas",),
}


def run(cfg: ExperimentConfig, **overrides) -> list[ResultRecord]:
    """Run the sweep described by ``cfg``; records come back in sweep order.

    Each point parallelises its trials over ``cfg.workers`` threads.  A point
    that raises is logged and recorded with a NaN estimate; the sweep goes on.
    """
    if overrides:
        cfg = replace(cfg, **overrides)
    for name in _NEEDS.get(cfg.experiment, ()):
        if not getattr(cfg, name) and not (cfg.code_source and name in ("n_list", "rates")):
            raise ConfigError(f"{'lambda' if name == 'lambdas' else name}: required for {cfg.experiment}")
    records: list[ResultRecord] = []
    for label, point in _SWEEPS[cfg.experiment](cfg):
        try:
            recs = point()
        except Exception as exc:
            log.error("%s %s failed: %s", cfg.experiment, label, exc)
            recs = [ResultRecord(cfg.experiment, label.get("lam", float("nan")), cfg.mu, cfg.kappa,
                                 label.get("n"), None, label.get("rate"), 0, 0, float("nan"), float("nan"),
                                 cfg.seed)]
        for r in recs:
            log.info("%s lambda=%g n=%s b=%s rate=%s: %.6g (%.1fs)", r.experiment, r.lam, r.n, r.b,
                     r.rate, r.estimate, r.wall_seconds)
        records.extend(recs)
    return records
