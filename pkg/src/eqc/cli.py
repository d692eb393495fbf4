"""Command-line entry point: ``eqc <subcommand> [options]``.

Data goes to ``--out`` (stdout by default); progress and errors go to stderr.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

from eqc import harness, polar
from eqc.channel import ExponentialErasure, capacity_mc, optimal_lambda
from eqc.queue import QueueParams, load_samples, simulate_sojourns


def _floats(s: str) -> list[float]:
    return [float(t) for t in s.split(",") if t]


def _ints(s: str) -> list[int]:
    out = []
    for tok in s.split(","):
        if ".." in tok:
            lo, hi = tok.split("..")
            out.extend(range(int(lo), int(hi) + 1))
        elif tok:
            out.append(int(tok))
    return out


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--lambda", dest="lam", type=_floats, help="arrival rate(s), comma separated")
    p.add_argument("--mu", type=float, default=1.0, help="service rate (default 1)")
    p.add_argument("--kappa", type=float, default=0.1, help="decoherence rate (default 0.1)")
    p.add_argument("--n", type=_ints, help="block lengths (log2 for polar), e.g. 6..10 or 96,204")
    p.add_argument("--rate", type=_floats, help="code rate(s)")
    p.add_argument("--b", type=int, help="interleaver depth B")
    p.add_argument("--alpha", type=float, help="choose B for this busy-period tail probability")
    p.add_argument("--trials", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--workers", type=int, default=1, help="threads per sweep point")
    p.add_argument("--out", default="-", help="output file (default stdout)")
    p.add_argument("--plot", help="also write a gnuplot script here (needs --out)")
    p.add_argument("--warmup", type=int, default=10_000,
                   help="dummy bits discarded before a non-M/M/1 trace (default 10000)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="eqc", description="Erasure queue-channel experiments.")
    ap.add_argument("-q", "--quiet", action="store_true", help="suppress progress output")
    sub = ap.add_subparsers(dest="command", required=True)

    for name, help_ in [
        ("capacity", "capacity curve, or analytic vs Monte Carlo at given --lambda"),
        ("polar-bler", "polar SC block error rate"),
        ("ldpc-bler", "(3,6) LDPC peeling block error rate"),
        ("wrapper-bler", "interleaved inner-code block error rate"),
        ("polarization", "fractions of polarized synthetic channels"),
        ("concentration", "busy-period job-count tails vs the Chernoff bound"),
        ("repetition", "(2,1) repetition code: closed form and Monte Carlo"),
    ]:
        p = sub.add_parser(name, help=help_)
        _common(p)
        if name in ("polar-bler", "ldpc-bler"):
            p.add_argument("--code", help="polar code file or alist parity-check matrix")
        if name == "wrapper-bler":
            p.add_argument("--inner", choices=("ideal", "polar", "ldpc"), default="ideal")
        if name in ("polar-bler", "wrapper-bler"):
            p.add_argument("--design-trials", type=int, default=10_000)
        if name == "polarization":
            p.add_argument("--epsilon", type=float, default=0.01)

    p = sub.add_parser("queue-sim", help="dump one sojourn trace as CSV")
    _common(p)
    p.add_argument("--init", choices=("stationary", "empty"), default=None)
    p.add_argument("--arrival-samples", help="file of inter-arrival samples (one per line)")
    p.add_argument("--service-samples", help="file of service-time samples (one per line)")

    p = sub.add_parser("polar-construct", help="design a polar code by Monte Carlo and save it")
    _common(p)

    p = sub.add_parser("run", help="run a TOML experiment config")
    p.add_argument("--config", required=True)
    p.add_argument("--trials", type=int, help="override the config's trial count")
    p.add_argument("--workers", type=int, help="override the config's thread count")
    p.add_argument("--out", default="-")
    p.add_argument("--plot")
    return ap


def _config_from_args(name: str, a) -> harness.ExperimentConfig:
    d = {"experiment": name, "mu": a.mu, "kappa": a.kappa, "trials": a.trials, "seed": a.seed,
         "workers": a.workers}
    if a.lam:
        d["lambda"] = a.lam
    if a.n:
        d["n_list"] = a.n
    if a.rate:
        d["rates"] = a.rate
    if a.b is not None:
        d["depth_b"] = a.b
    if a.alpha is not None:
        d["alpha"] = a.alpha
    for key in ("code", "inner", "design_trials", "epsilon"):
        v = getattr(a, key, None)
        if v is not None:
            d["code_source" if key == "code" else key] = v
    return harness.ExperimentConfig.from_dict(d)


def _emit(records, a) -> None:
    harness.write_csv(records, a.out)
    if a.plot:
        harness.emit_plot_script(records, a.plot, a.out)


def _capacity(a) -> list[harness.ResultRecord]:
    if not a.lam:
        star = optimal_lambda(a.mu, a.kappa)
        logging.getLogger("eqc").info("capacity peak %.6g bits/sec at lambda %.6g",
                                      star["capacity_at_star"], star["lambda_star"])
        return harness.run(_config_from_args("capacity-curve", a))
    recs = harness.run(_config_from_args("capacity-curve", a))
    for lam in a.lam:
        est = capacity_mc(QueueParams(lam, a.mu), ExponentialErasure(a.kappa), max(a.trials, 1000), a.seed)
        recs.append(harness.ResultRecord("capacity-mc", lam, a.mu, a.kappa, max(a.trials, 1000), None, None,
                                         max(a.trials, 1000), 0, est.estimate, est.stderr, a.seed))
    return recs


def _queue_sim(a) -> None:
    if a.arrival_samples or a.service_samples:
        params = QueueParams.from_samples(
            load_samples(a.arrival_samples) if a.arrival_samples else None,
            load_samples(a.service_samples) if a.service_samples else None,
            lam=a.lam[0] if a.lam else None, mu=a.mu)
    else:
        if not a.lam:
            raise harness.ConfigError("lambda: required for queue-sim")
        params = QueueParams(a.lam[0], a.mu)
    init = a.init or ("stationary" if params.is_mm1 else "empty")
    warmup = 0 if init == "stationary" else a.warmup
    n = a.n[0] if a.n else a.trials
    trace = simulate_sojourns(params, n, a.seed, init, warmup)
    starts = trace.renewal_flags()
    fh = sys.stdout if a.out == "-" else open(a.out, "w", newline="")
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bit", "sojourn", "busy_start"])
        for i, (s, r) in enumerate(zip(trace.sojourns, starts)):
            w.writerow([i, "%.17g" % s, int(r)])
    finally:
        if fh is not sys.stdout:
            fh.close()


def _polar_construct(a) -> None:
    if not (a.lam and a.n and a.rate):
        raise harness.ConfigError("polar-construct needs --lambda, --n (log2 length) and --rate")
    params = QueueParams(a.lam[0], a.mu)
    n = a.n[0]
    z, _ = polar.estimate_synthetics(params, ExponentialErasure(a.kappa), n, a.trials, a.seed,
                                     workers=a.workers)
    design = {"lambda": params.lam, "mu": a.mu, "kappa": a.kappa, "seed": a.seed, "trials": a.trials}
    code = polar.construct(z, int(a.rate[0] * (1 << n) + 1e-9), design)
    if a.out == "-":
        sys.stdout.write(code.to_text())
    else:
        Path(a.out).write_text(code.to_text())


def main(argv=None) -> int:
    a = build_parser().parse_args(argv)
    logging.basicConfig(stream=sys.stderr, level=logging.WARNING if a.quiet else logging.INFO,
                        format="%(message)s", force=True)
    try:
        if getattr(a, "plot", None) and a.out == "-":
            raise harness.ConfigError("--plot needs --out so the script can reference the CSV")
        if a.command == "run":
            cfg = harness.load_config(a.config)
            over = {k: v for k, v in (("trials", a.trials), ("workers", a.workers)) if v is not None}
            _emit(harness.run(cfg, **over), a)
        elif a.command == "capacity":
            _emit(_capacity(a), a)
        elif a.command == "queue-sim":
            _queue_sim(a)
        elif a.command == "polar-construct":
            _polar_construct(a)
        else:
            _emit(harness.run(_config_from_args(a.command, a)), a)
    except (ValueError, OSError) as exc:
        print(f"eqc: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
