"""Command-line driver.

    oamao validate|channel|fidelity|probabilities|oracle --config FILE
          [--set key=value ...] [--out DIR] [--seed N]

Exit codes: 0 success, 1 computational failure, 2 configuration error.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import platform
import sys
import time
from contextlib import nullcontext
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .channel import (
    NegativeMassError,
    assemble,
    choi,
    kraus_decompose,
    min_channel_fidelity,
    transition_probability,
)
from .config import ConfigError, RunConfig, parse_override
from .oracle import DiskGrid, first_order_budget, mc_channel_estimate, quad_superoperator
from .storage import atomic_write, save_choi, save_kraus, save_superoperator, sha256_file, write_csv
from .turbulence import rytov_check
from .zernike import splits_azimuthal_pair

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


class Run:
    """Output directory bookkeeping: artifacts, checksums, timings."""

    def __init__(self, cfg: RunConfig, command: str):
        self.cfg = cfg
        self.command = command
        self.out = cfg.out_dir
        self.out.mkdir(parents=True, exist_ok=True)
        self.artifacts: list[Path] = []
        self.timings: dict[str, float] = {}

    def wants(self, fmt: str) -> bool:
        return fmt in self.cfg.doc["output"]["formats"]

    def record(self, path: Path) -> Path:
        self.artifacts.append(Path(path))
        return path

    def timed(self, label):
        run = self

        class _Timer:
            def __enter__(self):
                self.t = time.perf_counter()

            def __exit__(self, *exc):
                run.timings[label] = round(time.perf_counter() - self.t, 3)

        return _Timer()

    def finish(self, extra: dict | None = None):
        manifest = {
            "command": self.command,
            "config": self.cfg.doc,
            "versions": {"oamao": __version__, "numpy": np.__version__, "scipy": scipy.__version__},
            "artifacts": {p.name: sha256_file(p) for p in sorted(self.artifacts)},
            **(extra or {}),
        }
        atomic_write(self.out / "manifest.json", (json.dumps(manifest, sort_keys=True, indent=2) + "\n").encode())
        timings = {"timings_s": self.timings, "python": platform.python_version(), "machine": platform.machine()}
        atomic_write(self.out / "timings.json", (json.dumps(timings, sort_keys=True, indent=2) + "\n").encode())


def _warn_pairs(J_list):
    warnings = []
    for J in J_list:
        split = splits_azimuthal_pair(J)
        if split:
            n, m = split
            warnings.append(f"J={J} splits the (n={n}, m=+-{m}) pair; the OAM selection rule will not hold")
    return warnings


def cmd_validate(cfg: RunConfig, out=None) -> int:
    out = out or sys.stdout
    R_w, w_r0, t = cfg.ratios
    ok = True
    if cfg.physical:
        print(f"Fried parameter r0 = {cfg.r0:.6g}", file=out)
    print(f"R/w = {R_w:.6g}, w/r0 = {w_r0:.6g}, z/z_R = {t:.6g}", file=out)
    if t > 0:
        w0_r0 = w_r0 / math.sqrt(1 + t * t)
        sigma2, valid = rytov_check(t, w0_r0)
        bound = (t + 1 / t) ** (5 / 6)
        status = "valid" if valid else "INVALID"
        print(f"Rytov variance {sigma2:.6g} < {bound:.6g} (weak scintillation): {status}", file=out)
        ok &= valid
    else:
        print("z = 0: no propagation, Rytov check trivially satisfied", file=out)
    for msg in _warn_pairs(cfg.J_list):
        print(f"warning: {msg}", file=out)
    for J in cfg.J_list:
        try:
            cfg.channel_params(J)
        except ValueError as exc:
            print(f"J={J}: {exc}", file=out)
            ok = False
    return EXIT_OK if ok else EXIT_FAIL


def cmd_channel(cfg: RunConfig, out=None) -> int:
    out = out or sys.stdout
    run = Run(cfg, "channel")
    num = cfg.numeric
    summary = {}
    for J in cfg.J_list:
        params = cfg.channel_params(J)
        with run.timed(f"assemble_J{J}"):
            A = assemble(params)
        with run.timed(f"choi_J{J}"):
            ch = choi(A)
            w = ch.eigenvalues
        with run.timed(f"kraus_J{J}"):
            ks = kraus_decompose(ch, num["neg_tol"], num["neg_ceiling"])
        if run.wants("bin"):
            run.record(save_superoperator(run.out / f"superop_J{J}.oamao", A))
            run.record(save_choi(run.out / f"choi_J{J}.oamao", ch))
            run.record(save_kraus(run.out / f"kraus_J{J}.oamao", ks))
        if run.wants("csv"):
            sectors = ch.eig[2]
            rows = [(i, float(v), "" if s is None else int(s)) for i, (v, s) in enumerate(zip(w, sectors))]
            run.record(write_csv(run.out / f"spectrum_J{J}.csv",
                                 [("index", "1"), ("eigenvalue", "1"), ("delta_l", "hbar")], rows))
        summary[str(J)] = {"trace": ch.trace, "top_eigenvalue": float(w[0]), "n_kraus": len(ks),
                           "clipped_mass": ks.clipped_mass}
        print(f"J={J}: Choi trace {ch.trace:.6g}, top eigenvalue {w[0]:.6g}, "
              f"{len(ks)} Kraus operators, clipped mass {ks.clipped_mass:.3g}", file=out)
    run.finish({"summary": summary})
    return EXIT_OK


def cmd_fidelity(cfg: RunConfig, out=None) -> int:
    out = out or sys.stdout
    run = Run(cfg, "fidelity")
    num = cfg.numeric
    rows = []
    for J in cfg.J_list:
        with run.timed(f"assemble_J{J}"):
            A = assemble(cfg.channel_params(J))
        with run.timed(f"optimize_J{J}"):
            res = min_channel_fidelity(A, n_starts=num["n_starts"], seed=cfg.seed,
                                       tol=num["tol"], max_iter=num["max_iter"])
        lead = "; ".join(f"{lab}:{abs(c):.4f}" for lab, c in res.leading_components(3))
        rows.append((J, res.F_min, lead, res.n_starts, res.n_converged, res.n_evaluations))
        print(f"J={J}: F_min = {res.F_min:.4f}  ({lead})", file=out)
    if run.wants("csv"):
        run.record(write_csv(run.out / "fidelity.csv",
                             [("J", "1"), ("F_min", "1"), ("leading_components", "|l,p>:amplitude"),
                              ("n_starts", "1"), ("n_converged", "1"), ("n_evaluations", "1")], rows))
    run.finish()
    return EXIT_OK


def cmd_probabilities(cfg: RunConfig, out=None) -> int:
    out = out or sys.stdout
    run = Run(cfg, "probabilities")
    pr = cfg.doc["probabilities"]
    init = cfg.initial
    lo, hi = pr["range"]
    L_in, P_in = cfg.doc["truncation"]["L_in"], cfg.doc["truncation"]["P_in"]
    if abs(init.l) > L_in or init.p > P_in:
        raise ConfigError(f"probabilities.initial: {init} lies outside the input truncation")
    rows = []
    for J in cfg.J_list:
        A = assemble(cfg.channel_params(J))
        for delta in range(lo, hi + 1):
            if pr["scan"] == "delta_l":
                target = (init.l + delta, init.p)
            else:
                target = (init.l, init.p + delta)
            if target[1] < 0 or (target[0], target[1]) not in {tuple(x) for x in A.out_labels}:
                continue
            prob = transition_probability(A, init, target)
            rows.append((J, delta, prob))
            print(f"J={J} delta={delta:+d}: {prob:.6g}", file=out)
    unit = "hbar" if pr["scan"] == "delta_l" else "1"
    if run.wants("csv"):
        run.record(write_csv(run.out / f"probabilities_{pr['scan']}.csv",
                             [("J", "1"), (pr["scan"], unit), ("probability", "1")], rows))
    run.finish()
    return EXIT_OK


def cmd_oracle(cfg: RunConfig, out=None) -> int:
    out = out or sys.stdout
    run = Run(cfg, "oracle")
    orc = cfg.doc["oracle"]
    passed = True
    rows, err_rows = [], []
    for J in cfg.J_list:
        params = cfg.channel_params(J)
        A = assemble(params)
        grid = DiskGrid(params.geom.R_over_w, orc["n_r"], orc["n_theta"])
        big = np.abs(A.data) > 1e-3
        if orc["mode"] == "quad":
            with run.timed(f"quad_J{J}"):
                ref = quad_superoperator(params, grid).data
            budget = orc["budget"] or 1e-8
            dev = np.abs(ref - A.data)
            bound = budget * np.maximum(np.abs(A.data), 1.0)
            ok = bool(np.all(dev <= bound))
            stderr = np.zeros_like(dev)
        else:
            with run.timed(f"mc_J{J}"):
                res = mc_channel_estimate(params, orc["n_samples"], cfg.seed, grid)
            ref, stderr = res.estimate.data, res.stderr
            budget = orc["budget"] or first_order_budget(A)
            dev = np.abs(ref - A.data)
            ok = bool(np.all(dev[big] <= 3 * (stderr[big] + budget)))
        rel = dev[big] / np.abs(A.data[big])
        rows.append((J, orc["mode"], float(dev.max()), float(rel.max()), float(rel.mean()), budget, ok))
        print(f"J={J} [{orc['mode']}]: max |dev| {dev.max():.3e}, max rel {rel.max():.3e}, "
              f"mean rel {rel.mean():.3e}, budget {budget:.3e}: {'PASS' if ok else 'FAIL'}", file=out)
        passed &= ok
        for r, c in zip(*np.nonzero(big)):
            (o, op), (i, ip) = A.labels_of_out(r), A.labels_of_in(c)
            err_rows.append((J, str(o), str(op), str(i), str(ip), A.data[r, c], ref[r, c], float(stderr[r, c])))
    if run.wants("csv"):
        run.record(write_csv(run.out / f"oracle_{orc['mode']}.csv",
                             [("J", "1"), ("mode", "-"), ("max_abs_dev", "1"), ("max_rel_dev", "1"),
                              ("mean_rel_dev", "1"), ("budget", "1"), ("pass", "-")], rows))
        run.record(write_csv(run.out / f"oracle_{orc['mode']}_errors.csv",
                             [("J", "1"), ("out", "|l,p>"), ("out_prime", "|l,p>"), ("in", "|l,p>"),
                              ("in_prime", "|l,p>"), ("analytic", "1"), ("oracle", "1"), ("stderr", "1")],
                             err_rows))
    run.finish()
    return EXIT_OK if passed else EXIT_FAIL


COMMANDS = {
    "validate": cmd_validate,
    "channel": cmd_channel,
    "fidelity": cmd_fidelity,
    "probabilities": cmd_probabilities,
    "oracle": cmd_oracle,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="oamao", description="Turbulence + adaptive-optics channel for OAM states.")
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", required=True, help="JSON run configuration")
    ap.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                    help="override a config field by dotted key (repeatable)")
    ap.add_argument("--out", help="output directory (overrides output.directory)")
    ap.add_argument("--seed", type=int, help="random seed (overrides numeric.seed)")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def _thread_limit():
    raw = os.environ.get("OAMAO_THREADS")
    if not raw:
        return nullcontext()
    try:
        n = int(raw)
        if n < 1:
            raise ValueError
    except ValueError:
        raise ConfigError(f"OAMAO_THREADS must be a positive integer, got {raw!r}") from None
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        overrides = [parse_override(s) for s in args.overrides]
        if args.out is not None:
            overrides.append(("output.directory", args.out))
        if args.seed is not None:
            overrides.append(("numeric.seed", args.seed))
        cfg = RunConfig.load(args.config, overrides)
        limits = _thread_limit()
    except ConfigError as exc:
        for problem in exc.problems:
            print(f"config error: {problem}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        with limits:
            return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        for problem in exc.problems:
            print(f"config error: {problem}", file=sys.stderr)
        return EXIT_CONFIG
    except (NegativeMassError, ArithmeticError, np.linalg.LinAlgError, MemoryError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
