"""Command-line front end: ``epr-spatial <subcommand> [flags]``.

Errors are reported as one line on stderr,
``error code=<CODE> status=<exit> message=<text>``, with exit status 2 for
configuration problems, 3 for data problems and 4 for numerical failures.
"""

import argparse
import logging
import os
import sys
import time
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import io
from .assembly import HyperPrior, HyperState, assemble, build_alpha_kappa
from .basis import UNIT_SQUARE, default_basis
from .engine import PosteriorReplicates, PredictionTargets, predict_from_draws, run_epr
from .exceptions import ConfigError, DataError, EPRError
from .mcmc import MCMCConfig, gelman_rubin_table, run_mcmc
from .scoring import crps_sorted, hellinger_bernoulli, interval_score, mspe, roc_auc
from .sim import (
    METHODS, METRICS, SIM_PRIOR, SimConfig, generate_dataset, make_geometry, run_comparison,
)

log = logging.getLogger("epr_spatial")

SUBCOMMANDS = ("simulate", "fit-epr", "fit-mcmc", "predict", "score", "compare")
RANDOMIZED = {"simulate", "fit-epr", "fit-mcmc", "compare"}


@dataclass(frozen=True)
class RunConfig:
    """Effective settings for one invocation (config file overlaid by flags)."""

    command: str
    seed: int = None
    reps: int = 1000
    alpha_xi: float = 1.0
    prior: dict = None
    r: int = None
    r3: int = None
    level: float = 0.95
    chains: int = 2
    iters: int = 10_000
    burnin: int = 5_000
    threads: int = 1
    sim: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.command in RANDOMIZED and self.seed is None:
            raise ConfigError(f"{self.command} needs a seed (--seed or 'seed' in the config)")
        if self.seed is not None and (not isinstance(self.seed, int) or self.seed < 0):
            raise ConfigError(f"seed must be a non-negative integer, got {self.seed!r}")
        if self.reps < 1:
            raise ConfigError("reps must be >= 1")
        if not self.alpha_xi > 0:
            raise ConfigError(f"alpha-xi must be positive, got {self.alpha_xi}")
        if not 0 < self.level < 1:
            raise ConfigError("level must lie in (0, 1)")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        if self.prior is not None:
            HyperPrior.from_dict(self.prior)
        if self.command in ("fit-mcmc", "compare"):
            MCMCConfig(chains=self.chains, iters=self.iters, burnin=self.burnin)

    @property
    def hyper(self):
        prior = HyperPrior.from_dict(self.prior) if self.prior else SIM_PRIOR
        return HyperState(alpha_xi=self.alpha_xi, prior=prior)

    def hashed(self):
        # threads never changes results, so it stays out of the hash
        d = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "threads"}
        return io.config_hash(d)

    def tags(self):
        return {"config_hash": self.hashed(), "seed": self.seed if self.seed is not None else "none"}


CONFIG_KEYS = {f.name for f in fields(RunConfig)} - {"command"}
FLAG_KEYS = {"seed": "seed", "reps": "reps", "alpha_xi": "alpha_xi", "chains": "chains",
             "iters": "iters", "burnin": "burnin", "threads": "threads"}


def load_config(command, args):
    data = io.read_json(args.config) if args.config else {}
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a JSON object")
    unknown = set(data) - CONFIG_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")
    for key, attr in FLAG_KEYS.items():
        v = getattr(args, attr, None)
        if v is None:
            continue
        if command == "compare" and key == "reps":
            # counts simulation replicates here, not EPR draws per fit
            data["sim"] = {**data.get("sim", {}), "n_replicates": v}
        else:
            data[key] = v
    env = os.environ.get("EPR_THREADS")
    if env:
        try:
            data["threads"] = int(env)
        except ValueError:
            raise ConfigError(f"EPR_THREADS must be an integer, got {env!r}") from None
    try:
        return RunConfig(command=command, **data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def _require_dir(path, what):
    if path is None:
        raise ConfigError(f"--{what} is required")
    p = Path(path)
    if not p.is_dir():
        raise ConfigError(f"--{what} {p} is not a directory")
    return p


def _basis_for(dataset, cfg, meta):
    r = cfg.r if cfg.r is not None else meta.get("r")
    r3 = cfg.r3 if cfg.r3 is not None else meta.get("r3")
    if r is None:
        raise ConfigError("basis size unknown: set 'r' in the config or dataset metadata")
    return default_basis(UNIT_SQUARE, int(r), dataset.cell_centers, r3=r3)


# ---------------------------------------------------------------------------
# subcommands


def _sim_config(cfg):
    sim = dict(cfg.sim)
    sim["seed"] = cfg.seed
    if cfg.prior is not None:
        sim["epr_prior"] = cfg.prior
    sim.update(alpha_xi=cfg.alpha_xi, epr_reps=cfg.reps, mcmc_chains=cfg.chains,
               mcmc_iters=cfg.iters, mcmc_burnin=cfg.burnin)
    return SimConfig.from_dict(sim)


def cmd_simulate(cfg, args):
    sc = _sim_config(cfg)
    geo = make_geometry(sc)
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
    ds, truth = generate_dataset(sc, rng, geo)
    out = Path(args.out)
    tags = cfg.tags()
    io.write_dataset(out, ds, tags, extra={"r": sc.r, "r3": sc.r3, "sim": sc.to_dict()})
    n1, n2 = len(truth.y1), len(truth.y2)
    d = truth.delta_y
    io.write_table(out / "truth_points.csv",
                   ["id", "y1", "y3", "prob3", "delta1", "delta3"],
                   [[ds.point_ids[i], truth.y1[i], truth.y3[i], truth.prob3[i], d[i], d[n1 + n2 + i]]
                    for i in range(n1)], "truth_points/1", tags)
    io.write_table(out / "truth_regions.csv", ["region_id", "y2", "delta2"],
                   [[reg.id, truth.y2[k], d[n1 + k]] for k, reg in enumerate(ds.regions)],
                   "truth_regions/1", tags)
    eff = [[f"beta[{j}]", v] for j, v in enumerate(truth.beta)]
    eff += [[f"eta[{j}]", v] for j, v in enumerate(truth.eta)]
    io.write_table(out / "truth_effects.csv", ["name", "value"], eff, "truth_effects/1", tags)
    log.info("simulated %d points (%d with fire) and %d regions into %s",
             n1, int(ds.z3.sum()), n2, out)


def cmd_fit_epr(cfg, args):
    data = _require_dir(args.data, "data")
    ds, meta = io.read_dataset(data), io.read_meta(data)
    basis = _basis_for(ds, cfg, meta)
    t_cpu, t0 = time.process_time(), time.perf_counter()
    model = assemble(ds, basis)
    dyvec = build_alpha_kappa(ds, cfg.hyper, model.dims)
    reps = run_epr(model, dyvec, cfg.hyper, cfg.reps, cfg.seed, threads=cfg.threads)
    timing = {"cpu_seconds": time.process_time() - t_cpu, "wall_seconds": time.perf_counter() - t0,
              "threads": cfg.threads, **{f"epr_{k}": v for k, v in reps.timing.items()}}
    out = Path(args.out)
    io.write_archive(out, {"zeta": reps.zeta, "q": reps.q, "theta": reps.theta_draws},
                     {"kind": "epr", "r": basis.r, "r3": basis.knots3.r, **cfg.tags()})
    io.write_json(out / "timing.json", timing)


def cmd_fit_mcmc(cfg, args):
    data = _require_dir(args.data, "data")
    ds, meta = io.read_dataset(data), io.read_meta(data)
    basis = _basis_for(ds, cfg, meta)
    mc = MCMCConfig(chains=cfg.chains, iters=cfg.iters, burnin=cfg.burnin, seed=cfg.seed,
                    threads=cfg.threads)
    t_cpu, t0 = time.process_time(), time.perf_counter()
    model = assemble(ds, basis)
    chains = run_mcmc(model, ds, mc)
    timing = {"cpu_seconds": time.process_time() - t_cpu, "wall_seconds": time.perf_counter() - t0,
              "threads": cfg.threads}
    out = Path(args.out)
    arrays = dict(chains.samples)
    arrays["final_proposal_scales"] = chains.proposal_scales[:, -1]
    arrays["acceptance"] = chains.acceptance
    io.write_archive(out, arrays, {"kind": "mcmc", "burnin": chains.burnin, "r": basis.r,
                                   "r3": basis.knots3.r, **cfg.tags()})
    io.write_table(out / "gelman_rubin.csv", ["parameter", "psrf", "psrf_upper"],
                   gelman_rubin_table(chains), "gelman_rubin/1", cfg.tags())
    io.write_json(out / "timing.json", timing)


def _load_fit(path, dataset):
    arrays, meta = io.read_archive(path)
    dims = dataset.dims(int(meta["r"]))
    basis = default_basis(UNIT_SQUARE, int(meta["r"]), dataset.cell_centers, r3=int(meta["r3"]))
    if meta.get("kind") == "epr":
        reps = PosteriorReplicates(arrays["zeta"], arrays["q"], arrays["theta"],
                                   int(meta["seed"]), dims)
        return reps.beta, reps.eta, basis, dims
    if meta.get("kind") == "mcmc":
        b = int(meta["burnin"])
        beta, eta = arrays["beta"][:, b:], arrays["eta"][:, b:]
        return (beta.reshape(-1, beta.shape[-1]), eta.reshape(-1, eta.shape[-1]), basis, dims)
    raise DataError(f"{path}: unknown archive kind {meta.get('kind')!r}")


def _surface(cfg, args, keep_draws=False):
    data = _require_dir(args.data, "data")
    fit = _require_dir(args.fit, "fit")
    ds = io.read_dataset(data)
    beta, eta, basis, dims = _load_fit(fit, ds)
    if beta.shape[1] != dims.p or eta.shape[1] != 3 * dims.r:
        raise DataError("fit archive does not match the dataset dimensions")
    surf = predict_from_draws(beta, eta, basis, dims, PredictionTargets.from_dataset(ds),
                              level=cfg.level, keep_draws=keep_draws)
    return ds, surf, (beta, eta)


def cmd_predict(cfg, args):
    ds, s, _ = _surface(cfg, args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    tags = cfg.tags()
    lo = f"q{100 * (1 - cfg.level) / 2:g}"
    hi = f"q{100 * (1 + cfg.level) / 2:g}"
    header = ["id", "x", "y"] + [f"{v}_{k}" for v in ("y1", "y3", "prob3") for k in ("mean", lo, hi)]
    rows = []
    for i in range(ds.points.shape[0]):
        row = [ds.point_ids[i], ds.points[i, 0], ds.points[i, 1]]
        for r in (s.y1, s.y3, s.prob3):
            row += [r.mean[i], r.lower[i], r.upper[i]]
        rows.append(row)
    io.write_table(out / "predictions_points.csv", header, rows, "predictions_points/1", tags)
    io.write_table(out / "predictions_regions.csv", ["region_id", "y2_mean", f"y2_{lo}", f"y2_{hi}"],
                   [[reg.id, s.y2.mean[k], s.y2.lower[k], s.y2.upper[k]]
                    for k, reg in enumerate(ds.regions)], "predictions_regions/1", tags)
    io.write_table(out / "roc_input.csv", ["id", "score", "label"],
                   [[ds.point_ids[i], s.prob3.mean[i], int(ds.z3[i])] for i in range(ds.points.shape[0])],
                   "roc_input/1", tags)


def _truth(data, ds):
    p = data / "truth_points.csv"
    if not p.exists():
        return None
    _, _, rows = io.read_table(p)
    _, _, rrows = io.read_table(data / "truth_regions.csv")
    _, _, erows = io.read_table(data / "truth_effects.csv")
    if len(rows) != ds.points.shape[0] or len(rrows) != len(ds.regions):
        raise DataError("truth tables do not match the dataset")
    y1 = np.array([float(r[1]) for r in rows])
    prob3 = np.array([float(r[3]) for r in rows])
    y2 = np.array([float(r[1]) for r in rrows])
    effects = {r[0]: float(r[1]) for r in erows}
    return y1, y2, prob3, effects


def cmd_score(cfg, args):
    data = Path(_require_dir(args.data, "data"))
    ds, s, (beta, eta) = _surface(cfg, args, keep_draws=True)
    rows = []
    try:
        roc = roc_auc(s.prob3.mean, ds.z3)
        rows.append(["auc_y3", roc.auc])
        curve = roc.curve
    except EPRError as exc:
        log.warning("AUC skipped: %s", exc)
        curve = []
    truth = _truth(data, ds)
    if truth is not None:
        y1, y2, prob3, effects = truth
        fire = ds.fire_index
        alpha = 1 - cfg.level
        if fire.size:
            rows.append(["mspe_y1", mspe(y1[fire], s.y1.mean[fire])])
            rows.append(["crps_y1", float(np.mean(crps_sorted(s.y1.draws[:, fire], y1[fire])))])
            rows.append(["interval_score_y1", float(np.mean(
                interval_score(s.y1.lower[fire], s.y1.upper[fire], y1[fire], alpha)))])
        rows.append(["mspe_y2", mspe(y2, s.y2.mean)])
        rows.append(["crps_y2", float(np.mean(crps_sorted(s.y2.draws, y2)))])
        rows.append(["interval_score_y2", float(np.mean(
            interval_score(s.y2.lower, s.y2.upper, y2, alpha)))])
        hd_sum, hd_mean = hellinger_bernoulli(prob3, s.prob3.mean)
        rows += [["hd_y3", hd_sum], ["hd_y3_mean", hd_mean]]
        true_eff = np.array([effects[f"beta[{j}]"] for j in range(beta.shape[1])]
                            + [effects[f"eta[{j}]"] for j in range(eta.shape[1])])
        est = np.concatenate([beta.mean(axis=0), eta.mean(axis=0)])
        rows.append(["mse_effects", float(np.mean((est - true_eff) ** 2))])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    io.write_table(out / "report.csv", ["metric", "value"], rows, "score_report/1", cfg.tags())
    io.write_table(out / "roc_curve.csv", ["fpr", "tpr", "threshold"], curve, "roc_curve/1",
                   cfg.tags())


def cmd_compare(cfg, args):
    sc = _sim_config(cfg)
    res = run_comparison(sc, threads=cfg.threads,
                         progress=lambda i: log.info("replicate %d done", i))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    tags = {**cfg.tags(), "partial": int(res.partial)}
    header = ["replicate", "n1_star"] + [f"{m}_{k}" for m in METHODS for k in METRICS]
    io.write_table(out / "replicates.csv", header,
                   [[r["replicate"], r["n1_star"]] + [r[(m, k)] for m in METHODS for k in METRICS]
                    for r in res.rows], "replicates/1", tags)
    summary = res.report.summary()
    io.write_table(out / "report.csv", ["method", "metric", "mean", "sd", "n"],
                   [[m, k, *summary[(m, k)]] for m in METHODS for k in METRICS if (m, k) in summary],
                   "comparison_report/1", tags)
    io.write_table(out / "failures.csv", ["replicate", "error"], res.failures, "failures/1", tags)
    tsum = res.timing_report.summary()
    io.write_table(out / "timing.csv", ["method", "metric", "mean", "sd", "n"],
                   [[m, k, *v] for (m, k), v in sorted(tsum.items())], "timing/1", tags)
    io.write_table(out / "timing_replicates.csv",
                   ["replicate", "epr_cpu", "epr_wall", "mcmc_cpu", "mcmc_wall"],
                   [[r["replicate"], *t["epr"], *t["mcmc"]] for r, t in zip(res.rows, res.timings)],
                   "timing_replicates/1", tags)
    if res.failures:
        first = res.failures[0]
        raise _PartialRun(f"{len(res.failures)} replicate(s) failed; first: replicate {first[0]}: "
                          f"{first[1]}")


class _PartialRun(EPRError):
    code = "PARTIAL"
    exit_status = 4


HANDLERS = {
    "simulate": cmd_simulate,
    "fit-epr": cmd_fit_epr,
    "fit-mcmc": cmd_fit_mcmc,
    "predict": cmd_predict,
    "score": cmd_score,
    "compare": cmd_compare,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser():
    p = _Parser(prog="epr-spatial", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    for name in SUBCOMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config")
        s.add_argument("--seed", type=int)
        s.add_argument("--out", required=True)
        s.add_argument("--threads", type=int)
        if name in ("fit-epr", "fit-mcmc", "predict", "score"):
            s.add_argument("--data")
        if name in ("predict", "score"):
            s.add_argument("--fit")
        if name in ("fit-epr", "compare"):
            s.add_argument("--reps", type=int)
        if name in ("fit-epr", "simulate", "compare"):
            s.add_argument("--alpha-xi", dest="alpha_xi", type=float)
        if name in ("fit-mcmc", "compare"):
            s.add_argument("--chains", type=int)
            s.add_argument("--iters", type=int)
            s.add_argument("--burnin", type=int)
    return p


def _one_line(text):
    return " ".join(str(text).split())


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        if args.command is None:
            raise ConfigError(f"missing subcommand; choose one of {', '.join(SUBCOMMANDS)}")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        cfg = load_config(args.command, args)
        HANDLERS[args.command](cfg, args)
    except EPRError as exc:
        print(f"error code={exc.code} status={exc.exit_status} message={_one_line(exc)}",
              file=sys.stderr)
        return exc.exit_status
    except OSError as exc:
        print(f"error code=IO status=3 message={_one_line(exc)}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
