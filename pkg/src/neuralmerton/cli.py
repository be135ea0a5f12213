"""Command-line front end: ``calibrate``, ``train``, ``eval``, ``profile``, ``simulate``.

One YAML config drives every command; ``--seed`` and ``--out`` override
the config.  Outputs land in ``calibration/``, ``checkpoints/``, ``logs/``,
``reports/`` and ``profiles/`` under the output directory.
"""

from __future__ import annotations

import argparse
import contextlib
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import calibration as cal
from . import reporting as rp
from .config import ConfigError, ExperimentConfig, load_config
from .evaluation import (ANNPolicy, AnalyticGBMPolicy, ConstantPolicy, MyopicHestonPolicy,
                         evaluate_policy, pathwise_quantile_band, time_averaged_weight,
                         wealth_paths_export, weight_profile)
from .market import MarketParams, simulate_batch, write_paths_csv
from .trainer import TrainingDiverged, TrainingLog, load_checkpoint, save_checkpoint, train
from .utility import UtilitySpec

log = logging.getLogger("neuralmerton")


class CommandError(RuntimeError):
    pass


def eta_tag(eta: float) -> str:
    return f"eta_{eta:.6g}"


def checkpoint_dir(out: Path, eta: float) -> Path:
    return out / "checkpoints" / eta_tag(eta)


@contextlib.contextmanager
def output_lock(out: Path):
    """Exclusive ownership of an output directory for one training run."""
    out.mkdir(parents=True, exist_ok=True)
    lock = out / ".train.lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise CommandError(f"{out} is locked by another run (remove {lock} if stale)") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        lock.unlink(missing_ok=True)


def parse_grid(spec: str) -> np.ndarray:
    """``a:b:n`` (n equispaced points) or a comma-separated list."""
    spec = (spec or "").strip()
    if not spec:
        raise CommandError("empty grid specification")
    try:
        if ":" in spec:
            a, b, n = spec.split(":")
            n = int(n)
            if n < 1:
                raise ValueError("point count must be >= 1")
            return np.linspace(float(a), float(b), n)
        vals = np.array([float(x) for x in spec.split(",") if x.strip()])
    except ValueError as exc:
        raise CommandError(f"cannot parse grid {spec!r}: {exc}") from None
    if vals.size == 0:
        raise CommandError(f"grid {spec!r} has no points")
    return vals


def build_policy(name: str, cfg: ExperimentConfig | None, eta: float, out: Path | None,
                 checkpoint: str | None = None):
    """Resolve a policy spec: ``ann``, ``analytic``, ``myopic`` or ``constant:<pi>``."""
    if name.startswith("constant"):
        _, _, val = name.partition(":")
        try:
            return ConstantPolicy(float(val or 0.0), name=name)
        except ValueError:
            raise CommandError(f"bad constant policy {name!r}") from None
    if name == "ann":
        path = Path(checkpoint) if checkpoint else checkpoint_dir(out, eta) / "final.ckpt"
        if not path.is_file():
            raise CommandError(f"checkpoint not found: {path}")
        st = load_checkpoint(path)
        return ANNPolicy(st.theta, st.horizon)
    market = cfg.market if cfg else None
    if market is None:
        raise CommandError(f"policy {name!r} needs a model section (--config)")
    if name == "analytic":
        if market.is_heston:
            raise CommandError("'analytic' is the GBM Merton ratio; use 'myopic' for Heston")
        return AnalyticGBMPolicy(eta, market)
    if name == "myopic":
        if not market.is_heston:
            raise CommandError("'myopic' applies to the Heston model")
        return MyopicHestonPolicy(market.mu, market.r)
    raise CommandError(f"unknown policy {name!r}")


# ---------------------------------------------------------------------------
# commands

def cmd_calibrate(args) -> int:
    cfg = load_config(args.config, need_market=False)
    spec = cfg.calibration
    if not spec:
        raise CommandError("config has no 'calibration' section")
    r = spec.get("r", cfg.market.r if cfg.market else 0.05)
    prices = cal.load_price_csv(cfg.resolve(spec["prices"]))
    mu, sigma = cal.calibrate_gbm(prices)
    results = {"gbm": (MarketParams.gbm(r=r, mu=mu, sigma=sigma, s0=float(prices.values[-1])),
                       {"observations": len(prices)})}
    if "vix" in spec:
        var = cal.load_vix_csv(cfg.resolve(spec["vix"]))
        p_al, v_al = cal.align(prices, var)
        results["heston"] = (cal.calibrate_heston(p_al, v_al, r=r), {"observations": len(p_al)})
    out = Path(args.out or cfg.out_dir) / "calibration"
    out.mkdir(parents=True, exist_ok=True)
    for name, (params, extra) in results.items():
        extra = {**extra, "config_sha256": cfg.hash}
        cal.write_report(params, out / name, extra)
        rp.write_meta(out / f"{name}.json", config_sha256=cfg.hash)
        print(f"{name}: " + ", ".join(f"{k}={v:.6g}" for k, v in params.to_dict().items()
                                      if isinstance(v, float)))
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    seed = cfg.train_seed if args.seed is None else args.seed
    out = Path(args.out or cfg.out_dir)
    stamp = rp.provenance(cfg.hash, seed)
    avg_rows = []
    with output_lock(out):
        for eta in cfg.etas:
            ck_dir = checkpoint_dir(out, eta)
            ck_dir.mkdir(parents=True, exist_ok=True)
            header = {"config_sha256": cfg.hash, "eta": repr(eta)}

            def on_ck(state, ck_dir=ck_dir, header=header):
                save_checkpoint(ck_dir / f"step_{state.step:06d}.ckpt", state, header)
                save_checkpoint(ck_dir / "latest.ckpt", state, header)

            resume = None
            if args.resume and (ck_dir / "latest.ckpt").is_file():
                resume = load_checkpoint(ck_dir / "latest.ckpt")
                log.info("resuming eta=%g from step %d", eta, resume.step)
            theta, tlog, state = train(
                cfg.schedule, cfg.arch, cfg.market, cfg.grid, UtilitySpec(eta), seed,
                sigma_init=cfg.sigma_init, y_scale=cfg.y_scale, resume=resume, pool=cfg.pool,
                checkpoint_every=cfg.checkpoint_every, on_checkpoint=on_ck)
            save_checkpoint(ck_dir / "final.ckpt", state, header)
            logs = out / "logs"
            logs.mkdir(parents=True, exist_ok=True)
            log_csv = logs / f"train_{eta_tag(eta)}.csv"
            if resume is not None and log_csv.is_file():
                earlier = TrainingLog.read_csv(log_csv, upto=resume.step)
                tlog.records[:0] = earlier.records
            tlog.write_csv(log_csv, stamp)
            tlog.write_timing_csv(logs / f"train_{eta_tag(eta)}.timing.csv")
            rp.write_log_gnuplot(log_csv)
            rp.plot_training(logs / f"train_{eta_tag(eta)}.png", tlog.records)
            rp.write_meta(log_csv, config_sha256=cfg.hash, seed=seed, eta=eta,
                          total_ms=sum(r.ms for r in tlog.records),
                          validation=tlog.validation)
            pi_bar = time_averaged_weight(ANNPolicy(theta, cfg.grid.T), cfg.grid.T,
                                          cfg.market.long_run_variance)
            avg_rows.append((eta, pi_bar))
            J_tail = np.mean([r.J for r in tlog.records[-100:]]) if tlog.records else float("nan")
            print(f"eta={eta:g}: {state.step} steps, mean J (last 100) = {J_tail:.6f}, "
                  f"time-averaged weight = {pi_bar:.4f}")
    if not cfg.market.is_heston:
        _write_weight_summary(out, cfg, avg_rows, stamp)
    return 0


def _write_weight_summary(out: Path, cfg: ExperimentConfig, rows, stamp) -> None:
    m = cfg.market
    table = []
    for eta, pi_bar in rows:
        ref = AnalyticGBMPolicy(eta, m).weight if eta > 0 else float("nan")
        table.append([1.0 / eta if eta else float("inf"), pi_bar, ref])
    reports = out / "reports"
    path = rp.write_csv(reports / "weight_vs_eta_inv.csv", ["eta_inv", "ann_weight", "analytic_weight"],
                        table, stamp)
    rp.write_eval_gnuplot(path)
    arr = np.array(table)
    fit = np.polyfit(arr[:, 0], arr[:, 1], 1) if len(table) >= 2 else None
    rp.plot_weight_vs_eta_inv(reports / "weight_vs_eta_inv.png", arr[:, 0], arr[:, 1], arr[:, 2],
                              None if fit is None else (fit[0], fit[1]))


def cmd_eval(args) -> int:
    cfg = load_config(args.config)
    seed = cfg.eval_seed if args.seed is None else args.seed
    out = Path(args.out or cfg.out_dir)
    reps = args.reps or cfg.reps
    names = args.policy.split(",") if args.policy else cfg.policies
    rows = []
    floors = {}
    # resolve everything before simulating
    jobs = []
    for eta in cfg.etas:
        for name in names:
            if name == "myopic" and eta != 1:
                log.warning("myopic weight is optimal only for eta = 1; skipping eta=%g", eta)
                continue
            jobs.append((name, eta, build_policy(name, cfg, eta, out, args.checkpoint)))
    if not jobs:
        raise CommandError("nothing to evaluate")
    for name, eta, policy in jobs:
        rep = evaluate_policy(policy, cfg.market, cfg.eval_grid, UtilitySpec(eta), reps, seed)
        rows.append((name, eta, rep))
        floors[f"{name}@{eta:g}"] = rep.floor_events
        print(f"{name:>12s} 1/eta={1 / eta if eta else float('inf'):.4f} "
              f"mean={rep.mean:.5f} se={rep.stderr:.5f}")
    path = rp.write_eval_csv(out / "reports" / (args.name + ".csv"), rows, rp.provenance(cfg.hash, seed))
    rp.write_eval_gnuplot(path)
    rp.plot_eval(path.with_suffix(".png"), rows)
    rp.write_meta(path, config_sha256=cfg.hash, seed=seed, floor_events=floors)
    return 0


def cmd_profile(args) -> int:
    cfg = load_config(args.config) if args.config else None
    out = Path(args.out or (cfg.out_dir if cfg else "out"))
    eta = args.eta if args.eta is not None else (cfg.etas[0] if cfg else 1.0)
    if args.checkpoint:
        policy = build_policy("ann", cfg, eta, out, args.checkpoint)
    else:
        policy = build_policy(args.policy or "ann", cfg, eta, out)
    T = policy.horizon if isinstance(policy, ANNPolicy) else (cfg.grid.T if cfg else 1.0)
    t_grid = parse_grid(f"0:{T}:500" if args.t_grid is None else args.t_grid)
    if args.y_grid is not None:
        y_grid = parse_grid(args.y_grid)
    elif cfg:
        y_grid = np.array([cfg.market.long_run_variance])
    else:
        y_grid = np.array([policy.theta.y_scale]) if isinstance(policy, ANNPolicy) else np.array([0.04])
    table = weight_profile(policy, t_grid, y_grid)
    by = "y" if y_grid.size > 1 and t_grid.size <= 12 else "t"
    stamp = rp.provenance(cfg.hash if cfg else "none", "n/a")
    path = rp.write_profile_csv(out / "profiles" / (args.name + ".csv"), table, stamp)
    rp.write_profile_gnuplot(path, by=by)
    reference = band = None
    if cfg and cfg.market.is_heston:
        reference = MyopicHestonPolicy(cfg.market.mu, cfg.market.r)
        if by == "y":
            sim = simulate_batch(cfg.market, cfg.eval_grid, ConstantPolicy(0.0), 200, cfg.eval_seed,
                                 keep_paths=True)
            band = pathwise_quantile_band(sim.market.Y)
    elif cfg:
        reference = AnalyticGBMPolicy(eta, cfg.market)
    rp.plot_profile(path.with_suffix(".png"), table, by=by, reference=reference, band=band)
    rp.write_meta(path)
    print(f"wrote {path} ({table.shape[0]} rows)")
    return 0


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    seed = cfg.eval_seed if args.seed is None else args.seed
    out = Path(args.out or cfg.out_dir) / "reports"
    names = args.policy.split(",") if args.policy else cfg.policies
    eta = cfg.etas[0]
    policies = {n: build_policy(n, cfg, eta, Path(args.out or cfg.out_dir), args.checkpoint) for n in names}
    stamp = rp.provenance(cfg.hash, seed)
    grid = cfg.eval_grid
    first = names[0]
    res = simulate_batch(cfg.market, grid, policies[first], args.paths, seed, keep_paths=True)
    out.mkdir(parents=True, exist_ok=True)
    write_paths_csv(out / "paths.csv", res)
    paths = wealth_paths_export(policies, cfg.market, grid, args.paths, seed)
    wpath = rp.write_wealth_csv(out / "wealth.csv", paths, grid.times, stamp)
    rp.write_wealth_gnuplot(wpath)
    rp.plot_wealth(out / "wealth.png", paths, grid.times)
    rp.plot_market_fan(out / "market_paths.png", grid.times, paths["_S"], paths["_Y"])
    rp.write_meta(wpath, config_sha256=cfg.hash, seed=seed)
    print(f"wrote {out / 'paths.csv'} and {wpath}")
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config (YAML)")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out", help="output directory (overrides output.dir)")
    common.add_argument("--verbose", "-v", action="store_true")

    parser = argparse.ArgumentParser(prog="neuralmerton", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("calibrate", parents=[common], help="estimate GBM/Heston parameters from CSV data")
    p.set_defaults(func=cmd_calibrate, needs_config=True)

    p = sub.add_parser("train", parents=[common], help="train ANN policies (one per eta)")
    p.add_argument("--resume", action="store_true", help="continue from checkpoints/*/latest.ckpt")
    p.set_defaults(func=cmd_train, needs_config=True)

    p = sub.add_parser("eval", parents=[common], help="Monte Carlo evaluation of policies")
    p.add_argument("--checkpoint", help="ANN checkpoint (default: per-eta final.ckpt)")
    p.add_argument("--policy", help="comma list of ann, analytic, myopic, constant:<pi>")
    p.add_argument("--reps", type=int, help="Monte Carlo replications")
    p.add_argument("--name", default="eval", help="report file stem")
    p.set_defaults(func=cmd_eval, needs_config=True)

    p = sub.add_parser("profile", parents=[common], help="tabulate a policy on a (t, y) grid")
    p.add_argument("--checkpoint")
    p.add_argument("--policy", help="ann, analytic, myopic or constant:<pi>")
    p.add_argument("--eta", type=float)
    p.add_argument("--t-grid", help="a:b:n or comma list (years)")
    p.add_argument("--y-grid", help="a:b:n or comma list (squared volatility)")
    p.add_argument("--name", default="profile", help="output file stem")
    p.set_defaults(func=cmd_profile, needs_config=False)

    p = sub.add_parser("simulate", parents=[common], help="dump market/wealth paths on common noise")
    p.add_argument("--checkpoint")
    p.add_argument("--policy", help="comma list of policies")
    p.add_argument("--paths", type=int, default=5)
    p.set_defaults(func=cmd_simulate, needs_config=True)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.needs_config and not args.config:
        parser.error(f"{args.command} requires --config")
    try:
        return args.func(args)
    except (ConfigError, CommandError, cal.DataError, TrainingDiverged, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
