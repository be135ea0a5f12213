"""Experiment configuration: YAML file validated against ``config_schema.json``."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema
import yaml

from .market import MarketParams, TimeGrid, make_time_grid
from .trainer import GBM_SCHEDULE, HESTON_SCHEDULE, PrecomputedPool, TrainingPhase


class ConfigError(ValueError):
    pass


def load_schema() -> dict:
    return json.loads(resources.files(__package__).joinpath("config_schema.json").read_text())


@dataclass
class ExperimentConfig:
    raw: dict
    base_dir: Path
    market: MarketParams | None
    grid: TimeGrid
    eval_grid: TimeGrid
    arch: tuple
    sigma_init: float
    y_scale: float
    etas: list
    schedule: list
    train_seed: int
    eval_seed: int
    reps: int
    policies: list
    out_dir: Path
    checkpoint_every: int = 0
    pool: PrecomputedPool | None = None
    calibration: dict = field(default_factory=dict)

    @property
    def hash(self) -> str:
        """SHA-256 of the canonical config content (output location excluded)."""
        content = {k: v for k, v in self.raw.items() if k != "output"}
        blob = json.dumps(content, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def resolve(self, p) -> Path:
        p = Path(p)
        return p if p.is_absolute() else self.base_dir / p


def _market(model: dict, base_dir: Path) -> MarketParams:
    model = dict(model)
    rec_path = model.pop("calibrated", None)
    coeffs = {}
    if rec_path is not None:
        path = Path(rec_path)
        path = path if path.is_absolute() else base_dir / path
        try:
            rec = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read calibration record {path}: {exc}") from None
        coeffs = dict(rec.get("model", rec))
        if coeffs.get("kind", model["kind"]) != model["kind"]:
            raise ConfigError(f"calibration record {path} is for a {coeffs['kind']} model")
    coeffs.update(model)
    coeffs.setdefault("r", 0.05)
    if "mu" not in coeffs:
        raise ConfigError("model.mu is required (directly or via model.calibrated)")
    try:
        return MarketParams(**coeffs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid model section: {exc}") from None


def validate_config(raw: dict, base_dir=".", need_market: bool = True) -> ExperimentConfig:
    """Validate and resolve a raw config mapping; raises :class:`ConfigError`.

    With ``need_market=False`` (calibration runs) an unresolvable model
    section leaves ``market`` as ``None`` instead of failing.
    """
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    try:
        jsonschema.validate(raw, load_schema())
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config error at {where}: {exc.message}") from None
    base_dir = Path(base_dir)
    try:
        market = _market(raw["model"], base_dir)
    except ConfigError:
        if need_market:
            raise
        market = None
    heston = market.is_heston if market else raw["model"]["kind"] == "heston"
    grid = make_time_grid(raw["grid"]["T"], raw["grid"]["n"])
    ev = raw.get("eval", {})
    eval_grid = make_time_grid(ev["grid"]["T"], ev["grid"]["n"]) if "grid" in ev else grid

    pol = raw.get("policy", {})
    hidden = pol.get("hidden", [5] if heston else [3])
    y_scale = pol.get("y_scale", market.long_run_variance if market else 1.0)

    ut = raw.get("utility", {})
    if "eta" in ut and "eta_inv" in ut:
        raise ConfigError("give utility.eta or utility.eta_inv, not both")
    if "eta_inv" in ut:
        etas = [1.0 / x for x in ut["eta_inv"]]
    else:
        eta = ut.get("eta", 1.0)
        etas = list(eta) if isinstance(eta, list) else [eta]
    etas = [float(e) for e in etas]

    if "schedule" in raw:
        schedule = [TrainingPhase(p["steps"], p["batch"], float(p["lr"])) for p in raw["schedule"]]
    else:
        schedule = list(HESTON_SCHEDULE if heston else GBM_SCHEDULE)

    tr = raw.get("training", {})
    pool = None
    if "pool" in tr:
        pool = PrecomputedPool(tr["pool"]["size"], tr["pool"].get("validation_fraction", 0.2))

    seeds = raw.get("seeds", {})
    default_policies = ["ann", "myopic" if heston else "analytic"]
    return ExperimentConfig(
        raw=raw, base_dir=base_dir, market=market, grid=grid, eval_grid=eval_grid,
        arch=(2, *hidden, 1), sigma_init=float(pol.get("sigma_init", 0.1)), y_scale=float(y_scale),
        etas=etas, schedule=schedule, train_seed=int(seeds.get("train", 0)),
        eval_seed=int(seeds.get("eval", 0)), reps=int(ev.get("reps", 10000)),
        policies=list(ev.get("policies", default_policies)),
        out_dir=base_dir / raw.get("output", {}).get("dir", "out"),
        checkpoint_every=int(tr.get("checkpoint_every", 0)), pool=pool,
        calibration=dict(raw.get("calibration", {})),
    )


def load_config(path, need_market: bool = True) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from None
    return validate_config(raw, path.parent, need_market)
