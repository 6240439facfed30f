"""Experiment runner: attacks x defenses x victims over seeded trials.

Every random draw in a trial comes from ``SeedSequence([seed, trial, stage, sub])``,
so a trial's rows depend only on the config and its index. Serial and
process-parallel runs therefore produce identical reports.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from agd.attack import AttackConfig, agd_attack, generate_target, perstep_guidance_attack, pgd_attack
from agd.defense import jpeg_lite, lowpass_fft, purify, resize_pad
from agd.encoder import build_encoder
from agd.errors import CalibrationError, ConfigError
from agd.metrics import high_band_fraction, linf, psnr, ssim
from agd.schedule import build_linear_schedule
from agd.score import PROTOTYPES, build_world, sample_clean
from agd.victim import PrototypeBank, caption, clip_score_surrogate

log = logging.getLogger(__name__)

ATTACK_KINDS = ("agd", "pgd", "perstep")
DEFENSE_KINDS = ("none", "lowpass", "jpeg", "resize_pad", "purify")
SWEEP_AXES = {"gamma": "gamma", "N": "inner_iters", "lambda": "momentum", "Delta": "delta_step"}

# stage tags for derived random streams
_CLEAN, _TARGET, _ATTACK, _DEFENSE = 0, 1, 2, 3

REPORT_FILE = "report.json"


class ReportError(ValueError):
    """A stored report failed its integrity checks."""


@dataclass(frozen=True)
class WorldSpec:
    shape: tuple[int, int] = (16, 16)
    prototypes: tuple[str, ...] = ("hgrad", "vgrad", "blob", "stripes")
    sigma0: float = 0.05

    @property
    def K(self) -> int:
        return len(self.prototypes)


@dataclass(frozen=True)
class EncoderSpec:
    hidden: int = 128
    feat: int = 32
    seed: int = 0


@dataclass(frozen=True)
class ScheduleSpec:
    T: int = 100
    beta_start: float = 1e-3
    beta_end: float = 0.2


@dataclass(frozen=True)
class AttackSpec:
    name: str
    kind: str
    params: dict = field(default_factory=dict)


@dataclass(frozen=True)
class DefenseSpec:
    name: str
    kind: str
    params: dict = field(default_factory=dict)


def _default_attacks():
    return (AttackSpec("agd", "agd"),)


def _default_defenses():
    return (DefenseSpec("none", "none"),)


@dataclass(frozen=True)
class ExperimentConfig:
    world: WorldSpec = WorldSpec()
    encoder: EncoderSpec = EncoderSpec()
    schedule: ScheduleSpec = ScheduleSpec()
    attacks: tuple[AttackSpec, ...] = field(default_factory=_default_attacks)
    defenses: tuple[DefenseSpec, ...] = field(default_factory=_default_defenses)
    transfer_seeds: tuple[int, ...] = ()
    trials: int = 100
    seed: int = 0
    spectral_cutoff: float = 0.5
    workers: int = 1
    output_dir: str | None = None

    def __post_init__(self) -> None:
        if self.trials < 0 or int(self.trials) != self.trials:
            raise ConfigError(f"trials must be a non-negative integer, got {self.trials}")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.world.K < 2:
            raise ConfigError("the world needs at least two prototypes")
        unknown = [p for p in self.world.prototypes if p not in PROTOTYPES]
        if unknown:
            raise ConfigError(f"unknown prototypes {unknown}; choose from {sorted(PROTOTYPES)}")
        if not (0.0 < self.spectral_cutoff < 1.0):
            raise ConfigError("spectral_cutoff must lie in (0, 1)")
        for group, kinds in ((self.attacks, ATTACK_KINDS), (self.defenses, DEFENSE_KINDS)):
            names = [s.name for s in group]
            if len(set(names)) != len(names):
                raise ConfigError(f"duplicate names in {names}")
            for s in group:
                if s.kind not in kinds:
                    raise ConfigError(f"{s.name}: kind {s.kind!r} not in {kinds}")
        if not self.attacks or not self.defenses:
            raise ConfigError("need at least one attack and one defense")
        for a in self.attacks:
            if a.kind == "agd":
                self.agd_config(a)  # validates parameters early

    def agd_config(self, spec: AttackSpec) -> AttackConfig:
        params = {"chain_len": self.schedule.T, "seed": self.seed, **spec.params}
        try:
            return AttackConfig(**params)
        except TypeError as exc:
            raise ConfigError(f"{spec.name}: {exc}") from None

    def to_dict(self) -> dict:
        return json.loads(json.dumps(asdict(self)))

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        try:
            world = dict(d.pop("world", {}))
            k = world.pop("K", None)
            if "shape" in world:
                world["shape"] = tuple(world["shape"])
            if "prototypes" in world:
                world["prototypes"] = tuple(world["prototypes"])
            ws = WorldSpec(**world)
            if k is not None and k != ws.K:
                raise ConfigError(f"K={k} disagrees with {ws.K} prototype names")
            return cls(
                world=ws,
                encoder=EncoderSpec(**d.pop("encoder", {})),
                schedule=ScheduleSpec(**d.pop("schedule", {})),
                attacks=tuple(AttackSpec(**a) for a in d.pop("attacks", [asdict(s) for s in _default_attacks()])),
                defenses=tuple(DefenseSpec(**a) for a in d.pop("defenses", [asdict(s) for s in _default_defenses()])),
                transfer_seeds=tuple(d.pop("transfer_seeds", ())),
                **d,
            )
        except TypeError as exc:
            raise ConfigError(f"bad config: {exc}") from None

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise OSError(f"cannot read config {path}: {exc.strerror}") from exc
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


@dataclass
class _Context:
    world: Any
    schedule: Any
    encoder: Any
    victims: list  # (name, encoder, bank)


@lru_cache(maxsize=8)
def _context(config_json: str) -> _Context:
    cfg = ExperimentConfig.from_dict(json.loads(config_json))
    world = build_world(shape=cfg.world.shape, names=cfg.world.prototypes, sigma0=cfg.world.sigma0)
    schedule = build_linear_schedule(cfg.schedule.T, cfg.schedule.beta_start, cfg.schedule.beta_end)
    enc_kw = dict(shape=cfg.world.shape, hidden=cfg.encoder.hidden, feat=cfg.encoder.feat, prototypes=world.prototypes)
    enc = build_encoder(seed=cfg.encoder.seed, **enc_kw)
    victims = [("surrogate", enc, PrototypeBank.from_world(world, enc))]
    for s in cfg.transfer_seeds:
        other = build_encoder(seed=s, **enc_kw)
        victims.append((f"transfer{s}", other, PrototypeBank.from_world(world, other)))
    return _Context(world, schedule, enc, victims)


def _stream(cfg: ExperimentConfig, trial: int, stage: int, sub: int = 0) -> np.random.SeedSequence:
    return np.random.SeedSequence([cfg.seed, trial, stage, sub])


def trial_labels(trial: int, K: int) -> tuple[int, int]:
    """Clean label cycles through the classes; the target walks round-robin over the others."""
    label = trial % K
    return label, (label + 1 + (trial // K) % (K - 1)) % K


def _run_attack(spec: AttackSpec, cfg, ctx, x0, target, z0, seed):
    p = spec.params
    if spec.kind == "agd":
        return agd_attack(x0, target, cfg.agd_config(spec), ctx.world, ctx.encoder, ctx.schedule, rng_seed=seed, z0_tar=z0)
    if spec.kind == "pgd":
        budget = float(p.get("linf_budget", 0.12))
        steps = int(p.get("steps", 40))
        return pgd_attack(x0, target, steps, float(p.get("step_size", budget / 8)), budget, ctx.world, ctx.encoder, z0_tar=z0)
    return perstep_guidance_attack(
        x0, target, float(p.get("gamma", 1.0)), ctx.world, ctx.encoder, ctx.schedule, rng_seed=seed, z0_tar=z0
    )


def _apply_defense(spec: DefenseSpec, ctx, x, seed):
    p = spec.params
    if spec.kind == "none":
        return x
    if spec.kind == "lowpass":
        return lowpass_fft(x, float(p.get("cutoff_frac", 0.5)))
    if spec.kind == "jpeg":
        return jpeg_lite(x, int(p.get("quality", 50)))
    if spec.kind == "resize_pad":
        return resize_pad(x, seed, tuple(p.get("scale_range", (0.85, 1.0))))
    return purify(x, int(p.get("t_star", 30)), ctx.world, ctx.schedule, seed)


def _finite(v: float) -> float | None:
    return v if math.isfinite(v) else None


def run_trial(cfg: ExperimentConfig, trial: int) -> list[dict]:
    ctx = _context(canonical_json(cfg.to_dict()))
    label, target = trial_labels(trial, cfg.world.K)
    x0 = sample_clean(ctx.world, label, _stream(cfg, trial, _CLEAN))
    _, z0 = generate_target(ctx.world, target, _stream(cfg, trial, _TARGET), ctx.encoder)
    rows = []
    for ai, aspec in enumerate(cfg.attacks):
        res = _run_attack(aspec, cfg, ctx, x0, target, z0, _stream(cfg, trial, _ATTACK, ai))
        x_adv = res.x0_adv
        fidelity = {
            "ssim": ssim(x_adv, x0),
            "psnr": _finite(psnr(x_adv, x0)),
            "linf": linf(x_adv, x0),
            "hbf": high_band_fraction(x_adv - x0, cfg.spectral_cutoff),
        }
        for di, dspec in enumerate(cfg.defenses):
            x_def = _apply_defense(dspec, ctx, x_adv, _stream(cfg, trial, _DEFENSE, ai * 1000 + di))
            for vname, venc, bank in ctx.victims:
                k, a = caption(x_def, bank, venc)
                rows.append(
                    {
                        "trial": trial,
                        "label": label,
                        "target": target,
                        "attack": aspec.name,
                        "defense": dspec.name,
                        "victim": vname,
                        "success": k == target,
                        "clip_score": clip_score_surrogate(a, bank.answer_features[target]),
                        **fidelity,
                    }
                )
    return rows


def _run_trial_json(config_json: str, trial: int) -> list[dict]:
    return run_trial(ExperimentConfig.from_dict(json.loads(config_json)), trial)


GROUP_KEYS = ("sweep_value", "attack", "defense", "victim")


def _mean(vals):
    vals = [v for v in vals if v is not None]
    return float(np.mean(vals)) if vals else None


def aggregate(rows: Sequence[dict]) -> list[dict]:
    groups: dict[tuple, list[dict]] = {}
    for r in rows:
        groups.setdefault(tuple(r.get(k) for k in GROUP_KEYS), []).append(r)
    out = []
    for key, rs in groups.items():
        agg = {k: v for k, v in zip(GROUP_KEYS, key) if v is not None}
        agg.update(
            n=len(rs),
            asr=_mean([float(r["success"]) for r in rs]),
            clip_score=_mean([r["clip_score"] for r in rs]),
            ssim=_mean([r["ssim"] for r in rs]),
            psnr=_mean([r["psnr"] for r in rs]),
            linf=_mean([r["linf"] for r in rs]),
            linf_max=max(r["linf"] for r in rs),
            hbf=_mean([r["hbf"] for r in rs]),
        )
        out.append(agg)
    return out


@dataclass
class EvalReport:
    config: dict
    rows: list[dict]
    aggregates: list[dict]

    @classmethod
    def from_rows(cls, config: dict, rows: list[dict]) -> "EvalReport":
        return cls(config=config, rows=rows, aggregates=aggregate(rows))

    def payload(self) -> dict:
        return {"config": self.config, "rows": self.rows, "aggregates": self.aggregates}

    @property
    def content_hash(self) -> str:
        return hashlib.sha256(canonical_json(self.payload()).encode()).hexdigest()

    def lookup(self, attack: str, defense: str = "none", victim: str = "surrogate", sweep_value=None) -> dict:
        for a in self.aggregates:
            if (a["attack"], a["defense"], a["victim"], a.get("sweep_value")) == (attack, defense, victim, sweep_value):
                return a
        raise KeyError((attack, defense, victim, sweep_value))

    def write(self, out_dir) -> Path:
        out = Path(out_dir)
        try:
            out.mkdir(parents=True, exist_ok=True)
            body = {**self.payload(), "content_hash": self.content_hash}
            (out / REPORT_FILE).write_text(json.dumps(body, indent=1, sort_keys=True, allow_nan=False) + "\n")
            _write_csv(out / "trials.csv", self.rows)
            _write_csv(out / "summary.csv", self.aggregates)
        except OSError as exc:
            raise OSError(f"cannot write report to {out}: {exc.strerror}") from exc
        return out / REPORT_FILE

    @classmethod
    def load(cls, path) -> "EvalReport":
        path = Path(path)
        if path.is_dir():
            path = path / REPORT_FILE
        try:
            body = json.loads(path.read_text())
        except OSError as exc:
            raise OSError(f"cannot read report {path}: {exc.strerror}") from exc
        except json.JSONDecodeError as exc:
            raise ReportError(f"{path}: invalid JSON ({exc})") from None
        rep = cls(config=body["config"], rows=body["rows"], aggregates=body["aggregates"])
        if canonical_json(aggregate(rep.rows)) != canonical_json(rep.aggregates):
            raise ReportError(f"{path}: aggregates do not match the per-trial rows")
        if rep.content_hash != body.get("content_hash"):
            raise ReportError(f"{path}: content hash mismatch")
        return rep

    def format_table(self) -> str:
        cols = ["attack", "defense", "victim", "n", "asr", "clip_score", "ssim", "psnr", "linf", "hbf"]
        if any("sweep_value" in a for a in self.aggregates):
            cols.insert(0, "sweep_value")

        def fmt(v):
            if isinstance(v, float):
                return f"{v:.4f}"
            return "-" if v is None else str(v)

        table = [cols] + [[fmt(a.get(c)) for c in cols] for a in self.aggregates]
        widths = [max(len(r[i]) for r in table) for i in range(len(cols))]
        lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)) for r in table]
        return "\n".join(lines + [f"trials: {len({r['trial'] for r in self.rows})}  hash: {self.content_hash}"])


def _write_csv(path: Path, rows: list[dict]) -> None:
    fields: list[str] = []
    for r in rows:
        fields += [k for k in r if k not in fields]
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        w.writerows(rows)


def run_experiment(cfg: ExperimentConfig, *, workers: int | None = None, write: bool = True) -> EvalReport:
    workers = cfg.workers if workers is None else workers
    trials = range(cfg.trials)
    if workers > 1 and cfg.trials > 1:
        cj = canonical_json(cfg.to_dict())
        with ProcessPoolExecutor(max_workers=workers) as pool:
            per_trial = list(pool.map(_run_trial_json, [cj] * cfg.trials, trials, chunksize=max(1, cfg.trials // (4 * workers))))
    else:
        per_trial = [run_trial(cfg, t) for t in trials]
    report = EvalReport.from_rows(cfg.to_dict(), [r for rows in per_trial for r in rows])
    if write and cfg.output_dir is not None:
        report.write(cfg.output_dir)
    return report


def _with_params(cfg: ExperimentConfig, attack: str, **params) -> ExperimentConfig:
    specs = []
    for s in cfg.attacks:
        if s.name == attack:
            s = replace(s, params={**s.params, **params})
        specs.append(s)
    return replace(cfg, attacks=tuple(specs))


def _attack_spec(cfg: ExperimentConfig, attack: str) -> AttackSpec:
    for s in cfg.attacks:
        if s.name == attack:
            return s
    raise ConfigError(f"no attack named {attack!r}")


@dataclass
class CalibrationResult:
    attack: str
    param: str
    value: float
    curve: list[tuple[float, float]]


def calibrate(
    cfg: ExperimentConfig,
    attack: str,
    param: str,
    grid: Sequence[float],
    asr_target: float,
    *,
    full_curve: bool = False,
    workers: int | None = None,
) -> CalibrationResult:
    """Smallest grid value of ``param`` whose undefended surrogate ASR reaches ``asr_target``.

    The scan stops at the first qualifying value unless ``full_curve`` is set.
    """
    grid = [float(g) for g in grid]
    if not grid or any(b <= a for a, b in zip(grid, grid[1:])):
        raise ConfigError("calibration grid must be nonempty and strictly ascending")
    base = replace(cfg, attacks=(_attack_spec(cfg, attack),), defenses=(DefenseSpec("none", "none"),), transfer_seeds=())
    curve, chosen = [], None
    for g in grid:
        rep = run_experiment(_with_params(base, attack, **{param: g}), workers=workers, write=False)
        asr = rep.lookup(attack)["asr"] if rep.rows else 0.0
        curve.append((g, asr))
        log.info("calibrate %s.%s=%g asr=%.3f", attack, param, g, asr)
        if chosen is None and asr >= asr_target:
            chosen = g
            if not full_curve:
                break
    drops = [(a, b) for (a, ra), (b, rb) in zip(curve, curve[1:]) if rb < ra]
    if drops:
        log.warning("ASR not monotone along the grid at %s", drops)
    if chosen is None:
        raise CalibrationError(f"no {param} in the grid reaches ASR {asr_target} (best {max(a for _, a in curve):.3f})")
    return CalibrationResult(attack, param, chosen, curve)


def calibrate_gamma(cfg: ExperimentConfig, asr_target: float, gamma_grid: Sequence[float], attack: str = "agd") -> float:
    return calibrate(cfg, attack, "gamma", gamma_grid, asr_target).value


def ablation_sweep(cfg: ExperimentConfig, axis: str, values: Sequence, attack: str | None = None) -> EvalReport:
    """Run one experiment per value of ``axis`` on the AGD attack(s) and concatenate the rows."""
    if axis not in SWEEP_AXES:
        raise ConfigError(f"axis must be one of {sorted(SWEEP_AXES)}")
    names = [attack] if attack else [s.name for s in cfg.attacks if s.kind == "agd"]
    if not names:
        raise ConfigError("no AGD attack to sweep")
    rows = []
    for v in values:
        sub = cfg
        for n in names:
            sub = _with_params(sub, n, **{SWEEP_AXES[axis]: v})
        for r in run_experiment(sub, write=False).rows:
            rows.append({**r, "sweep_value": v})
    report = EvalReport.from_rows({**cfg.to_dict(), "sweep": {"axis": axis, "values": list(values)}}, rows)
    if cfg.output_dir is not None:
        report.write(cfg.output_dir)
        write_ablation_csv(report, Path(cfg.output_dir) / f"ablation_{axis}.csv")
    return report


def ablation_table(report: EvalReport, attack: str | None = None) -> list[dict]:
    """Rows of (value, ASR, mean SSIM) for undefended surrogate results."""
    out = []
    for a in report.aggregates:
        if a["defense"] == "none" and a["victim"] == "surrogate" and (attack is None or a["attack"] == attack):
            out.append({"value": a.get("sweep_value"), "attack": a["attack"], "asr": a["asr"], "ssim": a["ssim"]})
    return out


def write_ablation_csv(report: EvalReport, path) -> None:
    _write_csv(Path(path), ablation_table(report))
