"""Adversarial-guided diffusion attacks in a closed analytic diffusion world."""

from agd.attack import AttackConfig, AttackResult, agd_attack, pgd_attack, perstep_guidance_attack
from agd.diffusion import InversionRecord, invert_clean_image, reconstruct_to_delta
from agd.encoder import FeatureEncoder, build_encoder
from agd.harness import EvalReport, ExperimentConfig, ablation_sweep, calibrate, run_experiment
from agd.schedule import NoiseSchedule, build_linear_schedule
from agd.score import AnalyticScore, GaussianMixtureWorld, default_world
from agd.victim import PrototypeBank

__version__ = "0.1.0"

__all__ = [
    "AnalyticScore",
    "AttackConfig",
    "AttackResult",
    "EvalReport",
    "ExperimentConfig",
    "FeatureEncoder",
    "GaussianMixtureWorld",
    "InversionRecord",
    "NoiseSchedule",
    "PrototypeBank",
    "ablation_sweep",
    "agd_attack",
    "build_encoder",
    "build_linear_schedule",
    "calibrate",
    "default_world",
    "invert_clean_image",
    "perstep_guidance_attack",
    "pgd_attack",
    "reconstruct_to_delta",
    "run_experiment",
]
