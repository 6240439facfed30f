"""Prototype captioner standing in for the attacked multimodal model."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from agd.encoder import FeatureEncoder, encode


@dataclass(frozen=True)
class PrototypeBank:
    labels: tuple[str, ...]
    answer_features: np.ndarray  # (K, feat), unit rows

    def __post_init__(self) -> None:
        feats = np.asarray(self.answer_features, dtype=np.float64)
        if feats.shape[0] != len(self.labels):
            raise ValueError("need one answer feature per label")
        gram = feats @ feats.T
        off = gram[~np.eye(len(self.labels), dtype=bool)]
        if off.size and off.max() >= 0.95:
            raise ValueError(f"answer features not separated: max pairwise cosine {off.max():.3f}")
        feats.setflags(write=False)
        object.__setattr__(self, "answer_features", feats)

    @classmethod
    def from_world(cls, world, enc: FeatureEncoder) -> "PrototypeBank":
        return cls(labels=world.names, answer_features=np.stack([encode(enc, p) for p in world.prototypes]))

    @property
    def K(self) -> int:
        return len(self.labels)


def caption(x: np.ndarray, bank: PrototypeBank, enc: FeatureEncoder) -> tuple[int, np.ndarray]:
    """Return the best-matching label index and its answer embedding (ties -> lowest index)."""
    z = encode(enc, x)
    k = int(np.argmax(bank.answer_features @ z))
    return k, bank.answer_features[k]


def attack_success(x_adv: np.ndarray, target_label: int, bank: PrototypeBank, enc: FeatureEncoder) -> bool:
    return caption(x_adv, bank, enc)[0] == target_label


def clip_score_surrogate(a: np.ndarray, a_tar: np.ndarray) -> float:
    """Cosine similarity of two answer embeddings; inputs are renormalized defensively."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(a_tar, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.clip((a @ b) / (na * nb), -1.0, 1.0))
