"""Randomized stream-vs-direct equivalence checking.

Draws small graphs spanning the kernel/stride/padding space, evaluates both
engines in fixed-point mode and requires bit-exact agreement. A fault hook
can flip one instruction-mask bit to prove the check has teeth.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from streamcnn.model import Layer, ModelGraph, infer_shapes, make_synthetic_weights
from streamcnn.reference import run_direct
from streamcnn.streaming.engine import run_stream

KERNELS = (1, 3, 5)
STRIDES = (1, 2)
PADDINGS = ("valid", "same")


@dataclass
class VerifyReport:
    trials: int
    mismatches: int = 0
    max_abs_deviation: float = 0.0
    failing_seed: int | None = None
    graphs: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.mismatches == 0

    def as_dict(self) -> dict:
        return {
            "trials": self.trials,
            "mismatches": self.mismatches,
            "max_abs_deviation": self.max_abs_deviation,
            "failing_seed": self.failing_seed,
        }


def random_graph(rng: np.random.Generator) -> ModelGraph:
    """A small conv pipeline: conv [+ relu] [+ pool] [+ flatten + dense]."""
    k = int(rng.choice(KERNELS))
    stride = int(rng.choice(STRIDES))
    padding = str(rng.choice(PADDINGS))
    h = int(rng.integers(max(k, 2), 17))
    w = int(rng.integers(max(k, 2), 17))
    c = int(rng.integers(1, 9))
    n = int(rng.integers(1, 9))
    layers = [Layer("conv", "conv2d", filters=n, kernel=k, stride=stride,
                    padding=padding, use_bias=bool(rng.integers(0, 2)))]
    if rng.integers(0, 2):
        layers.append(Layer("act", "relu"))
    out_h, out_w = infer_shapes(ModelGraph("probe", (h, w, c), list(layers))).output_shape[:2]
    if out_h >= 2 and out_w >= 2 and rng.integers(0, 2):
        kind = "maxpool" if rng.integers(0, 2) else "avgpool"
        layers.append(Layer("pool", kind, pool=2))
    if rng.integers(0, 2):
        layers.append(Layer("flat", "flatten"))
        layers.append(Layer("head", "dense", units=int(rng.integers(1, 9)),
                            use_bias=bool(rng.integers(0, 2))))
    g = ModelGraph(f"gen_k{k}s{stride}{padding[0]}", (h, w, c), layers)
    return make_synthetic_weights(g, seed=int(rng.integers(0, 2**31)))


def run_trial(seed: int, corrupt_mask_bit: int | None = None) -> float:
    """Max |stream - direct| for one generated graph; 0.0 means bit-exact.

    A corrupted instruction array may derail the dataflow entirely (FIFO
    underflow, wrong output count); any such failure counts as a detected
    mismatch (inf deviation).
    """
    rng = np.random.default_rng(seed)
    g = random_graph(rng)
    x = rng.normal(0.0, 1.0, size=g.input_shape)
    want = run_direct(g, x, mode="fixed")
    try:
        got, _ = run_stream(g, x, mode="fixed", corrupt_mask_bit=corrupt_mask_bit)
    except Exception:
        if corrupt_mask_bit is None:
            raise
        return float("inf")
    if got.shape != want.shape:
        return float("inf")
    return float(np.max(np.abs(got - want))) if want.size else 0.0


def run_equivalence_trials(trials: int, seed: int = 0,
                           corrupt_mask_bit: int | None = None) -> VerifyReport:
    if trials < 1:
        raise ValueError("trials must be >= 1")
    report = VerifyReport(trials=trials)
    for i in range(trials):
        trial_seed = seed + i
        dev = run_trial(trial_seed, corrupt_mask_bit)
        report.max_abs_deviation = max(report.max_abs_deviation, dev)
        if dev != 0.0:
            report.mismatches += 1
            if report.failing_seed is None:
                report.failing_seed = trial_seed
    return report
