"""Central finite-difference oracle for tape gradients."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import tensor as _t
from .tensor import Tape, Tensor

MIN_EPSILON = 1e-9


class NondeterminismError(RuntimeError):
    """The checked function returned different values for identical inputs."""


@dataclass
class GradCheckReport:
    per_param: dict = field(default_factory=dict)   # name -> max relative error
    n_checked: int = 0
    tolerance: float = 1e-4
    n_shrunk: int = 0      # coordinates re-probed with a smaller step near a ReLU kink
    n_skipped: int = 0     # coordinates sitting on a kink even at MIN_EPSILON

    @property
    def max_rel_error(self) -> float:
        return max(self.per_param.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance


def relative_error(g_ad, g_fd):
    g_ad, g_fd = np.asarray(g_ad), np.asarray(g_fd)
    return np.abs(g_ad - g_fd) / np.maximum(np.maximum(np.abs(g_ad), np.abs(g_fd)), 1e-8)


def _probe(fn):
    """Loss value and ReLU on/off signature of one evaluation."""
    _t._KINK_PROBE = []
    try:
        value = fn().item()
        return value, tuple(_t._KINK_PROBE)
    finally:
        _t._KINK_PROBE = None


def gradient_check(fn: Callable[[], Tensor], params: dict[str, Tensor], epsilon: float = 1e-5,
                   tolerance: float = 1e-4, max_coords: int | None = None,
                   rng: np.random.Generator | None = None) -> GradCheckReport:
    """Compare tape gradients of ``fn()`` with central differences.

    ``fn`` takes no arguments and reads the current values of ``params``.
    With ``max_coords`` set, that many coordinates per parameter are sampled
    with ``rng``; otherwise every coordinate is perturbed.

    A central difference is only meaningful where ``fn`` is smooth.  If the
    +/- perturbation flips any ReLU input, the step is divided by 10 until
    it no longer does; coordinates still on a kink at ``MIN_EPSILON`` are
    skipped and counted in the report.
    """
    first = fn().data.copy()
    if not np.array_equal(first, fn().data):
        raise NondeterminismError("fn is not deterministic (is dropout enabled?)")

    for p in params.values():
        p.requires_grad = True
        p.grad = None
    with Tape() as tape:
        loss = fn()
    tape.backward(loss)
    _, base_sig = _probe(fn)

    report = GradCheckReport(tolerance=tolerance)
    rng = rng or np.random.default_rng(0)
    for name, p in params.items():
        g_ad = p.grad if p.grad is not None else np.zeros_like(p.data)
        p.requires_grad = False
        if not p.data.flags.c_contiguous:
            p.data = np.ascontiguousarray(p.data)
        flat = p.data.reshape(-1)
        if max_coords is None or max_coords >= flat.size:
            coords = np.arange(flat.size)
        else:
            coords = rng.choice(flat.size, size=max_coords, replace=False)
        kept, g_fd = [], []
        for i in coords:
            orig = flat[i]
            eps = epsilon
            while True:
                flat[i] = orig + eps
                up, sig_up = _probe(fn)
                flat[i] = orig - eps
                down, sig_down = _probe(fn)
                flat[i] = orig
                if sig_up == base_sig == sig_down or eps / 10 < MIN_EPSILON:
                    break
                eps /= 10
            if eps < epsilon:
                report.n_shrunk += 1
            if not sig_up == base_sig == sig_down:
                report.n_skipped += 1
                continue
            kept.append(i)
            g_fd.append((up - down) / (2 * eps))
        err = relative_error(g_ad.reshape(-1)[kept], np.array(g_fd))
        report.per_param[name] = float(err.max()) if err.size else 0.0
        report.n_checked += len(kept)
    for p in params.values():
        p.grad = None
    return report
