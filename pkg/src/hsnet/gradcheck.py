"""Finite-difference audit of the end-to-end gradient path.

Perturbs sampled parameter entries of a float64 network around a fixed
batch and compares central differences of the loss against the tape's
analytic gradients. The network is built with unit final-BN gammas so
every parameter actually participates in the loss.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .data import smooth_labels
from .layers import softmax_cross_entropy
from .network import NetworkConfig, build
from .tensor import Rng, Tape, Tensor4, backward


@dataclass
class GradcheckRow:
    param: str
    index: int
    analytic: float
    numeric: float
    rel_error: float


@dataclass
class GradcheckReport:
    rows: list[GradcheckRow]
    tol: float

    @property
    def passed(self) -> bool:
        return all(r.rel_error < self.tol for r in self.rows)

    @property
    def max_rel_error(self) -> float:
        return max((r.rel_error for r in self.rows), default=0.0)


def gradcheck(net_cfg: NetworkConfig, samples: int = 20, seed: int = 0,
              batch: int = 2, tol: float = 1e-3) -> GradcheckReport:
    """Audit ``samples`` randomly chosen parameter entries at float64.

    The step is 1e-5 * max(1, |theta|) per entry. Relative error is
    |fd - analytic| / max(|fd|, |analytic|), taken as 0 when both are
    below 1e-10 (indistinguishable from a true zero at this step size).
    """
    if samples < 1:
        raise ValueError(f"samples must be >= 1, got {samples}")
    cfg = replace(net_cfg, zero_init_gamma=False)
    root = Rng(seed)
    net = build(cfg, root.child("gradcheck-init"), dtype=np.float64)

    data_rng = root.child("gradcheck-data")
    x = data_rng.standard_normal((batch, 3, cfg.image_size, cfg.image_size))
    labels = data_rng.integers(0, cfg.num_classes, size=batch)
    targets = smooth_labels(labels, cfg.num_classes, 0.0)

    def loss_value() -> float:
        logits = net.forward(Tensor4(x), mode="train")
        return softmax_cross_entropy(logits, targets).value

    net.zero_grads()
    with Tape() as tape:
        logits = net.forward(Tensor4(x), mode="train")
        out = softmax_cross_entropy(logits, targets)
    backward(tape, out.scalar)

    params = net.parameters()
    names = list(params)
    pick = root.child("gradcheck-pick")
    rows: list[GradcheckRow] = []
    for _ in range(samples):
        name = names[int(pick.integers(0, len(names)))]
        tensor = params[name]
        flat = tensor.data.reshape(-1)
        i = int(pick.integers(0, flat.size))
        theta = float(flat[i])
        h = 1e-5 * max(1.0, abs(theta))

        flat[i] = theta + h
        f_plus = loss_value()
        flat[i] = theta - h
        f_minus = loss_value()
        flat[i] = theta

        fd = (f_plus - f_minus) / (2.0 * h)
        an = float(tensor.grad.reshape(-1)[i]) if tensor.grad is not None else 0.0
        denom = max(abs(fd), abs(an))
        rel = 0.0 if denom < 1e-10 else abs(fd - an) / denom
        rows.append(GradcheckRow(param=name, index=i, analytic=an, numeric=fd, rel_error=rel))

    return GradcheckReport(rows=rows, tol=tol)
