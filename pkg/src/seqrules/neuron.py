"""Single-rule threshold neuron.

Inputs are ``x = concat(history, current)`` of length ``2 * vocab_size``.  A
positive literal contributes ``+1``, a negated literal ``-1``; the threshold is
the number of positive literals, so the weighted sum reaches it only when every
positive literal is set and every negated one is clear.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .rules import Rule, Scope


class Mode(enum.Enum):
    GENERATE = "generate"
    TRAIN_PROB = "train"


@dataclass(frozen=True, eq=False)
class RuleNeuron:
    weights: np.ndarray
    threshold: int
    output_code: int
    alpha: float
    rule_id: str = ""

    @property
    def vocab_size(self) -> int:
        return self.weights.shape[0] // 2


def literal_slot(scope: Scope, code: int, vocab_size: int) -> int:
    return code if scope is Scope.HISTORY else vocab_size + code


def compile_neuron(rule: Rule, vocab_size: int) -> RuleNeuron:
    w = np.zeros(2 * vocab_size, dtype=np.int8)
    for lit in rule.antecedent:
        w[literal_slot(lit.scope, lit.code, vocab_size)] = -1 if lit.negated else 1
    w.flags.writeable = False
    return RuleNeuron(
        weights=w,
        threshold=int((w == 1).sum()),
        output_code=rule.output_code,
        alpha=rule.alpha,
        rule_id=rule.id,
    )


def activation_sum(neuron: RuleNeuron, x: np.ndarray) -> int:
    x = np.asarray(x)
    if x.shape != neuron.weights.shape:
        raise ValueError(f"input length {x.shape} does not match weights {neuron.weights.shape}")
    s = int(np.dot(neuron.weights.astype(np.int64), x.astype(np.int64)))
    assert s <= neuron.threshold, "weighted sum exceeded the number of positive literals"
    return s


def fires(neuron: RuleNeuron, x: np.ndarray) -> bool:
    return activation_sum(neuron, x) >= neuron.threshold


def apply_consequent(
    neuron: RuleNeuron,
    s: int,
    visit: np.ndarray,
    mode: Mode = Mode.GENERATE,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Return a copy of ``visit`` with the output overridden if the neuron fired.

    GENERATE draws a Bernoulli(alpha) bit (hard rules never touch the RNG);
    TRAIN_PROB writes alpha itself into a probability row.
    """
    out = np.array(visit, copy=True)
    if s < neuron.threshold:
        return out
    if mode is Mode.TRAIN_PROB:
        out[neuron.output_code] = neuron.alpha
    elif neuron.alpha in (0.0, 1.0):
        out[neuron.output_code] = int(neuron.alpha)
    else:
        if rng is None:
            raise ValueError("a soft rule needs an RNG in GENERATE mode")
        out[neuron.output_code] = int(rng.random() < neuron.alpha)
    return out
