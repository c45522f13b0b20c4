"""Targeted-attack backends.

Two families: a toy affine/softmax classifier with four targeted attacks
(DeepFool, FGSM, PGD, Carlini-Wagner), all with analytic gradients so
behavior is checkable by hand; and a synthetic oracle that samples reachable
subsets from a configured table, for exact end-to-end verification.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .core import ReachableSet
from .errors import SumNotOneError
from .rng import stream

L2 = "l2"
LINF = "linf"

# distortion metric each attack is scored with by default
ATTACK_NORMS = {"deepfool": L2, "fgsm": LINF, "pgd": LINF, "cw": L2}


@dataclass(frozen=True)
class AttackBudget:
    epsilon: float = np.inf
    norm: str = L2
    max_iters: int = 30

    def __post_init__(self):
        if not self.epsilon >= 0.0:
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon}")
        if self.norm not in (L2, LINF):
            raise ValueError(f"norm must be {L2!r} or {LINF!r}, got {self.norm!r}")
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")


def distortion(x: np.ndarray, x_adv: np.ndarray, norm: str) -> float:
    v = np.asarray(x_adv, float) - np.asarray(x, float)
    if norm == L2:
        return float(np.linalg.norm(v))
    return float(np.max(np.abs(v))) if v.size else 0.0


@dataclass(frozen=True, eq=False)
class AdversarialExample:
    x: np.ndarray
    x_adv: np.ndarray
    target: int
    success: bool
    distortion: float

    @property
    def v(self) -> np.ndarray:
        return self.x_adv - self.x

    def to_obj(self) -> dict:
        return {
            "x": [float(a) for a in self.x],
            "x_adv": [float(a) for a in self.x_adv],
            "v": [float(a) for a in self.v],
            "target": self.target,
            "success": self.success,
            "distortion": self.distortion,
        }


class AffineClassifier:
    """k-way linear classifier on the box [0,1]^d: logits f(x) = W x + b.

    Prediction is argmax of the logits with ties broken toward the lowest
    class index. Softmax cross-entropy gradients are analytic.
    """

    def __init__(self, weights, biases):
        w = np.asarray(weights, dtype=float)
        b = np.asarray(biases, dtype=float)
        if w.ndim != 2:
            raise ValueError(f"weight matrix must be 2-D, got shape {w.shape}")
        if b.shape != (w.shape[0],):
            raise ValueError(f"bias shape {b.shape} does not match {w.shape[0]} classes")
        if not (np.isfinite(w).all() and np.isfinite(b).all()):
            raise ValueError("classifier parameters must be finite")
        self.weights = w
        self.biases = b
        self.k = w.shape[0]
        self.dim = w.shape[1]

    def logits(self, x) -> np.ndarray:
        return self.weights @ np.asarray(x, float) + self.biases

    def softmax(self, x) -> np.ndarray:
        z = self.logits(x)
        z = z - z.max()
        e = np.exp(z)
        return e / e.sum()

    def predict(self, x) -> int:
        return int(np.argmax(self.logits(x)))  # argmax takes the lowest index on ties

    def grad_ce(self, x, target: int) -> np.ndarray:
        """Gradient in x of the cross-entropy loss toward `target`."""
        s = self.softmax(x)
        s[target] -= 1.0
        return self.weights.T @ s

    def to_json(self) -> str:
        return json.dumps({"W": self.weights.tolist(), "b": self.biases.tolist()})

    @classmethod
    def from_json(cls, text: str) -> "AffineClassifier":
        obj = json.loads(text)
        if not isinstance(obj, dict) or "W" not in obj or "b" not in obj:
            raise ValueError('classifier spec must be an object with "W" and "b"')
        return cls(obj["W"], obj["b"])


def _finish(clf, x, x_adv, target, budget, norm) -> AdversarialExample:
    x = np.asarray(x, float)
    x_adv = np.asarray(x_adv, float)
    dist = distortion(x, x_adv, norm)
    # slack absorbs float noise when a step lands exactly on the ball edge
    within = dist <= budget.epsilon * (1.0 + 1e-12) + 1e-15
    success = clf.predict(x_adv) == target and within
    return AdversarialExample(x=x, x_adv=x_adv, target=target, success=success, distortion=dist)


def targeted_deepfool(
    clf: AffineClassifier, x, target: int, budget: AttackBudget | None = None,
    overshoot: float = 1.02,
) -> AdversarialExample:
    """Move toward the target-vs-source decision boundary along the fixed
    direction w' = grad f_target - grad f_source, overshooting each applied
    step so the iterate actually crosses instead of landing on the tie."""
    budget = budget or AttackBudget(norm=L2)
    x = np.asarray(x, float)
    source = clf.predict(x)
    if source == target:
        raise ValueError(f"input is already predicted as class {target}")
    w_prime = clf.weights[target] - clf.weights[source]
    denom = float(w_prime @ w_prime)
    x_adv = x.copy()
    if denom > 1e-30:
        for _ in range(budget.max_iters):
            if clf.predict(x_adv) == target:
                break
            z = clf.logits(x_adv)
            f_prime = float(z[target] - z[source])
            x_adv = x_adv + overshoot * (abs(f_prime) / denom) * w_prime
    return _finish(clf, x, x_adv, target, budget, L2)


def targeted_fgsm(
    clf: AffineClassifier, x, target: int, budget: AttackBudget
) -> AdversarialExample:
    """One signed-gradient step against the cross-entropy toward the target,
    clipped to the input box. sign(0) is taken as 0 on dead coordinates."""
    if not np.isfinite(budget.epsilon):
        raise ValueError("fgsm requires a finite epsilon")
    x = np.asarray(x, float)
    g = clf.grad_ce(x, target)
    x_adv = np.clip(x - budget.epsilon * np.sign(g), 0.0, 1.0)
    return _finish(clf, x, x_adv, target, budget, LINF)


def targeted_pgd(
    clf: AffineClassifier, x, target: int, budget: AttackBudget,
    step_alpha: float | None = None, return_trajectory: bool = False,
):
    """Iterated signed-gradient steps projected onto the epsilon ball around
    x intersected with the input box; stops early once the target is hit."""
    x = np.asarray(x, float)
    if step_alpha is None:
        step_alpha = (
            2.5 * budget.epsilon / budget.max_iters if np.isfinite(budget.epsilon) else 0.05
        )
    if not step_alpha > 0.0:
        raise ValueError(f"step_alpha must be > 0, got {step_alpha}")
    lo = np.maximum(x - budget.epsilon, 0.0)
    hi = np.minimum(x + budget.epsilon, 1.0)
    x_adv = x.copy()
    trajectory = [x_adv.copy()]
    for _ in range(budget.max_iters):
        if clf.predict(x_adv) == target:
            break
        g = clf.grad_ce(x_adv, target)
        x_adv = np.clip(x_adv - step_alpha * np.sign(g), lo, hi)
        trajectory.append(x_adv.copy())
    result = _finish(clf, x, x_adv, target, budget, LINF)
    if return_trajectory:
        return result, trajectory
    return result


def targeted_cw(
    clf: AffineClassifier, x, target: int, budget: AttackBudget | None = None,
    kappa: float = 0.0, binary_search_steps: int = 8, opt_steps: int = 1000,
) -> AdversarialExample:
    """Carlini-Wagner L2: minimize ||half(tanh(w)+1) - x||^2 + c * hinge by
    fixed-step gradient descent on w, tuning c by bisection on a log scale.
    The best (smallest-distortion) successful iterate across rounds wins."""
    budget = budget or AttackBudget(norm=L2)
    x = np.asarray(x, float)
    if np.any(x < 0.0) or np.any(x > 1.0):
        raise ValueError("cw requires inputs inside the box [0,1]^d")
    x0 = np.clip(x, 1e-6, 1.0 - 1e-6)
    w_init = np.arctanh(2.0 * x0 - 1.0)
    lo_c, hi_c = 1e-3, 1e6
    steps_per_round = max(1, opt_steps // max(1, binary_search_steps))
    best: np.ndarray | None = None
    best_dist = np.inf
    last = x.copy()
    for _ in range(binary_search_steps):
        c = float(np.sqrt(lo_c * hi_c))
        w = w_init.copy()
        round_hit = False
        for _ in range(steps_per_round):
            th = np.tanh(w)
            xc = 0.5 * (th + 1.0)
            z = clf.logits(xc)
            others = np.delete(z, target)
            margin = float(others.max() - z[target])
            g_x = 2.0 * (xc - x)
            if margin > -kappa:
                rival = int(np.argmax(np.where(np.arange(clf.k) == target, -np.inf, z)))
                g_x = g_x + c * (clf.weights[rival] - clf.weights[target])
            w = w - 0.01 * g_x * 0.5 * (1.0 - th * th)
            if clf.predict(xc) == target:
                round_hit = True
                d = float(np.linalg.norm(xc - x))
                if d < best_dist:
                    best, best_dist = xc.copy(), d
            last = xc
        if round_hit:
            hi_c = c
        else:
            lo_c = c
    x_adv = best if best is not None else last
    return _finish(clf, x, x_adv, target, budget, L2)


ATTACKS = {
    "deepfool": targeted_deepfool,
    "fgsm": targeted_fgsm,
    "pgd": targeted_pgd,
    "cw": targeted_cw,
}


def attack_targets(
    clf: AffineClassifier, x, budget: AttackBudget, attack: str
) -> dict[int, AdversarialExample]:
    """Run the chosen attack once per non-source class; the cached examples
    serve both reachability marking and the final emission, so a class never
    flips from reachable to failed between the two."""
    if attack not in ATTACKS:
        raise ValueError(f"unknown attack {attack!r}; choose from {sorted(ATTACKS)}")
    x = np.asarray(x, float)
    source = clf.predict(x)
    out: dict[int, AdversarialExample] = {}
    for j in range(clf.k):
        if j == source:
            continue
        out[j] = ATTACKS[attack](clf, x, j, budget)
    return out


def reachable_set(backend, x_or_class, budget: AttackBudget | None = None,
                  attack: str = "deepfool", rng=None) -> ReachableSet:
    """Mark every class a targeted attack can reach within the budget; the
    source class is always included. Oracle backends sample their table."""
    if isinstance(backend, SyntheticOracle):
        return backend.sample(int(x_or_class), rng=rng)
    x = np.asarray(x_or_class, float)
    source = backend.predict(x)
    mask = 1 << source
    if budget is None:
        budget = AttackBudget(norm=ATTACK_NORMS[attack])
    for j, ex in attack_targets(backend, x, budget, attack).items():
        if ex.success:
            mask |= 1 << j
    return ReachableSet(mask=mask, source=source, k=backend.k)


class SyntheticOracle:
    """Ground-truth reachability: per class, a table of subsets with draw
    probabilities. Sampling inverts the CDF over masks in ascending order and
    consumes exactly one uniform, so draws are reproducible stream by stream.

    The instance owns an RNG derived from its seed; callers that parallelize
    pass their own per-item stream instead.
    """

    def __init__(self, table, seed: int = 0):
        # table: per class, iterable of (mask, prob)
        self.k = len(table)
        if self.k < 2:
            raise ValueError("oracle needs at least 2 classes")
        rows = []
        for i, row in enumerate(table):
            pairs = sorted((int(m), float(p)) for m, p in dict(row).items())
            total = 0.0
            for mask, prob in pairs:
                if prob < 0.0:
                    raise ValueError(f"class {i}: negative probability {prob}")
                if not mask >> i & 1:
                    raise ValueError(f"class {i}: subset {mask:#x} omits the class itself")
                if mask >> self.k:
                    raise ValueError(f"class {i}: subset {mask:#x} exceeds k={self.k}")
                total += prob
            if abs(total - 1.0) > 1e-9:
                raise SumNotOneError(f"class {i}: subset probabilities sum to {total!r}")
            masks = np.array([m for m, _ in pairs], dtype=np.int64)
            cdf = np.cumsum([p for _, p in pairs])
            cdf[-1] = 1.0
            rows.append((masks, cdf))
        self._rows = rows
        self.seed = seed
        self.rng = stream(seed, "oracle")

    def sample(self, class_i: int, rng=None) -> ReachableSet:
        masks, cdf = self._rows[class_i]
        u = (rng if rng is not None else self.rng).random()
        idx = int(np.searchsorted(cdf, u, side="right"))
        idx = min(idx, len(masks) - 1)
        return ReachableSet(mask=int(masks[idx]), source=class_i, k=self.k)

    def table_rows(self) -> list[list[tuple[int, float]]]:
        out = []
        for masks, cdf in self._rows:
            probs = np.diff(np.concatenate(([0.0], cdf)))
            out.append([(int(m), float(p)) for m, p in zip(masks, probs)])
        return out

    @classmethod
    def full_reach(cls, k: int, seed: int = 0) -> "SyntheticOracle":
        full = (1 << k) - 1
        return cls([{full: 1.0} for _ in range(k)], seed=seed)

    def to_json(self) -> str:
        payload = []
        for row in self.table_rows():
            payload.append(
                [
                    {"subset": [j for j in range(self.k) if m >> j & 1], "prob": p}
                    for m, p in row
                ]
            )
        return json.dumps(payload)

    @classmethod
    def from_json(cls, text: str, seed: int = 0) -> "SyntheticOracle":
        obj = json.loads(text)
        if not isinstance(obj, list):
            raise ValueError("oracle spec must be a per-class list of subset entries")
        table = []
        for row in obj:
            entry = {}
            for item in row:
                classes = item["subset"]
                mask = 0
                for j in classes:
                    mask |= 1 << int(j)
                entry[mask] = entry.get(mask, 0.0) + float(item["prob"])
            table.append(entry)
        return cls(table, seed=seed)
