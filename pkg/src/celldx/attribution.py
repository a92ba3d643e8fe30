"""Shapley attributions for the encoder and both decoders (KernelSHAP).

Missing feature groups are imputed marginally from a background sample;
coalition values are fit by weighted least squares under the Shapley
kernel with the full and empty coalitions held as equality constraints,
so efficiency (base + sum(phi) = f(x)) is exact by construction.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .diagnosis import DiagnosisArtifact, window_features
from .errors import NumericalError, ValidationError
from .prognosis import PrognosisArtifact

RIDGE_LAMBDA = 1e-9
EXACT_GROUP_LIMIT = 12
EFFICIENCY_TOL = 1e-8

STATE_NAMES = ("x0", "y0", "cp", "cn")
PROGNOSIS_FEATURE_NAMES = ("cp", "cn", "x0", "y0", "efc", "soh")


@dataclass(frozen=True)
class FeatureGrouping:
    """Named partition of the input indices into ≥ 2 groups."""

    names: tuple[str, ...]
    indices: tuple[tuple[int, ...], ...]
    n_features: int

    def __post_init__(self):
        if len(self.names) != len(self.indices) or len(self.names) < 2:
            raise ValidationError("need >= 2 named groups")
        flat = sorted(i for grp in self.indices for i in grp)
        if flat != list(range(self.n_features)):
            raise ValidationError("groups must partition the feature indices exactly")

    def __len__(self) -> int:
        return len(self.names)

    @classmethod
    def from_dict(cls, groups: dict, n_features: int) -> "FeatureGrouping":
        return cls(
            names=tuple(groups),
            indices=tuple(tuple(int(i) for i in idx) for idx in groups.values()),
            n_features=n_features,
        )

    @classmethod
    def singletons(cls, names) -> "FeatureGrouping":
        names = tuple(names)
        return cls(names=names, indices=tuple((i,) for i in range(len(names))),
                   n_features=len(names))

    def mask(self, member: np.ndarray) -> np.ndarray:
        """Group membership (bool, per group) -> feature mask (bool, per feature)."""
        out = np.zeros(self.n_features, dtype=bool)
        for on, idx in zip(member, self.indices):
            if on:
                out[list(idx)] = True
        return out


def encoder_grouping(p: int, include_c_rate: bool) -> FeatureGrouping:
    """Voltage / capacity / EFC (/ C-rate) groups over the window features."""
    groups = {"voltage": range(p), "capacity": [p], "efc": [p + 1]}
    if include_c_rate:
        groups["c_rate"] = [p + 2]
    return FeatureGrouping.from_dict(groups, p + 2 + (1 if include_c_rate else 0))


@dataclass(frozen=True)
class Attribution:
    """One explained prediction: base + sum(phi) = fx."""

    base_value: float
    phi: np.ndarray
    fx: float
    group_names: tuple[str, ...]
    ridge_fallback: bool = False

    def __post_init__(self):
        gap = abs(self.base_value + float(np.sum(self.phi)) - self.fx)
        if not gap < EFFICIENCY_TOL:
            raise NumericalError(f"efficiency violated by {gap:.3e}")


def _kernel_weight(g: int, s: int) -> float:
    return (g - 1) / (math.comb(g, s) * s * (g - s))


def _enumerate_coalitions(g: int):
    members = []
    weights = []
    for s in range(1, g):
        w = _kernel_weight(g, s)
        for combo in itertools.combinations(range(g), s):
            z = np.zeros(g, dtype=bool)
            z[list(combo)] = True
            members.append(z)
            weights.append(w)
    return np.array(members), np.array(weights)


def _sample_coalitions(g: int, n_samples: int, rng: np.random.Generator):
    """Budgeted coalition draw: fully enumerate coalition sizes while the
    budget covers them (with exact kernel mass), then sample the rest in
    proportion to the remaining mass."""
    members: list[np.ndarray] = []
    weights: list[float] = []
    sizes = list(range(1, g))
    # complementary sizes carry equal per-coalition weight; walk inward
    order: list[tuple[int, ...]] = []
    lo, hi = 1, g - 1
    while lo < hi:
        order.append((lo, hi))
        lo, hi = lo + 1, hi - 1
    if lo == hi:
        order.append((lo,))

    budget = n_samples
    remaining: list[int] = []
    for pair in order:
        need = sum(math.comb(g, s) for s in pair)
        if need <= budget and not remaining:
            for s in pair:
                w = _kernel_weight(g, s)
                for combo in itertools.combinations(range(g), s):
                    z = np.zeros(g, dtype=bool)
                    z[list(combo)] = True
                    members.append(z)
                    weights.append(w)
            budget -= need
        else:
            remaining.extend(pair)
    if remaining and budget > 0:
        mass = np.array([math.comb(g, s) * _kernel_weight(g, s) for s in remaining])
        probs = mass / mass.sum()
        per_sample = mass.sum() / budget
        drawn_sizes = rng.choice(remaining, size=budget, p=probs)
        for s in drawn_sizes:
            z = np.zeros(g, dtype=bool)
            z[rng.choice(g, size=s, replace=False)] = True
            members.append(z)
            weights.append(per_sample)
    return np.array(members), np.array(weights)


def kernel_shap(
    f,
    x,
    background,
    groups: FeatureGrouping,
    n_samples: int | None = None,
    seed: int = 0,
) -> Attribution:
    """Shapley attribution of ``f`` at ``x`` over feature groups.

    ``f`` maps a (rows, n_features) array to (rows,) outputs so imputed
    coalitions evaluate in one call. All coalitions are enumerated up to
    12 groups; beyond that a seeded sample of ``n_samples`` is used.
    """
    x = np.asarray(x, dtype=float).ravel()
    bg = np.atleast_2d(np.asarray(background, dtype=float))
    if bg.size == 0:
        raise ValidationError("background must be non-empty")
    if x.shape[0] != groups.n_features or bg.shape[1] != groups.n_features:
        raise ValidationError("instance/background width does not match the grouping")
    g = len(groups)

    if g <= EXACT_GROUP_LIMIT:
        members, weights = _enumerate_coalitions(g)
    else:
        if n_samples is None:
            n_samples = max(2 * g + 2, 2048)
        if n_samples < 2 * g + 2:
            raise ValidationError(f"need n_samples >= {2 * g + 2}, got {n_samples}")
        members, weights = _sample_coalitions(g, n_samples, np.random.default_rng(seed))

    base = float(np.mean(f(bg)))
    fx = float(f(x[None, :])[0])

    # one batched evaluation: every coalition crossed with every background row
    n_c, n_b = len(members), len(bg)
    imputed = np.repeat(bg[None, :, :], n_c, axis=0)  # (n_c, n_b, d)
    for ci, z in enumerate(members):
        feat = groups.mask(z)
        imputed[ci][:, feat] = x[feat]
    values = np.asarray(f(imputed.reshape(n_c * n_b, -1)), dtype=float)
    v = values.reshape(n_c, n_b).mean(axis=1)

    # eliminate the last phi through the efficiency constraint
    zmat = members.astype(float)
    target = v - base - zmat[:, -1] * (fx - base)
    a = zmat[:, :-1] - zmat[:, -1:]
    aw = a * weights[:, None]
    lhs = aw.T @ a
    rhs = aw.T @ target
    ridge = False
    try:
        head = np.linalg.solve(lhs, rhs)
        if not np.all(np.isfinite(head)):
            raise np.linalg.LinAlgError
    except np.linalg.LinAlgError:
        ridge = True
        head = np.linalg.solve(lhs + RIDGE_LAMBDA * np.eye(g - 1), rhs)
    phi = np.empty(g)
    phi[:-1] = head
    phi[-1] = (fx - base) - head.sum()
    return Attribution(base_value=base, phi=phi, fx=fx,
                       group_names=groups.names, ridge_fallback=ridge)


def brute_force_shapley(f, x, background, groups: FeatureGrouping) -> np.ndarray:
    """Textbook Shapley values by direct coalition averaging (test oracle)."""
    x = np.asarray(x, dtype=float).ravel()
    bg = np.atleast_2d(np.asarray(background, dtype=float))
    g = len(groups)

    def value(subset: frozenset) -> float:
        z = np.zeros(g, dtype=bool)
        z[list(subset)] = True
        feat = groups.mask(z)
        rows = bg.copy()
        rows[:, feat] = x[feat]
        return float(np.mean(f(rows)))

    phi = np.zeros(g)
    for i in range(g):
        others = [j for j in range(g) if j != i]
        for s in range(g):
            for combo in itertools.combinations(others, s):
                pre = value(frozenset(combo))
                post = value(frozenset(combo) | {i})
                phi[i] += math.factorial(s) * math.factorial(g - s - 1) / math.factorial(g) * (post - pre)
    return phi


@dataclass
class ExplanationTable:
    """Mean |phi| per group (rows) per explained output (columns)."""

    groups: tuple[str, ...]
    outputs: tuple[str, ...]
    mean_abs_phi: np.ndarray
    attributions: list = field(repr=False, default_factory=list)

    def to_csv(self) -> str:
        lines = ["group," + ",".join(self.outputs)]
        for gi, name in enumerate(self.groups):
            row = ",".join(repr(float(v)) for v in self.mean_abs_phi[gi])
            lines.append(f"{name},{row}")
        return "\n".join(lines) + "\n"


def explain_encoder(
    artifact: DiagnosisArtifact,
    segments,
    background: np.ndarray,
    n_samples: int | None = None,
    seed: int = 0,
) -> ExplanationTable:
    """Group attributions of every latent state over a segment sample."""
    model = artifact.model
    grouping = encoder_grouping(model.p, model.include_c_rate)
    feats = np.array([window_features(model, seg) for seg in segments])

    per_instance = []
    for row in feats:
        states = {}
        for si, name in enumerate(STATE_NAMES):
            f = lambda X, si=si: model.encode_batch(X).data[:, si]
            states[name] = kernel_shap(f, row, background, grouping,
                                       n_samples=n_samples, seed=seed)
        per_instance.append(states)
    table = np.array([
        [np.mean([abs(inst[name].phi[gi]) for inst in per_instance])
         for name in STATE_NAMES]
        for gi in range(len(grouping))
    ])
    return ExplanationTable(groups=grouping.names, outputs=STATE_NAMES,
                            mean_abs_phi=table, attributions=per_instance)


def parse_output_selector(artifact, output):
    """Resolve an output selector to (label, batched scalar function).

    Diagnosis artifacts expose "soh" and ("voltage", index); prognosis
    artifacts expose "cycle-life" and ("efc", index).
    """
    kind, idx = (output, None) if isinstance(output, str) else (output[0], int(output[1]))
    if isinstance(artifact, DiagnosisArtifact):
        model = artifact.model
        if kind == "soh" and idx is None:
            return "soh", lambda X: model.decode_batch(_t(X))[1].data[:, 0] / model.q_nominal
        if kind == "voltage" and idx is not None:
            if not (0 <= idx < model.m):
                raise ValidationError(f"voltage index {idx} outside grid of {model.m}")
            return f"voltage[{idx}]", lambda X: model.decode_batch(_t(X))[0].data[:, idx]
    elif isinstance(artifact, PrognosisArtifact):
        model = artifact.model
        if kind == "cycle-life" and idx is None:
            return "cycle_life", lambda X: model.forward_batch(X)[0].data[:, -1]
        if kind == "efc" and idx is not None:
            if not (0 <= idx < model.k):
                raise ValidationError(f"efc index {idx} outside horizon of {model.k}")
            return f"efc[{idx}]", lambda X: model.forward_batch(X)[0].data[:, idx]
    else:
        raise ValidationError(f"cannot explain {type(artifact).__name__}")
    raise ValidationError(f"output selector {output!r} is not valid for this artifact")


def _t(x):
    from .autodiff import Tensor

    return Tensor(np.asarray(x, dtype=float))


def explain_decoder(
    artifact,
    states: np.ndarray,
    background: np.ndarray,
    output,
    n_samples: int | None = None,
    seed: int = 0,
) -> ExplanationTable:
    """Singleton-group attributions of one decoder output."""
    label, f = parse_output_selector(artifact, output)
    names = STATE_NAMES if isinstance(artifact, DiagnosisArtifact) else PROGNOSIS_FEATURE_NAMES
    grouping = FeatureGrouping.singletons(names)
    states = np.atleast_2d(np.asarray(states, dtype=float))

    per_instance = [
        kernel_shap(f, row, background, grouping, n_samples=n_samples, seed=seed)
        for row in states
    ]
    table = np.array([
        [np.mean([abs(inst.phi[gi]) for inst in per_instance])]
        for gi in range(len(grouping))
    ])
    return ExplanationTable(groups=grouping.names, outputs=(label,),
                            mean_abs_phi=table, attributions=per_instance)
