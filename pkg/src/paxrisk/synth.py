"""Synthetic passenger datasets with a known ground-truth risk surface.

The generator samples traits, combines configured log-odds offsets into a
per-record true probability, and calibrates the intercept by bisection so
the mean probability hits the target marginal rate. The truth manifest it
emits doubles as a verification oracle for the model study.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .schema import Dataset, Provenance


class GeneratorError(ValueError):
    """Raised for invalid generator configuration."""


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-np.asarray(x, dtype=float)))


@dataclass(frozen=True)
class StepFunction:
    """Right-continuous step function: value[i] applies on [breaks[i-1], breaks[i])."""

    breaks: tuple[float, ...]
    values: tuple[float, ...]

    def __post_init__(self):
        if len(self.values) != len(self.breaks) + 1:
            raise GeneratorError("step function needs len(values) == len(breaks) + 1")
        if list(self.breaks) != sorted(self.breaks):
            raise GeneratorError("step function breaks must be ascending")

    def __call__(self, x) -> np.ndarray:
        idx = np.searchsorted(np.asarray(self.breaks, dtype=float),
                              np.asarray(x, dtype=float), side="right")
        return np.asarray(self.values, dtype=float)[idx]

    def to_dict(self) -> dict:
        return {"breaks": list(self.breaks), "values": list(self.values)}

    @staticmethod
    def from_dict(d: Mapping) -> "StepFunction":
        return StepFunction(breaks=tuple(d["breaks"]), values=tuple(d["values"]))


@dataclass(frozen=True)
class AgeBand:
    """Uniform integer ages on [low, high] drawn with probability `prob`."""

    low: int
    high: int
    prob: float


@dataclass(frozen=True)
class GeneratorConfig:
    n: int
    seed: int
    base_rate: float
    age_effect: StepFunction
    age_distribution: tuple[AgeBand, ...]
    level_frequencies: dict[str, dict[str, float]]
    level_effects: dict[str, dict[str, float]]
    # (occupation level, citizenship level) -> extra log-odds
    interaction_effects: tuple[tuple[str, str, float], ...] = ()
    # Optional occupation distribution conditional on citizenship group.
    occupation_given_citizenship: dict[str, dict[str, float]] = field(default_factory=dict)

    def __post_init__(self):
        if self.n < 1:
            raise GeneratorError(f"n must be >= 1, got {self.n}")
        if not 0.0 < self.base_rate < 1.0:
            raise GeneratorError("base_rate must lie strictly in (0, 1)")
        band_total = sum(b.prob for b in self.age_distribution)
        if abs(band_total - 1.0) > 1e-9:
            raise GeneratorError(f"age band probabilities sum to {band_total}, expected 1")
        for var, freqs in self.level_frequencies.items():
            total = sum(freqs.values())
            if abs(total - 1.0) > 1e-9:
                raise GeneratorError(f"{var} level frequencies sum to {total}, expected 1")
            unknown = set(self.level_effects.get(var, {})) - set(freqs)
            if unknown:
                raise GeneratorError(f"{var} effects reference unknown levels {sorted(unknown)}")
        for cit, table in self.occupation_given_citizenship.items():
            total = sum(table.values())
            if abs(total - 1.0) > 1e-9:
                raise GeneratorError(
                    f"occupation|citizenship={cit} frequencies sum to {total}, expected 1")

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "seed": self.seed,
            "base_rate": self.base_rate,
            "age_effect": self.age_effect.to_dict(),
            "age_distribution": [[b.low, b.high, b.prob] for b in self.age_distribution],
            "level_frequencies": {v: dict(f) for v, f in self.level_frequencies.items()},
            "level_effects": {v: dict(f) for v, f in self.level_effects.items()},
            "interaction_effects": [list(t) for t in self.interaction_effects],
            "occupation_given_citizenship": {
                c: dict(t) for c, t in self.occupation_given_citizenship.items()},
        }

    @staticmethod
    def from_dict(d: Mapping) -> "GeneratorConfig":
        return GeneratorConfig(
            n=int(d["n"]),
            seed=int(d["seed"]),
            base_rate=float(d["base_rate"]),
            age_effect=StepFunction.from_dict(d["age_effect"]),
            age_distribution=tuple(AgeBand(int(l), int(h), float(p))
                                   for l, h, p in d["age_distribution"]),
            level_frequencies={v: {k: float(p) for k, p in f.items()}
                               for v, f in d["level_frequencies"].items()},
            level_effects={v: {k: float(p) for k, p in f.items()}
                           for v, f in d["level_effects"].items()},
            interaction_effects=tuple((str(o), str(c), float(x))
                                      for o, c, x in d.get("interaction_effects", [])),
            occupation_given_citizenship={
                c: {k: float(p) for k, p in t.items()}
                for c, t in d.get("occupation_given_citizenship", {}).items()},
        )


@dataclass(frozen=True)
class TruthManifest:
    """Per-record true probabilities plus the config that produced them."""

    p_star: np.ndarray
    config: GeneratorConfig
    intercept: float
    achieved_rate: float

    def __post_init__(self):
        object.__setattr__(self, "p_star", np.asarray(self.p_star, dtype=float))
        self.p_star.flags.writeable = False

    @property
    def n(self) -> int:
        return len(self.p_star)

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "intercept": self.intercept,
            "achieved_rate": self.achieved_rate,
            "p_star": self.p_star.tolist(),
        }

    @staticmethod
    def from_dict(d: Mapping) -> "TruthManifest":
        return TruthManifest(
            p_star=np.array(d["p_star"], dtype=float),
            config=GeneratorConfig.from_dict(d["config"]),
            intercept=float(d["intercept"]),
            achieved_rate=float(d["achieved_rate"]),
        )


def true_probability(manifest: TruthManifest, index: int) -> float:
    """The generation-time probability for one record."""
    if not 0 <= index < manifest.n:
        raise IndexError(f"record index {index} out of range for n={manifest.n}")
    return float(manifest.p_star[index])


def _inverse_cdf_sample(rng: np.random.Generator, levels: list[str],
                        probs: np.ndarray, size: int) -> np.ndarray:
    """Deterministic categorical sampling via one uniform draw per record."""
    cum = np.cumsum(probs)
    cum[-1] = 1.0
    u = rng.random(size)
    idx = np.searchsorted(cum, u, side="right")
    return np.array([levels[i] for i in idx], dtype=object)


def _sorted_levels(freqs: Mapping[str, float]) -> tuple[list[str], np.ndarray]:
    levels = sorted(freqs)
    return levels, np.array([freqs[l] for l in levels], dtype=float)


def _calibrate_intercept(score: np.ndarray, base_rate: float,
                         tol: float = 1e-6) -> float:
    """Bisection for the intercept pinning mean(sigmoid(c + score)) to base_rate."""
    lo, hi = -30.0, 30.0
    f = lambda c: float(_sigmoid(c + score).mean()) - base_rate
    flo, fhi = f(lo), f(hi)
    if flo > 0 or fhi < 0:
        raise GeneratorError(
            "intercept search cannot bracket the target rate; effect magnitudes pathological")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        fmid = f(mid)
        if abs(fmid) <= tol:
            return mid
        if fmid < 0:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-13:
            break
    return 0.5 * (lo + hi)


def generate(cfg: GeneratorConfig) -> tuple[Dataset, TruthManifest]:
    """Sample a dataset and its truth manifest, deterministically per seed.

    Labels are independent Bernoulli draws with probability
    p*_i = sigmoid(intercept + age_effect(age_i) + level offsets + interaction
    offsets); the intercept is solved so mean(p*) equals base_rate.
    """
    rng = np.random.default_rng(cfg.seed)
    n = cfg.n

    # Ages: pick a band, then uniform integer within it.
    band_probs = np.array([b.prob for b in cfg.age_distribution], dtype=float)
    band_cum = np.cumsum(band_probs)
    band_cum[-1] = 1.0
    band_idx = np.searchsorted(band_cum, rng.random(n), side="right")
    u_age = rng.random(n)
    lows = np.array([b.low for b in cfg.age_distribution])
    highs = np.array([b.high for b in cfg.age_distribution])
    widths = highs[band_idx] - lows[band_idx] + 1
    age = (lows[band_idx] + np.floor(u_age * widths)).astype(np.int64)

    sex_levels, sex_probs = _sorted_levels(cfg.level_frequencies["sex"])
    sex = _inverse_cdf_sample(rng, sex_levels, sex_probs, n)

    cit_levels, cit_probs = _sorted_levels(cfg.level_frequencies["citizenship_group"])
    citizenship = _inverse_cdf_sample(rng, cit_levels, cit_probs, n)

    dec_levels, dec_probs = _sorted_levels(cfg.level_frequencies["declaration_status"])
    declaration_str = _inverse_cdf_sample(rng, dec_levels, dec_probs, n)
    declaration = np.array([int(v) for v in declaration_str], dtype=np.int64)

    # Occupation: optionally conditional on citizenship group.
    occ_marginal_levels, occ_marginal_probs = _sorted_levels(cfg.level_frequencies["occupation"])
    u_occ = rng.random(n)
    occupation = np.empty(n, dtype=object)
    for i in range(n):
        table = cfg.occupation_given_citizenship.get(str(citizenship[i]))
        if table is None:
            levels, probs = occ_marginal_levels, occ_marginal_probs
        else:
            levels, probs = _sorted_levels(table)
        cum = np.cumsum(probs)
        cum[-1] = 1.0
        occupation[i] = levels[int(np.searchsorted(cum, u_occ[i], side="right"))]

    visit_levels, visit_probs = _sorted_levels(cfg.level_frequencies["visit_reason"])
    visit = _inverse_cdf_sample(rng, visit_levels, visit_probs, n)

    score = cfg.age_effect(age)
    effects = cfg.level_effects
    for var, values in (("sex", sex), ("citizenship_group", citizenship),
                        ("occupation", occupation), ("visit_reason", visit)):
        offsets = effects.get(var, {})
        if offsets:
            score = score + np.array([offsets.get(str(v), 0.0) for v in values])
    dec_offsets = effects.get("declaration_status", {})
    if dec_offsets:
        score = score + np.array([dec_offsets.get(str(int(v)), 0.0) for v in declaration])
    for occ_level, cit_level, offset in cfg.interaction_effects:
        mask = (occupation == occ_level) & (citizenship == cit_level)
        score = score + offset * mask

    intercept = _calibrate_intercept(score, cfg.base_rate)
    p_star = _sigmoid(intercept + score)

    labels = (rng.random(n) < p_star).astype(np.int64)

    ds = Dataset(
        age=age,
        sex=sex,
        citizenship_group=citizenship,
        declaration_status=declaration,
        occupation=occupation,
        visit_reason=visit,
        non_compliant=labels,
        provenance=Provenance(kind="synthetic", detail=f"seed={cfg.seed}"),
    )
    manifest = TruthManifest(p_star=p_star, config=cfg, intercept=intercept,
                             achieved_rate=float(p_star.mean()))
    return ds, manifest


def save_manifest(manifest: TruthManifest, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_manifest(path) -> TruthManifest:
    with open(path, "r", encoding="utf-8") as fh:
        return TruthManifest.from_dict(json.load(fh))


def default_study_config(n: int = 3361, seed: int = 20150618,
                         base_rate: float = 0.065) -> GeneratorConfig:
    """The canonical synthetic study: stepped age risk with up-jumps near 20
    and 45 and a fall at 60, an occupation-by-citizenship interaction cell,
    and one deliberately rare level per multi-level trait so the rare-level
    collapsing rule is always exercised.

    Effect magnitudes are choices recorded in the manifest, not published
    values.
    """
    return GeneratorConfig(
        n=n,
        seed=seed,
        base_rate=base_rate,
        age_effect=StepFunction(breaks=(20.0, 45.0, 60.0),
                                values=(0.0, 0.8, 1.6, 0.2)),
        age_distribution=(
            AgeBand(0, 17, 0.08),
            AgeBand(18, 29, 0.27),
            AgeBand(30, 44, 0.30),
            AgeBand(45, 59, 0.20),
            AgeBand(60, 85, 0.15),
        ),
        level_frequencies={
            "sex": {"male": 0.52, "female": 0.48},
            "citizenship_group": {"group_x": 0.42, "group_y": 0.33,
                                  "group_z": 0.24, "group_w": 0.01},
            "declaration_status": {"0": 0.65, "1": 0.35},
            "occupation": {"professional": 0.24, "clerical": 0.21, "trades": 0.18,
                           "labourer": 0.16, "retired": 0.12, "student": 0.08,
                           "courier": 0.01},
            "visit_reason": {"holiday": 0.34, "visiting_family": 0.30,
                             "business": 0.20, "education": 0.15,
                             "conference": 0.01},
        },
        level_effects={
            "sex": {"male": 0.25},
            "citizenship_group": {"group_y": 0.3, "group_z": -0.2},
            "declaration_status": {"1": -0.45},
            # trades sits just above labourer at baseline; the interaction
            # below flips that ordering inside group_y only.
            "occupation": {"labourer": 0.7, "trades": 0.8, "retired": -0.4,
                           "professional": -0.1, "student": 0.2, "courier": 0.5},
            "visit_reason": {"visiting_family": 0.55, "business": -0.3,
                             "education": 0.1, "conference": 0.2},
        },
        interaction_effects=(("labourer", "group_y", 1.1),),
        occupation_given_citizenship={
            "group_y": {"professional": 0.16, "clerical": 0.16, "trades": 0.20,
                        "labourer": 0.28, "retired": 0.10, "student": 0.09,
                        "courier": 0.01},
        },
    )
