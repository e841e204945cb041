"""Two-armed plan selection: arm 0 runs the full plan, arm 1 the reduced plan.

All three learners (Thompson sampling, UCB1, epsilon-greedy) see the same
instability boost on the full-plan score whenever the rolling board pass rate
drops below the stability threshold.
"""
from __future__ import annotations

import enum
import math
from collections import deque
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .config import load_config
from .exceptions import EmptyTrace, InvalidStatus, PolicyError, UnknownReward

FULL, REDUCED = 0, 1

ALGORITHMS = ("thompson", "ucb", "epsilon_greedy", "full", "reduced")


class UnitStatus(str, enum.Enum):
    CLEAN = "CLEAN"
    DETECTED = "DETECTED"
    ESCAPED = "ESCAPED"


@dataclass(frozen=True)
class PolicyConfig:
    w: int = 100
    tau: float = 0.93
    beta_sens: float = 10.0
    kappa: float = 10.0
    prior_full: tuple = (5.0, 1.0)
    prior_red: tuple = (1.0, 1.0)
    algorithm: str = "thompson"
    epsilon_explore: float = 0.1
    ucb_c: float = math.sqrt(2.0)
    delta: float = 8.5e-5
    seed: int = 0
    freeze_full_arm: bool = False
    observed_only: bool = False

    def __post_init__(self):
        object.__setattr__(self, "prior_full", tuple(float(v) for v in self.prior_full))
        object.__setattr__(self, "prior_red", tuple(float(v) for v in self.prior_red))
        if int(self.w) != self.w or self.w < 1:
            raise PolicyError("window w must be an integer >= 1")
        object.__setattr__(self, "w", int(self.w))
        if not 0.0 <= self.tau <= 1.0:
            raise PolicyError("tau must lie in [0, 1]")
        if self.beta_sens < 0:
            raise PolicyError("beta_sens must be >= 0")
        if self.kappa <= 0:
            raise PolicyError("kappa must be > 0")
        for prior in (self.prior_full, self.prior_red):
            if len(prior) != 2 or min(prior) <= 0:
                raise PolicyError("priors must be two positive reals")
        if self.algorithm not in ALGORITHMS:
            raise PolicyError(f"unknown algorithm {self.algorithm!r}; choose from {ALGORITHMS}")
        if not 0.0 <= self.epsilon_explore <= 1.0:
            raise PolicyError("epsilon_explore must lie in [0, 1]")
        if self.ucb_c <= 0:
            raise PolicyError("ucb_c must be > 0")
        if not 0.0 <= self.delta <= 1.0:
            raise PolicyError("delta must lie in [0, 1]")

    @classmethod
    def from_dict(cls, d):
        aliases = {"window": "w", "beta": "beta_sens", "algo": "algorithm"}
        d = {aliases.get(k, k).replace("-", "_"): v for k, v in d.items()}
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise PolicyError(f"unknown policy settings: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_file(cls, path, section="policy"):
        d = load_config(path)
        return cls.from_dict(d.get(section, d))

    def to_dict(self):
        d = asdict(self)
        d["prior_full"] = list(self.prior_full)
        d["prior_red"] = list(self.prior_red)
        return d


@dataclass(frozen=True)
class ArmState:
    alpha: float
    beta: float
    pulls: int = 0
    reward_sum: float = 0.0
    last_sample: float = math.nan

    @property
    def mean_reward(self):
        return self.reward_sum / self.pulls if self.pulls else math.nan

    @property
    def posterior_mean(self):
        return self.alpha / (self.alpha + self.beta)


def initial_arms(cfg):
    return (ArmState(*cfg.prior_full), ArmState(*cfg.prior_red))


class StabilityWindow:
    """Rolling board pass rate over the last ``w`` units (1.0 while empty)."""

    def __init__(self, w, outcomes=()):
        self.w = int(w)
        self.buffer = deque(maxlen=self.w)
        self._passes = 0
        for passed in outcomes:
            self.push(passed)

    def push(self, passed):
        passed = bool(passed)
        if len(self.buffer) == self.w:
            self._passes -= self.buffer[0]
        self.buffer.append(passed)
        self._passes += passed
        return self

    @property
    def rho(self):
        if not self.buffer:
            return 1.0
        return self._passes / len(self.buffer)

    def copy(self):
        return StabilityWindow(self.w, self.buffer)

    def __len__(self):
        return len(self.buffer)


def update_window(s, passed):
    """Return a new window with ``passed`` appended."""
    return s.copy().push(passed)


@dataclass(frozen=True)
class Decision:
    arm: int
    theta_full_raw: float
    theta_full_boosted: float
    theta_red: float
    rho: float
    stable: bool


def beta_sample(rng, a, b):
    """Beta(a, b) draw built from two Gamma draws."""
    x = rng.standard_gamma(a)
    y = rng.standard_gamma(b)
    total = x + y
    if total == 0.0:
        return a / (a + b)
    return x / total


def instability_boost(rho, cfg):
    if rho >= cfg.tau:
        return 0.0
    return cfg.beta_sens * (cfg.tau - rho)


def _argmax(full_score, red_score):
    return REDUCED if red_score > full_score else FULL


def select_arm(arms, s, cfg, rng, t=None):
    """Choose a plan for the next unit.

    ``t`` is the 1-based round used by UCB's exploration term; it defaults to
    one more than the total number of pulls.
    """
    rho = s.rho if isinstance(s, StabilityWindow) else float(s)
    stable = rho >= cfg.tau
    boost = instability_boost(rho, cfg)
    full, red = arms
    algo = cfg.algorithm

    if algo == "thompson":
        raw = beta_sample(rng, full.alpha, full.beta)
        other = beta_sample(rng, red.alpha, red.beta)
    elif algo == "ucb":
        if t is None:
            t = full.pulls + red.pulls + 1
        log_t = math.log(max(t, 1))

        def score(a):
            if a.pulls == 0:
                return math.inf
            return a.mean_reward + cfg.ucb_c * math.sqrt(log_t / a.pulls)

        raw, other = score(full), score(red)
    elif algo == "epsilon_greedy":
        explore = rng.random() < cfg.epsilon_explore
        pick = int(rng.integers(2))
        raw = math.inf if full.pulls == 0 else full.mean_reward
        other = math.inf if red.pulls == 0 else red.mean_reward
        if explore:
            return Decision(pick, raw, raw + boost, other, rho, stable)
    elif algo == "full":
        return Decision(FULL, 1.0, 1.0, 0.0, rho, stable)
    else:
        return Decision(REDUCED, 0.0, 0.0, 1.0, rho, stable)

    boosted = raw + boost
    return Decision(_argmax(boosted, other), raw, boosted, other, rho, stable)


def reward(arm, unit_status, cfg):
    status = UnitStatus(unit_status)
    if arm == FULL:
        if status is UnitStatus.ESCAPED:
            raise InvalidStatus("the full plan cannot let a historical defect escape")
        return 0.0
    if arm != REDUCED:
        raise InvalidStatus(f"unknown arm {arm!r}")
    if status is UnitStatus.CLEAN:
        return 1.0
    if status is UnitStatus.DETECTED:
        return 0.5
    return -float(cfg.kappa)


def update_posterior(a, r, cfg, freeze=False):
    """Pseudo-count update: 1 -> alpha+1, 0.5 -> both +0.5, 0 -> beta+1, -kappa -> beta+kappa."""
    if r == 1.0:
        da, db = 1.0, 0.0
    elif r == 0.5:
        da, db = 0.5, 0.5
    elif r == 0.0:
        da, db = 0.0, 1.0
    elif r == -cfg.kappa:
        da, db = 0.0, float(cfg.kappa)
    else:
        raise UnknownReward(f"reward {r!r} is not one of 0, 0.5, 1, -kappa")
    if freeze:
        da = db = 0.0
    return replace(a, alpha=a.alpha + da, beta=a.beta + db, pulls=a.pulls + 1, reward_sum=a.reward_sum + r)


def regret(trace):
    """Cumulative regret against the best arm's empirical mean reward."""
    trace = list(trace)
    if not trace:
        raise EmptyTrace("regret needs at least one round")
    sums, counts = {}, {}
    for arm, r in trace:
        sums[arm] = sums.get(arm, 0.0) + r
        counts[arm] = counts.get(arm, 0) + 1
    best = max(sums[a] / counts[a] for a in sums)
    return len(trace) * best - math.fsum(r for _, r in trace)


@dataclass
class PolicyState:
    """Mutable learner state carried along one stream."""

    cfg: PolicyConfig
    arms: list = field(default=None)
    window: StabilityWindow = field(default=None)
    rng: np.random.Generator = field(default=None)
    t: int = 0

    def __post_init__(self):
        if self.arms is None:
            self.arms = list(initial_arms(self.cfg))
        if self.window is None:
            self.window = StabilityWindow(self.cfg.w)
        if self.rng is None:
            self.rng = np.random.default_rng(self.cfg.seed)

    def decide(self):
        self.t += 1
        d = select_arm(self.arms, self.window, self.cfg, self.rng, self.t)
        if self.cfg.algorithm == "thompson":
            self.arms[FULL] = replace(self.arms[FULL], last_sample=d.theta_full_raw)
            self.arms[REDUCED] = replace(self.arms[REDUCED], last_sample=d.theta_red)
        return d

    def update(self, arm, status, passed):
        r = reward(arm, status, self.cfg)
        freeze = arm == FULL and self.cfg.freeze_full_arm
        self.arms[arm] = update_posterior(self.arms[arm], r, self.cfg, freeze=freeze)
        self.window.push(passed)
        return r
