"""The search loop: sample, decode, estimate, reward, update.

Episode evaluations within a batch may run concurrently (the
estimators are pure and the engines cache under locks); policy updates
are serialized.  Every random draw is keyed by (run seed, episode
index), so traces are reproducible regardless of worker count.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .bridge import (AccuracyRequest, AccuracyResponse, TrainerClient,
                     TrainerError)
from .model import CalibrationProfile, Network
from .pareto import pareto_indices
from .pce import (LayerInfeasibleError, PieEngine, ScoreWeights,
                  ValidationError, characterize_network, score)
from .pie import PieConfig
from .policy import (DecodeRejection, EpisodeSample, PolicyConfig,
                     PolicyState, SearchSpace, decode, reward, sample, update)
from .surrogate import surrogate_accuracy


@dataclass(frozen=True)
class ShapingConfig:
    """Turns the raw cost score into the reward bonus.

    The printed reward form rises with the score, which contradicts
    cost minimization if the raw weighted cost is used directly, so the
    default shapes it: xi_shaped = clamp(xi_max - xi, 0, xi_max).  Raw
    mode (xi_shaped = xi) is available for fidelity experiments.
    """
    xi_max: float = 2.0
    mode: str = "shaped"   # or "raw"

    def shaped(self, xi: float) -> float:
        if self.mode == "raw":
            return xi
        return min(max(self.xi_max - xi, 0.0), self.xi_max)


@dataclass(frozen=True)
class EpisodeRecord:
    eps: int
    actions: tuple
    A: float
    T: float
    B: float
    xi: float
    reward: float
    sw_flag: bool
    status: str            # ok | rejected | invalid | infeasible | estimator_error
    detail: str = ""
    weights_id: Optional[str] = None


@dataclass
class SearchResult:
    trace: list
    pareto: list
    policy: PolicyState

    def ok_records(self) -> list:
        return [r for r in self.trace if r.status == "ok"]


def reward_ema(records: Sequence[EpisodeRecord], decay: float = 0.9) -> list:
    """Exponential moving average of the reward along the trace."""
    out = []
    ema = None
    for r in records:
        ema = r.reward if ema is None else decay * ema + (1 - decay) * r.reward
        out.append(ema)
    return out


class SurrogateEstimator:
    """Deterministic accuracy stand-in; no weights, no process."""

    def __call__(self, net: Network, weights_id: Optional[str]) -> AccuracyResponse:
        return AccuracyResponse(A=surrogate_accuracy(net),
                                weights_id="surrogate", trained=net.sw_flag)


class TrainerEstimator:
    """Adapter from the search loop to a trainer child process."""

    def __init__(self, client: TrainerClient, dataset: str):
        self.client = client
        self.dataset = dataset

    def __call__(self, net: Network, weights_id: Optional[str]) -> AccuracyResponse:
        req = AccuracyRequest(net=net, dataset=self.dataset,
                              weights_id=None if net.sw_flag else weights_id)
        return self.client.query(req)


def run_search(space: SearchSpace, episodes: int, sw_n: int,
               policy_cfg: PolicyConfig, pie_cfg: PieConfig,
               profile: CalibrationProfile, weights: ScoreWeights,
               shaping: ShapingConfig, seed: int,
               estimator: Optional[Callable] = None,
               engine: Optional[PieEngine] = None,
               jobs: int = 1,
               quant_range: tuple = (2, 16)) -> SearchResult:
    """Loop Eps = 0..episodes-1 and return the trace, the non-dominated
    set over (A, T, B), and the final policy."""
    decisions = space.decisions()
    policy = PolicyState.initial(decisions)
    if estimator is None:
        estimator = SurrogateEstimator()
    if engine is None:
        engine = PieEngine(pie_cfg)
    arch_mask = tuple(d.arch for d in decisions)

    trace: list = []
    batch_samples: list = []
    window_arch: Optional[tuple] = None
    window_weights: Optional[str] = None

    def evaluate(eps: int, actions, sampled_mask) -> EpisodeRecord:
        sw = (eps % sw_n == 0)
        try:
            net = decode(actions, space, episode_id=eps, sw_n=sw_n)
        except DecodeRejection as e:
            return EpisodeRecord(eps=eps, actions=tuple(actions), A=0.0, T=0.0,
                                 B=0.0, xi=0.0, reward=0.0, sw_flag=sw,
                                 status="rejected", detail=e.reason)
        try:
            resp = estimator(net, window_weights)
        except TrainerError as e:
            return EpisodeRecord(eps=eps, actions=tuple(actions), A=0.0, T=0.0,
                                 B=0.0, xi=0.0, reward=0.0, sw_flag=sw,
                                 status="estimator_error", detail=str(e))
        try:
            report = characterize_network(net, pie_cfg, profile, engine=engine,
                                          quant_range=quant_range)
        except ValidationError as e:
            return EpisodeRecord(eps=eps, actions=tuple(actions), A=0.0, T=0.0,
                                 B=0.0, xi=0.0, reward=0.0, sw_flag=sw,
                                 status="invalid", detail=str(e))
        except LayerInfeasibleError as e:
            return EpisodeRecord(eps=eps, actions=tuple(actions), A=0.0, T=0.0,
                                 B=0.0, xi=0.0, reward=0.0, sw_flag=sw,
                                 status="infeasible", detail=str(e))
        xi = score(report.T, report.B, weights)
        r = reward(resp.A, shaping.shaped(xi))
        return EpisodeRecord(eps=eps, actions=tuple(actions), A=resp.A,
                             T=report.T, B=report.B, xi=xi, reward=r,
                             sw_flag=sw, status="ok",
                             weights_id=resp.weights_id)

    pool = ThreadPoolExecutor(max_workers=jobs) if jobs > 1 else None
    try:
        pending: list = []

        def flush_batch():
            nonlocal policy, window_weights
            if not pending:
                return
            # Trainer-backed runs evaluate in episode order: reuse
            # episodes depend on the weights their window anchor stored.
            # Pure estimators have no such dependency and may fan out.
            if pool is not None and not isinstance(estimator, TrainerEstimator):
                records = list(pool.map(lambda a: evaluate(*a), pending))
                for rec in records:
                    if rec.sw_flag and rec.status == "ok":
                        window_weights = rec.weights_id
            else:
                records = []
                for a in pending:
                    rec = evaluate(*a)
                    if rec.sw_flag and rec.status == "ok":
                        window_weights = rec.weights_id
                    records.append(rec)
            for rec, (_, _, sampled_mask) in zip(records, pending):
                trace.append(rec)
                batch_samples.append(EpisodeSample(actions=rec.actions,
                                                   reward=rec.reward,
                                                   sampled=sampled_mask))
            pending.clear()
            while len(batch_samples) >= policy_cfg.batch:
                batch = batch_samples[:policy_cfg.batch]
                del batch_samples[:policy_cfg.batch]
                policy = update(policy, batch, policy_cfg)

        for eps in range(episodes):
            sw = (eps % sw_n == 0)
            rng = np.random.Generator(np.random.PCG64(
                np.random.SeedSequence((seed, eps))))
            if sw or window_arch is None:
                actions, _ = sample(policy, decisions, rng)
                sampled_mask = None
                window_arch = tuple(actions)
            else:
                # SW off: the window's architecture is reused; only
                # quantizer decisions are re-drawn.
                mask = tuple(not a for a in arch_mask)
                actions, _ = sample(policy, decisions, rng, mask=mask,
                                    pinned=window_arch)
                sampled_mask = mask
            pending.append((eps, actions, sampled_mask))
            if len(pending) >= policy_cfg.batch:
                flush_batch()
        flush_batch()
        if batch_samples:
            policy = update(policy, batch_samples, policy_cfg)
            batch_samples.clear()
    finally:
        if pool is not None:
            pool.shutdown()

    ok = [r for r in trace if r.status == "ok"]
    front = pareto_indices([(r.A, r.T, r.B) for r in ok])
    return SearchResult(trace=trace, pareto=[ok[i] for i in front], policy=policy)
