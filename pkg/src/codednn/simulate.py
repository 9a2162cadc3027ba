"""Discrete-event simulation of expert servers with one coded fallback.

Each expert model lives on its own FIFO server; an optional extra server
hosts the coded model. Under the uncoded policy a query waits for its
expert's response even when that server straggles. Under coded recovery the
query is fanned out to the expert, the coded server and the remaining
experts at arrival, and completes at the earlier of the direct response and
the decode path (coded response plus all other experts' responses).

The event loop is single-threaded and fully deterministic: ties are broken
by sequence number and every server and arrival stream owns an independent
seeded RNG, so adding a coded server never perturbs the uncoded timings.
"""

from __future__ import annotations

import heapq
import math
from collections import deque
from dataclasses import dataclass

import numpy as np

from .decoding import decode_batch, ensemble_outputs
from .net import NetworkSpec, ParamVec, forward
from .weights import CodingWeights

POLICY_UNCODED = "uncoded"
POLICY_CODED = "coded-recovery"
POLICIES = (POLICY_UNCODED, POLICY_CODED)

CODED_SERVER = "coded"

SERVICE_EXPONENTIAL = "exponential"
SERVICE_DETERMINISTIC = "deterministic"


@dataclass(frozen=True)
class ServerSpec:
    """One server hosting a model, with an optional straggling mode.

    Service time is exponential with the given rate (or the deterministic
    1/rate), multiplied by ``slowdown`` with probability ``straggler_prob``
    independently per job.
    """

    model: object            # expert index (int) or "coded"
    service_rate: float
    straggler_prob: float = 0.0
    slowdown: float = 1.0
    service: str = SERVICE_EXPONENTIAL

    def __post_init__(self):
        if self.service_rate <= 0:
            raise ValueError("service_rate must be positive")
        if not 0.0 <= self.straggler_prob <= 1.0:
            raise ValueError("straggler_prob must be in [0, 1]")
        if self.slowdown < 1.0:
            raise ValueError("slowdown must be >= 1")
        if self.service not in (SERVICE_EXPONENTIAL, SERVICE_DETERMINISTIC):
            raise ValueError(f"unknown service model {self.service!r}")


@dataclass(frozen=True)
class TrafficSpec:
    """Poisson query arrivals per expert over a finite horizon.

    ``rate_schedule`` is a hook for piecewise-constant rate multipliers,
    ((start_time, multiplier), ...) with the first start at 0; a constant
    rate is the None default. ``ensemble_rate`` adds queries that need every
    expert's output.
    """

    arrival_rates: tuple
    horizon: float
    ensemble_rate: float = 0.0
    rate_schedule: tuple = None

    def __post_init__(self):
        rates = tuple(float(r) for r in self.arrival_rates)
        object.__setattr__(self, "arrival_rates", rates)
        if any(r < 0 for r in rates) or self.ensemble_rate < 0:
            raise ValueError("arrival rates must be nonnegative")
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")
        if self.rate_schedule is not None:
            schedule = tuple((float(t), float(m)) for t, m in self.rate_schedule)
            if not schedule or schedule[0][0] != 0.0:
                raise ValueError("rate_schedule must start at time 0")
            if any(m < 0 for _, m in schedule):
                raise ValueError("rate multipliers must be nonnegative")
            if list(schedule) != sorted(schedule, key=lambda seg: seg[0]):
                raise ValueError("rate_schedule must be time-ordered")
            object.__setattr__(self, "rate_schedule", schedule)


@dataclass
class QueryRecord:
    arrival: float
    expert: object           # expert index or "ensemble"
    completion: float = None
    path: str = None         # "direct", "decode" or "ensemble"
    decode_agree: object = None  # bool when a decode outcome was computed


@dataclass
class LatencyReport:
    """Latency and correctness summary for one policy run."""

    policy: str
    completed: int
    arrivals: int
    in_flight: int
    mean_latency: float
    p50: float
    p99: float
    decode_fraction: float
    agreement_rate: object   # float, or None when no decodes were computed

    CSV_HEADER = ["policy", "completed", "arrivals", "in_flight", "mean_latency",
                  "p50", "p99", "decode_fraction", "agreement_rate"]

    def csv_row(self):
        agree = "" if self.agreement_rate is None else self.agreement_rate
        return [self.policy, self.completed, self.arrivals, self.in_flight,
                self.mean_latency, self.p50, self.p99, self.decode_fraction, agree]


def nearest_rank(sorted_values, percent: float) -> float:
    """Nearest-rank percentile of an ascending sequence."""
    n = len(sorted_values)
    if n == 0:
        raise ValueError("percentile of an empty record set")
    rank = max(1, math.ceil(percent / 100.0 * n))
    return float(sorted_values[rank - 1])


def summarize(records, policy: str, arrivals: int = None) -> LatencyReport:
    """Aggregate per-query records; errors on zero completed queries."""
    records = list(records)
    total = len(records) if arrivals is None else arrivals
    done = [r for r in records if r.completion is not None]
    if not done:
        raise ValueError("no completed queries to summarize")
    latencies = sorted(r.completion - r.arrival for r in done)
    decode_answered = sum(1 for r in done if r.path == "decode")
    agree_flags = [r.decode_agree for r in done if r.decode_agree is not None]
    agreement = float(np.mean(agree_flags)) if agree_flags else None
    return LatencyReport(
        policy=policy,
        completed=len(done),
        arrivals=total,
        in_flight=total - len(done),
        mean_latency=float(np.mean(latencies)),
        p50=nearest_rank(latencies, 50.0),
        p99=nearest_rank(latencies, 99.0),
        decode_fraction=decode_answered / len(done),
        agreement_rate=agreement,
    )


def _empty_report(policy: str, arrivals: int) -> LatencyReport:
    nan = float("nan")
    return LatencyReport(policy, 0, arrivals, arrivals, nan, nan, nan, 0.0, None)


def _poisson_arrivals(rate: float, horizon: float, schedule, rng) -> list:
    """Arrival times of a (piecewise-constant) Poisson process on [0, horizon)."""
    if rate <= 0:
        return []
    segments = schedule if schedule is not None else ((0.0, 1.0),)
    times = []
    for k, (start, mult) in enumerate(segments):
        end = segments[k + 1][0] if k + 1 < len(segments) else horizon
        end = min(end, horizon)
        if start >= end or mult <= 0:
            continue
        # Exponential gaps are memoryless, so restarting at each segment
        # boundary still yields the exact inhomogeneous process.
        t = start + rng.exponential(1.0 / (rate * mult))
        while t < end:
            times.append(t)
            t += rng.exponential(1.0 / (rate * mult))
    return times


class _Server:
    def __init__(self, spec: ServerSpec, rng):
        self.spec = spec
        self.rng = rng
        self.queue = deque()
        self.busy = False

    def service_time(self) -> float:
        base = (
            self.rng.exponential(1.0 / self.spec.service_rate)
            if self.spec.service == SERVICE_EXPONENTIAL
            else 1.0 / self.spec.service_rate
        )
        if self.spec.straggler_prob > 0 and self.rng.random() < self.spec.straggler_prob:
            base *= self.spec.slowdown
        return base


class _Query:
    __slots__ = ("record", "row", "responses", "answered")

    def __init__(self, record, row):
        self.record = record
        self.row = row
        self.responses = set()
        self.answered = False


def simulate_queries(servers, traffic: TrafficSpec, policy: str, spec: NetworkSpec,
                     experts, weights: CodingWeights = None, query_pools=None,
                     coded: ParamVec = None, seed: int = 0) -> list:
    """Run the event loop; returns one QueryRecord per arrival.

    ``query_pools`` holds one input matrix per expert; queries sample rows
    from their expert's pool. Ensemble queries sample from the concatenated
    pools.
    """
    if policy not in POLICIES:
        raise ValueError(f"unknown policy {policy!r}")
    n_experts = len(experts)
    if len(traffic.arrival_rates) != n_experts:
        raise ValueError("need one arrival rate per expert")
    by_model = {}
    for s in servers:
        if s.model in by_model:
            raise ValueError(f"duplicate server for model {s.model!r}")
        by_model[s.model] = s
    for i in range(n_experts):
        if i not in by_model:
            raise ValueError(f"no server hosts expert {i}")
    coded_needed = policy == POLICY_CODED
    if coded_needed and CODED_SERVER not in by_model:
        raise ValueError("coded-recovery policy needs a coded server")
    if coded_needed and (coded is None or weights is None):
        raise ValueError("coded-recovery policy needs the coded model and weights")
    if query_pools is None or len(query_pools) != n_experts:
        raise ValueError("need one query input pool per expert")
    pools = [np.asarray(p, dtype=np.float64) for p in query_pools]

    root = np.random.SeedSequence(seed)
    arrivals_root, inputs_root, servers_root = root.spawn(3)
    arrival_seqs = arrivals_root.spawn(n_experts + 1)
    input_seqs = inputs_root.spawn(n_experts + 1)
    # Server streams are keyed by model identity, so the uncoded policy's
    # draws are unaffected by whether a coded server is present.
    server_seqs = servers_root.spawn(n_experts + 1)
    server_state = {}
    for model, sspec in by_model.items():
        idx = n_experts if model == CODED_SERVER else int(model)
        server_state[model] = _Server(sspec, np.random.default_rng(server_seqs[idx]))

    # Precompute decode outcomes per pool row (input -> argmax agreement).
    direct_argmax = []
    decode_agree = []
    for i, pool in enumerate(pools):
        outs = [forward(spec, m, pool) for m in experts]
        direct = np.argmax(outs[i], axis=1)
        direct_argmax.append(direct)
        if coded_needed:
            dec = decode_batch(forward(spec, coded, pool), outs, i, weights)
            decode_agree.append(np.argmax(dec, axis=1) == direct)
        else:
            decode_agree.append(None)
    ens_pool = np.vstack(pools) if traffic.ensemble_rate > 0 else None
    ens_agree = None
    if ens_pool is not None and coded_needed:
        outs = [forward(spec, m, ens_pool) for m in experts]
        target = np.argmax(ensemble_outputs(outs, weights), axis=1)
        ens_agree = np.argmax(forward(spec, coded, ens_pool), axis=1) == target

    heap = []
    seq = 0

    def push(time, kind, payload):
        nonlocal seq
        heapq.heappush(heap, (time, seq, kind, payload))
        seq += 1

    queries = []
    for i in range(n_experts):
        rng = np.random.default_rng(arrival_seqs[i])
        in_rng = np.random.default_rng(input_seqs[i])
        for t in _poisson_arrivals(traffic.arrival_rates[i], traffic.horizon,
                                   traffic.rate_schedule, rng):
            row = int(in_rng.integers(0, pools[i].shape[0]))
            q = _Query(QueryRecord(arrival=t, expert=i), row)
            queries.append(q)
            push(t, "arrival", q)
    if traffic.ensemble_rate > 0:
        rng = np.random.default_rng(arrival_seqs[n_experts])
        in_rng = np.random.default_rng(input_seqs[n_experts])
        for t in _poisson_arrivals(traffic.ensemble_rate, traffic.horizon,
                                   traffic.rate_schedule, rng):
            row = int(in_rng.integers(0, ens_pool.shape[0]))
            q = _Query(QueryRecord(arrival=t, expert="ensemble"), row)
            queries.append(q)
            push(t, "arrival", q)

    def enqueue(model, query):
        server = server_state[model]
        server.queue.append(query)
        if not server.busy:
            start_next(server, model, now)

    def start_next(server, model, time):
        if server.queue:
            job = server.queue.popleft()
            server.busy = True
            push(time + server.service_time(), "service", (model, job))
        else:
            server.busy = False

    def try_answer(q, time):
        if q.answered:
            return
        rec = q.record
        i = rec.expert
        expert_responses = sum(1 for r in q.responses if r != CODED_SERVER)
        coded_done = coded_needed and CODED_SERVER in q.responses
        if i == "ensemble":
            if expert_responses == len(experts):
                q.answered, rec.completion, rec.path = True, time, "ensemble"
            elif coded_done and expert_responses >= len(experts) - 1:
                # The coded output already is the ensemble reconstruction.
                q.answered, rec.completion, rec.path = True, time, "decode"
        else:
            others_done = expert_responses - (1 if i in q.responses else 0)
            if i in q.responses:
                q.answered, rec.completion, rec.path = True, time, "direct"
            elif coded_done and others_done == len(experts) - 1:
                q.answered, rec.completion, rec.path = True, time, "decode"

    now = 0.0
    while heap:
        now, _, kind, payload = heapq.heappop(heap)
        if now > traffic.horizon:
            break
        if kind == "arrival":
            q = payload
            i = q.record.expert
            if policy == POLICY_UNCODED:
                targets = list(range(len(experts))) if i == "ensemble" else [i]
            else:
                targets = list(range(len(experts))) + [CODED_SERVER]
                if coded_needed:
                    if i == "ensemble":
                        q.record.decode_agree = bool(ens_agree[q.row])
                    else:
                        q.record.decode_agree = bool(decode_agree[i][q.row])
            for model in targets:
                enqueue(model, q)
        else:
            model, q = payload
            q.responses.add(model)
            try_answer(q, now)
            start_next(server_state[model], model, now)

    return [q.record for q in queries]


def run_sim(servers, traffic: TrafficSpec, policy: str, spec: NetworkSpec, experts,
            weights: CodingWeights = None, query_pools=None, coded: ParamVec = None,
            seed: int = 0) -> LatencyReport:
    """Simulate one policy and summarize it; empty traffic gives an empty report."""
    records = simulate_queries(servers, traffic, policy, spec, experts,
                               weights=weights, query_pools=query_pools,
                               coded=coded, seed=seed)
    if not any(r.completion is not None for r in records):
        return _empty_report(policy, len(records))
    return summarize(records, policy, arrivals=len(records))
