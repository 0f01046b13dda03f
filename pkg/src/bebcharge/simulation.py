"""Stochastic truth simulation and Monte-Carlo evaluation of charging strategies.

The *truth environment* re-runs a scenario on a fine one-minute grid with
random disturbances layered on top of the nominal physics:

* route discharge gets a per-bus bias (kW, drawn once per run) plus white
  noise scaled by the square root of the driving time;
* charging gets a per-charger-type bias and white stream, applied only while
  a bus is actually plugged in, on top of the exact CC-CV attainable gain;
* station arrivals shift by a per-visit Gaussian perturbation (seconds),
  clamped so a bus never arrives before it departed the previous stop nor
  after the visit ends.  Departures are never perturbed.

Billing is done by an independent tariff oracle (:func:`billing_oracle`) that
re-derives sliding-window average power from a realized meter series with
plain cumulative sums - deliberately sharing no code with the optimizer's
constraint rows, so the two can cross-check each other.

Three strategies can drive the environment: a reactive threshold heuristic
(:func:`strategy_qin`), open-loop replay of a precomputed plan
(:func:`strategy_open_loop`), and the hierarchical receding-horizon controller
(dispatched lazily to :mod:`bebcharge.receding_horizon`).  Monte-Carlo and
multi-day drivers aggregate runs into permutation-invariant reports.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .charge_model import simulate_exact
from .graph import build_action_graph
from .milp import ChargePlan, ModelOptions, build_static_model, extract_plan
from .scenario import (
    Bus,
    ChargerType,
    RateSchedule,
    Scenario,
    charging_params,
    consumption_rate_at,
    discretize,
    in_peak_window,
)
from .solver import MilpSolution, SolveLimits, branch_and_bound

TRUTH_DELTA_MIN = 1.0

SeedLike = Union[int, np.random.SeedSequence]


# ---------------------------------------------------------------------------
# noise model


@dataclass(frozen=True)
class NoiseParams:
    """Standard deviations of the disturbance model.

    White-noise sigmas are in kWh per square-root second (so the variance a
    stream accumulates over a fixed wall-clock span does not depend on the
    simulation grid).  Biases are in kW and drawn once per run.  Charger-side
    sigmas come in a slow and a fast flavor; a charger type counts as fast
    when its CC power reaches ``fast_threshold_kw``, unless an explicit
    per-type override is given.
    """

    discharge_white_kwh_per_sqrt_s: float = 0.05
    discharge_bias_kw: float = 1.2
    charge_white_slow_kwh_per_sqrt_s: float = 0.04167
    charge_white_fast_kwh_per_sqrt_s: float = 0.0833
    charge_bias_slow_kw: float = 1.2
    charge_bias_fast_kw: float = 2.4
    arrival_sigma_s: float = 120.0
    fast_threshold_kw: float = 100.0
    charge_white_overrides: Optional[Mapping[str, float]] = None
    charge_bias_overrides: Optional[Mapping[str, float]] = None

    def __post_init__(self) -> None:
        sigmas = [
            self.discharge_white_kwh_per_sqrt_s,
            self.discharge_bias_kw,
            self.charge_white_slow_kwh_per_sqrt_s,
            self.charge_white_fast_kwh_per_sqrt_s,
            self.charge_bias_slow_kw,
            self.charge_bias_fast_kw,
            self.arrival_sigma_s,
        ]
        for m in (self.charge_white_overrides, self.charge_bias_overrides):
            if m:
                sigmas.extend(m.values())
        if any(s < 0 for s in sigmas):
            raise ValueError("noise standard deviations must be non-negative")

    @classmethod
    def zero(cls) -> "NoiseParams":
        return cls(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)

    def is_fast(self, charger: ChargerType) -> bool:
        return charger.p_cc_kw >= self.fast_threshold_kw

    def charge_white_for(self, charger: ChargerType) -> float:
        if self.charge_white_overrides and charger.id in self.charge_white_overrides:
            return self.charge_white_overrides[charger.id]
        if self.is_fast(charger):
            return self.charge_white_fast_kwh_per_sqrt_s
        return self.charge_white_slow_kwh_per_sqrt_s

    def charge_bias_for(self, charger: ChargerType) -> float:
        if self.charge_bias_overrides and charger.id in self.charge_bias_overrides:
            return self.charge_bias_overrides[charger.id]
        if self.is_fast(charger):
            return self.charge_bias_fast_kw
        return self.charge_bias_slow_kw


@dataclass(frozen=True)
class RunNoise:
    """One run's realized disturbances.

    ``white_discharge``/``white_charge`` hold *standard* normal draws, indexed
    [bus, step] and [charger type, step] in scenario order; the sigmas and the
    sqrt-dt scaling are applied at use time, so a zero sigma yields exactly
    zero disturbance while keeping the draw sequence identical across
    parameterizations.  ``arrival_shift_s`` maps visit ids to seconds.
    """

    beta_discharge_kw: Mapping[str, float]
    beta_charge_kw: Mapping[str, float]
    arrival_shift_s: Mapping[str, float]
    white_discharge: np.ndarray
    white_charge: np.ndarray


def sample_run_noise(
    scenario: Scenario,
    params: NoiseParams,
    seed: SeedLike,
    n_steps: int,
) -> RunNoise:
    """Draw one run's disturbances.

    Draw order is fixed and documented so runs are reproducible from the seed
    alone: discharge biases per bus (scenario order), charge biases per
    charger type, arrival shifts per station visit (bus order, then schedule
    order), then the two white matrices.
    """
    rng = np.random.default_rng(seed)
    beta_d = {
        bus.id: params.discharge_bias_kw * rng.standard_normal()
        for bus in scenario.buses
    }
    beta_c = {
        ct.id: params.charge_bias_for(ct) * rng.standard_normal()
        for ct in scenario.charger_types
    }
    arrival: Dict[str, float] = {}
    for bus in scenario.buses:
        for bi, block in enumerate(bus.schedule):
            if block.kind == "in_station":
                arrival[f"{bus.id}:v{bi}"] = (
                    params.arrival_sigma_s * rng.standard_normal()
                )
    white_d = rng.standard_normal((len(scenario.buses), n_steps))
    white_c = rng.standard_normal((len(scenario.charger_types), n_steps))
    return RunNoise(
        beta_discharge_kw=beta_d,
        beta_charge_kw=beta_c,
        arrival_shift_s=arrival,
        white_discharge=white_d,
        white_charge=white_c,
    )


def perturb_arrivals(
    scenario: Scenario, arrival_shift_s: Mapping[str, float]
) -> Dict[str, float]:
    """Perturbed arrival minute per station visit id.

    Each arrival moves by its visit's shift, clamped to stay at or after the
    bus's previous departure (the start of the preceding schedule block, i.e.
    when it left the previous stop) and at or before the visit's end; a shift
    past the end wipes out the visit entirely.  Departure times are fixed.
    """
    out: Dict[str, float] = {}
    for bus in scenario.buses:
        for bi, block in enumerate(bus.schedule):
            if block.kind != "in_station":
                continue
            vid = f"{bus.id}:v{bi}"
            shift_min = arrival_shift_s.get(vid, 0.0) / 60.0
            lo = (
                float(bus.schedule[bi - 1].start_min)
                if bi > 0
                else float(scenario.day_start_min)
            )
            out[vid] = min(
                float(block.end_min), max(lo, block.start_min + shift_min)
            )
    return out


# ---------------------------------------------------------------------------
# truth environment


class TruthEnvironment:
    """Minute-resolution stochastic re-run of one scenario day.

    Per minute and bus, route discharge is applied first (spread
    overlap-proportionally over the perturbed driving span, with bias and
    white noise scaled to the driven fraction), then any commanded charging:
    the commanded energy is capped by the exact CC-CV attainable gain over the
    present fraction of the minute, charger bias and white noise are added on
    top (they model metering/actuation error, so they are not capped), and the
    battery level is clamped to [0, capacity].  The meter records uncontrolled
    load plus the non-negative part of each realized charge delta.

    A command is a ``(charger_type_id, power_kw)`` pair per bus; a plugged-in
    bus with zero commanded power still sees charger noise, mirroring the
    planner's convention that engagement (not energy) activates the charger.
    Use ``math.inf`` as the power to request the full CC-CV rate.
    """

    def __init__(
        self, scenario: Scenario, noise: RunNoise, params: NoiseParams
    ) -> None:
        self.scenario = scenario
        self.noise = noise
        self.params = params
        self.instance = discretize(scenario, TRUTH_DELTA_MIN)
        self.n_steps = self.instance.n_steps
        self.t0_min = self.instance.t0_min
        self.bus_ids = [b.id for b in scenario.buses]
        self._bus_by_id = {b.id: b for b in scenario.buses}
        self._type_index = {ct.id: i for i, ct in enumerate(scenario.charger_types)}
        self._charger_by_id = {ct.id: ct for ct in scenario.charger_types}
        self._charge_params = {
            (bus.id, ct.id): charging_params(bus, ct)
            for bus in scenario.buses
            for ct in scenario.charger_types
        }
        self.arrivals = perturb_arrivals(scenario, noise.arrival_shift_s)

        n_b, n_s = len(self.bus_ids), self.n_steps
        starts = self.t0_min + TRUTH_DELTA_MIN * np.arange(n_s)
        self._drive_kwh = np.zeros((n_b, n_s))
        self._drive_minutes = np.zeros((n_b, n_s))
        self._presence_hours = np.zeros((n_b, n_s))
        self._visit_of_step: List[List[Optional["_VisitSpan"]]] = [
            [None] * n_s for _ in range(n_b)
        ]
        self.visit_spans: Dict[str, "_VisitSpan"] = {}
        for j, bus in enumerate(scenario.buses):
            for bi, block in enumerate(bus.schedule):
                if block.kind == "on_route":
                    end = float(block.end_min)
                    nxt = bi + 1
                    if (
                        nxt < len(bus.schedule)
                        and bus.schedule[nxt].kind == "in_station"
                    ):
                        # driving continues until the (perturbed) arrival
                        end = self.arrivals[f"{bus.id}:v{nxt}"]
                    ov = np.clip(
                        np.minimum(end, starts + TRUTH_DELTA_MIN)
                        - np.maximum(float(block.start_min), starts),
                        0.0,
                        None,
                    )
                    self._drive_minutes[j] += ov
                    self._drive_kwh[j] += block.route_power_kw * ov / 60.0
                elif block.kind == "in_station":
                    vid = f"{bus.id}:v{bi}"
                    span = _VisitSpan(
                        id=vid,
                        bus_id=bus.id,
                        arrival_min=self.arrivals[vid],
                        end_min=float(block.end_min),
                        charger_type_ids=tuple(block.charger_type_ids),
                    )
                    self.visit_spans[vid] = span
                    ov = np.clip(
                        np.minimum(span.end_min, starts + TRUTH_DELTA_MIN)
                        - np.maximum(span.arrival_min, starts),
                        0.0,
                        None,
                    )
                    self._presence_hours[j] += ov / 60.0
                    for k in np.nonzero(ov > 0)[0]:
                        self._visit_of_step[j][int(k)] = span

        self.soc = {
            b.id: b.initial_soc * b.capacity_kwh for b in scenario.buses
        }
        self.soc_series = np.zeros((n_b, n_s + 1))
        self.soc_series[:, 0] = [self.soc[b] for b in self.bus_ids]
        self.meter_kwh = self.instance.load_kwh.copy()
        self.charge_gain_kwh = np.zeros((n_b, n_s))
        self.charge_type: List[List[Optional[str]]] = [
            [None] * n_s for _ in range(n_b)
        ]
        self._k = 0

    # -- geometry queries ---------------------------------------------------

    @property
    def minute_index(self) -> int:
        return self._k

    @property
    def done(self) -> bool:
        return self._k >= self.n_steps

    def instant_minutes(self) -> np.ndarray:
        return self.t0_min + TRUTH_DELTA_MIN * np.arange(self.n_steps + 1)

    def presence_hours(self, bus_id: str, k: int) -> float:
        return float(self._presence_hours[self._j(bus_id), k])

    def visit_at(self, bus_id: str, k: int) -> Optional["_VisitSpan"]:
        return self._visit_of_step[self._j(bus_id)][k]

    def bus(self, bus_id: str) -> "Bus":
        return self._bus_by_id[bus_id]

    def charger(self, type_id: str) -> ChargerType:
        return self._charger_by_id[type_id]

    def _j(self, bus_id: str) -> int:
        return self.bus_ids.index(bus_id)

    # -- dynamics -----------------------------------------------------------

    def advance(
        self, commands: Mapping[str, Tuple[str, float]]
    ) -> Dict[str, float]:
        """Advance one truth minute; returns realized charge kWh per bus."""
        if self.done:
            raise RuntimeError("day already finished")
        k = self._k
        realized: Dict[str, float] = {}
        for j, bus_id in enumerate(self.bus_ids):
            bus = self._bus_by_id[bus_id]
            cap = bus.capacity_kwh
            soc = self.soc[bus_id]

            drive_min = self._drive_minutes[j, k]
            if drive_min > 0:
                dt_s = drive_min * 60.0
                soc = (
                    soc
                    - self._drive_kwh[j, k]
                    + self.noise.beta_discharge_kw[bus_id] * (drive_min / 60.0)
                    + self.params.discharge_white_kwh_per_sqrt_s
                    * math.sqrt(dt_s)
                    * self.noise.white_discharge[j, k]
                )
                soc = min(max(soc, 0.0), cap)

            cmd = commands.get(bus_id)
            if cmd is not None:
                tid, power_kw = cmd
                span = self._visit_of_step[j][k]
                pres_h = self._presence_hours[j, k]
                if (
                    span is not None
                    and pres_h > 0
                    and tid in span.charger_type_ids
                ):
                    cp = self._charge_params[(bus_id, tid)]
                    attainable = simulate_exact(cp, soc, pres_h) - soc
                    base = min(power_kw * pres_h, attainable)
                    ti = self._type_index[tid]
                    charger = self._charger_by_id[tid]
                    delta = (
                        base
                        + self.noise.beta_charge_kw[tid] * pres_h
                        + self.params.charge_white_for(charger)
                        * math.sqrt(pres_h * 3600.0)
                        * self.noise.white_charge[ti, k]
                    )
                    new_soc = min(max(soc + delta, 0.0), cap)
                    gained = new_soc - soc
                    self.meter_kwh[k] += max(0.0, gained)
                    self.charge_gain_kwh[j, k] = gained
                    self.charge_type[j][k] = tid
                    realized[bus_id] = gained
                    soc = new_soc

            self.soc[bus_id] = soc
            self.soc_series[j, k + 1] = soc
        self._k += 1
        return realized


@dataclass(frozen=True)
class _VisitSpan:
    """A station visit's realized availability window."""

    id: str
    bus_id: str
    arrival_min: float
    end_min: float
    charger_type_ids: Tuple[str, ...]


# ---------------------------------------------------------------------------
# tariff oracle


def billing_oracle(
    step_energy: Sequence[float],
    delta_min: float,
    rates: RateSchedule,
    t0_min: float,
    history: Sequence[float] = (),
) -> Dict[str, object]:
    """Bill a realized meter series, independently of the optimizer.

    ``step_energy`` is kWh per grid step starting at ``t0_min``; ``history``
    (most recent last, same grid) completes demand windows that reach before
    the series starts, with anything older treated as zero energy.  Window
    average power is computed for every instant 0..K: the last ``m`` whole
    steps plus a fractional share of one more when the window length is not a
    step multiple.  The base demand charge bills the all-day maximum; the TOU
    demand charge bills the maximum over windows *ending* at an instant inside
    a half-open peak window.
    """
    e = np.asarray(step_energy, dtype=float)
    hist = np.asarray(history, dtype=float)
    n = e.size
    window_h = rates.demand_window_minutes / 60.0
    m = int(math.floor(rates.demand_window_minutes / delta_min + 1e-9))
    frac = (rates.demand_window_minutes - m * delta_min) / delta_min
    if frac < 1e-9:
        frac = 0.0

    # zero-pad so every instant's window can look back m+1 steps
    pad = max(0, m + 1 - hist.size)
    padded = np.concatenate([np.zeros(pad), hist, e])
    base = pad + hist.size  # index of step 0 in `padded`
    csum = np.concatenate([[0.0], np.cumsum(padded)])
    window_kw = np.empty(n + 1)
    for k in range(n + 1):
        i = base + k
        whole = csum[i] - csum[i - m]
        window_kw[k] = (whole + frac * padded[i - m - 1]) / window_h

    instants = t0_min + delta_min * np.arange(n + 1)
    tou_mask = np.array([in_peak_window(rates, t) for t in instants], dtype=bool)
    step_rates = np.array(
        [consumption_rate_at(rates, t) for t in instants[:-1]]
    )

    consumption = float(step_rates @ e)
    demand_base = rates.demand_base_per_kw * float(window_kw.max())
    demand_tou = (
        rates.demand_tou_per_kw * float(window_kw[tou_mask].max())
        if tou_mask.any()
        else 0.0
    )
    return {
        "consumption": consumption,
        "demand_base": demand_base,
        "demand_tou": demand_tou,
        "total": consumption + demand_base + demand_tou,
        "window_kw": window_kw,
        "tou_instants": tou_mask,
    }


# ---------------------------------------------------------------------------
# nominal planning pipeline


def nominal_plan(
    scenario: Scenario,
    delta_min: float = 5.0,
    limits: Optional[SolveLimits] = None,
    options: Optional[ModelOptions] = None,
) -> Tuple[Optional[ChargePlan], MilpSolution]:
    """Solve the day-ahead schedule on a uniform grid.

    Returns the extracted plan (or None when no integer solution was found)
    together with the raw solver outcome.
    """
    instance = discretize(scenario, delta_min)
    graph = build_action_graph(instance)
    model = build_static_model(graph, options or ModelOptions())
    solution = branch_and_bound(model, limits or SolveLimits())
    if not solution.has_solution:
        return None, solution
    plan = extract_plan(model, solution.assignment, status=solution.status)
    return plan, solution


# ---------------------------------------------------------------------------
# strategies


class _QinController:
    """Reactive threshold heuristic.

    A bus arriving below the threshold queues for a charger (FIFO by
    perturbed arrival time, then bus id), connects to the fastest free
    charger type its station offers (highest CC power, ties by type id), and
    draws the full CC-CV rate until it reaches its maximum level or departs.
    Queueing and hand-offs happen at whole-minute boundaries.
    """

    def __init__(self, env: TruthEnvironment, threshold: float = 0.7) -> None:
        self.env = env
        self.threshold = threshold
        self.free = {ct.id: ct.count for ct in env.scenario.charger_types}
        self.connected: Dict[str, str] = {}
        self.queue: List[Tuple[float, str]] = []
        self._seen_visits: set = set()

    def commands(self) -> Dict[str, Tuple[str, float]]:
        env = self.env
        k = env.minute_index
        t = env.t0_min + k * TRUTH_DELTA_MIN

        # releases: departure or target level reached
        for bus_id in list(self.connected):
            span = env.visit_at(bus_id, k) if k < env.n_steps else None
            bus = env.bus(bus_id)
            target = bus.max_soc * bus.capacity_kwh
            if span is None or env.soc[bus_id] >= target - 1e-9:
                self.free[self.connected.pop(bus_id)] += 1

        # arrivals: a bus is considered at the first whole-minute boundary
        # at or after its (perturbed) arrival, and queues if below threshold
        for bus in env.scenario.buses:
            span = env.visit_at(bus.id, k)
            if span is None or span.id in self._seen_visits:
                continue
            if span.arrival_min <= t + 1e-9:
                self._seen_visits.add(span.id)
                if env.soc[bus.id] < self.threshold * bus.capacity_kwh:
                    self.queue.append((span.arrival_min, bus.id))
                    self.queue.sort()

        # service the queue in FIFO order
        still_waiting: List[Tuple[float, str]] = []
        for key, bus_id in self.queue:
            span = env.visit_at(bus_id, k)
            bus = env.bus(bus_id)
            if span is None:
                continue  # departed while waiting
            if env.soc[bus_id] >= self.threshold * bus.capacity_kwh:
                continue  # no longer below threshold
            options = sorted(
                (ct_id for ct_id in span.charger_type_ids if self.free[ct_id] > 0),
                key=lambda ct_id: (-env.charger(ct_id).p_cc_kw, ct_id),
            )
            if options:
                self.free[options[0]] -= 1
                self.connected[bus_id] = options[0]
            else:
                still_waiting.append((key, bus_id))
        self.queue = still_waiting

        return {b: (tid, math.inf) for b, tid in self.connected.items()}


class _OpenLoopController:
    """Replays a reference plan verbatim.

    Commands follow the planned intervals and per-step rates exactly; a bus
    that arrives late simply misses the front of its interval (the command
    falls on an absent bus and realizes nothing), and charging never extends
    past the planned stop, so a fully missed interval is dropped.
    """

    def __init__(self, env: TruthEnvironment, plan: ChargePlan) -> None:
        self.env = env
        self.plan = plan
        self._by_bus_step: Dict[Tuple[str, int], Tuple[str, float]] = {}
        delta_h = plan.delta_min / 60.0
        for bus_id, tid, k0, k1 in plan.intervals:
            for kp in range(k0, k1):
                gain = plan.gains.get((bus_id, kp, tid), 0.0)
                self._by_bus_step[(bus_id, kp)] = (tid, gain / delta_h)

    def commands(self) -> Dict[str, Tuple[str, float]]:
        t = self.env.t0_min + self.env.minute_index * TRUTH_DELTA_MIN
        kp = int(math.floor((t - self.plan.t0_min) / self.plan.delta_min + 1e-9))
        if not 0 <= kp < self.plan.n_steps:
            return {}
        out: Dict[str, Tuple[str, float]] = {}
        for bus_id in self.env.bus_ids:
            cmd = self._by_bus_step.get((bus_id, kp))
            if cmd is not None:
                out[bus_id] = cmd
        return out


# ---------------------------------------------------------------------------
# single runs


@dataclass(frozen=True)
class SimRun:
    """One realized day under one strategy and one noise draw."""

    strategy: str
    soc_series: np.ndarray  # [bus, instant] kWh on the truth grid
    meter_kwh: np.ndarray  # [step] realized meter series
    charge_gain_kwh: np.ndarray  # [bus, step]
    charge_type: Tuple[Tuple[Optional[str], ...], ...]
    bus_ids: Tuple[str, ...]
    t0_min: float
    cost_breakdown: Dict[str, float]
    violation_count: int
    worst_violation_kwh: float
    terminal_soc_kwh: Dict[str, float]
    failed: bool = False

    @property
    def total_cost(self) -> float:
        return self.cost_breakdown["total"]


def _finalize_run(
    env: TruthEnvironment, strategy: str, failed: bool = False
) -> SimRun:
    scenario = env.scenario
    billing = billing_oracle(
        env.meter_kwh, TRUTH_DELTA_MIN, scenario.rates, env.t0_min
    )
    floors = np.array(
        [b.min_soc * b.capacity_kwh for b in scenario.buses]
    ).reshape(-1, 1)
    depth = floors - env.soc_series
    violations = int((depth > 1e-9).sum())
    worst = float(max(0.0, depth.max()))
    return SimRun(
        strategy=strategy,
        soc_series=env.soc_series.copy(),
        meter_kwh=env.meter_kwh.copy(),
        charge_gain_kwh=env.charge_gain_kwh.copy(),
        charge_type=tuple(tuple(row) for row in env.charge_type),
        bus_ids=tuple(env.bus_ids),
        t0_min=env.t0_min,
        cost_breakdown={
            "consumption": billing["consumption"],
            "demand_base": billing["demand_base"],
            "demand_tou": billing["demand_tou"],
            "total": billing["total"],
        },
        violation_count=violations,
        worst_violation_kwh=worst,
        terminal_soc_kwh={
            b: float(env.soc_series[j, -1]) for j, b in enumerate(env.bus_ids)
        },
        failed=failed,
    )


def strategy_qin(
    env: TruthEnvironment, threshold: float = 0.7
) -> SimRun:
    """Run the reactive threshold heuristic to the end of the day."""
    controller = _QinController(env, threshold)
    while not env.done:
        env.advance(controller.commands())
    return _finalize_run(env, "qin")


def strategy_open_loop(env: TruthEnvironment, reference: ChargePlan) -> SimRun:
    """Replay a reference plan open loop against the truth environment."""
    controller = _OpenLoopController(env, reference)
    while not env.done:
        env.advance(controller.commands())
    return _finalize_run(env, "open_loop")


def simulate_run(
    scenario: Scenario,
    strategy: str,
    seed: SeedLike,
    params: Optional[NoiseParams] = None,
    reference: Optional[ChargePlan] = None,
    horizon: Optional[object] = None,
) -> SimRun:
    """Run one strategy for one seeded noise draw and bill the outcome."""
    params = params if params is not None else NoiseParams()
    n_truth = int(
        math.floor(
            (scenario.day_end_min - scenario.day_start_min) / TRUTH_DELTA_MIN + 1e-9
        )
    )
    noise = sample_run_noise(scenario, params, seed, n_truth)
    env = TruthEnvironment(scenario, noise, params)
    if strategy == "qin":
        return strategy_qin(env)
    if strategy == "open_loop":
        if reference is None:
            raise ValueError("open_loop needs a reference plan")
        return strategy_open_loop(env, reference)
    if strategy == "hierarchical":
        if reference is None:
            raise ValueError("hierarchical needs a reference plan")
        from . import receding_horizon as rh

        cfg = horizon if horizon is not None else rh.HorizonConfig()
        outcome = rh.run_day(scenario, reference, cfg, env)
        return _finalize_run(env, "hierarchical", failed=outcome.failed)
    raise ValueError(f"unknown strategy {strategy!r}")


# ---------------------------------------------------------------------------
# Monte-Carlo driver


@dataclass(frozen=True)
class MCReport:
    """Aggregate of n seeded runs of one strategy on one scenario.

    Dispersion statistics are computed after zeroing each bus's series to its
    own cross-run mean, so systematic per-bus offsets do not inflate the
    spread; ``sigma3_*`` values are three pooled standard deviations.  All
    statistics are invariant under permuting the runs.
    """

    strategy: str
    n_runs: int
    run_costs: Tuple[float, ...]
    mean_cost: float
    mean_breakdown: Dict[str, float]
    violation_counts: Tuple[int, ...]
    violation_rate: float
    worst_violation_kwh: float
    terminal_soc_kwh: np.ndarray  # [run, bus]
    sigma3_terminal_kwh: float
    mean_soc_trace: np.ndarray  # [instant]
    sigma3_soc_trace: np.ndarray  # [instant]
    instant_minutes: np.ndarray
    bus_ids: Tuple[str, ...]
    failed_runs: int


def _pooled_sigma3(values: np.ndarray) -> float:
    """3x pooled std after zeroing each column (bus) to its cross-run mean."""
    centered = values - values.mean(axis=0, keepdims=True)
    return 3.0 * float(centered.std())


def _aggregate_runs(strategy: str, runs: Sequence[SimRun]) -> MCReport:
    costs = tuple(r.total_cost for r in runs)
    soc = np.stack([r.soc_series for r in runs])  # [run, bus, instant]
    centered = soc - soc.mean(axis=0, keepdims=True)
    n_inst = soc.shape[2]
    sigma3_trace = 3.0 * centered.transpose(2, 0, 1).reshape(n_inst, -1).std(axis=1)
    terminal = soc[:, :, -1]
    keys = ("consumption", "demand_base", "demand_tou", "total")
    t0 = runs[0].t0_min
    return MCReport(
        strategy=strategy,
        n_runs=len(runs),
        run_costs=costs,
        mean_cost=float(np.mean(costs)),
        mean_breakdown={
            k: float(np.mean([r.cost_breakdown[k] for r in runs])) for k in keys
        },
        violation_counts=tuple(r.violation_count for r in runs),
        violation_rate=float(
            np.mean([1.0 if r.violation_count else 0.0 for r in runs])
        ),
        worst_violation_kwh=max(r.worst_violation_kwh for r in runs),
        terminal_soc_kwh=terminal,
        sigma3_terminal_kwh=_pooled_sigma3(terminal),
        mean_soc_trace=soc.mean(axis=(0, 1)),
        sigma3_soc_trace=sigma3_trace,
        instant_minutes=t0 + TRUTH_DELTA_MIN * np.arange(n_inst),
        bus_ids=runs[0].bus_ids,
        failed_runs=sum(1 for r in runs if r.failed),
    )


def _mc_worker(args) -> SimRun:
    scenario, strategy, seed, params, reference, horizon = args
    return simulate_run(scenario, strategy, seed, params, reference, horizon)


def monte_carlo(
    scenario: Scenario,
    strategy: str,
    n_runs: int,
    base_seed: SeedLike,
    params: Optional[NoiseParams] = None,
    reference: Optional[ChargePlan] = None,
    horizon: Optional[object] = None,
    jobs: int = 1,
) -> MCReport:
    """Run ``n_runs`` seeded realizations and aggregate them.

    Run seeds are the first ``n_runs`` children of ``base_seed``'s seed
    sequence, so the ensemble is reproducible and independent of ``jobs``;
    parallel results are merged in seed order.
    """
    if n_runs < 1:
        raise ValueError("n_runs must be positive")
    if isinstance(base_seed, np.random.SeedSequence):
        root = np.random.SeedSequence(
            entropy=base_seed.entropy, spawn_key=base_seed.spawn_key
        )
    else:
        root = np.random.SeedSequence(base_seed)
    seeds = root.spawn(n_runs)
    tasks = [(scenario, strategy, s, params, reference, horizon) for s in seeds]
    if jobs > 1:
        import multiprocessing

        with multiprocessing.Pool(jobs) as pool:
            runs = pool.map(_mc_worker, tasks)
    else:
        runs = [_mc_worker(t) for t in tasks]
    return _aggregate_runs(strategy, runs)


# ---------------------------------------------------------------------------
# multi-day chaining


@dataclass(frozen=True)
class DayResult:
    day: int
    initial_soc_frac: Dict[str, float]
    report: Optional[MCReport]
    plan_cost: Optional[float]
    failed: bool


@dataclass(frozen=True)
class MultiDayReport:
    strategy: str
    days: Tuple[DayResult, ...]

    @property
    def completed_days(self) -> int:
        return sum(1 for d in self.days if not d.failed)


def multi_day(
    scenario: Scenario,
    strategy: str,
    n_days: int,
    runs_per_day: int,
    base_seed: int,
    params: Optional[NoiseParams] = None,
    horizon: Optional[object] = None,
    plan_delta_min: float = 5.0,
    limits: Optional[SolveLimits] = None,
) -> MultiDayReport:
    """Chain day ensembles, carrying each day's mean final level forward.

    Day 0 uses ``base_seed`` directly (so a one-day chain reproduces
    :func:`monte_carlo` bit for bit); later days use distinct children of the
    same sequence.  Each day re-plans from the carried-over initial levels;
    if the nominal plan becomes infeasible the chain stops there and the day
    is reported as failed.
    """
    if n_days < 1:
        raise ValueError("n_days must be positive")
    children = np.random.SeedSequence(base_seed).spawn(n_days)
    init = {b.id: b.initial_soc for b in scenario.buses}
    days: List[DayResult] = []
    for d in range(n_days):
        day_seed: SeedLike = base_seed if d == 0 else children[d]
        buses = tuple(
            dataclasses.replace(b, initial_soc=init[b.id]) for b in scenario.buses
        )
        day_scenario = dataclasses.replace(scenario, buses=buses)
        reference: Optional[ChargePlan] = None
        plan_cost: Optional[float] = None
        if strategy in ("open_loop", "hierarchical"):
            reference, _ = nominal_plan(day_scenario, plan_delta_min, limits)
            if reference is None:
                days.append(DayResult(d, dict(init), None, None, True))
                break
            plan_cost = reference.total_cost
        report = monte_carlo(
            day_scenario,
            strategy,
            runs_per_day,
            day_seed,
            params=params,
            reference=reference,
            horizon=horizon,
        )
        days.append(DayResult(d, dict(init), report, plan_cost, False))
        mean_terminal = report.terminal_soc_kwh.mean(axis=0)
        init = {
            b.id: float(np.clip(mean_terminal[j] / b.capacity_kwh, 0.0, 1.0))
            for j, b in enumerate(scenario.buses)
        }
    return MultiDayReport(strategy=strategy, days=tuple(days))


# ---------------------------------------------------------------------------
# exports


def save_run_trajectory_csv(run: SimRun, path: str) -> None:
    """Per-minute trajectory: ``t_min,bus,soc_kwh,charging_type,gain_kwh``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t_min", "bus", "soc_kwh", "charging_type", "gain_kwh"])
        n_steps = run.meter_kwh.size
        for k in range(n_steps + 1):
            t = run.t0_min + k * TRUTH_DELTA_MIN
            for j, bus in enumerate(run.bus_ids):
                tid = run.charge_type[j][k] if k < n_steps else None
                gain = run.charge_gain_kwh[j, k] if k < n_steps else 0.0
                w.writerow(
                    [f"{t:.1f}", bus, f"{run.soc_series[j, k]:.6f}",
                     tid or "", f"{gain:.6f}"]
                )


def save_report_json(report: MCReport, path: str) -> None:
    payload = {
        "strategy": report.strategy,
        "n_runs": report.n_runs,
        "mean_cost": report.mean_cost,
        "mean_breakdown": report.mean_breakdown,
        "run_costs": list(report.run_costs),
        "violation_counts": list(report.violation_counts),
        "violation_rate": report.violation_rate,
        "worst_violation_kwh": report.worst_violation_kwh,
        "sigma3_terminal_kwh": report.sigma3_terminal_kwh,
        "failed_runs": report.failed_runs,
        "bus_ids": list(report.bus_ids),
        "terminal_soc_kwh": report.terminal_soc_kwh.tolist(),
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def save_trace_csv(report: MCReport, path: str) -> None:
    """Ensemble SOC band: ``t,mean_soc,sigma3_lo,sigma3_hi``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "mean_soc", "sigma3_lo", "sigma3_hi"])
        for t, mu, s3 in zip(
            report.instant_minutes, report.mean_soc_trace, report.sigma3_soc_trace
        ):
            w.writerow(
                [f"{t:.1f}", f"{mu:.6f}", f"{mu - s3:.6f}", f"{mu + s3:.6f}"]
            )
