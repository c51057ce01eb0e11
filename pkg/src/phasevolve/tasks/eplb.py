"""Expert-to-device load balancing with evolvable heuristics.

Candidates are small heuristic descriptors (sort order, placement rule,
rebalance budget) decoded from token sequences. The scorer rewards both load
uniformity across devices and cheapness of the assignment procedure, measured
by a deterministic operation count so that runs are exactly reproducible.
"""

from __future__ import annotations

import enum
import math
import time
from dataclasses import dataclass

import numpy as np

from ..policy import TokenSequence
from ..rewards import EvaluationOutcome

BRUTE_FORCE_MAX_EXPERTS = 12


class SortMode(enum.Enum):
    DESCENDING_LOAD = 0
    ASCENDING_LOAD = 1
    UNSORTED = 2


class Placement(enum.Enum):
    GREEDY_LEAST_LOADED = 0
    ROUND_ROBIN = 1
    BLOCKED = 2


@dataclass(frozen=True)
class HeuristicDescriptor:
    sort_mode: SortMode = SortMode.DESCENDING_LOAD
    placement: Placement = Placement.GREEDY_LEAST_LOADED
    rebalance_passes: int = 0
    swap_window: int = 1

    def as_dict(self) -> dict:
        return {
            "sort_mode": self.sort_mode.name,
            "placement": self.placement.name,
            "rebalance_passes": self.rebalance_passes,
            "swap_window": self.swap_window,
        }


@dataclass(frozen=True)
class WorkloadProfile:
    """Per-expert demand matrix (num_profiles x num_experts) plus device count."""

    loads: np.ndarray
    num_devices: int

    def __post_init__(self) -> None:
        loads = np.asarray(self.loads, dtype=np.float64)
        if loads.ndim != 2:
            raise ValueError(f"loads must be 2-d, got shape {loads.shape}")
        object.__setattr__(self, "loads", loads)
        if not 1 <= self.num_devices <= self.num_experts:
            raise ValueError(
                f"need num_experts ({self.num_experts}) >= num_devices ({self.num_devices}) >= 1"
            )
        if np.any(loads < 0) or not np.all(np.isfinite(loads)):
            raise ValueError("loads must be finite and nonnegative")
        if np.any(loads.max(axis=1) <= 0):
            raise ValueError("every profile needs at least one positive load")

    @property
    def num_profiles(self) -> int:
        return self.loads.shape[0]

    @property
    def num_experts(self) -> int:
        return self.loads.shape[1]

    @classmethod
    def generate(
        cls,
        num_profiles: int = 8,
        num_experts: int = 32,
        num_devices: int = 4,
        seed: int = 7,
    ) -> "WorkloadProfile":
        """Synthetic heavy-tailed demand profiles (Pareto tail, seeded)."""
        rng = np.random.default_rng(seed)
        loads = 1.0 + rng.pareto(2.0, size=(num_profiles, num_experts))
        return cls(loads=loads, num_devices=num_devices)

    @classmethod
    def load(cls, path) -> "WorkloadProfile":
        """Read the plain-text format: header "E D P", then P rows of E loads."""
        with open(path) as fh:
            header = fh.readline().split()
            if len(header) != 3:
                raise ValueError(f"expected header 'E D P', got {header}")
            num_experts, num_devices, num_profiles = (int(x) for x in header)
            rows = []
            for line in fh:
                line = line.strip()
                if line:
                    rows.append([float(x) for x in line.split()])
        loads = np.asarray(rows, dtype=np.float64)
        if loads.shape != (num_profiles, num_experts):
            raise ValueError(
                f"header promises {num_profiles} x {num_experts}, file holds {loads.shape}"
            )
        return cls(loads=loads, num_devices=num_devices)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(f"{self.num_experts} {self.num_devices} {self.num_profiles}\n")
            for row in self.loads:
                fh.write(" ".join(repr(float(x)) for x in row) + "\n")


def eplb_decode(seq: TokenSequence) -> HeuristicDescriptor:
    """Positional decoding of the first four masked-in tokens.

    Total on the vocabulary and surjective onto the descriptor space; missing
    positions (short or heavily masked sequences) default to 0.
    """
    visible = [int(t) for t, m in zip(seq.tokens, seq.mask) if m]
    visible += [0] * (4 - len(visible))
    return HeuristicDescriptor(
        sort_mode=SortMode(visible[0] % 3),
        placement=Placement(visible[1] % 3),
        rebalance_passes=visible[2] % 4,
        swap_window=1 + visible[3] % 4,
    )


def _assign_one(
    h: HeuristicDescriptor, loads: np.ndarray, num_devices: int
) -> tuple[np.ndarray, int]:
    num_experts = loads.size
    ops = 0

    if h.sort_mode is SortMode.DESCENDING_LOAD:
        order = np.argsort(-loads, kind="stable")
        ops += num_experts * max(1, math.ceil(math.log2(max(num_experts, 2))))
    elif h.sort_mode is SortMode.ASCENDING_LOAD:
        order = np.argsort(loads, kind="stable")
        ops += num_experts * max(1, math.ceil(math.log2(max(num_experts, 2))))
    else:
        order = np.arange(num_experts)

    device = np.empty(num_experts, dtype=np.int64)
    device_loads = np.zeros(num_devices)
    if h.placement is Placement.GREEDY_LEAST_LOADED:
        for expert in order:
            dest = int(np.argmin(device_loads))
            device[expert] = dest
            device_loads[dest] += loads[expert]
            ops += num_devices + 1
    elif h.placement is Placement.ROUND_ROBIN:
        for position, expert in enumerate(order):
            dest = position % num_devices
            device[expert] = dest
            device_loads[dest] += loads[expert]
            ops += 1
    else:  # Placement.BLOCKED: contiguous chunks of the chosen order
        block = math.ceil(num_experts / num_devices)
        for position, expert in enumerate(order):
            dest = min(position // block, num_devices - 1)
            device[expert] = dest
            device_loads[dest] += loads[expert]
            ops += 1

    for _ in range(h.rebalance_passes):
        hot = int(np.argmax(device_loads))
        cold = int(np.argmin(device_loads))
        ops += 2 * num_devices
        if hot == cold:
            break
        resident = np.flatnonzero(device == hot)
        ops += resident.size
        candidates = resident[np.argsort(-loads[resident], kind="stable")][: h.swap_window]
        moved = False
        for expert in candidates:
            ops += 2
            new_peak = max(
                device_loads[hot] - loads[expert], device_loads[cold] + loads[expert]
            )
            if new_peak < device_loads[hot]:
                device[expert] = cold
                device_loads[hot] -= loads[expert]
                device_loads[cold] += loads[expert]
                ops += 1
                moved = True
                break
        if not moved:
            break

    return device, ops


def eplb_assign(
    h: HeuristicDescriptor, w: WorkloadProfile
) -> tuple[np.ndarray, int]:
    """Run the heuristic on every profile.

    Returns a (num_profiles x num_experts) device index matrix and the total
    deterministic operation count (the wall-clock proxy).
    """
    assignment = np.empty((w.num_profiles, w.num_experts), dtype=np.int64)
    total_ops = 0
    for p in range(w.num_profiles):
        assignment[p], ops = _assign_one(h, w.loads[p], w.num_devices)
        total_ops += ops
    return assignment, total_ops


def eplb_score(
    assignment: np.ndarray,
    w: WorkloadProfile,
    op_count: int,
    c_ref: float,
) -> tuple[float, float, float]:
    """(balancedness, speed, score) for an assignment.

    Balancedness is mean device load over max device load, averaged across
    profiles; speed is the reference op count over the heuristic's op count,
    clamped to 1; the score is their arithmetic mean.
    """
    assignment = np.asarray(assignment)
    if assignment.shape != w.loads.shape:
        raise ValueError(
            f"assignment shape {assignment.shape} must match loads {w.loads.shape}"
        )
    balance_terms = []
    for p in range(w.num_profiles):
        device_loads = np.bincount(
            assignment[p], weights=w.loads[p], minlength=w.num_devices
        )[: w.num_devices]
        peak = device_loads.max()
        if peak <= 0:
            raise ValueError(f"profile {p} has zero max device load")
        balance_terms.append(device_loads.mean() / peak)
    balancedness = float(np.mean(balance_terms))
    if op_count <= 0:
        raise ValueError(f"op_count must be positive, got {op_count}")
    speed = min(c_ref / op_count, 1.0)
    return balancedness, speed, 0.5 * (balancedness + speed)


def brute_force_balance(w: WorkloadProfile) -> np.ndarray:
    """Exact minimum max-device-load per profile, by exhaustive assignment.

    Branch-and-bound over all device choices with symmetry breaking; still
    exponential, so guarded to small expert counts. Test oracle only.
    """
    if w.num_experts > BRUTE_FORCE_MAX_EXPERTS:
        raise ValueError(
            f"{w.num_experts} experts exceeds brute-force guard {BRUTE_FORCE_MAX_EXPERTS}"
        )
    out = np.empty(w.num_profiles)
    for p in range(w.num_profiles):
        loads = np.sort(w.loads[p])[::-1]
        best = float(loads.sum())
        device_loads = [0.0] * w.num_devices

        def search(i: int, used: int) -> None:
            nonlocal best
            if i == loads.size:
                best = min(best, max(device_loads))
                return
            tried: set[float] = set()
            for d in range(min(used + 1, w.num_devices)):
                if device_loads[d] in tried:
                    continue
                tried.add(device_loads[d])
                if device_loads[d] + loads[i] >= best:
                    continue
                device_loads[d] += loads[i]
                search(i + 1, max(used, d + 1))
                device_loads[d] -= loads[i]

        search(0, 0)
        out[p] = best
    return out


class EplbTask:
    """Evaluator wiring: decode tokens, assign, score, report a Parsed outcome."""

    name = "eplb"

    def __init__(self, profile: WorkloadProfile, wall_clock_speed: bool = False):
        self.profile = profile
        self.wall_clock_speed = wall_clock_speed
        # Reference cost: the base heuristic (all-zero decoding) on these
        # profiles, so the base candidate scores speed exactly 1.
        _, self.c_ref = eplb_assign(HeuristicDescriptor(), profile)

    def describe(self, seq: TokenSequence) -> dict:
        return eplb_decode(seq).as_dict()

    def evaluate(
        self, seq: TokenSequence, iteration: int, rng: np.random.Generator
    ) -> EvaluationOutcome:
        descriptor = eplb_decode(seq)
        started = time.perf_counter() if self.wall_clock_speed else 0.0
        assignment, ops = eplb_assign(descriptor, self.profile)
        elapsed = time.perf_counter() - started if self.wall_clock_speed else 0.0
        balancedness, speed, score = eplb_score(assignment, self.profile, ops, self.c_ref)
        return EvaluationOutcome.parsed(
            score,
            wall_time=elapsed,
            metrics={"balancedness": balancedness, "speed": speed, "op_count": float(ops)},
        )
