"""Cloud-edge task allocation under capacity and bandwidth constraints.

Each task runs either in the cloud or at the edge.  A cloud assignment
pays its cloud compute cost plus a round-trip transmission latency of
2 * data_size / rate; an edge assignment pays only its edge compute cost.
The objective is compute cost plus latency_weight times total latency,
minimized subject to cloud capacity, edge capacity, and bandwidth on the
data shipped to the cloud.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product
from typing import Mapping, Sequence

from .errors import ConfigError, InputError

CLOUD = "cloud"
EDGE = "edge"
MAX_EXACT_TASKS = 20


@dataclass(frozen=True)
class Task:
    task_id: str
    comp_cloud: float
    comp_edge: float
    data_size: float

    def __post_init__(self) -> None:
        if min(self.comp_cloud, self.comp_edge, self.data_size) < 0:
            raise ConfigError(f"task {self.task_id!r}: costs and data size must be nonnegative")


@dataclass(frozen=True)
class PlacementProblem:
    tasks: tuple[Task, ...]
    rate: float
    bandwidth: float
    cap_cloud: float
    cap_edge: float
    latency_weight: float = 1.0

    def __post_init__(self) -> None:
        if self.rate <= 0:
            raise ConfigError(f"rate must be positive, got {self.rate}")
        if min(self.bandwidth, self.cap_cloud, self.cap_edge, self.latency_weight) < 0:
            raise ConfigError("bandwidth, capacities and latency_weight must be nonnegative")
        ids = [t.task_id for t in self.tasks]
        if len(set(ids)) != len(ids):
            raise ConfigError("duplicate task ids")


@dataclass
class PlacementPlan:
    assignment: dict[str, str]
    objective: float
    compute_cost: float
    latency: float
    feasible: bool


def evaluate_plan(problem: PlacementProblem, assignment: Mapping[str, str]) -> PlacementPlan:
    """Cost, latency, objective and feasibility of a complete assignment."""
    ids = {t.task_id for t in problem.tasks}
    if set(assignment) != ids:
        raise InputError("assignment must cover every task exactly once")
    compute_cost = 0.0
    latency = 0.0
    cloud_comp = 0.0
    edge_comp = 0.0
    cloud_data = 0.0
    for task in problem.tasks:
        side = assignment[task.task_id]
        if side == CLOUD:
            compute_cost += task.comp_cloud
            latency += 2.0 * task.data_size / problem.rate
            cloud_comp += task.comp_cloud
            cloud_data += task.data_size
        elif side == EDGE:
            compute_cost += task.comp_edge
            edge_comp += task.comp_edge
        else:
            raise InputError(f"task {task.task_id!r}: unknown side {side!r}")
    objective = compute_cost + problem.latency_weight * latency
    feasible = (
        cloud_comp <= problem.cap_cloud
        and edge_comp <= problem.cap_edge
        and cloud_data <= problem.bandwidth
    )
    return PlacementPlan(dict(assignment), objective, compute_cost, latency, feasible)


def _violation(problem: PlacementProblem, plan: PlacementPlan) -> float:
    cloud_comp = sum(t.comp_cloud for t in problem.tasks if plan.assignment[t.task_id] == CLOUD)
    edge_comp = sum(t.comp_edge for t in problem.tasks if plan.assignment[t.task_id] == EDGE)
    cloud_data = sum(t.data_size for t in problem.tasks if plan.assignment[t.task_id] == CLOUD)
    return (
        max(0.0, cloud_comp - problem.cap_cloud)
        + max(0.0, edge_comp - problem.cap_edge)
        + max(0.0, cloud_data - problem.bandwidth)
    )


def _tie_key(plan: PlacementPlan, tasks: Sequence[Task]):
    """Lower is better: objective, fewer cloud tasks, lexicographic edge-first."""
    sides = tuple(0 if plan.assignment[t.task_id] == EDGE else 1 for t in tasks)
    return (plan.objective, sum(sides), sides)


def solve_exact(problem: PlacementProblem) -> PlacementPlan:
    """Exhaustive minimum-objective assignment.

    Ties prefer more edge assignments, then the lexicographically smallest
    assignment in task order with edge before cloud.  If no assignment is
    feasible, the returned plan has ``feasible=False`` and minimizes total
    constraint violation, breaking ties by the same key.
    """
    n = len(problem.tasks)
    if n > MAX_EXACT_TASKS:
        raise InputError(f"solve_exact handles at most {MAX_EXACT_TASKS} tasks, got {n}")
    if n == 0:
        return evaluate_plan(problem, {})
    best = None
    best_key = None
    fallback = None
    fallback_key = None
    for sides in product((EDGE, CLOUD), repeat=n):
        plan = evaluate_plan(problem, {t.task_id: s for t, s in zip(problem.tasks, sides)})
        if plan.feasible:
            key = _tie_key(plan, problem.tasks)
            if best_key is None or key < best_key:
                best, best_key = plan, key
        elif best is None:
            key = (_violation(problem, plan),) + _tie_key(plan, problem.tasks)
            if fallback_key is None or key < fallback_key:
                fallback, fallback_key = plan, key
    return best if best is not None else fallback


def solve_greedy(problem: PlacementProblem) -> PlacementPlan:
    """Heuristic: assign tasks by descending cost gap to their cheaper feasible side."""
    lw = problem.latency_weight
    cloud_total = {t.task_id: t.comp_cloud + lw * 2.0 * t.data_size / problem.rate for t in problem.tasks}
    order = sorted(
        range(len(problem.tasks)),
        key=lambda i: (-abs(problem.tasks[i].comp_edge - cloud_total[problem.tasks[i].task_id]), i),
    )
    rem_cloud = problem.cap_cloud
    rem_edge = problem.cap_edge
    rem_band = problem.bandwidth
    assignment: dict[str, str] = {}
    for i in order:
        task = problem.tasks[i]
        prefer_edge = task.comp_edge <= cloud_total[task.task_id]
        edge_ok = task.comp_edge <= rem_edge
        cloud_ok = task.comp_cloud <= rem_cloud and task.data_size <= rem_band
        if prefer_edge:
            side = EDGE if edge_ok else (CLOUD if cloud_ok else EDGE)
        else:
            side = CLOUD if cloud_ok else (EDGE if edge_ok else CLOUD)
        assignment[task.task_id] = side
        if side == CLOUD:
            rem_cloud -= task.comp_cloud
            rem_band -= task.data_size
        else:
            rem_edge -= task.comp_edge
    return evaluate_plan(problem, assignment)


PROBLEM_HEADER = "placement-problem v1"


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def dump_problem(problem: PlacementProblem) -> str:
    lines = [
        PROBLEM_HEADER,
        f"rate {_fmt(problem.rate)}",
        f"bandwidth {_fmt(problem.bandwidth)}",
        f"cap_cloud {_fmt(problem.cap_cloud)}",
        f"cap_edge {_fmt(problem.cap_edge)}",
        f"latency_weight {_fmt(problem.latency_weight)}",
        f"tasks {len(problem.tasks)}",
    ]
    for t in problem.tasks:
        lines.append(f"{t.task_id} {_fmt(t.comp_cloud)} {_fmt(t.comp_edge)} {_fmt(t.data_size)}")
    return "\n".join(lines) + "\n"


def parse_problem(text: str) -> PlacementProblem:
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines or lines[0] != PROBLEM_HEADER:
        raise InputError("not a placement-problem file")
    fields = dict(line.split(" ", 1) for line in lines[1:6])
    n = int(lines[6].split()[1])
    tasks = []
    for line in lines[7 : 7 + n]:
        tid, cc, ce, d = line.split()
        tasks.append(Task(tid, float(cc), float(ce), float(d)))
    return PlacementProblem(
        tasks=tuple(tasks),
        rate=float(fields["rate"]),
        bandwidth=float(fields["bandwidth"]),
        cap_cloud=float(fields["cap_cloud"]),
        cap_edge=float(fields["cap_edge"]),
        latency_weight=float(fields["latency_weight"]),
    )


def load_problem(path) -> PlacementProblem:
    with open(path) as fh:
        return parse_problem(fh.read())


def dump_plan(plan: PlacementPlan) -> str:
    lines = [
        "placement-plan v1",
        f"objective {_fmt(plan.objective)}",
        f"compute_cost {_fmt(plan.compute_cost)}",
        f"latency {_fmt(plan.latency)}",
        f"feasible {int(plan.feasible)}",
        f"tasks {len(plan.assignment)}",
    ]
    for tid, side in plan.assignment.items():
        lines.append(f"{tid} {side}")
    return "\n".join(lines) + "\n"


def save_plan(plan: PlacementPlan, path) -> None:
    with open(path, "w") as fh:
        fh.write(dump_plan(plan))
