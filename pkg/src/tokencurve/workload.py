"""Synthetic DAG jobs, a token-capped executor, and JSONL persistence.

The executor is the ground-truth oracle: tasks of stage ``s`` become eligible
once every task of stage ``s - 1`` has finished, and within a stage tasks start
strictly in ``(stage, id)`` order whenever enough tokens are free. The head of
the queue blocks the rest, so more tokens never delay any task.
"""
from __future__ import annotations

import heapq
import json
import math
import warnings
from dataclasses import asdict, dataclass, field, fields
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .configfile import dataclass_from_mapping, read_mapping
from .errors import ConfigError, InfeasibleCapError, InvalidDAGError, ParseError
from .skyline import Skyline

FORMAT_VERSION = 1
OTHER = "Other"


@lru_cache(maxsize=None)
def _vocab(name: str) -> tuple[str, ...]:
    text = resources.files("tokencurve").joinpath("data").joinpath(name).read_text()
    return tuple(line.strip() for line in text.splitlines() if line.strip())


def physical_ops() -> tuple[str, ...]:
    """The 35 named physical operator kinds (``Other`` excluded)."""
    return _vocab("physical_ops.txt")


def partition_kinds() -> tuple[str, ...]:
    return _vocab("partition_kinds.txt")


NUMERIC_FIELDS = (
    "estimated_cardinality",
    "input_cardinality",
    "input_children_cardinality",
    "average_row_length",
    "estimated_cost",
    "estimated_exclusive_cost",
    "estimated_total_cost",
    "partition_count",
    "partitioning_column_count",
    "sort_column_count",
)


@dataclass
class Operator:
    id: int
    physical_op: str = OTHER
    estimated_cardinality: float = 0.0
    input_cardinality: float = 0.0
    input_children_cardinality: float = 0.0
    average_row_length: float = 0.0
    estimated_cost: float = 0.0
    estimated_exclusive_cost: float = 0.0
    estimated_total_cost: float = 0.0
    partition_count: int = 0
    partitioning_column_count: int = 0
    sort_column_count: int = 0
    partition_kind: str = OTHER

    def numeric(self) -> list[float]:
        return [float(getattr(self, f)) for f in NUMERIC_FIELDS]


class Task(NamedTuple):
    token_demand: int
    duration: int
    stage: int


@dataclass
class Job:
    id: str
    operators: list[Operator]
    edges: list[tuple[int, int]]
    stage_count: int
    tasks: list[Task] = field(default_factory=list)
    observed_allocation: int = 1
    observed_skyline: Skyline | None = None
    template_id: str = ""

    @property
    def total_work(self) -> int:
        return sum(t.token_demand * t.duration for t in self.tasks)

    @property
    def observed_runtime(self) -> int:
        if self.observed_skyline is None:
            raise ValueError(f"job {self.id} has no observed skyline")
        return self.observed_skyline.runtime

    @property
    def peak(self) -> int:
        if self.observed_skyline is None:
            raise ValueError(f"job {self.id} has no observed skyline")
        return self.observed_skyline.peak

    @property
    def over_allocated(self) -> bool:
        return self.observed_allocation > self.peak

    def validate(self) -> None:
        ids = [op.id for op in self.operators]
        if len(set(ids)) != len(ids):
            raise InvalidDAGError(f"job {self.id}: duplicate operator ids")
        check_acyclic(ids, self.edges)
        if self.observed_allocation < 1:
            raise ConfigError(f"job {self.id}: observed_allocation must be >= 1")
        if self.observed_skyline is not None and self.observed_skyline.peak > self.observed_allocation:
            raise ConfigError(f"job {self.id}: skyline peak exceeds observed allocation")


def check_acyclic(ids: Sequence[int], edges: Iterable[tuple[int, int]]) -> list[int]:
    """Kahn's algorithm; returns a topological order or raises InvalidDAGError."""
    known = set(ids)
    children: dict[int, list[int]] = {i: [] for i in ids}
    indeg = {i: 0 for i in ids}
    for p, c in edges:
        if p not in known or c not in known:
            raise InvalidDAGError(f"edge ({p}, {c}) references an unknown operator")
        children[p].append(c)
        indeg[c] += 1
    ready = [i for i in ids if indeg[i] == 0]
    order = []
    while ready:
        n = ready.pop()
        order.append(n)
        for c in children[n]:
            indeg[c] -= 1
            if indeg[c] == 0:
                ready.append(c)
    if len(order) != len(known):
        raise InvalidDAGError("operator graph contains a cycle")
    return order


@dataclass
class Workload:
    jobs: list[Job]
    seed: int | None = None
    generator_config: dict = field(default_factory=dict)

    def __post_init__(self):
        ids = [j.id for j in self.jobs]
        if len(set(ids)) != len(ids):
            raise ConfigError("job ids must be unique")

    def __len__(self) -> int:
        return len(self.jobs)

    def __iter__(self):
        return iter(self.jobs)


# ---------------------------------------------------------------------------
# executor


def execute_at_cap(job: Job, cap: int) -> Skyline:
    """Run the job's tasks greedily under ``cap`` tokens; returns per-second usage."""
    if not job.tasks:
        raise ConfigError(f"job {job.id} has no tasks to execute")
    biggest = max(t.token_demand for t in job.tasks)
    if cap < biggest:
        raise InfeasibleCapError(f"cap {cap} is below the largest task demand {biggest}")
    order = sorted(range(len(job.tasks)), key=lambda i: (job.tasks[i].stage, i))
    by_stage: dict[int, list[Task]] = {}
    for i in order:
        by_stage.setdefault(job.tasks[i].stage, []).append(job.tasks[i])

    starts: list[int] = []
    ends: list[int] = []
    demands: list[int] = []
    clock = 0
    for stage in sorted(by_stage):
        running: list[tuple[int, int]] = []  # (end, demand)
        free = cap
        now = clock
        stage_end = clock
        for task in by_stage[stage]:
            while task.token_demand > free:
                end, d = heapq.heappop(running)
                now = max(now, end)
                free += d
                while running and running[0][0] <= now:
                    free += heapq.heappop(running)[1]
            if task.duration <= 0:
                continue
            heapq.heappush(running, (now + task.duration, task.token_demand))
            free -= task.token_demand
            starts.append(now)
            ends.append(now + task.duration)
            demands.append(task.token_demand)
            stage_end = max(stage_end, now + task.duration)
        clock = stage_end
    if clock == 0:
        raise ConfigError(f"job {job.id} has no positive-duration tasks")
    diff = np.zeros(clock + 1, dtype=np.int64)
    np.add.at(diff, np.asarray(starts), np.asarray(demands))
    np.add.at(diff, np.asarray(ends), -np.asarray(demands))
    return Skyline(np.cumsum(diff)[:-1])


def peakiness(s: Skyline) -> float:
    """Peak-to-mean usage ratio; the generator's shape classifier."""
    mean = s.area / s.runtime
    return s.peak / mean if mean > 0 else math.inf


# ---------------------------------------------------------------------------
# generator


@dataclass
class GeneratorConfig:
    n_jobs: int = 1000
    n_templates: int = 200
    min_stages: int = 2
    max_stages: int = 8
    max_peak_tokens: int = 400
    min_runtime: int = 30
    max_runtime: int = 7200
    peaky_fraction: float = 0.5
    peaky_threshold: float = 2.0
    over_allocated_fraction: float = 0.2
    max_over_allocation: float = 3.0

    def validate(self) -> None:
        if self.n_jobs < 1 or self.n_templates < 1:
            raise ConfigError("n_jobs and n_templates must be >= 1")
        if not 1 <= self.min_stages <= self.max_stages:
            raise ConfigError("need 1 <= min_stages <= max_stages")
        if self.max_peak_tokens < 8:
            raise ConfigError("max_peak_tokens must be >= 8")
        if not 1 <= self.min_runtime < self.max_runtime:
            raise ConfigError("need 1 <= min_runtime < max_runtime")
        if self.max_runtime < 20 * self.min_runtime and self.max_runtime < 600:
            raise ConfigError("runtime range too narrow for the generator")
        if not 0.0 <= self.peaky_fraction <= 1.0:
            raise ConfigError("peaky_fraction must be in [0, 1]")
        if not 0.0 <= self.over_allocated_fraction <= 1.0:
            raise ConfigError("over_allocated_fraction must be in [0, 1]")
        if self.peaky_threshold <= 1.0:
            raise ConfigError("peaky_threshold must be > 1")
        if self.max_over_allocation <= 1.2:
            raise ConfigError("max_over_allocation must be > 1.2")

    @classmethod
    def from_mapping(cls, data: dict) -> GeneratorConfig:
        return dataclass_from_mapping(cls, data)

    @classmethod
    def from_file(cls, path: str | Path) -> GeneratorConfig:
        """JSON object, or flat ``key=value`` lines (``#`` comments allowed)."""
        return cls.from_mapping(read_mapping(path))


WIDE_OPS = ("HashJoin", "HashAggregate", "Filter", "Project", "ComputeScalar", "Repartition",
            "BroadcastJoin", "Process", "Combine", "Distinct", "Split", "CrossApply")
NARROW_OPS = ("Sort", "TopN", "Top", "StreamAggregate", "Window", "Merge", "MergeJoin",
              "Sequence", "Reduce", "Union", "UnionAll", "Spool")
SCAN_OPS = ("Extract", "IndexLookup", "Range", "Sample")


@dataclass
class _StageTemplate:
    wide: bool
    width: float          # tasks at instance scale 1
    rows_per_task: float
    ops: tuple[str, ...]


@dataclass
class _Template:
    id: str
    peaky: bool
    row_length: float
    throughput: float     # row-bytes processed per task-second
    stages: list[_StageTemplate]
    join_inputs: dict[int, int]   # stage -> extra earlier stage feeding its first operator


def _make_template(rng: np.random.Generator, tid: str, peaky: bool, cfg: GeneratorConfig) -> _Template:
    n_stages = int(rng.integers(cfg.min_stages, cfg.max_stages + 1))
    top = float(np.exp(rng.normal(np.log(cfg.max_peak_tokens) - 1.6, 0.9)))
    top = float(np.clip(top, 4, cfg.max_peak_tokens * 0.8))
    row_length = float(rng.uniform(40, 600))
    throughput = float(np.exp(rng.normal(np.log(4e6), 0.3)))
    if peaky:
        n_wide = max(1, int(round(n_stages * rng.uniform(0.2, 0.45))))
    else:
        n_wide = max(1, n_stages - int(rng.integers(0, 2)))
    wide_idx = set(rng.choice(n_stages, size=min(n_wide, n_stages), replace=False).tolist())
    stages = []
    for s in range(n_stages):
        wide = s in wide_idx
        if wide:
            width = top * (rng.uniform(0.6, 1.0) if not peaky else rng.uniform(0.7, 1.0))
            # peaky wide phases are short bursts; flat ones are long
            seconds = rng.uniform(5, 25) if peaky else rng.uniform(20, 120)
        else:
            width = float(rng.integers(1, 4)) if peaky else top * rng.uniform(0.3, 0.6)
            seconds = rng.uniform(30, 200) if peaky else rng.uniform(10, 60)
        rows = seconds * throughput / row_length
        n_ops = int(rng.integers(1, 4))
        pool = WIDE_OPS if wide else NARROW_OPS
        ops = tuple(rng.choice(pool, size=n_ops).tolist())
        if s == 0:
            ops = (str(rng.choice(SCAN_OPS)),) + ops
        if s == n_stages - 1:
            ops = ops + ("Output",)
        stages.append(_StageTemplate(wide, float(width), float(rows), ops))
    joins = {}
    for s in range(2, n_stages):
        if rng.random() < 0.3:
            joins[s] = int(rng.integers(0, s - 1))
    return _Template(tid, peaky, row_length, throughput, stages, joins)


def _instantiate(rng: np.random.Generator, tpl: _Template, job_id: str, cfg: GeneratorConfig) -> Job:
    scale = float(np.exp(rng.normal(0.0, 0.35)))
    dur_scale = float(np.exp(rng.normal(0.0, 0.25)))
    operators: list[Operator] = []
    edges: list[tuple[int, int]] = []
    tasks: list[Task] = []
    last_op_of_stage: dict[int, int] = {}
    est_card_of: dict[int, float] = {}
    total_cost_of: dict[int, float] = {}
    for s, st in enumerate(tpl.stages):
        width = int(np.clip(round(st.width * scale), 1, cfg.max_peak_tokens))
        rows = st.rows_per_task * dur_scale
        base = rows * tpl.row_length / tpl.throughput
        for _ in range(width):
            d = max(1, int(round(base * rng.uniform(0.75, 1.3))))
            tasks.append(Task(1, d, s))
        in_rows = rows * width
        prev_children: list[int] = []
        if s > 0:
            prev_children.append(last_op_of_stage[s - 1])
            if s in tpl.join_inputs:
                prev_children.append(last_op_of_stage[tpl.join_inputs[s]])
        for k, kind in enumerate(st.ops):
            oid = len(operators)
            children = prev_children if k == 0 else [oid - 1]
            child_card = sum(est_card_of[c] for c in children) if children else in_rows
            selectivity = float(np.exp(rng.normal(-0.2, 0.4)))
            true_card = in_rows * min(selectivity, 1.5)
            est_card = true_card * float(np.exp(rng.normal(0.0, 0.5)))
            excl = est_card * tpl.row_length * 1e-6 * float(np.exp(rng.normal(0.0, 0.2)))
            total = excl + sum(total_cost_of[c] for c in children)
            partitioned = st.wide or kind in ("Repartition", "MergeJoin")
            op = Operator(
                id=oid,
                physical_op=kind,
                estimated_cardinality=round(est_card, 3),
                input_cardinality=round(in_rows, 3),
                input_children_cardinality=round(child_card, 3),
                average_row_length=round(tpl.row_length * float(np.exp(rng.normal(0, 0.05))), 3),
                estimated_cost=round(excl * 1.05, 6),
                estimated_exclusive_cost=round(excl, 6),
                estimated_total_cost=round(total, 6),
                partition_count=width if partitioned else 1,
                partitioning_column_count=int(rng.integers(1, 4)) if partitioned else 0,
                sort_column_count=int(rng.integers(1, 4)) if kind in ("Sort", "MergeJoin", "StreamAggregate", "TopN", "Window") else 0,
                partition_kind=(str(rng.choice(("Hash", "Range", "RoundRobin"))) if partitioned else "Broadcast"),
            )
            operators.append(op)
            for c in children:
                edges.append((oid, c))
            est_card_of[oid] = est_card
            total_cost_of[oid] = total
            in_rows = est_card
        last_op_of_stage[s] = len(operators) - 1
    job = Job(
        id=job_id,
        operators=operators,
        edges=edges,
        stage_count=len(tpl.stages),
        tasks=tasks,
        observed_allocation=1,
        template_id=tpl.id,
    )
    max_width = max(sum(1 for t in tasks if t.stage == s) for s in range(len(tpl.stages)))
    if rng.random() < cfg.over_allocated_fraction:
        alloc = math.ceil(max_width * rng.uniform(1.2, cfg.max_over_allocation))
    else:
        alloc = max(1, int(round(max_width * rng.uniform(0.6, 1.0))))
    job.observed_allocation = alloc
    job.observed_skyline = execute_at_cap(job, alloc)
    return job


def _accept(job: Job, tpl: _Template, cfg: GeneratorConfig) -> bool:
    s = job.observed_skyline
    if not cfg.min_runtime <= s.runtime <= cfg.max_runtime:
        return False
    if s.peak > cfg.max_peak_tokens:
        return False
    return (peakiness(s) > cfg.peaky_threshold) == tpl.peaky


def generate(config: GeneratorConfig | None = None, seed: int = 0) -> Workload:
    """Deterministic synthetic workload: recurring templates instantiated at varying input sizes."""
    cfg = config or GeneratorConfig()
    cfg.validate()
    rng = np.random.default_rng(seed)
    templates: list[_Template] = []
    for t in range(min(cfg.n_templates, cfg.n_jobs)):
        templates.append(_make_template(rng, f"t{t:04d}", bool(rng.random() < cfg.peaky_fraction), cfg))
    jobs = []
    for j in range(cfg.n_jobs):
        slot = j % len(templates) if j < len(templates) else int(rng.integers(len(templates)))
        job_id = f"job{j:06d}"
        for attempt in range(200):
            tpl = templates[slot]
            job = _instantiate(rng, tpl, job_id, cfg)
            if _accept(job, tpl, cfg):
                break
            if attempt % 10 == 9:
                # this template keeps missing the bounds; redraw it with the same shape
                templates[slot] = _make_template(rng, tpl.id, tpl.peaky, cfg)
        else:
            raise ConfigError("generator could not satisfy the configured bounds; widen them")
        jobs.append(job)
    return Workload(jobs=jobs, seed=seed, generator_config=asdict(cfg))


# ---------------------------------------------------------------------------
# persistence


def job_to_dict(job: Job) -> dict:
    return {
        "id": job.id,
        "template_id": job.template_id,
        "stage_count": job.stage_count,
        "observed_allocation": job.observed_allocation,
        "operators": [asdict(op) for op in job.operators],
        "edges": [list(e) for e in job.edges],
        "tasks": [list(t) for t in job.tasks],
        "observed_skyline": None if job.observed_skyline is None else job.observed_skyline.tolist(),
    }


_OP_FIELDS = {f.name for f in fields(Operator)}


def _operator_from_dict(d: dict, where: str) -> Operator:
    unknown = set(d) - _OP_FIELDS
    if unknown:
        raise ValueError(f"unknown operator fields {sorted(unknown)}")
    op = Operator(**d)
    if op.physical_op not in physical_ops() and op.physical_op != OTHER:
        warnings.warn(f"{where}: unknown physical_op {op.physical_op!r} mapped to {OTHER}", stacklevel=3)
        op.physical_op = OTHER
    if op.partition_kind not in partition_kinds() and op.partition_kind != OTHER:
        warnings.warn(f"{where}: unknown partition_kind {op.partition_kind!r} mapped to {OTHER}", stacklevel=3)
        op.partition_kind = OTHER
    for f in ("id",) + ("partition_count", "partitioning_column_count", "sort_column_count"):
        setattr(op, f, int(getattr(op, f)))
    for f in NUMERIC_FIELDS:
        v = getattr(op, f)
        if v is None:
            v = 0  # missing numerics are zero-imputed
            setattr(op, f, v)
        if not isinstance(v, (int, float)) or v < 0 or not math.isfinite(v):
            raise ValueError(f"operator {op.id}: field {f} must be a finite number >= 0")
    return op


def job_from_dict(d: dict, where: str = "job") -> Job:
    sky = d.get("observed_skyline")
    job = Job(
        id=str(d["id"]),
        template_id=str(d.get("template_id", "")),
        stage_count=int(d.get("stage_count", 1)),
        observed_allocation=int(d.get("observed_allocation", 1)),
        operators=[_operator_from_dict(o, where) for o in d["operators"]],
        edges=[(int(p), int(c)) for p, c in d.get("edges", [])],
        tasks=[Task(int(a), int(b), int(c)) for a, b, c in d.get("tasks", [])],
        observed_skyline=None if sky is None else Skyline(sky),
    )
    job.validate()
    return job


def dumps_jsonl(workload: Workload) -> str:
    header = {
        "kind": "workload_header",
        "format_version": FORMAT_VERSION,
        "seed": workload.seed,
        "generator_config": workload.generator_config,
    }
    lines = [json.dumps(header, sort_keys=True)]
    lines += [json.dumps(job_to_dict(j), sort_keys=True, separators=(",", ":")) for j in workload.jobs]
    return "\n".join(lines) + "\n"


def save(workload: Workload, path: str | Path) -> None:
    Path(path).write_text(dumps_jsonl(workload))


def load(path: str | Path) -> Workload:
    """Read a workload JSONL file; an optional first line carries seed and generator config."""
    seed = None
    gen_cfg: dict = {}
    jobs = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON ({exc.msg})", line=lineno) from None
            if not isinstance(rec, dict):
                raise ParseError("expected a JSON object", line=lineno)
            if rec.get("kind") == "workload_header":
                if rec.get("format_version", FORMAT_VERSION) != FORMAT_VERSION:
                    raise ParseError(f"unsupported format_version {rec.get('format_version')}", line=lineno)
                seed = rec.get("seed")
                gen_cfg = rec.get("generator_config") or {}
                continue
            try:
                jobs.append(job_from_dict(rec, where=f"line {lineno}"))
            except ParseError:
                raise
            except (KeyError, TypeError, ValueError) as exc:
                raise ParseError(f"malformed job record: {exc}", line=lineno) from None
    return Workload(jobs=jobs, seed=seed, generator_config=gen_cfg)
