import json
import warnings

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import ref_execute
from tokencurve.errors import ConfigError, InfeasibleCapError, InvalidDAGError, ParseError
from tokencurve.workload import (
    OTHER,
    GeneratorConfig,
    Job,
    Operator,
    Task,
    Workload,
    check_acyclic,
    dumps_jsonl,
    execute_at_cap,
    generate,
    job_from_dict,
    job_to_dict,
    load,
    partition_kinds,
    peakiness,
    physical_ops,
    save,
)


def _job(tasks, alloc=1):
    return Job(id="j", operators=[Operator(id=0)], edges=[], stage_count=1,
               tasks=[Task(*t) for t in tasks], observed_allocation=alloc)


task_lists = st.lists(
    st.tuples(st.integers(1, 5), st.integers(1, 12), st.integers(0, 3)), min_size=1, max_size=25)


@pytest.fixture(scope="module")
def small():
    return generate(GeneratorConfig(n_jobs=60, n_templates=20), seed=11)


def test_vocabularies():
    assert len(physical_ops()) == 35 and len(set(physical_ops())) == 35
    assert partition_kinds() == ("Hash", "Range", "RoundRobin", "Broadcast")


def test_executor_examples():
    four = _job([(1, 10, 0)] * 4)
    assert execute_at_cap(four, 2) == [2] * 20
    assert execute_at_cap(four, 4) == [4] * 10
    assert execute_at_cap(_job([(3, 5, 0)]), 3) == [3] * 5


def test_executor_stage_barrier_and_fifo_blocking():
    # the 3-token head keeps the 1-token task waiting although 2 tokens are free at t=0
    assert execute_at_cap(_job([(2, 2, 0), (3, 1, 0), (1, 1, 0)]), 4) == [2, 2, 4]
    # stage 1 waits for all of stage 0
    assert execute_at_cap(_job([(1, 3, 0), (1, 1, 0), (1, 1, 1)]), 4) == [2, 1, 1, 1]


def test_executor_infeasible_cap():
    with pytest.raises(InfeasibleCapError):
        execute_at_cap(_job([(3, 5, 0)]), 2)


@settings(max_examples=300, deadline=None)
@given(task_lists, st.integers(5, 20))
def test_executor_matches_second_by_second_oracle(tasks, cap):
    assert execute_at_cap(_job(tasks), cap).tolist() == ref_execute(tasks, cap)


@settings(max_examples=300, deadline=None)
@given(task_lists, st.integers(5, 20), st.integers(0, 10))
def test_executor_monotone_and_area_invariant(tasks, cap, extra):
    job = _job(tasks)
    lo, hi = execute_at_cap(job, cap), execute_at_cap(job, cap + extra)
    assert lo.runtime >= hi.runtime
    assert lo.area == hi.area == job.total_work
    assert lo.peak <= cap


def test_generate_is_deterministic():
    cfg = GeneratorConfig(n_jobs=30, n_templates=10)
    assert dumps_jsonl(generate(cfg, seed=7)) == dumps_jsonl(generate(cfg, seed=7))
    assert dumps_jsonl(generate(cfg, seed=7)) != dumps_jsonl(generate(cfg, seed=8))


def test_generate_unique_ids():
    w = generate(GeneratorConfig(n_jobs=100, n_templates=30), seed=1)
    assert len({j.id for j in w.jobs}) == 100


@pytest.mark.parametrize("frac", [0.0, 1.0])
def test_peaky_fraction_extremes(frac):
    cfg = GeneratorConfig(n_jobs=40, n_templates=15, peaky_fraction=frac)
    for job in generate(cfg, seed=2).jobs:
        assert (peakiness(job.observed_skyline) > cfg.peaky_threshold) == (frac == 1.0)


def test_generated_jobs_respect_bounds(small):
    cfg = GeneratorConfig()
    for job in small.jobs:
        job.validate()
        assert cfg.min_runtime <= job.observed_runtime <= cfg.max_runtime
        assert job.peak <= cfg.max_peak_tokens
        assert job.observed_skyline == execute_at_cap(job, job.observed_allocation)
        assert job.observed_skyline.area == job.total_work


def test_generated_mix(small):
    over = sum(j.over_allocated for j in small.jobs)
    assert 0 < over < len(small.jobs)
    assert len({j.template_id for j in small.jobs}) == 20


def test_invalid_config():
    with pytest.raises(ConfigError):
        generate(GeneratorConfig(n_jobs=0))
    with pytest.raises(ConfigError):
        GeneratorConfig.from_mapping({"bogus": 1})
    with pytest.raises(ConfigError):
        GeneratorConfig.from_mapping({"n_jobs": "many"})


def test_config_files(tmp_path):
    kv = tmp_path / "g.cfg"
    kv.write_text("# sizes\nn_jobs = 12\npeaky_fraction=0.25\n")
    assert GeneratorConfig.from_file(kv) == GeneratorConfig(n_jobs=12, peaky_fraction=0.25)
    js = tmp_path / "g.json"
    js.write_text(json.dumps({"n_jobs": 12, "peaky_fraction": 0.25}))
    assert GeneratorConfig.from_file(js) == GeneratorConfig(n_jobs=12, peaky_fraction=0.25)
    bad = tmp_path / "b.cfg"
    bad.write_text("n_jobs 12\n")
    with pytest.raises(ParseError) as ei:
        GeneratorConfig.from_file(bad)
    assert ei.value.line == 1


def test_save_load_round_trip(small, tmp_path):
    p = tmp_path / "w.jsonl"
    save(small, p)
    back = load(p)
    assert back.seed == 11
    assert back.generator_config == small.generator_config
    assert dumps_jsonl(back) == dumps_jsonl(small)
    assert [j.observed_skyline for j in back.jobs] == [j.observed_skyline for j in small.jobs]


def test_truncated_line_reports_line_number(small, tmp_path):
    p = tmp_path / "w.jsonl"
    lines = dumps_jsonl(small).splitlines()
    lines[3] = lines[3][: len(lines[3]) // 2]
    p.write_text("\n".join(lines) + "\n")
    with pytest.raises(ParseError) as ei:
        load(p)
    assert ei.value.line == 4
    assert "line 4" in str(ei.value)


def test_unknown_vocabulary_maps_to_other(small):
    d = job_to_dict(small.jobs[0])
    d["operators"][0]["physical_op"] = "QuantumJoin"
    d["operators"][0]["partition_kind"] = "Diagonal"
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        job = job_from_dict(d)
    assert job.operators[0].physical_op == OTHER
    assert job.operators[0].partition_kind == OTHER
    assert len(caught) == 2


def test_missing_numeric_is_zero_imputed(small):
    d = job_to_dict(small.jobs[0])
    d["operators"][0]["estimated_cost"] = None
    assert job_from_dict(d).operators[0].estimated_cost == 0


def test_duplicate_job_ids_rejected(small):
    with pytest.raises(ConfigError):
        Workload([small.jobs[0], small.jobs[0]])


def test_cycles_and_unknown_edges():
    assert check_acyclic([0, 1, 2], [(0, 1), (1, 2)])
    with pytest.raises(InvalidDAGError):
        check_acyclic([0, 1], [(0, 1), (1, 0)])
    with pytest.raises(InvalidDAGError):
        check_acyclic([0, 1], [(0, 5)])
