"""tokencurve command line: data generation, fitting, training, recommendation, serving."""
from __future__ import annotations

import csv
import io
import json
import logging
import sys
from dataclasses import fields
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Any, Sequence

import click
import numpy as np

from . import __version__
from .configfile import dataclass_from_mapping, read_mapping
from .errors import ConfigError, ParseError, TokenCurveError, VersionError
from .evaluation import evaluate_artifact, reports_csv, validate_simulator
from .features import FeatureSpace
from .models.artifact import (
    ModelArtifact,
    attach_gbrt_predictions,
    deserialize,
    serialize,
    train_gbrt_artifact,
    train_network,
)
from .models.data import augment, build_examples, fit_targets
from .models.gbrt import GBRTConfig
from .models.training import TrainingConfig
from .pcc import PccParams, fit_power_law, min_tokens_within_loss, optimal_tokens, plot_curves_svg, savings_cdf
from .selection import SelectionConfig, select_jobs
from .skyline import read_csv, simulate, write_csv
from .workload import GeneratorConfig, Job, Workload, dumps_jsonl, generate, job_from_dict, load

EXIT_OK, EXIT_ERROR, EXIT_USAGE, EXIT_PARSE, EXIT_VERSION = 0, 1, 2, 3, 4
API_VERSION = 1
DEFAULT_MAX_TOKENS = 100_000


# ---------------------------------------------------------------------------
# helpers


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        click.echo(text, nl=False)


def _dump_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def _config_defaults(ctx: click.Context, _param, value):
    """For commands without a domain config, a config file supplies option defaults."""
    if value:
        mapping = read_mapping(value)
        ctx.default_map = {k.replace("-", "_"): v for k, v in mapping.items()}
    return value


def common(domain_config: bool = False):
    def deco(f):
        f = click.option("--out", "-o", type=click.Path(dir_okay=False), default=None,
                         help="Output file (default: stdout).")(f)
        if domain_config:
            f = click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
                             default=None, help="Config file: JSON object or key=value lines.")(f)
        else:
            f = click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
                             default=None, is_eager=True, expose_value=True, callback=_config_defaults,
                             help="Config file whose keys provide option defaults.")(f)
        f = click.option("--seed", type=int, default=0, show_default=True, help="Random seed.")(f)
        return f
    return deco


def load_jobs(path: str | Path) -> list[Job]:
    """A workload JSONL file, or a single job as one JSON object."""
    text = Path(path).read_text()
    stripped = text.strip()
    if stripped.startswith("{"):
        try:
            obj = json.loads(stripped)
        except json.JSONDecodeError:
            obj = None
        if isinstance(obj, dict) and "operators" in obj:
            try:
                return [job_from_dict(obj)]
            except (KeyError, TypeError, ValueError) as exc:
                raise ParseError(f"malformed job: {exc}", line=1) from None
    return load(path).jobs


def recommend_tokens(params: PccParams, threshold: float | None = None, max_loss: float | None = None,
                     observed_allocation: int | None = None, max_tokens: int = DEFAULT_MAX_TOKENS) -> int:
    curve = params.clamped()
    if max_loss is not None:
        if observed_allocation is None:
            raise ConfigError("max_loss needs the job's observed allocation")
        return min_tokens_within_loss(curve, int(observed_allocation), max_loss)
    return optimal_tokens(curve, 0.01 if threshold is None else threshold, max_tokens)


def answer(artifact: ModelArtifact, payload: dict, threshold: float | None = None,
           max_loss: float | None = None, max_tokens: int = DEFAULT_MAX_TOKENS) -> dict:
    """Endpoint body for one request: a job object or ``{"features": [...]}``."""
    if not isinstance(payload, dict):
        raise ParseError("request body must be a JSON object")
    threshold = payload.get("threshold", threshold)
    max_loss = payload.get("max_loss", max_loss)
    max_tokens = int(payload.get("max_tokens", max_tokens))
    if "features" in payload:
        params = artifact.predict_from_features(payload["features"])
        observed = payload.get("observed_allocation")
        job_id = payload.get("id")
    else:
        try:
            job = job_from_dict(payload, where="request")
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"malformed job: {exc}") from None
        params = artifact.predict(job)
        observed, job_id = job.observed_allocation, job.id
    tokens = recommend_tokens(params, threshold, max_loss, observed, max_tokens)
    return {"api_version": API_VERSION, "id": job_id, "a": params.a, "b": params.b,
            "recommended_tokens": tokens, "model_version": artifact.version_tag}


# ---------------------------------------------------------------------------
# commands


@click.group()
@click.version_option(__version__, prog_name="tokencurve")
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def cli(verbose: bool) -> None:
    """Token allocation vs run-time curves for DAG jobs."""
    logging.basicConfig(level=logging.INFO if verbose else logging.ERROR, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


@cli.command("gen-workload")
@common(domain_config=True)
@click.option("--n-jobs", type=int, default=None, help="Override the configured job count.")
def gen_workload_cmd(seed, config_path, out, n_jobs):
    """Generate a synthetic workload (JSONL)."""
    mapping = read_mapping(config_path) if config_path else {}
    if n_jobs is not None:
        mapping["n_jobs"] = n_jobs
    cfg = GeneratorConfig.from_mapping(mapping)
    _emit(dumps_jsonl(generate(cfg, seed=seed)), out)


@cli.command("simulate")
@common()
@click.argument("skyline_csv", type=click.Path(exists=True, dir_okay=False))
@click.option("--tokens", type=int, required=True, help="New token allocation.")
def simulate_cmd(seed, config_path, out, skyline_csv, tokens):
    """Reshape a skyline CSV to a new token allocation."""
    _emit(write_csv(simulate(read_csv(skyline_csv), tokens)), out)


@cli.command("augment")
@common()
@click.argument("workload", type=click.Path(exists=True, dir_okay=False))
@click.option("--params-out", type=click.Path(dir_okay=False), default=None,
              help="Also write fitted curve parameters per job as JSONL.")
def augment_cmd(seed, config_path, out, workload, params_out):
    """Augmented (allocation, runtime) points per job, plus fitted target curves."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["job_id", "allocation", "runtime"])
    params_lines = []
    for job in load_jobs(workload):
        pts = augment(job)
        for a, r in pts:
            w.writerow([job.id, a, r])
        if len(pts) >= 2:
            p = fit_targets(job)
            params_lines.append(json.dumps({"id": job.id, "a": p.a, "b": p.b}, sort_keys=True))
    _emit(buf.getvalue(), out)
    if params_out:
        Path(params_out).write_text("".join(line + "\n" for line in params_lines))


def _read_points(path: str) -> list[tuple[float, float]]:
    text = Path(path).read_text()
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or [h.strip() for h in rows[0]] != ["allocation", "runtime"]:
        raise ParseError("expected header 'allocation,runtime'", line=1)
    pts = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        try:
            a, r = (float(x) for x in row)
        except ValueError:
            raise ParseError("expected two numbers", line=lineno) from None
        pts.append((a, r))
    return pts


@cli.command("fit-pcc")
@common()
@click.argument("points_csv", type=click.Path(exists=True, dir_okay=False))
@click.option("--svg", type=click.Path(dir_okay=False), default=None, help="Write a curve plot.")
def fit_pcc_cmd(seed, config_path, out, points_csv, svg):
    """Fit a power-law curve to (allocation, runtime) points."""
    pts = _read_points(points_csv)
    fit = fit_power_law(pts)
    _emit(_dump_json({"a": fit.params.a, "b": fit.params.b, "n_points": fit.n_points,
                      "residual": fit.residual}), out)
    if svg:
        lo, hi = min(a for a, _ in pts), max(a for a, _ in pts)
        grid = np.linspace(lo, hi, 50)
        plot_curves_svg({"observed": sorted(pts),
                         "fitted": [(float(x), fit.params.b * float(x) ** fit.params.a) for x in grid]}, svg)


@cli.command("select")
@common(domain_config=True)
@click.argument("workload", type=click.Path(exists=True, dir_okay=False))
@click.option("--report", type=click.Path(dir_okay=False), default=None, help="SelectionReport JSON path.")
@click.option("--subset-size", type=int, default=None)
@click.option("--k", type=int, default=None)
def select_cmd(seed, config_path, out, workload, report, subset_size, k):
    """Pick a subset whose cluster mix follows the whole workload."""
    mapping = read_mapping(config_path) if config_path else {}
    mapping["seed"] = seed
    if subset_size is not None:
        mapping["subset_size"] = subset_size
    if k is not None:
        mapping["k"] = k
    cfg = SelectionConfig.from_mapping(mapping)
    wl = load(workload)
    subset, rep = select_jobs(wl.jobs, cfg)
    _emit(dumps_jsonl(Workload(subset, seed=wl.seed, generator_config=wl.generator_config)), out)
    if report:
        Path(report).write_text(rep.to_json() + "\n")


def _split_training_config(mapping: dict, seed: int) -> tuple[TrainingConfig, GBRTConfig]:
    tnames = {f.name for f in fields(TrainingConfig)}
    gnames = {f.name for f in fields(GBRTConfig)}
    unknown = set(mapping) - tnames - gnames
    if unknown:
        raise ConfigError(f"unknown training keys: {sorted(unknown)}")
    tmap = {k: v for k, v in mapping.items() if k in tnames}
    gmap = {k: v for k, v in mapping.items() if k in gnames}
    tmap["seed"] = gmap["seed"] = seed
    return dataclass_from_mapping(TrainingConfig, tmap), dataclass_from_mapping(GBRTConfig, gmap)


@cli.command("train")
@common(domain_config=True)
@click.argument("workload", type=click.Path(exists=True, dir_okay=False))
@click.option("--model", "kind", type=click.Choice(["gbrt", "mlp", "gnn"]), default="mlp", show_default=True)
@click.option("--loss", "loss_kind", type=click.Choice(["lf1", "lf2", "lf3"]), default=None,
              help="Loss for mlp/gnn (default lf2).")
@click.option("--epochs", type=int, default=None)
@click.option("--val-fraction", type=float, default=0.0, show_default=True,
              help="Trailing share of jobs held out for early stopping.")
def train_cmd(seed, config_path, out, workload, kind, loss_kind, epochs, val_fraction):
    """Train a model artifact on a workload (augmentation is applied internally)."""
    mapping = read_mapping(config_path) if config_path else {}
    if loss_kind:
        mapping["loss_kind"] = loss_kind
    if epochs is not None:
        mapping["epochs"] = epochs
    tcfg, gcfg = _split_training_config(mapping, seed)
    jobs = load_jobs(workload)
    n_val = int(round(len(jobs) * val_fraction))
    train_jobs, val_jobs = (jobs[:-n_val], jobs[-n_val:]) if n_val else (jobs, [])
    space = FeatureSpace.fit(train_jobs)
    if kind == "gbrt":
        art = train_gbrt_artifact(train_jobs, space, gcfg)
    else:
        examples = build_examples(train_jobs, space)
        val = build_examples(val_jobs, space) if val_jobs else None
        if tcfg.loss_kind == "lf3":
            tree = train_gbrt_artifact(train_jobs, space, gcfg)
            by_id = {j.id: j for j in jobs}
            attach_gbrt_predictions(examples, by_id, tree)
            if val:
                attach_gbrt_predictions(val, by_id, tree)
        art = train_network(examples, tcfg, kind, space, val)
    if out:
        serialize(art, out)
    else:
        click.echo(json.dumps(art.to_dict(), sort_keys=True))


@cli.command("predict")
@common()
@click.argument("artifact", type=click.Path(exists=True, dir_okay=False))
@click.argument("jobs", type=click.Path(exists=True, dir_okay=False))
def predict_cmd(seed, config_path, out, artifact, jobs):
    """Predicted curve parameters per job (JSONL)."""
    art = deserialize(artifact)
    job_list = load_jobs(jobs)
    lines = [json.dumps({"id": j.id, "a": p.a, "b": p.b}, sort_keys=True)
             for j, p in zip(job_list, art.predict_many(job_list))]
    _emit("".join(line + "\n" for line in lines), out)


@cli.command("recommend")
@common()
@click.argument("artifact", type=click.Path(exists=True, dir_okay=False))
@click.argument("jobs", type=click.Path(exists=True, dir_okay=False))
@click.option("--threshold", type=float, default=None,
              help="Stop adding tokens once the relative gain per token falls to this.")
@click.option("--max-loss", type=float, default=None,
              help="Smallest allocation within this run-time loss of the observed one.")
@click.option("--max-tokens", type=int, default=DEFAULT_MAX_TOKENS, show_default=True)
def recommend_cmd(seed, config_path, out, artifact, jobs, threshold, max_loss, max_tokens):
    """Recommended token count per job (JSONL)."""
    if threshold is not None and max_loss is not None:
        raise click.UsageError("use either --threshold or --max-loss, not both")
    art = deserialize(artifact)
    job_list = load_jobs(jobs)
    lines = []
    for j, p in zip(job_list, art.predict_many(job_list)):
        tokens = recommend_tokens(p, threshold, max_loss, j.observed_allocation, max_tokens)
        lines.append(json.dumps({"id": j.id, "a": p.a, "b": p.b, "recommended_tokens": tokens}, sort_keys=True))
    _emit("".join(line + "\n" for line in lines), out)


@cli.command("evaluate")
@common()
@click.argument("artifact", type=click.Path(exists=True, dir_okay=False))
@click.argument("workload", type=click.Path(exists=True, dir_okay=False))
@click.option("--json-out", type=click.Path(dir_okay=False), default=None, help="Also write reports as JSON.")
def evaluate_cmd(seed, config_path, out, artifact, workload, json_out):
    """Pattern fraction, curve-parameter MAE and median run-time error (CSV)."""
    reports = evaluate_artifact(deserialize(artifact), load_jobs(workload))
    _emit(reports_csv(reports), out)
    if json_out:
        Path(json_out).write_text(_dump_json([r.to_dict() for r in reports]))


@cli.command("validate-sim")
@common()
@click.argument("workload", type=click.Path(exists=True, dir_okay=False))
@click.option("--caps", default="1.0,0.8,0.6,0.2", show_default=True,
              help="Comma-separated fractions of the observed allocation; the first is the reference.")
@click.option("--tolerance", type=float, default=0.30, show_default=True)
@click.option("--csv-out", type=click.Path(dir_okay=False), default=None, help="Group table as CSV.")
def validate_sim_cmd(seed, config_path, out, workload, caps, tolerance, csv_out):
    """Compare simulated run-times with executor re-runs at several caps."""
    try:
        fracs = tuple(float(c) for c in str(caps).split(",") if c.strip())
    except ValueError:
        raise click.BadParameter("caps must be comma-separated numbers", param_hint="--caps") from None
    rep = validate_simulator(load_jobs(workload), caps=fracs, tolerance=tolerance)
    _emit(rep.to_json() + "\n", out)
    if csv_out:
        Path(csv_out).write_text(rep.groups_csv())


@cli.command("savings-cdf")
@common()
@click.argument("artifact", type=click.Path(exists=True, dir_okay=False))
@click.argument("workload", type=click.Path(exists=True, dir_okay=False))
@click.option("--loss", type=float, default=0.05, show_default=True, help="Accepted run-time loss.")
@click.option("--svg", type=click.Path(dir_okay=False), default=None, help="Write a CDF plot.")
def savings_cdf_cmd(seed, config_path, out, artifact, workload, loss, svg):
    """CDF of possible token reductions at a given run-time loss (CSV)."""
    art = deserialize(artifact)
    jobs = load_jobs(workload)
    pairs = [(p.clamped(), j.observed_allocation) for j, p in zip(jobs, art.predict_many(jobs))]
    cdf = savings_cdf(pairs, loss)
    _emit("reduction,cumulative_fraction\n" + "".join(f"{r:.6f},{c:.6f}\n" for r, c in cdf), out)
    if svg:
        steps = [(0.0, 0.0)] + list(cdf)
        plot_curves_svg({f"loss {loss:g}": steps}, svg, xlabel="token reduction (fraction of request)",
                        ylabel="fraction of jobs", step=True)


# ---------------------------------------------------------------------------
# serving


def make_server(artifact: ModelArtifact, host: str = "127.0.0.1", port: int = 8080,
                threshold: float = 0.01, max_tokens: int = DEFAULT_MAX_TOKENS) -> ThreadingHTTPServer:
    """HTTP server with one POST route (``/predict``) over an immutable artifact."""
    class Handler(BaseHTTPRequestHandler):
        def _send(self, code: int, body: dict) -> None:
            data = (json.dumps(body, sort_keys=True) + "\n").encode()
            self.send_response(code)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)

        def do_POST(self):  # noqa: N802
            if self.path.rstrip("/") not in ("", "/predict"):
                return self._send(404, {"api_version": API_VERSION, "error": "not_found"})
            try:
                length = int(self.headers.get("Content-Length", 0))
                payload = json.loads(self.rfile.read(length) or b"null")
                self._send(200, answer(artifact, payload, threshold=threshold, max_tokens=max_tokens))
            except json.JSONDecodeError as exc:
                self._send(400, {"api_version": API_VERSION, "error": "parse_error", "message": exc.msg})
            except TokenCurveError as exc:
                self._send(400, {"api_version": API_VERSION, "error": type(exc).__name__, "message": str(exc)})

        def do_GET(self):  # noqa: N802
            self._send(405, {"api_version": API_VERSION, "error": "use POST /predict"})

        def log_message(self, fmt, *args):
            logging.getLogger(__name__).info("%s " + fmt, self.address_string(), *args)

    return ThreadingHTTPServer((host, port), Handler)


@cli.command("serve")
@common()
@click.argument("artifact", type=click.Path(exists=True, dir_okay=False))
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8080, show_default=True)
@click.option("--threshold", type=float, default=0.01, show_default=True)
@click.option("--max-tokens", type=int, default=DEFAULT_MAX_TOKENS, show_default=True)
def serve_cmd(seed, config_path, out, artifact, host, port, threshold, max_tokens):
    """Serve POST /predict: job JSON in, {a, b, recommended_tokens, model_version} out."""
    server = make_server(deserialize(artifact), host, port, threshold, max_tokens)
    click.echo(f"serving on http://{host}:{server.server_address[1]}/predict", err=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()


# ---------------------------------------------------------------------------
# entry point


def _error_line(kind: str, exc: BaseException, code: int) -> int:
    msg = " ".join(str(exc).split())
    click.echo(json.dumps({"error": kind, "message": msg, "exit_code": code}, sort_keys=True), err=True)
    return code


def run(argv: Sequence[str] | None = None) -> int:
    """Run the CLI and return its exit code; errors become one JSON line on stderr."""
    try:
        rv = cli.main(args=list(argv) if argv is not None else None, prog_name="tokencurve",
                      standalone_mode=False)
        return rv if isinstance(rv, int) else EXIT_OK
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.exceptions.Abort as exc:
        return _error_line("aborted", exc, EXIT_ERROR)
    except click.UsageError as exc:
        return _error_line("usage", exc, EXIT_USAGE)
    except click.ClickException as exc:
        return _error_line("usage", exc, EXIT_USAGE)
    except ParseError as exc:
        return _error_line("parse", exc, EXIT_PARSE)
    except VersionError as exc:
        return _error_line("version", exc, EXIT_VERSION)
    except (TokenCurveError, OSError, RuntimeError) as exc:
        return _error_line(type(exc).__name__, exc, EXIT_ERROR)


def main(argv: Sequence[str] | None = None) -> None:
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
