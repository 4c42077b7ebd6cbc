"""Command-line entry points: synth, localize, evaluate, report.

Exit codes: 2 invalid synth spec, 3 dataset validation failure, 4 training
did not converge (without --allow-nonconverged), 5 fault id mismatch during
evaluation.
"""

from __future__ import annotations

import dataclasses
import sys
from pathlib import Path

import click

from . import dataio, metrics as metrics_mod
from .errors import IncaError, ValidationError
from .evt import EvtConfig
from .gnn import TrainConfig
from .model import validate_topology
from .pipeline import LocalizeConfig, localize
from .propagation import PropagationConfig
from .ranking import IntegrationConfig
from .report import render_report
from .synth import FaultSpec, SynthSpec, generate_system, simulate


def _fail(code: int, message: str) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


@click.group()
def main():
    """Root-cause localization on interdependent causal networks."""


@main.command()
@click.option("--spec", "spec_path", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--out", "out_dir", required=True, type=click.Path(path_type=Path))
def synth(spec_path: Path, out_dir: Path):
    """Generate a labeled synthetic dataset from a JSON spec."""
    doc = dataio.load_json(spec_path)
    for field in ("g", "low_per_high", "T"):
        if field not in doc:
            _fail(2, f"synth spec is missing required field {field!r}")
    known = {f.name for f in dataclasses.fields(SynthSpec)}
    options = {k: v for k, v in doc.items() if k in known}
    options["t_steps"] = doc["T"]
    if "weight_range" in options:
        options["weight_range"] = tuple(options["weight_range"])
    if "metric_names" in options:
        options["metric_names"] = tuple(options["metric_names"])
    try:
        spec = SynthSpec(**options)
        faults = tuple(FaultSpec(**f) for f in doc.get("faults", []))
        system = generate_system(spec)
        panels, kpi, labels = simulate(system, spec, faults)
    except (ValueError, KeyError, TypeError) as exc:
        _fail(2, f"invalid synth spec: {exc}")
    dataio.save_dataset(out_dir, system.topology, panels, kpi, labels, truth=system.graph)
    click.echo(f"wrote dataset with {len(panels)} panels and {len(labels)} faults to {out_dir}")


def _load_localize_config(config_path: Path | None, flags: dict) -> LocalizeConfig:
    """Defaults, overridden by the config file, overridden by CLI flags."""
    sections = {"train": {}, "propagation": {}, "evt": {}, "integration": {}}
    if config_path is not None:
        doc = dataio.load_json(config_path)
        for name in sections:
            sections[name].update(doc.get(name, {}))
    flag_map = {
        "gamma": ("integration", "gamma"),
        "k": ("integration", "k"),
        "phi": ("propagation", "phi"),
        "varphi": ("propagation", "varphi"),
        "lambda1": ("train", "lambda1"),
        "lambda2": ("train", "lambda2"),
        "layers": ("train", "layers"),
        "lag": ("train", "p"),
        "seed": ("train", "seed"),
    }
    for flag, (section, key) in flag_map.items():
        if flags.get(flag) is not None:
            sections[section][key] = flags[flag]
    return LocalizeConfig(
        train=TrainConfig(**sections["train"]),
        propagation=PropagationConfig(**sections["propagation"]),
        evt=EvtConfig(**sections["evt"]),
        integration=IntegrationConfig(**sections["integration"]),
    )


@main.command(name="localize")
@click.option("--data", "data_dir", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--out", "out_dir", required=True, type=click.Path(path_type=Path))
@click.option("--config", "config_path", type=click.Path(exists=True, path_type=Path))
@click.option("--gamma", type=float)
@click.option("--k", type=int)
@click.option("--phi", type=float)
@click.option("--varphi", type=float)
@click.option("--lambda1", type=float)
@click.option("--lambda2", type=float)
@click.option("--layers", type=int)
@click.option("--lag", type=int)
@click.option("--seed", type=int)
@click.option("--allow-nonconverged", is_flag=True, default=False)
def localize_cmd(data_dir, out_dir, config_path, allow_nonconverged, **flags):
    """Learn graphs, trace the fault back, score entities, rank root causes."""
    try:
        config = _load_localize_config(config_path, flags)
    except (ValueError, TypeError) as exc:
        _fail(2, f"invalid configuration: {exc}")
    try:
        topo, panels, kpi, labels = dataio.load_dataset(data_dir)
        bundle = validate_topology(topo, panels, kpi)
        result = localize(bundle, labels, config)
    except (ValidationError, IncaError) as exc:
        _fail(3, f"validation failed: {exc}")
    if not result.all_converged and not allow_nonconverged:
        bad = result.nonconverged()
        _fail(4, f"training did not converge for {bad}; rerun with --allow-nonconverged to keep the best iterate")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    dataio.dump_json(dataio.reports_to_dict(result.reports), out_dir / "report.json")
    dataio.dump_json(dataio.graphs_to_dict(result.analyses, config.snapshot()), out_dir / "graphs.json")
    for rep in result.reports:
        click.echo(f"fault {rep.fault_id}: top-{len(rep.ranked)} = {', '.join(rep.ranked)}")


@main.command()
@click.option("--report", "report_paths", required=True, multiple=True, type=click.Path(exists=True, path_type=Path))
@click.option("--labels", "labels_path", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--out", "out_path", type=click.Path(path_type=Path))
def evaluate(report_paths, labels_path, out_path):
    """Score report(s) against labeled faults: PR@K, MAP@K, MRR."""
    reports = []
    for path in report_paths:
        reports.extend(dataio.reports_from_dict(dataio.load_json(path)))
    label_doc = dataio.load_json(labels_path)
    truth = {f["fault_id"]: set(f["root_causes"]) for f in label_doc.get("faults", [])}
    missing = [r.fault_id for r in reports if r.fault_id not in truth]
    if missing or not reports:
        _fail(5, f"fault ids {missing or 'none'} have no matching labels in {labels_path}")
    faults = [(list(r.ranked), truth[r.fault_id]) for r in reports]
    values = {f"PR@{k}": metrics_mod.pr_at_k(faults, k) for k in (1, 3, 5, 7, 10)}
    values.update({f"MAP@{k}": metrics_mod.map_at_k(faults, k) for k in (3, 5, 7, 10)})
    values["MRR"] = metrics_mod.mrr(faults)
    click.echo(dataio.metrics_table(values))
    if out_path is not None:
        dataio.dump_json({"metrics": values, "n_faults": len(faults)}, out_path)


@main.command(name="report")
@click.option("--report", "report_path", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--out", "out_dir", required=True, type=click.Path(path_type=Path))
@click.option("--graphs", "graphs_path", type=click.Path(exists=True, path_type=Path))
@click.option("--metrics", "metrics_path", type=click.Path(exists=True, path_type=Path))
def report_cmd(report_path, out_dir, graphs_path, metrics_path):
    """Render a markdown summary, a delimited score table, and figures."""
    reports = dataio.reports_from_dict(dataio.load_json(report_path))
    graphs = dataio.load_json(graphs_path)["graphs"] if graphs_path else None
    metric_values = dataio.load_json(metrics_path)["metrics"] if metrics_path else None
    written = render_report(reports, out_dir, graphs=graphs, metric_values=metric_values)
    for path in written:
        click.echo(f"wrote {path}")


if __name__ == "__main__":
    main()
