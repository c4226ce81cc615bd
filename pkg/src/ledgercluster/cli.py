"""Command-line interface: ingestion, synthesis, training, grid, stability, reports.

Every run writes a manifest (command, config, seeds, input hashes, outputs)
sufficient to reproduce it; all files are written atomically. Exit codes:
0 success, 2 input error, 3 configuration error, 4 numerical failure.
"""

from __future__ import annotations

import datetime
import hashlib
import json
import os
import sys
import tempfile
from dataclasses import asdict, replace
from pathlib import Path

import click
import numpy as np

from . import __version__, data, dimred, harness, networks, svgplot, trainer
from .clustering import Validity
from .errors import (
    EmptyFile,
    IncompatibleCombination,
    LedgerClusterError,
    MalformedRow,
    NoQualifyingAccounts,
    NonFiniteAssignment,
    NonFiniteGradient,
    NonFiniteLoss,
    NoValidRows,
)

EXIT_INPUT = 2
EXIT_CONFIG = 3
EXIT_NUMERIC = 4

_INPUT_ERRORS = (EmptyFile, MalformedRow, NoQualifyingAccounts, FileNotFoundError,
                 IsADirectoryError, PermissionError)
_NUMERIC_ERRORS = (NonFiniteLoss, NonFiniteGradient, NonFiniteAssignment,
                   FloatingPointError)


def atomic_write_text(path: Path, content: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(content)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def default_seed() -> int:
    env = os.environ.get("LEDGERCLUSTER_SEED")
    return int(env) if env else 0


def write_manifest(out_dir: Path, command: str, argv: list[str], config: dict,
                   seeds: dict, inputs: list[Path], outputs: list[Path]) -> Path:
    manifest = {
        "package_version": __version__,
        "command": command,
        "argv": argv,
        "config": config,
        "seeds": seeds,
        "inputs": {str(p): sha256_file(Path(p)) for p in inputs},
        "outputs": [str(p) for p in outputs],
        "created": datetime.datetime.now(datetime.timezone.utc).isoformat(),
    }
    path = out_dir / "manifest.json"
    atomic_write_text(path, json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


_invocation_argv: list[str] | None = None


def rerun_from_manifest(manifest_path: str | Path) -> int:
    """Re-invoke the recorded command; returns its exit code."""
    manifest = json.loads(Path(manifest_path).read_text())
    return main(manifest["argv"], standalone_mode=False) or 0


def main(argv: list[str] | None = None, standalone_mode: bool = True):
    """Console entry point; records the invocation for manifests."""
    global _invocation_argv
    _invocation_argv = list(argv) if argv is not None else list(sys.argv[1:])
    try:
        return cli.main(args=argv, standalone_mode=standalone_mode)
    finally:
        _invocation_argv = None


def _fail(code: int, message: str) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _guarded(fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except _INPUT_ERRORS as exc:
        _fail(EXIT_INPUT, str(exc))
    except IncompatibleCombination as exc:
        _fail(EXIT_CONFIG, str(exc))
    except _NUMERIC_ERRORS as exc:
        _fail(EXIT_NUMERIC, str(exc))
    except (ValueError, LedgerClusterError) as exc:
        _fail(EXIT_CONFIG, str(exc))


def _parse_int_list(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def _parse_float_list(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


@click.group(name="ledgercluster")
@click.version_option(__version__)
def cli() -> None:
    """Deep time-series clustering over transaction histories."""


# --- ingest -----------------------------------------------------------------

@cli.command("ingest")
@click.option("--input", "input_path", required=True, type=click.Path())
@click.option("--months", default=24, show_default=True)
@click.option("--min-history", "min_history", default=None, type=int,
              help="Minimum months of history per account (default: --months).")
@click.option("--normalize/--no-normalize", default=True, show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path())
def cmd_ingest(input_path, months, min_history, normalize, out_path) -> None:
    """Aggregate a transaction CSV into fixed-length monthly series."""

    def run():
        table = data.load_transactions(input_path)
        ds = data.build_series(table, months=months, min_history=min_history)
        if normalize:
            ds = data.znormalize(ds)
        out = Path(out_path)
        out.parent.mkdir(parents=True, exist_ok=True)
        tmp_write_dataset(ds, out)
        write_manifest(
            out.parent, "ingest", _argv(), {
                "months": months, "min_history": min_history, "normalize": normalize,
            }, {}, [Path(input_path)], [out],
        )
        click.echo(f"wrote {ds.n} series of length {ds.length} to {out}")

    _guarded(run)


def tmp_write_dataset(ds: data.Dataset, out: Path) -> None:
    fd, tmp = tempfile.mkstemp(dir=out.parent, prefix=f".{out.name}.")
    os.close(fd)
    try:
        data.save_dataset(ds, tmp)
        os.replace(tmp, out)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _argv() -> list[str]:
    return list(_invocation_argv) if _invocation_argv is not None else list(sys.argv[1:])


# --- synth ------------------------------------------------------------------

@cli.command("synth")
@click.option("--degrees", default="1,2,3", show_default=True)
@click.option("--per-degree", "per_degree", default=100, show_default=True)
@click.option("--length", default=100, show_default=True)
@click.option("--noise", default=0.01, show_default=True)
@click.option("--seed", default=None, type=int)
@click.option("--out", "out_path", required=True, type=click.Path())
def cmd_synth(degrees, per_degree, length, noise, seed, out_path) -> None:
    """Generate the labelled polynomial dataset."""

    def run():
        seed_value = default_seed() if seed is None else seed
        cfg = data.SynthConfig(
            degrees=tuple(_parse_int_list(degrees)), per_degree=per_degree,
            length=length, noise_sigma=noise, seed=seed_value,
        )
        ds = data.gen_polynomial(cfg)
        out = Path(out_path)
        out.parent.mkdir(parents=True, exist_ok=True)
        tmp_write_dataset(ds, out)
        write_manifest(
            out.parent, "synth", _argv(), asdict(cfg), {"seed": seed_value}, [], [out],
        )
        click.echo(f"wrote {ds.n} series of length {ds.length} to {out}")

    _guarded(run)


# --- train ------------------------------------------------------------------

def _train_options(fn):
    fn = click.option("--eta-pre", "eta_pre", default=1e-2, show_default=True)(fn)
    fn = click.option("--eta-cls", "eta_cls", default=1e-3, show_default=True)(fn)
    fn = click.option("--pre-iters", "pre_iters", default=1000, show_default=True)(fn)
    fn = click.option("--cls-iters", "cls_iters", default=1000, show_default=True)(fn)
    fn = click.option("--batch-size", "batch_size", default=64, show_default=True)(fn)
    fn = click.option("--latent-dim", "latent_dim", default=16, show_default=True)(fn)
    fn = click.option("--umap-neighbors", "umap_neighbors", default=15, show_default=True)(fn)
    fn = click.option("--split-ratio", "split_ratio", default=0.5, show_default=True)(fn)
    return fn


def _build_config(k, seed, eta_pre, eta_cls, pre_iters, cls_iters, batch_size,
                  latent_dim, umap_neighbors) -> trainer.TrainConfig:
    return trainer.TrainConfig(
        eta_pre=eta_pre, eta_cls=eta_cls, pre_iters=pre_iters, cls_iters=cls_iters,
        batch_size=batch_size, k=k, seed=seed, latent_dim=latent_dim,
        umap_neighbors=umap_neighbors,
    )


@cli.command("train")
@click.option("--combo", "combo_spec", default=None,
              help="Component spec arch/dimred/pretext/closs, e.g. cnn/none/lr/de.")
@click.option("--fthc", is_flag=True, help="Use the FTHC preset combination.")
@click.option("--data", "data_path", required=True, type=click.Path())
@click.option("--k", default=3, show_default=True)
@click.option("--seed", default=None, type=int)
@click.option("--out", "out_dir", required=True, type=click.Path())
@_train_options
def cmd_train(combo_spec, fthc, data_path, k, seed, out_dir, **train_opts) -> None:
    """Train one combination and write checkpoint, assignments and metrics."""

    def run():
        if fthc and combo_spec:
            raise IncompatibleCombination("--combo/--fthc", "choose exactly one")
        if fthc:
            combo = harness.fthc_preset()
        elif combo_spec:
            combo = harness.parse_combo(combo_spec)
        else:
            raise IncompatibleCombination("--combo/--fthc", "choose exactly one")
        ok, reason = harness.compatibility(combo)
        if not ok:
            raise IncompatibleCombination(combo.spec_string(), reason)
        seed_value = default_seed() if seed is None else seed
        split_ratio = train_opts.pop("split_ratio")
        cfg = _build_config(k, seed_value, **train_opts)
        ds = data.load_dataset(data_path)
        train_ds, test_ds = data.split(ds, split_ratio, seed=seed_value)
        outcome = trainer.train_combination(combo, train_ds, test_ds, cfg)
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        outputs = _write_train_outputs(out, combo, cfg, outcome, test_ds)
        write_manifest(out, "train", _argv(),
                       {"combo": combo.spec_string(), "split_ratio": split_ratio,
                        **asdict(cfg)},
                       {"seed": seed_value}, [Path(data_path)], outputs)
        click.echo(f"verdict: {outcome.pipeline.verdict.value}")
        if outcome.sc is not None:
            click.echo(f"sc: {outcome.sc:.6f}  dbi: {outcome.dbi:.6f}")

    _guarded(run)


def _write_train_outputs(out: Path, combo, cfg, outcome, test_ds) -> list[Path]:
    outputs = []
    pipeline = outcome.pipeline
    if pipeline.autoencoder is not None:
        ckpt = out / "autoencoder.ckpt"
        networks.save_checkpoint(pipeline.autoencoder, ckpt)
        outputs.append(ckpt)
    metrics = {
        "combo": combo.spec_string(),
        "k": cfg.k,
        "seed": cfg.seed,
        "sc": outcome.sc,
        "dbi": outcome.dbi,
        "verdict": pipeline.verdict.value,
    }
    metrics_path = out / "metrics.json"
    atomic_write_text(metrics_path, json.dumps(metrics, indent=2, sort_keys=True) + "\n")
    outputs.append(metrics_path)
    if outcome.assignment is not None:
        lines = ["id,label"]
        lines += [f"{test_ds.ids[i]},{int(label)}"
                  for i, label in enumerate(outcome.assignment.labels)]
        assign_path = out / "assignment.csv"
        atomic_write_text(assign_path, "\n".join(lines) + "\n")
        outputs.append(assign_path)
    for name, curve in (("pretrain", pipeline.pre_curve), ("cluster", pipeline.cls_curve)):
        if curve:
            curve_path = out / f"curve_{name}.csv"
            body = "iter,loss\n" + "\n".join(f"{i},{repr(v)}" for i, v in enumerate(curve))
            atomic_write_text(curve_path, body + "\n")
            outputs.append(curve_path)
    return outputs


# --- grid ---------------------------------------------------------------------

@cli.command("grid")
@click.option("--data", "data_path", required=True, type=click.Path())
@click.option("--k", "k_spec", default="3,5,7", show_default=True)
@click.option("--trials", default=5, show_default=True)
@click.option("--seed", default=None, type=int)
@click.option("--smoke", is_flag=True, help="50+50 iteration smoke configuration.")
@click.option("--jobs", default=None, type=int,
              help="Parallel workers (default: available cores).")
@click.option("--raw-space/--no-raw-space", "raw_space", default=False,
              help="Additionally score clusterings in raw-series space.")
@click.option("--out", "out_dir", required=True, type=click.Path())
@_train_options
def cmd_grid(data_path, k_spec, trials, seed, smoke, jobs, raw_space, out_dir,
             **train_opts) -> None:
    """Run every compatible combination over the k grid and trials."""

    def run():
        seed_value = default_seed() if seed is None else seed
        split_ratio = train_opts.pop("split_ratio")
        k_list = _parse_int_list(k_spec)
        cfg = _build_config(k_list[0], seed_value, **train_opts)
        if smoke:
            cfg = replace(cfg, pre_iters=50, cls_iters=50)
        ds = data.load_dataset(data_path)
        train_ds, test_ds = data.split(ds, split_ratio, seed=seed_value)
        n_jobs = jobs if jobs else (os.cpu_count() or 1)
        report = harness.run_grid(train_ds, test_ds, k_list, trials, cfg,
                                  jobs=n_jobs, raw_space=raw_space)
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        report_path = out / "report.csv"
        atomic_write_text(report_path, report.to_csv())
        agg_path = out / "aggregates.json"
        try:
            aggregates = harness.aggregate_by_component(report)
        except NoValidRows:
            aggregates = {"no_valid_rows": True,
                          "invalid_rates": report.invalid_rates()}
        atomic_write_text(agg_path, json.dumps(aggregates, indent=2, sort_keys=True) + "\n")
        write_manifest(out, "grid", _argv(),
                       {"k_list": k_list, "trials": trials, "smoke": smoke,
                        "jobs": n_jobs, "split_ratio": split_ratio,
                        "raw_space": raw_space, **asdict(cfg)},
                       {"seed": seed_value}, [Path(data_path)],
                       [report_path, agg_path])
        click.echo(f"wrote {len(report.rows)} rows to {report_path}")

    _guarded(run)


# --- stability -------------------------------------------------------------------

@cli.command("stability")
@click.option("--ratios", default="1.0,0.1", show_default=True)
@click.option("--seeds", "n_seeds", default=10, show_default=True)
@click.option("--seed", default=None, type=int)
@click.option("--per-degree", "per_degree", default=50, show_default=True)
@click.option("--length", default=100, show_default=True)
@click.option("--out", "out_dir", required=True, type=click.Path())
@_train_options
def cmd_stability(ratios, n_seeds, seed, per_degree, length, out_dir, **train_opts) -> None:
    """Frozen-state learning-rate stability study (DTC, polynomial data)."""

    def run():
        seed_value = default_seed() if seed is None else seed
        train_opts.pop("split_ratio")
        ratio_list = _parse_float_list(ratios)
        cfg = _build_config(3, seed_value, **train_opts)
        synth = data.SynthConfig(per_degree=per_degree, length=length, seed=seed_value)
        result = harness.stability_experiment(ratio_list, n_seeds, cfg, synth)
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        rates_path = out / "rates.csv"
        body = "ratio,invalid_rate\n" + "\n".join(
            f"{repr(r)},{repr(result.rates[r])}" for r in ratio_list
        )
        atomic_write_text(rates_path, body + "\n")
        records_path = out / "records.csv"
        rec_body = "seed,ratio,verdict,frozen_fingerprint\n" + "\n".join(
            f"{r.seed},{repr(r.ratio)},{r.verdict},{r.frozen_fingerprint}"
            for r in result.records
        )
        atomic_write_text(records_path, rec_body + "\n")
        chart_path = out / "invalid_rates_by_ratio.svg"
        atomic_write_text(chart_path, svgplot.bar_chart(
            "Invalid clusterings by learning-rate ratio",
            [repr(r) for r in ratio_list],
            [result.rates[r] for r in ratio_list],
            y_label="invalid rate",
        ))
        write_manifest(out, "stability", _argv(),
                       {"ratios": ratio_list, "n_seeds": n_seeds,
                        "synth": asdict(synth), **asdict(cfg)},
                       {"seed": seed_value}, [],
                       [rates_path, records_path, chart_path])
        for r in ratio_list:
            click.echo(f"ratio {r}: invalid rate {result.rates[r]:.3f}")

    _guarded(run)


# --- report ---------------------------------------------------------------------

@cli.command("report")
@click.option("--report", "report_path", required=True, type=click.Path())
@click.option("--checkpoint", "checkpoint_path", default=None, type=click.Path(),
              help="Autoencoder checkpoint for a latent scatter.")
@click.option("--data", "data_path", default=None, type=click.Path(),
              help="Dataset to embed for the latent scatter.")
@click.option("--out", "out_dir", required=True, type=click.Path())
def cmd_report(report_path, checkpoint_path, data_path, out_dir) -> None:
    """Emit SVG charts from a persisted grid report."""

    def run():
        try:
            report = harness.EvaluationReport.from_csv(Path(report_path).read_text())
        except (ValueError, KeyError, IndexError, StopIteration) as exc:
            raise MalformedRow(0, f"malformed report: {exc}") from exc
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        outputs = _emit_report_charts(report, out)
        if checkpoint_path and data_path:
            outputs.append(_emit_latent_scatter(Path(checkpoint_path),
                                                Path(data_path), out))
        inputs = [Path(report_path)]
        if checkpoint_path and data_path:
            inputs += [Path(checkpoint_path), Path(data_path)]
        write_manifest(out, "report", _argv(), {}, {}, inputs, outputs)
        click.echo(f"wrote {len(outputs)} charts to {out}")

    _guarded(run)


def _emit_report_charts(report: harness.EvaluationReport, out: Path) -> list[Path]:
    try:
        aggregates = harness.aggregate_by_component(report)
    except NoValidRows:
        aggregates = {cls: {opt: None for opt in opts}
                      for cls, opts in harness._COMPONENT_CLASSES.items()}
        aggregates["invalid_rates"] = report.invalid_rates()
    outputs = []
    titles = {
        "arch": "autoencoder architecture",
        "dimred": "dimensionality reduction",
        "pretext": "pretext loss",
        "cluster_loss": "clustering loss",
    }
    for cls_name, options in harness._COMPONENT_CLASSES.items():
        table = aggregates[cls_name]
        for metric in ("sc", "dbi"):
            values = [
                None if table[opt] is None else table[opt][metric] for opt in options
            ]
            path = out / f"component_{cls_name}_{metric}.svg"
            atomic_write_text(path, svgplot.bar_chart(
                f"Average {metric.upper()} by {titles[cls_name]}",
                list(options), values, y_label=metric.upper(),
            ))
            outputs.append(path)
    rates = report.invalid_rates()
    rates_path = out / "invalid_rates.svg"
    atomic_write_text(rates_path, svgplot.bar_chart(
        "Invalid clusterings by clustering-loss variant",
        list(rates), [rates[v] for v in rates], y_label="invalid rate",
    ))
    outputs.append(rates_path)
    outputs.append(_emit_fthc_chart(report, out))
    return outputs


def _fthc_label(combo: harness.ComponentCombination) -> str:
    if combo == harness.fthc_preset():
        return "FTHC"
    return combo.spec_string()


def _emit_fthc_chart(report: harness.EvaluationReport, out: Path) -> Path:
    contenders = [harness.fthc_preset()] + harness.fthc_baselines()
    sc_values: list[float | None] = []
    dbi_values: list[float | None] = []
    for combo in contenders:
        rows = [r for r in report.rows if r.combo == combo and r.valid]
        sc_values.append(float(np.mean([r.sc for r in rows])) if rows else None)
        dbi_values.append(float(np.mean([r.dbi for r in rows])) if rows else None)
    path = out / "fthc_comparison.svg"
    atomic_write_text(path, svgplot.grouped_bar_chart(
        "FTHC vs baselines (mean over valid rows)",
        [_fthc_label(c) for c in contenders],
        {"SC": sc_values, "DBI": dbi_values},
    ))
    return path


def _emit_latent_scatter(checkpoint: Path, data_path: Path, out: Path) -> Path:
    ae = networks.load_checkpoint(checkpoint)
    ds = data.load_dataset(data_path)
    z = ae.encode(ds.series)
    flat = z.reshape(z.shape[0], -1)
    proj = dimred.pca_fit(flat, min(2, flat.shape[1]))
    coords = dimred.pca_transform(proj, flat)
    if coords.shape[1] == 1:
        coords = np.hstack([coords, np.zeros_like(coords)])
    labels = ds.labels if ds.labels is not None else np.zeros(ds.n, dtype=int)
    path = out / "latent_scatter.svg"
    atomic_write_text(path, svgplot.scatter(
        "Latent space (2-D principal-component projection)",
        coords.tolist(), labels.tolist(),
    ))
    return path


if __name__ == "__main__":
    main()
