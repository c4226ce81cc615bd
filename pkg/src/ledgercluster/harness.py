"""Combination enumeration, the evaluation grid, aggregation and experiments."""

from __future__ import annotations

import csv
import io
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import clustering, networks, trainer
from .clustering import Validity
from .data import Dataset, SynthConfig, gen_polynomial
from .errors import IncompatibleCombination, NoValidRows
from .trainer import SUPPORTED_PRETEXT, TrainConfig

ARCHS = ("FCNN", "CNN", "LSTM", "DTC")
DIMREDS = ("PCA", "UMAP", "NONE")
PRETEXTS = ("LR", "LLR", "LV", "NONE")
CLUSTER_LOSSES = ("DE", "DC", "NONE")


@dataclass(frozen=True)
class ComponentCombination:
    arch: str
    dimred: str
    pretext: str
    cluster_loss: str

    def spec_string(self) -> str:
        return "/".join(
            s.lower() for s in (self.arch, self.dimred, self.pretext, self.cluster_loss)
        )


def parse_combo(spec: str) -> ComponentCombination:
    parts = spec.strip().lower().split("/")
    if len(parts) != 4:
        raise IncompatibleCombination(spec, "expected arch/dimred/pretext/closs")
    arch, dr, pre, cl = (p.upper() for p in parts)
    for value, domain, name in (
        (arch, ARCHS, "architecture"),
        (dr, DIMREDS, "dimensionality reduction"),
        (pre, PRETEXTS, "pretext loss"),
        (cl, CLUSTER_LOSSES, "clustering loss"),
    ):
        if value not in domain:
            raise IncompatibleCombination(spec, f"unknown {name} {value!r}")
    return ComponentCombination(arch, dr, pre, cl)


def compatibility(combo: ComponentCombination) -> tuple[bool, str]:
    """Apply the pretext-support and pipeline-structure rules."""
    if combo.pretext != "NONE" and combo.pretext not in SUPPORTED_PRETEXT[combo.arch]:
        return False, f"{combo.arch} does not support the {combo.pretext} pretext loss"
    if combo.cluster_loss != "NONE" and combo.dimred != "NONE":
        return False, "a clustering layer produces assignments directly, bypassing dimensionality reduction"
    if combo.pretext == "NONE" and combo.cluster_loss == "NONE":
        return False, "no training signal: both pretext and clustering loss absent"
    return True, ""


def enumerate_combinations() -> list[ComponentCombination]:
    """All compatible combinations, in stable component-table order."""
    combos = []
    for arch in ARCHS:
        for dr in DIMREDS:
            for pre in PRETEXTS:
                for cl in CLUSTER_LOSSES:
                    combo = ComponentCombination(arch, dr, pre, cl)
                    ok, _ = compatibility(combo)
                    if ok:
                        combos.append(combo)
    return combos


def fthc_preset() -> ComponentCombination:
    """The proposed combination: CNN autoencoder, reconstruction pretext,
    Euclidean clustering layer, no dimensionality reduction."""
    return ComponentCombination("CNN", "NONE", "LR", "DE")


def fthc_baselines() -> list[ComponentCombination]:
    """Comparison set: K-means over LSTM, FCNN and VAE latents, plus the
    clustering-layer DTC approach."""
    return [
        ComponentCombination("LSTM", "NONE", "LR", "NONE"),
        ComponentCombination("FCNN", "NONE", "LR", "NONE"),
        ComponentCombination("FCNN", "NONE", "LV", "NONE"),
        ComponentCombination("DTC", "NONE", "LR", "DC"),
    ]


# --- evaluation report -----------------------------------------------------------

@dataclass
class ReportRow:
    combo: ComponentCombination
    k: int
    trial: int
    seed: int
    sc: float | None
    dbi: float | None
    verdict: str

    @property
    def valid(self) -> bool:
        return self.verdict == Validity.VALID.value and self.sc is not None


@dataclass
class EvaluationReport:
    rows: list[ReportRow]
    include_pretext_none: bool = True

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("# ledgercluster report v1\n")
        buf.write(f"# pretext_none_in_aggregates: {str(self.include_pretext_none).lower()}\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(
            ["arch", "dimred", "pretext", "cluster_loss", "k", "trial", "seed",
             "sc", "dbi", "verdict"]
        )
        for r in self.rows:
            writer.writerow([
                r.combo.arch, r.combo.dimred, r.combo.pretext, r.combo.cluster_loss,
                r.k, r.trial, r.seed,
                "" if r.sc is None else repr(r.sc),
                "" if r.dbi is None else repr(r.dbi),
                r.verdict,
            ])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "EvaluationReport":
        include = True
        lines = []
        for line in text.splitlines():
            if line.startswith("#"):
                if "pretext_none_in_aggregates" in line:
                    include = line.rsplit(":", 1)[1].strip() == "true"
                continue
            lines.append(line)
        reader = csv.reader(lines)
        header = next(reader)
        expected = ["arch", "dimred", "pretext", "cluster_loss", "k", "trial",
                    "seed", "sc", "dbi", "verdict"]
        if header != expected:
            raise ValueError(f"unexpected report header {header!r}")
        rows = []
        for rec in reader:
            if not rec:
                continue
            combo = ComponentCombination(rec[0], rec[1], rec[2], rec[3])
            rows.append(ReportRow(
                combo=combo,
                k=int(rec[4]),
                trial=int(rec[5]),
                seed=int(rec[6]),
                sc=float(rec[7]) if rec[7] else None,
                dbi=float(rec[8]) if rec[8] else None,
                verdict=rec[9],
            ))
        return cls(rows=rows, include_pretext_none=include)

    def invalid_rates(self) -> dict[str, float]:
        """Invalid-run fraction per clustering-loss variant."""
        rates = {}
        for variant in CLUSTER_LOSSES:
            rows = [r for r in self.rows if r.combo.cluster_loss == variant]
            if rows:
                rates[variant] = sum(1 for r in rows if not r.valid) / len(rows)
            else:
                rates[variant] = 0.0
        return rates


_COMPONENT_CLASSES = {
    "arch": ARCHS,
    "dimred": DIMREDS,
    "pretext": PRETEXTS,
    "cluster_loss": CLUSTER_LOSSES,
}


def aggregate_by_component(report: EvaluationReport) -> dict:
    """Mean SC/DBI per component option over valid rows containing it.

    Rows are reduced in a canonical order so the aggregates are bit-identical
    regardless of how the report rows were stored.
    """
    valid = [r for r in report.rows if r.valid]
    if not report.include_pretext_none:
        valid = [r for r in valid if r.combo.pretext != "NONE"]
    if not valid:
        raise NoValidRows("report has no valid rows")
    valid.sort(key=lambda r: (r.combo.arch, r.combo.dimred, r.combo.pretext,
                              r.combo.cluster_loss, r.k, r.trial, r.seed,
                              r.sc, r.dbi))
    out: dict = {"pretext_none_in_aggregates": report.include_pretext_none}
    for cls_name, options in _COMPONENT_CLASSES.items():
        table = {}
        for option in options:
            rows = [r for r in valid if getattr(r.combo, cls_name) == option]
            if rows:
                table[option] = {
                    "sc": float(np.mean([r.sc for r in rows])),
                    "dbi": float(np.mean([r.dbi for r in rows])),
                    "n": len(rows),
                }
            else:
                table[option] = None
        out[cls_name] = table
    out["invalid_rates"] = report.invalid_rates()
    return out


# --- grid runner -------------------------------------------------------------------

@dataclass(frozen=True)
class _WorkUnit:
    combo_index: int
    combo: ComponentCombination
    trial: int
    k_values: tuple[int, ...]  # one entry for layer combos, the full list otherwise


def _plan(combos, k_list, trials) -> list[_WorkUnit]:
    units = []
    for ci, combo in enumerate(combos):
        for trial in range(trials):
            if combo.cluster_loss == "NONE":
                units.append(_WorkUnit(ci, combo, trial, tuple(k_list)))
            else:
                for k in k_list:
                    units.append(_WorkUnit(ci, combo, trial, (k,)))
    return units


def _run_unit(unit: _WorkUnit, train_ds: Dataset, test_ds: Dataset,
              cfg: TrainConfig, raw_space: bool) -> list[ReportRow]:
    seed = cfg.seed + unit.trial
    rows = []
    if unit.combo.cluster_loss == "NONE":
        # A run without a clustering layer is k-independent up to the final
        # K-means, so train once and cut at every k.
        base_cfg = replace(cfg, seed=seed, k=unit.k_values[0])
        outcome = trainer.train_combination(unit.combo, train_ds, test_ds, base_cfg,
                                            raw_space_metrics=raw_space)
        for k in unit.k_values:
            if k == unit.k_values[0]:
                rows.append(_row_from_outcome(unit, k, seed, outcome))
            else:
                rows.append(_reclustered_row(unit, k, seed, outcome, test_ds, cfg))
    else:
        cfg_k = replace(cfg, seed=seed, k=unit.k_values[0])
        outcome = trainer.train_combination(unit.combo, train_ds, test_ds, cfg_k,
                                            raw_space_metrics=raw_space)
        rows.append(_row_from_outcome(unit, unit.k_values[0], seed, outcome))
    return rows


def _row_from_outcome(unit, k, seed, outcome) -> ReportRow:
    return ReportRow(
        combo=unit.combo, k=k, trial=unit.trial, seed=seed,
        sc=outcome.sc, dbi=outcome.dbi, verdict=outcome.pipeline.verdict.value,
    )


def _reclustered_row(unit, k, seed, outcome, test_ds, cfg) -> ReportRow:
    """Re-run only the final K-means of a trained pipeline at another k."""
    pipeline = outcome.pipeline
    if pipeline.verdict is Validity.DIVERGED or pipeline.autoencoder is None:
        return ReportRow(unit.combo, k, unit.trial, seed, None, None,
                         pipeline.verdict.value)
    z_test = pipeline.autoencoder.encode(test_ds.series)
    flat = z_test.reshape(z_test.shape[0], -1)
    points = pipeline.projection.transform(flat)
    try:
        assignment, _ = clustering.kmeans(points, k, seed=seed)
    except Exception:
        return ReportRow(unit.combo, k, unit.trial, seed, None, None,
                         Validity.DIVERGED.value)
    verdict = clustering.validate(assignment, points.shape[0])
    sc = dbi = None
    if verdict is Validity.VALID:
        sc, dbi = trainer._metrics(points, assignment, cfg.sc_metric)
        if sc is None:
            verdict = Validity.DEGENERATE
    return ReportRow(unit.combo, k, unit.trial, seed, sc, dbi, verdict.value)


def run_grid(train_ds: Dataset, test_ds: Dataset, k_list: list[int], trials: int,
             cfg: TrainConfig, jobs: int = 1, raw_space: bool = False,
             progress=None) -> EvaluationReport:
    """Train every compatible combination for each (k, trial) cell.

    Individual failures become verdicts; the report always contains exactly
    one row per (combination, k, trial).
    """
    if not k_list:
        raise ValueError("k_list must be nonempty")
    if trials < 1:
        raise ValueError("trials must be >= 1")
    combos = enumerate_combinations()
    units = _plan(combos, k_list, trials)
    results: dict[int, list[ReportRow]] = {}
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = {
                pool.submit(_run_unit, unit, train_ds, test_ds, cfg, raw_space): ui
                for ui, unit in enumerate(units)
            }
            for fut, ui in futures.items():
                results[ui] = fut.result()
                if progress:
                    progress(units[ui])
    else:
        for ui, unit in enumerate(units):
            results[ui] = _run_unit(unit, train_ds, test_ds, cfg, raw_space)
            if progress:
                progress(unit)
    rows = [row for ui in sorted(results) for row in results[ui]]
    rows.sort(key=lambda r: (combos.index(r.combo), r.k, r.trial))
    return EvaluationReport(rows=rows)


# --- stability experiment ------------------------------------------------------------

@dataclass
class StabilityRecord:
    seed: int
    ratio: float
    verdict: str
    frozen_fingerprint: str


@dataclass
class StabilityResult:
    records: list[StabilityRecord]
    rates: dict[float, float]  # ratio -> invalid fraction


def stability_experiment(ratios: list[float], n_seeds: int, cfg: TrainConfig,
                         synth: SynthConfig | None = None,
                         progress=None) -> StabilityResult:
    """Frozen-state learning-rate study on the polynomial dataset with the
    DTC architecture.

    Per seed: pretrain once, initialise centroids, freeze that state, then
    run cluster optimisation from the identical frozen state at every
    learning-rate ratio.
    """
    synth = synth or SynthConfig()
    dataset = gen_polynomial(synth)
    x = dataset.series
    records: list[StabilityRecord] = []
    for s in range(n_seeds):
        cfg_s = replace(cfg, seed=cfg.seed + s)
        ae = networks.build_autoencoder("DTC", x.shape[1], cfg_s.latent_dim, cfg_s.seed)
        try:
            trainer.pretrain(ae, x, cfg_s, "LR")
            ae.freeze_normalization()
            layer0 = trainer.init_clustering_layer(ae, x, cfg_s.k, "euclid")
        except Exception:
            for ratio in ratios:
                records.append(StabilityRecord(cfg_s.seed, ratio,
                                               Validity.DIVERGED.value, ""))
            continue
        params0 = ae.get_params()
        buffers0 = ae.get_buffers()
        centroids0 = layer0.centroids.copy()
        z0 = ae.encode(x)
        fingerprint = f"{float(np.sum(z0 * z0)):.12e}"
        for ratio in ratios:
            ae.set_params(params0)
            ae.set_buffers(buffers0)
            cfg_r = replace(cfg_s, eta_cls=ratio * cfg_s.eta_pre)
            verdict = _frozen_cluster_run(ae, layer0, centroids0, x, cfg_r)
            records.append(StabilityRecord(cfg_s.seed, ratio, verdict.value, fingerprint))
            if progress:
                progress(cfg_s.seed, ratio, verdict.value)
    rates = {}
    for ratio in ratios:
        rs = [r for r in records if r.ratio == ratio]
        rates[ratio] = sum(1 for r in rs if r.verdict != Validity.VALID.value) / len(rs)
    return StabilityResult(records=records, rates=rates)


def _frozen_cluster_run(ae, layer0, centroids0, x, cfg) -> Validity:
    from .errors import LedgerClusterError
    from .losses import ClusteringLayer

    layer = ClusteringLayer(centroids=centroids0.copy(), metric=layer0.metric)
    try:
        _, _, verdict = trainer.cluster_optimize(ae, x, cfg, layer.metric, layer=layer)
    except LedgerClusterError:
        return Validity.DIVERGED
    return verdict
