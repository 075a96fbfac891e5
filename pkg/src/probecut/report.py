"""Delimited file formats for pipeline artifacts, plus report rendering.

One place owns how curves, cut-off decisions, beta tables, and error
matrices are written to disk and read back, so the CLI subcommands and the
`report` renderer cannot drift apart. The report path also renders the
figures (loss curves, mean error bars) next to the delimited output.
"""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

from probecut import __version__ as _VERSION
from probecut.artifacts import (
    csv_body,
    header_lines,
    json_body,
    parse_csv_body,
    pct,
    read_artifact,
    read_json_artifact,
    write_artifact,
)
from probecut.estimator import BetaTable, ErrorMatrix
from probecut.probe import LayerAccuracyCurve
from probecut.pruning import loss_curve
from probecut.tensors import CONFIG_TAGS

_FIGURE_METADATA = {"Software": f"probecut {_VERSION}"}


# ---------------------------------------------------------------- curve files

def write_curve_file(path, curve: LayerAccuracyCurve, seed: int, args: Mapping[str, object], notes: Mapping[str, str] | None = None) -> None:
    extra = {
        "dataset": curve.dataset_id,
        "feature": curve.feature,
        "layer-indexing": "0 = embedding output",
    }
    extra.update(notes or {})
    rows: list[Sequence[object]] = [["layer", *curve.groups, "avg"]]
    avgs = curve.avg_accuracies()
    for i, k in enumerate(curve.layer_indices):
        rows.append([k, *[str(a) for a in curve.rows[i]], str(float(avgs[i]))])
    write_artifact(path, header_lines("probe", seed, args, extra), csv_body(rows))


def read_curve_file(path) -> LayerAccuracyCurve:
    meta, body = read_artifact(path)
    table = parse_csv_body(body)
    if not table or table[0][:1] != ["layer"] or table[0][-1] != "avg":
        raise ValueError(f"{path}: not a curve file")
    groups = tuple(table[0][1:-1])
    layer_indices = []
    rows = []
    for line in table[1:]:
        layer_indices.append(int(line[0]))
        rows.append(tuple(float(v) for v in line[1:-1]))
    return LayerAccuracyCurve(
        dataset_id=meta.get("dataset", ""),
        feature=meta.get("feature", ""),
        groups=groups,
        layer_indices=tuple(layer_indices),
        rows=tuple(rows),
    )


# ------------------------------------------------------------- decision files

def write_decision_file(path, doc: dict, seed: int, args: Mapping[str, object]) -> None:
    extra = {"layer-indexing": "0 = embedding output"}
    write_artifact(path, header_lines("kcut", seed, args, extra), json_body(doc))


def read_decision_file(path) -> dict:
    _, doc = read_json_artifact(path)
    return doc


# ----------------------------------------------------------------- beta files

def write_beta_file(path, betas: BetaTable, seed: int, args: Mapping[str, object]) -> None:
    write_artifact(path, header_lines("estimate", seed, args), json_body(betas.to_json_dict()))


def read_beta_file(path) -> BetaTable:
    _, doc = read_json_artifact(path)
    return BetaTable.from_json_dict(doc)


# -------------------------------------------------------- error matrix files

def _matrix_configs(matrix: ErrorMatrix) -> list[str]:
    present = {c for _, c, _ in matrix.cells}
    return [c for c in CONFIG_TAGS if c in present]


def error_matrix_rows(matrix: ErrorMatrix, signed: bool) -> list[list[str]]:
    """Wide rows: one per held-out dataset and a trailing mean row per feature.

    Cell values are percentages with one decimal; the mean row always shows
    mean |Err| regardless of `signed`, matching how summary rows are read.
    """
    configs = _matrix_configs(matrix)
    header = ["feature", "held_out"]
    for config in configs:
        for metric in matrix.metrics:
            header.append(f"{config}_{metric}")
    rows = [header]
    for feature in matrix.features():
        datasets = sorted({d for f, _, d in matrix.cells if f == feature})
        for dataset in datasets:
            row = [feature, dataset]
            for config in configs:
                cell = matrix.cells.get((feature, config, dataset))
                for metric in matrix.metrics:
                    if cell is None:
                        row.append("")
                    else:
                        v = cell[metric] if signed else abs(cell[metric])
                        row.append(pct(v))
            rows.append(row)
        mean_row = [feature, "mean"]
        for config in configs:
            mean = matrix.means.get((feature, config))
            for metric in matrix.metrics:
                mean_row.append("" if mean is None else pct(mean[metric]))
        rows.append(mean_row)
    return rows


def write_error_matrix_file(path, matrix: ErrorMatrix, signed: bool, seed: int, args: Mapping[str, object]) -> None:
    extra = {
        "values": "signed Err = estimate - measured, percent"
        if signed
        else "absolute |Err|, percent",
    }
    write_artifact(
        path,
        header_lines("loocv", seed, args, extra),
        csv_body(error_matrix_rows(matrix, signed)),
    )


def read_error_matrix_rows(path) -> list[list[str]]:
    _, body = read_artifact(path)
    return parse_csv_body(body)


# ------------------------------------------------------------- report output

def build_report_body(
    curves: Sequence[LayerAccuracyCurve],
    decision: dict | None,
    error_rows: list[list[str]] | None,
) -> str:
    """Delimited table blocks: one per curve, then decision, then errors."""
    blocks: list[str] = []
    for curve in curves:
        losses = loss_curve(curve)
        rows: list[Sequence[object]] = [["layer", *curve.groups, "avg", "loss"]]
        avgs = curve.avg_accuracies()
        for i, k in enumerate(curve.layer_indices):
            rows.append(
                [
                    k,
                    *[pct(a) for a in curve.rows[i]],
                    pct(float(avgs[i])),
                    pct(losses.losses[i]),
                ]
            )
        blocks.append(f"== curve: {curve.dataset_id}/{curve.feature} ==\n" + csv_body(rows))
    if decision is not None:
        rows = [["layer", "total_score"]]
        for k, score in zip(decision["layers"], decision["total_scores"]):
            rows.append([k, pct(score)])
        lines = [
            "== decision ==",
            f"k_cut,{decision['k_cut']}",
            f"argmin_k,{decision['argmin_k']}",
            f"curves,{';'.join(decision['curves'])}",
        ]
        baselines = decision.get("baselines")
        if baselines:
            lines.append(f"half_cut,{baselines['half_cut']}")
            removed = ";".join(str(i) for i in baselines["random_removed"])
            lines.append(f"random_removed,{removed}")
        blocks.append("\n".join(lines) + "\n" + csv_body(rows))
    if error_rows:
        blocks.append("== errors ==\n" + csv_body(error_rows))
    return "\n".join(blocks)


def plot_data_rows(curves: Sequence[LayerAccuracyCurve]) -> list[list[str]]:
    rows = [["curve_id", "layer", "loss"]]
    for curve in curves:
        lc = loss_curve(curve)
        for k, loss in zip(lc.layer_indices, lc.losses):
            rows.append([lc.curve_id, str(k), str(loss)])
    return rows


def render_loss_figure(curves: Sequence[LayerAccuracyCurve], path) -> None:
    """Loss per layer, one line per (dataset, feature) curve."""
    import matplotlib

    matplotlib.use("Agg", force=True)
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(7.0, 4.2), dpi=100)
    for curve in curves:
        lc = loss_curve(curve)
        ax.plot(
            lc.layer_indices,
            [l * 100.0 for l in lc.losses],
            marker="o",
            markersize=3.5,
            linewidth=1.2,
            label=lc.curve_id,
        )
    ax.set_xlabel("layer (0 = embedding)")
    ax.set_ylabel("accuracy loss vs best layer (pp)")
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, metadata=dict(_FIGURE_METADATA))
    plt.close(fig)


def render_error_figure(error_rows: list[list[str]], path) -> None:
    """Mean |Err| per config and metric, one bar group per config."""
    import matplotlib

    matplotlib.use("Agg", force=True)
    import matplotlib.pyplot as plt

    header = error_rows[0]
    mean_rows = [r for r in error_rows[1:] if r[1] == "mean"]
    if not mean_rows:
        raise ValueError("error matrix has no mean rows")

    configs: list[str] = []
    metrics: list[str] = []
    for col in header[2:]:
        config, _, metric = col.rpartition("_")
        if config not in configs:
            configs.append(config)
        if metric not in metrics:
            metrics.append(metric)

    fig, ax = plt.subplots(figsize=(7.0, 4.2), dpi=100)
    width = 0.8 / max(1, len(metrics) * len(mean_rows))
    tick = 0
    for row in mean_rows:
        feature = row[0]
        values = row[2:]
        for mi, metric in enumerate(metrics):
            heights = []
            for ci in range(len(configs)):
                cell = values[ci * len(metrics) + mi]
                heights.append(float(cell) if cell else 0.0)
            offset = (tick * len(metrics) + mi) * width
            xs = [c + offset for c in range(len(configs))]
            ax.bar(xs, heights, width=width, label=f"{feature} {metric}")
        tick += 1
    ax.set_xticks([c + 0.4 - width / 2 for c in range(len(configs))])
    ax.set_xticklabels(configs, rotation=20, ha="right", fontsize=8)
    ax.set_ylabel("mean |Err| (pp)")
    ax.grid(True, axis="y", alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, metadata=dict(_FIGURE_METADATA))
    plt.close(fig)


def write_report(
    out_dir,
    curves: Sequence[LayerAccuracyCurve],
    decision: dict | None,
    error_rows: list[list[str]] | None,
    seed: int,
    args: Mapping[str, object],
) -> list[Path]:
    """Write report.txt, plot_data.csv, and the figures; return written paths."""
    out_dir = Path(out_dir)
    written = []
    report_path = out_dir / "report.txt"
    write_artifact(
        report_path,
        header_lines("report", seed, args),
        build_report_body(curves, decision, error_rows),
    )
    written.append(report_path)
    if curves:
        plot_path = out_dir / "plot_data.csv"
        write_artifact(plot_path, header_lines("report", seed, args), csv_body(plot_data_rows(curves)))
        written.append(plot_path)
        fig_path = out_dir / "loss_curves.png"
        render_loss_figure(curves, fig_path)
        written.append(fig_path)
    if error_rows:
        fig_path = out_dir / "error_means.png"
        render_error_figure(error_rows, fig_path)
        written.append(fig_path)
    return written
