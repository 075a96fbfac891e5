"""Command-line pipeline: features -> bins -> probe -> kcut -> estimate/loocv -> report.

Every artifact begins with a header recording the tool version, the seed,
and the flag set; reruns with identical inputs and seed are byte-identical.
Errors leave a single `error: ...` line on stderr and a nonzero exit.
"""

from __future__ import annotations

import argparse
import re
import sys
from pathlib import Path

from probecut import __version__
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
from probecut.estimator import (
    EffectivenessRecord,
    ProbeSummary,
    compute_beta,
    estimate,
    estimation_error,
    leave_one_out,
)
from probecut.lexer import LexError, tokenize_c
from probecut.metrics import DISCARDED, BinningScheme, assign_class, derive_bins, halstead_metrics
from probecut.probe import ProbeConfig, downsample_groups, probe_all_layers
from probecut.pruning import baseline_cutpoints, loss_curve, prune_plan, select_kcut
from probecut.report import (
    read_curve_file,
    read_decision_file,
    read_error_matrix_rows,
    write_beta_file,
    write_curve_file,
    write_decision_file,
    write_error_matrix_file,
    write_report,
)
from probecut.samples import filter_samples, load_manifest
from probecut.tensors import CONFIG_TAGS, POOLING_MODES, load_tensor_set

_DEFAULT_WIDTH = {"cc": 1.0, "hd": 5.0}


def _info(args, message: str) -> None:
    if not args.quiet:
        print(message)


def _slug(text: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]+", "-", text) or "unnamed"


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ------------------------------------------------------------------ features

def _cmd_features(args) -> None:
    samples = load_manifest(args.manifest)
    if args.max_tokens is not None:
        labels = {s.cwe_label for s in samples}
        samples = filter_samples(samples, args.max_tokens, labels)
    rows = [["id", "cc", "hd", "n1", "n2", "N1", "N2"]]
    values: dict[str, list[float]] = {"cc": [], "hd": []}
    for sample in samples:
        try:
            tokens = tokenize_c(sample.source_text)
        except LexError as exc:
            raise ValueError(f"sample {sample.id!r}: {exc}") from exc
        m = halstead_metrics(tokens)
        rows.append([sample.id, m.cc, str(m.hd), m.n1, m.n2, m.total_operators, m.total_operands])
        values["cc"].append(float(m.cc))
        values["hd"].append(m.hd)
    flag_map = {"manifest": args.manifest, "out": args.out}
    if args.max_tokens is not None:
        flag_map["max-tokens"] = args.max_tokens
    out = _out_dir(args)
    path = out / "metrics.csv"
    write_artifact(path, header_lines("features", args.seed, flag_map), csv_body(rows))
    _info(args, f"wrote {path} ({len(rows) - 1} samples)")

    # default class schemes alongside the raw metrics; `bins` can rebuild
    # them over several metrics files when a shared scheme is wanted
    for feature in ("cc", "hd"):
        width = _DEFAULT_WIDTH[feature]
        try:
            scheme = derive_bins(values[feature], feature, coverage=0.85, bin_width=width)
        except ValueError as exc:
            _info(args, f"skipped scheme_{feature}.json: {exc}")
            continue
        spath = out / f"scheme_{feature}.json"
        write_artifact(
            spath,
            header_lines("features", args.seed, flag_map),
            json_body(_scheme_doc(scheme, width)),
        )
        _info(args, f"wrote {spath} ({scheme.num_classes} classes)")


# ---------------------------------------------------------------------- bins

def _read_metrics_column(path, feature: str) -> dict[str, float]:
    _, body = read_artifact(path)
    table = parse_csv_body(body)
    if not table or "id" not in table[0] or feature not in table[0]:
        raise ValueError(f"{path}: not a metrics file with a {feature!r} column")
    id_col = table[0].index("id")
    col = table[0].index(feature)
    return {row[id_col]: float(row[col]) for row in table[1:]}


def _scheme_doc(scheme: BinningScheme, width: float) -> dict:
    return {
        "feature": scheme.feature,
        "coverage": scheme.coverage,
        "bin_width": width,
        "boundaries": [list(b) for b in scheme.boundaries],
        "labels": scheme.labels(),
        "discarded_rule": scheme.discarded_rule,
    }


def _cmd_bins(args) -> None:
    values: list[float] = []
    for path in args.metrics:
        values.extend(_read_metrics_column(path, args.feature).values())
    width = args.width if args.width is not None else _DEFAULT_WIDTH[args.feature]
    scheme = derive_bins(values, args.feature, coverage=args.coverage, bin_width=width)
    doc = _scheme_doc(scheme, width)
    flag_map = {
        "metrics": args.metrics,
        "feature": args.feature,
        "coverage": args.coverage,
        "width": width,
        "out": args.out,
    }
    path = _out_dir(args) / f"scheme_{args.feature}.json"
    write_artifact(path, header_lines("bins", args.seed, flag_map), json_body(doc))
    _info(args, f"wrote {path} ({scheme.num_classes} classes)")


def _load_scheme(path) -> BinningScheme:
    _, doc = read_json_artifact(path)
    return BinningScheme(
        feature=doc["feature"],
        boundaries=tuple(tuple(b) for b in doc["boundaries"]),
        coverage=doc["coverage"],
        discarded_rule=doc["discarded_rule"],
    )


# --------------------------------------------------------------------- probe

def _cmd_probe(args) -> None:
    manifest, tensors = load_tensor_set(args.tensors)
    if args.pool is not None and args.pool != manifest.pooling:
        raise ValueError(
            f"--pool {args.pool} does not match the tensor set's pooling {manifest.pooling!r}"
        )
    scheme = _load_scheme(args.scheme)
    if scheme.feature != args.feature:
        raise ValueError(
            f"scheme is for feature {scheme.feature!r}, requested {args.feature!r}"
        )

    samples = load_manifest(args.samples)
    groups_all = {s.id: s.cwe_label for s in samples}
    values = _read_metrics_column(args.metrics, args.feature)

    tensor_ids = set(tensors[0].sample_ids)
    usable: list[str] = []
    targets_all: dict[str, int] = {}
    for sid, value in values.items():
        cls = assign_class(value, scheme)
        if cls is DISCARDED or sid not in tensor_ids or sid not in groups_all:
            continue
        targets_all[sid] = cls
        usable.append(sid)
    if not usable:
        raise ValueError("no samples survive binning and alignment")

    group_labels = [groups_all[sid] for sid in usable]
    keep = downsample_groups(group_labels, args.seed)
    kept_ids = {usable[i] for i in keep}
    targets = {sid: targets_all[sid] for sid in kept_ids}
    groups = {sid: groups_all[sid] for sid in kept_ids}

    if args.dataset:
        dataset_id = args.dataset
    else:
        dataset_ids = sorted({s.dataset_id for s in samples})
        dataset_id = dataset_ids[0] if len(dataset_ids) == 1 else "mixed"

    hidden = tuple(int(h) for h in args.hidden.split(",") if h)
    config = ProbeConfig(
        hidden_layer_sizes=hidden,
        learning_rate=args.lr,
        epochs=args.epochs,
        batch_size=args.batch,
        seed=args.seed,
    )
    curve = probe_all_layers(tensors, targets, groups, config, dataset_id, args.feature)

    flag_map = {
        "tensors": args.tensors,
        "metrics": args.metrics,
        "scheme": args.scheme,
        "samples": args.samples,
        "feature": args.feature,
        "hidden": args.hidden,
        "lr": args.lr,
        "epochs": args.epochs,
        "batch": args.batch,
        "out": args.out,
    }
    notes = {
        "config-tag": manifest.config_tag,
        "pooling": manifest.pooling,
        "split": "fresh 80/20 per layer, seed = global seed XOR layer index",
        "groups": "downsampled to equal size per CWE (seed-keyed)",
    }
    path = _out_dir(args) / f"curve_{_slug(dataset_id)}_{args.feature}.csv"
    write_curve_file(path, curve, args.seed, flag_map, notes)
    _info(args, f"wrote {path} ({len(curve.layer_indices)} layers, {len(kept_ids)} samples)")


# ---------------------------------------------------------------------- kcut

def _cmd_kcut(args) -> None:
    curves = [read_curve_file(p) for p in args.curves]
    losses = [loss_curve(c) for c in curves]
    decision = select_kcut(losses)
    total_layers = decision.layer_indices[-1]
    selected = decision.k_cut
    if args.force_k is not None:
        if args.force_k not in decision.layer_indices:
            raise ValueError(f"--force-k {args.force_k} is not a probed layer")
        selected = args.force_k

    baselines = None
    if 0 < selected < total_layers:
        b = baseline_cutpoints(selected, total_layers, args.seed)
        baselines = {
            "half_cut": b["half_cut"],
            "random_removed": sorted(b["random_removed"]),
        }

    doc = {
        "k_cut": selected,
        "argmin_k": decision.k_cut,
        "forced": args.force_k is not None,
        "layers": list(decision.layer_indices),
        "total_scores": list(decision.total_scores),
        "curves": list(decision.curve_ids),
        "total_layers": total_layers,
        "baselines": baselines,
    }
    flag_map = {"curves": args.curves, "out": args.out}
    if args.force_k is not None:
        flag_map["force-k"] = args.force_k
    out = _out_dir(args)
    decision_path = out / "decision.json"
    write_decision_file(decision_path, doc, args.seed, flag_map)

    plan = {
        "k_cut": selected,
        "total_layers": total_layers,
        "retained_layers": prune_plan(selected, total_layers),
    }
    plan_path = out / "prune_plan.json"
    write_artifact(plan_path, header_lines("kcut", args.seed, flag_map), json_body(plan))
    _info(args, f"wrote {decision_path} (k_cut={selected}) and {plan_path}")


# ---------------------------------------------------------- estimate / loocv

def _load_knowledge(path) -> list[tuple[EffectivenessRecord, ProbeSummary]]:
    _, doc = read_json_artifact(path)
    records = [
        EffectivenessRecord(
            dataset_id=r["dataset_id"],
            config_tag=r["config_tag"],
            precision=r["precision"],
            recall=r["recall"],
            f1=r["f1"],
            accuracy=r["accuracy"],
        )
        for r in doc.get("records", [])
    ]
    summaries = [
        ProbeSummary(
            dataset_id=s["dataset_id"],
            feature=s["feature"],
            acc_lp=s["acc_lp"],
            layer_policy=s.get("layer_policy", "best_layer"),
            layer_used=s.get("layer_used", 0),
        )
        for s in doc.get("summaries", [])
    ]
    pairs = [
        (r, s) for r in records for s in summaries if r.dataset_id == s.dataset_id
    ]
    if not pairs:
        raise ValueError(f"{path}: no record/summary pairs share a dataset_id")
    return pairs


def _load_summary(args) -> ProbeSummary:
    if args.target:
        _, doc = read_json_artifact(args.target)
        return ProbeSummary(
            dataset_id=doc["dataset_id"],
            feature=doc["feature"],
            acc_lp=doc["acc_lp"],
            layer_policy=doc.get("layer_policy", "best_layer"),
            layer_used=doc.get("layer_used", 0),
        )
    if args.dataset is None or args.feature is None or args.acc_lp is None:
        raise ValueError("provide --target or all of --dataset, --feature, --acc-lp")
    return ProbeSummary(
        dataset_id=args.dataset,
        feature=args.feature,
        acc_lp=args.acc_lp,
        layer_policy=args.layer_policy,
        layer_used=args.layer_used,
    )


def _cmd_estimate(args) -> None:
    pairs = _load_knowledge(args.knowledge)
    summary = _load_summary(args)
    betas = compute_beta(pairs)

    present = {r.config_tag for r, s in pairs if s.feature == summary.feature}
    configs = args.config or [c for c in CONFIG_TAGS if c in present]
    if not configs:
        raise ValueError(f"knowledge base has no configs for feature {summary.feature!r}")

    truth_by_config: dict[str, EffectivenessRecord] = {}
    if args.truth:
        _, doc = read_json_artifact(args.truth)
        for r in doc.get("records", []):
            rec = EffectivenessRecord(
                dataset_id=r["dataset_id"],
                config_tag=r["config_tag"],
                precision=r["precision"],
                recall=r["recall"],
                f1=r["f1"],
                accuracy=r["accuracy"],
            )
            if rec.dataset_id == summary.dataset_id:
                truth_by_config[rec.config_tag] = rec

    flag_map = {"knowledge": args.knowledge, "out": args.out}
    if args.target:
        flag_map["target"] = args.target
    else:
        flag_map.update(
            {"dataset": summary.dataset_id, "feature": summary.feature, "acc-lp": summary.acc_lp}
        )
    if args.truth:
        flag_map["truth"] = args.truth
    if args.config:
        flag_map["config"] = args.config

    out = _out_dir(args)
    beta_path = out / "beta.json"
    write_beta_file(beta_path, betas, args.seed, flag_map)

    rows = [["config", "metric", "acc_lp", "beta", "estimate", "err", "abs_err"]]
    for config in configs:
        report = estimate(summary, betas, config)
        errors = None
        if config in truth_by_config:
            errors = estimation_error(report, truth_by_config[config])
        for metric, value in report.estimates.items():
            beta = betas.beta(summary.feature, config, metric)
            row = [config, metric, pct(summary.acc_lp), pct(beta), pct(value)]
            if errors is None:
                row.extend(["", ""])
            else:
                row.extend([pct(errors[metric]), pct(abs(errors[metric]))])
            rows.append(row)

    extra = {
        "dataset": summary.dataset_id,
        "feature": summary.feature,
        "layer-policy": summary.layer_policy,
        "values": "percent, one decimal",
    }
    est_path = out / "estimate.csv"
    write_artifact(est_path, header_lines("estimate", args.seed, flag_map, extra), csv_body(rows))
    _info(args, f"wrote {beta_path} and {est_path}")


def _cmd_loocv(args) -> None:
    pairs = _load_knowledge(args.knowledge)
    matrix = leave_one_out(pairs)
    flag_map = {"knowledge": args.knowledge, "out": args.out}
    out = _out_dir(args)
    signed_path = out / "loocv_signed.csv"
    abs_path = out / "loocv_abs.csv"
    write_error_matrix_file(signed_path, matrix, signed=True, seed=args.seed, args=flag_map)
    write_error_matrix_file(abs_path, matrix, signed=False, seed=args.seed, args=flag_map)
    _info(args, f"wrote {signed_path} and {abs_path}")


# -------------------------------------------------------------------- report

def _cmd_report(args) -> None:
    if not args.curves and not args.decision and not args.errors:
        raise ValueError("nothing to report: pass --curves, --decision, or --errors")
    curves = [read_curve_file(p) for p in args.curves]
    decision = read_decision_file(args.decision) if args.decision else None
    error_rows = read_error_matrix_rows(args.errors) if args.errors else None
    flag_map = {"out": args.out}
    if args.curves:
        flag_map["curves"] = args.curves
    if args.decision:
        flag_map["decision"] = args.decision
    if args.errors:
        flag_map["errors"] = args.errors
    written = write_report(_out_dir(args), curves, decision, error_rows, args.seed, flag_map)
    _info(args, "wrote " + ", ".join(str(p) for p in written))


# -------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="seed recorded in and driving all randomness")
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--quiet", action="store_true", help="suppress progress lines")

    parser = argparse.ArgumentParser(
        prog="probecut",
        description="Layer probes for pruning cut-off selection and effectiveness estimation.",
    )
    parser.add_argument("--version", action="version", version=f"probecut {__version__}")
    sub = parser.add_subparsers(dest="subcommand", metavar="subcommand")

    p = sub.add_parser("features", parents=[common], help="compute CC/HD metrics for a sample manifest")
    p.add_argument("--manifest", required=True, help="line-delimited sample manifest")
    p.add_argument("--max-tokens", type=int, default=None, help="keep samples within this token budget")
    p.set_defaults(handler=_cmd_features)

    p = sub.add_parser("bins", parents=[common], help="derive a class-binning scheme from metrics files")
    p.add_argument("--metrics", nargs="+", required=True, help="metrics files from `features`")
    p.add_argument("--feature", choices=("cc", "hd"), required=True)
    p.add_argument("--coverage", type=float, default=0.85)
    p.add_argument("--width", type=float, default=None, help="bin width (default: 1 for cc, 5 for hd)")
    p.set_defaults(handler=_cmd_bins)

    p = sub.add_parser("probe", parents=[common], help="train per-layer probes, write the accuracy curve")
    p.add_argument("--tensors", required=True, help="activation-set manifest (JSON)")
    p.add_argument("--metrics", required=True, help="metrics file from `features`")
    p.add_argument("--scheme", required=True, help="binning scheme from `bins`")
    p.add_argument("--samples", required=True, help="sample manifest (for CWE groups)")
    p.add_argument("--feature", choices=("cc", "hd"), required=True)
    p.add_argument("--hidden", default="128", help="comma-separated hidden layer sizes")
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--pool", choices=POOLING_MODES, default=None, help="assert the tensor set's pooling mode")
    p.add_argument("--dataset", default=None, help="dataset id for the curve (default: from manifest)")
    p.set_defaults(handler=_cmd_probe)

    p = sub.add_parser("kcut", parents=[common], help="select the cut-off layer from accuracy curves")
    p.add_argument("--curves", nargs="+", required=True, help="curve files from `probe`")
    p.add_argument("--force-k", type=int, default=None, help="override the selected layer")
    p.set_defaults(handler=_cmd_kcut)

    p = sub.add_parser("estimate", parents=[common], help="estimate effectiveness from probe accuracy")
    p.add_argument("--knowledge", required=True, help="JSON knowledge base (records + summaries)")
    p.add_argument("--target", default=None, help="JSON probe summary for the target dataset")
    p.add_argument("--dataset", default=None, help="target dataset id (alternative to --target)")
    p.add_argument("--feature", choices=("cc", "hd"), default=None)
    p.add_argument("--acc-lp", type=float, default=None)
    p.add_argument("--layer-policy", choices=("best_layer", "at_kcut"), default="best_layer")
    p.add_argument("--layer-used", type=int, default=0)
    p.add_argument("--config", action="append", choices=CONFIG_TAGS, default=None,
                   help="config tag(s) to estimate (default: all in the knowledge base)")
    p.add_argument("--truth", default=None, help="JSON records file with measured effectiveness")
    p.set_defaults(handler=_cmd_estimate)

    p = sub.add_parser("loocv", parents=[common], help="leave-one-out validation over the knowledge base")
    p.add_argument("--knowledge", required=True, help="JSON knowledge base (records + summaries)")
    p.set_defaults(handler=_cmd_loocv)

    p = sub.add_parser("report", parents=[common], help="render tables, plot data, and figures")
    p.add_argument("--curves", nargs="*", default=[], help="curve files from `probe`")
    p.add_argument("--decision", default=None, help="decision file from `kcut`")
    p.add_argument("--errors", default=None, help="error matrix from `loocv`")
    p.set_defaults(handler=_cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not getattr(args, "handler", None):
        parser.print_usage(file=sys.stderr)
        return 2
    try:
        args.handler(args)
    except BrokenPipeError:
        return 1
    except Exception as exc:  # single-line, machine-parsable diagnostics
        message = " ".join(str(exc).split())
        print(f"error: {message}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
