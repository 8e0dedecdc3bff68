"""Command-line pipeline: simulate, extract, fnc, kernel, select, evaluate, report.

Each stage writes its artifacts under the output directory and later stages
read them back, so expensive steps (extraction) are not repeated when only
selection or evaluation settings change. Exit codes: 0 success, 1 data/I-O
error, 2 configuration error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from ._util import derive_seed, parallel_map
from .datamodel import (
    Dataset,
    ManifestError,
    MatrixFormatError,
    SubjectFeatures,
    load_dataset,
    read_matrix,
    write_dataset,
    write_matrix,
)
from .evaluation import EvalConfig, run_experiment
from .fnc import compute_fnc
from .kernels import PabsKernelParams, build_kernel_matrix
from .scica import ScicaConfig, extract_subject
from .selection import SelectionResult, SsfsConfig, ssfs
from .svm import SvmConfig
from .synth import SynthConfig, generate_cohort


class ConfigError(ValueError):
    pass


_SECTIONS = {
    "synth": SynthConfig,
    "scica": ScicaConfig,
    "kernel": PabsKernelParams,
    "svm": SvmConfig,
    "selection": SsfsConfig,
    "evaluation": EvalConfig,
}
_TOP_KEYS = {"seed", "threads", "features", "selection_mode", "template"} | set(_SECTIONS)


@dataclasses.dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    threads: int = 1
    features: str = "sm"  # sm | sm+fnc
    selection_mode: str = "ssfs"  # ssfs | sfs | fixed:<i,j,...>
    template: str = "default"  # default | n53 | n105 | <path>
    synth: SynthConfig = SynthConfig()
    scica: ScicaConfig = ScicaConfig()
    kernel: PabsKernelParams = PabsKernelParams()
    svm: SvmConfig = SvmConfig()
    selection: SsfsConfig = SsfsConfig()
    evaluation: EvalConfig = EvalConfig()

    def __post_init__(self):
        if self.features not in ("sm", "sm+fnc"):
            raise ConfigError(f"features must be 'sm' or 'sm+fnc', got {self.features!r}")
        mode = self.selection_mode
        if mode not in ("ssfs", "sfs") and not mode.startswith("fixed:"):
            raise ConfigError(
                f"selection_mode must be 'ssfs', 'sfs' or 'fixed:<list>', got {mode!r}"
            )


def _section_from_dict(cls, data: dict, path: str):
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(fields)
    if unknown:
        raise ConfigError(f"unknown config key: {path}.{sorted(unknown)[0]}")
    kwargs = {}
    for key, value in data.items():
        if key in ("class_counts",) and isinstance(value, dict):
            value = tuple((str(k), int(v)) for k, v in value.items())
        if isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid {path} config: {e}") from e


def load_run_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Build a RunConfig from an optional JSON file plus CLI overrides.

    Unknown keys anywhere in the document are rejected by name.
    """
    data: dict = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        try:
            data = json.loads(p.read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"{p}: invalid JSON: {e}") from e
        if not isinstance(data, dict):
            raise ConfigError(f"{p}: config must be a JSON object")
    unknown = set(data) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown config key: {sorted(unknown)[0]}")
    kwargs: dict = {}
    for key in ("seed", "threads", "features", "selection_mode", "template"):
        if key in data:
            kwargs[key] = data[key]
    for key, cls in _SECTIONS.items():
        if key in data:
            if not isinstance(data[key], dict):
                raise ConfigError(f"config section {key!r} must be an object")
            kwargs[key] = _section_from_dict(cls, data[key], key)
    cfg = RunConfig(**kwargs)
    if overrides:
        cfg = apply_overrides(cfg, overrides)
    return cfg


def apply_overrides(cfg: RunConfig, overrides: dict) -> RunConfig:
    """Apply CLI flags; the seed override re-seeds every section too."""
    updates: dict = {}
    for key in ("threads", "features", "selection_mode", "template"):
        if overrides.get(key) is not None:
            updates[key] = overrides[key]
    if overrides.get("seed") is not None:
        seed = int(overrides["seed"])
        updates["seed"] = seed
        updates["synth"] = dataclasses.replace(cfg.synth, seed=seed)
        updates["svm"] = dataclasses.replace(cfg.svm, seed=derive_seed(seed, "svm"))
        updates["selection"] = dataclasses.replace(
            cfg.selection, seed=derive_seed(seed, "selection")
        )
        updates["evaluation"] = dataclasses.replace(
            cfg.evaluation, seed=derive_seed(seed, "evaluation")
        )
    return dataclasses.replace(cfg, **updates)


def _apply_template_preset(cfg: RunConfig) -> SynthConfig:
    synth = cfg.synth
    if cfg.template == "n53":
        return dataclasses.replace(synth, n_components=53, n_domains=7)
    if cfg.template == "n105":
        return dataclasses.replace(synth, n_components=105, n_domains=6)
    if cfg.template == "default":
        return synth
    raise ConfigError(
        f"simulate supports template presets 'default', 'n53', 'n105'; "
        f"got {cfg.template!r} (external template paths apply to extract)"
    )


# ---------------------------------------------------------------- commands


def cmd_simulate(cfg: RunConfig, out_dir: Path) -> int:
    synth_cfg = _apply_template_preset(cfg)
    dataset, truth = generate_cohort(synth_cfg, threads=cfg.threads)
    dataset_dir = out_dir / "dataset"
    write_dataset(dataset, dataset_dir)
    truth_doc = {
        "informative_indices": list(truth.informative_indices),
        "class_set": list(dataset.class_set),
        "counts": {c: sum(1 for s in dataset.subjects if s.label == c) for c in dataset.class_set},
        "seed": synth_cfg.seed,
    }
    (dataset_dir / "ground_truth.json").write_text(json.dumps(truth_doc, indent=2) + "\n")
    n = dataset.n_subjects
    print(
        f"simulated {n} subjects, {dataset.template.n_components} components, "
        f"{dataset.template.n_voxels} voxels -> {dataset_dir / 'manifest.json'}"
    )
    return 0


def _load_dataset_for(cfg: RunConfig, out_dir: Path) -> Dataset:
    manifest = out_dir / "dataset" / "manifest.json"
    if cfg.template not in ("default", "n53", "n105"):
        # external dataset directory or manifest path
        p = Path(cfg.template)
        manifest = p / "manifest.json" if p.is_dir() else p
    return load_dataset(manifest)


def cmd_extract(cfg: RunConfig, out_dir: Path) -> int:
    dataset = _load_dataset_for(cfg, out_dir)
    feat_dir = out_dir / "features"
    feat_dir.mkdir(parents=True, exist_ok=True)
    seed = derive_seed(cfg.seed, "extract")

    def one(item):
        idx, subject = item
        return extract_subject(
            subject.bold, dataset.template, cfg.scica, seed=derive_seed(seed, "subject", idx)
        )

    feats = parallel_map(one, list(enumerate(dataset.subjects)), cfg.threads)
    entries = []
    for subject, f in zip(dataset.subjects, feats):
        write_matrix(f.spatial_maps, feat_dir / f"{subject.id}.sm.msmx")
        write_matrix(f.time_courses, feat_dir / f"{subject.id}.tc.msmx")
        entries.append(
            {
                "id": subject.id,
                "label": subject.label,
                "group": subject.group,
                "sm": f"{subject.id}.sm.msmx",
                "tc": f"{subject.id}.tc.msmx",
                "converged": [bool(c) for c in f.converged],
            }
        )
    doc = {
        "subjects": entries,
        "class_set": list(dataset.class_set),
        "domains": list(dataset.template.domains),
    }
    (feat_dir / "features.json").write_text(json.dumps(doc, indent=2) + "\n")
    n_bad = sum(not all(e["converged"]) for e in entries)
    print(f"extracted {len(entries)} subjects ({n_bad} with non-converged components)")
    return 0


def _load_features(out_dir: Path, need_fnc: bool):
    feat_dir = out_dir / "features"
    doc_path = feat_dir / "features.json"
    if not doc_path.exists():
        raise ManifestError(f"features not found: {doc_path} (run extract first)")
    doc = json.loads(doc_path.read_text())
    features = []
    labels = []
    ids = []
    for entry in doc["subjects"]:
        sm = read_matrix(feat_dir / entry["sm"])
        tc = read_matrix(feat_dir / entry["tc"])
        fnc = None
        if need_fnc:
            if "fnc" not in entry:
                raise ManifestError(
                    f"subject {entry['id']}: FNC not computed (run fnc first)"
                )
            fnc = read_matrix(feat_dir / entry["fnc"])
        features.append(SubjectFeatures(spatial_maps=sm, time_courses=tc, fnc=fnc))
        labels.append(entry["label"])
        ids.append(entry["id"])
    return features, labels, ids, doc


def cmd_fnc(cfg: RunConfig, out_dir: Path) -> int:
    feat_dir = out_dir / "features"
    features, labels, ids, doc = _load_features(out_dir, need_fnc=False)
    for entry, f in zip(doc["subjects"], features):
        fnc = compute_fnc(f.time_courses)
        name = f"{entry['id']}.fnc.msmx"
        write_matrix(fnc, feat_dir / name)
        entry["fnc"] = name
    (feat_dir / "features.json").write_text(json.dumps(doc, indent=2) + "\n")
    print(f"computed FNC matrices for {len(ids)} subjects")
    return 0


def _class_filter(features, labels, ids, class_set):
    kept = [i for i, lab in enumerate(labels) if lab in class_set]
    missing = [c for c in class_set if c not in {labels[i] for i in kept}]
    if missing:
        raise ManifestError(f"classes missing from features: {missing}")
    return (
        [features[i] for i in kept],
        [labels[i] for i in kept],
        [ids[i] for i in kept],
    )


def _parse_fixed(mode: str, n_components: int) -> list[int]:
    try:
        indices = [int(x) for x in mode.split(":", 1)[1].split(",") if x.strip() != ""]
    except ValueError as e:
        raise ConfigError(f"bad fixed selection {mode!r}: {e}") from e
    if not indices:
        raise ConfigError("fixed selection is empty")
    for i in indices:
        if not 0 <= i < n_components:
            raise ConfigError(f"fixed selection index {i} out of range")
    return indices


def cmd_select(cfg: RunConfig, out_dir: Path) -> int:
    use_fnc = cfg.features == "sm+fnc"
    features, labels, ids, doc = _load_features(out_dir, need_fnc=use_fnc)
    class_set = tuple(c for c in cfg.evaluation.class_set if c in set(labels))
    if len(class_set) < 2:
        raise ConfigError(
            f"need at least 2 of the configured classes in the data, have {class_set}"
        )
    features, labels, ids = _class_filter(features, labels, ids, class_set)
    sel_dir = out_dir / "selection"
    sel_dir.mkdir(parents=True, exist_ok=True)

    if cfg.selection_mode.startswith("fixed:"):
        indices = _parse_fixed(cfg.selection_mode, features[0].n_components)
        result = SelectionResult(
            best_set=tuple(indices),
            best_score=float("nan"),
            beam_trace=(),
            final_beam=((tuple(indices), float("nan")),),
        )
    else:
        sel_cfg = cfg.selection
        if cfg.selection_mode == "sfs":
            sel_cfg = dataclasses.replace(sel_cfg, beam_width=1)
        result = ssfs(
            features,
            labels,
            doc["domains"],
            sel_cfg,
            cfg.kernel,
            cfg.svm,
            class_set=class_set,
            use_fnc=use_fnc,
            threads=cfg.threads,
        )
        (sel_dir / "trace.csv").write_text(result.trace_csv())

    out = {
        "best_set": list(result.best_set),
        "best_score": None if np.isnan(result.best_score) else result.best_score,
        "mode": cfg.selection_mode,
        "features": cfg.features,
        "final_beam": [
            {"set": list(s), "score": None if np.isnan(sc) else sc}
            for s, sc in result.final_beam
        ],
    }
    (sel_dir / "result.json").write_text(json.dumps(out, indent=2) + "\n")
    print(f"selected components {list(result.best_set)} (mode {cfg.selection_mode})")
    return 0


def cmd_evaluate(cfg: RunConfig, out_dir: Path) -> int:
    use_fnc = cfg.features == "sm+fnc"
    features, labels, ids, doc = _load_features(out_dir, need_fnc=use_fnc)
    class_set = tuple(c for c in cfg.evaluation.class_set if c in set(labels))
    if len(class_set) < 2:
        raise ConfigError(
            f"need at least 2 of the configured classes in the data, have {class_set}"
        )
    features, labels, ids = _class_filter(features, labels, ids, class_set)

    if cfg.selection_mode.startswith("fixed:"):
        selected = _parse_fixed(cfg.selection_mode, features[0].n_components)
    else:
        result_path = out_dir / "selection" / "result.json"
        if not result_path.exists():
            raise ManifestError(f"selection result not found: {result_path} (run select first)")
        selected = json.loads(result_path.read_text())["best_set"]

    eval_cfg = dataclasses.replace(cfg.evaluation, class_set=class_set)
    report = run_experiment(
        features,
        labels,
        selected,
        cfg.kernel,
        cfg.svm,
        eval_cfg,
        use_fnc=use_fnc,
        threads=cfg.threads,
    )
    eval_dir = out_dir / "eval"
    eval_dir.mkdir(parents=True, exist_ok=True)
    (eval_dir / "report.csv").write_text(report.to_report_csv())
    (eval_dir / "summary.csv").write_text(report.to_summary_csv())
    meta = {
        "selected": [int(i) for i in selected],
        "features": cfg.features,
        "class_set": list(class_set),
        "outer_folds": eval_cfg.outer_folds,
        "repeats": eval_cfg.repeats,
        "seed": eval_cfg.seed,
    }
    (eval_dir / "eval_meta.json").write_text(json.dumps(meta, indent=2) + "\n")
    agg = report.aggregates()
    print(
        f"evaluated {len(labels)} subjects on components {list(selected)}: "
        f"median macro PR-AUC {agg['macro_pr_auc'].median:.3f}, "
        f"median macro F1 {agg['macro_f1'].median:.3f}"
    )
    return 0


def cmd_kernel(cfg: RunConfig, out_dir: Path) -> int:
    use_fnc = cfg.features == "sm+fnc"
    features, labels, ids, doc = _load_features(out_dir, need_fnc=use_fnc)
    if not cfg.selection_mode.startswith("fixed:"):
        raise ConfigError("kernel dump requires --selection fixed:<list>")
    selected = _parse_fixed(cfg.selection_mode, features[0].n_components)
    kernel = build_kernel_matrix(
        features, selected, cfg.kernel, use_fnc=use_fnc, subject_ids=tuple(ids)
    )
    kdir = out_dir / "kernel"
    kdir.mkdir(parents=True, exist_ok=True)
    write_matrix(kernel.values, kdir / "kernel.msmx")
    (kdir / "subjects.json").write_text(
        json.dumps({"subject_ids": list(kernel.subject_ids), "selected": selected}, indent=2)
        + "\n"
    )
    print(f"wrote {len(ids)}x{len(ids)} kernel for components {selected}")
    return 0


def _svg_box_plot(rows: list[dict]) -> str:
    """Render summary rows as a standalone SVG box plot (no plot library)."""
    width, height = 640, 360
    margin_l, margin_r, margin_t, margin_b = 60, 20, 30, 90
    plot_w = width - margin_l - margin_r
    plot_h = height - margin_t - margin_b
    n = len(rows)
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
    ]

    def sy(v: float) -> float:
        return margin_t + (1.0 - v) * plot_h

    for tick in (0.0, 0.25, 0.5, 0.75, 1.0):
        y = sy(tick)
        out.append(
            f'<line x1="{margin_l}" y1="{y:.1f}" x2="{width - margin_r}" y2="{y:.1f}" '
            f'stroke="#ddd"/>'
        )
        out.append(
            f'<text x="{margin_l - 8}" y="{y + 4:.1f}" text-anchor="end" '
            f'font-size="11" font-family="sans-serif">{tick:.2f}</text>'
        )
    box_w = min(60.0, plot_w / max(n, 1) * 0.5)
    for i, row in enumerate(rows):
        cx = margin_l + plot_w * (i + 0.5) / n
        lo, q1 = float(row["whisker_lo"]), float(row["q1"])
        med, q3, hi = float(row["median"]), float(row["q3"]), float(row["whisker_hi"])
        out.append(
            f'<line x1="{cx:.1f}" y1="{sy(lo):.1f}" x2="{cx:.1f}" y2="{sy(hi):.1f}" '
            f'stroke="#444"/>'
        )
        for v in (lo, hi):
            out.append(
                f'<line x1="{cx - box_w / 4:.1f}" y1="{sy(v):.1f}" '
                f'x2="{cx + box_w / 4:.1f}" y2="{sy(v):.1f}" stroke="#444"/>'
            )
        out.append(
            f'<rect x="{cx - box_w / 2:.1f}" y="{sy(q3):.1f}" width="{box_w:.1f}" '
            f'height="{max(sy(q1) - sy(q3), 0.5):.1f}" fill="#7fb3d5" stroke="#2c3e50"/>'
        )
        out.append(
            f'<line x1="{cx - box_w / 2:.1f}" y1="{sy(med):.1f}" '
            f'x2="{cx + box_w / 2:.1f}" y2="{sy(med):.1f}" stroke="#c0392b" stroke-width="2"/>'
        )
        out.append(
            f'<text x="{cx:.1f}" y="{height - margin_b + 16}" text-anchor="end" '
            f'font-size="11" font-family="sans-serif" '
            f'transform="rotate(-40 {cx:.1f} {height - margin_b + 16})">{row["metric"]}</text>'
        )
    out.append("</svg>")
    return "\n".join(out) + "\n"


def cmd_report(cfg: RunConfig, out_dir: Path) -> int:
    summary_path = out_dir / "eval" / "summary.csv"
    if not summary_path.exists():
        raise ManifestError(f"summary not found: {summary_path} (run evaluate first)")
    lines = summary_path.read_text().strip().splitlines()
    header = lines[0].split(",")
    rows = [dict(zip(header, line.split(","))) for line in lines[1:]]
    svg = _svg_box_plot(rows)
    (out_dir / "eval" / "report.svg").write_text(svg)
    print(f"wrote box plot for {len(rows)} metrics -> {out_dir / 'eval' / 'report.svg'}")
    return 0


# ------------------------------------------------------------------ driver

_COMMANDS = {
    "simulate": cmd_simulate,
    "extract": cmd_extract,
    "fnc": cmd_fnc,
    "kernel": cmd_kernel,
    "select": cmd_select,
    "evaluate": cmd_evaluate,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="netresp",
        description="Multi-scale network-feature pipeline for medication-response prediction",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    descriptions = {
        "simulate": "generate a synthetic dataset (manifest + matrix containers)",
        "extract": "run constrained ICA against the dataset template",
        "fnc": "compute per-subject FNC matrices from extracted time courses",
        "kernel": "dump the subject kernel matrix for a fixed component set",
        "select": "run (soft) sequential forward selection over domains",
        "evaluate": "outer cross-validation of the selected component set",
        "report": "render summary.csv as an SVG box plot",
    }
    for name, fn in _COMMANDS.items():
        p = sub.add_parser(name, help=descriptions[name], description=descriptions[name])
        p.add_argument("--config", type=str, default=None, help="JSON run config (default: built-in defaults)")
        p.add_argument("--out", type=str, required=True, help="pipeline output directory")
        p.add_argument("--seed", type=int, default=None, help="master seed override")
        p.add_argument(
            "--threads",
            type=int,
            default=None,
            help="worker thread cap (default: config value or 1; results do not depend on it)",
        )
        p.add_argument(
            "--template",
            type=str,
            default=None,
            help="template preset n53|n105|default, or a dataset path for extract",
        )
        p.add_argument(
            "--features",
            type=str,
            default=None,
            choices=["sm", "sm+fnc"],
            help="feature set: spatial maps alone or maps plus FNC",
        )
        p.add_argument(
            "--selection",
            type=str,
            default=None,
            help="selection mode: ssfs | sfs | fixed:<comma-separated indices>",
        )
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        overrides = {
            "seed": args.seed,
            "threads": args.threads,
            "template": args.template,
            "features": args.features,
            "selection_mode": args.selection,
        }
        cfg = load_run_config(args.config, overrides)
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        return _COMMANDS[args.command](cfg, out_dir)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except (ManifestError, MatrixFormatError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
