"""Command-line interface: ingest, decompose, reconstruct, pdnm, report, tree.

Settings come from built-in defaults, then an optional JSON config file
(``--config``), then explicit flags, later sources winning. Every output
carries a provenance header (tool version, config hash, seeds) and no
timestamps, so identical settings give byte-identical files.

Exit status is 0 whenever the command ran, including runs that end in a
recorded scientific failure such as ``PartitioningFailure``. Operational
errors exit with status 1 and print a JSON error record to stderr.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (
    SECTOR_CODES,
    LabelTable,
    adjusted_rand_index,
    dominance_report,
    embedding_report,
    sector_pressure,
)
from .errors import PDMError
from .panel import (
    SeriesPanel,
    clean_extremes,
    filter_missing,
    load_prices,
    load_series_panel,
    log_returns,
    normalize_rows,
    row_moments,
    save_series_panel,
)
from .pdm import (
    PdnmSpec,
    decompose,
    generate_pdnm,
    load_record,
    partition_tree,
    reconstruct,
    save_record,
)
from .spectral import GENullConfig, KMeansConfig

DEFAULTS = {
    "sims": 100,
    "missing": 0.30,
    "extreme": 0.20,
    "restarts": 20,
    "max_iter": 300,
    "zero_tol": 1e-8,
    "projection_rcond": 1e-12,
    "window": 252,
    "step": 21,
    "fraction": 0.10,
    "seed": 0,
    "ge_seed": None,
    "kmeans_seed": None,
    "noise_seed": None,
    "threads": 1,
    "pv": "",
    "depth": 2,
}
# keys that name files to write; they do not change results and stay out of the hash
_OUTPUT_KEYS = {"out"}


class CLIError(Exception):
    """Operational error raised by the command layer itself."""


# --------------------------------------------------------------------------
# configuration


def _parse_pv(text) -> tuple[int, ...]:
    if isinstance(text, (list, tuple)):
        return tuple(int(x) for x in text)
    text = str(text).strip()
    if not text:
        return ()
    try:
        pv = tuple(int(x) for x in text.split(","))
    except ValueError:
        raise CLIError(f"bad partition vector {text!r}; expected e.g. 1,1") from None
    if any(x < 1 for x in pv):
        raise CLIError(f"partition vector entries must be >= 1, got {text!r}")
    return pv


def resolve_config(args: argparse.Namespace) -> dict:
    given = {k: v for k, v in vars(args).items() if k not in ("func", "config")}
    from_file = {}
    if getattr(args, "config", None):
        try:
            from_file = json.loads(Path(args.config).read_text())
        except json.JSONDecodeError as exc:
            raise CLIError(f"{args.config}: invalid JSON config: {exc}") from None
        if not isinstance(from_file, dict):
            raise CLIError(f"{args.config}: config must be a JSON object")
        unknown = set(from_file) - set(DEFAULTS) - {"labels", "panel", "compare", "iteration"}
        if unknown:
            raise CLIError(f"{args.config}: unknown config keys {sorted(unknown)}")
    cfg = {**DEFAULTS, **from_file, **given}
    for name in ("ge_seed", "kmeans_seed", "noise_seed"):
        if cfg[name] is None:
            cfg[name] = cfg["seed"]
    cfg["pv"] = list(_parse_pv(cfg["pv"]))
    return cfg


def config_hash(cfg: dict) -> str:
    payload = {k: v for k, v in cfg.items() if k not in _OUTPUT_KEYS}
    blob = json.dumps(payload, sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def provenance(cfg: dict) -> dict:
    return {
        "tool": "pdmnet",
        "version": __version__,
        "command": cfg["command"],
        "config_hash": config_hash(cfg),
        "seeds": {k: cfg[k] for k in ("ge_seed", "kmeans_seed", "noise_seed")},
        "config": {k: v for k, v in sorted(cfg.items()) if k not in _OUTPUT_KEYS},
    }


def header_lines(cfg: dict) -> list[str]:
    seeds = " ".join(f"{k}={cfg[k]}" for k in ("ge_seed", "kmeans_seed", "noise_seed"))
    return [
        f"pdmnet {__version__}",
        f"command: {cfg['command']}",
        f"config_hash: {config_hash(cfg)}",
        f"seeds: {seeds}",
    ]


def ge_config(cfg: dict) -> GENullConfig:
    return GENullConfig(
        num_sims=int(cfg["sims"]),
        seed=int(cfg["ge_seed"]),
        zero_tolerance=float(cfg["zero_tol"]),
        workers=int(cfg["threads"]),
    )


def kmeans_config(cfg: dict) -> KMeansConfig:
    return KMeansConfig(
        seed=int(cfg["kmeans_seed"]), restarts=int(cfg["restarts"]), max_iter=int(cfg["max_iter"])
    )


# --------------------------------------------------------------------------
# output helpers


def write_csv(path, cfg, header, rows, notes=()) -> None:
    with Path(path).open("w", newline="") as fh:
        for line in [*header_lines(cfg), *notes]:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def write_json(path, cfg, body: dict) -> None:
    Path(path).write_text(json.dumps({"meta": provenance(cfg), **body}, indent=2) + "\n")


def _outdir(cfg) -> Path:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _is_normalized(panel: SeriesPanel, tol=1e-8) -> bool:
    means, sds = row_moments(panel.values)
    return bool(np.all(np.abs(means) < tol) and np.all(np.abs(sds - 1) < tol))


# --------------------------------------------------------------------------
# commands


def cmd_ingest(cfg: dict) -> int:
    prices = load_prices(cfg["input"])
    filled, report = filter_missing(prices, float(cfg["missing"]))
    returns = log_returns(filled)
    cleaned, extreme_report = clean_extremes(returns, float(cfg["extreme"]))
    report = report.merge(extreme_report)
    normalized, means, sds = normalize_rows(cleaned)

    out = _outdir(cfg)
    save_series_panel(cleaned, out / "returns.csv", header_lines(cfg))
    save_series_panel(normalized, out / "panel.csv", header_lines(cfg))
    write_csv(
        out / "normalization.csv",
        cfg,
        ["entity", "mean", "sd"],
        [[e, repr(float(m)), repr(float(s))] for e, m, s in zip(cleaned.entities, means, sds)],
    )
    write_json(out / "cleaning_report.json", cfg, report.to_dict())
    print(
        f"kept {cleaned.n_entities} entities x {cleaned.n_times} returns; "
        f"dropped {len(report.dropped_entities)}; "
        f"excised {len(report.excised_events)} extreme returns; "
        f"filled {report.fill_count} prices"
    )
    return 0


def _load_d0(cfg) -> tuple[SeriesPanel, bool]:
    panel = load_series_panel(cfg["input"])
    if _is_normalized(panel):
        return panel, False
    normalized, _, _ = normalize_rows(panel)
    return normalized, True


def cmd_decompose(cfg: dict) -> int:
    panel, renormalized = _load_d0(cfg)
    record = decompose(
        panel,
        tuple(cfg["pv"]),
        ge_config(cfg),
        kmeans_config(cfg),
        min_rcond=float(cfg["projection_rcond"]),
    )
    meta = {**provenance(cfg), "input_renormalized": renormalized}
    save_record(record, cfg["out"], meta)
    print(f"termination: {record.termination}")
    print(f"cluster counts: {record.sizes()}")
    if cfg.get("compare"):
        reference = load_record(cfg["compare"])
        if list(reference.entities) != list(record.entities):
            raise CLIError("comparison record covers different entities")
        for ours, theirs in zip(record.iterations, reference.iterations):
            ari = adjusted_rand_index(ours.partition.assignment, theirs.partition.assignment)
            print(f"iteration {ours.alpha}: ARI {ari:.6f}")
    return 0


def cmd_reconstruct(cfg: dict) -> int:
    record = load_record(cfg["input"])
    panel = reconstruct(record)
    save_series_panel(panel, cfg["out"], header_lines(cfg))
    print(f"reconstructed {panel.n_entities} x {panel.n_times} panel")
    return 0


def cmd_pdnm(cfg: dict) -> int:
    record = load_record(cfg["input"])
    panel = generate_pdnm(PdnmSpec(record, int(cfg["noise_seed"])))
    save_series_panel(panel, cfg["out"], header_lines(cfg))
    print(f"PDNM panel {panel.n_entities} x {panel.n_times} from {len(record.iterations)} iterations")
    return 0


def cmd_report(cfg: dict) -> int:
    record = load_record(cfg["input"])
    labels = LabelTable.from_csv(cfg["labels"]) if cfg.get("labels") else LabelTable()
    out = _outdir(cfg)
    fraction = float(cfg["fraction"])

    dom_rows = []
    for it in record.iterations:
        for c in dominance_report(it.partition, labels, record.entities):
            dom_rows.append(
                [it.alpha, c.cluster, c.size, c.dominant, repr(c.dominant_fraction)]
                + [repr(c.sector_fractions[s]) for s in SECTOR_CODES]
                + [repr(c.nasdaq_fraction())]
            )
    write_csv(
        out / "dominance.csv",
        cfg,
        ["iteration", "cluster", "size", "dominant", "dominant_fraction"]
        + [f"frac_{s}" for s in SECTOR_CODES]
        + ["frac_NASDAQ"],
        dom_rows,
    )

    emb_rows, edge_rows = [], []
    for it in record.iterations:
        if it.K < 2:
            continue
        rep = embedding_report(it.characteristic, it.partition, labels, record.entities, fraction)
        for k in range(it.K):
            emb_rows.append(
                [it.alpha, k, repr(float(rep.coords[k, 0])), repr(float(rep.coords[k, 1])),
                 int(rep.sizes[k]), rep.dominant[k]]
            )
        edge_rows += [[it.alpha, i, j, repr(d)] for i, j, d in rep.edges]
    write_csv(out / "embedding.csv", cfg, ["iteration", "cluster", "x", "y", "size", "dominant"], emb_rows)
    write_csv(out / "edges.csv", cfg, ["iteration", "source", "target", "distance"], edge_rows)

    if cfg.get("panel"):
        panel = load_series_panel(cfg["panel"])
        ps = sector_pressure(panel, labels, int(cfg["window"]), int(cfg["step"]))
        rows = [
            [a, b] + [repr(float(ps.values[s][w])) for s in ps.sectors]
            for w, (a, b) in enumerate(ps.windows)
        ]
        write_csv(
            out / "pressure.csv",
            cfg,
            ["window_start", "window_end"] + ps.sectors,
            rows,
            notes=[f"window: {ps.window_length} step: {ps.step}", f"normalization: {ps.normalization}"],
        )

    summary = {
        "partition_vector": list(record.partition_vector),
        "termination": record.termination,
        "diagnostics": record.diagnostics,
        "cluster_counts": record.sizes(),
        "level_sizes": [
            it.level_stack.sizes() if it.level_stack is not None else None for it in record.iterations
        ],
    }
    write_json(out / "summary.json", cfg, summary)
    print(f"report written to {out}")
    return 0


def cmd_tree(cfg: dict) -> int:
    panel, _ = _load_d0(cfg)
    root = partition_tree(panel, int(cfg["depth"]), ge_config(cfg), kmeans_config(cfg))
    write_json(cfg["out"], cfg, {"tree": root.to_dict()})
    for node in root.walk():
        pv = ",".join(map(str, node.partition_vector)) or "-"
        print(f"<{pv}> sizes {node.sizes} {node.termination}")
    return 0


# --------------------------------------------------------------------------
# parser


def _common(p: argparse.ArgumentParser, decomposes=False) -> None:
    S = argparse.SUPPRESS
    p.add_argument("--config", help="JSON file of settings; explicit flags override it")
    p.add_argument("--seed", type=int, default=S, help="master seed for every random stream")
    if decomposes:
        p.add_argument("--sims", type=int, default=S, help="GE null simulations (default 100)")
        p.add_argument("--ge-seed", type=int, default=S)
        p.add_argument("--kmeans-seed", type=int, default=S)
        p.add_argument("--restarts", type=int, default=S, help="k-means restarts (default 20)")
        p.add_argument("--max-iter", type=int, default=S)
        p.add_argument("--zero-tol", type=float, default=S, help="relative zero-eigenvalue cutoff")
        p.add_argument("--projection-rcond", type=float, default=S,
                       help="reciprocal condition number below which a scrub fails")
        p.add_argument("--threads", type=int, default=S, help="worker cap for GE simulations")


def build_parser() -> argparse.ArgumentParser:
    S = argparse.SUPPRESS
    parser = argparse.ArgumentParser(prog="pdmnet", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"pdmnet {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="clean a wide price CSV into a normalized return panel")
    p.add_argument("input", help="CSV: date column, one price column per entity")
    p.add_argument("-o", "--out", required=True, help="output directory")
    p.add_argument("--missing", type=float, default=S, help="max missing fraction (default 0.30)")
    p.add_argument("--extreme", type=float, default=S, help="extreme return cutoff (default 0.20)")
    _common(p)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("decompose", help="run the partition decoupling method")
    p.add_argument("input", help="series panel CSV (normalized if not already)")
    p.add_argument("-o", "--out", required=True, help="record JSON file")
    p.add_argument("--pv", default=S, help="partition vector, e.g. 1,1 (default empty)")
    p.add_argument("--compare", default=S, help="record to compare partitions with (prints ARI)")
    _common(p, decomposes=True)
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("reconstruct", help="invert a record back to its input panel")
    p.add_argument("input", help="record JSON")
    p.add_argument("-o", "--out", required=True, help="panel CSV")
    _common(p)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("pdnm", help="synthesize a partition decoupled null model panel")
    p.add_argument("input", help="record JSON")
    p.add_argument("-o", "--out", required=True, help="panel CSV")
    p.add_argument("--noise-seed", type=int, default=S)
    _common(p)
    p.set_defaults(func=cmd_pdnm)

    p = sub.add_parser("report", help="dominance, embedding and sector-pressure exports")
    p.add_argument("input", help="record JSON")
    p.add_argument("-o", "--out", required=True, help="output directory")
    p.add_argument("--labels", default=S, help="CSV ticker,sector,exchange")
    p.add_argument("--panel", default=S, help="return panel for sector pressure")
    p.add_argument("--window", type=int, default=S, help="window length (default 252)")
    p.add_argument("--step", type=int, default=S, help="window step (default 21)")
    p.add_argument("--fraction", type=float, default=S, help="edge fraction (default 0.10)")
    _common(p)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("tree", help="enumerate partition vectors up to a depth")
    p.add_argument("input", help="series panel CSV")
    p.add_argument("-o", "--out", required=True, help="tree JSON file")
    p.add_argument("--depth", type=int, default=S, help="maximum iterations (default 2)")
    _common(p, decomposes=True)
    p.set_defaults(func=cmd_tree)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    command = args.command
    try:
        cfg = resolve_config(args)
        return args.func(cfg)
    except (PDMError, CLIError, OSError, ValueError, ArithmeticError) as exc:
        record = {"error": type(exc).__name__, "command": command, "message": str(exc)}
        for attr in ("iteration", "requested", "available", "entity"):
            if hasattr(exc, attr):
                record[attr] = getattr(exc, attr)
        print(json.dumps(record, default=str), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
