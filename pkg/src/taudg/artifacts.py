"""On-disk run artifacts.

Every run directory holds a residual history CSV, per-stage truncation-error
maps and order fields (adaptive modes), a plain-text solution dump and a
summary JSON.  All files are stamped with the configuration digest and are
written atomically (temp file in the target directory, then rename), so a
killed run never leaves a half-written artifact behind.

The summary JSON deliberately excludes wall-clock times: rerunning the same
configuration reproduces it byte for byte.  Timings live in the residual
history, where they are informative only.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .adaptation import order_field_csv
from .errors import ConfigError
from .fields import NodalField, OrderField

SOLUTION_FORMAT = 1
HISTORY_COLUMNS = ("iteration", "level", "phase", "sweeps", "rnorm",
                   "work_units", "wall_time")


def atomic_write(path, text: str) -> Path:
    """Write ``text`` to ``path`` via a temp file and an atomic rename."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def residual_history_csv(history, digest: str) -> str:
    lines = [f"# config {digest}", ",".join(HISTORY_COLUMNS)]
    for row in history:
        lines.append(
            f"{row['cycle']},{row['level']},{row['phase']},{row['sweeps']},"
            f"{row['rnorm']:.6e},{row['work_units']:.6f},{row['wall']:.4f}"
        )
    return "\n".join(lines) + "\n"


def solution_text(Q: NodalField, digest: str, case: str) -> str:
    """Self-describing nodal dump: orders plus values for every element."""
    nel = Q.field.num_elements
    lines = [
        f"taudg solution {SOLUTION_FORMAT}",
        f"config {digest}",
        f"case {case}",
        f"elements {nel}",
    ]
    for e in range(nel):
        n1, n2 = (int(v) for v in Q.field.orders[e])
        lines.append(f"element {e} orders {n1} {n2}")
        block = Q.element(e)
        for i in range(n1 + 1):
            lines.append(" ".join(repr(float(v)) for v in block[i]))
    return "\n".join(lines) + "\n"


def read_solution(path) -> tuple[NodalField, str]:
    """Rebuild a nodal field from :func:`solution_text` output."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].startswith("taudg solution "):
        raise ConfigError(f"not a solution file: {path}")
    version = int(lines[0].split()[2])
    if version != SOLUTION_FORMAT:
        raise ConfigError(f"unsupported solution format {version}")
    digest = lines[1].split()[1]
    nel = int(lines[3].split()[1])
    pos = 4
    orders = np.zeros((nel, 2), dtype=int)
    rows: list[list[np.ndarray]] = []
    for e in range(nel):
        head = lines[pos].split()
        if head[:2] != ["element", str(e)]:
            raise ConfigError(f"solution file out of order at element {e}")
        n1, n2 = int(head[3]), int(head[4])
        orders[e] = (n1, n2)
        pos += 1
        block = [np.array([float(t) for t in lines[pos + i].split()])
                 for i in range(n1 + 1)]
        pos += n1 + 1
        rows.append(block)
    field = OrderField(orders)
    Q = NodalField.zeros(field)
    for e in range(nel):
        Q.set_element(e, np.vstack(rows[e]))
    return Q, digest


def _json(payload: dict) -> str:
    return json.dumps(payload, indent=1, sort_keys=True) + "\n"


@dataclass(frozen=True)
class RunArtifacts:
    """What a completed run left on disk."""

    out_dir: Path
    digest: str
    summary: dict
    files: tuple[str, ...]


def write_run(out_dir, cfg, *, Q, history, work_units, residual_norm,
              error_l2=None, maps=(), reports=()) -> RunArtifacts:
    """Persist one finished run; returns the written file set and summary."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    digest = cfg.digest
    files: list[str] = []

    def emit(name, text):
        atomic_write(out_dir / name, text)
        files.append(name)

    emit("config.txt", cfg.canonical() + f"\nconfig={digest}\n")
    emit("residual_history.csv", residual_history_csv(history, digest))
    emit("solution.txt", solution_text(Q, digest, cfg.case))
    emit("orders_final.csv", f"# config {digest}\n" + order_field_csv(Q.field))
    for k, tmap in enumerate(maps, start=1):
        emit(f"tau_map_stage{k}.json",
             _json({"config": digest, **tmap.to_dict()}))
    for report in reports:
        emit(f"adaptation_stage{report.stage}.json",
             _json({"config": digest, **report.to_dict()}))
        stage_orders = np.array([d.new_orders for d in report.decisions])
        emit(f"orders_stage{report.stage}.csv",
             f"# config {digest}\n" + order_field_csv(OrderField(stage_orders)))

    dofs = Q.field.dofs()
    summary = {
        "config": digest,
        "name": cfg.name,
        "case": cfg.case,
        "mode": cfg.mode,
        "elements": Q.field.num_elements,
        "dofs": int(dofs),
        "dofs_initial": int(reports[0].dofs_before) if reports else int(dofs),
        "orders": [[int(a), int(b)] for a, b in Q.field.orders],
        "work_units": float(work_units),
        "iterations": len(history),
        "residual_norm": float(residual_norm),
        "stages": len(reports),
        "histograms": [r.histogram() for r in reports],
    }
    if error_l2 is not None:
        summary["error_l2"] = float(error_l2)
    emit("summary.json", _json(summary))
    return RunArtifacts(out_dir, digest, summary, tuple(files))


def write_failure(out_dir, cfg, exc, history=()) -> Path:
    """Failure record plus whatever history accumulated before the error."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if history:
        atomic_write(out_dir / "residual_history.csv",
                     residual_history_csv(history, cfg.digest))
    payload = {
        "config": cfg.digest,
        "name": cfg.name,
        "case": cfg.case,
        "mode": cfg.mode,
        "error_type": type(exc).__name__,
        "message": str(exc),
    }
    return atomic_write(out_dir / "failure.json", _json(payload))


def load_summary(run_dir) -> dict:
    path = Path(run_dir) / "summary.json"
    if not path.is_file():
        raise ConfigError(f"no summary.json under {run_dir}")
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def last_wall_time(run_dir):
    """Final wall-time stamp from the residual history, if one exists."""
    path = Path(run_dir) / "residual_history.csv"
    if not path.is_file():
        return None
    wall = None
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.startswith("#") or line.startswith("iteration"):
                continue
            parts = line.strip().split(",")
            if len(parts) == len(HISTORY_COLUMNS):
                wall = float(parts[-1])
    return wall


def comparison_table(rows, fmt: str = "markdown") -> str:
    """Render run summaries side by side; speed-up is work relative to row 1."""
    header = ("run", "mode", "work units", "wall time [s]", "DOF",
              "L2 error", "speed-up")
    cells = []
    for row in rows:
        wall = row.get("wall_time")
        err = row.get("error_l2")
        cells.append((
            row["name"],
            row["mode"],
            f"{row['work_units']:.4g}",
            "-" if wall is None else f"{wall:.2f}",
            str(row["dofs"]),
            "-" if err is None else f"{err:.4g}",
            f"{row['speedup']:.2f}",
        ))
    if fmt == "csv":
        head = ",".join(h.replace(" ", "_").replace("[s]", "s") for h in header)
        return "\n".join([head] + [",".join(c) for c in cells]) + "\n"
    if fmt == "markdown":
        lines = ["| " + " | ".join(header) + " |",
                 "|" + "|".join(["---"] * len(header)) + "|"]
        lines += ["| " + " | ".join(c) + " |" for c in cells]
        return "\n".join(lines) + "\n"
    raise ConfigError(f"unknown table format {fmt!r}")
