"""
Report generation for the lattice workbench.
Writes training curves (CSV), evaluation and factorization reports (JSON), console tables and
machine-readable progress records.
"""

import csv
import json
import os
import sys

CURVE_COLUMNS = [
    "epoch",
    "train_loss",
    "test_mean_logdefect",
    "test_std_logdefect",
    "lll_mean_logdefect",
    "lll_std_logdefect",
]


def _ensure_parent(path):
    directory = os.path.dirname(os.path.abspath(path))
    if not os.path.exists(directory):
        os.makedirs(directory)


def _format_value(value):
    # repr keeps every float bit; missing periodic evaluations stay empty
    if value is None:
        return ""
    return repr(float(value)) if isinstance(value, float) else str(value)


def write_curve_csv(path, curve):
    """Write one row per epoch with the CURVE_COLUMNS header"""
    _ensure_parent(path)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(CURVE_COLUMNS)
        for row in curve:
            writer.writerow([_format_value(row.get(column)) for column in CURVE_COLUMNS])


def _parse_cell(key, value):
    if value in ("", None):
        return None
    return int(value) if key == "epoch" else float(value)


def read_curve_csv(path):
    """Rows of a curve CSV; empty cells come back as None"""
    with open(path, "r", encoding="utf-8", newline="") as f:
        return [{key: _parse_cell(key, value) for key, value in row.items()} for row in csv.DictReader(f)]


def write_worst_p_curve(path, curve, p):
    """
    Write the worst-p statistics of every evaluated epoch as JSON lines.

    Each line holds the epoch, p and, per selecting method, the subset size and the mean/std of
    every method on that subset. Epochs without an evaluation are skipped.
    """
    _ensure_parent(path)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for row in curve:
            if "worst_p" not in row:
                continue
            f.write(json.dumps({"epoch": row["epoch"], "p": p, "selected_by": row["worst_p"]}) + "\n")


def write_json_report(path, report):
    _ensure_parent(path)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(report, f, indent=2)
        f.write("\n")


def emit_progress(event, stream=None, **fields):
    """Write a progress record as one JSON line on stderr"""
    stream = stream if stream is not None else sys.stderr
    record = {"event": event}
    record.update(fields)
    stream.write(json.dumps(record) + "\n")
    stream.flush()


def print_method_summary(summary, count, n, k):
    """Console table of mean/std log-defect per method"""
    print(f"\nEvaluation on {count} test bases (n={n}, k={k})")
    print("===========================================================")
    print(f"{'Method':<12}{'Mean log-defect':<20}{'Std':<16}")
    print("-----------------------------------------------------------")
    for method, stats in summary.items():
        print(f"{method:<12}{stats['mean']:<20.6f}{stats['std']:<16.6f}")


def print_worst_p_summary(worst, p):
    """Console table comparing both methods on each method's worst subset"""
    print(f"\nWorst {p:.0%} subsets")
    print("===========================================================")
    print(f"{'Selected by':<14}{'Size':<8}{'Policy mean':<16}{'LLL mean':<16}")
    print("-----------------------------------------------------------")
    for selector, subset in worst.items():
        stats = subset["summary"]
        print(f"{selector:<14}{subset['size']:<8}{stats['policy']['mean']:<16.6f}{stats['lll']['mean']:<16.6f}")


def print_worst_matrices(values, indices, method, limit=10):
    """Ladder-style listing of the worst matrices for one method"""
    print(f"\nTop {min(limit, len(indices))} worst matrices for {method}:")
    print("===========================================================")
    print(f"{'Rank':<6}{'Index':<8}{'Log-defect':<14}")
    print("-----------------------------------------------------------")
    for rank, index in enumerate(indices[:limit], start=1):
        print(f"{rank:<6}{index:<8}{values[index]:<14.6f}")


def print_defect_table(rows):
    """Per-matrix defect listing used by the defect and lll commands"""
    print("===========================================================")
    print(f"{'Line':<8}{'Defect':<16}{'Log-defect':<16}")
    print("-----------------------------------------------------------")
    for row in rows:
        print(f"{row['line']:<8}{row['defect']:<16.6f}{row['log_defect']:<16.6f}")
