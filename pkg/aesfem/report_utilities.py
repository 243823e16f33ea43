import logging
import os.path
from typing import Iterable

import pandas as pd

from aesfem.harness import ConvergenceStudy, RunReport, SweepPoint

REPORT_COLUMNS = [
    "method", "dim", "pde", "solution", "nodes", "elements", "min_angle_deg", "cot_min_angle",
    "l2_error", "linf_error", "iterations", "condest", "t_init_s", "t_assembly_s", "t_precond_s",
    "t_solve_s", "t_total_s",
]
FORMATS = ("csv", "json")


def reports_frame(reports: Iterable[RunReport]) -> pd.DataFrame:
    return pd.DataFrame([r.to_row() for r in reports], columns=REPORT_COLUMNS)


def _ensure_directory(path: str):
    directory = os.path.dirname(path)
    if directory:
        try:
            os.makedirs(name=directory, exist_ok=True)
        except OSError as e:
            raise ValueError(f"Unable to create report directory at {directory}, error: {e}")


def append_frame(path: str, frame: pd.DataFrame, format: str = "csv"):
    """Append rows to a report file, writing the header only when the file is new.

    Missing values (an absent condition estimate) are written as empty CSV
    fields, null in JSON. JSON reports hold one record per line.
    """
    if format not in FORMATS:
        raise ValueError(f"Unsupported report format {format}, expected one of {FORMATS}")
    _ensure_directory(path)
    exists = os.path.exists(path) and os.path.getsize(path) > 0
    if format == "csv":
        frame.to_csv(path, mode="a", header=not exists, index=False, na_rep="")
    else:
        with open(path, "a", encoding="UTF-8") as f:
            records = frame.to_json(orient="records", lines=True).rstrip("\n")
            if records:
                f.write(records + "\n")
    logging.info(f"Wrote {len(frame)} report rows to {path}")


def append_reports(path: str, reports: Iterable[RunReport], format: str = "csv"):
    append_frame(path, reports_frame(reports), format)


def convergence_frame(study: ConvergenceStudy) -> pd.DataFrame:
    """Per-level rows with the study's rates repeated in ``l2_rate`` and ``linf_rate``."""
    frame = reports_frame(study.reports)
    frame["level"] = range(len(frame))
    frame["l2_rate"] = study.l2_rate
    frame["linf_rate"] = study.linf_rate
    return frame


def sweep_frame(points: Iterable[SweepPoint]) -> pd.DataFrame:
    rows = []
    for point in points:
        for report in point.reports.values():
            row = report.to_row()
            row["fraction"] = point.fraction
            rows.append(row)
    return pd.DataFrame(rows, columns=REPORT_COLUMNS + ["fraction"])
