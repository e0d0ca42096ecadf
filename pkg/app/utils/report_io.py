# app/utils/report_io.py

import csv
import json
import os
from typing import Dict, List, Sequence

from app.core.logger import get_logger
from app.models.sim_schema import LEDGER_CATEGORIES, SimReport

logger = get_logger("report_io")

INTERVAL_COLUMNS = [
    "interval", "N", "D", "P", "throughput", "commits", "migration_kind",
    "preempted", "allocated", "migration_seconds", "rolled_back_samples",
] + list(LEDGER_CATEGORIES)


def report_stem(report: SimReport) -> str:
    return f"{report.trace_name}__{report.policy}__seed{report.seed}"


def write_rows_csv(rows: Sequence[Dict], path: str, columns: List[str]) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=columns, extrasaction="ignore", lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def write_report(report: SimReport, out_dir: str) -> Dict[str, str]:
    """SimReport as JSON plus its per-interval log as CSV; returns both paths."""
    os.makedirs(out_dir, exist_ok=True)
    stem = report_stem(report)
    json_path = os.path.join(out_dir, f"{stem}.json")
    csv_path = os.path.join(out_dir, f"{stem}.csv")
    with open(json_path, "w", encoding="utf-8") as f:
        f.write(report.model_dump_json(indent=2))
        f.write("\n")
    write_rows_csv([log.model_dump() for log in report.intervals], csv_path, INTERVAL_COLUMNS)
    logger.info(f"Wrote {json_path} and {csv_path}")
    return {"json": json_path, "csv": csv_path}


def read_report(path: str) -> SimReport:
    with open(path, "r", encoding="utf-8") as f:
        return SimReport.model_validate(json.load(f))
