"""Run persistence: per-iteration record stream plus the final report.

A run directory holds three documents: the experiment configuration
(config.json), one JSON record per line (records.jsonl), and the report
(report.json).  Records are append-only and carry everything needed to
replay the controller's estimate trajectory offline.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

CONFIG_FILE = "config.json"
RECORDS_FILE = "records.jsonl"
REPORT_FILE = "report.json"


class RecordFormatError(ValueError):
    """Corrupt record stream; message carries the offending line number."""


@dataclass(frozen=True)
class RunRecord:
    step: int
    config: str          # textual pooling config, e.g. "[4,3,3]"
    model: int
    accuracy: float
    tau: float | None    # controller temperature (balanced runs only)
    loss: float | None   # training loss (cnn backend only)
    elapsed: float       # wall-clock seconds since run start

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json_dict(cls, doc: dict) -> RunRecord:
        return cls(
            step=int(doc["step"]),
            config=doc["config"],
            model=int(doc["model"]),
            accuracy=float(doc["accuracy"]),
            tau=None if doc["tau"] is None else float(doc["tau"]),
            loss=None if doc["loss"] is None else float(doc["loss"]),
            elapsed=float(doc["elapsed"]),
        )

    @classmethod
    def from_json(cls, text: str) -> RunRecord:
        return cls.from_json_dict(json.loads(text))

    def to_json_dict(self) -> dict:
        return asdict(self)


def dump_records(records: list[RunRecord], path: str | Path) -> None:
    with open(path, "w") as fh:
        for record in records:
            fh.write(record.to_json() + "\n")


def load_records(path: str | Path) -> list[RunRecord]:
    records = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(RunRecord.from_json(line))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise RecordFormatError(f"{path}: bad record on line {lineno}: {exc}") from exc
    return records


def report_to_text(report: dict) -> str:
    return json.dumps(report, sort_keys=True, indent=2) + "\n"


def persist_results(config_doc: dict, records: list[RunRecord], report: dict, outdir: str | Path) -> Path:
    """Write config/records/report into outdir; returns the directory path."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    (out / CONFIG_FILE).write_text(json.dumps(config_doc, sort_keys=True, indent=2) + "\n")
    dump_records(records, out / RECORDS_FILE)
    (out / REPORT_FILE).write_text(report_to_text(report))
    return out


def load_results(outdir: str | Path) -> tuple[dict, list[RunRecord], dict]:
    out = Path(outdir)
    config_doc = json.loads((out / CONFIG_FILE).read_text())
    records = load_records(out / RECORDS_FILE)
    report = json.loads((out / REPORT_FILE).read_text())
    return config_doc, records, report
