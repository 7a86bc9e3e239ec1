import csv
import hashlib
import io
import os
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence
import logging

import numpy as np
import orjson

from src.models.handover_model import HandoverEvent, HandoverType
from src.models.scenario_model import HeadPoint, RunManifest
from src.utils.errors import IoError

logger = logging.getLogger(__name__)

EVENT_COLUMNS = [
    "replica", "s", "h", "q", "tau_p", "tau_n",
    "prev_t", "prev_h", "next_t", "next_h", "boundary", "old_label",
]


def format_value(value: Any) -> str:
    """17 significant digits for floats, lowercase booleans"""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.17g}"
    return str(value)


class ResultStore:
    """Flat-file output directory; remembers the sha256 of every file it writes"""

    def __init__(self, out_dir: Optional[str] = None):
        self.out_dir = Path(out_dir or os.getenv("HANDOVER_LAB_OUTPUT_DIR", "results"))
        self.hashes: Dict[str, str] = {}
        try:
            self.out_dir.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            logger.error(f"Failed to create output directory {self.out_dir}: {str(e)}")
            raise IoError(f"cannot create {self.out_dir}: {e}") from e

    def _write(self, name: str, payload: bytes) -> Path:
        path = self.out_dir / name
        try:
            path.write_bytes(payload)
        except OSError as e:
            logger.error(f"Failed to write {path}: {str(e)}")
            raise IoError(f"cannot write {path}: {e}") from e
        self.hashes[name] = hashlib.sha256(payload).hexdigest()
        logger.info(f"Wrote {path} ({len(payload)} bytes)")
        return path

    def write_csv(self, name: str, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_value(v) for v in row])
        return self._write(name, buffer.getvalue().encode("utf-8"))

    def write_json(self, name: str, data: Any) -> Path:
        payload = orjson.dumps(
            data, option=orjson.OPT_INDENT_2 | orjson.OPT_SERIALIZE_NUMPY | orjson.OPT_NON_STR_KEYS
        )
        return self._write(name, payload)

    def read_csv(self, name: str) -> List[Dict[str, str]]:
        path = self.out_dir / name
        try:
            with path.open(newline="", encoding="utf-8") as fh:
                return list(csv.DictReader(fh))
        except OSError as e:
            logger.error(f"Failed to read {path}: {str(e)}")
            raise IoError(f"cannot read {path}: {e}") from e

    def write_events(self, name: str, events: Iterable[HandoverEvent]) -> Path:
        return self.write_csv(name, EVENT_COLUMNS, (event_row(e) for e in events))

    def read_events(self, name: str) -> List[HandoverEvent]:
        return [row_to_event(row) for row in self.read_csv(name)]

    def write_manifest(self, manifest: RunManifest) -> Path:
        """manifest.json listing every file written so far with its sha256"""
        manifest.outputs = dict(self.hashes)
        return self.write_json("manifest.json", manifest.model_dump(mode="json", by_alias=True))


def event_row(e: HandoverEvent) -> List[Any]:
    return [
        e.replica, e.s, e.h, e.type.q, e.type.tau_p, e.type.tau_n,
        e.prev_head.t, e.prev_head.h, e.next_head.t, e.next_head.h, e.boundary, e.type.old_label,
    ]


def row_to_event(row: Dict[str, str]) -> HandoverEvent:
    tau_p, tau_n = int(row["tau_p"]), int(row["tau_n"])
    return HandoverEvent(
        s=float(row["s"]),
        h=float(row["h"]),
        prev_head=HeadPoint(t=float(row["prev_t"]), h=float(row["prev_h"]), cls=tau_p),
        next_head=HeadPoint(t=float(row["next_t"]), h=float(row["next_h"]), cls=tau_n),
        type=HandoverType(q=int(row["q"]), tau_p=tau_p, tau_n=tau_n),
        boundary=row["boundary"] == "true",
        replica=int(row["replica"]),
    )
