"""Per-epoch metric records stored as JSON lines.

Reals are rounded to 9 significant digits before they are stored, so a record
read back from disk compares equal to the record that was written.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import IO, Optional, Union

SIG_DIGITS = 9


def block_label(block_id) -> str:
    return f"s{block_id[0]}b{block_id[1]}"


def parse_block_label(label: str) -> tuple[int, int]:
    s, b = label[1:].split("b")
    return int(s), int(b)


def round_real(x):
    if x is None:
        return None
    x = float(x)
    if not math.isfinite(x):
        return None
    return float(f"{x:.{SIG_DIGITS}g}")


def _round_tree(v):
    if isinstance(v, dict):
        return {k: _round_tree(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_round_tree(x) for x in v]
    if isinstance(v, bool) or isinstance(v, int) or isinstance(v, str):
        return v
    return round_real(v)


@dataclass
class MetricRecord:
    epoch: int
    train_acc: float
    val_acc: Optional[float]
    l_c: float
    l_q: float
    l_r: float
    lr: float
    # {block label: {action kind: mean Q}} for every enabled block
    q: dict = field(default_factory=dict)
    # {block label: mean R or None when the block was not bypassed this epoch}
    r: dict = field(default_factory=dict)
    seconds: Optional[float] = None

    def rounded(self) -> "MetricRecord":
        d = _round_tree(asdict(self))
        d["epoch"] = self.epoch
        return MetricRecord(**d)

    def to_json(self, include_timing: bool = False) -> str:
        d = asdict(self.rounded())
        if not include_timing:
            d.pop("seconds")
        return json.dumps(d, sort_keys=True, allow_nan=False)

    @classmethod
    def from_json(cls, line: str) -> "MetricRecord":
        return cls(**json.loads(line))


def log_metrics(record: MetricRecord, sink: Union[IO[str], str, Path],
                include_timing: bool = False) -> None:
    """Append one record and flush."""
    line = record.to_json(include_timing) + "\n"
    if isinstance(sink, (str, Path)):
        try:
            with open(sink, "a", encoding="utf-8") as f:
                f.write(line)
        except OSError as exc:
            raise OSError(f"cannot write metrics to {sink}: {exc}") from exc
        return
    sink.write(line)
    sink.flush()


def read_metrics(path: Union[str, Path]) -> list[MetricRecord]:
    path = Path(path)
    if not path.exists():
        return []
    rows = []
    for line in path.read_text(encoding="utf-8").splitlines():
        if line.strip():
            rows.append(MetricRecord.from_json(line))
    return rows
