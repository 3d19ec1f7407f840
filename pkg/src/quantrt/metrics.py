"""Traffic and intersection counters plus CSV reporting.

Every fetch or store the traversal engines perform is charged here at its
full size; there is no cache model.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, fields

BYTE_CATEGORIES = ("nodeBounds", "triangles", "rayLoads", "rayStores", "srStack", "rsStack", "rayLists")
COUNT_CATEGORIES = ("boxTests", "triTests")
CATEGORIES = BYTE_CATEGORIES + COUNT_CATEGORIES

# bytes of the records the engines move around
RAY_RECORD_BYTES = 32
HIT_RECORD_BYTES = 16
SR_ENTRY_BYTES = 4
RS_ENTRY_BYTES = 12
LIST_ELEM_BYTES = 4

CSV_COLUMNS = (
    ["label"]
    + list(BYTE_CATEGORIES)
    + ["total", "rayTrafficPct"]
    + list(COUNT_CATEGORIES)
    + ["rays", "nodeBytes", "triBytes", "rayBytes", "srEntryBytes", "rsEntryBytes", "listElemBytes"]
)


@dataclass
class TrafficStats:
    nodeBounds: int = 0
    triangles: int = 0
    rayLoads: int = 0
    rayStores: int = 0
    srStack: int = 0
    rsStack: int = 0
    rayLists: int = 0
    boxTests: int = 0
    triTests: int = 0
    rays: int = 0
    per_bounce: list = field(default_factory=list)

    def record(self, category: str, amount: int) -> None:
        if category not in CATEGORIES and category != "rays":
            raise KeyError(f"unknown traffic category {category!r}")
        amount = int(amount)
        if amount < 0:
            raise ValueError("counters only grow")
        setattr(self, category, getattr(self, category) + amount)

    @property
    def total(self) -> int:
        return sum(getattr(self, c) for c in BYTE_CATEGORIES)

    @property
    def ray_traffic(self) -> int:
        return self.rayLoads + self.rayStores + self.rayLists

    def ray_traffic_pct(self) -> float:
        t = self.total
        return 100.0 * self.ray_traffic / t if t else 0.0

    def merge(self, other: "TrafficStats") -> "TrafficStats":
        out = TrafficStats()
        for f in fields(self):
            if f.name == "per_bounce":
                continue
            setattr(out, f.name, getattr(self, f.name) + getattr(other, f.name))
        out.per_bounce = [a.merge(b) for a, b in zip(self.per_bounce, other.per_bounce)]
        longer = self.per_bounce if len(self.per_bounce) > len(other.per_bounce) else other.per_bounce
        out.per_bounce += [b.copy() for b in longer[len(out.per_bounce) :]]
        return out

    __add__ = merge

    def add_bounce(self, s: "TrafficStats") -> None:
        """Fold one bounce's counters into the totals and keep them as a bounce row."""
        for c in CATEGORIES + ("rays",):
            setattr(self, c, getattr(self, c) + getattr(s, c))
        self.per_bounce.append(s.copy())

    def copy(self) -> "TrafficStats":
        out = TrafficStats(**{c: getattr(self, c) for c in CATEGORIES + ("rays",)})
        out.per_bounce = [b.copy() for b in self.per_bounce]
        return out

    def as_dict(self) -> dict:
        return {c: getattr(self, c) for c in CATEGORIES + ("rays",)}

    def __eq__(self, other):
        if not isinstance(other, TrafficStats):
            return NotImplemented
        return self.as_dict() == other.as_dict() and self.per_bounce == other.per_bounce


def report_csv(rows) -> str:
    """CSV text for ``rows``: an iterable of (label, TrafficStats, sizes dict).

    ``sizes`` holds ``nodeBytes`` and ``triBytes`` for the configuration.  When
    any row carries per-bounce stats, ``bounce{i}Total`` columns are appended.
    """
    rows = list(rows)
    if not rows:
        raise ValueError("need at least one configuration")
    nb = max(len(s.per_bounce) for _, s, _ in rows)
    cols = CSV_COLUMNS + [f"bounce{i}Total" for i in range(nb)]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for label, s, sizes in rows:
        rec = [label] + [getattr(s, c) for c in BYTE_CATEGORIES]
        rec += [s.total, f"{s.ray_traffic_pct():.4f}"]
        rec += [getattr(s, c) for c in COUNT_CATEGORIES]
        rec += [
            s.rays,
            sizes.get("nodeBytes", ""),
            sizes.get("triBytes", ""),
            RAY_RECORD_BYTES,
            SR_ENTRY_BYTES,
            RS_ENTRY_BYTES,
            LIST_ELEM_BYTES,
        ]
        rec += [s.per_bounce[i].total if i < len(s.per_bounce) else "" for i in range(nb)]
        w.writerow(rec)
    return buf.getvalue()
