"""Independent correctness oracles for channel runs.

These re-derive the expected notifications by brute force over the ingest
log, sharing no evaluation code with the engine. The area oracle is fully
window-independent: every matching record must reach every matching
subscription exactly once over the whole run, which catches window gaps and
overlaps directly. The nearby-join oracle recomputes the join from scratch
but takes the recorded per-node window chains as input; chain contiguity is
checked separately.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

from ..values import Point


@dataclass
class OracleReport:
    missed: List = field(default_factory=list)
    duplicated: List = field(default_factory=list)
    matched: int = 0
    superseded: int = 0  # upsert versions replaced within one window

    def clean(self) -> bool:
        return not self.missed and not self.duplicated

    def to_json(self) -> dict:
        return {"missed": sorted(map(str, self.missed)),
                "duplicated": sorted(map(str, self.duplicated)),
                "matched": self.matched, "superseded": self.superseded}

    def merge(self, other: "OracleReport") -> "OracleReport":
        self.missed.extend(other.missed)
        self.duplicated.extend(other.duplicated)
        self.matched += other.matched
        self.superseded += other.superseded
        return self


def _successful(executions):
    return [e for e in executions if not e.failed]


def _last_curr_per_node(executions) -> Dict[int, object]:
    last: Dict[int, object] = {}
    for rec in _successful(executions):
        for node_id, (_prev, curr) in rec.node_windows.items():
            last[node_id] = curr
    return last


def window_chain_gaps(executions) -> List[str]:
    """Per node, consecutive windows must chain: prev(k+1) == curr(k)."""
    problems: List[str] = []
    last_curr: Dict[int, object] = {}
    for rec in _successful(executions):
        for node_id, (prev, curr) in sorted(rec.node_windows.items()):
            if node_id in last_curr and prev != last_curr[node_id]:
                problems.append(
                    f"execution {rec.index} node {node_id}: window starts at "
                    f"{prev}, previous ended at {last_curr[node_id]}")
            if not prev < curr:
                problems.append(
                    f"execution {rec.index} node {node_id}: empty or inverted window")
            last_curr[node_id] = curr
    return problems


def _extract_key(result, key_path: Sequence[str]):
    value = result
    for part in key_path:
        if not isinstance(value, dict):
            return None
        value = value.get(part)
    return value


def _notified_counts(executions, key_path) -> Dict[Tuple[str, object], int]:
    counts: Dict[Tuple[str, object], int] = {}
    for rec in _successful(executions):
        for n in rec.notifications:
            pair = (n.subscription_id, _extract_key(n.result, key_path))
            counts[pair] = counts.get(pair, 0) + 1
    return counts


def area_channel_oracle(entries, executions, subscriptions, *,
                        dataset: str, key_path: Sequence[str] = ("t", "tid"),
                        key_field: str = "tid", area_field: str = "area_code",
                        flag_field: Optional[str] = "hateful_flag",
                        param_index: int = 0) -> OracleReport:
    """Every matching record reaches every matching subscription exactly once.

    A record matches a subscription when its area field equals the
    subscription's parameter (and its flag field is true, when configured).
    Records stamped after a node's last execution sample are out of scope.
    """
    report = OracleReport()
    cutoff = _last_curr_per_node(executions)
    expected = set()
    for entry in entries:
        if entry.dataset != dataset:
            continue
        node_cut = cutoff.get(entry.node_id)
        if node_cut is None or not entry.ts < node_cut:
            continue
        if flag_field is not None and entry.root.get(flag_field) is not True:
            continue
        area = entry.root.get(area_field)
        key = entry.root.get(key_field)
        for sub_id, params in subscriptions:
            if params[param_index] == area:
                expected.add((sub_id, key))

    counts = _notified_counts(executions, key_path)
    for pair in sorted(expected, key=str):
        n = counts.get(pair, 0)
        if n == 0:
            report.missed.append(pair)
        elif n > 1:
            report.duplicated.append(pair)
        else:
            report.matched += 1
    for pair, n in counts.items():
        if pair not in expected and n > 0:
            # over-delivery of a record the run should not have reported
            report.duplicated.append(pair)
    return report


def nearby_channel_oracle(entries, executions, subscriptions, *,
                          tweets_dataset: str = "Tweets",
                          officers_dataset: str = "OfficerLocations",
                          key_path: Sequence[str] = ("t", "tid"),
                          key_field: str = "tid",
                          oid_field: str = "oid",
                          flag_field: Optional[str] = "hateful_flag",
                          threshold: float = 5.0,
                          param_index: int = 0) -> OracleReport:
    """Brute-force recomputation of an is_new(tweets) x latest-location join.

    Per successful execution and node, the new tweets are the logged entries
    inside that node's recorded window; each joins against every officer's
    latest position stamped before the officer's own node's current time.
    """
    report = OracleReport()
    tweet_log = [e for e in entries if e.dataset == tweets_dataset]
    officer_log = [e for e in entries if e.dataset == officers_dataset]
    by_officer: Dict[object, List] = {}
    for e in officer_log:
        by_officer.setdefault(e.root.get(oid_field), []).append(e)
    for versions in by_officer.values():
        versions.sort(key=lambda e: e.ts)
    subs_by_oid: Dict[object, List[str]] = {}
    for sub_id, params in subscriptions:
        subs_by_oid.setdefault(params[param_index], []).append(sub_id)

    expected: Dict[Tuple[str, object], int] = {}
    for rec in _successful(executions):
        new_tweets = []
        for tweet in tweet_log:
            t_window = rec.node_windows.get(tweet.node_id)
            if t_window is None or not t_window[0] < tweet.ts < t_window[1]:
                continue
            if flag_field is not None and tweet.root.get(flag_field) is not True:
                continue
            t_loc = tweet.root.get("location")
            if isinstance(t_loc, Point):
                new_tweets.append((tweet, t_loc))
        if not new_tweets:
            continue
        for oid, versions in by_officer.items():
            if oid not in subs_by_oid:
                continue
            window = rec.node_windows.get(versions[0].node_id)
            if window is None:
                continue
            current = None
            for version in versions:
                if version.ts < window[1]:
                    current = version
                else:
                    break
            if current is None:
                continue
            loc = current.root.get("location")
            if not isinstance(loc, Point):
                continue
            for tweet, t_loc in new_tweets:
                dx, dy = t_loc.x - loc.x, t_loc.y - loc.y
                if (dx * dx + dy * dy) ** 0.5 < threshold:
                    for sub_id in subs_by_oid[oid]:
                        key = (sub_id, tweet.root.get(key_field))
                        expected[key] = expected.get(key, 0) + 1

    counts = _notified_counts(executions, key_path)
    for pair, want in sorted(expected.items(), key=str):
        got = counts.get(pair, 0)
        if got < want:
            report.missed.append(pair)
        elif got > want:
            report.duplicated.append(pair)
        else:
            report.matched += 1
    for pair, got in counts.items():
        if pair not in expected and got > 0:
            report.duplicated.append(pair)
    return report


def upsert_channel_oracle(entries, executions, subscriptions, *,
                          dataset: str, key_path: Sequence[str],
                          key_field: str, match_field: str,
                          param_index: int = 0) -> OracleReport:
    """Exactly-once over an upsert stream: per execution the latest version
    under the window's upper bound is reported iff it falls inside the
    window; versions superseded within a window are counted, not missed."""
    report = OracleReport()
    by_pk: Dict[object, List] = {}
    for e in entries:
        if e.dataset == dataset:
            by_pk.setdefault(e.root.get(key_field), []).append(e)
    expected: Dict[Tuple[str, object], int] = {}
    reported_versions = set()
    for versions in by_pk.values():
        versions.sort(key=lambda e: e.ts)
    for rec in _successful(executions):
        for pk, versions in by_pk.items():
            node_id = versions[0].node_id
            window = rec.node_windows.get(node_id)
            if window is None:
                continue
            current = None
            for version in versions:
                if version.ts < window[1]:
                    current = version
                else:
                    break
            if current is None or not window[0] < current.ts:
                continue
            reported_versions.add(id(current))
            for sub_id, params in subscriptions:
                if params[param_index] == current.root.get(match_field):
                    key = (sub_id, pk)
                    expected[key] = expected.get(key, 0) + 1
    cutoff = _last_curr_per_node(executions)
    for versions in by_pk.values():
        for version in versions:
            node_cut = cutoff.get(version.node_id)
            if node_cut is not None and version.ts < node_cut \
                    and id(version) not in reported_versions:
                report.superseded += 1

    counts = _notified_counts(executions, key_path)
    for pair, want in sorted(expected.items(), key=str):
        got = counts.get(pair, 0)
        if got < want:
            report.missed.append(pair)
        elif got > want:
            report.duplicated.append(pair)
        else:
            report.matched += want
    for pair, got in counts.items():
        if pair not in expected and got > 0:
            report.duplicated.append(pair)
    return report
