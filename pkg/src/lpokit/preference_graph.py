"""Compile pairwise judgments into per-(user, prompt) preference DAGs and
ranked lists.

Pipeline::

    records -> group_judgments -> build_dag -> enumerate_ranked_lists
                                            \\-> dataset_stats

Every edge points winner -> loser. A group containing a directed cycle is
inconsistent and discarded whole. Ranked lists are the maximal directed
paths (source to sink) of a consistent DAG, split into overlapping windows
when longer than ``max_len``.
"""

from __future__ import annotations

import json
from collections import defaultdict
from collections.abc import Collection, Iterable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

DEFAULT_MAX_LEN = 8
DEFAULT_MAX_LISTS_PER_GROUP = 64

GroupKey = tuple[str, str]


class InputFormatError(ValueError):
    """A judgment record could not be parsed. ``lineno`` is 1-based."""

    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


class InconsistentGroupError(ValueError):
    """Raised when lists are requested from a DAG that contains a cycle."""


class StructuralError(ValueError):
    """Inputs to :func:`dataset_stats` do not describe the same record set."""


@dataclass(frozen=True)
class PairwiseJudgment:
    user_id: str
    prompt_id: str
    winner_id: str
    loser_id: str
    is_tie: bool = False

    def __post_init__(self):
        for name in ("user_id", "prompt_id", "winner_id", "loser_id"):
            v = getattr(self, name)
            if not isinstance(v, str) or not v:
                raise ValueError(f"{name} must be a non-empty string")
        if not self.is_tie and self.winner_id == self.loser_id:
            raise ValueError("winner_id and loser_id must differ")

    @property
    def key(self) -> GroupKey:
        return (self.user_id, self.prompt_id)


@dataclass(frozen=True)
class PreferenceGroup:
    key: GroupKey
    judgments: tuple[PairwiseJudgment, ...]
    node_ids: frozenset[str]


@dataclass(frozen=True)
class PreferenceDag:
    key: GroupKey
    nodes: frozenset[str]
    edges: frozenset[tuple[str, str]]
    cycle_witness: tuple[str, ...] | None = None
    edge_counts: dict[tuple[str, str], int] = field(default_factory=dict, compare=False)

    @property
    def consistent(self) -> bool:
        return self.cycle_witness is None

    @property
    def status(self) -> str:
        return "consistent" if self.consistent else "inconsistent"

    def successors(self) -> dict[str, list[str]]:
        out: dict[str, list[str]] = {n: [] for n in self.nodes}
        for a, b in self.edges:
            out[a].append(b)
        for v in out.values():
            v.sort()
        return out


@dataclass(frozen=True)
class RankedList:
    key: GroupKey
    ranking: tuple[str, ...]
    source_pair_count: int

    def to_json(self) -> str:
        return json.dumps({
            "user_id": self.key[0],
            "prompt_id": self.key[1],
            "ranking": list(self.ranking),
            "source_pairs": self.source_pair_count,
        }, ensure_ascii=False)


@dataclass(frozen=True)
class Enumeration:
    lists: tuple[RankedList, ...]
    truncated: bool


@dataclass(frozen=True)
class DatasetStats:
    total_pairs: int
    pairs_in_size2_lists: int
    pairs_in_larger_lists: int
    inconsistent_pairs: int
    group_count: int
    list_count: int
    list_length_histogram: dict[int, int]
    ties_dropped: int = 0
    truncated_groups: int = 0

    def percentage(self, count: int) -> float:
        return 100.0 * count / self.total_pairs if self.total_pairs else 0.0

    def to_dict(self) -> dict:
        def bucket(n):
            return {"count": n, "percentage": round(self.percentage(n), 4)}

        return {
            "total_pairs": self.total_pairs,
            "pairs_in_size2_lists": bucket(self.pairs_in_size2_lists),
            "pairs_in_larger_lists": bucket(self.pairs_in_larger_lists),
            "inconsistent_pairs": bucket(self.inconsistent_pairs),
            "group_count": self.group_count,
            "list_count": self.list_count,
            "list_length_histogram": {str(k): v for k, v in sorted(self.list_length_histogram.items())},
            "ties_dropped": self.ties_dropped,
            "truncated_groups": self.truncated_groups,
        }


# -- parsing ---------------------------------------------------------------

def parse_judgment_line(line: str, lineno: int) -> PairwiseJudgment:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise InputFormatError(lineno, f"invalid JSON ({exc.msg})") from None
    if not isinstance(obj, dict):
        raise InputFormatError(lineno, "expected a JSON object")
    try:
        tie = obj.get("tie", False)
        if not isinstance(tie, bool):
            raise ValueError("'tie' must be a boolean")
        fields = []
        for name in ("user_id", "prompt_id", "winner", "loser"):
            if name not in obj:
                raise ValueError(f"missing field '{name}'")
            fields.append(obj[name])
        return PairwiseJudgment(*fields, is_tie=tie)
    except ValueError as exc:
        raise InputFormatError(lineno, str(exc)) from None


def iter_judgments(lines: Iterable[str]):
    """Parse JSONL lines; blank lines are skipped."""
    for lineno, line in enumerate(lines, start=1):
        if line.strip():
            yield parse_judgment_line(line, lineno)


def read_judgments(path) -> list[PairwiseJudgment]:
    with open(path, encoding="utf-8") as fh:
        return list(iter_judgments(fh))


# -- graph construction ----------------------------------------------------

def group_judgments(records: Iterable[PairwiseJudgment]) -> tuple[list[PreferenceGroup], int]:
    """Partition records by (user, prompt). Returns ``(groups, ties_dropped)``
    with groups sorted by key."""
    buckets: dict[GroupKey, list[PairwiseJudgment]] = defaultdict(list)
    ties = 0
    for r in records:
        if r.is_tie:
            ties += 1
            continue
        buckets[r.key].append(r)
    groups = []
    for key in sorted(buckets):
        js = tuple(buckets[key])
        nodes = frozenset(n for j in js for n in (j.winner_id, j.loser_id))
        groups.append(PreferenceGroup(key, js, nodes))
    return groups, ties


def _find_cycle(nodes: Sequence[str], succ: dict[str, list[str]]) -> tuple[str, ...] | None:
    """Iterative three-colour DFS; returns a closed walk ``(v0, ..., v0)``."""
    WHITE, GREY, BLACK = 0, 1, 2
    colour = dict.fromkeys(nodes, WHITE)
    for root in nodes:
        if colour[root] != WHITE:
            continue
        stack = [(root, iter(succ[root]))]
        path = [root]
        colour[root] = GREY
        while stack:
            node, it = stack[-1]
            nxt = next(it, None)
            if nxt is None:
                colour[node] = BLACK
                stack.pop()
                path.pop()
            elif colour[nxt] == GREY:
                start = path.index(nxt)
                return tuple(path[start:]) + (nxt,)
            elif colour[nxt] == WHITE:
                colour[nxt] = GREY
                stack.append((nxt, iter(succ[nxt])))
                path.append(nxt)
    return None


def build_dag(group: PreferenceGroup) -> PreferenceDag:
    if not group.judgments:
        raise ValueError("cannot build a DAG from an empty group")
    counts: dict[tuple[str, str], int] = defaultdict(int)
    for j in group.judgments:
        counts[(j.winner_id, j.loser_id)] += 1
    edges = frozenset(counts)
    witness = None
    for a, b in sorted(edges):
        if (b, a) in edges:
            witness = (a, b, a)
            break
    if witness is None:
        succ: dict[str, list[str]] = {n: [] for n in group.node_ids}
        for a, b in edges:
            succ[a].append(b)
        for v in succ.values():
            v.sort()
        witness = _find_cycle(sorted(group.node_ids), succ)
    return PreferenceDag(group.key, group.node_ids, edges, witness, dict(counts))


# -- list extraction -------------------------------------------------------

def maximal_paths(dag: PreferenceDag) -> list[tuple[str, ...]]:
    """All source-to-sink paths in lexicographic order.

    In a DAG a path can be extended at the front only by a predecessor of
    its first node and at the back only by a successor of its last node, so
    maximal paths are exactly the source-to-sink paths.
    """
    succ = dag.successors()
    has_pred = {b for _, b in dag.edges}
    out = []
    for src in sorted(n for n in dag.nodes if n not in has_pred):
        stack = [(src, iter(succ[src]))]
        path = [src]
        while stack:
            node, it = stack[-1]
            if not succ[node]:
                out.append(tuple(path))
            nxt = next(it, None)
            if nxt is None:
                stack.pop()
                path.pop()
            else:
                stack.append((nxt, iter(succ[nxt])))
                path.append(nxt)
    return out


def split_path(path: Sequence[str], max_len: int) -> list[tuple[str, ...]]:
    """Overlapping windows of ``max_len`` with stride ``max_len - 1``.

    Adjacent windows share one node so every consecutive edge survives. The
    final window may be shorter but always has at least two nodes.
    """
    if max_len < 2:
        raise ValueError("max_len must be >= 2")
    path = tuple(path)
    if len(path) <= max_len:
        return [path]
    out = []
    i = 0
    while True:
        out.append(path[i:i + max_len])
        if i + max_len >= len(path):
            return out
        i += max_len - 1


def _covered_pairs(group_judgments: Iterable[PairwiseJudgment], ranking: Sequence[str]) -> int:
    members = set(ranking)
    return sum(1 for j in group_judgments if j.winner_id in members and j.loser_id in members)


def enumerate_ranked_lists(dag: PreferenceDag, max_len: int = DEFAULT_MAX_LEN,
                           max_lists_per_group: int = DEFAULT_MAX_LISTS_PER_GROUP,
                           judgments: Sequence[PairwiseJudgment] | None = None) -> Enumeration:
    """Ranked lists from a consistent DAG, lexicographically sorted and capped.

    ``source_pair_count`` counts annotated pairs with both images in the
    list; without ``judgments`` each distinct edge counts with its
    multiplicity from the DAG.
    """
    if not dag.consistent:
        raise InconsistentGroupError(f"group {dag.key} contains cycle {' -> '.join(dag.cycle_witness)}")
    if max_lists_per_group < 1:
        raise ValueError("max_lists_per_group must be >= 1")
    windows = sorted({w for p in maximal_paths(dag) for w in split_path(p, max_len)})
    truncated = len(windows) > max_lists_per_group
    windows = windows[:max_lists_per_group]
    lists = []
    for w in windows:
        if judgments is not None:
            n = _covered_pairs(judgments, w)
        else:
            members = set(w)
            n = sum(c for (a, b), c in dag.edge_counts.items() if a in members and b in members)
        lists.append(RankedList(dag.key, w, n))
    return Enumeration(tuple(lists), truncated)


def dataset_stats(groups: Sequence[PreferenceGroup], lists: Sequence[RankedList],
                  inconsistent_groups: Collection[GroupKey], ties_dropped: int = 0,
                  truncated_groups: int = 0) -> DatasetStats:
    """Attribute every annotated pair to one bucket.

    A pair in an inconsistent group is ``inconsistent``. Otherwise it is
    ``larger`` if some emitted list longer than two contains both of its
    images, and ``size2`` if not.
    """
    by_key = {g.key: g for g in groups}
    bad = set(inconsistent_groups)
    unknown = bad - by_key.keys()
    if unknown:
        raise StructuralError(f"inconsistent group(s) not among groups: {sorted(unknown)[:3]}")
    lists_by_key: dict[GroupKey, list[RankedList]] = defaultdict(list)
    for lst in lists:
        if lst.key not in by_key:
            raise StructuralError(f"list references unknown group {lst.key}")
        if lst.key in bad:
            raise StructuralError(f"list emitted for inconsistent group {lst.key}")
        lists_by_key[lst.key].append(lst)

    total = size2 = larger = incons = 0
    for g in groups:
        n = len(g.judgments)
        total += n
        if g.key in bad:
            incons += n
            continue
        long_sets = [set(lst.ranking) for lst in lists_by_key[g.key] if len(lst.ranking) > 2]
        for j in g.judgments:
            if any(j.winner_id in s and j.loser_id in s for s in long_sets):
                larger += 1
            else:
                size2 += 1

    hist: dict[int, int] = defaultdict(int)
    for lst in lists:
        hist[len(lst.ranking)] += 1
    return DatasetStats(total, size2, larger, incons, len(groups), len(lists), dict(hist),
                        ties_dropped, truncated_groups)


# -- end-to-end ------------------------------------------------------------

@dataclass(frozen=True)
class CompiledLists:
    lists: tuple[RankedList, ...]
    stats: DatasetStats
    dags: tuple[PreferenceDag, ...]


def _process_group(group: PreferenceGroup, max_len: int, cap: int):
    dag = build_dag(group)
    if not dag.consistent:
        return dag, None
    return dag, enumerate_ranked_lists(dag, max_len, cap, group.judgments)


def compile_lists(records: Iterable[PairwiseJudgment], max_len: int = DEFAULT_MAX_LEN,
                  max_lists_per_group: int = DEFAULT_MAX_LISTS_PER_GROUP,
                  workers: int = 1) -> CompiledLists:
    """Run the whole pipeline. Results are merged in sorted group order, so
    the output does not depend on ``workers``."""
    if max_len < 2:
        raise ValueError("max_len must be >= 2")
    groups, ties = group_judgments(records)
    args = [(g, max_len, max_lists_per_group) for g in groups]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda a: _process_group(*a), args))
    else:
        results = [_process_group(*a) for a in args]

    lists: list[RankedList] = []
    bad = []
    truncated = 0
    for dag, enum in results:
        if enum is None:
            bad.append(dag.key)
            continue
        lists.extend(enum.lists)
        truncated += enum.truncated
    stats = dataset_stats(groups, lists, bad, ties, truncated)
    return CompiledLists(tuple(lists), stats, tuple(d for d, _ in results))
