"""Component trie for path patterns.

A parent path matches everything below it, a child never matches its parent.
Components may be fnmatch patterns (``*.py``, ``lib*``); a pattern component
matches any single concrete component it globs.
"""

from __future__ import annotations

from fnmatch import fnmatchcase
from typing import Iterable

_END = "\0end"


def components(path: str) -> list[str]:
    return [c for c in path.split("/") if c and c != "."]


def _component_match(a: str, b: str) -> bool:
    return a == b or fnmatchcase(b, a) or fnmatchcase(a, b)


class PathTrie:
    def __init__(self, paths: Iterable[str] = ()):
        self.root: dict = {}
        self._size = 0
        for p in paths:
            self.insert(p)

    def __len__(self) -> int:
        return self._size

    def insert(self, path: str) -> None:
        node = self.root
        for comp in components(path):
            node = node.setdefault(comp, {})
        if _END not in node:
            self._size += 1
        node[_END] = path

    def _walk(self, node: dict, comps: list[str], want_descendants: bool) -> bool:
        if _END in node:
            return True  # an inserted path is an ancestor-or-self of the query
        if not comps:
            return want_descendants and len(node) > 0
        head, rest = comps[0], comps[1:]
        for key, child in node.items():
            if key != _END and _component_match(key, head):
                if self._walk(child, rest, want_descendants):
                    return True
        return False

    def covers(self, path: str) -> bool:
        """True if some inserted path is an ancestor of (or equal to) ``path``."""
        return self._walk(self.root, components(path), False)

    def overlaps(self, path: str) -> bool:
        """True if ``path`` and some inserted path are on one ancestor line."""
        return self._walk(self.root, components(path), True)


def contains(parent: str, child: str) -> bool:
    return PathTrie([parent]).covers(child)


def overlapping(left: Iterable[str], right: Iterable[str]) -> list[tuple[str, str]]:
    """All (l, r) pairs where one path is an ancestor-or-self of the other."""
    out = []
    right = list(right)
    for a in left:
        trie = PathTrie([a])
        for b in right:
            if trie.overlaps(b):
                out.append((a, b))
    return sorted(out)
