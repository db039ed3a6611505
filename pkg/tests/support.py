"""Fixture builders shared by the test modules."""

from __future__ import annotations

import os
import random
import subprocess
from pathlib import Path

from dockorder.graph import DependencyGraph

CORPUS = Path(__file__).parent / "corpus"

SEVEN_LINE = """\
FROM python:3.11-slim
WORKDIR /app
COPY requirements.txt .
RUN pip install -r requirements.txt
COPY src/ /app
RUN python -m compileall /app
CMD ["python", "/app/main.py"]
"""


def raw_text(path: Path) -> str:
    """File text with line endings untouched."""
    return Path(path).read_bytes().decode("utf-8")


def corpus_files() -> list[Path]:
    return sorted(CORPUS.glob("*.Dockerfile")) + sorted((CORPUS / "roundtrip").glob("*.Dockerfile"))


class GitRepo:
    """Tiny scripted git repository with controlled commit dates."""

    def __init__(self, path: Path):
        self.path = Path(path)
        self.path.mkdir(parents=True, exist_ok=True)
        self.git("init", "-q")
        self.git("config", "user.email", "fixture@example.com")
        self.git("config", "user.name", "fixture")
        self.git("config", "commit.gpgsign", "false")

    def git(self, *args: str, date: str | None = None) -> str:
        env = dict(os.environ)
        if date:
            env.update(GIT_AUTHOR_DATE=date, GIT_COMMITTER_DATE=date)
        proc = subprocess.run(["git", *args], cwd=self.path, env=env, capture_output=True, text=True, check=True)
        return proc.stdout.strip()

    def write(self, rel: str, text: str) -> None:
        target = self.path / rel
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(text)

    def commit(self, message: str, date: str, files: dict[str, str] | None = None) -> str:
        for rel, text in (files or {}).items():
            self.write(rel, text)
        self.git("add", "-A")
        self.git("commit", "-q", "--allow-empty", "-m", message, date=date)
        return self.git("rev-parse", "HEAD")


def three_commit_repo(path: Path) -> tuple[GitRepo, list[str]]:
    """Initial commit, then an edit of Dockerfile line 6, then an edit of src/main.py."""
    repo = GitRepo(path)
    c1 = repo.commit("initial", "2026-01-01T00:00:00+00:00", {
        "Dockerfile": SEVEN_LINE,
        "requirements.txt": "flask\n",
        "src/main.py": "print(1)\n",
    })
    c2 = repo.commit("quiet compile", "2026-02-01T00:00:00+00:00", {
        "Dockerfile": SEVEN_LINE.replace("compileall /app", "compileall -q /app"),
    })
    c3 = repo.commit("change app", "2026-03-01T00:00:00+00:00", {"src/main.py": "print(2)\n"})
    return repo, [c1, c2, c3]


def random_dag(rng: random.Random, n: int, density: float) -> DependencyGraph:
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n) if rng.random() < density]
    return DependencyGraph.from_pairs(n, pairs)


def random_weights(rng: random.Random, n: int, zero_freq: float = 0.0):
    freq = {i: (0.0 if rng.random() < zero_freq else rng.uniform(0.01, 1.0)) for i in range(n)}
    cost = {i: rng.uniform(0.1, 60.0) for i in range(n)}
    return freq, cost
