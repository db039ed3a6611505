"""Exception hierarchy shared by every stage of the pipeline.

Each class carries the CLI exit code it maps to: 1 internal, 2 bad user
input, 3 an external tool (git, container CLI) is unavailable.
"""

from __future__ import annotations


class DockorderError(Exception):
    exit_code = 1


class UserInputError(DockorderError):
    exit_code = 2


class ExternalToolError(DockorderError):
    exit_code = 3


# parser

class DockerfileSyntaxError(UserInputError):
    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line
        self.reason = reason


class ShellParseError(DockorderError):
    def __init__(self, offset: int, reason: str = "unbalanced quotes"):
        super().__init__(f"offset {offset}: {reason}")
        self.offset = offset


class UnsupportedConstruct(DockorderError):
    def __init__(self, name: str):
        super().__init__(f"unsupported shell construct: {name}")
        self.name = name


# graph / optimizer

class CyclicDependency(DockorderError):
    def __init__(self, nodes):
        super().__init__(f"dependency cycle among nodes {sorted(nodes)}")
        self.nodes = tuple(sorted(nodes))


class MissingWeight(UserInputError):
    def __init__(self, index: int, what: str = "weight"):
        super().__init__(f"no {what} for instruction #{index}")
        self.index = index


class TooLarge(UserInputError):
    def __init__(self, n: int, max_n: int):
        super().__init__(f"{n} nodes exceeds brute-force limit {max_n}")
        self.n = n


class GroupCycle(UserInputError):
    def __init__(self, groups):
        super().__init__(f"contracting groups {list(groups)} creates a cycle")
        self.groups = tuple(groups)


class InvalidGroups(UserInputError):
    pass


# history

class NotARepository(UserInputError):
    pass


class DockerfileNotFound(UserInputError):
    pass


class GitUnavailable(ExternalToolError):
    pass


# build cost

class RuntimeUnavailable(ExternalToolError):
    pass


class CleanupIncomplete(DockorderError):
    def __init__(self, bytes_remaining: int):
        super().__init__(f"build cache still holds {bytes_remaining} bytes after prune")
        self.bytes_remaining = bytes_remaining


class MalformedLog(UserInputError):
    pass


class BuildFailed(DockorderError):
    def __init__(self, log: str):
        excerpt = "\n".join(log.splitlines()[-20:])
        super().__init__(f"build failed:\n{excerpt}")
        self.log = log


class CostParseError(UserInputError):
    pass


class NegativeCost(UserInputError):
    def __init__(self, index):
        super().__init__(f"negative build cost for instruction {index}")
        self.index = index


# simulator

class UnknownIndex(UserInputError):
    def __init__(self, index):
        super().__init__(f"instruction index {index} is not in the simulated order")
        self.index = index


class EmptyHistory(UserInputError):
    pass


# consistency

class InspectorFailure(ExternalToolError):
    def __init__(self, which: str, detail: str):
        super().__init__(f"inspector {which} failed: {detail}")
        self.which = which
        self.detail = detail
