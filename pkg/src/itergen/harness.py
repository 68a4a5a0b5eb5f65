"""Sandboxed execution of generated code against test units.

Each run happens in a fresh subprocess with CPU-time and address-space
limits, a temp working directory, and a best-effort network stub.  The
outcome is folded into the fixed seven-way category set the feedback
model's vocabulary depends on, and the first reported error is distilled
into the text that goes back into the model.
"""

from __future__ import annotations

import json
import os
import re
import shutil
import subprocess
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from .textdata import EMPTY_TEXT, TokenizedText, tokenize

GENERIC = "generic-assertions"
SIMULATOR = "external-simulator"

CATEGORIES = (
    "OK",
    "AssertionError",
    "AttributeError",
    "SyntaxError",
    "NameError",
    "TypeError",
    "IndentationError",
)

# aliases and the closed-set fallback for everything else python can raise
_DIRECT = {c.lower(): c for c in CATEGORIES if c != "OK"}
_ALIASES = {
    alias.lower(): target
    for alias, target in {
        "TabError": "IndentationError",
        "UnboundLocalError": "NameError",
        "ModuleNotFoundError": "NameError",
        "ImportError": "NameError",
        "UnicodeDecodeError": "SyntaxError",
        "UnicodeEncodeError": "SyntaxError",
        "ValueError": "TypeError",
        "KeyError": "TypeError",
        "IndexError": "TypeError",
        "ZeroDivisionError": "TypeError",
        "OverflowError": "TypeError",
        "ArithmeticError": "TypeError",
    }.items()
}

_ERROR_LINE = re.compile(
    r"^([A-Za-z_][A-Za-z0-9_.]*(?:error|exception|exit|interrupt))\b", re.IGNORECASE
)

_SITECUSTOMIZE = """\
import socket

def _blocked(*args, **kwargs):
    raise OSError("network access is disabled in the test sandbox")

socket.socket = _blocked
socket.create_connection = _blocked
"""


class HarnessError(Exception):
    pass


@dataclass(frozen=True)
class TestUnitSpec:
    __test__ = False  # domain type, not a pytest case

    """What to run against a candidate program and under which limits."""

    kind: str = GENERIC
    payload: str = ""
    time_limit: float = 5.0
    memory_limit: int = 256 * 1024 * 1024

    def __post_init__(self):
        if self.kind not in (GENERIC, SIMULATOR):
            raise HarnessError(f"unknown test unit kind {self.kind!r}")
        if self.time_limit <= 0:
            raise HarnessError("time_limit must be positive")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "payload": self.payload,
            "time_limit": self.time_limit,
            "memory_limit": self.memory_limit,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TestUnitSpec":
        return cls(
            kind=data.get("kind", GENERIC),
            payload=data.get("payload", ""),
            time_limit=float(data.get("time_limit", 5.0)),
            memory_limit=int(data.get("memory_limit", 256 * 1024 * 1024)),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def loads(cls, text: str) -> "TestUnitSpec":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class TestResult:
    __test__ = False  # domain type, not a pytest case

    category: str
    raw_output: str
    passed: bool

    def __post_init__(self):
        if self.category not in CATEGORIES:
            raise HarnessError(f"category {self.category!r} outside the closed set")
        if self.passed != (self.category == "OK"):
            raise HarnessError("passed flag must mirror the OK category")


@dataclass(frozen=True)
class TestInfo:
    __test__ = False  # domain type, not a pytest case

    """First-error fragment and message, tokenized for the feedback encoder."""

    failing_fragment: str = ""
    error_message: str = ""
    tokens: TokenizedText = EMPTY_TEXT

    @property
    def empty(self) -> bool:
        return not self.failing_fragment and not self.error_message

    def text(self) -> str:
        return (self.failing_fragment + "\n" + self.error_message).strip()


EMPTY_TEST_INFO = TestInfo()


def classify_error(raw_output: str) -> str:
    """Fold captured output into the seven-way category set."""
    stripped = raw_output.strip()
    if not stripped or stripped == "__OK__":
        return "OK"
    last_named = None
    for line in stripped.splitlines():
        m = _ERROR_LINE.match(line.strip())
        if m:
            last_named = m.group(1).rsplit(".", 1)[-1].lower()
    if last_named is None:
        # timeout / kill / silent nonzero exit: a functional failure
        return "AssertionError"
    if last_named in _DIRECT:
        return _DIRECT[last_named]
    if last_named in _ALIASES:
        return _ALIASES[last_named]
    if last_named.endswith("syntaxerror"):
        return "SyntaxError"
    return "AssertionError"


def _limit_resources(memory_limit: int, cpu_seconds: int):
    def preexec():
        import resource

        resource.setrlimit(resource.RLIMIT_CPU, (cpu_seconds, cpu_seconds + 1))
        resource.setrlimit(resource.RLIMIT_AS, (memory_limit, memory_limit))
        resource.setrlimit(resource.RLIMIT_FSIZE, (8 * 1024 * 1024, 8 * 1024 * 1024))
        os.setsid()

    return preexec


def run_tests(code: str, spec: TestUnitSpec) -> TestResult:
    """Execute ``code`` plus the test unit in an isolated subprocess."""
    workdir = tempfile.mkdtemp(prefix="itergen-sbx-")
    try:
        if spec.kind == GENERIC:
            program = code.rstrip("\n") + "\n\n" + spec.payload.rstrip("\n") + "\n"
            target = os.path.join(workdir, "candidate.py")
            with open(target, "w") as fh:
                fh.write(program)
            argv = [sys.executable, "-B", target]
        else:
            target = os.path.join(workdir, "candidate.py")
            with open(target, "w") as fh:
                fh.write(code.rstrip("\n") + "\n")
            argv = _simulator_argv(spec.payload, target)
        with open(os.path.join(workdir, "sitecustomize.py"), "w") as fh:
            fh.write(_SITECUSTOMIZE)
        env = {
            "PATH": os.environ.get("PATH", "/usr/bin:/bin"),
            "PYTHONPATH": workdir,
            "HOME": workdir,
            "TMPDIR": workdir,
            "PYTHONDONTWRITEBYTECODE": "1",
        }
        cpu_seconds = max(1, int(spec.time_limit))
        try:
            proc = subprocess.run(
                argv,
                cwd=workdir,
                env=env,
                capture_output=True,
                text=True,
                timeout=spec.time_limit + 2.0,
                preexec_fn=_limit_resources(spec.memory_limit, cpu_seconds),
            )
            if proc.returncode == 0:
                # exit status decides; warnings on stderr are not failures
                return TestResult(category="OK", raw_output="__OK__", passed=True)
            raw = proc.stderr
            if not raw.strip():
                raw = f"__KILLED__ exit={proc.returncode}\n{proc.stdout[-2000:]}"
        except subprocess.TimeoutExpired as exc:
            raw = "__TIMEOUT__ wall clock limit exceeded\n" + _tail(exc.stderr)
        category = classify_error(raw)
        return TestResult(category=category, raw_output=raw, passed=False)
    finally:
        shutil.rmtree(workdir, ignore_errors=True)


def _tail(data) -> str:
    if not data:
        return ""
    if isinstance(data, bytes):
        data = data.decode("utf-8", "replace")
    return data[-2000:]


def _simulator_argv(payload: str, code_path: str) -> list[str]:
    """Simulator contract: command gets the code path; exit 0 means pass."""
    desc = json.loads(payload)
    return list(desc["command"]) + [code_path]


def extract_test_info(raw_output: str, code: str = "") -> TestInfo:
    """Distill the FIRST reported error into fragment + message text."""
    if classify_error(raw_output) == "OK":
        return EMPTY_TEST_INFO
    lines = raw_output.splitlines()
    start = 0
    for i, line in enumerate(lines):
        if line.startswith("Traceback (most recent call last):"):
            start = i
            break
    fragment: list[str] = []
    message = ""
    for line in lines[start:]:
        stripped = line.strip()
        m = _ERROR_LINE.match(stripped)
        if m and not line.startswith(" "):
            message = stripped
            break
        if line.startswith((" ", "\t")) and stripped and not stripped.startswith("File "):
            # source-echo / caret lines of the first frame block
            fragment.append(stripped)
    if not message:
        for line in lines:
            if line.strip():
                message = line.strip()
                break
    fragment_text = "\n".join(fragment)
    info_text = (fragment_text + "\n" + message).strip()
    return TestInfo(
        failing_fragment=fragment_text,
        error_message=message,
        tokens=tokenize(info_text),
    )


@dataclass
class SweepReport:
    results: list[TestResult]
    histogram: dict[str, float] = field(default_factory=dict)


def corpus_test_sweep(
    codes: list[str], specs: list[TestUnitSpec], parallelism: int = 4
) -> SweepReport:
    """Run aligned (code, spec) pairs; results keep input order."""
    if len(codes) != len(specs):
        raise HarnessError("codes and specs must be aligned")
    if not codes:
        return SweepReport(results=[], histogram={c: 0.0 for c in CATEGORIES})
    with ThreadPoolExecutor(max_workers=max(1, parallelism)) as pool:
        results = list(pool.map(run_tests, codes, specs))
    histogram = {c: 0.0 for c in CATEGORIES}
    for r in results:
        histogram[r.category] += 1
    total = len(results)
    histogram = {c: 100.0 * n / total for c, n in histogram.items()}
    return SweepReport(results=results, histogram=histogram)
