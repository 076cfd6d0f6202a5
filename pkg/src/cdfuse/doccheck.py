"""Execute the command examples in the markdown docs and compare their output.

Conventions inside a doc file:

* a fenced ``console`` block holds commands prefixed by ``$ `` followed by
  their expected output (stdout and stderr interleaved), then ``[exit N]``
  for a non-zero exit status; a line holding only ``...`` matches any run of
  output lines, and trailing whitespace is ignored;
* an HTML comment ``<!-- file: NAME -->`` directly above a fenced block
  writes that block to NAME in the working directory before later
  commands run (used for JSON configs).

All blocks of one file share a fresh temporary working directory.
"""
from __future__ import annotations

import os
import re
import shlex
import subprocess
import sys
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from .errors import UsageError

_FENCE = re.compile(r"^```(\w*)\s*$")
_FILE_MARK = re.compile(r"^<!--\s*file:\s*(\S+)\s*-->\s*$")


@dataclass
class Example:
    source: str
    line: int
    command: str
    expected: list


def default_doc_paths() -> list:
    root = Path(__file__).resolve().parents[2] / "docs"
    if not root.is_dir():
        raise UsageError(f"docs directory not found at {root}")
    return sorted(root.glob("*.md"))


def parse_doc(path):
    """(files to write, console examples) in document order."""
    lines = Path(path).read_text().splitlines()
    steps = []
    i = 0
    pending_file = None
    while i < len(lines):
        mark = _FILE_MARK.match(lines[i])
        if mark:
            pending_file = mark.group(1)
            i += 1
            continue
        fence = _FENCE.match(lines[i])
        if not fence:
            if lines[i].strip():
                pending_file = None
            i += 1
            continue
        lang = fence.group(1)
        start = i + 1
        j = start
        while j < len(lines) and not lines[j].startswith("```"):
            j += 1
        body = lines[start:j]
        if pending_file is not None:
            steps.append(("file", pending_file, "\n".join(body) + "\n"))
            pending_file = None
        elif lang == "console":
            cur = None
            for k, ln in enumerate(body):
                if ln.startswith("$ "):
                    cur = Example(str(path), start + k + 1, ln[2:], [])
                    steps.append(("run", cur, None))
                elif cur is not None:
                    cur.expected.append(ln.rstrip())
        i = j + 1
    return steps


def _matches(expected: list, actual: list) -> bool:
    """Line match with '...' wildcards standing for any number of lines."""
    memo = {}

    def go(i, j):
        key = (i, j)
        if key in memo:
            return memo[key]
        if i == len(expected):
            res = j == len(actual)
        elif expected[i].strip() == "...":
            res = any(go(i + 1, k) for k in range(j, len(actual) + 1))
        else:
            res = j < len(actual) and expected[i] == actual[j] and go(i + 1, j + 1)
        memo[key] = res
        return res

    return go(0, 0)


def _argv(command: str) -> list:
    argv = shlex.split(command)
    if argv and argv[0] == "cdfuse":
        return [sys.executable, "-m", "cdfuse", *argv[1:]]
    return argv


def run_doc(path, out=None) -> list:
    """Run one doc; returns a list of failure messages."""
    failures = []
    with tempfile.TemporaryDirectory(prefix="cdfuse-doc-") as tmp:
        for kind, a, b in parse_doc(path):
            if kind == "file":
                Path(tmp, a).write_text(b)
                continue
            ex = a
            proc, actual = _run(ex.command, tmp)
            expected = list(ex.expected)
            while expected and not expected[-1]:
                expected.pop()
            if not _matches(expected, actual):
                failures.append(f"{ex.source}:{ex.line}: output of `{ex.command}` differs\n"
                                f"--- expected\n" + "\n".join(expected) + "\n--- actual\n" + "\n".join(actual)
                                )
            elif out is not None:
                print(f"ok   {Path(ex.source).name}:{ex.line}  {ex.command}", file=out)
    return failures


def _run(command: str, cwd: str):
    env = dict(os.environ, PYTHONWARNINGS="ignore")
    proc = subprocess.run(_argv(command), cwd=cwd, stdout=subprocess.PIPE, stderr=subprocess.STDOUT,
                          text=True, env=env)
    lines = [ln.rstrip() for ln in proc.stdout.splitlines()]
    if proc.returncode != 0:
        lines.append(f"[exit {proc.returncode}]")
    return proc, lines


def update_doc(path) -> None:
    """Rewrite the expected output under every command with its current output."""
    results = {}
    with tempfile.TemporaryDirectory(prefix="cdfuse-doc-") as tmp:
        for kind, a, b in parse_doc(path):
            if kind == "file":
                Path(tmp, a).write_text(b)
            else:
                results[a.line] = _run(a.command, tmp)[1]
    lines = Path(path).read_text().splitlines()
    new = []
    i = 0
    while i < len(lines):
        new.append(lines[i])
        i += 1
        if i in results:
            key = i  # 1-based number of the command line just copied
            while i < len(lines) and not lines[i].startswith("$ ") and not lines[i].startswith("```"):
                i += 1
            new.extend(results[key])
    Path(path).write_text("\n".join(new) + "\n")


def doc_examples_check(paths: Optional[list] = None, out=None) -> list:
    """Run every doc; prints failures to ``out`` and returns them."""
    paths = [Path(p) for p in paths] if paths else default_doc_paths()
    failures = []
    for p in paths:
        failures.extend(run_doc(p, out))
    if out is not None:
        for f in failures:
            print(f"FAIL {f}", file=out)
        print(f"{len(failures)} failure(s) in {len(paths)} file(s)", file=out)
    return failures
