"""``rdc-scenarios``: run driver scenarios from a file and report as JUnit XML.

One scenario per line: ``driver | flags | assertions``. Flags are runtime
options (``--places``, ``--transport``, ``--workers``) followed by driver
options. Assertions are space-separated:

``rows=N``            the CSV has N data rows
``check=NAME``        the driver's named self-check passed
``golden=PATH``       the CSV equals PATH (or its ``sha256:<hex>`` content hash)
``state_hash=HEX``    the driver's final state hash equals HEX

Blank lines and lines starting with ``#`` are ignored.
"""

from __future__ import annotations

import argparse
import difflib
import hashlib
import shlex
import sys
import tempfile
import time
import traceback
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from pathlib import Path

from . import cli


@dataclass
class Scenario:
    line: int
    driver: str
    flags: list[str]
    assertions: list[tuple[str, str]]

    @property
    def name(self) -> str:
        return f"line{self.line}-{self.driver}"


@dataclass
class Outcome:
    scenario: Scenario
    failures: list[str] = field(default_factory=list)
    error: str | None = None
    seconds: float = 0.0

    @property
    def ok(self) -> bool:
        return not self.failures and self.error is None


def parse_file(path: str | Path) -> list[Scenario]:
    out = []
    for n, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = [p.strip() for p in line.split("|")]
        if len(parts) != 3:
            raise ValueError(f"line {n}: expected 'driver | flags | assertions', got {raw!r}")
        driver, flags, asserts = parts
        pairs = []
        for tok in shlex.split(asserts):
            key, sep, val = tok.partition("=")
            if not sep:
                raise ValueError(f"line {n}: assertion {tok!r} is not key=value")
            pairs.append((key, val))
        out.append(Scenario(n, driver, shlex.split(flags), pairs))
    return out


def _split_flags(flags: list[str]) -> tuple[list[str], list[str]]:
    if "--" in flags:
        k = flags.index("--")
        return flags[:k], flags[k + 1:]
    known, rest = cli.runtime_parser().parse_known_args(flags)
    runtime = []
    for k, v in vars(known).items():
        default = cli.runtime_parser().get_default(k)
        if v == default:
            continue
        opt = "--" + k.replace("_", "-")
        runtime += [opt] if isinstance(v, bool) else [opt, str(v)]
    return runtime, rest


def _csv_text(path: str) -> str:
    return Path(path).read_text()


def run_scenario(sc: Scenario, base: Path, workdir: Path) -> Outcome:
    oc = Outcome(sc)
    t0 = time.perf_counter()
    try:
        runtime, dflags = _split_flags(sc.flags)
        if "--out" not in dflags:
            dflags = dflags + ["--out", str(workdir / f"{sc.name}.csv")]
        ra, d, da = cli.parse(runtime + ["--", sc.driver] + dflags)
        res = cli.execute(ra, d, da)
        for key, val in sc.assertions:
            msg = _check(key, val, res, base)
            if msg:
                oc.failures.append(msg)
    except SystemExit as e:
        oc.error = f"usage error (exit {e.code})"
    except Exception as e:
        oc.error = f"{type(e).__name__}: {e}\n{traceback.format_exc()}"
    oc.seconds = time.perf_counter() - t0
    return oc


def _check(key: str, val: str, res: dict, base: Path) -> str | None:
    if key == "rows":
        n = len(res["rows"])
        return None if n == int(val) else f"rows: expected {val}, got {n}"
    if key == "check":
        checks = res.get("checks", {})
        if val not in checks:
            return f"check {val!r} unknown for this driver (has {sorted(checks)})"
        ok, msg = checks[val]
        return None if ok else f"check {val} failed: {msg}"
    if key == "state_hash":
        got = res.get("hash")
        return None if got == val else f"state_hash: expected {val}, got {got}"
    if key == "golden":
        want_path = (base / val).resolve()
        got = _csv_text(res["csv"])
        want = want_path.read_text()
        if want.startswith("sha256:"):
            h = hashlib.sha256(got.encode()).hexdigest()
            return None if want.strip() == f"sha256:{h}" else f"golden {val}: content hash {h} differs"
        if got == want:
            return None
        diff = "".join(difflib.unified_diff(want.splitlines(True), got.splitlines(True), str(val), "output"))
        return f"golden {val} differs:\n{diff}"
    return f"unknown assertion {key!r}"


def junit_xml(outcomes: list[Outcome], suite: str = "rdc-scenarios") -> str:
    ts = ET.Element(
        "testsuite",
        name=suite,
        tests=str(len(outcomes)),
        failures=str(sum(1 for o in outcomes if o.failures and o.error is None)),
        errors=str(sum(1 for o in outcomes if o.error is not None)),
        time=f"{sum(o.seconds for o in outcomes):.3f}",
    )
    for o in outcomes:
        tc = ET.SubElement(ts, "testcase", classname=suite, name=o.scenario.name, time=f"{o.seconds:.3f}")
        if o.error is not None:
            ET.SubElement(tc, "error", message=o.error.splitlines()[0]).text = o.error
        elif o.failures:
            ET.SubElement(tc, "failure", message=o.failures[0].splitlines()[0]).text = "\n".join(o.failures)
    return ET.tostring(ts, encoding="unicode")


def run_file(path: str | Path, junit: str | Path | None = None, workdir: str | Path | None = None) -> list[Outcome]:
    path = Path(path)
    scenarios = parse_file(path)
    with tempfile.TemporaryDirectory() as tmp:
        wd = Path(workdir) if workdir else Path(tmp)
        wd.mkdir(parents=True, exist_ok=True)
        outcomes = [run_scenario(sc, path.parent, wd) for sc in scenarios]
    if junit:
        Path(junit).write_text(junit_xml(outcomes))
    return outcomes


def main(argv: list[str] | None = None) -> int:
    p = argparse.ArgumentParser(prog="rdc-scenarios", description="Run driver scenarios and emit JUnit XML.")
    p.add_argument("file")
    p.add_argument("--junit", default=None, help="write a JUnit XML report here")
    p.add_argument("--workdir", default=None, help="keep scenario CSVs in this directory")
    a = p.parse_args(argv)
    try:
        outcomes = run_file(a.file, a.junit, a.workdir)
    except (OSError, ValueError) as e:
        print(f"rdc-scenarios: {e}", file=sys.stderr)
        return 2
    for o in outcomes:
        status = "PASS" if o.ok else "FAIL"
        print(f"{status} {o.scenario.name} ({o.seconds:.2f}s)")
        for f in o.failures:
            print("  " + f.replace("\n", "\n  "))
        if o.error:
            print("  " + o.error.replace("\n", "\n  "))
    print(f"{sum(o.ok for o in outcomes)}/{len(outcomes)} scenarios passed")
    return 0 if all(o.ok for o in outcomes) else 1


if __name__ == "__main__":
    sys.exit(main())
