"""Fault scenarios as data.

A scenario file is a list of steps, one per line; ``#`` starts a comment.
Disks are named by member slot (data disks first, then parity disks)::

    inject <slot> <kind> <start-sector> <count> [k|pattern]   raw disk sectors
    inject-block <slot> <stripe> <kind> [k|pattern]           first sector of a member block
    write <lba> <count> [seed]           deterministic payload, default seed = line number
    read <lba> <count>                   outcome: ok | recovered | unrecoverable | offline | mismatch
    verify                               read the whole volume and compare with the shadow copy
    fail <slot> | restore <slot> | rebuild <slot> | remap <slot> <sector>
    crash-at <point>                     the next write aborts at that pipeline point
    replay | scrub
    expect state <mode>
    expect read <outcome>
    expect data ok
    expect inconsistent|healed|repaired|recoveries|lost <n>

Pipeline points: before-intent, after-intent, after-commit, after-data-<i>,
after-parity. After a crash the array is reassembled from its disks without
replaying the journal, as a restarted host would see it.
"""

from __future__ import annotations

import shlex
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .engine import ArrayMode, Raid0eArray
from .errors import (
    ArrayOfflineError,
    ConfigError,
    Raid0eError,
    SimulatedCrash,
    UnrecoverableReadError,
)
from .harness import ShadowVolume
from .vdisk import VirtualDisk, parse_fault_line

_ARITY = {
    "inject": (4, 5),
    "inject-block": (3, 4),
    "write": (2, 3),
    "read": (2, 2),
    "verify": (0, 0),
    "fail": (1, 1),
    "restore": (1, 1),
    "rebuild": (1, 1),
    "remap": (2, 2),
    "crash-at": (1, 1),
    "replay": (0, 0),
    "scrub": (0, 0),
    "expect": (2, 2),
}
_COUNTERS = ("inconsistent", "healed", "repaired", "recoveries", "lost")


class ScenarioError(ConfigError):
    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


@dataclass
class Step:
    lineno: int
    verb: str
    args: list[str]


@dataclass
class StepResult:
    lineno: int
    text: str
    ok: bool
    detail: str = ""
    assertion: bool = False


@dataclass
class ScenarioReport:
    steps: list[StepResult] = field(default_factory=list)

    @property
    def assertions(self) -> list[StepResult]:
        return [s for s in self.steps if s.assertion]

    @property
    def passed(self) -> bool:
        return all(s.ok for s in self.steps)

    def format(self) -> str:
        lines = []
        for s in self.steps:
            mark = "PASS" if s.ok else "FAIL"
            tag = mark if s.assertion else ("ok" if s.ok else "ERR")
            lines.append(f"{s.lineno:4d} {tag:<4} {s.text}" + (f"  ({s.detail})" if s.detail else ""))
        n_pass = sum(s.ok for s in self.assertions)
        lines.append(f"{n_pass}/{len(self.assertions)} assertions passed")
        return "\n".join(lines) + "\n"


def parse_scenario(text: str) -> list[Step]:
    steps = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        verb, *args = shlex.split(line)
        if verb not in _ARITY:
            raise ScenarioError(lineno, f"unknown verb {verb!r}")
        lo, hi = _ARITY[verb]
        if not lo <= len(args) <= hi:
            raise ScenarioError(lineno, f"{verb} takes {lo}..{hi} arguments, got {len(args)}")
        if verb == "inject":
            try:
                parse_fault_line(" ".join(args))
            except ConfigError as e:
                raise ScenarioError(lineno, str(e)) from None
        elif verb not in ("crash-at", "expect", "inject-block"):
            try:
                [int(a) for a in args]
            except ValueError:
                raise ScenarioError(lineno, f"{verb} arguments must be integers") from None
        if verb == "expect":
            what, value = args
            if what == "state":
                try:
                    ArrayMode(value)
                except ValueError:
                    raise ScenarioError(lineno, f"unknown state {value!r}") from None
            elif what == "read":
                if value not in ("ok", "recovered", "unrecoverable", "offline", "mismatch"):
                    raise ScenarioError(lineno, f"unknown read outcome {value!r}")
            elif what == "data":
                if value != "ok":
                    raise ScenarioError(lineno, "expect data takes 'ok'")
            elif what in _COUNTERS:
                if not value.isdigit():
                    raise ScenarioError(lineno, f"expect {what} needs a count")
            else:
                raise ScenarioError(lineno, f"cannot expect {what!r}")
        steps.append(Step(lineno, verb, args))
    return steps


def _payload(seed: int, n: int) -> bytes:
    return np.random.default_rng(seed).bytes(n)


class ScenarioRunner:
    def __init__(self, array: Raid0eArray, shadow: ShadowVolume | None = None, spare_dir=None):
        self.array = array
        if shadow is None:
            shadow = ShadowVolume(array, array.read(0, array.geometry.volume_sectors))
        self.shadow = shadow
        self.spare_dir = Path(spare_dir) if spare_dir else None
        self.last_read: str | None = None
        self.last_scrub = None
        self.last_replay = None
        self.last_rebuild = None
        self._recoveries = 0
        self._crash_point: str | None = None
        self._spares = 0

    @property
    def recoveries(self) -> int:
        return self._recoveries + len(self.array.recoveries)

    def run(self, steps: list[Step]) -> ScenarioReport:
        report = ScenarioReport()
        for step in steps:
            text = " ".join([step.verb, *step.args])
            try:
                result = getattr(self, "_do_" + step.verb.replace("-", "_"))(step)
            except Raid0eError as e:
                result = StepResult(step.lineno, text, False, f"{type(e).__name__}: {e}")
            else:
                result.lineno, result.text = step.lineno, text
            report.steps.append(result)
        return report

    # -- verbs ------------------------------------------------------------

    def _do_inject(self, step):
        slot, spec = parse_fault_line(" ".join(step.args))
        self.array.disks[slot].inject_fault(spec)
        return StepResult(0, "", True)

    def _do_inject_block(self, step):
        slot, stripe = int(step.args[0]), int(step.args[1])
        g = self.array.geometry
        if slot < g.n_data:
            sector = self.array._data_sector(slot, stripe)
        else:
            if self.array._parity_slot(stripe) != slot:
                raise ConfigError(f"stripe {stripe} keeps its parity on slot {self.array._parity_slot(stripe)}")
            sector = self.array._parity_sector(stripe)
        _, spec = parse_fault_line(" ".join([str(slot), step.args[2], str(sector), "1", *step.args[3:]]))
        self.array.disks[slot].inject_fault(spec)
        return StepResult(0, "", True, f"sector {sector}")

    def _do_write(self, step):
        lba, count = int(step.args[0]), int(step.args[1])
        seed = int(step.args[2]) if len(step.args) > 2 else step.lineno
        payload = _payload(seed, count * self.array.geometry.sector_size)
        if self._crash_point is not None:
            point, self._crash_point = self._crash_point, None

            def hook(p, point=point):
                if p == point:
                    raise SimulatedCrash(p)

            self.array.crash_hook = hook
            try:
                self.array.write(lba, payload)
            except SimulatedCrash:
                self.shadow.uncertain_write(lba, payload)
                self._reopen()
                return StepResult(0, "", True, f"crashed at {point}")
            finally:
                self.array.crash_hook = None
            self.shadow.write(lba, payload)
            return StepResult(0, "", False, f"crash point {point} never reached")
        self.array.write(lba, payload)
        self.shadow.write(lba, payload)
        return StepResult(0, "", True)

    def _do_read(self, step):
        lba, count = int(step.args[0]), int(step.args[1])
        before = len(self.array.recoveries)
        try:
            data = self.array.read(lba, count)
        except UnrecoverableReadError as e:
            self.last_read = "unrecoverable"
            return StepResult(0, "", True, f"unrecoverable, stripe {e.stripe}")
        except ArrayOfflineError:
            self.last_read = "offline"
            return StepResult(0, "", True, "offline")
        if data != self.shadow.expect(lba, count):
            self.last_read = "mismatch"
            return StepResult(0, "", False, "data differs from shadow copy")
        self.last_read = "recovered" if len(self.array.recoveries) > before else "ok"
        return StepResult(0, "", True, self.last_read)

    def _do_verify(self, step):
        data = self.array.read(0, self.array.geometry.volume_sectors)
        bad = self.shadow.verify(data)
        return StepResult(0, "", not bad, f"{len(bad)} mismatching regions" if bad else "")

    def _do_fail(self, step):
        self.array.fail_disk(int(step.args[0]))
        return StepResult(0, "", True)

    def _do_restore(self, step):
        self.array.restore_disk(int(step.args[0]))
        return StepResult(0, "", True)

    def _do_remap(self, step):
        self.array.disks[int(step.args[0])].remap_sector(int(step.args[1]))
        return StepResult(0, "", True)

    def _do_rebuild(self, step):
        slot = int(step.args[0])
        old = self.array.disks[slot]
        self._spares += 1
        where = self.spare_dir or old.path.parent
        spare = VirtualDisk(
            where / f"{old.path.stem}.spare{self._spares}.img",
            old.capacity, old.sector_size, old.latency, old.clock,
        )
        self.last_rebuild = self.array.rebuild(slot, spare)
        lost = self.last_rebuild.lost
        return StepResult(0, "", True, f"lost stripes {lost}" if lost else "")

    def _do_crash_at(self, step):
        self._crash_point = step.args[0]
        return StepResult(0, "", True)

    def _do_replay(self, step):
        self.last_replay = self.array.journal_replay()
        return StepResult(0, "", True, f"repaired {self.last_replay.repaired}")

    def _do_scrub(self, step):
        self.last_scrub = self.array.scrub()
        r = self.last_scrub
        return StepResult(0, "", True, f"{r.inconsistent_stripes} inconsistent, {r.healed} healed")

    def _do_expect(self, step):
        what, value = step.args
        if what == "state":
            got = self.array.array_state().mode.value
        elif what == "read":
            got = self.last_read
        elif what == "data":
            bad = self.shadow.verify(self.array.read(0, self.array.geometry.volume_sectors))
            got = "ok" if not bad else f"{len(bad)} mismatching regions"
        else:
            got = str(self._counter(what))
        return StepResult(0, "", got == value, f"got {got}", assertion=True)

    def _counter(self, what: str):
        if what == "recoveries":
            return self.recoveries
        source = {
            "inconsistent": (self.last_scrub, lambda r: r.inconsistent_stripes),
            "healed": (self.last_scrub, lambda r: r.healed),
            "repaired": (self.last_replay, lambda r: r.repaired),
            "lost": (self.last_rebuild, lambda r: len(r.lost)),
        }[what]
        report, get = source
        if report is None:
            raise ConfigError(f"no previous result to check {what} against")
        return get(report)

    def _reopen(self):
        old = self.array
        self._recoveries += len(old.recoveries)
        self.array = Raid0eArray.open(old.disks, replay=False, writeback=old.writeback, strict=old.strict)


def run_fault_scenario(array: Raid0eArray, scenario, shadow: ShadowVolume | None = None) -> ScenarioReport:
    """Run a scenario file (path or text) against ``array``."""
    path = Path(scenario) if not isinstance(scenario, str) or "\n" not in scenario else None
    text = path.read_text() if path is not None else scenario
    runner = ScenarioRunner(array, shadow)
    report = runner.run(parse_scenario(text))
    report.array = runner.array
    return report
