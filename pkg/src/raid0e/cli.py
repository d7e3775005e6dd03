"""Command-line front end.

An array is a directory holding ``disk<slot>.img`` member images and an
optional ``faults.txt`` (injected faults, kept between invocations). Each
invocation takes an exclusive lock on ``<dir>/.lock`` and fails fast if
another one holds it.

Exit codes: 0 success, 1 usage or configuration error, 2 data loss
(unrecoverable read, offline array, stripes lost during rebuild).
"""

from __future__ import annotations

import argparse
import fcntl
import os
import sys
from contextlib import contextmanager
from pathlib import Path

from .engine import Raid0eArray, make_disks, min_journal_size
from .errors import (
    ArrayOfflineError,
    ConfigError,
    MediaWriteError,
    Raid0eError,
    UnrecoverableReadError,
)
from .geometry import DEFAULT_STRIPE_UNIT, ArrayGeometry, capacity_efficiency, map_lba, parity_location
from .harness import PATTERNS, WorkloadSpec, run_workload
from .scenario import run_fault_scenario
from .superblock import Superblock
from .vdisk import (
    LatencyModel,
    SimClock,
    VirtualDisk,
    format_fault_file,
    parse_fault_file,
    parse_fault_line,
)

EXIT_OK, EXIT_CONFIG, EXIT_DATA_LOSS = 0, 1, 2
FAULT_FILE = "faults.txt"
LOCK_FILE = ".lock"
STRIPE_UNIT_ENV = "RAID0E_STRIPE_UNIT"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _emit(args, pairs: dict, human: str | None = None):
    if args.porcelain:
        for k, v in pairs.items():
            print(f"{k}={v}")
    elif human is not None:
        print(human)


@contextmanager
def _locked(directory: Path):
    directory.mkdir(parents=True, exist_ok=True)
    fd = os.open(directory / LOCK_FILE, os.O_RDWR | os.O_CREAT, 0o644)
    try:
        try:
            fcntl.flock(fd, fcntl.LOCK_EX | fcntl.LOCK_NB)
        except BlockingIOError:
            raise ConfigError(f"{directory} is locked by another invocation") from None
        yield
    finally:
        os.close(fd)


def _images(directory: Path) -> list[Path]:
    paths = sorted(directory.glob("disk*.img"), key=lambda p: p.name)
    return [p for p in paths if p.stem[4:].isdigit()]


def _latency(args) -> LatencyModel:
    return LatencyModel(args.read_bw, args.write_bw, args.seek)


def _open_disks(directory: Path, latency: LatencyModel | None = None) -> list[VirtualDisk]:
    paths = _images(directory)
    if not paths:
        raise ConfigError(f"no disk images in {directory}")
    sector_size = None
    for p in paths:
        with open(p, "rb") as f:
            try:
                sector_size = Superblock.unpack(f.read(4096)).geometry.sector_size
                break
            except Raid0eError:
                continue
    if sector_size is None:
        raise ConfigError(f"no valid superblock in {directory}")
    clock = SimClock()
    return [VirtualDisk.open(p, sector_size, latency=latency, clock=clock) for p in paths]


def _load_faults(directory: Path, disks):
    path = directory / FAULT_FILE
    if path.exists():
        for slot, spec in parse_fault_file(path.read_text()):
            if not 0 <= slot < len(disks):
                raise ConfigError(f"{FAULT_FILE}: no disk {slot}")
            disks[slot].inject_fault(spec)


def _save_faults(directory: Path, disks):
    entries = [(slot, spec) for slot, d in enumerate(disks) for spec in d.faults()]
    path = directory / FAULT_FILE
    if entries:
        path.write_text(format_fault_file(entries))
    elif path.exists():
        path.unlink()


def _assemble(args, replay=True, latency=None, **policy) -> Raid0eArray:
    directory = Path(args.dir)
    disks = _open_disks(directory, latency)
    _load_faults(directory, disks)
    return Raid0eArray.open(disks, replay=replay, **policy)


def _shutdown(args, array: Raid0eArray):
    _save_faults(Path(args.dir), array.disks)
    array.close()
    for d in array.disks:
        d.close()


@contextmanager
def _array(args, replay=True, latency=None, **policy):
    array = _assemble(args, replay, latency, **policy)
    try:
        yield array
    finally:
        _shutdown(args, array)


# -- commands ---------------------------------------------------------------


def cmd_create(args) -> int:
    directory = Path(args.dir)
    if _images(directory) and not args.force:
        raise ConfigError(f"{directory} already holds disk images (use --force to overwrite)")
    geom = ArrayGeometry(args.data, args.parity, args.stripe_unit, args.sector_size, args.disk_size)
    # default: room for at least 8 full-stripe records, never under 1 MiB
    journal = args.journal_size or max(1 << 20, 8 * min_journal_size(geom))
    for p in _images(directory):
        p.unlink()
    (directory / FAULT_FILE).unlink(missing_ok=True)
    disks = make_disks(directory, geom, journal)
    array = Raid0eArray.create(geom, disks, journal_size=journal)
    array.close()
    for d in disks:
        d.close()
    eff = capacity_efficiency(geom)
    _emit(
        args,
        {
            "n_data": geom.n_data,
            "m_parity": geom.m_parity,
            "stripe_unit": geom.stripe_unit,
            "sector_size": geom.sector_size,
            "disk_capacity": geom.disk_capacity,
            "stripes": geom.stripes,
            "volume_bytes": geom.volume_bytes,
            "efficiency": f"{eff.numerator}/{eff.denominator}",
        },
        f"created {geom.n_data}+{geom.m_parity} array in {directory}\n"
        f"stripe unit {geom.stripe_unit} B, {geom.stripes} stripes, "
        f"volume {geom.volume_sectors} sectors ({geom.volume_bytes} B)\n"
        f"efficiency {float(eff) * 100:.1f}%",
    )
    return EXIT_OK


def cmd_info(args) -> int:
    with _array(args, replay=False) as array:
        g = array.geometry
        st = array.array_state()
        pairs = {
            "n_data": g.n_data,
            "m_parity": g.m_parity,
            "stripe_unit": g.stripe_unit,
            "sector_size": g.sector_size,
            "stripes": g.stripes,
            "volume_sectors": g.volume_sectors,
            "state": st.mode.value,
            "generation": array.sb.generation,
            "uuid": array.sb.uuid.hex(),
        }
        for slot, s in enumerate(st.disks):
            dom, idx = g.role(slot)
            pairs[f"disk{slot}"] = f"{dom.value}{idx}:{s}"
        lines = [
            f"geometry   {g.n_data}+{g.m_parity}, stripe unit {g.stripe_unit} B, {g.stripes} stripes",
            f"volume     {g.volume_sectors} sectors",
            f"state      {st.mode.value}",
        ] + [f"disk{slot}      {g.role(slot)[0].value}{g.role(slot)[1]} {s}" for slot, s in enumerate(st.disks)]
        if args.lba is not None:
            loc = map_lba(args.lba, g)
            ploc = parity_location(loc.stripe, g)
            pslot = g.slot(ploc.domain, ploc.disk_index)
            # raw disk sectors, the numbering fault files use
            base = array.sb.data_offset // g.sector_size
            dsec = base + loc.offset // g.sector_size
            psec = base + ploc.offset // g.sector_size
            pairs.update(lba=args.lba, stripe=loc.stripe, data_disk=loc.disk_index,
                         data_offset=loc.offset, data_sector=dsec,
                         parity_slot=pslot, parity_offset=ploc.offset, parity_sector=psec)
            lines.append(
                f"lba {args.lba} -> stripe {loc.stripe}, data disk {loc.disk_index} sector {dsec}, "
                f"parity slot {pslot} sector {psec}"
            )
        _emit(args, pairs, "\n".join(lines))
    return EXIT_OK


def cmd_read(args) -> int:
    with _array(args) as array:
        before = len(array.recoveries)
        data = array.read(args.lba, args.count)
        for ev in array.recoveries[before:]:
            print(f"warning: recovered stripe {ev.stripe} (data disk {ev.disk_index})", file=sys.stderr)
    if args.output:
        Path(args.output).write_bytes(data)
    elif args.porcelain:
        print(f"bytes={len(data)}")
        print(f"recovered={len(array.recoveries) - before}")
    else:
        sys.stdout.buffer.write(data)
        sys.stdout.flush()
    return EXIT_OK


def cmd_write(args) -> int:
    with _array(args) as array:
        ss = array.geometry.sector_size
        if args.input:
            data = Path(args.input).read_bytes()
        elif args.pattern is not None:
            data = bytes.fromhex(args.pattern) * (args.count * ss)
        else:
            data = sys.stdin.buffer.read()
        if args.count is not None:
            want = args.count * ss
            if len(data) < want:
                raise ConfigError(f"input holds {len(data)} bytes, need {want}")
            data = data[:want]
        if len(data) % ss:
            raise ConfigError(f"input of {len(data)} bytes is not a whole number of {ss}-byte sectors")
        array.write(args.lba, data)
        _emit(args, {"bytes": len(data)}, f"wrote {len(data) // ss} sectors at lba {args.lba}")
    return EXIT_OK


def cmd_bench(args) -> int:
    spec = WorkloadSpec(args.workload, args.io_size, args.total, args.qd, args.seed)
    with _array(args, latency=_latency(args)) as array:
        metrics = run_workload(array, spec)
    if args.metrics_out:
        Path(args.metrics_out).write_text(metrics.format_kv())
    if args.porcelain:
        sys.stdout.write(metrics.format_kv())
    else:
        sys.stdout.write(metrics.report())
    return EXIT_DATA_LOSS if metrics.errors.get("UnrecoverableReadError") else EXIT_OK


def _slot(array, raw) -> int:
    slot = int(raw)
    if not 0 <= slot < array.geometry.n_disks:
        raise ConfigError(f"no disk {slot}")
    return slot


def cmd_fault(args) -> int:
    with _array(args, replay=False) as array:
        disks = array.disks
        if args.action == "inject":
            if args.file:
                entries = parse_fault_file(Path(args.file).read_text())
            elif args.count is None:
                raise ConfigError("inject needs <disk> <kind> <start> <count> [k|pattern] or --file")
            else:
                fields = [args.disk, args.kind, args.start, args.count]
                entries = [parse_fault_line(" ".join(fields + ([args.extra] if args.extra else [])))]
            for slot, spec in entries:
                disks[_slot(array, slot)].inject_fault(spec)
            _emit(args, {"injected": len(entries)}, f"injected {len(entries)} fault(s)")
        elif args.action == "list":
            entries = [(slot, s) for slot, d in enumerate(disks) for s in d.faults()]
            lines = format_fault_file(entries).splitlines()[1:]
            if args.porcelain:
                for i, line in enumerate(lines):
                    print(f"fault{i}={line}")
            else:
                print("\n".join(["# disk kind start count [k|pattern]", *lines]))
                for slot, s in enumerate(array.array_state().disks):
                    if s != "healthy":
                        print(f"# disk {slot} {s}")
        elif args.action == "clear":
            targets = [_slot(array, args.disk)] if args.disk is not None else range(len(disks))
            for slot in targets:
                disks[slot].clear_faults()
            _emit(args, {"cleared": len(targets)}, "faults cleared")
        elif args.action == "remap":
            disks[_slot(array, args.disk)].remap_sector(args.sector)
            _emit(args, {"remapped": 1}, "sector remapped")
        else:
            slot = _slot(array, args.disk)
            (array.fail_disk if args.action == "fail" else array.restore_disk)(slot)
            mode = array.array_state().mode.value
            verb = "failed" if args.action == "fail" else "restored"
            _emit(args, {"state": mode}, f"disk {slot} {verb}; array {mode}")
    return EXIT_OK


def cmd_scrub(args) -> int:
    with _array(args) as array:
        r = array.scrub()
    _emit(
        args,
        {"checked": r.stripes_checked, "inconsistent": r.inconsistent_stripes, "healed": r.healed,
         "unrecoverable": len(r.unrecoverable), "skipped": r.skipped},
        f"{r.inconsistent_stripes} inconsistent stripes"
        + (f" ({', '.join(map(str, r.inconsistent))})" if r.inconsistent else "")
        + f"\n{r.healed} blocks healed, {r.stripes_checked} stripes checked"
        + (f", {r.skipped} skipped" if r.skipped else "")
        + (f"\nunrecoverable stripes: {r.unrecoverable}" if r.unrecoverable else ""),
    )
    return EXIT_DATA_LOSS if r.unrecoverable else EXIT_OK


def cmd_replay(args) -> int:
    with _array(args, replay=False) as array:
        r = array.journal_replay()
    _emit(
        args,
        {"repaired": r.repaired, "records": r.records, "discarded": r.discarded, "corrupt": r.corrupt},
        f"{r.repaired} repaired ({r.records} records applied, {r.discarded} discarded, {r.corrupt} corrupt)",
    )
    return EXIT_OK


def cmd_rebuild(args) -> int:
    directory = Path(args.dir)
    with _array(args) as array:
        slot = args.slot
        if not 0 <= slot < array.geometry.n_disks:
            raise ConfigError(f"no disk {slot}")
        old = array.disks[slot]
        if not old.failed:
            raise ConfigError(f"disk {slot} has not failed")
        spare_path = directory / f"disk{slot}.img.rebuild"
        spare_path.unlink(missing_ok=True)
        spare = VirtualDisk(spare_path, old.capacity, old.sector_size, old.latency, old.clock)
        total = array.geometry.stripes
        report = None
        try:
            for report in array.rebuild_steps(slot, spare):
                if not args.porcelain and not args.quiet and report.stripes % max(1, total // 10) == 0:
                    print(f"rebuilt {report.stripes} stripes", file=sys.stderr)
        except Raid0eError:
            if array.disks[slot] is not spare:
                spare.close()
                spare_path.unlink(missing_ok=True)
            raise
        old.close()
        os.replace(spare_path, old.path)
        spare.path = old.path
        mode = array.array_state().mode.value
    lost = report.lost if report else []
    _emit(
        args,
        {"slot": slot, "stripes": report.stripes if report else 0, "lost": len(lost), "state": mode},
        (f"lost stripes: {lost}\n" if lost else "") + f"rebuild of disk {slot} complete; state {mode}",
    )
    return EXIT_DATA_LOSS if lost else EXIT_OK


def cmd_scenario(args) -> int:
    array = _assemble(args, replay=False)
    try:
        report = run_fault_scenario(array, Path(args.file))
        array = report.array  # reassembled if the scenario crashed it
    finally:
        _shutdown(args, array)
    if args.porcelain:
        for s in report.steps:
            print(f"line{s.lineno}={'pass' if s.ok else 'fail'}")
        print(f"passed={int(report.passed)}")
    else:
        sys.stdout.write(report.format())
    return EXIT_OK if report.passed else EXIT_DATA_LOSS


# -- parser -----------------------------------------------------------------


def _stripe_unit_default() -> int:
    raw = os.environ.get(STRIPE_UNIT_ENV)
    if raw is None:
        return DEFAULT_STRIPE_UNIT
    try:
        return int(raw, 0)
    except ValueError:
        raise ConfigError(f"{STRIPE_UNIT_ENV}={raw!r} is not an integer") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--dir", required=True, help="array directory")
    common.add_argument("--porcelain", action="store_true", help="key=value output for scripts")

    p = _Parser(prog="raid0e", description="RAID-0e arrays over file-backed virtual disks.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    c = sub.add_parser("create", parents=[common], help="format a new array")
    c.add_argument("--data", type=int, required=True, help="data disks (N >= 2)")
    c.add_argument("--parity", type=int, default=1, help="parity disks (M >= 1)")
    c.add_argument("--stripe-unit", type=int, default=None,
                   help=f"bytes per stripe unit (default ${STRIPE_UNIT_ENV} or {DEFAULT_STRIPE_UNIT})")
    c.add_argument("--disk-size", type=int, required=True, help="data-area sectors per disk")
    c.add_argument("--sector-size", type=int, default=512)
    c.add_argument("--journal-size", type=int, help="journal bytes per disk (default: fits 8 full stripes, >= 1 MiB)")
    c.add_argument("--force", action="store_true", help="overwrite existing images")
    c.set_defaults(func=cmd_create)

    i = sub.add_parser("info", parents=[common], help="show geometry and member state")
    i.add_argument("--lba", type=int, help="also show where this LBA lives")
    i.set_defaults(func=cmd_info)

    r = sub.add_parser("read", parents=[common], help="read sectors")
    r.add_argument("--lba", type=int, required=True)
    r.add_argument("--count", type=int, required=True)
    r.add_argument("--output", help="write data here instead of stdout")
    r.set_defaults(func=cmd_read)

    w = sub.add_parser("write", parents=[common], help="write sectors")
    w.add_argument("--lba", type=int, required=True)
    w.add_argument("--count", type=int, help="sectors (default: whole input)")
    src = w.add_mutually_exclusive_group()
    src.add_argument("--input", help="read data from this file (default stdin)")
    src.add_argument("--pattern", help="repeat this hex byte pattern")
    w.set_defaults(func=cmd_write)

    b = sub.add_parser("bench", parents=[common], help="run a workload on the simulated clock")
    b.add_argument("--workload", required=True, choices=PATTERNS)
    b.add_argument("--io-size", type=int, required=True)
    b.add_argument("--total", type=int, required=True)
    b.add_argument("--qd", type=int, default=1)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--read-bw", type=float, default=LatencyModel.seq_read_bw, help="bytes/s")
    b.add_argument("--write-bw", type=float, default=LatencyModel.seq_write_bw, help="bytes/s")
    b.add_argument("--seek", type=float, default=LatencyModel.seek_time, help="seconds")
    b.add_argument("--metrics-out", help="write key=value metrics here")
    b.set_defaults(func=cmd_bench)

    f = sub.add_parser("fault", help="inject, list or clear faults; fail or restore disks")
    fsub = f.add_subparsers(dest="action", required=True, parser_class=_Parser)
    fi = fsub.add_parser("inject", parents=[common], help="add a fault (fault-file line syntax)")
    fi.add_argument("disk", nargs="?")
    fi.add_argument("kind", nargs="?", help="unreadable | transient | corrupt | write-fail")
    fi.add_argument("start", nargs="?", help="first sector (raw disk sector)")
    fi.add_argument("count", nargs="?")
    fi.add_argument("extra", nargs="?", help="k for transient, hex pattern for corrupt")
    fi.add_argument("--file", help="inject every fault listed in a fault file")
    fsub.add_parser("list", parents=[common], help="list active faults")
    fc = fsub.add_parser("clear", parents=[common], help="clear faults on one or all disks")
    fc.add_argument("disk", nargs="?")
    fr = fsub.add_parser("remap", parents=[common], help="remap a sector, clearing its fault")
    fr.add_argument("disk")
    fr.add_argument("sector", type=int)
    for name in ("fail", "restore"):
        fsub.add_parser(name, parents=[common], help=f"{name} a whole disk").add_argument("disk")
    f.set_defaults(func=cmd_fault)

    s = sub.add_parser("scrub", parents=[common], help="verify parity of every stripe")
    s.set_defaults(func=cmd_scrub)

    rb = sub.add_parser("rebuild", parents=[common], help="rebuild a failed disk onto a fresh image")
    rb.add_argument("--slot", type=int, required=True)
    rb.add_argument("--quiet", action="store_true")
    rb.set_defaults(func=cmd_rebuild)

    rp = sub.add_parser("replay", parents=[common], help="replay the write journals")
    rp.set_defaults(func=cmd_replay)

    sc = sub.add_parser("scenario", parents=[common], help="run a fault scenario file")
    sc.add_argument("file")
    sc.set_defaults(func=cmd_scenario)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if getattr(args, "stripe_unit", 0) is None:
            args.stripe_unit = _stripe_unit_default()
        with _locked(Path(args.dir)):
            return args.func(args)
    except (UnrecoverableReadError, ArrayOfflineError) as e:
        print(f"raid0e: data loss: {e}", file=sys.stderr)
        return EXIT_DATA_LOSS
    except MediaWriteError as e:
        print(f"raid0e: write failed: {e}", file=sys.stderr)
        return EXIT_DATA_LOSS
    except (Raid0eError, OSError) as e:
        print(f"raid0e: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
