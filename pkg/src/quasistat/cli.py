"""Command line driver: ``quasistat {synth,analyze,du-check}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .channel import write_container
from .errors import ConfigError, QuasiStatError
from .lqs import SPEED_OF_LIGHT, du_check
from .pipeline import RunConfig, run
from .synth import generate, load_scene

log = logging.getLogger("quasistat")


def _load_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"no such file: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None


def cmd_synth(args) -> int:
    if not Path(args.config).exists():
        raise ConfigError(f"no such file: {args.config}")
    scene = load_scene(args.config)
    seed = args.seed if args.seed is not None else scene.seed
    t = generate(scene.clusters, scene.steering, scene.grid, seed)
    out = Path(args.out)
    tmp = out.with_name(out.name + ".partial")
    try:
        write_container(t, tmp)
        tmp.replace(out)
    except BaseException:
        tmp.unlink(missing_ok=True)
        raise
    log.info("wrote %s (%d x %d x %d x %d)", out, *t.samples.shape)
    return 0


def cmd_analyze(args) -> int:
    doc = _load_json(args.config)
    if args.threads is not None:
        doc["threads"] = args.threads
    out = args.out or doc.get("out")
    if not out:
        raise ConfigError("no output directory: pass --out or set 'out' in the config")
    cfg = RunConfig.from_dict(doc, base_dir=Path(args.config).resolve().parent)
    files = run(cfg, out, seed=args.seed)
    log.info("wrote %d artifacts to %s", len(files), out)
    return 0


def cmd_du_check(args) -> int:
    doc = _load_json(args.config) if args.config else {}
    for key in ("v_max", "f_c", "tau_max", "d_stat_min", "w_max", "ratio_limit"):
        value = getattr(args, key)
        if value is not None:
            doc[key] = value
    if "d_stat_min" not in doc and "f_c" in doc:
        doc["d_stat_min"] = 10.0 * SPEED_OF_LIGHT / doc["f_c"]
    doc.setdefault("tau_max", 5e-6)
    doc.setdefault("w_max", 15.0)
    missing = [k for k in ("v_max", "f_c") if k not in doc]
    if missing:
        raise ConfigError(f"du-check needs {', '.join(missing)}")
    unknown = set(doc) - {"v_max", "f_c", "tau_max", "d_stat_min", "w_max", "ratio_limit"}
    if unknown:
        raise ConfigError(f"unknown du-check parameters: {sorted(unknown)}")
    report = du_check(**doc)
    text = json.dumps({"inputs": doc, "report": report.as_dict()}, indent=2,
                      sort_keys=True) + "\n"
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="quasistat", description=__doc__)
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="verb", required=True)

    s = sub.add_parser("synth", help="generate a synthetic channel (scene JSON -> CTF1)")
    s.add_argument("--config", required=True, help="scene description (JSON)")
    s.add_argument("--seed", type=int, help="overrides the scene seed")
    s.add_argument("--out", required=True, help="output CTF1 file")
    s.set_defaults(func=cmd_synth)

    a = sub.add_parser("analyze", help="run the analysis chain (config JSON -> artifacts)")
    a.add_argument("--config", required=True, help="run configuration (JSON)")
    a.add_argument("--seed", type=int, help="overrides the synthetic input seed")
    a.add_argument("--out", help="artifact directory")
    a.add_argument("--threads", type=int, help="worker threads for per-sub-link work")
    a.set_defaults(func=cmd_analyze)

    d = sub.add_parser("du-check", help="doubly-underspread check from geometry")
    d.add_argument("--config", help="JSON with any of the parameters below")
    d.add_argument("--v-max", dest="v_max", type=float, help="maximal speed [m/s]")
    d.add_argument("--f-c", dest="f_c", type=float, help="carrier frequency [Hz]")
    d.add_argument("--tau-max", dest="tau_max", type=float, help="maximal delay [s]")
    d.add_argument("--d-stat-min", dest="d_stat_min", type=float,
                   help="minimal stationarity distance [m]")
    d.add_argument("--w-max", dest="w_max", type=float, help="largest object size [m]")
    d.add_argument("--ratio-limit", dest="ratio_limit", type=float,
                   help="ratio taken as 'much smaller' (default 0.1)")
    d.add_argument("--out", help="write the report here instead of stdout")
    d.set_defaults(func=cmd_du_check)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except (QuasiStatError, OSError) as exc:
        print(f"quasistat: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
