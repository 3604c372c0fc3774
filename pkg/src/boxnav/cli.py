"""Command-line entry point: ``run``, ``suite`` and ``render-ref``."""
from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace
from pathlib import Path

from .harness import ConfigError, build_reference_template, emit_plots, load_config, load_suite, run_suite, run_trial

OUT_ENV = "BOXNAV_OUT"


def _default_out() -> str:
    return os.environ.get(OUT_ENV, "out")


def _cmd_run(a) -> int:
    cfg = load_config(a.config)
    if a.seed is not None:
        cfg = replace(cfg, seed=a.seed)
    out = Path(a.out or _default_out())
    out.mkdir(parents=True, exist_ok=True)
    log = run_trial(cfg, dump_frames=a.dump_frames)
    path = out / f"{cfg.name}_seed{cfg.seed}.csv"
    path.write_text(log.to_csv())
    emit_plots(log, out / f"{cfg.name}_seed{cfg.seed}_plots")
    print(f"{cfg.name} seed={cfg.seed}: {log.verdict}"
          + (f" ({log.reason})" if log.reason else "")
          + f", min clearance {log.min_clearance:.4f} m -> {path}")
    return 0 if log.verdict == "success" else 1


def _cmd_suite(a) -> int:
    configs = load_suite(a.dir)
    if not configs:
        print(f"error: no *.cfg files in {a.dir}", file=sys.stderr)
        return 2
    res = run_suite(configs, a.out or _default_out(), jobs=a.jobs)
    for name, verdict, reason in zip(res.names, res.verdicts, res.reasons):
        print(f"{name:24s} {verdict}" + (f" ({reason})" if reason else ""))
    n_ok = sum(v == "success" for v in res.verdicts)
    print(f"{n_ok}/{len(res.verdicts)} success")
    return res.exit_code


def _cmd_render_ref(a) -> int:
    cfg = load_config(a.config)
    tpl = build_reference_template(cfg)
    out = Path(a.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    pgm, side = tpl.save(out)
    print(f"wrote {pgm} and {side}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="boxnav", description="Vision-guided box traversal simulator.")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one trial")
    r.add_argument("--config", required=True)
    r.add_argument("--seed", type=int)
    r.add_argument("--dump-frames", metavar="DIR", help="write every perception frame as PGM")
    r.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./out)")
    r.set_defaults(func=_cmd_run)

    s = sub.add_parser("suite", help="run every *.cfg in a directory")
    s.add_argument("--dir", required=True)
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./out)")
    s.set_defaults(func=_cmd_suite)

    t = sub.add_parser("render-ref", help="render the exit-window reference template")
    t.add_argument("--config", required=True)
    t.add_argument("--out", required=True, help="PGM path; a .txt sidecar is written next to it")
    t.set_defaults(func=_cmd_render_ref)
    return p


def main(argv=None) -> int:
    a = build_parser().parse_args(argv)
    try:
        return a.func(a)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
