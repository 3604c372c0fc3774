"""Fly one of the checked-in trials end to end and write its logs.

The UAV starts 1.5 m to the right of the take-off line, lines up with the
entrance, flies in, turns around, lines up with the exit and leaves. The
phase timeline is printed; the CSV log and plot inputs go to ``$BOXNAV_OUT``
(default ``out/``).

    python demos/fly_reference_trial.py [config]
"""
import os
import sys
from pathlib import Path

from boxnav.harness import emit_plots, load_config, run_trial

root = Path(__file__).resolve().parents[1]
cfg = load_config(sys.argv[1] if len(sys.argv) > 1 else root / "trials" / "paper" / "p2_right.cfg")
print(f"{cfg.name}: start {cfg.position}, seed {cfg.seed}")

log = run_trial(cfg)
prev = 0.0
for t, phase in log.transitions:
    print(f"  {t:6.2f} s  -> {phase.name:<20} (+{t - prev:5.2f} s)")
    prev = t
print(f"verdict {log.verdict}{' (' + log.reason + ')' if log.reason else ''}, "
      f"minimum clearance {log.min_clearance * 100:.1f} cm")

out = Path(os.environ.get("BOXNAV_OUT", "out"))
out.mkdir(parents=True, exist_ok=True)
csv_path = out / f"{cfg.name}_seed{cfg.seed}.csv"
csv_path.write_text(log.to_csv())
plots = emit_plots(log, out / f"{cfg.name}_seed{cfg.seed}_plots")
print(f"log: {csv_path}")
print(f"plot: python {plots['script']}")
