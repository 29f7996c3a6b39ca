"""Short low-dose comparison of the four solvers, written to a run directory.

The run takes a few seconds; raise ``datapasses`` and add seeds for
smoother curves.  The same thing from the shell::

    stochpnp run low_dose.ini
    stochpnp report runs/low_dose
"""

import sys
import tempfile
from pathlib import Path

from stochpnp.experiment import (SOLVERS, ExperimentConfig, compare_report, report_series,
                                 run_experiment)

cfg = ExperimentConfig.preset("low_dose", solvers=SOLVERS, datapasses=8, seeds=(0, 1),
                              gamma_overrides={"pnp_sgd": 4.0, "stochastic_pnp_admm": 2.0})
print(cfg.to_ini())

out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp()) / "low_dose"
out, results = run_experiment(cfg, out)
for r in results:
    print(f"{r.solver:20s} seed {r.seed}  gamma {r.gamma:g}  final log10 error "
          f"{r.final_err_log10:.3f}")

rows = compare_report([out], output=out / "report.csv")
for solver in cfg.solvers:
    x, e = report_series(rows, solver, "datapasses")
    calls = [r for r in rows if r["solver"] == solver][0]["denoiser_calls_per_datapass"]
    print(f"{solver:20s} {calls:6.3g} denoiser calls/datapass, "
          f"median error after {x[-1]:g} datapasses {e[-1]:.3f}")
print("artifacts in", out)
