"""
A small end-to-end experiment
=============================

Run a reduced constant-density plan through the harness: calibrate, predict,
simulate, compare, then write the CSV, report and SVG plots.  The command
line exposes the same pipeline as ``swarmforage compare``.
"""

import sys
import tempfile
from pathlib import Path

from swarmforage.harness import default_plan, read_rows_csv, run_plan

plan = default_plan(
    "const-rho-small",
    kinds=("SS",),
    sizes=(5, 10),
    horizon=4000.0,
    replicates=3,
    single_robot_horizon=20_000.0,
    seed=7,
)

out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="swarmforage-"))
result = run_plan(plan, out_dir=out)

# %%
# One row per (kind, N, rho); within-CI flags follow the intervals.
for r in result.rows:
    print(
        f"{r.kind} N={r.N:3d}  N_h pred {r.pred_nh:.3f} sim {r.sim_nh_mean:.3f} "
        f"[{r.sim_nh_lo:.3f}, {r.sim_nh_hi:.3f}] in_ci={r.in_ci_nh}"
    )

# %%
# Everything needed to rebuild the report lives in the output directory.
print(sorted(p.name for p in out.iterdir()))
print((out / "report.txt").read_text().split("== points ==")[0])
assert len(read_rows_csv(out / "rows.csv")) == len(result.rows)
