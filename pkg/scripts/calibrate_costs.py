"""Fit the per-step cost model to the reference table and report held-out predictions,
plus the planned speedup of a few desk plans under pure linear and pure quadratic cost."""
import argparse

from lssgen.costmodel import CostParams, calibrate, load_reference_table, predict_plan_cost
from lssgen.schedule import plan_stages


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--table", default=None, help="CSV in the reference-table layout")
    args = ap.parse_args()

    rows = load_reference_table(args.table)
    for model in sorted({r.model for r in rows}):
        cal = calibrate(rows, model)
        print(f"{model}: a={cal.params.a:.4g} b={cal.params.b:.4g} clamped={cal.params.clamped}")
        for row in cal.rows():
            print(f"  {row['method']:<16} steps {row['steps']:<10} reported {row['reported']:8.1f} "
                  f"predicted {row['predicted']:8.1f} ({row['error_pct']:+.2f}%)")
    print("\nsigma,shorten,linear_speedup,quadratic_speedup")
    for sigma in (0.3, 0.5, 0.75, 0.9):
        for shorten in (False, True):
            plan = plan_stages(16, 32, 32, 32, sigma, shorten)
            lin = predict_plan_cost(CostParams(1.0, 0.0, patch=1, context=0), plan).speedup
            quad = predict_plan_cost(CostParams(0.0, 1.0, patch=1, context=0), plan).speedup
            print(f"{sigma},{shorten},{lin:.4f},{quad:.4f}")


if __name__ == "__main__":
    main()
