"""Fitting the homogeneous model to index tranche quotes.

Run:  python demos/04_calibration.py          (about ten seconds)
      python demos/04_calibration.py --fit    (adds a short refinement, about half a minute)

The nine fitted numbers are the total base hazard a0, the contagion rate
rho, the contagion decay delta, and the six factor parameters.  The fit
minimizes squared relative errors between model and market mids with a
bounded trust-region least-squares solver started from several points.
A full eight-start fit takes minutes; see ``contagion calibrate``.
"""
import argparse
import time
from pathlib import Path

import numpy as np

from contagion import CalibrationSettings, aape, calibrate, implied_rho, load_quotes, model_quotes

DATA = Path(__file__).resolve().parents[1] / "data" / "cdx_na_hy_2007-05-11.csv"

# A vector found by an eight-start fit to the 5-year quotes below.
FITTED_5Y = np.array([1.255973842, 0.007355089369, 0.03517693606, 1.561180773, 0.4979258528,
                      0.04104280895, 4.37720441, 0.09347989129, 5.802576038])

parser = argparse.ArgumentParser()
parser.add_argument("--fit", action="store_true", help="run a short single-start refinement")
args = parser.parse_args()

five = load_quotes(DATA)[0]
settings = CalibrationSettings()

# 1. Reprice the market at the fitted vector.  Upfront tranches are quoted
#    in percent of notional, the others as running spreads in bp.
model = model_quotes(FITTED_5Y, five, settings)
print("5-year quotes at the fitted vector:")
for inst, mid, m in zip(five.instruments, five.mids, model):
    print(f"  {inst.label:>10} {inst.kind:<12} market {mid:8.2f}  model {m:8.2f}  ({100 * (m / mid - 1):+.1f}%)")
print(f"  average absolute percentage error {aape(model, five.mids):.2f}%\n")

# 2. Implied contagion: hold every other parameter fixed and solve for the
#    rho that reprices one instrument exactly.  A spread of implied values
#    across tranches is the model's analogue of a correlation smile.
t0 = time.perf_counter()
eq = implied_rho(five, 0, FITTED_5Y, xtol=1e-7)
print(f"Implied rho for the equity tranche: {eq:.5f} (fitted rho {FITTED_5Y[1]:.5f}, "
      f"{time.perf_counter() - t0:.1f} s)\n")

# 3. Optional: a short refinement from the fitted vector.  Evaluation
#    budget is per start; precision is raised automatically if the
#    closed form loses too many bits at a trial point.
if args.fit:
    t0 = time.perf_counter()
    res = calibrate(five, starts=1, x0=FITTED_5Y, settings=CalibrationSettings(maxiter=15))
    print(f"Refinement: objective {res.objective:.3g}, AAPE {res.aape:.2f}% "
          f"in {time.perf_counter() - t0:.0f} s")
    for name, v in res.params().items():
        print(f"  {name:>6} {v:.6g}")
