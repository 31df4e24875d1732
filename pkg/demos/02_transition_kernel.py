"""How the defaulted set moves: the transition kernel on small pools.

Run:  python demos/02_transition_kernel.py

The defaulted set X_t jumps from E to E + {i} at a rate that is a base
hazard plus contagion from the names already in E, all scaled by a macro
factor.  Conditional on the integrated factor z, the probability of going
from E to F is a finite mixture of exponentials in z.  This demo evaluates
that mixture, compares it with a direct numerical solution of the jump
recursion, and checks the two-obligor case against its hand formula.
"""
import math

import numpy as np

from contagion import ContagionSpec, KernelQuery, ObligorSet, kernel_factorized, kernel_general, kernel_row
from contagion.kernel import curves_from_spec, two_obligor_mode

# 1. Two names that each default at rate lam, and contagion that leaves the
#    survivor's rate unchanged.  Starting from no defaults, after elapsed
#    macro time z the four states have probabilities
#      {}      e^{-2 lam z}
#      {1}     e^{-lam z} - e^{-2 lam z}      (same for {2})
#      {1,2}   1 - 2 e^{-lam z} + e^{-2 lam z}
lam, z = 0.8, 0.9
pair = ContagionSpec.hcm(2, lam, 0.0, a0=2 * lam)
row = kernel_row(pair, ObligorSet.empty(2), z)
e1, e2 = math.exp(-lam * z), math.exp(-2 * lam * z)
hand = {(): e2, (1,): e1 - e2, (2,): e1 - e2, (1, 2): 1 - 2 * e1 + e2}
print(f"Two obligors, lambda={lam}, z={z}:")
for F, p in row.items():
    print(f"  P(X = {sorted(F)}) = {p:.10f}   hand formula {hand[tuple(sorted(F))]:.10f}")
print(f"  row sum {sum(row.values()):.15f}")

# The chance of exactly one default peaks at z = ln 2 / lam.
grid = np.linspace(0.01, 4.0, 400)
single = [kernel_factorized(pair, ObligorSet.empty(2), ObligorSet.of(2, [1]), x) for x in grid]
print(f"  P(X = {{1}}) peaks near z = {grid[int(np.argmax(single))]:.3f}; ln2/lambda = {two_obligor_mode(lam):.3f}\n")

# 2. A general five-name pool with random base hazards and contagion loads.
#    The closed form (mixture of exponentials) and the numerical integration
#    of the jump recursion with a time-varying factor agree once the factor
#    is integrated out.
rng = np.random.default_rng(3)
spec = ContagionSpec.general(rng.uniform(0.1, 0.4, 5), rng.uniform(0.05, 0.5, (5, 5)), delta=0.1)
E, F = ObligorSet.of(5, [2]), ObligorSet.of(5, [1, 2, 4])


def phi(t):
    return 1.0 + 0.5 * math.sin(t)


s, t = 0.0, 1.5
z = t + 0.5 * (1 - math.cos(t))  # integral of phi over [s, t]
closed = kernel_factorized(spec, E, F, z)
numeric = kernel_general(KernelQuery(E, F, s, t, intensity_curves=curves_from_spec(spec, phi)))
print(f"Five names, {sorted(E)} -> {sorted(F)} over [0, {t}] with phi(t) = 1 + sin(t)/2:")
print(f"  closed form {closed:.12e}")
print(f"  numerical   {numeric:.12e}")

# 3. The kernel is a Markov kernel: moving z1 then z2 equals moving z1 + z2.
z1, z2 = 0.4, 0.7
direct = kernel_row(spec, E, z1 + z2)
composed = {}
for mid, p in kernel_row(spec, E, z1).items():
    for end, q in kernel_row(spec, mid, z2).items():
        composed[end] = composed.get(end, 0.0) + p * q
gap = max(abs(direct[k] - composed.get(k, 0.0)) for k in direct)
print(f"\nChapman-Kolmogorov over z = {z1} + {z2}: largest gap {gap:.1e}")
