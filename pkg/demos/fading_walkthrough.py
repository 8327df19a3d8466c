"""
Preference fading on a five-item corpus
=======================================

A fading matrix E says where a preferred item goes when it is forgotten.
Here we build one, push a sharp preference forward in time, and watch it
melt into the non-preference state.
"""

import numpy as np

from fadegrow import fading as F
from fadegrow import process as P
from fadegrow.schedule import Schedule

np.set_printoptions(precision=4, suppress=True)

# A rank-1 fading matrix: every forgotten item is replaced by a draw from pT.
pT = F.NonPreferenceState(np.array([4.0, 2.0, 2.0, 1.0, 1.0]))
E = F.build_rank1(pT)
print("E (dense, for display only):")
print(F.debug_dense(E))
D = F.debug_dense(E)
print("idempotent:", np.allclose(D @ D, D))

# Start certain that the user wants item 3.
p0 = np.eye(5)[3]
sched = Schedule(num_steps=20)
print("\nstep  alpha    marginal")
for k in (0, 5, 10, 15, 20):
    a = sched.alpha_at(k)
    print(f"{k:4d}  {a:.4f}  {P.marginal(E, a, p0)}")
print("target:           ", pT.normalized)

# A rank-2 fading matrix keeps replacements inside two genres.
E2 = F.build_rankr([[0, 1, 2], [3, 4]], [[1.0, 1.0, 2.0, 0, 0], [0, 0, 0, 1.0, 3.0]])
print("\nrank-2 E:")
print(F.debug_dense(E2))
print("item 3 faded halfway:", P.marginal(E2, 0.5, p0))

# The reference ratio is the training target for the score network:
# log p(y | x0) - log p(x_t | x0) at retention alpha.
x0, x_t, a = 3, 0, 0.3
print(f"\nreference log ratios for x0={x0}, x_t={x_t}, alpha={a}:")
print(P.reference_ratios(x0, x_t, a, E))

# Sampling the forward process agrees with the marginal.
rng = np.random.default_rng(0)
draws = P.sample_forward_batch(np.full(100_000, 3), 0.3, E, rng)
print("\nempirical:", np.bincount(draws, minlength=5) / draws.size)
print("exact:    ", P.marginal(E, 0.3, p0))
