"""
Score-entropy losses in four settings
=====================================

Each setting fixes a non-preference state and with it a closed-form loss.
This script evaluates the closed forms next to the generic sum over the
corpus and shows where the loss is minimized.
"""

import numpy as np

from fadegrow import fading as F
from fadegrow import losses as L
from fadegrow import process as P

rng = np.random.default_rng(3)
n, alpha, beta = 8, 0.4, 1.5

print("setting        closed      generic     |diff|")
for st in (L.Setting(L.POINTWISE), L.Setting(L.PAIRWISE), L.Setting(L.HYBRID, n_lambda=2),
           L.Setting(L.ADAPTIVE)):
    m = st.corpus_size(n)
    pT = st.target(n, rng.normal(size=m) if st.kind == L.ADAPTIVE else None)
    x0 = 2
    x_t = m - 1 if st.has_virtual_item else 5
    s = rng.normal(size=m)
    s[x_t] = 0.0
    c = L.se_loss_closed(st, x0, x_t, s, alpha, beta, pT)
    g = L.se_loss_generic(x0, x_t, s, alpha, beta, F.build_rank1(pT))
    print(f"{st.kind:<12} {c:10.6f}  {g:10.6f}  {abs(c - g):.1e}")

# Plugging the reference ratios in as scores drives the loss to zero.
E = F.build_rank1(F.NonPreferenceState.uniform(n))
r = P.reference_ratios(2, 5, alpha, E)
print("\nloss at the reference ratios:", L.se_loss_generic(2, 5, r, alpha, beta, E))

# The per-item term and the sBCE surrogate share their minimizer.
grid = np.linspace(-2, 3, 11)
print("\n    s   SE(s, r=1)  sBCE(s, r=1)")
for s in grid:
    print(f"{s:5.1f}  {L.se_term(s, 1.0):10.4f}  {L.sbce_loss(s, 1.0):12.4f}")
